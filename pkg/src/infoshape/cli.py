"""``infoshape`` command-line runner.

Subcommands::

    gen-data        build (or ingest) a dataset and write it as .isd
    train-encoder   train an encoder on a dataset file
    encode          apply the trained encoder or a baseline to a dataset file
    evaluate        train public/private classifiers on encoded splits, report AUCs
    estimate-mi     ReMINE estimate of I[label; code] with its trace
    run-experiment  the whole pipeline into one output directory

Configuration is an INI file (see ``DEFAULTS`` for every section and key, and
``configs/*.ini`` in the repository).  Values given on the command line win
over the file: ``--seed``, ``--reduced``, ``--jobs`` and the generic
``--set section.key=value``.  Every command writes a ``manifest.json`` holding
the fully resolved config, its hash, the seed fan-out, library versions and
SHA-256 digests of the outputs; ``run-experiment --from-manifest`` replays it.

Errors end the process with a nonzero status and one JSON object on stderr::

    {"error": "DatasetFormatError", "exit_code": 3, "message": "...", "diagnostics": {...}}

Status codes: 2 usage/configuration, 3 data or file, 4 training, 1 anything else.
"""

import argparse
import configparser
import hashlib
import json
import logging
import os
import platform
import shutil
import sys
from contextlib import contextmanager, nullcontext
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy
import sklearn
from threadpoolctl import threadpool_limits

from . import nn
from .baselines import apply_baseline
from .data import (
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    mnist_dataset,
    save_dataset,
    split,
)
from .evaluation import ClassifierConfig, evaluate_matrix
from .exceptions import (
    ConfigurationError,
    DatasetFormatError,
    InfoShapeError,
    TrainingError,
    UsageError,
)
from .mi import MIEstimatorConfig, PairedBatch, train_mi_estimator, write_trace_csv
from .plots import line_chart_svg
from .rng import substream
from .trainer import EncoderModel, TradeoffConfig, encode, encode_dataset, train_infoshape

logger = logging.getLogger("infoshape")

REDUCED_ITERATIONS = 500
VARIANTS = ("original", "infoshape", "noise", "random")

DEFAULTS = {
    "experiment": {
        "seed": "0",
        "dataset": "synthetic",
        "val_fraction": "0.2",
        "baselines": "noise, random",
        "noise_sigma": "1.0",
        "n_jobs": "1",
    },
    "synthetic": {
        "n_samples": "10000",
        "n_features": "10",
        "n_informative": "3",
        "n_redundant": "2",
        "n_noise": "5",
        "n_classes": "4",
        "clusters_per_class": "2",
        "hypercube_side": "2.0",
        "same_class_fraction": "0.99",
        "standardize": "false",
    },
    "mnist": {
        "images": "",
        "labels": "",
        "subset": "10000",
    },
    "tradeoff": {
        "lam": "1.0",
        "epochs": "50",
        "lr": "1e-3",
        "encoder_steps_per_epoch": "1",
        "estimator_reinit_per_epoch": "true",
        "step_batch_size": "",
    },
    "estimator": {
        "iterations": "2000",
        "lr": "1e-4",
        "batch_size": "2000",
        "accumulation_window": "10",
        "reg_coefficient": "0.1",
        "final_average_window": "",
        "smoothing_window": "50",
    },
    "classifier": {
        # empty hidden / epochs take the dataset preset
        "hidden": "",
        "lr": "1e-4",
        "batch_size": "100",
        "epochs": "",
        "momentum": "0.9",
        "reduction": "sum",
    },
}

EXIT_CODES = ((UsageError, 2), (ConfigurationError, 2), (DatasetFormatError, 3), (TrainingError, 4))


# ---------------------------------------------------------------- config


def _parser_with_defaults():
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_dict(DEFAULTS)
    return cp


def _check_known(cp, origin):
    for section in cp.sections():
        if section not in DEFAULTS:
            raise ConfigurationError(f"{origin}: unknown section [{section}]")
        for key in cp[section]:
            if key not in DEFAULTS[section]:
                raise ConfigurationError(f"{origin}: unknown key {key!r} in [{section}]")


def load_config(path=None, overrides=(), from_dict=None):
    """Defaults, then ``path`` (or a manifest's config dict), then ``section.key=value`` overrides."""
    cp = _parser_with_defaults()
    if from_dict is not None:
        extra = configparser.ConfigParser(interpolation=None)
        extra.read_dict(from_dict)
        _check_known(extra, "manifest")
        cp.read_dict(from_dict)
    if path is not None:
        extra = configparser.ConfigParser(interpolation=None)
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        try:
            extra.read_string(text, source=str(path))
        except configparser.Error as exc:
            raise ConfigurationError(f"malformed config {path}: {exc}") from exc
        _check_known(extra, str(path))
        cp.read_dict({s: dict(extra[s]) for s in extra.sections()})
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        if section not in DEFAULTS or name not in DEFAULTS[section]:
            raise ConfigurationError(f"--set: unknown key {key!r}")
        cp[section][name] = value.strip()
    return cp


def config_dict(cp):
    return {s: dict(cp[s]) for s in DEFAULTS}


def _get(cp, section, key, kind):
    raw = cp[section][key].strip()
    try:
        if kind is bool:
            return cp.getboolean(section, key)
        if raw == "" and kind in ("int?", "float?"):
            return None
        if kind in (int, "int?"):
            return int(raw)
        if kind in (float, "float?"):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigurationError(f"[{section}] {key} = {raw!r}: {exc}") from exc


@dataclass
class ExperimentConfig:
    seed: int
    dataset: str
    val_fraction: float
    baselines: tuple
    noise_sigma: float
    n_jobs: int
    synthetic: SyntheticSpec
    mnist_images: str
    mnist_labels: str
    mnist_subset: int
    tradeoff: TradeoffConfig
    classifier: ClassifierConfig

    @classmethod
    def from_parser(cls, cp):
        dataset = _get(cp, "experiment", "dataset", str)
        if dataset not in ("synthetic", "mnist"):
            raise ConfigurationError(f"[experiment] dataset must be synthetic or mnist, not {dataset!r}")
        seed = _get(cp, "experiment", "seed", int)
        if seed < 0:
            raise ConfigurationError("[experiment] seed must be non-negative")
        baselines = tuple(b.strip() for b in cp["experiment"]["baselines"].split(",") if b.strip())
        for b in baselines:
            if b not in ("noise", "random"):
                raise ConfigurationError(f"[experiment] unknown baseline {b!r}")
        syn = SyntheticSpec(
            n_samples=_get(cp, "synthetic", "n_samples", int),
            n_features=_get(cp, "synthetic", "n_features", int),
            n_informative=_get(cp, "synthetic", "n_informative", int),
            n_redundant=_get(cp, "synthetic", "n_redundant", int),
            n_noise=_get(cp, "synthetic", "n_noise", int),
            n_classes=_get(cp, "synthetic", "n_classes", int),
            clusters_per_class=_get(cp, "synthetic", "clusters_per_class", int),
            hypercube_side=_get(cp, "synthetic", "hypercube_side", float),
            same_class_fraction=_get(cp, "synthetic", "same_class_fraction", float),
            standardize=_get(cp, "synthetic", "standardize", bool),
            seed=seed,
        )
        try:
            estimator = MIEstimatorConfig(
                iterations=_get(cp, "estimator", "iterations", int),
                lr=_get(cp, "estimator", "lr", float),
                batch_size=_get(cp, "estimator", "batch_size", int),
                accumulation_window=_get(cp, "estimator", "accumulation_window", int),
                reg_coefficient=_get(cp, "estimator", "reg_coefficient", float),
                final_average_window=_get(cp, "estimator", "final_average_window", "int?"),
                smoothing_window=_get(cp, "estimator", "smoothing_window", int),
            )
            tradeoff = TradeoffConfig(
                lam=_get(cp, "tradeoff", "lam", float),
                epochs=_get(cp, "tradeoff", "epochs", int),
                lr=_get(cp, "tradeoff", "lr", float),
                encoder_steps_per_epoch=_get(cp, "tradeoff", "encoder_steps_per_epoch", int),
                estimator=estimator,
                estimator_reinit_per_epoch=_get(cp, "tradeoff", "estimator_reinit_per_epoch", bool),
                step_batch_size=_get(cp, "tradeoff", "step_batch_size", "int?"),
                n_jobs=_get(cp, "experiment", "n_jobs", int),
            )
            overrides = {
                "lr": _get(cp, "classifier", "lr", float),
                "batch_size": _get(cp, "classifier", "batch_size", int),
                "momentum": _get(cp, "classifier", "momentum", float),
                "reduction": _get(cp, "classifier", "reduction", str),
            }
            for key in ("hidden", "epochs"):
                value = _get(cp, "classifier", key, "int?")
                if value is not None:
                    overrides[key] = value
            classifier = ClassifierConfig.preset(dataset, **overrides)
        except UsageError as exc:
            raise ConfigurationError(str(exc)) from exc
        val_fraction = _get(cp, "experiment", "val_fraction", float)
        if not 0 < val_fraction < 1:
            raise ConfigurationError("[experiment] val_fraction must lie in (0, 1)")
        sigma = _get(cp, "experiment", "noise_sigma", float)
        if not sigma > 0:
            raise ConfigurationError("[experiment] noise_sigma must be > 0")
        return cls(
            seed=seed,
            dataset=dataset,
            val_fraction=val_fraction,
            baselines=baselines,
            noise_sigma=sigma,
            n_jobs=max(1, tradeoff.n_jobs),
            synthetic=syn,
            mnist_images=cp["mnist"]["images"].strip(),
            mnist_labels=cp["mnist"]["labels"].strip(),
            mnist_subset=_get(cp, "mnist", "subset", int),
            tradeoff=tradeoff,
            classifier=classifier,
        )


def seed_fanout(seed):
    """Which substream tag path feeds which random decision."""
    return {
        "master": seed,
        "synthetic_data": [seed, "synthetic"],
        "mnist_subset": [seed, "mnist-subset"],
        "split": [seed, "split"],
        "encoder_init": [seed, "encoder-init"],
        "critics": [seed, "epoch", "<e>", "mi-public | mi-private"],
        "encoder_steps": [seed, "epoch", "<e>", "encoder-step"],
        "noise_baseline": [seed, "baseline-noise", "<row index>"],
        "random_baseline": [seed, "baseline-random"],
        "classifiers": [seed, "eval", "<variant>", "<label>"],
        "estimate_mi": [seed, "estimate-mi", "<label>"],
    }


# ---------------------------------------------------------------- outputs


def _versions():
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {
        "infoshape": pkg,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "scikit-learn": sklearn.__version__,
        "platform": platform.platform(),
    }


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(directory, command, cp, args, extra=None):
    directory = Path(directory)
    files = {
        str(p.relative_to(directory)): _sha256(p)
        for p in sorted(directory.rglob("*"))
        if p.is_file() and p.name != "manifest.json"
    }
    cfg = config_dict(cp)
    doc = {
        "format": "infoshape-manifest",
        "version": 1,
        "command": command,
        "config": cfg,
        "config_hash": nn.config_hash(cfg),
        "seeds": seed_fanout(int(cp["experiment"]["seed"])),
        "single_thread": bool(args.single_thread),
        "reduced_schedule": bool(args.reduced),
        "inputs": extra or {},
        "versions": _versions(),
        "files": files,
    }
    (directory / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return doc


@contextmanager
def staged_directory(out_dir, force=False):
    """Yield a scratch directory that becomes ``out_dir`` only on success.

    A failed command leaves no ``out_dir`` behind, so partial output is never
    mistaken for a finished run.  An existing ``out_dir`` is replaced only
    with ``force`` and only if it holds a manifest from an earlier run.
    """
    out_dir = Path(out_dir)
    if out_dir.exists():
        if not force:
            raise UsageError(f"{out_dir} exists; pass --force to replace it")
        if not (out_dir / "manifest.json").is_file():
            raise UsageError(f"refusing to replace {out_dir}: it has no manifest.json from an earlier run")
    stage = out_dir.with_name(f".{out_dir.name}.partial-{os.getpid()}")
    if stage.exists():
        shutil.rmtree(stage)
    stage.mkdir(parents=True)
    try:
        yield stage
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    if out_dir.exists():
        shutil.rmtree(out_dir)
    stage.rename(out_dir)


def _write_record_outputs(directory, record, prefix=""):
    directory = Path(directory)
    record.to_csv(directory / f"{prefix}record.csv")
    traces = directory / "traces"
    traces.mkdir(exist_ok=True)
    for e, (tl, ts) in enumerate(zip(record.traces_L, record.traces_S), start=1):
        write_trace_csv(traces / f"epoch_{e:03d}_public.csv", tl)
        write_trace_csv(traces / f"epoch_{e:03d}_private.csv", ts)
    epochs = np.arange(1, len(record) + 1)
    line_chart_svg(directory / f"{prefix}mi_by_epoch.svg",
                   {"I[L;T]": (epochs, record.I_L), "I[S;T]": (epochs, record.I_S)},
                   "MI estimates per encoder epoch", "epoch", "nats")
    if len(record):
        last = len(record)
        picks = sorted({1, max(1, last // 2), last})
        series = {}
        for e in picks:
            t = record.traces_L[e - 1]
            series[f"L, epoch {e}"] = (np.arange(len(t)), t.smoothed)
        for e in picks:
            t = record.traces_S[e - 1]
            series[f"S, epoch {e}"] = (np.arange(len(t)), t.smoothed)
        line_chart_svg(directory / f"{prefix}mi_traces.svg", series, "smoothed estimator traces",
                       "iteration", "nats")


# ---------------------------------------------------------------- pipeline pieces


def build_dataset(cfg: ExperimentConfig):
    if cfg.dataset == "synthetic":
        return generate_synthetic(cfg.synthetic)
    if not cfg.mnist_images or not cfg.mnist_labels:
        raise ConfigurationError("[mnist] images and labels paths are required for dataset = mnist")
    for p in (cfg.mnist_images, cfg.mnist_labels):
        if not Path(p).is_file():
            raise DatasetFormatError(f"MNIST file not found: {p}")
    return mnist_dataset(cfg.mnist_images, cfg.mnist_labels, subset=cfg.mnist_subset,
                         rng=substream(cfg.seed, "mnist-subset"))


def load_encoder(path):
    net, doc = nn.load_checkpoint(path)
    preset = (doc.get("extra") or {}).get("preset", "custom")
    return EncoderModel(net, preset if isinstance(preset, str) else tuple(preset))


def make_variant(variant, dataset, cfg: ExperimentConfig, encoder=None, offset=0):
    if variant == "original":
        return apply_baseline(dataset, "identity")
    if variant == "infoshape":
        if encoder is None:
            raise UsageError("variant infoshape needs --encoder")
        return encode_dataset(encoder, dataset)
    if variant == "noise":
        return apply_baseline(dataset, "noise", sigma=cfg.noise_sigma, seed=cfg.seed, offset=offset)
    if variant == "random":
        preset = "mnist" if dataset.n_features == 784 else "synthetic"
        return apply_baseline(dataset, "random", preset=preset, seed=cfg.seed)
    raise UsageError(f"unknown variant {variant!r}")


def _train(train_set, cfg, log_epochs=True):
    def progress(epoch, _enc, rec):
        if log_epochs:
            logger.info("epoch %d/%d I_L=%.4f I_S=%.4f", epoch + 1, cfg.tradeoff.epochs, rec.I_L[-1], rec.I_S[-1])

    return train_infoshape(train_set, cfg.tradeoff, seed=cfg.seed, callback=progress)


def _save_encoder(path, encoder, cp):
    nn.save_checkpoint(path, encoder.net, config=config_dict(cp), extra={"preset": encoder.preset})


def _load_input(path):
    if not Path(path).is_file():
        raise DatasetFormatError(f"dataset file not found: {path}")
    return load_dataset(path)


# ---------------------------------------------------------------- commands


def _single_output(path, writer):
    """Write one file through a temporary name so failures leave nothing behind."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.partial-{os.getpid()}")
    try:
        writer(tmp)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def cmd_gen_data(args, cp, cfg):
    with staged_directory(args.out_dir, args.force) as out:
        ds = build_dataset(cfg)
        save_dataset(out / "dataset.isd", ds)
        if args.split:
            train, val = split(ds, cfg.val_fraction, substream(cfg.seed, "split"))
            save_dataset(out / "train.isd", train)
            save_dataset(out / "val.isd", val)
        write_manifest(out, "gen-data", cp, args)
    return {"out_dir": str(args.out_dir), "n_samples": len(ds), "n_features": ds.n_features}


def cmd_train_encoder(args, cp, cfg):
    train_set = _load_input(args.data)
    with staged_directory(args.out_dir, args.force) as out:
        encoder, record = _train(train_set, cfg)
        _save_encoder(out / "encoder.json", encoder, cp)
        _write_record_outputs(out, record)
        write_manifest(out, "train-encoder", cp, args, {"data": str(args.data), "data_sha256": _sha256(args.data)})
    return {"out_dir": str(args.out_dir), "I_L": record.I_L, "I_S": record.I_S}


def cmd_encode(args, cp, cfg):
    ds = _load_input(args.data)
    encoder = load_encoder(args.encoder) if args.encoder else None
    encoded = make_variant(args.variant, ds, cfg, encoder, offset=args.offset)
    _single_output(args.out, lambda p: save_dataset(p, encoded))
    return {"out": str(args.out), "variant": args.variant, "provenance": encoded.provenance,
            "n_features": encoded.n_features}


def cmd_evaluate(args, cp, cfg):
    variants = []
    for name, train_path, val_path in args.variant:
        variants.append((name, _load_input(train_path), _load_input(val_path)))
    with staged_directory(args.out_dir, args.force) as out:
        report = evaluate_matrix(variants, cfg.classifier, cfg.seed, n_jobs=cfg.n_jobs)
        report.to_csv(out / "report.csv")
        report.write_rocs(out / "roc")
        write_manifest(out, "evaluate", cp, args, {"variants": [list(v) for v in args.variant]})
    return {"out_dir": str(args.out_dir), "auc": report.table()}


def cmd_estimate_mi(args, cp, cfg):
    ds = _load_input(args.data)
    X = ds.features
    if args.encoder:
        X = encode(load_encoder(args.encoder), X)
    source = PairedBatch(X, ds.labels(args.label).astype(np.float64))
    est = cfg.tradeoff.estimator
    if est.batch_size > len(ds):
        est = est.with_(batch_size=len(ds))
    _, trace, final = train_mi_estimator(source, est, substream(cfg.seed, "estimate-mi", args.label))
    _single_output(args.out, lambda p: write_trace_csv(p, trace))
    return {"out": str(args.out), "label": args.label, "final_estimate": final, "iterations": len(trace)}


def cmd_run_experiment(args, cp, cfg):
    with staged_directory(args.out_dir, args.force) as out:
        (out / "datasets").mkdir()
        full = build_dataset(cfg)
        train, val = split(full, cfg.val_fraction, substream(cfg.seed, "split"))
        save_dataset(out / "datasets" / "train.isd", train)
        save_dataset(out / "datasets" / "val.isd", val)

        encoder, record = _train(train, cfg)
        (out / "checkpoints").mkdir()
        _save_encoder(out / "checkpoints" / "encoder.json", encoder, cp)
        _write_record_outputs(out, record)

        names = ["original", "infoshape", *cfg.baselines]
        variants = []
        (out / "encoded").mkdir()
        for name in names:
            tr = make_variant(name, train, cfg, encoder, offset=0)
            va = make_variant(name, val, cfg, encoder, offset=len(train))
            save_dataset(out / "encoded" / f"{name}_train.isd", tr)
            save_dataset(out / "encoded" / f"{name}_val.isd", va)
            variants.append((name, tr, va))
        report = evaluate_matrix(variants, cfg.classifier, cfg.seed, n_jobs=cfg.n_jobs)
        report.to_csv(out / "report.csv")
        report.write_rocs(out / "roc")
        summary = {
            "auc": report.table(),
            "I_L_first": record.I_L[0],
            "I_L_last": record.I_L[-1],
            "I_S_first": record.I_S[0],
            "I_S_last": record.I_S[-1],
        }
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        write_manifest(out, "run-experiment", cp, args)
    return {"out_dir": str(args.out_dir), **summary}


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-encoder": cmd_train_encoder,
    "encode": cmd_encode,
    "evaluate": cmd_evaluate,
    "estimate-mi": cmd_estimate_mi,
    "run-experiment": cmd_run_experiment,
}


# ---------------------------------------------------------------- argument parsing


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    common = _ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI config file")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("--seed", type=int, help="master seed, overrides [experiment] seed")
    common.add_argument("--reduced", action="store_true",
                        help=f"desk-scale schedule: {REDUCED_ITERATIONS} estimator iterations instead of the full count")
    common.add_argument("--jobs", type=int, help="worker threads for critics and classifier cells")
    common.add_argument("--single-thread", action="store_true",
                        help="force sequential execution and single-threaded BLAS")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    ap = _ArgumentParser(prog="infoshape", description="Privacy-preserving encoder experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="generate or ingest a dataset")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--split", action="store_true", help="also write train.isd / val.isd")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("train-encoder", parents=[common], help="train an encoder on a dataset file")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("encode", parents=[common], help="encode a dataset file")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--variant", choices=VARIANTS, required=True)
    p.add_argument("--encoder", type=Path, help="encoder checkpoint (variant infoshape)")
    p.add_argument("--offset", type=int, default=0, help="first row index in the noise stream")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("evaluate", parents=[common], help="classifier AUCs for encoded splits")
    p.add_argument("--variant", nargs=3, action="append", required=True, metavar=("NAME", "TRAIN", "VAL"))
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("estimate-mi", parents=[common], help="ReMINE estimate of I[label; code]")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--encoder", type=Path, help="encoder checkpoint; omit for the raw features")
    p.add_argument("--label", choices=("public", "private"), required=True)
    p.add_argument("--out", type=Path, required=True, help="trace CSV")

    p = sub.add_parser("run-experiment", parents=[common], help="full pipeline into one directory")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--from-manifest", type=Path, help="replay the config of an earlier run")
    p.add_argument("--force", action="store_true")
    return ap


def resolve(args):
    overrides = list(args.set)
    base = None
    if getattr(args, "from_manifest", None):
        try:
            doc = json.loads(Path(args.from_manifest).read_text())
            base = doc["config"]
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigurationError(f"cannot read manifest {args.from_manifest}: {exc}") from exc
        if doc.get("single_thread"):
            args.single_thread = True
    if args.seed is not None:
        overrides.append(f"experiment.seed={args.seed}")
    if args.reduced:
        overrides.append(f"estimator.iterations={REDUCED_ITERATIONS}")
    if args.jobs is not None:
        overrides.append(f"experiment.n_jobs={args.jobs}")
    if args.single_thread:
        overrides.append("experiment.n_jobs=1")
    cp = load_config(args.config, overrides, from_dict=base)
    if base is not None and doc.get("reduced_schedule"):
        args.reduced = True
    return cp, ExperimentConfig.from_parser(cp)


def _json_safe(value):
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, np.generic):
        return value.item()
    return repr(value)


def _exit_code(exc):
    for kind, code in EXIT_CODES:
        if isinstance(exc, kind):
            return code
    if isinstance(exc, OSError):
        return 3
    return 1


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
        cp, cfg = resolve(args)
        limits = threadpool_limits(limits=1) if args.single_thread else nullcontext()
        with limits:
            result = COMMANDS[args.command](args, cp, cfg)
    except (InfoShapeError, OSError) as exc:
        code = _exit_code(exc)
        diagnostics = {k: v for k, v in getattr(exc, "diagnostics", {}).items() if k not in ("trace", "record")}
        payload = {"error": type(exc).__name__, "exit_code": code, "message": str(exc),
                   "diagnostics": _json_safe(diagnostics)}
        print(json.dumps(payload), file=sys.stderr)
        return code
    print(json.dumps(_json_safe(result), sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
