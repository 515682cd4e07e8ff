import json

import numpy as np
import pytest

from infoshape import cli
from infoshape.data import load_dataset

TINY = [
    "--set", "synthetic.n_samples=400",
    "--set", "tradeoff.epochs=2",
    "--set", "tradeoff.encoder_steps_per_epoch=2",
    "--set", "estimator.iterations=15",
    "--set", "estimator.batch_size=150",
    "--set", "estimator.lr=1e-3",
    "--set", "estimator.accumulation_window=1",
    "--set", "classifier.epochs=2",
]


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if code == 0 else None), (json.loads(err.strip().splitlines()[-1]) if code else None)


@pytest.fixture(scope="module")
def experiment(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert cli.main(["run-experiment", "--out-dir", str(root / "run"), "--single-thread", *TINY]) == 0
    return root / "run"


def test_config_defaults_follow_training_schedule():
    cfg = cli.ExperimentConfig.from_parser(cli.load_config())
    assert cfg.tradeoff.lam == 1.0 and cfg.tradeoff.epochs == 50 and cfg.tradeoff.lr == 1e-3
    assert cfg.tradeoff.estimator.iterations == 2000
    assert cfg.synthetic.n_samples == 10_000 and cfg.synthetic.n_features == 10
    assert cfg.classifier.hidden == 20 and cfg.classifier.epochs == 50


def test_config_file_and_flag_precedence(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[tradeoff]\nlam = 2.5\nepochs = 7\n[experiment]\ndataset = mnist\n")
    cp = cli.load_config(ini, ["tradeoff.epochs=3"])
    cfg = cli.ExperimentConfig.from_parser(cp)
    assert (cfg.tradeoff.lam, cfg.tradeoff.epochs) == (2.5, 3)
    assert cfg.classifier.hidden == 50 and cfg.classifier.epochs == 10


@pytest.mark.parametrize("text", ["[nope]\nx = 1\n", "[tradeoff]\nlamda = 1\n", "not an ini"])
def test_config_file_rejects_unknown(tmp_path, text):
    ini = tmp_path / "bad.ini"
    ini.write_text(text)
    with pytest.raises(cli.ConfigurationError):
        cli.load_config(ini)


def test_reduced_flag(capsys, tmp_path):
    args = cli.build_parser().parse_args(["gen-data", "--out-dir", str(tmp_path / "x"), "--reduced"])
    _, cfg = cli.resolve(args)
    assert cfg.tradeoff.estimator.iterations == cli.REDUCED_ITERATIONS


def test_artifact_tree(experiment):
    for name in ("manifest.json", "record.csv", "report.csv", "summary.json", "mi_by_epoch.svg",
                 "checkpoints/encoder.json", "datasets/train.isd", "datasets/val.isd",
                 "traces/epoch_001_public.csv", "traces/epoch_002_private.csv"):
        assert (experiment / name).is_file(), name
    report = (experiment / "report.csv").read_text().splitlines()
    assert report[0] == "variant,label_type,auc,n_val,seed"
    rows = {tuple(r.split(",")[:2]) for r in report[1:]}
    assert rows == {(v, l) for v in cli.VARIANTS for l in ("public", "private")}
    assert len(list((experiment / "roc").glob("*.svg"))) == 8
    provenance = {load_dataset(experiment / "encoded" / f"{v}_val.isd").provenance for v in cli.VARIANTS}
    assert provenance == {"original", "encoded", "baseline-noise", "baseline-random"}
    assert load_dataset(experiment / "encoded" / "infoshape_val.isd").n_features == 3
    assert load_dataset(experiment / "encoded" / "noise_val.isd").n_features == 10


def test_manifest_contents(experiment):
    doc = json.loads((experiment / "manifest.json").read_text())
    assert doc["command"] == "run-experiment"
    assert doc["single_thread"] is True
    assert doc["config"]["tradeoff"]["epochs"] == "2"
    assert doc["seeds"]["split"] == [0, "split"]
    assert set(doc["versions"]) >= {"numpy", "python", "scipy", "scikit-learn"}
    assert "record.csv" in doc["files"]


def test_replay_is_bitwise(experiment, tmp_path, capsys):
    code, _, _ = run(capsys, "run-experiment", "--out-dir", tmp_path / "again",
                     "--from-manifest", experiment / "manifest.json")
    assert code == 0
    first = json.loads((experiment / "manifest.json").read_text())["files"]
    second = json.loads((tmp_path / "again" / "manifest.json").read_text())["files"]
    assert first == second


def test_existing_output_needs_force(experiment, capsys):
    code, _, err = run(capsys, "run-experiment", "--out-dir", experiment, *TINY)
    assert code == 2 and err["error"] == "UsageError"


def test_force_refuses_foreign_directory(tmp_path, capsys):
    (tmp_path / "keep").mkdir()
    (tmp_path / "keep" / "notes.txt").write_text("mine")
    code, _, err = run(capsys, "gen-data", "--out-dir", tmp_path / "keep", "--force", *TINY)
    assert code == 2
    assert (tmp_path / "keep" / "notes.txt").read_text() == "mine"


def test_step_by_step_pipeline(tmp_path, capsys):
    code, res, _ = run(capsys, "gen-data", "--out-dir", tmp_path / "data", "--split", *TINY)
    assert code == 0 and res["n_samples"] == 400 and res["n_features"] == 10
    code, res, _ = run(capsys, "train-encoder", "--data", tmp_path / "data" / "train.isd",
                       "--out-dir", tmp_path / "enc", *TINY)
    assert code == 0 and len(res["I_L"]) == 2
    ckpt = tmp_path / "enc" / "encoder.json"
    variants = []
    for v in cli.VARIANTS:
        files = []
        for part in ("train", "val"):
            out = tmp_path / f"{v}_{part}.isd"
            extra = ["--encoder", ckpt] if v == "infoshape" else []
            code, res, _ = run(capsys, "encode", "--data", tmp_path / "data" / f"{part}.isd", "--variant", v,
                               "--out", out, *extra, *TINY)
            assert code == 0
            files.append(out)
        variants += ["--variant", v, *files]
    code, res, _ = run(capsys, "evaluate", *variants, "--out-dir", tmp_path / "eval", *TINY)
    assert code == 0
    assert set(res["auc"]) == set(cli.VARIANTS)
    assert len((tmp_path / "eval" / "report.csv").read_text().splitlines()) == 9

    code, res, _ = run(capsys, "estimate-mi", "--data", tmp_path / "data" / "train.isd", "--label", "public",
                       "--encoder", ckpt, "--out", tmp_path / "trace.csv", *TINY)
    assert code == 0 and res["iterations"] == 15
    assert len((tmp_path / "trace.csv").read_text().splitlines()) == 16


def test_gen_data_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        assert run(capsys, "gen-data", "--out-dir", tmp_path / name, "--seed", 4, *TINY)[0] == 0
    assert (tmp_path / "a" / "dataset.isd").read_bytes() == (tmp_path / "b" / "dataset.isd").read_bytes()


def test_missing_input_is_structured(tmp_path, capsys):
    code, _, err = run(capsys, "evaluate", "--variant", "x", tmp_path / "no.isd", tmp_path / "no2.isd",
                       "--out-dir", tmp_path / "out")
    assert code == 3
    assert err["error"] == "DatasetFormatError"
    assert not (tmp_path / "out").exists()


def test_training_failure_leaves_no_output(tmp_path, capsys, monkeypatch):
    from infoshape.exceptions import DivergenceError

    def boom(*a, **k):
        raise DivergenceError("estimate blew up", iteration=3)

    monkeypatch.setattr(cli, "train_infoshape", boom)
    code, _, err = run(capsys, "run-experiment", "--out-dir", tmp_path / "run", *TINY)
    assert code == 4
    assert err["diagnostics"] == {"iteration": 3}
    assert not (tmp_path / "run").exists()
    assert not any(p.name.startswith(".run.partial") for p in tmp_path.iterdir())


@pytest.mark.parametrize("argv,code", [
    (["run-experiment", "--out-dir", "x", "--set", "tradeoff.lam=-1"], 2),
    (["run-experiment", "--out-dir", "x", "--set", "nothing"], 2),
    (["run-experiment", "--out-dir", "x", "--set", "tradeoff.epochs=many"], 2),
    (["train-encoder"], 2),
    (["no-such-command"], 2),
    (["gen-data", "--out-dir", "x", "--set", "experiment.dataset=mnist"], 2),
])
def test_usage_errors(argv, code, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    got, _, err = run(capsys, *argv)
    assert got == code
    assert set(err) == {"error", "exit_code", "message", "diagnostics"}


def test_mnist_missing_file(tmp_path, capsys):
    code, _, err = run(capsys, "gen-data", "--out-dir", tmp_path / "m", "--set", "experiment.dataset=mnist",
                       "--set", f"mnist.images={tmp_path / 'i.gz'}", "--set", f"mnist.labels={tmp_path / 'l.gz'}")
    assert code == 3


def test_mnist_ingest(tmp_path, capsys):
    from infoshape.data import write_idx

    rng = np.random.default_rng(0)
    write_idx(tmp_path / "i.gz", rng.integers(0, 256, size=(30, 28, 28), dtype=np.uint8))
    write_idx(tmp_path / "l.gz", rng.integers(0, 10, size=30, dtype=np.uint8))
    code, res, _ = run(capsys, "gen-data", "--out-dir", tmp_path / "m", "--set", "experiment.dataset=mnist",
                       "--set", f"mnist.images={tmp_path / 'i.gz'}", "--set", f"mnist.labels={tmp_path / 'l.gz'}",
                       "--set", "mnist.subset=20")
    assert code == 0 and res["n_samples"] == 20 and res["n_features"] == 784


@pytest.mark.parametrize("name", ["synthetic", "mnist", "smoke"])
def test_shipped_configs_parse(name):
    from pathlib import Path

    path = Path(__file__).resolve().parents[1] / "configs" / f"{name}.ini"
    cfg = cli.ExperimentConfig.from_parser(cli.load_config(path))
    assert cfg.tradeoff.lam == 1.0
