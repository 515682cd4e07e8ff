"""Downstream classifiers and ROC/AUC reporting.

For every released dataset variant two classifiers are trained on the
training split: one for the public label (the intended user) and one for the
private label (an adversary holding the same data).  Validation AUC of the
second is the empirical privacy leak.
"""

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple

import numpy as np
from scipy.stats import rankdata
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import nn
from ._validation import check_binary, check_matrix
from .data import LabeledDataset
from .exceptions import TrainingError, UsageError
from .rng import check_random_state, substream

logger = logging.getLogger(__name__)

__all__ = [
    "ClassifierConfig",
    "CLASSIFIER_PRESETS",
    "RocReport",
    "MlpClassifier",
    "make_classifier_net",
    "train_classifier",
    "roc_auc",
    "pairwise_auc",
    "EvaluationCell",
    "EvaluationReport",
    "evaluate_matrix",
]


@dataclass
class ClassifierConfig:
    hidden: int = 20
    lr: float = 1e-4
    batch_size: int = 100
    epochs: int = 50
    momentum: float = 0.9
    # "sum" adds per-sample BCE over the minibatch, "mean" averages it
    reduction: str = "sum"

    def __post_init__(self):
        if self.reduction not in ("sum", "mean"):
            raise UsageError("reduction must be 'sum' or 'mean'")
        if self.epochs < 0 or self.batch_size < 1 or self.hidden < 1 or self.lr <= 0 or not 0 <= self.momentum < 1:
            raise UsageError("invalid classifier config")

    @classmethod
    def preset(cls, name, **overrides):
        if name not in CLASSIFIER_PRESETS:
            raise UsageError(f"unknown classifier preset {name!r}")
        return cls(**{**CLASSIFIER_PRESETS[name], **overrides})


# per-dataset overrides of hidden width and epoch count
CLASSIFIER_PRESETS = {
    "synthetic": {"hidden": 20, "epochs": 50},
    "mnist": {"hidden": 50, "epochs": 10},
}


def make_classifier_net(n_inputs, hidden, rng) -> nn.Mlp:
    return nn.init_weights([n_inputs, hidden, 1], ["relu", "sigmoid"], rng)


def _bce(probs, targets):
    p = np.clip(probs, 1e-12, 1.0 - 1e-12)
    return -(targets * np.log(p) + (1.0 - targets) * np.log1p(-p))


class MlpClassifier(ClassifierMixin, BaseEstimator):
    """One-hidden-layer ReLU network with a sigmoid output, trained by minibatch SGD on BCE."""

    def __init__(self, hidden=20, lr=1e-4, batch_size=100, epochs=50, momentum=0.9, reduction="sum",
                 random_state=0):
        self.hidden = hidden
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.momentum = momentum
        self.reduction = reduction
        self.random_state = random_state

    def fit(self, X, y):
        X = check_matrix(X)
        y = check_binary(y, "y", X.shape[0])
        cfg = ClassifierConfig(self.hidden, self.lr, self.batch_size, self.epochs, self.momentum, self.reduction)
        rng = check_random_state(self.random_state)
        net = make_classifier_net(X.shape[1], cfg.hidden, rng)
        self.initial_net_ = net
        self.loss_curve_ = []
        targets = y.astype(np.float64)
        n = X.shape[0]
        velocity = None
        for epoch in range(cfg.epochs):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                probs, cache = nn.forward(net, X[idx])
                t = targets[idx][:, None]
                total += float(_bce(probs, t).sum())
                # sigmoid + BCE: dLoss/dz = p - t
                delta = probs - t
                if cfg.reduction == "mean":
                    delta = delta / len(idx)
                grads, _ = nn.backward(net, cache, delta, through_output_activation=False)
                if not np.isfinite(total) or not grads.is_finite():
                    raise TrainingError("non-finite classifier loss", epoch=epoch, loss=total)
                net, velocity = nn.momentum_sgd_step(net, grads, cfg.lr, cfg.momentum, velocity)
            self.loss_curve_.append(total / n)
        self.net_ = net
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "net_")
        p = self.net_(check_matrix(X, self.n_features_in_))[:, 0]
        return np.column_stack([1.0 - p, p])

    def decision_function(self, X):
        return self.predict_proba(X)[:, 1]

    def predict(self, X):
        return (self.decision_function(X) >= 0.5).astype(np.int64)


def train_classifier(train_set: LabeledDataset, label_choice, config: ClassifierConfig = None, rng=None):
    config = config or ClassifierConfig()
    clf = MlpClassifier(config.hidden, config.lr, config.batch_size, config.epochs, config.momentum,
                        config.reduction, random_state=check_random_state(rng))
    return clf.fit(train_set.features, train_set.labels(label_choice))


@dataclass
class RocReport:
    points: List[Tuple[float, float]]
    auc: float
    n_pos: int
    n_neg: int

    @property
    def fpr(self):
        return np.array([p[0] for p in self.points])

    @property
    def tpr(self):
        return np.array([p[1] for p in self.points])

    def trapezoid_area(self):
        f, t = self.fpr, self.tpr
        return float(np.sum(np.diff(f) * (t[1:] + t[:-1]) / 2.0))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fpr", "tpr"])
            for f, t in self.points:
                w.writerow([repr(float(f)), repr(float(t))])

    def to_svg(self, path, title=""):
        size, pad = 320, 30
        span = size - 2 * pad

        def xy(f, t):
            return f"{pad + f * span:.2f},{size - pad - t * span:.2f}"

        poly = " ".join(xy(f, t) for f, t in self.points)
        svg = (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">\n'
            f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="none" stroke="#888"/>\n'
            f'<line x1="{pad}" y1="{size - pad}" x2="{size - pad}" y2="{pad}" stroke="#ccc" stroke-dasharray="4"/>\n'
            f'<polyline points="{poly}" fill="none" stroke="#1f4e9c" stroke-width="2"/>\n'
            f'<text x="{pad}" y="{pad - 10}" font-size="12">{title} AUC={self.auc:.3f}</text>\n'
            "</svg>\n"
        )
        Path(path).write_text(svg)


def _check_scores(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = check_binary(labels, "labels", scores.shape[0])
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UsageError("ROC needs at least one positive and one negative label")
    if not np.isfinite(scores).all():
        raise UsageError("scores must be finite")
    return scores, labels, n_pos, n_neg


def roc_auc(scores, labels) -> RocReport:
    """ROC points over all distinct thresholds and the Mann-Whitney AUC.

    Tied scores are one threshold step (a diagonal ROC segment) and get half
    credit in the AUC, so the trapezoid area under ``points`` equals ``auc``.
    """
    scores, labels, n_pos, n_neg = _check_scores(scores, labels)
    ranks = rankdata(scores)  # average ranks for ties
    auc = (ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)

    order = np.argsort(-scores, kind="mergesort")
    s, l = scores[order], labels[order]
    # last index of every run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tps = np.cumsum(l)[ends]
    fps = (ends + 1) - tps
    points = [(0.0, 0.0)] + [(fp / n_neg, tp / n_pos) for tp, fp in zip(tps.tolist(), fps.tolist())]
    return RocReport(points, float(auc), n_pos, n_neg)


def pairwise_auc(scores, labels) -> float:
    """Exhaustive O(n_pos * n_neg) AUC: P(pos > neg) + 0.5 P(tie)."""
    scores, labels, n_pos, n_neg = _check_scores(scores, labels)
    pos = scores[labels == 1][:, None]
    neg = scores[labels == 0][None, :]
    return float(((pos > neg).sum() + 0.5 * (pos == neg).sum()) / (n_pos * n_neg))


@dataclass
class EvaluationCell:
    variant: str
    label_type: str
    auc: float
    n_val: int
    seed: int
    roc: RocReport = field(repr=False)


@dataclass
class EvaluationReport:
    cells: List[EvaluationCell]

    def auc(self, variant, label_type):
        for c in self.cells:
            if c.variant == variant and c.label_type == label_type:
                return c.auc
        raise KeyError((variant, label_type))

    def table(self):
        variants = list(dict.fromkeys(c.variant for c in self.cells))
        return {v: {c.label_type: c.auc for c in self.cells if c.variant == v} for v in variants}

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variant", "label_type", "auc", "n_val", "seed"])
            for c in self.cells:
                w.writerow([c.variant, c.label_type, repr(c.auc), c.n_val, c.seed])

    def write_rocs(self, directory, svg=True):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for c in self.cells:
            stem = f"roc_{c.variant}_{c.label_type}"
            c.roc.to_csv(directory / f"{stem}.csv")
            if svg:
                c.roc.to_svg(directory / f"{stem}.svg", f"{c.variant} / {c.label_type}")


def _cell_seed(seed, variant, label_type):
    # 31-bit seed recorded in the report, reproducible from (seed, variant, label)
    return int(substream(seed, "eval", variant, label_type).integers(0, 2**31 - 1))


def evaluate_matrix(variants, config: ClassifierConfig = None, seed=0, n_jobs=1) -> EvaluationReport:
    """Train public/private classifiers for every ``(name, train, validation)`` variant.

    Each cell uses its own seed derived from ``(seed, name, label)``, so cells
    may run concurrently without changing the table.
    """
    config = config or ClassifierConfig()
    jobs = []
    for name, train_set, val_set in variants:
        if train_set.n_features != val_set.n_features:
            raise UsageError(f"variant {name}: train/validation feature counts differ")
        for label_type in ("public", "private"):
            jobs.append((name, train_set, val_set, label_type, _cell_seed(seed, name, label_type)))

    def run(job):
        name, train_set, val_set, label_type, cell_seed = job
        clf = train_classifier(train_set, label_type, config, cell_seed)
        report = roc_auc(clf.decision_function(val_set.features), val_set.labels(label_type))
        logger.info("%s/%s: AUC %.4f", name, label_type, report.auc)
        return EvaluationCell(name, label_type, report.auc, len(val_set), cell_seed, report)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            cells = list(pool.map(run, jobs))
    else:
        cells = [run(j) for j in jobs]
    return EvaluationReport(cells)
