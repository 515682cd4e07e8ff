"""Datasets: the 4-class synthetic generator, MNIST IDX files, label rules, splits, file I/O.

Dataset file format (``.isd``, text, UTF-8)::

    INFOSHAPE-DATASET 1
    n_samples <int>
    n_features <int>
    provenance <tag>
    label_rule <rule or ->
    meta <single-line JSON object>
    columns f0,...,f{d-1},public,private
    <n_samples data rows, comma separated>

Feature values are written with ``repr`` (shortest round-trip form), so
``load_dataset(save_dataset(ds))`` reproduces every float bitwise.
"""

import gzip
import json
import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .exceptions import (
    DatasetFormatError,
    IdxCountMismatchError,
    IdxMagicError,
    IdxParseError,
    IdxTruncatedError,
    UsageError,
)
from .rng import substream

logger = logging.getLogger(__name__)

__all__ = [
    "PROVENANCE_TAGS",
    "LABEL_RULES",
    "LabeledDataset",
    "SyntheticSpec",
    "generate_synthetic",
    "load_mnist_idx",
    "write_idx",
    "derive_labels",
    "mnist_dataset",
    "split",
    "save_dataset",
    "load_dataset",
]

PROVENANCE_TAGS = ("designer", "owner", "original", "encoded", "baseline-random", "baseline-noise")
LABEL_RULES = ("bitsplit", "parity-magnitude")

FILE_MAGIC = "INFOSHAPE-DATASET"
FILE_VERSION = 1

IDX_LABEL_MAGIC = 2049
IDX_IMAGE_MAGIC = 2051


@dataclass
class LabeledDataset:
    features: np.ndarray
    public_labels: np.ndarray
    private_labels: np.ndarray
    provenance: str = "original"
    label_rule: str = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim != 2:
            raise UsageError(f"features must be 2-D, got shape {X.shape}")
        pub = np.asarray(self.public_labels).astype(np.int64).ravel()
        pri = np.asarray(self.private_labels).astype(np.int64).ravel()
        if not (pub.shape[0] == pri.shape[0] == X.shape[0]):
            raise UsageError("label vectors must have one entry per sample")
        if not (np.isin(pub, (0, 1)).all() and np.isin(pri, (0, 1)).all()):
            raise UsageError("labels must be 0/1")
        if not np.isfinite(X).all():
            raise UsageError("features must be finite")
        if self.provenance not in PROVENANCE_TAGS:
            raise UsageError(f"unknown provenance {self.provenance!r}")
        self.features, self.public_labels, self.private_labels = X, pub, pri

    def __len__(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def targets(self):
        """``(n, 2)`` array of (public, private) labels, the ``y`` the estimators take."""
        return np.column_stack([self.public_labels, self.private_labels])

    def labels(self, which):
        if which == "public":
            return self.public_labels
        if which == "private":
            return self.private_labels
        raise UsageError(f"label choice must be 'public' or 'private', not {which!r}")

    def subset(self, idx):
        return replace(self, features=self.features[idx], public_labels=self.public_labels[idx],
                       private_labels=self.private_labels[idx], meta=dict(self.meta))

    def with_features(self, features, provenance, **meta):
        return LabeledDataset(features, self.public_labels.copy(), self.private_labels.copy(),
                              provenance, self.label_rule, {**self.meta, **meta})


@dataclass
class SyntheticSpec:
    n_samples: int = 10000
    n_features: int = 10
    n_informative: int = 3
    n_redundant: int = 2
    n_noise: int = 5
    n_classes: int = 4
    clusters_per_class: int = 2
    hypercube_side: float = 2.0
    same_class_fraction: float = 0.99
    standardize: bool = False
    seed: int = 0

    def validate(self):
        if self.n_informative + self.n_redundant + self.n_noise != self.n_features:
            raise UsageError("informative + redundant + noise must equal n_features")
        if self.n_classes * self.clusters_per_class > 2 ** self.n_informative:
            raise UsageError("not enough hypercube vertices for every cluster")
        if self.n_classes != 4:
            raise UsageError("the bit-split label rule needs exactly 4 classes")
        if self.n_samples < self.n_classes * self.clusters_per_class:
            raise UsageError("too few samples for the requested clusters")
        if not 0.0 <= self.same_class_fraction <= 1.0:
            raise UsageError("same_class_fraction must lie in [0, 1]")
        if self.n_informative < 1 or self.hypercube_side <= 0:
            raise UsageError("need at least one informative feature and a positive side length")


def generate_synthetic(spec: SyntheticSpec = None, rng=None) -> LabeledDataset:
    """Clustered 4-class data with 2-bit labels (private = MSB, public = LSB).

    Clusters sit on distinct vertices of a hypercube centred at the origin.
    Within a cluster the informative coordinates are standard normal draws
    mixed by a per-cluster matrix (entries uniform in [-1, 1]) and shifted to
    the vertex.  Redundant columns are a shared random linear combination of
    the informative ones, noise columns are independent standard normals.  A
    fraction ``1 - same_class_fraction`` of samples gets a uniformly random
    class.  Rows and columns are shuffled at the end.
    """
    spec = spec or SyntheticSpec()
    spec.validate()
    if rng is None:
        rng = substream(spec.seed, "synthetic")
    k = spec.n_informative
    n_clusters = spec.n_classes * spec.clusters_per_class

    # vertices of {-h, +h}^k, h = side / 2
    half = spec.hypercube_side / 2.0
    codes = rng.permutation(2 ** k)[:n_clusters]
    bits = (codes[:, None] >> np.arange(k)[None, :]) & 1
    vertices = (2.0 * bits - 1.0) * half

    sizes = np.full(n_clusters, spec.n_samples // n_clusters)
    sizes[: spec.n_samples % n_clusters] += 1
    cluster_of = np.repeat(np.arange(n_clusters), sizes)
    y = cluster_of % spec.n_classes

    informative = rng.standard_normal((spec.n_samples, k))
    for c in range(n_clusters):
        rows = cluster_of == c
        mix = rng.uniform(-1.0, 1.0, size=(k, k))
        informative[rows] = informative[rows] @ mix + vertices[c]

    combo = rng.uniform(-1.0, 1.0, size=(k, spec.n_redundant))
    redundant = informative @ combo
    noise = rng.standard_normal((spec.n_samples, spec.n_noise))
    X = np.hstack([informative, redundant, noise])

    flip = rng.random(spec.n_samples) < (1.0 - spec.same_class_fraction)
    y[flip] = rng.integers(0, spec.n_classes, size=int(flip.sum()))

    rows = rng.permutation(spec.n_samples)
    cols = rng.permutation(spec.n_features)
    X = X[rows][:, cols]
    y = y[rows]
    if spec.standardize:
        X = (X - X.mean(axis=0)) / X.std(axis=0)

    public, private = derive_labels(y, "bitsplit")
    meta = {"generator": "synthetic-hypercube", "seed": spec.seed, "feature_order": cols.tolist()}
    return LabeledDataset(X, public, private, "original", "bitsplit", meta)


def derive_labels(raw, rule):
    """Map raw class / digit labels to ``(public, private)`` bits.

    ``bitsplit`` (classes 0..3): public = class & 1, private = (class >> 1) & 1.
    ``parity-magnitude`` (digits 0..9): public = digit is odd, private = digit > 4.
    """
    raw = np.asarray(raw)
    if raw.size and not np.issubdtype(raw.dtype, np.integer):
        if not np.all(raw == np.round(raw)):
            raise UsageError("raw labels must be integers")
        raw = raw.astype(np.int64)
    if rule == "bitsplit":
        if raw.size and (raw.min() < 0 or raw.max() > 3):
            raise UsageError("bitsplit needs classes in 0..3")
        return raw & 1, (raw >> 1) & 1
    if rule in ("parity-magnitude", "parity", "magnitude"):
        if raw.size and (raw.min() < 0 or raw.max() > 9):
            raise UsageError("digit rules need labels in 0..9")
        return raw % 2, (raw > 4).astype(np.int64)
    raise UsageError(f"unknown label rule {rule!r}")


def _read_bytes(path):
    data = Path(path).read_bytes()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def _parse_idx(data, expected_magic, path):
    if len(data) < 8:
        raise IdxTruncatedError(f"{path}: shorter than an IDX header")
    magic = struct.unpack(">i", data[:4])[0]
    if magic != expected_magic:
        raise IdxMagicError(f"{path}: magic {magic}, expected {expected_magic}")
    rank = data[3]
    header = 4 + 4 * rank
    if len(data) < header:
        raise IdxTruncatedError(f"{path}: header truncated")
    dims = struct.unpack(f">{rank}I", data[4:header])
    n_bytes = int(np.prod(dims, dtype=np.int64))
    if len(data) - header < n_bytes:
        raise IdxTruncatedError(f"{path}: {len(data) - header} payload bytes, expected {n_bytes}")
    if len(data) - header > n_bytes:
        raise IdxCountMismatchError(f"{path}: {len(data) - header - n_bytes} trailing bytes")
    return np.frombuffer(data, dtype=np.uint8, count=n_bytes, offset=header).reshape(dims)


def load_mnist_idx(images_path, labels_path):
    """Parse an IDX image/label pair (optionally gzipped).

    Returns ``(images, digits)`` where ``images`` is ``(n, rows*cols)`` float64
    in [0, 1] (bytes / 255) and ``digits`` is int64 in 0..9.
    """
    images = _parse_idx(_read_bytes(images_path), IDX_IMAGE_MAGIC, images_path)
    digits = _parse_idx(_read_bytes(labels_path), IDX_LABEL_MAGIC, labels_path)
    if images.ndim != 3:
        raise IdxMagicError(f"{images_path}: image files have rank 3, found {images.ndim}")
    if digits.ndim != 1:
        raise IdxMagicError(f"{labels_path}: label files have rank 1, found {digits.ndim}")
    if images.shape[0] != digits.shape[0]:
        raise IdxCountMismatchError(f"{images.shape[0]} images but {digits.shape[0]} labels")
    if digits.size and digits.max() > 9:
        raise IdxParseError(f"{labels_path}: digit labels must lie in 0..9")
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return X, digits.astype(np.int64)


def write_idx(path, array):
    """Write a uint8 array as an IDX file (gzipped when ``path`` ends in .gz)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = {1: IDX_LABEL_MAGIC, 3: IDX_IMAGE_MAGIC}.get(array.ndim)
    if magic is None:
        raise UsageError("IDX writer supports rank-1 labels and rank-3 images")
    blob = struct.pack(">i", magic) + struct.pack(f">{array.ndim}I", *array.shape) + array.tobytes()
    if str(path).endswith(".gz"):
        blob = gzip.compress(blob, mtime=0)
    Path(path).write_bytes(blob)


def mnist_dataset(images_path, labels_path, subset=None, rng=None) -> LabeledDataset:
    """MNIST with public = odd digit, private = digit > 4; optional random subset."""
    X, digits = load_mnist_idx(images_path, labels_path)
    idx = None
    if subset is not None and subset < len(digits):
        if rng is None:
            raise UsageError("a random subset needs an rng")
        idx = np.sort(rng.choice(len(digits), size=int(subset), replace=False))
        X, digits = X[idx], digits[idx]
    public, private = derive_labels(digits, "parity-magnitude")
    meta = {"generator": "mnist-idx", "images": str(images_path), "n_source": int(len(digits) if idx is None else subset)}
    return LabeledDataset(X, public, private, "original", "parity-magnitude", meta)


def split(dataset: LabeledDataset, val_fraction=0.2, rng=None):
    """Stratified train/validation split on the (public, private) label pair.

    Every stratum contributes ``round(val_fraction * size)`` samples to the
    validation side.  If some stratum has fewer than two members the split
    falls back to an unstratified one (with a warning).
    """
    if not 0.0 < val_fraction < 1.0:
        raise UsageError("val_fraction must lie strictly between 0 and 1")
    if rng is None:
        raise UsageError("split needs an rng")
    n = len(dataset)
    strata = dataset.public_labels * 2 + dataset.private_labels
    values, counts = np.unique(strata, return_counts=True)
    val_idx = []
    if counts.min() < 2:
        logger.warning("stratum with %d sample(s); falling back to an unstratified split", counts.min())
        perm = rng.permutation(n)
        val_idx = perm[: int(round(val_fraction * n))]
    else:
        for v in values:
            members = np.flatnonzero(strata == v)
            members = members[rng.permutation(members.size)]
            val_idx.append(members[: int(round(val_fraction * members.size))])
        val_idx = np.concatenate(val_idx)
    mask = np.zeros(n, dtype=bool)
    mask[val_idx] = True
    train_idx = np.flatnonzero(~mask)
    val_idx = np.flatnonzero(mask)
    return dataset.subset(train_idx), dataset.subset(val_idx)


def save_dataset(path, dataset: LabeledDataset):
    d = dataset.n_features
    header = [
        f"{FILE_MAGIC} {FILE_VERSION}",
        f"n_samples {len(dataset)}",
        f"n_features {d}",
        f"provenance {dataset.provenance}",
        f"label_rule {dataset.label_rule or '-'}",
        f"meta {json.dumps(dataset.meta, sort_keys=True)}",
        "columns " + ",".join([f"f{j}" for j in range(d)] + ["public", "private"]),
    ]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(header) + "\n")
        for row, pub, pri in zip(dataset.features.tolist(), dataset.public_labels, dataset.private_labels):
            fh.write(",".join(map(repr, row)) + f",{pub},{pri}\n")


def _header_field(line, key, lineno, path):
    name, _, value = line.partition(" ")
    if name != key or not value:
        raise DatasetFormatError(f"{path}:{lineno}: expected '{key} <value>', got {line[:60]!r}")
    return value


def load_dataset(path) -> LabeledDataset:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise DatasetFormatError(f"cannot read dataset {path}: {exc}") from exc
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) < 7:
        raise DatasetFormatError(f"{path}: header truncated")
    magic, _, version = lines[0].partition(" ")
    if magic != FILE_MAGIC:
        raise DatasetFormatError(f"{path}: not an infoshape dataset file")
    if version != str(FILE_VERSION):
        raise DatasetFormatError(f"{path}: unsupported version {version!r}")
    try:
        n = int(_header_field(lines[1], "n_samples", 2, path))
        d = int(_header_field(lines[2], "n_features", 3, path))
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: bad dimension field: {exc}") from exc
    provenance = _header_field(lines[3], "provenance", 4, path)
    rule = _header_field(lines[4], "label_rule", 5, path)
    try:
        meta = json.loads(_header_field(lines[5], "meta", 6, path))
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: bad meta JSON: {exc}") from exc
    columns = _header_field(lines[6], "columns", 7, path).split(",")
    if columns != [f"f{j}" for j in range(d)] + ["public", "private"]:
        raise DatasetFormatError(f"{path}: column list does not match n_features={d}")
    body = lines[7:]
    if len(body) != n:
        raise DatasetFormatError(f"{path}: header declares {n} rows, found {len(body)}")
    X = np.empty((n, d))
    labels = np.empty((n, 2), dtype=np.int64)
    for i, line in enumerate(body):
        parts = line.split(",")
        if len(parts) != d + 2:
            raise DatasetFormatError(f"{path}:{i + 8}: expected {d + 2} fields, got {len(parts)}")
        try:
            X[i] = [float(v) for v in parts[:d]]
            labels[i] = [int(parts[d]), int(parts[d + 1])]
        except ValueError as exc:
            raise DatasetFormatError(f"{path}:{i + 8}: {exc}") from exc
    try:
        return LabeledDataset(X, labels[:, 0], labels[:, 1], provenance,
                              None if rule == "-" else rule, meta)
    except UsageError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from exc
