"""Comparison encoders: an untrained encoder, additive Gaussian noise, and the identity."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_matrix
from .data import LabeledDataset
from .exceptions import UsageError
from .rng import substream
from .trainer import EncoderModel, encode, make_encoder

__all__ = [
    "random_encoder",
    "RandomEncoder",
    "GaussianNoiseEncoder",
    "IdentityEncoder",
    "apply_baseline",
]


def random_encoder(preset, seed) -> EncoderModel:
    """Freshly initialised, never trained encoder with the InfoShape architecture."""
    return make_encoder(preset, substream(seed, "baseline-random"))


class RandomEncoder(TransformerMixin, BaseEstimator):
    def __init__(self, preset="synthetic", random_state=0):
        self.preset = preset
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_matrix(X)
        self.encoder_ = random_encoder(self.preset, self.random_state)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "encoder_")
        return encode(self.encoder_, X)


class GaussianNoiseEncoder(TransformerMixin, BaseEstimator):
    """``x + eps``, ``eps ~ N(0, sigma^2 I)``.

    Row ``i`` always receives the same noise for a given ``random_state``:
    its noise comes from the substream ``(random_state, "baseline-noise", i)``.
    """

    def __init__(self, sigma=1.0, random_state=0):
        self.sigma = sigma
        self.random_state = random_state

    def fit(self, X, y=None):
        if not self.sigma > 0:
            raise UsageError("sigma must be > 0")
        self.n_features_in_ = check_matrix(X).shape[1]
        return self

    def transform(self, X, offset=0):
        """Add noise; ``offset`` shifts the sample index (for split datasets)."""
        if not self.sigma > 0:
            raise UsageError("sigma must be > 0")
        X = check_matrix(X)
        noise = np.empty_like(X)
        for i in range(X.shape[0]):
            noise[i] = substream(self.random_state, "baseline-noise", offset + i).standard_normal(X.shape[1])
        return X + self.sigma * noise


class IdentityEncoder(TransformerMixin, BaseEstimator):
    def fit(self, X, y=None):
        self.n_features_in_ = check_matrix(X).shape[1]
        return self

    def transform(self, X):
        return np.array(check_matrix(X), copy=True)


def apply_baseline(dataset: LabeledDataset, variant, *, preset=None, sigma=1.0, seed=0, offset=0) -> LabeledDataset:
    """Encode a dataset with one of ``random``, ``noise``, ``identity``.

    ``offset`` is the index of the first row in the noise stream; give the
    validation split ``offset=len(train)`` so it never reuses training noise.
    """
    if variant == "identity":
        return dataset.with_features(IdentityEncoder().fit_transform(dataset.features), "original")
    if variant == "noise":
        enc = GaussianNoiseEncoder(sigma, seed).fit(dataset.features)
        return dataset.with_features(enc.transform(dataset.features, offset=offset), "baseline-noise",
                                     sigma=sigma, noise_seed=seed, noise_offset=offset)
    if variant == "random":
        if preset is None:
            preset = "mnist" if dataset.n_features == 784 else "synthetic"
        enc = RandomEncoder(preset, seed).fit(dataset.features)
        return dataset.with_features(enc.transform(dataset.features), "baseline-random", encoder_preset=preset)
    raise UsageError(f"unknown baseline {variant!r}")
