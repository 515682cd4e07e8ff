"""Training the privacy-shaping encoder against two neural MI estimates.

Each epoch encodes the training set, fits one critic for I[public; code] and
one for I[private; code], records both estimates together with the
entropy-based utility/privacy scores, and then moves the encoder weights down
the gradient of

    Q_hat(theta) = lambda * DV_private(theta) - DV_public(theta)

with both critics frozen.  The gradient reaches the encoder through the
critics' input gradients.  Label entropies do not depend on the encoder and
are left out of the gradient.

Sign note: the recorded ``Q`` column is the score-form
``M_privacy + lambda * M_utility``.  Minimising it literally would *reward*
leaking the private label, so the update minimises ``Q_hat`` instead, which
raises the public-label MI and lowers the private-label MI.
"""

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import nn
from ._validation import check_binary, check_label_pair, check_matrix
from .data import LabeledDataset
from .exceptions import ConfigurationError, DivergenceError, TrainingError, UsageError
from .mi import MIEstimatorConfig, MITrace, dv_score_grads, train_mi_estimator, PairedBatch
from .rng import substream

logger = logging.getLogger(__name__)

__all__ = [
    "ENCODER_PRESETS",
    "EncoderModel",
    "TradeoffConfig",
    "EncoderTrainRecord",
    "label_entropy",
    "utility_privacy_scores",
    "make_encoder",
    "encode",
    "encode_dataset",
    "encoder_objective",
    "encoder_loss_gradient",
    "train_infoshape",
    "InfoShapeEncoder",
]

ENCODER_PRESETS = {
    "synthetic": (10, 10, 3),
    "mnist": (784, 50, 10),
}


@dataclass(frozen=True)
class EncoderModel:
    net: nn.Mlp
    preset: str = "custom"

    def __post_init__(self):
        if self.net.activations[-1] != "tanh":
            raise ConfigurationError("encoder output layer must be tanh")

    @property
    def input_dim(self):
        return self.net.n_inputs

    @property
    def code_dim(self):
        return self.net.n_outputs


def make_encoder(preset_or_dims, rng) -> EncoderModel:
    """Fresh tanh encoder for a preset name or explicit layer dims."""
    if isinstance(preset_or_dims, str):
        if preset_or_dims not in ENCODER_PRESETS:
            raise ConfigurationError(f"unknown preset {preset_or_dims!r}; known: {sorted(ENCODER_PRESETS)}")
        dims, tag = ENCODER_PRESETS[preset_or_dims], preset_or_dims
    else:
        dims, tag = tuple(preset_or_dims), "custom"
    return EncoderModel(nn.init_weights(dims, ["tanh"] * (len(dims) - 1), rng), tag)


@dataclass
class TradeoffConfig:
    lam: float = 1.0
    epochs: int = 50
    lr: float = 1e-3
    encoder_steps_per_epoch: int = 1
    estimator: MIEstimatorConfig = field(default_factory=MIEstimatorConfig)
    estimator_reinit_per_epoch: bool = True
    # encoder update batch; None means the estimator batch size
    step_batch_size: Optional[int] = None
    n_jobs: int = 1

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigurationError("lambda must be non-negative")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.encoder_steps_per_epoch < 0:
            raise ConfigurationError("encoder_steps_per_epoch must be >= 0")
        if self.lr <= 0:
            raise ConfigurationError("encoder lr must be positive")


RECORD_COLUMNS = ("epoch", "I_L", "I_S", "H_L", "H_S", "M_utility", "M_privacy", "Q")


@dataclass
class EncoderTrainRecord:
    lam: float = 1.0
    I_L: List[float] = field(default_factory=list)
    I_S: List[float] = field(default_factory=list)
    H_L: List[float] = field(default_factory=list)
    H_S: List[float] = field(default_factory=list)
    M_utility: List[float] = field(default_factory=list)
    M_privacy: List[float] = field(default_factory=list)
    Q: List[float] = field(default_factory=list)
    traces_L: List[MITrace] = field(default_factory=list, repr=False)
    traces_S: List[MITrace] = field(default_factory=list, repr=False)

    def __len__(self):
        return len(self.Q)

    def append(self, I_L, I_S, H_L, H_S, trace_L=None, trace_S=None):
        m_u, m_p = utility_privacy_scores(I_L, I_S, H_L, H_S)
        self.I_L.append(float(I_L))
        self.I_S.append(float(I_S))
        self.H_L.append(float(H_L))
        self.H_S.append(float(H_S))
        self.M_utility.append(m_u)
        self.M_privacy.append(m_p)
        self.Q.append(m_p + self.lam * m_u)
        if trace_L is not None:
            self.traces_L.append(trace_L)
        if trace_S is not None:
            self.traces_S.append(trace_S)

    def rows(self):
        for e in range(len(self)):
            yield (e + 1, self.I_L[e], self.I_S[e], self.H_L[e], self.H_S[e],
                   self.M_utility[e], self.M_privacy[e], self.Q[e])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(RECORD_COLUMNS)
            for row in self.rows():
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def label_entropy(labels) -> float:
    """Shannon entropy (nats) of the empirical distribution of a 0/1 vector."""
    labels = check_binary(labels, "labels")
    p = labels.mean()
    if p in (0.0, 1.0):
        return 0.0
    return float(-p * np.log(p) - (1.0 - p) * np.log1p(-p))


def utility_privacy_scores(I_L, I_S, H_L, H_S):
    """``(M_utility, M_privacy) = (I_L - H_L, H_S - I_S)``."""
    if H_L < 0 or H_S < 0:
        raise UsageError("entropies must be non-negative")
    return float(I_L - H_L), float(H_S - I_S)


def encode(encoder: EncoderModel, X):
    X = check_matrix(X, encoder.input_dim)
    return nn.forward(encoder.net, X)[0]


def encode_dataset(encoder: EncoderModel, dataset: LabeledDataset) -> LabeledDataset:
    if dataset.n_features != encoder.input_dim:
        raise ConfigurationError(f"encoder takes {encoder.input_dim} features, dataset has {dataset.n_features}")
    return dataset.with_features(encode(encoder, dataset.features), "encoded", encoder_preset=encoder.preset)


def _dv_and_code_grad(critic, codes, labels, perm):
    """DV estimate on (codes, labels) vs (codes, labels[perm]) and its gradient w.r.t. codes."""
    n, k = codes.shape
    if critic.n_inputs != k + 1:
        raise ConfigurationError(f"critic expects codes of dim {critic.n_inputs - 1}, got {k}")
    labels = np.asarray(labels, dtype=np.float64)
    x = np.vstack([np.column_stack([codes, labels]), np.column_stack([codes, labels[perm]])])
    out, cache = nn.forward(critic, x)
    scores = out[:, 0]
    fj, fp = scores[:n], scores[n:]
    g_joint, g_prod, lme = dv_score_grads(fj, fp)
    _, in_grad = nn.backward(critic, cache, np.concatenate([g_joint, g_prod])[:, None])
    return float(fj.mean() - lme), in_grad[:n, :k] + in_grad[n:, :k]


def encoder_objective(encoder, critic_L, critic_S, X, public, private, perm_L, perm_S, lam):
    """``Q_hat = lam * DV_S - DV_L`` on one batch with fixed label permutations."""
    codes = nn.forward(encoder.net, X)[0]
    dv_l, _ = _dv_and_code_grad(critic_L, codes, public, perm_L)
    dv_s, _ = _dv_and_code_grad(critic_S, codes, private, perm_S)
    return lam * dv_s - dv_l


def encoder_loss_gradient(encoder, critic_L, critic_S, X, public, private, perm_L, perm_S, lam):
    """Gradient of :func:`encoder_objective` with respect to the encoder parameters only.

    Returns ``(q_hat, grads)``.
    """
    codes, cache = nn.forward(encoder.net, X)
    dv_l, g_l = _dv_and_code_grad(critic_L, codes, public, perm_L)
    dv_s, g_s = _dv_and_code_grad(critic_S, codes, private, perm_S)
    grads, _ = nn.backward(encoder.net, cache, lam * g_s - g_l)
    if not grads.is_finite():
        raise TrainingError("non-finite encoder gradient", dv_public=dv_l, dv_private=dv_s)
    return lam * dv_s - dv_l, grads


def _fit_critic(codes, labels, config, rng, warm):
    return train_mi_estimator(PairedBatch(codes, labels), config, rng, net=warm)


def train_infoshape(train_set: LabeledDataset, config: TradeoffConfig = None, seed=0,
                    encoder: EncoderModel = None, preset=None, callback=None):
    """Run the alternating critic / encoder schedule.

    Random streams are drawn from ``seed`` with purpose tags
    ``"encoder-init"`` and ``("epoch", e, "mi-public" | "mi-private" |
    "encoder-step")`` so the two critics can be fitted in parallel
    (``config.n_jobs > 1``) without changing any result.

    Returns ``(encoder, record)``.  A diverging critic raises
    :class:`DivergenceError` with the partial record in ``diagnostics``.
    """
    config = config or TradeoffConfig()
    X = check_matrix(train_set.features)
    public, private = train_set.public_labels, train_set.private_labels
    if encoder is None:
        if preset is None:
            preset = "mnist" if X.shape[1] == 784 else "synthetic"
        encoder = make_encoder(preset, substream(seed, "encoder-init"))
    if encoder.input_dim != X.shape[1]:
        raise ConfigurationError(f"encoder takes {encoder.input_dim} features, data has {X.shape[1]}")

    h_l, h_s = label_entropy(public), label_entropy(private)
    record = EncoderTrainRecord(lam=config.lam)
    state = nn.adam_init(encoder.net, lr=config.lr)
    est = config.estimator
    step_batch = min(config.step_batch_size or est.batch_size, len(train_set))
    critics = (None, None)
    pool = ThreadPoolExecutor(max_workers=2) if config.n_jobs > 1 else None
    try:
        for epoch in range(config.epochs):
            codes = nn.forward(encoder.net, X)[0]
            warm = critics if not config.estimator_reinit_per_epoch else (None, None)
            jobs = [
                (codes, public, est, substream(seed, "epoch", epoch, "mi-public"), warm[0]),
                (codes, private, est, substream(seed, "epoch", epoch, "mi-private"), warm[1]),
            ]
            try:
                if pool is not None:
                    results = list(pool.map(lambda a: _fit_critic(*a), jobs))
                else:
                    results = [_fit_critic(*a) for a in jobs]
            except DivergenceError as exc:
                exc.diagnostics.update(epoch=epoch, record=record)
                raise
            (critic_l, trace_l, i_l), (critic_s, trace_s, i_s) = results
            critics = (critic_l, critic_s)
            record.append(i_l, i_s, h_l, h_s, trace_l, trace_s)
            logger.info("epoch %d: I_L=%.4f I_S=%.4f Q=%.4f", epoch + 1, i_l, i_s, record.Q[-1])

            step_rng = substream(seed, "epoch", epoch, "encoder-step")
            for _ in range(config.encoder_steps_per_epoch):
                idx = step_rng.choice(len(train_set), size=step_batch, replace=False)
                perm_l = step_rng.permutation(step_batch)
                perm_s = step_rng.permutation(step_batch)
                try:
                    _, grads = encoder_loss_gradient(encoder, critic_l, critic_s, X[idx], public[idx],
                                                     private[idx], perm_l, perm_s, config.lam)
                    new_net, state = nn.adam_step(encoder.net, grads, state)
                except TrainingError as exc:
                    exc.diagnostics.update(epoch=epoch, record=record)
                    raise
                encoder = EncoderModel(new_net, encoder.preset)
            if callback is not None:
                callback(epoch, encoder, record)
    finally:
        if pool is not None:
            pool.shutdown()
    return encoder, record


class InfoShapeEncoder(TransformerMixin, BaseEstimator):
    """Lossy label-aware encoder as a scikit-learn transformer.

    ``fit(X, y)`` takes ``y`` of shape ``(n_samples, 2)`` holding the public
    and private 0/1 labels; ``transform(X)`` returns the tanh codes.

    Parameters mirror :class:`TradeoffConfig` and :class:`MIEstimatorConfig`
    (the ``mi_`` prefixed ones).  ``preset`` is ``"synthetic"``, ``"mnist"``,
    a tuple of layer dims, or ``None`` to pick by input width.
    """

    def __init__(self, preset=None, lam=1.0, epochs=50, lr=1e-3, encoder_steps_per_epoch=1,
                 mi_iterations=2000, mi_lr=1e-4, mi_batch_size=2000, mi_accumulation_window=10,
                 mi_reg_coefficient=0.1, mi_final_average_window=None,
                 estimator_reinit_per_epoch=True, step_batch_size=None, n_jobs=1, random_state=0):
        self.preset = preset
        self.lam = lam
        self.epochs = epochs
        self.lr = lr
        self.encoder_steps_per_epoch = encoder_steps_per_epoch
        self.mi_iterations = mi_iterations
        self.mi_lr = mi_lr
        self.mi_batch_size = mi_batch_size
        self.mi_accumulation_window = mi_accumulation_window
        self.mi_reg_coefficient = mi_reg_coefficient
        self.mi_final_average_window = mi_final_average_window
        self.estimator_reinit_per_epoch = estimator_reinit_per_epoch
        self.step_batch_size = step_batch_size
        self.n_jobs = n_jobs
        self.random_state = random_state

    def tradeoff_config(self):
        return TradeoffConfig(
            lam=self.lam,
            epochs=self.epochs,
            lr=self.lr,
            encoder_steps_per_epoch=self.encoder_steps_per_epoch,
            estimator=MIEstimatorConfig(
                iterations=self.mi_iterations,
                lr=self.mi_lr,
                batch_size=self.mi_batch_size,
                accumulation_window=self.mi_accumulation_window,
                reg_coefficient=self.mi_reg_coefficient,
                final_average_window=self.mi_final_average_window,
            ),
            estimator_reinit_per_epoch=self.estimator_reinit_per_epoch,
            step_batch_size=self.step_batch_size,
            n_jobs=self.n_jobs,
        )

    def fit(self, X, y):
        X = check_matrix(X)
        public, private = check_label_pair(y, X.shape[0])
        seed = 0 if self.random_state is None else int(self.random_state)
        preset = self.preset
        if preset is None:
            preset = "mnist" if X.shape[1] == 784 else "synthetic"
        encoder = make_encoder(preset, substream(seed, "encoder-init"))
        ds = LabeledDataset(X, public, private, "designer")
        self.encoder_, self.record_ = train_infoshape(ds, self.tradeoff_config(), seed, encoder=encoder)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "encoder_")
        return encode(self.encoder_, X)
