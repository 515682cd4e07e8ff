"""Neural mutual-information estimation with a regularised Donsker-Varadhan bound.

A critic network ``F(alpha, beta)`` scores (sample, label) pairs.  For a joint
batch and a product batch (same alphas, labels permuted within the batch)::

    dv      = mean(F_joint) - logmeanexp(F_product)
    remine  = dv - c * logmeanexp(F_product) ** 2

``dv`` lower-bounds I[alpha; beta] for any critic; ``remine`` is what the
critic is trained to maximise (``c = 0.1`` by default) because the squared
penalty pins the otherwise free additive constant of ``F`` near zero.
Everything is in nats.
"""

import csv
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import nn
from ._validation import check_matrix
from .exceptions import ConfigurationError, DivergenceError, TrainingError, UsageError
from .rng import check_random_state

__all__ = [
    "PairedBatch",
    "MIEstimatorConfig",
    "MITrace",
    "logmeanexp",
    "critic_input",
    "init_critic",
    "sample_product_batch",
    "dv_objective",
    "remine_training_objective",
    "remine_gradients",
    "train_mi_estimator",
    "exact_discrete_mi",
    "gaussian_mi_oracle",
    "smooth_trace",
    "write_trace_csv",
    "MutualInformationEstimator",
]

DIVERGENCE_CAP = 50.0
CRITIC_HIDDEN = (100, 100)


@dataclass(frozen=True)
class PairedBatch:
    """Rows of ``alpha`` paired with the scalar ``beta`` of the same index."""

    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=np.float64)
        if alpha.ndim == 1:
            alpha = alpha[:, None]
        beta = np.asarray(self.beta, dtype=np.float64).ravel()
        if alpha.ndim != 2 or alpha.shape[0] != beta.shape[0]:
            raise UsageError(f"alpha rows {alpha.shape} and beta length {beta.shape} differ")
        if alpha.shape[0] < 2:
            raise UsageError("a paired batch needs at least 2 rows")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    def __len__(self):
        return self.alpha.shape[0]

    @property
    def dim(self):
        return self.alpha.shape[1]

    def take(self, idx):
        return PairedBatch(self.alpha[idx], self.beta[idx])


@dataclass
class MIEstimatorConfig:
    iterations: int = 2000
    lr: float = 1e-4
    batch_size: int = 2000
    accumulation_window: int = 10
    reg_coefficient: float = 0.1
    # None means the last 10% of iterations
    final_average_window: Optional[int] = None
    smoothing_window: int = 50
    hidden: tuple = CRITIC_HIDDEN

    def __post_init__(self):
        for name in ("iterations", "batch_size", "accumulation_window", "smoothing_window"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.lr <= 0:
            raise ConfigurationError("lr must be positive")
        if self.reg_coefficient < 0:
            raise ConfigurationError("reg_coefficient must be non-negative")
        if self.final_average_window is not None and not 1 <= self.final_average_window <= self.iterations:
            raise ConfigurationError("final_average_window must lie in [1, iterations]")
        self.hidden = tuple(int(h) for h in self.hidden)

    @property
    def average_window(self):
        if self.final_average_window is not None:
            return int(self.final_average_window)
        return max(1, int(round(0.1 * self.iterations)))

    def with_(self, **changes):
        return replace(self, **changes)


@dataclass
class MITrace:
    raw: np.ndarray
    window: int = 50

    def __len__(self):
        return len(self.raw)

    @property
    def smoothed(self):
        return smooth_trace(self.raw, self.window)


def logmeanexp(values):
    """``log(mean(exp(values)))`` with a max shift so large inputs never overflow."""
    values = np.asarray(values, dtype=np.float64).ravel()
    m = values.max()
    return float(m + np.log(np.mean(np.exp(values - m))))


def _softmax(values):
    e = np.exp(values - values.max())
    return e / e.sum()


def critic_input(batch: PairedBatch):
    return np.hstack([batch.alpha, batch.beta[:, None]])


def init_critic(alpha_dim, rng, hidden=CRITIC_HIDDEN) -> nn.Mlp:
    """Critic with ``alpha_dim + 1`` inputs, ReLU hidden layers, linear scalar output."""
    dims = [alpha_dim + 1, *hidden, 1]
    return nn.init_weights(dims, ["relu"] * len(hidden) + ["identity"], rng)


def sample_product_batch(joint: PairedBatch, rng) -> PairedBatch:
    """Approximate P[alpha]P[beta] by permuting beta within the batch."""
    if len(joint) < 2:
        raise UsageError("need at least 2 rows to form a product batch")
    return PairedBatch(joint.alpha, joint.beta[rng.permutation(len(joint))])


def _critic_scores(net, batch):
    if net.n_inputs != batch.dim + 1:
        raise ConfigurationError(f"critic expects alpha of dim {net.n_inputs - 1}, got {batch.dim}")
    out, cache = nn.forward(net, critic_input(batch))
    scores = out[:, 0]
    if not np.isfinite(scores).all():
        raise TrainingError("critic produced non-finite scores")
    return scores, cache


def _check_pair(joint, product):
    if len(joint) != len(product) or joint.dim != product.dim:
        raise UsageError("joint and product batches must have the same size and dimension")


def dv_objective(net: nn.Mlp, joint: PairedBatch, product: PairedBatch) -> float:
    _check_pair(joint, product)
    fj, _ = _critic_scores(net, joint)
    fp, _ = _critic_scores(net, product)
    return float(fj.mean() - logmeanexp(fp))


def remine_training_objective(net, joint, product, reg_coefficient=0.1):
    """Returns ``(loss_to_minimize, dv_estimate)``."""
    _check_pair(joint, product)
    fj, _ = _critic_scores(net, joint)
    fp, _ = _critic_scores(net, product)
    lme = logmeanexp(fp)
    dv = float(fj.mean() - lme)
    return -(dv - reg_coefficient * lme * lme), dv


def dv_score_grads(fj, fp, reg_coefficient=0.0):
    """Gradients of ``dv - c * lme**2`` with respect to the joint / product scores."""
    lme = logmeanexp(fp)
    g_joint = np.full_like(fj, 1.0 / fj.size)
    g_prod = -_softmax(fp) * (1.0 + 2.0 * reg_coefficient * lme)
    return g_joint, g_prod, lme


def remine_gradients(net, joint, product, reg_coefficient=0.1):
    """Loss, DV estimate and critic parameter gradients of the loss.

    Returns ``(loss, dv, grads)`` where ``grads`` is d(loss)/d(params) with
    ``loss = -(dv - c * lme**2)``.
    """
    _check_pair(joint, product)
    # one pass over the stacked batch: joint rows first, product rows after
    n = len(joint)
    x = np.vstack([critic_input(joint), critic_input(product)])
    out, cache = nn.forward(net, x)
    scores = out[:, 0]
    if not np.isfinite(scores).all():
        raise TrainingError("critic produced non-finite scores")
    fj, fp = scores[:n], scores[n:]
    g_joint, g_prod, lme = dv_score_grads(fj, fp, reg_coefficient)
    dv = float(fj.mean() - lme)
    loss = -(dv - reg_coefficient * lme * lme)
    upstream = -np.concatenate([g_joint, g_prod])[:, None]
    grads, _ = nn.backward(net, cache, upstream)
    return loss, dv, grads


def _draw_joint(source: PairedBatch, batch_size, rng):
    n = len(source)
    if batch_size == n:
        idx = rng.permutation(n)
    else:
        idx = rng.choice(n, size=batch_size, replace=batch_size > n)
    return source.take(idx)


def train_mi_estimator(source: PairedBatch, config: MIEstimatorConfig = None, rng=None, net=None):
    """Train a critic on ``source`` and return ``(net, trace, final_estimate)``.

    Each iteration draws a joint batch of ``config.batch_size`` rows (without
    replacement when the source is large enough), pairs it with an in-batch
    permutation, records the plain DV estimate, and accumulates the ReMINE
    gradient.  An Adam step is taken once per ``accumulation_window``
    iterations with the averaged gradient.  The final estimate is the mean raw
    DV estimate over the last ``config.average_window`` iterations.

    Pass ``net`` to warm-start from an existing critic.
    """
    config = config or MIEstimatorConfig()
    rng = check_random_state(rng)
    if not isinstance(source, PairedBatch):
        raise UsageError("source must be a PairedBatch")
    if net is None:
        net = init_critic(source.dim, rng, config.hidden)
    elif net.n_inputs != source.dim + 1:
        raise ConfigurationError("warm-start critic does not match the source dimension")
    state = nn.adam_init(net, lr=config.lr)
    raw = np.empty(config.iterations)
    pending = []
    for it in range(config.iterations):
        joint = _draw_joint(source, config.batch_size, rng)
        product = sample_product_batch(joint, rng)
        try:
            _, dv, grads = remine_gradients(net, joint, product, config.reg_coefficient)
        except TrainingError as exc:
            exc.diagnostics.update(iteration=it, trace=MITrace(raw[:it].copy(), config.smoothing_window))
            raise
        raw[it] = dv
        if not np.isfinite(dv) or dv > DIVERGENCE_CAP:
            raise DivergenceError(
                f"MI estimate diverged at iteration {it}: {dv}",
                iteration=it,
                trace=MITrace(raw[: it + 1].copy(), config.smoothing_window),
            )
        pending.append(grads)
        if len(pending) == config.accumulation_window:
            try:
                net, state = nn.adam_step(net, nn.accumulate_grads(pending), state)
            except TrainingError as exc:
                exc.diagnostics.update(iteration=it, trace=MITrace(raw[: it + 1].copy(), config.smoothing_window))
                raise
            pending = []
    trace = MITrace(raw, config.smoothing_window)
    final = float(raw[-config.average_window:].mean())
    return net, trace, final


def exact_discrete_mi(joint_pmf) -> float:
    """Exact I[alpha; beta] in nats for a finite joint pmf table."""
    p = np.asarray(joint_pmf, dtype=np.float64)
    if p.ndim != 2 or p.size == 0:
        raise UsageError("joint pmf must be a non-empty 2-D table")
    if (p < 0).any() or not np.isfinite(p).all():
        raise UsageError("pmf entries must be finite and non-negative")
    if abs(p.sum() - 1.0) > 1e-9:
        raise UsageError(f"pmf sums to {p.sum()}, not 1")
    pa = p.sum(axis=1, keepdims=True)
    pb = p.sum(axis=0, keepdims=True)
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / (pa * pb)[nz])))


def gaussian_mi_oracle(rho) -> float:
    """Closed-form MI of a standard bivariate Gaussian with correlation ``rho``."""
    rho = float(rho)
    if not abs(rho) < 1:
        raise UsageError("|rho| must be < 1")
    return -0.5 * np.log1p(-rho * rho)


def smooth_trace(trace, window):
    """Trailing moving average over ``min(window, i + 1)`` points."""
    x = np.asarray(trace, dtype=np.float64).ravel()
    window = int(window)
    if window < 1:
        raise UsageError("window must be >= 1")
    if window == 1 or x.size == 0:
        return x.copy()
    csum = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, x.size + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


def write_trace_csv(path, trace: MITrace):
    """Columns: iteration, raw_estimate, smoothed_estimate."""
    smoothed = trace.smoothed
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "raw_estimate", "smoothed_estimate"])
        for i, (r, s) in enumerate(zip(trace.raw, smoothed)):
            w.writerow([i, repr(float(r)), repr(float(s))])


class MutualInformationEstimator(BaseEstimator):
    """Estimate I[X; y] with a ReMINE-trained critic.

    ``fit(X, y)`` trains a fresh critic on the rows of ``X`` paired with the
    scalar targets ``y`` and stores ``estimate_`` (nats), ``trace_`` and
    ``critic_``.  Defaults are the full training schedule; shrink
    ``iterations`` for quick looks.
    """

    def __init__(self, iterations=2000, lr=1e-4, batch_size=2000, accumulation_window=10,
                 reg_coefficient=0.1, final_average_window=None, smoothing_window=50,
                 hidden=CRITIC_HIDDEN, warm_start=False, random_state=None):
        self.iterations = iterations
        self.lr = lr
        self.batch_size = batch_size
        self.accumulation_window = accumulation_window
        self.reg_coefficient = reg_coefficient
        self.final_average_window = final_average_window
        self.smoothing_window = smoothing_window
        self.hidden = hidden
        self.warm_start = warm_start
        self.random_state = random_state

    def _config(self):
        return MIEstimatorConfig(
            iterations=self.iterations,
            lr=self.lr,
            batch_size=self.batch_size,
            accumulation_window=self.accumulation_window,
            reg_coefficient=self.reg_coefficient,
            final_average_window=self.final_average_window,
            smoothing_window=self.smoothing_window,
            hidden=self.hidden,
        )

    def fit(self, X, y):
        X = check_matrix(X)
        source = PairedBatch(X, y)
        warm = getattr(self, "critic_", None) if self.warm_start else None
        self.critic_, self.trace_, self.estimate_ = train_mi_estimator(
            source, self._config(), check_random_state(self.random_state), net=warm
        )
        self.n_features_in_ = X.shape[1]
        return self

    def score(self, X, y):
        """DV bound of the fitted critic on ``(X, y)`` with a fixed permutation."""
        check_is_fitted(self, "critic_")
        joint = PairedBatch(X, y)
        product = sample_product_batch(joint, check_random_state(self.random_state))
        return dv_objective(self.critic_, joint, product)
