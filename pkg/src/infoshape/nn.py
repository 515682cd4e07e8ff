"""Dense feed-forward networks with hand-written reverse-mode gradients.

Only what the encoder, the MI critics and the downstream classifiers need:
fully connected layers, four activations, Adam and plain SGD.  All arithmetic
is float64.

Weight matrices are stored ``(fan_out, fan_in)`` so a layer computes
``z = a @ W.T + b`` on a row-major batch ``a`` of shape ``(n, fan_in)``.
"""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np

from .exceptions import ConfigurationError, DatasetFormatError, TrainingError, UsageError

__all__ = [
    "ACTIVATIONS",
    "Mlp",
    "ForwardCache",
    "ParamGrads",
    "AdamState",
    "init_weights",
    "forward",
    "backward",
    "adam_init",
    "adam_step",
    "sgd_step",
    "momentum_sgd_step",
    "accumulate_grads",
    "save_checkpoint",
    "load_checkpoint",
]

ACTIVATIONS = ("tanh", "relu", "sigmoid", "identity")

CHECKPOINT_FORMAT = "infoshape-mlp"
CHECKPOINT_VERSION = 1


def _sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return _sigmoid(z)
    return z


def _activation_grad(name, z, a, upstream):
    """Chain ``upstream`` (dL/da) through the activation, giving dL/dz."""
    if name == "tanh":
        return upstream * (1.0 - a * a)
    if name == "relu":
        return upstream * (z > 0)
    if name == "sigmoid":
        return upstream * (a * (1.0 - a))
    return upstream


def _frozen(arr):
    arr = np.array(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Mlp:
    """An immutable dense network.

    Parameters
    ----------
    weights : sequence of ndarray
        ``weights[i]`` has shape ``(layer_dims[i+1], layer_dims[i])``.
    biases : sequence of ndarray
        ``biases[i]`` has shape ``(layer_dims[i+1],)``.
    activations : sequence of str
        One of :data:`ACTIVATIONS` per weight layer.
    """

    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    activations: Tuple[str, ...]

    def __post_init__(self):
        weights = tuple(_frozen(w) for w in self.weights)
        biases = tuple(_frozen(b) for b in self.biases)
        activations = tuple(str(a).lower() for a in self.activations)
        if not weights:
            raise ConfigurationError("an Mlp needs at least one layer")
        if not (len(weights) == len(biases) == len(activations)):
            raise ConfigurationError("weights, biases and activations must have equal length")
        for act in activations:
            if act not in ACTIVATIONS:
                raise ConfigurationError(f"unknown activation {act!r}; expected one of {ACTIVATIONS}")
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ConfigurationError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and w.shape[1] != weights[i - 1].shape[0]:
                raise ConfigurationError(f"layer {i} fan_in {w.shape[1]} != previous fan_out {weights[i - 1].shape[0]}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ConfigurationError(f"layer {i} has non-finite parameters")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)
        object.__setattr__(self, "activations", activations)

    @property
    def layer_dims(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_inputs(self):
        return self.weights[0].shape[1]

    @property
    def n_outputs(self):
        return self.weights[-1].shape[0]

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def __call__(self, batch):
        return forward(self, batch)[0]

    def flat_params(self):
        """Parameters in checkpoint order: per layer, W row-major then b."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def with_flat_params(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_params,):
            raise UsageError(f"expected {self.n_params} parameters, got {flat.shape}")
        weights, biases, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(flat[pos:pos + w.size].reshape(w.shape))
            pos += w.size
            biases.append(flat[pos:pos + b.size])
            pos += b.size
        return Mlp(weights, biases, self.activations)

    def equals(self, other):
        """Bitwise parameter and architecture equality."""
        return (
            self.activations == other.activations
            and self.layer_dims == other.layer_dims
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
            and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))
        )


class ParamGrads(NamedTuple):
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def flat(self):
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def scaled(self, factor):
        return ParamGrads([w * factor for w in self.weights], [b * factor for b in self.biases])

    def is_finite(self):
        return all(np.isfinite(g).all() for g in self.weights + self.biases)


@dataclass
class ForwardCache:
    # inputs[i] feeds layer i; inputs[-1] is the network output
    inputs: List[np.ndarray]
    pre_activations: List[np.ndarray]

    @property
    def outputs(self):
        return self.inputs[-1]


def init_weights(dims: Sequence[int], activations: Sequence[str], rng) -> Mlp:
    """Glorot-uniform weights in ``±sqrt(6 / (fan_in + fan_out))``, zero biases."""
    dims = [int(d) for d in dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ConfigurationError(f"invalid layer dims {dims}")
    if len(activations) != len(dims) - 1:
        raise ConfigurationError(f"{len(dims) - 1} layers but {len(activations)} activations")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(weights, biases, activations)


def forward(net: Mlp, batch):
    """Evaluate ``net`` on a ``(n, n_inputs)`` batch; returns ``(outputs, cache)``."""
    a = np.asarray(batch, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != net.n_inputs:
        raise ConfigurationError(f"batch of shape {a.shape} does not fit a net with {net.n_inputs} inputs")
    inputs, pre = [a], []
    for w, b, act in zip(net.weights, net.biases, net.activations):
        z = a @ w.T + b
        a = _activate(act, z)
        pre.append(z)
        inputs.append(a)
    return a, ForwardCache(inputs, pre)


def backward(net: Mlp, cache: ForwardCache, output_grad, *, through_output_activation=True):
    """Reverse pass.

    Parameters
    ----------
    output_grad : ndarray, shape (n, n_outputs)
        dLoss/d(outputs).  With ``through_output_activation=False`` it is
        interpreted as dLoss/d(last pre-activation) instead, which is how the
        classifier feeds the well-conditioned ``sigmoid + BCE`` gradient
        ``y - t`` without dividing by ``y (1 - y)``.

    Returns
    -------
    grads : ParamGrads
    input_grad : ndarray, shape (n, n_inputs)
    """
    if cache is None or not cache.pre_activations:
        raise UsageError("backward() needs the cache returned by forward()")
    if len(cache.pre_activations) != len(net.weights):
        raise UsageError("cache was produced by a different network")
    delta = np.asarray(output_grad, dtype=np.float64)
    if delta.shape != cache.outputs.shape:
        raise UsageError(f"output_grad shape {delta.shape} != outputs shape {cache.outputs.shape}")

    n_layers = len(net.weights)
    gw: List[np.ndarray] = [None] * n_layers
    gb: List[np.ndarray] = [None] * n_layers
    for i in reversed(range(n_layers)):
        if i < n_layers - 1 or through_output_activation:
            delta = _activation_grad(net.activations[i], cache.pre_activations[i], cache.inputs[i + 1], delta)
        gw[i] = delta.T @ cache.inputs[i]
        gb[i] = delta.sum(axis=0)
        delta = delta @ net.weights[i]
    return ParamGrads(gw, gb), delta


def _check_grads(net, grads):
    if len(grads.weights) != len(net.weights):
        raise UsageError("gradient structure does not match the network")
    for w, g, b, gbias in zip(net.weights, grads.weights, net.biases, grads.biases):
        if g.shape != w.shape or gbias.shape != b.shape:
            raise UsageError("gradient shapes do not match parameter shapes")
    if not grads.is_finite():
        bad = [i for i, (g, gbias) in enumerate(zip(grads.weights, grads.biases))
               if not (np.isfinite(g).all() and np.isfinite(gbias).all())]
        raise TrainingError("non-finite gradient", layers=bad)


def sgd_step(net: Mlp, grads: ParamGrads, lr: float) -> Mlp:
    _check_grads(net, grads)
    return Mlp(
        [w - lr * g for w, g in zip(net.weights, grads.weights)],
        [b - lr * g for b, g in zip(net.biases, grads.biases)],
        net.activations,
    )


def momentum_sgd_step(net: Mlp, grads: ParamGrads, lr: float, momentum: float, velocity=None):
    """Heavy-ball SGD: ``v <- momentum * v + g``, ``theta <- theta - lr * v``.

    ``velocity`` is ``None`` on the first call; returns ``(net, velocity)``.
    With ``momentum == 0`` this is exactly :func:`sgd_step`.
    """
    _check_grads(net, grads)
    if velocity is None:
        velocity = ParamGrads([np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases])
    v = ParamGrads([momentum * vw + gw for vw, gw in zip(velocity.weights, grads.weights)],
                   [momentum * vb + gb for vb, gb in zip(velocity.biases, grads.biases)])
    return sgd_step(net, v, lr), v


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)


def adam_init(net: Mlp, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    shapes = [p.shape for pair in zip(net.weights, net.biases) for p in pair]
    return AdamState(lr, beta1, beta2, eps, 0, [np.zeros(s) for s in shapes], [np.zeros(s) for s in shapes])


def adam_step(net: Mlp, grads: ParamGrads, state: AdamState):
    """Bias-corrected Adam update; returns a new ``(net, state)`` pair."""
    _check_grads(net, grads)
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    params = [p for pair in zip(net.weights, net.biases) for p in pair]
    flat_grads = [g for pair in zip(grads.weights, grads.biases) for g in pair]
    if len(state.m) != len(params) or any(m.shape != p.shape for m, p in zip(state.m, params)):
        raise UsageError("Adam state does not match the network")
    new_m, new_v, new_p = [], [], []
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, flat_grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_p.append(p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    new_net = Mlp(new_p[0::2], new_p[1::2], net.activations)
    return new_net, AdamState(state.lr, b1, b2, state.eps, t, new_m, new_v)


def accumulate_grads(grad_list: Sequence[ParamGrads]) -> ParamGrads:
    """Elementwise mean of a non-empty list of gradients."""
    if not grad_list:
        raise UsageError("cannot average an empty gradient list")
    first = grad_list[0]
    k = len(grad_list)
    ws = [np.array(w, copy=True) for w in first.weights]
    bs = [np.array(b, copy=True) for b in first.biases]
    for g in grad_list[1:]:
        if len(g.weights) != len(ws):
            raise UsageError("gradients have different structure")
        for acc, w in zip(ws, g.weights):
            if acc.shape != w.shape:
                raise UsageError("gradient shapes differ")
            acc += w
        for acc, b in zip(bs, g.biases):
            acc += b
    return ParamGrads([w / k for w in ws], [b / k for b in bs])


def config_hash(config) -> str:
    """Stable short hash of a JSON-serialisable config mapping."""
    blob = json.dumps(config, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(path, net: Mlp, *, config=None, extra=None):
    """Write ``net`` as a JSON checkpoint.

    Field order of ``params``: for each layer in order, the weight matrix
    row-major (``fan_out`` rows of ``fan_in`` values) followed by the bias.
    Floats are written with ``repr`` so a load reproduces them bitwise.
    """
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layer_dims": net.layer_dims,
        "activations": list(net.activations),
        "param_order": "per-layer: W (fan_out x fan_in, row-major), then b",
        "params": [float(x) for x in net.flat_params()],
        "config_hash": config_hash(config) if config is not None else None,
        "config": config,
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(net, document)``."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetFormatError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise DatasetFormatError(f"{path} is not an infoshape checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise DatasetFormatError(f"unsupported checkpoint version {doc.get('version')}")
    dims, acts = doc["layer_dims"], doc["activations"]
    params = np.asarray(doc["params"], dtype=np.float64)
    expected = sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
    if params.size != expected or len(acts) != len(dims) - 1:
        raise DatasetFormatError(f"checkpoint {path}: parameter count does not match layer_dims")
    skeleton = Mlp([np.zeros((b, a)) for a, b in zip(dims[:-1], dims[1:])],
                   [np.zeros(b) for b in dims[1:]], acts)
    return skeleton.with_flat_params(params), doc
