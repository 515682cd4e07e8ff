import numpy as np
import pytest

from infoshape import nn
from infoshape.rng import substream


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: multi-minute training runs (acceptance criteria 5-8)")


@pytest.fixture
def rng():
    return substream(1234, "tests")


def random_net(rng, dims, activations, bias_scale=0.5):
    net = nn.init_weights(dims, activations, rng)
    biases = [rng.uniform(-bias_scale, bias_scale, size=b.shape) for b in net.biases]
    return nn.Mlp(net.weights, biases, net.activations)


def central_difference(f, x, h=1e-4):
    """Central finite differences of scalar ``f`` at flat vector ``x``."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        grad[i] = (f(xp) - f(xm)) / (2 * h)
    return grad


def max_relative_error(a, b, floor=1e-6):
    a, b = np.ravel(a), np.ravel(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


# criterion id -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE_RESULTS = {}


def record_criterion(cid, title, passed, detail):
    ACCEPTANCE_RESULTS[cid] = (title, bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE_RESULTS):
        title, passed, detail = ACCEPTANCE_RESULTS[cid]
        terminalreporter.write_line(f"criterion {cid} [{'PASS' if passed else 'FAIL'}] {title}: {detail}")
