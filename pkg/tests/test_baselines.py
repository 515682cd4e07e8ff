import numpy as np
import pytest

from infoshape import baselines
from infoshape.data import LabeledDataset, SyntheticSpec, generate_synthetic
from infoshape.exceptions import UsageError
from infoshape.rng import substream
from infoshape.trainer import encode


@pytest.fixture(scope="module")
def small():
    return generate_synthetic(SyntheticSpec(n_samples=400, seed=2))


def test_random_encoder_deterministic_and_shaped(small):
    a = baselines.random_encoder("synthetic", 7)
    b = baselines.random_encoder("synthetic", 7)
    assert a.net.equals(b.net)
    assert encode(a, small.features).shape == (400, 3)
    assert not a.net.equals(baselines.random_encoder("synthetic", 8).net)


def test_random_encoder_differs_from_other_parameters(small):
    from infoshape.trainer import make_encoder

    other = make_encoder("synthetic", substream(0, "something-else"))
    diff = np.abs(encode(baselines.random_encoder("synthetic", 0), small.features) - encode(other, small.features))
    assert diff.mean() > 0


def test_noise_vanishing_sigma(small):
    out = baselines.GaussianNoiseEncoder(sigma=1e-12, random_state=0).fit_transform(small.features)
    assert np.max(np.abs(out - small.features)) < 1e-9


def test_noise_statistics():
    X = np.zeros((10_000, 3))
    for sigma in (0.5, 2.0):
        noise = baselines.GaussianNoiseEncoder(sigma=sigma, random_state=1).fit_transform(X)
        assert np.all(np.abs(noise.std(axis=0) / sigma - 1) < 0.05)


def test_noise_per_sample_determinism(small):
    enc = baselines.GaussianNoiseEncoder(random_state=4).fit(small.features)
    full = enc.transform(small.features)
    tail = enc.transform(small.features[100:], offset=100)
    assert np.array_equal(full[100:], tail)
    assert full.shape[1] == 10


@pytest.mark.parametrize("sigma", [0.0, -1.0])
def test_noise_rejects_nonpositive_sigma(small, sigma):
    with pytest.raises(UsageError):
        baselines.GaussianNoiseEncoder(sigma=sigma).fit(small.features)


def test_identity(small):
    enc = baselines.IdentityEncoder().fit(small.features)
    once = enc.transform(small.features)
    assert once.tobytes() == small.features.tobytes()
    assert enc.transform(once).tobytes() == once.tobytes()


def test_apply_baseline_provenance(small):
    tags = {v: baselines.apply_baseline(small, v, seed=0).provenance for v in ("identity", "noise", "random")}
    assert tags == {"identity": "original", "noise": "baseline-noise", "random": "baseline-random"}
    rnd = baselines.apply_baseline(small, "random", seed=0)
    assert rnd.n_features == 3
    assert np.array_equal(rnd.public_labels, small.public_labels)
    with pytest.raises(UsageError):
        baselines.apply_baseline(small, "blur")


def test_random_preset_guess_for_mnist_width():
    ds = LabeledDataset(np.zeros((3, 784)), [0, 1, 0], [1, 0, 1])
    assert baselines.apply_baseline(ds, "random", seed=0).n_features == 10
