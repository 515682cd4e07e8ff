import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from infoshape import data
from infoshape.data import LabeledDataset, SyntheticSpec
from infoshape.exceptions import (
    DatasetFormatError,
    IdxCountMismatchError,
    IdxMagicError,
    IdxParseError,
    IdxTruncatedError,
    UsageError,
)
from infoshape.rng import substream


@pytest.fixture(scope="module")
def synthetic():
    return data.generate_synthetic(SyntheticSpec(seed=0))


class TestSynthetic:
    def test_shape(self, synthetic):
        assert synthetic.features.shape == (10_000, 10)
        assert synthetic.label_rule == "bitsplit"

    def test_deterministic(self, synthetic):
        again = data.generate_synthetic(SyntheticSpec(seed=0))
        assert again.features.tobytes() == synthetic.features.tobytes()
        assert np.array_equal(again.public_labels, synthetic.public_labels)

    def test_seed_changes_data(self, synthetic):
        other = data.generate_synthetic(SyntheticSpec(seed=1))
        assert not np.array_equal(other.features, synthetic.features)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_class_balance(self, seed):
        ds = data.generate_synthetic(SyntheticSpec(seed=seed))
        classes = ds.private_labels * 2 + ds.public_labels
        counts = np.bincount(classes, minlength=4)
        assert np.all(np.abs(counts - 2500) <= 150)
        assert abs(ds.public_labels.mean() - 0.5) <= 0.03
        assert abs(ds.private_labels.mean() - 0.5) <= 0.03

    def test_redundant_columns_are_linear_in_informative(self):
        ds = data.generate_synthetic(SyntheticSpec(seed=3, n_samples=800))
        X = ds.features
        order = ds.meta["feature_order"]
        # undo the column shuffle: original column j sits at position order.index(j)
        inv = np.argsort(order)
        X = X[:, inv]
        coef, *_ = np.linalg.lstsq(X[:, :3], X[:, 3:5], rcond=None)
        assert np.allclose(X[:, :3] @ coef, X[:, 3:5], atol=1e-10)
        # noise columns are not
        coef, *_ = np.linalg.lstsq(X[:, :3], X[:, 5:], rcond=None)
        assert not np.allclose(X[:, :3] @ coef, X[:, 5:], atol=1e-3)

    def test_clusters_on_distinct_vertices(self):
        spec = SyntheticSpec(seed=4, same_class_fraction=1.0)
        ds = data.generate_synthetic(spec)
        X = ds.features[:, np.argsort(ds.meta["feature_order"])][:, :3]
        classes = ds.private_labels * 2 + ds.public_labels
        # mixing is zero-mean, so each class mean is the average of its two vertices
        for c in range(4):
            m = X[classes == c].mean(axis=0)
            assert np.all(np.abs(np.abs(m) - np.round(np.abs(m))) < 0.15)

    @pytest.mark.parametrize("bad", [
        dict(n_noise=4),
        dict(clusters_per_class=3),
        dict(n_classes=3, clusters_per_class=1),
        dict(same_class_fraction=1.5),
        dict(n_samples=4),
    ])
    def test_invalid_spec(self, bad):
        with pytest.raises(UsageError):
            data.generate_synthetic(SyntheticSpec(**bad))


class TestLabels:
    def test_digit_seven(self):
        pub, pri = data.derive_labels([7], "parity-magnitude")
        assert (pub[0], pri[0]) == (1, 1)

    def test_digit_four(self):
        pub, pri = data.derive_labels([4], "parity-magnitude")
        assert (pub[0], pri[0]) == (0, 0)

    def test_class_two(self):
        pub, pri = data.derive_labels([2], "bitsplit")
        assert (pub[0], pri[0]) == (0, 1)

    def test_all_digits(self):
        pub, pri = data.derive_labels(np.arange(10), "parity-magnitude")
        assert pub.tolist() == [0, 1, 0, 1, 0, 1, 0, 1, 0, 1]
        assert pri.tolist() == [0, 0, 0, 0, 0, 1, 1, 1, 1, 1]

    @pytest.mark.parametrize("raw,rule", [([4], "bitsplit"), ([-1], "bitsplit"), ([10], "parity"), ([1], "nope"),
                                          ([1.5], "bitsplit")])
    def test_out_of_range(self, raw, rule):
        with pytest.raises(UsageError):
            data.derive_labels(raw, rule)

    @given(st.lists(st.integers(0, 3), min_size=1, max_size=50))
    def test_bitsplit_reconstructs_class(self, classes):
        pub, pri = data.derive_labels(classes, "bitsplit")
        assert (2 * pri + pub).tolist() == classes


def idx_bytes(magic, dims, payload):
    return struct.pack(">i", magic) + struct.pack(f">{len(dims)}I", *dims) + bytes(payload)


@pytest.fixture
def two_image_fixture(tmp_path):
    # two 2x2 images and their digit labels, written byte by byte
    img = idx_bytes(2051, (2, 2, 2), [0, 255, 51, 102, 255, 0, 0, 153])
    lab = idx_bytes(2049, (2,), [3, 8])
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    ip.write_bytes(img)
    lp.write_bytes(lab)
    return ip, lp


class TestIdx:
    def test_hand_fixture(self, two_image_fixture):
        X, digits = data.load_mnist_idx(*two_image_fixture)
        assert X.tolist() == [[0.0, 1.0, 0.2, 0.4], [1.0, 0.0, 0.0, 0.6]]
        assert digits.tolist() == [3, 8]

    def test_gzip_transparent(self, tmp_path, two_image_fixture):
        ip, lp = two_image_fixture
        gz = tmp_path / "img.idx.gz"
        gz.write_bytes(gzip.compress(ip.read_bytes()))
        X, _ = data.load_mnist_idx(gz, lp)
        assert X.shape == (2, 4)

    def test_write_round_trip(self, tmp_path):
        rng = substream(0, "idx")
        imgs = rng.integers(0, 256, size=(5, 28, 28), dtype=np.uint8)
        labs = rng.integers(0, 10, size=5, dtype=np.uint8)
        data.write_idx(tmp_path / "i.gz", imgs)
        data.write_idx(tmp_path / "l", labs)
        X, digits = data.load_mnist_idx(tmp_path / "i.gz", tmp_path / "l")
        assert X.shape == (5, 784)
        assert np.array_equal(np.round(X * 255).astype(np.uint8), imgs.reshape(5, -1))
        assert np.array_equal(digits, labs)
        assert X.min() >= 0.0 and X.max() <= 1.0

    def test_bad_magic(self, tmp_path, two_image_fixture):
        ip, lp = two_image_fixture
        bad = tmp_path / "bad"
        bad.write_bytes(idx_bytes(2049, (2, 2, 2), [0] * 8))
        with pytest.raises(IdxMagicError):
            data.load_mnist_idx(bad, lp)
        with pytest.raises(IdxMagicError):
            data.load_mnist_idx(ip, ip)

    def test_truncated(self, tmp_path, two_image_fixture):
        ip, lp = two_image_fixture
        cut = tmp_path / "cut"
        cut.write_bytes(ip.read_bytes()[:-1])
        with pytest.raises(IdxTruncatedError):
            data.load_mnist_idx(cut, lp)
        cut.write_bytes(b"\x00\x00")
        with pytest.raises(IdxTruncatedError):
            data.load_mnist_idx(cut, lp)

    def test_count_mismatch(self, tmp_path, two_image_fixture):
        ip, _ = two_image_fixture
        lab = tmp_path / "lab3"
        lab.write_bytes(idx_bytes(2049, (3,), [1, 2, 3]))
        with pytest.raises(IdxCountMismatchError):
            data.load_mnist_idx(ip, lab)

    def test_trailing_bytes(self, tmp_path, two_image_fixture):
        ip, lp = two_image_fixture
        long = tmp_path / "long"
        long.write_bytes(ip.read_bytes() + b"\x00")
        with pytest.raises(IdxParseError):
            data.load_mnist_idx(long, lp)

    @settings(max_examples=40, deadline=None)
    @given(pos=st.integers(0, 11), value=st.integers(0, 255))
    def test_any_header_perturbation_rejected(self, tmp_path_factory, pos, value):
        d = tmp_path_factory.mktemp("perturb")
        img = bytearray(idx_bytes(2051, (2, 2, 2), [0, 255, 51, 102, 255, 0, 0, 153]))
        lab = idx_bytes(2049, (2,), [3, 8])
        if img[pos] == value:
            return
        img[pos] = value
        (d / "i").write_bytes(bytes(img))
        (d / "l").write_bytes(lab)
        # bytes 0-3 are magic/rank, 4-7 the count, 8-15 rows/cols; every change must be caught
        with pytest.raises(IdxParseError):
            data.load_mnist_idx(d / "i", d / "l")

    def test_mnist_dataset_labels_and_subset(self, tmp_path):
        imgs = np.zeros((10, 2, 2), dtype=np.uint8)
        data.write_idx(tmp_path / "i", imgs)
        data.write_idx(tmp_path / "l", np.arange(10, dtype=np.uint8))
        ds = data.mnist_dataset(tmp_path / "i", tmp_path / "l")
        assert ds.public_labels.tolist() == [0, 1] * 5
        assert ds.label_rule == "parity-magnitude"
        sub = data.mnist_dataset(tmp_path / "i", tmp_path / "l", subset=4, rng=substream(0, "sub"))
        assert len(sub) == 4
        with pytest.raises(UsageError):
            data.mnist_dataset(tmp_path / "i", tmp_path / "l", subset=4)


class TestSplit:
    def test_sizes_and_partition(self, synthetic):
        train, val = data.split(synthetic, 0.2, substream(0, "split"))
        assert (len(train), len(val)) == (8000, 2000)
        rows = np.vstack([train.features, val.features])
        assert np.unique(rows, axis=0).shape[0] == 10_000

    def test_strata_preserved(self, synthetic):
        _, val = data.split(synthetic, 0.2, substream(1, "split"))
        full = np.bincount(synthetic.public_labels * 2 + synthetic.private_labels, minlength=4)
        got = np.bincount(val.public_labels * 2 + val.private_labels, minlength=4)
        assert np.all(np.abs(got - 0.2 * full) <= 1)

    def test_fallback_warns(self, caplog):
        ds = LabeledDataset(np.arange(10.0)[:, None], [0] * 9 + [1], [0] * 10)
        with caplog.at_level("WARNING"):
            train, val = data.split(ds, 0.3, substream(0, "s"))
        assert "unstratified" in caplog.text
        assert len(train) + len(val) == 10

    @pytest.mark.parametrize("frac", [0.0, 1.0, -0.2])
    def test_bad_fraction(self, synthetic, frac):
        with pytest.raises(UsageError):
            data.split(synthetic, frac, substream(0, "s"))

    @settings(max_examples=25, deadline=None)
    @given(n=st.integers(8, 120), frac=st.floats(0.05, 0.95), seed=st.integers(0, 1000))
    def test_partition_property(self, n, frac, seed):
        rng = substream(seed, "prop")
        ds = LabeledDataset(np.arange(float(n))[:, None], rng.integers(0, 2, n), rng.integers(0, 2, n))
        train, val = data.split(ds, frac, substream(seed, "split"))
        ids = np.concatenate([train.features[:, 0], val.features[:, 0]])
        assert sorted(ids.tolist()) == list(range(n))


class TestFileFormat:
    def test_round_trip_bitwise(self, tmp_path, synthetic):
        ds = synthetic.subset(np.arange(300)).with_features(synthetic.features[:300] * np.pi, "encoded", step=3)
        path = tmp_path / "ds.isd"
        data.save_dataset(path, ds)
        back = data.load_dataset(path)
        assert back.features.tobytes() == ds.features.tobytes()
        assert np.array_equal(back.targets, ds.targets)
        assert back.provenance == "encoded"
        assert back.label_rule == "bitsplit"
        assert back.meta["step"] == 3

    def test_no_label_rule(self, tmp_path):
        ds = LabeledDataset(np.zeros((2, 1)), [0, 1], [1, 0], "designer")
        data.save_dataset(tmp_path / "x", ds)
        assert data.load_dataset(tmp_path / "x").label_rule is None

    @pytest.mark.parametrize("mutate", [
        lambda t: t.replace("INFOSHAPE-DATASET 1", "INFOSHAPE-DATASET 2"),
        lambda t: t.replace("INFOSHAPE-DATASET", "SOMETHING-ELSE"),
        lambda t: t.replace("n_features 3", "n_features 4"),
        lambda t: t.replace("n_samples 4", "n_samples 5"),
        lambda t: t.replace("n_samples 4", "n_samples four"),
        lambda t: t.replace("meta {", "meta {{"),
        lambda t: t.replace("provenance original", "provenance stolen"),
        lambda t: t[: t.rindex("\n", 0, -1)],
        lambda t: t[:40],
        lambda t: t.replace(",1,0\n", ",7,0\n", 1),
        lambda t: t.replace("0.5", "abc", 1),
    ])
    def test_corruption_is_structured(self, tmp_path, mutate):
        ds = LabeledDataset(np.full((4, 3), 0.5), [1, 0, 1, 0], [0, 0, 1, 1])
        path = tmp_path / "c.isd"
        data.save_dataset(path, ds)
        path.write_text(mutate(path.read_text()))
        with pytest.raises(DatasetFormatError):
            data.load_dataset(path)

    def test_byte_flip_fixture(self, tmp_path):
        ds = LabeledDataset(np.ones((3, 2)), [1, 0, 1], [0, 1, 1])
        path = tmp_path / "f.isd"
        data.save_dataset(path, ds)
        raw = bytearray(path.read_bytes())
        raw[0] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(DatasetFormatError):
            data.load_dataset(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DatasetFormatError):
            data.load_dataset(tmp_path / "nope.isd")


class TestLabeledDataset:
    def test_validation(self):
        with pytest.raises(UsageError):
            LabeledDataset(np.zeros((2, 1)), [0, 2], [0, 1])
        with pytest.raises(UsageError):
            LabeledDataset(np.zeros((2, 1)), [0], [0, 1])
        with pytest.raises(UsageError):
            LabeledDataset(np.array([[np.nan], [0.0]]), [0, 1], [0, 1])
        with pytest.raises(UsageError):
            LabeledDataset(np.zeros((2, 1)), [0, 1], [0, 1], provenance="unknown")

    def test_labels_accessor(self):
        ds = LabeledDataset(np.zeros((2, 1)), [0, 1], [1, 1])
        assert ds.labels("public").tolist() == [0, 1]
        assert ds.labels("private").tolist() == [1, 1]
        with pytest.raises(UsageError):
            ds.labels("secret")
