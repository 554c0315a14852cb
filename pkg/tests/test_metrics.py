import math

import numpy as np
import pytest

from lilnet.datasets import LabeledDataset
from lilnet.linalg import make_rng
from lilnet.metrics import (
    accuracy,
    distance_histograms,
    empirical_lipschitz,
    isometry_report,
    lipschitz_ratios,
    sample_same_class_pairs,
)


class ConstantNet:
    def __init__(self, cls):
        self.cls = cls

    def predict(self, X, level=0):
        return np.full(len(X), self.cls)


class OracleNet:
    def __init__(self, labels):
        self.labels = labels

    def predict(self, X, level=0):
        return self.labels


def two_class(rng, n=20, d=3):
    X = rng.normal(size=(n, d))
    y = np.repeat([0, 1], n // 2)
    return X, y


def test_accuracy_perfect_and_constant(rng):
    X, y = two_class(rng)
    ds = LabeledDataset(X, [y], "test")
    assert accuracy(OracleNet(y), ds) == 1.0
    assert accuracy(ConstantNet(0), ds) == 0.5


def test_accuracy_missing_level(rng):
    X, y = two_class(rng)
    with pytest.raises(ValueError):
        accuracy(ConstantNet(0), LabeledDataset(X, [y], "test"), level=1)


def random_rotation(rng, d):
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    return q * np.sign(np.diag(r))


def test_rigid_motion_report(rng):
    X, y = two_class(rng)
    phi = X @ random_rotation(rng, 3).T + 4.0
    for c in isometry_report(X, phi, y).classes:
        assert c.pearson_r == pytest.approx(1.0, abs=1e-12)
        assert c.mean_abs_residual == pytest.approx(0.0, abs=1e-12)
        assert c.empirical_k == pytest.approx(1.0, abs=1e-12)


def test_scaled_report(rng):
    X, y = two_class(rng)
    rep = isometry_report(X, 2 * X, y)
    for c in rep.classes:
        assert c.pearson_r == pytest.approx(1.0, abs=1e-12)
        assert c.mean_abs_residual == pytest.approx(c.input_dist.mean(), rel=1e-12)
        assert c.empirical_k == pytest.approx(2.0, rel=1e-12)


def test_constant_representation_warns(rng):
    X, y = two_class(rng)
    rep = isometry_report(X, np.zeros((20, 4)), y)
    assert all(math.isnan(c.pearson_r) for c in rep.classes)
    assert len(rep.warnings) == 2


def test_singleton_class_skipped(rng):
    X = rng.normal(size=(4, 2))
    rep = isometry_report(X, X, [0, 0, 0, 1])
    assert [c.label for c in rep.classes] == [0]
    assert any("class 1" in w for w in rep.warnings)


def test_report_permutation_invariant(rng):
    X = rng.normal(size=(300, 3))
    phi = np.tanh(X @ rng.normal(size=(3, 5)))
    y = rng.integers(0, 3, size=300)
    perm = rng.permutation(300)
    a = isometry_report(X, phi, y, max_pairs=2000).rows()
    b = isometry_report(X[perm], phi[perm], y[perm], max_pairs=2000).rows()
    assert a == b


def test_report_values_in_range(rng):
    X, y = two_class(rng, n=40)
    phi = np.tanh(X @ rng.normal(size=(3, 6)))
    for c in isometry_report(X, phi, y).classes:
        assert -1 <= c.pearson_r <= 1 and c.mean_abs_residual >= 0 and c.empirical_k >= 0


# histograms ----------------------------------------------------------------

def hist_oracle(values, lo, hi, n_bins):
    width = (hi - lo) / n_bins
    counts = [0] * n_bins
    for v in values:
        k = min(int((v - lo) / width), n_bins - 1)
        counts[k] += 1
    return counts


def _counts(rows, space):
    return [r["count"] for r in rows if r["space"] == space]


def test_identical_spaces_identical_histograms(rng):
    X, y = two_class(rng)
    rows = distance_histograms(X, X, y, 7)
    for c in (0, 1):
        cls = [r for r in rows if r["class"] == c]
        assert _counts(cls, "input") == _counts(cls, "repr")


def test_single_pair_one_bin():
    rows = distance_histograms(np.array([[0.0], [1.5]]), np.array([[0.0], [4.0]]), [0, 0], 1)
    assert _counts(rows, "input") == [1] and _counts(rows, "repr") == [1]


def test_three_point_bins():
    X = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    rows = distance_histograms(X, 2 * X, [0, 0, 0], 4)
    lo, hi = 1.0, 2 * math.sqrt(2)
    assert rows[0]["bin_lo"] == pytest.approx(lo) and rows[3]["bin_hi"] == pytest.approx(hi)
    # edges 1, 1.457, 1.914, 2.371, 2.828: sqrt(2) = 1.414 falls in the first bin
    assert hist_oracle([1, 1, math.sqrt(2)], lo, hi, 4) == [3, 0, 0, 0]
    assert hist_oracle([2, 2, 2 * math.sqrt(2)], lo, hi, 4) == [0, 0, 2, 1]
    assert _counts(rows, "input") == [3, 0, 0, 0]
    assert _counts(rows, "repr") == [0, 0, 2, 1]


def test_histogram_mass(rng):
    X = rng.normal(size=(30, 3))
    y = rng.integers(0, 3, size=30)
    rows = distance_histograms(X, np.tanh(X), y, 5)
    for c in np.unique(y):
        n = int((y == c).sum())
        for space in ("input", "repr"):
            assert sum(r["count"] for r in rows if r["class"] == c and r["space"] == space) == n * (n - 1) // 2


def test_histogram_bins_validated(rng):
    with pytest.raises(ValueError):
        distance_histograms(np.zeros((2, 1)), np.zeros((2, 1)), [0, 0], 0)


# Lipschitz ----------------------------------------------------------------

def test_identity_and_scaling(rng):
    X, y = two_class(rng, n=50)
    ds = LabeledDataset(X, [y], "train")
    assert empirical_lipschitz(lambda x: x, ds, 500, make_rng(0)) == pytest.approx(1.0, abs=1e-12)
    assert empirical_lipschitz(lambda x: 3 * x, ds, 500, make_rng(0)) == pytest.approx(3.0, abs=1e-12)


def test_lipschitz_needs_pairs():
    ds = LabeledDataset(np.zeros((3, 2)), [np.array([0, 1, 2])], "train")
    with pytest.raises(ValueError):
        empirical_lipschitz(lambda x: x, ds, 10, make_rng(0))
    with pytest.raises(ValueError):
        empirical_lipschitz(lambda x: x, ds, 0, make_rng(0))


def test_sampled_pairs_are_same_class(rng):
    y = rng.integers(0, 4, size=60)
    i, j = sample_same_class_pairs(y, 1000, make_rng(1))
    assert np.all(y[i] == y[j]) and np.all(i != j)


def test_submultiplicative(rng):
    X, y = two_class(rng, n=60)
    A, B = rng.normal(size=(5, 3)), rng.normal(size=(4, 5))
    g = lambda x: np.tanh(x @ A.T)
    f = lambda h: np.tanh(h @ B.T)
    i, j = sample_same_class_pairs(y, 800, make_rng(3))
    k_fg = lipschitz_ratios(lambda x: f(g(x)), X, i, j).max()
    k_g = lipschitz_ratios(g, X, i, j).max()
    k_f = lipschitz_ratios(f, g(X), i, j).max()
    assert k_fg <= k_f * k_g * (1 + 1e-12)
