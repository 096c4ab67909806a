import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from curriculum3d.errors import UndefinedMetricError
from curriculum3d.metrics import accuracy, auroc, mean_std, roc_band, roc_curve, trapezoid_area


def brute_auroc(scores, labels):
    """Pairwise enumeration: wins + ties/2 over all (positive, negative) pairs."""
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def random_instance(rng):
    n = int(rng.integers(2, 51))
    labels = rng.random(n) < 0.5
    labels[0], labels[1] = True, False
    # coarse grid so ties occur
    scores = np.round(rng.random(n), int(rng.integers(1, 4)))
    return scores, labels


def test_auroc_examples():
    assert auroc([0.9, 0.8], [True, False]) == 1.0
    assert auroc([0.3] * 6, [True, False] * 3) == 0.5
    assert auroc([0.1, 0.4, 0.35, 0.8], [False, False, True, True]) == pytest.approx(0.75, abs=1e-15)


def test_auroc_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(100):
        s, y = random_instance(rng)
        assert abs(auroc(s, y) - brute_auroc(s, y)) <= 1e-12


def test_auroc_single_class():
    with pytest.raises(UndefinedMetricError):
        auroc([0.1, 0.2], [True, True])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_auroc_monotone_invariance(seed):
    rng = np.random.default_rng(seed)
    s, y = random_instance(rng)
    base = auroc(s, y)
    assert auroc(np.exp(3 * s) - 7, y) == pytest.approx(base, abs=1e-12)
    assert auroc(s ** 3, y) == pytest.approx(base, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_auroc_negation_complement(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 40))
    y = rng.random(n) < 0.5
    y[0], y[1] = True, False
    s = rng.permutation(n) / n  # tie-free
    assert auroc(s, y) + auroc(-s, y) == pytest.approx(1.0, abs=1e-12)


def test_accuracy_examples():
    assert accuracy([0.9, 0.1], [True, False]) == 1.0
    assert accuracy([0.1, 0.9], [True, False]) == 0.0
    assert accuracy([0.6, 0.4, 0.7], [True, True, False]) == pytest.approx(1 / 3)
    assert accuracy([0.5], [True]) == 1.0


def test_roc_perfect():
    pts = roc_curve([0.9, 0.1], [True, False])
    assert (0.0, 1.0) in [(f, t) for f, t, _ in pts]
    assert pts[0][:2] == (0.0, 0.0) and pts[-1][:2] == (1.0, 1.0)


def test_roc_all_ties():
    pts = roc_curve([0.4] * 4, [True, False, True, False])
    assert [(f, t) for f, t, _ in pts] == [(0.0, 0.0), (1.0, 1.0)]


def test_roc_area_matches_auroc():
    rng = np.random.default_rng(1)
    for _ in range(100):
        s, y = random_instance(rng)
        pts = roc_curve(s, y)
        fpr = [p[0] for p in pts]
        tpr = [p[1] for p in pts]
        assert fpr == sorted(fpr) and tpr == sorted(tpr)
        assert abs(trapezoid_area(pts) - auroc(s, y)) <= 1e-9


def test_roc_single_class():
    with pytest.raises(UndefinedMetricError):
        roc_curve([0.1, 0.3], [False, False])


def test_mean_std_population():
    m, s = mean_std([0.88, 0.90, 0.89, 0.89, 0.89])
    assert m == pytest.approx(0.89, abs=1e-12)
    assert s == pytest.approx(np.sqrt(2e-4 / 5), abs=1e-12)
    assert round(s, 4) == 0.0063


def test_roc_band():
    a = roc_curve([0.9, 0.1], [True, False])
    b = roc_curve([0.1, 0.9], [True, False])
    grid, mean, std = roc_band([a, b], np.array([0.5]))
    assert mean[0] == pytest.approx(0.5)
    assert std[0] == pytest.approx(0.5)
