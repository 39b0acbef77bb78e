import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabguard import driftfair as df
from tabguard.errors import DataError, MetricError

samples = st.lists(st.floats(-100, 100).map(lambda v: round(v, 3)), min_size=1, max_size=40)


def ks_scan(a, b):
    pts = np.concatenate([a, b])
    return max(abs(np.mean(a <= t) - np.mean(b <= t)) for t in pts)


def w1_integral(a, b):
    pts = np.unique(np.concatenate([a, b]))
    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        total += abs(np.mean(a <= lo) - np.mean(b <= lo)) * (hi - lo)
    return total


def test_psi_examples():
    a = np.random.default_rng(0).normal(size=500)
    assert abs(df.psi(a, a)) <= 1e-12
    oracle = (0.5 - 0.9) * math.log(0.5 / 0.9) + (0.5 - 0.1) * math.log(0.5 / 0.1)
    assert df.psi_from_proportions([0.5, 0.5], [0.9, 0.1]) == pytest.approx(oracle, abs=1e-12)
    assert oracle == pytest.approx(0.8789, abs=1e-4)
    b = a + 0.5
    edges = df.quantile_edges(a)
    assert df.psi(a, b, edges=edges) == pytest.approx(df.psi(b, a, edges=edges), abs=1e-12)
    assert df.psi(a, b) > 0.1
    with pytest.raises(DataError):
        df.psi([], a)


def test_psi_degrades_on_few_distinct_values():
    a = np.array([0.0] * 50 + [1.0] * 50)
    assert len(df.quantile_edges(a)) < 9
    assert abs(df.psi(a, a)) <= 1e-12
    assert df.psi(a, np.ones(100)) > 0


def test_ks_examples():
    a = np.random.default_rng(1).normal(size=15)
    assert df.ks_distance(a, a) == 0.0
    assert df.ks_distance([0.0, 1.0], [5.0, 6.0, 7.0]) == 1.0
    b = np.random.default_rng(2).normal(0.3, 1, size=15)
    assert df.ks_distance(a, b) == pytest.approx(ks_scan(a, b), abs=1e-15)
    with pytest.raises(DataError):
        df.ks_distance(a, [])


def test_wasserstein_examples():
    a = np.random.default_rng(3).normal(size=100)
    assert df.wasserstein1(a, a + 2.5) == pytest.approx(2.5, abs=1e-12)
    assert df.wasserstein1(a, a) == 0.0
    assert df.wasserstein1([0.0, 1.0], [0.0, 0.0, 3.0]) == pytest.approx(5 / 6, abs=1e-15)
    assert w1_integral(np.array([0.0, 1.0]), np.array([0.0, 0.0, 3.0])) == pytest.approx(5 / 6)


@settings(max_examples=100, deadline=None)
@given(samples, samples)
def test_ks_and_w1_match_oracles(a, b):
    a, b = np.array(a), np.array(b)
    assert df.ks_distance(a, b) == pytest.approx(ks_scan(a, b), abs=1e-12)
    assert df.wasserstein1(a, b) == pytest.approx(w1_integral(a, b), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(samples, samples, samples)
def test_w1_triangle_inequality(a, b, c):
    assert df.wasserstein1(a, c) <= df.wasserstein1(a, b) + df.wasserstein1(b, c) + 1e-10


@settings(max_examples=100, deadline=None)
@given(samples, samples)
def test_ks_invariant_under_increasing_transform(a, b):
    a, b = np.array(a), np.array(b)
    f = lambda x: np.arctan(x / 10) ** 3 + x
    assert df.ks_distance(f(a), f(b)) == pytest.approx(df.ks_distance(a, b), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(samples)
def test_identity_gives_zero_drift(a):
    assert abs(df.psi(a, a)) <= 1e-12
    assert df.ks_distance(a, a) == 0.0
    assert df.wasserstein1(a, a) == 0.0


def test_drift_report_shape():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(200, 2))
    s = rng.uniform(size=200)
    rep = df.drift_report(X, X + 0.1, ["f0", "f1"], s, np.clip(s + 0.05, 0, 1))
    assert set(rep.feature_psi) == {"f0", "f1"}
    assert rep.feature_wasserstein["f0"] == pytest.approx(0.1)
    assert rep.score_psi >= 0 and rep.score_ks > 0
    assert len(rep.score_bin_edges) == 9


def test_demographic_parity_cases():
    assert df.demographic_parity_diff([0.9, 0.1, 0.9, 0.1], ["a", "a", "b", "b"]) == 0.0
    assert df.demographic_parity_diff([0.9, 0.9, 0.1, 0.1], ["a", "a", "b", "b"]) == 1.0
    scores = [0.7, 0.2, 0.6, 0.4, 0.9, 0.8, 0.1, 0.55]
    groups = ["m", "m", "m", "m", "f", "f", "f", "f"]
    # f: 0.9, 0.8, 0.55 flagged of 4 -> 0.75; m: 0.7, 0.6 of 4 -> 0.5
    assert df.demographic_parity_diff(scores, groups) == pytest.approx(0.75 - 0.5)
    with pytest.raises(MetricError):
        df.demographic_parity_diff(scores, groups, group_b="x")


def test_equal_opportunity_cases():
    labels = [1, 1, 0, 1, 1, 0]
    groups = ["a", "a", "a", "b", "b", "b"]
    assert df.equal_opportunity_diff([0.9, 0.9, 0.1, 0.9, 0.9, 0.1], labels, groups) == 0.0
    assert df.equal_opportunity_diff([0.9, 0.9, 0.1, 0.1, 0.1, 0.9], labels, groups) == 1.0
    assert df.equal_opportunity_diff([0.9, 0.1, 0.9, 0.9, 0.9, 0.1], labels, groups) == pytest.approx(-0.5)
    with pytest.raises(MetricError, match="'b'"):
        df.equal_opportunity_diff([0.9] * 4, [1, 1, 0, 0], ["a", "a", "b", "b"])


def test_fairness_report_groups():
    rng = np.random.default_rng(5)
    s, y = rng.uniform(size=90), rng.integers(0, 2, 90)
    two = df.fairness_report(s, y, ["x", "y"] * 45)
    assert two.demographic_parity_diff == pytest.approx(df.demographic_parity_diff(s, ["x", "y"] * 45))
    g3 = ["p"] * 50 + ["q"] * 25 + ["r"] * 15
    three = df.fairness_report(s, y, g3)
    assert three.reference_group == "p"
    assert set(three.pairwise) == {"q", "r"}
    assert -1 <= three.pairwise["q"]["demographic_parity_diff"] <= 1
