from itertools import combinations
from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tabguard import explain, nn
from tabguard.errors import MetricError, ParameterError
from tabguard.seeding import derive_seed


class LinearProb:
    def __init__(self, w, b=0.1):
        self.w, self.b = np.asarray(w, dtype=float), b

    def predict_proba(self, X):
        return np.asarray(X) @ self.w + self.b


def exact_shapley(f, x, background):
    """Brute-force Shapley values of the interventional game v(S) = E_bg f(x_S, bg_rest)."""
    d = x.size

    def v(S):
        Z = background.copy()
        Z[:, list(S)] = x[list(S)]
        return f(Z).mean()

    phi = np.zeros(d)
    for j in range(d):
        rest = [k for k in range(d) if k != j]
        for r in range(d):
            for S in combinations(rest, r):
                wgt = factorial(r) * factorial(d - r - 1) / factorial(d)
                phi[j] += wgt * (v(S + (j,)) - v(S))
    return phi


@pytest.fixture
def bg():
    return np.random.default_rng(0).normal(size=(40, 6))


def test_linear_closed_form_and_dummy(bg):
    w = np.array([0.5, -0.3, 0.0, 0.2, 0.0, 0.1])
    m = LinearProb(w)
    rng = np.random.default_rng(1)
    for _ in range(10):
        x = rng.normal(size=6)
        a = explain.kernel_shap(m, x, bg, n_coalitions=256, seed=2)
        assert np.allclose(a.values, w * (x - bg.mean(axis=0)), atol=1e-2)
        assert abs(a.values[2]) < 1e-3 and abs(a.values[4]) < 1e-3
        assert a.efficiency_gap < 1e-3


def test_matches_exact_shapley_on_nonlinear_model(bg):
    p = nn.MlpParams.init(6, (8, 4), np.random.default_rng(3))
    x = np.random.default_rng(4).normal(size=6)
    a = explain.kernel_shap(p, x, bg, n_coalitions=2048, seed=5)
    assert np.allclose(a.values, exact_shapley(p.predict_proba, x, bg), atol=1e-3)


def test_efficiency_and_determinism_on_mlp(bg):
    p = nn.MlpParams.init(6, (16, 8), np.random.default_rng(6))
    rng = np.random.default_rng(7)
    for _ in range(10):
        x = rng.normal(size=6)
        a = explain.kernel_shap(p, x, bg, n_coalitions=128, seed=8)
        assert a.efficiency_gap < 1e-3
        b = explain.kernel_shap(p, x, bg, n_coalitions=128, seed=8)
        assert np.array_equal(a.values, b.values)


def test_groups_act_as_single_players(bg):
    w = np.array([0.5, -0.3, 0.4, 0.2, 0.0, 0.1])
    x = np.random.default_rng(9).normal(size=6)
    groups = [("a", [0]), ("block", [1, 2, 3]), ("b", [4]), ("c", [5])]
    a = explain.kernel_shap(LinearProb(w), x, bg, n_coalitions=64, seed=0, groups=groups)
    lin = w * (x - bg.mean(axis=0))
    assert a.feature_names == ["a", "block", "b", "c"]
    assert a.values[1] == pytest.approx(lin[1:4].sum(), abs=1e-9)


def test_parameter_checks(bg):
    m = LinearProb(np.ones(6))
    with pytest.raises(ParameterError):
        explain.kernel_shap(m, np.zeros(6), bg[:5])
    with pytest.raises(ParameterError):
        explain.kernel_shap(m, np.zeros(6), bg, n_coalitions=10)
    with pytest.raises(ParameterError):
        explain.kernel_shap(m, np.zeros(5), bg)


def test_similarity_examples():
    assert explain.cosine_sim([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
    assert explain.cosine_sim([1, 0], [0, 1]) == 0.0
    assert explain.cosine_sim([1, 2, 3], [3, 2, 1]) == pytest.approx(10 / 14)
    assert explain.cosine_sim([0, 0], [0, 0]) == 1.0
    assert explain.cosine_sim([0, 0], [1, 0]) == 0.0
    assert explain.spearman([1, 2, 3, 4], [5, 6, 7, 8]) == 1.0
    assert explain.spearman([1, 2, 3, 4], [4, 3, 2, 1]) == -1.0
    assert explain.spearman([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8)
    with pytest.raises(MetricError):
        explain.spearman([1, 1, 1], [1, 2, 3])
    assert explain.l2_dist([0, 0], [3, 4]) == 5.0
    a, b = np.random.default_rng(1).normal(size=(2, 9))
    assert explain.l2_dist(a, b) == pytest.approx(np.sqrt(sum((a[i] - b[i]) ** 2 for i in range(9))), abs=1e-12)


def test_spearman_ties_match_pearson_on_ranks():
    a, b = [1, 2, 2, 3, 5], [2, 1, 4, 4, 3]
    ra, rb = explain.average_ranks(a), explain.average_ranks(b)
    assert list(ra) == [1, 2.5, 2.5, 4, 5]
    assert explain.spearman(a, b) == pytest.approx(np.corrcoef(ra, rb)[0, 1], abs=1e-12)


vec = arrays(np.float64, 6, elements=st.floats(-5, 5).map(lambda v: round(v, 3)))


@settings(max_examples=100, deadline=None)
@given(vec, vec)
def test_metric_symmetry_and_ranges(a, b):
    assert explain.cosine_sim(a, b) == pytest.approx(explain.cosine_sim(b, a), abs=1e-15)
    assert -1 <= explain.cosine_sim(a, b) <= 1
    assert explain.l2_dist(a, b) == explain.l2_dist(b, a)
    if np.unique(a).size > 1 and np.unique(b).size > 1:
        r = explain.spearman(a, b)
        assert r == pytest.approx(explain.spearman(b, a), abs=1e-12)
        assert -1 - 1e-12 <= r <= 1 + 1e-12


def test_stability_identical_inputs(bg):
    p = nn.MlpParams.init(6, (8, 4), np.random.default_rng(2))
    X = np.random.default_rng(3).normal(size=(8, 6))
    st_ = explain.stability_report(p, X, X.copy(), bg, n_instances=8, n_coalitions=64)
    agg = st_.aggregate()
    assert agg["cosine"]["mean"] == pytest.approx(1.0, abs=1e-9)
    assert agg["l2"]["mean"] == pytest.approx(0.0, abs=1e-9)
    assert agg["n_instances"] == 8


def test_stability_linear_shift_closed_form(bg):
    w = np.array([0.5, -0.3, 0.0, 0.2, 0.4, 0.1])
    X = np.random.default_rng(4).normal(size=(6, 6))
    delta = 0.05 * np.sign(np.random.default_rng(5).normal(size=(6, 6)))
    stats = explain.stability_report(LinearProb(w), X, X + delta, bg, n_instances=6, n_coalitions=128)
    assert np.allclose(stats.l2, np.linalg.norm(w * delta, axis=1), atol=1e-2)


def test_stability_reuses_clean_seeds(bg):
    p = nn.MlpParams.init(6, (8, 4), np.random.default_rng(2))
    X = np.random.default_rng(3).normal(size=(3, 6))
    Xa = X + 0.1
    many = explain.stability_reports(p, X, {"a": Xa, "b": X}, bg, n_instances=3, seed=4, n_coalitions=64)
    one = explain.stability_report(p, X, Xa, bg, n_instances=3, seed=4, n_coalitions=64)
    assert np.array_equal(many["a"].cosine, one.cosine)
    stats, pairs = explain.stability_report(p, X, Xa, bg, 3, 4, 64, keep_attributions=True)
    ref = explain.kernel_shap(p, X[1], bg, 64, derive_seed(4, "shap_row", 1))
    assert np.array_equal(pairs[1][0].values, ref.values)
    with pytest.raises(ParameterError):
        explain.stability_report(p, X, Xa[:2], bg)


def test_attribution_csv(bg, tmp_path):
    p = nn.MlpParams.init(6, (8, 4), np.random.default_rng(2))
    X = np.random.default_rng(3).normal(size=(2, 6))
    _, pairs = explain.stability_report(p, X, X + 0.1, bg, 2, 0, 64, keep_attributions=True)
    explain.write_attributions_csv(tmp_path / "a.csv", pairs, row_ids=["r1", "r2"])
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == "row_id,feature,clean_shap,adv_shap"
    assert len(lines) == 1 + 2 * 6 and lines[1].startswith("r1,x0,")


def test_benchmark_pgd_moves_attributions_at_least_as_much(bench):
    from tabguard.attacks import AttackConfig, fgsm, pgd

    X, y = bench.prep.test
    X, y = X[:20], y[:20]
    bgd = bench.prep.train[0][np.random.default_rng(0).choice(len(bench.prep.train[0]), 50, replace=False)]
    cfg = AttackConfig()
    res = explain.stability_reports(
        bench.model,
        X,
        {"fgsm": fgsm(bench.model, X, y, cfg, bench.projector), "pgd": pgd(bench.model, X, y, cfg, bench.projector)},
        bgd,
        n_instances=20,
        n_coalitions=256,
        groups=bench.prep.pre.groups(),
    )
    assert res["pgd"].aggregate()["cosine"]["mean"] <= res["fgsm"].aggregate()["cosine"]["mean"] + 0.02
