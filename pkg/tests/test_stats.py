import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabguard import metrics
from tabguard.errors import MetricError, ParameterError, StatisticsError
from tabguard.stats import BootstrapCI, bootstrap_ci, ci_separated, paired_bootstrap_ci


def test_constant_metric_has_zero_width():
    ci = bootstrap_ci(np.mean, np.full(50, 3.25), B=200, seed=1)
    assert ci.lower == ci.upper == ci.point == 3.25


def test_seeded_determinism():
    x = np.random.default_rng(0).normal(size=300)
    assert bootstrap_ci(np.mean, x, B=300, seed=4) == bootstrap_ci(np.mean, x, B=300, seed=4)
    assert bootstrap_ci(np.mean, x, B=300, seed=4) != bootstrap_ci(np.mean, x, B=300, seed=5)


def test_bernoulli_mean_width_and_coverage():
    rng = np.random.default_rng(2024)
    hits, widths = 0, []
    for trial in range(200):
        x = rng.integers(0, 2, 1000).astype(float)
        ci = bootstrap_ci(np.mean, x, B=1000, seed=trial)
        widths.append(ci.width)
        hits += ci.lower <= 0.5 <= ci.upper
    assert hits >= 180
    assert 0.04 <= min(widths) and max(widths) <= 0.09


def test_width_shrinks_with_n():
    rng = np.random.default_rng(8)
    small = bootstrap_ci(np.mean, rng.integers(0, 2, 400).astype(float), B=500, seed=3)
    large = bootstrap_ci(np.mean, rng.integers(0, 2, 4000).astype(float), B=500, seed=3)
    assert large.width < small.width


def test_percentile_interval_matches_manual_replicates():
    x = np.random.default_rng(1).normal(size=40)
    ci = bootstrap_ci(np.median, x, B=100, level=0.9, seed=6)
    reps = [np.median(x[np.random.default_rng(c).integers(0, 40, 40)]) for c in np.random.SeedSequence(6).spawn(100)]
    assert ci.lower == pytest.approx(np.quantile(reps, 0.05), rel=1e-14)
    assert ci.upper == pytest.approx(np.quantile(reps, 0.95), rel=1e-14)


def test_undefined_replicates_are_discarded_and_counted():
    # one positive in 60 rows: AUROC is undefined whenever the resample misses it (~36%)
    y = np.zeros(60, dtype=int)
    y[0] = 1
    s = np.random.default_rng(0).uniform(size=60)
    auc = lambda sc, lab: metrics.auroc(sc, lab)
    with pytest.raises(StatisticsError):
        bootstrap_ci(auc, (s, y), B=200)
    y2 = (np.arange(60) % 3 == 0).astype(int)
    ci = bootstrap_ci(auc, (s, y2), B=200)
    assert ci.n_discarded == 0 and ci.lower <= ci.upper

    calls = {"n": 0}

    def flaky(v):
        calls["n"] += 1
        if calls["n"] % 20 == 0:
            raise MetricError("undefined")
        return float(np.mean(v))

    ci = bootstrap_ci(flaky, np.arange(30.0), B=200)
    assert 0 < ci.n_discarded <= 20


def test_parameter_errors():
    with pytest.raises(ParameterError):
        bootstrap_ci(np.mean, np.ones(10), B=99)
    with pytest.raises(ParameterError):
        bootstrap_ci(np.mean, np.ones(10), level=1.0)
    with pytest.raises(ParameterError):
        bootstrap_ci(np.mean, np.array([]))
    with pytest.raises(ParameterError):
        bootstrap_ci(lambda a, b: 0.0, (np.ones(3), np.ones(4)))


def test_paired_bootstrap_shares_rows():
    rng = np.random.default_rng(3)
    y = rng.integers(0, 2, 400)
    clean = y * 0.6 + rng.uniform(size=400) * 0.7
    adv = clean - 0.2 * y
    auc = lambda s, lab: metrics.auroc(s, lab)
    a, b, d = paired_bootstrap_ci(auc, (clean, y), (adv, y), B=300, seed=2)
    assert a == bootstrap_ci(auc, (clean, y), B=300, seed=2)
    assert d.point == pytest.approx(a.point - b.point)
    assert d.lower > 0
    with pytest.raises(ParameterError):
        paired_bootstrap_ci(auc, (clean, y), (adv[:10], y[:10]), B=100)


def test_ci_separated_cases():
    mk = lambda lo, hi, level=0.95: BootstrapCI(0.5 * (lo + hi), lo, hi, level)
    assert ci_separated(mk(0.1, 0.2), mk(0.3, 0.4))
    assert ci_separated(mk(0.3, 0.4), mk(0.1, 0.2))
    assert not ci_separated(mk(0.1, 0.3), mk(0.25, 0.4))
    assert not ci_separated(mk(0.1, 0.2), mk(0.2, 0.3))
    with pytest.raises(ParameterError):
        ci_separated(mk(0.1, 0.2), mk(0.3, 0.4, 0.9))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=60), st.integers(0, 2**31))
def test_interval_is_ordered(xs, seed):
    ci = bootstrap_ci(np.mean, np.array(xs), B=100, seed=seed)
    assert ci.lower <= ci.upper
