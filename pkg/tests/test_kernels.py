import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import tabguard
from tabguard import kernels

needs_ext = pytest.mark.skipif(kernels.compiled_backend is None, reason="compiled extension not built")
py = kernels.python_backend
cy = kernels.compiled_backend


def test_backend_flag_consistent():
    assert tabguard.BACKEND == kernels.BACKEND
    assert kernels.BACKEND in ("cython", "python")


@needs_ext
def test_portfolio_losses_bit_identical(rng):
    u = rng.random((300, 257))
    pd = rng.random(257) * 0.4
    w = rng.random(257) * 100
    assert np.array_equal(py.portfolio_losses(u, pd, w), cy.portfolio_losses(u, pd, w))


def test_portfolio_losses_oracle(rng):
    u = rng.random((50, 20))
    pd = rng.random(20)
    w = rng.random(20)
    expected = np.array([sum(w[i] for i in range(20) if u[s, i] < pd[i]) for s in range(50)])
    assert np.allclose(py.portfolio_losses(u, pd, w), expected, rtol=0, atol=1e-12)


@needs_ext
@settings(max_examples=80, deadline=None)
@given(
    st.lists(st.integers(0, 8), min_size=1, max_size=60),
    st.lists(st.integers(0, 1), min_size=60, max_size=60),
)
def test_auc_counts_agree(vals, labels):
    s = np.sort(np.array(vals, dtype=np.float64) / 8)
    y = np.array(labels[: s.size], dtype=np.uint8)
    assert tuple(py.auc_counts(s, y)) == tuple(cy.auc_counts(s, y))


@needs_ext
@settings(max_examples=80, deadline=None)
@given(
    st.lists(st.floats(-5, 5), min_size=1, max_size=80),
    st.lists(st.floats(-5, 5), min_size=1, max_size=80),
)
def test_distance_kernels_agree(a, b):
    a, b = np.sort(np.array(a)), np.sort(np.array(b))
    assert py.ks_gap(a, b) == cy.ks_gap(a, b)
    assert np.isclose(py.wasserstein_sorted(a, b), cy.wasserstein_sorted(a, b), rtol=1e-12, atol=1e-12)


@needs_ext
def test_bin_stats_agree(rng):
    s = np.concatenate((rng.random(500), np.linspace(0, 1, 11)))
    y = rng.integers(0, 2, s.size).astype(np.float64)
    edges = np.linspace(0, 1, 11)
    for a, b in zip(py.bin_stats(s, y, edges), cy.bin_stats(s, y, edges)):
        assert np.allclose(a, b, rtol=1e-13, atol=1e-13)
    assert np.array_equal(py.bin_stats(s, y, edges)[0], cy.bin_stats(s, y, edges)[0])


def test_forced_fallback(monkeypatch):
    import importlib

    monkeypatch.setenv("TABGUARD_PURE_PYTHON", "1")
    reloaded = importlib.reload(kernels)
    try:
        assert reloaded.BACKEND == "python"
        assert reloaded.auc_counts is py.auc_counts
    finally:
        monkeypatch.delenv("TABGUARD_PURE_PYTHON")
        importlib.reload(kernels)
