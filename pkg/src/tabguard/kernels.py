"""Backend selection for the hot loops.

The compiled extension ``tabguard._ckernels`` is used when it was built;
otherwise the numpy fallback in ``tabguard._pykernels`` is used. Set
``TABGUARD_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _pykernels as python_backend

try:
    if os.environ.get("TABGUARD_PURE_PYTHON") == "1":
        raise ImportError("forced pure-python backend")
    from . import _ckernels as compiled_backend
except ImportError:
    compiled_backend = None

_impl = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "cython" if compiled_backend is not None else "python"

portfolio_losses = _impl.portfolio_losses
auc_counts = _impl.auc_counts
ks_gap = _impl.ks_gap
bin_stats = _impl.bin_stats
wasserstein_sorted = _impl.wasserstein_sorted

__all__ = [
    "BACKEND",
    "python_backend",
    "compiled_backend",
    "portfolio_losses",
    "auc_counts",
    "ks_gap",
    "bin_stats",
    "wasserstein_sorted",
]
