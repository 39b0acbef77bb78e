"""Adversarial robustness evaluation and hardening for tabular binary classifiers."""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
