"""Desk-scale multitask transformer encoder with early exiting and SMART regularization."""
from exitbert.kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
