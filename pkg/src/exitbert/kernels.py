"""Row-kernel dispatch.

The compiled extension is used when it imports; otherwise the numpy version.
Set ``EXITBERT_KERNELS=python`` to force the fallback.
"""
import os

from exitbert import _pykernels

_impl = _pykernels
BACKEND = "python"

if os.environ.get("EXITBERT_KERNELS", "").lower() != "python":
    try:
        from exitbert import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

softmax_rows = _impl.softmax_rows
softmax_rows_backward = _impl.softmax_rows_backward
log_softmax_rows = _impl.log_softmax_rows
layer_norm_rows = _impl.layer_norm_rows
layer_norm_rows_backward = _impl.layer_norm_rows_backward
gelu = _impl.gelu
gelu_backward = _impl.gelu_backward

__all__ = [
    "BACKEND",
    "softmax_rows",
    "softmax_rows_backward",
    "log_softmax_rows",
    "layer_norm_rows",
    "layer_norm_rows_backward",
    "gelu",
    "gelu_backward",
]
