"""Backend dispatch for the numeric kernels.

The PDF_BACKEND environment variable picks the implementation at import
time: 'numba' (require the jit backend), 'numpy' (force the pure-numpy
reference), or 'auto' (default: numba when importable, numpy otherwise).
Both implementations share one function list and the same float64-inside /
float32-out contract, so swapping backends changes timing, not results.
"""

from __future__ import annotations

import os

from ..types import ConfigError
from . import numpy_impl

_EXPORTS = [
    "mlp_tanh_tanh",
    "mlp_tanh_linear",
    "affine",
    "add_scaled",
    "softmax_rows",
    "normalized_entropy",
    "rows_argmax",
    "vote_dim_wise",
    "vote_action_wise",
    "record_loss_grads",
    "batch_loss_grads",
    "render_scene",
    "shift_image",
]

_requested = os.environ.get("PDF_BACKEND", "auto").strip().lower()
if _requested not in ("auto", "numba", "numpy"):
    raise ConfigError(
        f"PDF_BACKEND must be 'numba', 'numpy', or 'auto', got {_requested!r}"
    )

_impl = numpy_impl
if _requested in ("auto", "numba"):
    try:
        from . import numba_impl as _numba_impl
        _impl = _numba_impl
    except ImportError:
        if _requested == "numba":
            raise ConfigError(
                "PDF_BACKEND=numba but the numba backend failed to import"
            )

NAME = _impl.NAME

for _name in _EXPORTS:
    globals()[_name] = getattr(_impl, _name)

__all__ = ["NAME"] + _EXPORTS
