"""Convolution kernel backend selection.

The compiled extension is used when it imported successfully; otherwise the
NumPy fallback takes over with identical semantics. `MFCM_KERNELS=python`
forces the fallback, `MFCM_KERNELS=compiled` makes a missing extension an
import error instead of a silent downgrade.
"""

from __future__ import annotations

import logging
import os

from mfcmnet.kernels import _reference

_log = logging.getLogger(__name__)

_requested = os.environ.get("MFCM_KERNELS", "").strip().lower()
_compiled = None
if _requested not in ("python", "reference"):
    try:
        from mfcmnet.kernels import _convkernels as _compiled
    except ImportError as exc:
        if _requested == "compiled":
            raise ImportError("MFCM_KERNELS=compiled but the extension is not built") from exc
        _log.debug("compiled kernels unavailable, using NumPy fallback: %s", exc)

_impl = _compiled if _compiled is not None else _reference
ACTIVE_BACKEND = "compiled" if _compiled is not None else "python"

conv2d_forward = _impl.conv2d_forward
conv2d_input_grad = _impl.conv2d_input_grad
conv2d_weight_grad = _impl.conv2d_weight_grad


def available_backends() -> list[str]:
    names = ["python"]
    if _compiled is not None:
        names.append("compiled")
    return names


def get_backend(name: str):
    """Return the kernel module for an explicit backend name (for benchmarks/tests)."""
    if name == "python":
        return _reference
    if name == "compiled":
        if _compiled is None:
            raise KeyError("compiled kernel backend is not built")
        return _compiled
    raise KeyError(f"unknown backend {name!r}")
