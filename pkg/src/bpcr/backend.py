"""Kernel backend selection.

Two signature-compatible implementations of the hot loops exist:
`kernels_numba` (njit-compiled) and `kernels_numpy` (pure numpy/scipy reference).
The env var BPCR_BACKEND picks one: "numba", "numpy", or "auto" (default; numba
when importable). Both consume identical pre-drawn random arrays, so they follow
the same sample path up to floating-point rounding.
"""
from __future__ import annotations

import os

from .errors import InvalidParamError

try:
    import numba  # noqa: F401

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    NUMBA_AVAILABLE = False

_VALID = ("auto", "numba", "numpy")


def backend_name(override: str | None = None) -> str:
    """Resolve the active backend name; `override` beats the env var."""
    choice = (override or os.environ.get("BPCR_BACKEND", "auto")).lower()
    if choice not in _VALID:
        raise InvalidParamError(f"BPCR_BACKEND must be one of {_VALID}, got {choice!r}")
    if choice == "auto":
        return "numba" if NUMBA_AVAILABLE else "numpy"
    if choice == "numba" and not NUMBA_AVAILABLE:
        raise InvalidParamError("backend 'numba' requested but numba is not importable")
    return choice


def get_kernels(override: str | None = None):
    """Return the kernel module for the resolved backend."""
    if backend_name(override) == "numba":
        from . import kernels_numba

        return kernels_numba
    from . import kernels_numpy

    return kernels_numpy
