"""Backend selection for the numeric kernels.

``KINRIG_BACKEND=numpy`` forces the vectorized numpy paths; the default is
numba when it imports cleanly.
"""
from __future__ import annotations

import contextlib
import os

try:
    import numba  # noqa: F401
    from numba import njit
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


_VALID = ("numba", "numpy")


def _initial_backend() -> str:
    requested = os.environ.get("KINRIG_BACKEND", "").strip().lower()
    if requested == "numpy":
        return "numpy"
    if requested not in ("", "numba"):
        raise ValueError(f"KINRIG_BACKEND must be one of {_VALID}, got {requested!r}")
    return "numba" if HAS_NUMBA else "numpy"


_current = _initial_backend()


def get_backend() -> str:
    return _current


def set_backend(name: str) -> None:
    global _current
    if name not in _VALID:
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba is not installed")
    _current = name


@contextlib.contextmanager
def use_backend(name: str):
    previous = _current
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def numba_active() -> bool:
    return _current == "numba"
