"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
fallback.  ``use_backend`` switches temporarily (tests, benchmarks).
"""
from __future__ import annotations

import contextlib

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_active = _compiled if _compiled is not None else _kernels_py


def available() -> list:
    return ["python"] + (["cython"] if _compiled is not None else [])


def name() -> str:
    return "cython" if _active is _compiled and _compiled is not None else "python"


def kernels():
    return _active


@contextlib.contextmanager
def use_backend(which: str):
    global _active
    if which == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        new = _compiled
    elif which == "python":
        new = _kernels_py
    else:
        raise ValueError(f"unknown backend {which!r}")
    old, _active = _active, new
    try:
        yield
    finally:
        _active = old
