"""Routing kernels with a compiled fast path.

The Cython extension handles identifier widths up to 64 bits; wider rings and
installs without a compiler fall back to the pure-Python module.  Setting
``KARAKASA_PURE_PYTHON=1`` forces the fallback.
"""
import os

from . import _pykernels as python

try:
    from . import _fast as compiled
except ImportError:  # extension not built
    compiled = None

FORCE_PYTHON = os.environ.get("KARAKASA_PURE_PYTHON", "") not in ("", "0")
BACKEND = "python" if compiled is None or FORCE_PYTHON else "cython"


def available():
    return ["python"] + ([] if compiled is None else ["cython"])


def select(m, name=None):
    """Kernel module for an m-bit ring; ``name`` pins a backend."""
    if name is None:
        name = BACKEND
    if name == "python" or m > 64:
        return python
    if name == "cython":
        if compiled is None:
            raise ImportError("compiled kernels are not built")
        return compiled
    raise ValueError(f"unknown kernel backend {name!r}")
