"""Kernel backend selection: compiled extension when built, NumPy otherwise.

Both backends implement the same two functions with bitwise-identical
results (see ``_kernels_py``), so the choice only affects speed. Set
``STGAP_PURE=1`` in the environment to force the fallback, or pass
``backend="pure"``/``"compiled"`` to the fitting/prediction entry points.
"""

from __future__ import annotations

import os

from . import _kernels_py
from .errors import StgapError

try:
    from . import _core
    HAVE_COMPILED = True
except ImportError:
    _core = None
    HAVE_COMPILED = False

_DEFAULT = _kernels_py if (os.environ.get("STGAP_PURE") or not HAVE_COMPILED) else _core


def get_backend(name=None):
    """Resolve a backend module from None/'auto', 'compiled', or 'pure'."""
    if name in (None, "auto"):
        return _DEFAULT
    if name == "compiled":
        if not HAVE_COMPILED:
            raise StgapError("compiled kernels are not available in this install")
        return _core
    if name == "pure":
        return _kernels_py
    raise ValueError(f"unknown backend {name!r}")


def backend_name(module=None) -> str:
    module = module or _DEFAULT
    return "pure" if module is _kernels_py else "compiled"
