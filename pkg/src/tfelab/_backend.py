"""Select the compiled kernels when available, else the pure-Python ones.

Set ``TFELAB_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _kernels_py

FAM_CODES = {"degenerate": _kernels_py.FAM_DEGENERATE, "simple": _kernels_py.FAM_SIMPLE,
             "homotopy": _kernels_py.FAM_HOMOTOPY, "unit": _kernels_py.FAM_UNIT}

_compiled = None
if os.environ.get("TFELAB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _compiled
    except ImportError:
        _compiled = None

kernels = _compiled if _compiled is not None else _kernels_py
BACKEND = "compiled" if _compiled is not None else "python"


def get_kernels(name: str | None = None):
    """Return the kernel module ``"compiled"``, ``"python"`` or the default."""
    if name is None:
        return kernels
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def compiled_available() -> bool:
    return _compiled is not None
