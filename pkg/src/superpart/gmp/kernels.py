"""Backend selection for the solver's inner loops.

The compiled extension is used when it imports; otherwise the pure-Python
reference module takes over. Both produce identical results.
"""
from __future__ import annotations

from types import ModuleType

from . import _kernels_py

try:
    from . import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None

BACKENDS = ("compiled", "python")
DEFAULT_BACKEND = "compiled" if _kernels_c is not None else "python"


def get_backend(name: str | None = None) -> ModuleType:
    name = name or DEFAULT_BACKEND
    if name == "compiled":
        if _kernels_c is None:
            raise RuntimeError("compiled kernels are not available; rebuild the package")
        return _kernels_c
    if name == "python":
        return _kernels_py
    raise ValueError(f"unknown backend {name!r}, expected one of {BACKENDS}")


def compiled_available() -> bool:
    return _kernels_c is not None
