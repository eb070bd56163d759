"""Backend selection for the trajectory step loops.

The compiled extension is used when importable; setting the environment
variable ``DFREEZE_PURE_PYTHON=1`` forces the pure-Python loops.
"""
import os

from . import _kernels_py

BACKEND = "python"
_compiled = None

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

if _compiled is not None and os.environ.get("DFREEZE_PURE_PYTHON", "") in ("", "0"):
    propagate_dense = _compiled.propagate_dense
    propagate_diagonal = _compiled.propagate_diagonal
    BACKEND = "cython"
else:
    propagate_dense = _kernels_py.propagate_dense
    propagate_diagonal = _kernels_py.propagate_diagonal


def get_backend(name: str):
    """Return the kernel module for ``"cython"`` or ``"python"``."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def available_backends() -> list[str]:
    return ["cython", "python"] if _compiled is not None else ["python"]
