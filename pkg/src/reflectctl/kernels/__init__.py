"""Hot loops with a compiled implementation and a numpy fallback.

The compiled module is used when it imports; ``REFLECT_BACKEND=python``
forces the fallback.
"""
import os

from . import _fallback
from .params import encode

try:
    from . import _core
except ImportError:  # extension not built
    _core = None


def available() -> list:
    return ["python"] + (["cython"] if _core is not None else [])


def get(name: str | None = None):
    name = name or os.environ.get("REFLECT_BACKEND", "").strip().lower() or None
    if name == "python":
        return _fallback
    if name == "cython":
        if _core is None:
            raise ImportError("compiled kernels are not built")
        return _core
    if name is not None:
        raise ValueError(f"unknown backend {name!r}")
    return _core if _core is not None else _fallback


def active_name(name: str | None = None) -> str:
    return "cython" if get(name) is _core and _core is not None else "python"


__all__ = ["active_name", "available", "encode", "get"]
