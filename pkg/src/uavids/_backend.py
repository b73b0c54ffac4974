"""Kernel backend selection.

The compiled ``_core`` extension is used when it imports; otherwise the
numpy fallback in ``_core_py`` takes over.  ``use()`` switches explicitly,
which the benchmark and the backend-equivalence tests rely on.  Setting
``UAVIDS_BACKEND=python`` in the environment forces the fallback at import.
"""
from __future__ import annotations

import os
from types import ModuleType

from . import _core_py

try:
    from . import _core as _compiled
except ImportError:  # extension not built
    _compiled = None

_active: ModuleType = _compiled if _compiled is not None else _core_py
if os.environ.get("UAVIDS_BACKEND", "").strip().lower() == "python":
    _active = _core_py


def has_compiled() -> bool:
    return _compiled is not None


def name() -> str:
    return "cython" if _active is _compiled else "python"


def use(which: str) -> None:
    global _active
    if which == "cython":
        if _compiled is None:
            raise RuntimeError("compiled extension uavids._core is not built")
        _active = _compiled
    elif which == "python":
        _active = _core_py
    else:
        raise ValueError(f"unknown backend {which!r}")


def kernels() -> ModuleType:
    return _active
