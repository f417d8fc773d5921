"""Kernel dispatch: compiled Cython core if importable, numpy otherwise.

Set ``DSTNET_PURE_PYTHON=1`` before import to force the fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if not os.environ.get("DSTNET_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

loe_flip_count = _impl.loe_flip_count
eme_tiles = _impl.eme_tiles

__all__ = ["BACKEND", "loe_flip_count", "eme_tiles"]
