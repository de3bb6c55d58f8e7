"""Kernel backend selection.

Two interchangeable implementations of the im2col / col2im hot loops exist:
a compiled Cython core and a pure-numpy fallback. The compiled core is
preferred when importable. Set STPL_KERNEL_BACKEND=compiled|fallback to force
one (compiled raises if the extension is missing); anything else is rejected
so typos fail loudly.
"""

import os

from . import fallback as _fallback

_choice = os.environ.get("STPL_KERNEL_BACKEND", "auto")
if _choice not in ("auto", "compiled", "fallback"):
    raise ImportError(
        f"STPL_KERNEL_BACKEND must be 'auto', 'compiled' or 'fallback', got {_choice!r}"
    )

_impl = None
if _choice in ("auto", "compiled"):
    try:
        from . import _core as _impl
    except ImportError:
        if _choice == "compiled":
            raise
if _impl is None:
    _impl = _fallback

BACKEND = _impl.BACKEND
im2col = _impl.im2col
col2im = _impl.col2im

__all__ = ["BACKEND", "im2col", "col2im"]
