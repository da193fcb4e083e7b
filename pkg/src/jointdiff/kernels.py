"""Backend selection for the hot kernels.

The compiled extension is used when it was built; otherwise, or when
``JOINTDIFF_PURE_PYTHON=1`` is set, the numpy implementations are used.
Both backends produce identical results up to float rounding.
"""
import os

from . import _kernels_py

BACKEND = "python"
if os.environ.get("JOINTDIFF_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl
        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py
else:
    _impl = _kernels_py

im2col3x3 = _impl.im2col3x3
col2im3x3 = _impl.col2im3x3
# numpy's vectorised exp beats a scalar libm loop, so SiLU stays in numpy.
silu = _kernels_py.silu
silu_grad = _kernels_py.silu_grad

__all__ = ["BACKEND", "im2col3x3", "col2im3x3", "silu", "silu_grad"]
