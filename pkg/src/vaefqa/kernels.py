"""Hot-kernel dispatch.

The compiled extension is used when it imports; otherwise the numpy fallback.
Set ``VAEFQA_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("VAEFQA_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        _impl = _compiled
        BACKEND = "cython"

im2col = _impl.im2col
col2im = _impl.col2im
gaussian_logpdf_rows = _impl.gaussian_logpdf_rows
log_mean_exp = _impl.log_mean_exp
log_rp = _impl.log_rp
bilinear_resize = _impl.bilinear_resize


def compiled_module():
    """Return the compiled kernel module, or ``None`` if unavailable."""
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels
