"""Kernel backend selection.

The compiled extension ``echobeam._kernels`` is used when it imports; set
``ECHOBEAM_PURE_PYTHON=1`` to force the numpy fallback. ``BACKEND`` names
the active implementation.
"""
import os

from echobeam import _fallback

if os.environ.get("ECHOBEAM_PURE_PYTHON") == "1":
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from echobeam import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"

simulate_accumulate = _impl.simulate_accumulate
focus_forward = _impl.focus_forward
focus_adjoint = _impl.focus_adjoint
im2col = _impl.im2col


def available_backends():
    """Return ``{name: module}`` for every backend importable here."""
    out = {"python": _fallback}
    try:
        from echobeam import _kernels
    except ImportError:
        pass
    else:
        out["cython"] = _kernels
    return out
