"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the numpy
fallback. Set ``STOPNET_PURE=1`` to force the fallback.
"""

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if not os.environ.get("STOPNET_PURE"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py



def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def snell_envelope(rewards, tie_tol):
    """Envelope ``U`` (running max from the right) and first index with ``U <= Y + tie_tol``."""
    return _impl.snell_envelope(_f64(rewards), float(tie_tol))


def first_gain_stop(utilities, cost):
    """First ``l + 1`` (``l < m - 2``) with ``u[l+1] - u[l] <= cost``, else ``m - 1``."""
    return _impl.first_gain_stop(_f64(utilities), float(cost))


def hjb_sweep(h_lo, dh, feet, terminal, step_cost):
    """Backward semi-Lagrangian sweep; returns values and stop labels (ties stop)."""
    return _impl.hjb_sweep(float(h_lo), float(dh), _f64(feet), _f64(terminal), float(step_cost))

__all__ = ["BACKEND", "snell_envelope", "first_gain_stop", "hjb_sweep"]
