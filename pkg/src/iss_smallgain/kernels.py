"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
fallback.  ``ISS_SG_PURE_PYTHON=1`` forces the fallback.
"""
import os

import numpy as np

from . import _pykernels

_impl = _pykernels
BACKEND = "python"
if os.environ.get("ISS_SG_PURE_PYTHON", "") != "1":
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _pykernels


def mixed_linear_apply(A, is_max, dscale, S):
    A = np.ascontiguousarray(A, dtype=np.float64)
    return _impl.mixed_linear_apply(
        A,
        np.ascontiguousarray(is_max, dtype=np.int32),
        np.ascontiguousarray(dscale, dtype=np.float64),
        np.asarray(S, dtype=np.float64),
    )


def rk4_network(a, G, is_max, B, sig_kind, sig_par, x0, dt, nsteps, guard=1e150):
    f64 = lambda v: np.ascontiguousarray(v, dtype=np.float64)
    return _impl.rk4_network(
        f64(a), f64(G), np.ascontiguousarray(is_max, dtype=np.int32), f64(B),
        np.ascontiguousarray(sig_kind, dtype=np.int32), f64(sig_par), f64(x0),
        float(dt), int(nsteps), float(guard),
    )
