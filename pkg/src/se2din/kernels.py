"""Backend selection for the pointwise invariant kernels.

The compiled extension is used when it imports; set ``SE2DIN_PURE_PYTHON=1``
to force the numpy fallback.  :data:`BACKEND` names the active choice.
"""
from __future__ import annotations

import os

import numpy as np

from . import _fallback

_compiled = None
if os.environ.get("SE2DIN_PURE_PYTHON") != "1":
    try:
        from . import _ckernels as _compiled
    except ImportError:
        _compiled = None

BACKEND = "cython" if _compiled is not None else "numpy"
_impl = _compiled if _compiled is not None else _fallback


def _c(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a)


def invariants2_forward(jet, T, eps):
    return _impl.invariants2_forward(_c(jet), T, float(eps))


def invariants2_backward(jet, gout, T, eps):
    return _impl.invariants2_backward(_c(jet), _c(gout.astype(jet.dtype, copy=False)), T, float(eps))


def directional_forward(fgrad, ugrad, eps):
    return _impl.directional_forward(_c(fgrad), _c(ugrad), float(eps))


def directional_backward(fgrad, ugrad, gout, eps):
    return _impl.directional_backward(_c(fgrad), _c(ugrad), _c(gout.astype(fgrad.dtype, copy=False)), float(eps))


def implementations() -> dict:
    """Available backends by name, for benchmarks and cross-checks."""
    impls = {"numpy": _fallback}
    if _compiled is not None:
        impls["cython"] = _compiled
    return impls


def channel_moments(x):
    return _impl.channel_moments(_c(x))


def normalize_affine(x, mean, inv, gamma, beta):
    dt = x.dtype
    return _impl.normalize_affine(_c(x), _c(mean.astype(dt)), _c(inv.astype(dt)),
                                  _c(gamma.astype(dt, copy=False)), _c(beta.astype(dt, copy=False)))


def batchnorm_backward(g, xhat, gamma, inv, training):
    dt = xhat.dtype
    return _impl.batchnorm_backward(_c(g.astype(dt, copy=False)), _c(xhat), _c(gamma.astype(dt, copy=False)),
                                    _c(inv.astype(dt)), bool(training))
