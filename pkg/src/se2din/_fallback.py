"""Pure-numpy versions of the pointwise invariant kernels.

Array contracts (all C-contiguous, float32 or float64):

``invariants2_forward(jet, T, eps)``
    ``jet``: ``(N, q*T)`` with per-channel order u, ux, uy, uxx, uxy, uyy, ...
    returns ``(N, q*5)``: u, |grad u|^2, then the three second-order
    numerators divided by ``|grad u| + eps``.
``invariants2_backward(jet, gout, T, eps)``
    returns ``(N, q*T)``; channels above second order get zero.
``directional_forward(fgrad, ugrad, eps)``
    ``fgrad``: ``(N, q, F, 2)`` holding (f_x, f_y) of F scalar maps per input
    channel, ``ugrad``: ``(N, q, 2)`` holding (u_x, u_y).  Returns
    ``(N, q, F, 2)`` with the gradient-aligned and perpendicular derivatives.
``directional_backward(fgrad, ugrad, gout, eps)``
    returns ``(g_fgrad, g_ugrad)``.
"""
from __future__ import annotations

import numpy as np


def _split(jet, T):
    N = jet.shape[0]
    j = jet.reshape(N, -1, T)
    return j[..., 0], j[..., 1], j[..., 2], j[..., 3], j[..., 4], j[..., 5]


def _safe_unit(v, s):
    # v / s with 0 where s == 0
    out = np.zeros_like(v)
    np.divide(v, s, out=out, where=s > 0)
    return out


def invariants2_forward(jet: np.ndarray, T: int, eps: float) -> np.ndarray:
    u, ux, uy, uxx, uxy, uyy = _split(jet, T)
    s2 = ux * ux + uy * uy
    d = np.sqrt(s2) + jet.dtype.type(eps)
    two = jet.dtype.type(2)
    a = uxx * ux * ux + two * uxy * ux * uy + uyy * uy * uy
    b = ux * uy * (uyy - uxx) + uxy * (ux * ux - uy * uy)
    c = uxx * uy * uy - two * uxy * ux * uy + uyy * ux * ux
    out = np.stack([u, s2, a / d, b / d, c / d], axis=-1)
    return out.reshape(jet.shape[0], -1)


def invariants2_backward(jet: np.ndarray, gout: np.ndarray, T: int, eps: float) -> np.ndarray:
    N = jet.shape[0]
    u, ux, uy, uxx, uxy, uyy = _split(jet, T)
    g = gout.reshape(N, -1, 5)
    gu, gs2, ga, gb, gc = (g[..., k] for k in range(5))
    two = jet.dtype.type(2)
    s2 = ux * ux + uy * uy
    s = np.sqrt(s2)
    d = s + jet.dtype.type(eps)
    a = uxx * ux * ux + two * uxy * ux * uy + uyy * uy * uy
    b = ux * uy * (uyy - uxx) + uxy * (ux * ux - uy * uy)
    c = uxx * uy * uy - two * uxy * ux * uy + uyy * ux * ux
    ga_d, gb_d, gc_d = ga / d, gb / d, gc / d
    # d(1/d) term shared by all three ratios
    back = (ga_d * a + gb_d * b + gc_d * c) / d
    gj = np.zeros((N, g.shape[1], T), dtype=jet.dtype)
    gj[..., 0] = gu
    gj[..., 1] = (two * gs2 * ux
                  + ga_d * (two * uxx * ux + two * uxy * uy)
                  + gb_d * (uy * (uyy - uxx) + two * uxy * ux)
                  + gc_d * (two * uyy * ux - two * uxy * uy)
                  - back * _safe_unit(ux, s))
    gj[..., 2] = (two * gs2 * uy
                  + ga_d * (two * uxy * ux + two * uyy * uy)
                  + gb_d * (ux * (uyy - uxx) - two * uxy * uy)
                  + gc_d * (two * uxx * uy - two * uxy * ux)
                  - back * _safe_unit(uy, s))
    gj[..., 3] = ga_d * ux * ux - gb_d * ux * uy + gc_d * uy * uy
    gj[..., 4] = two * ga_d * ux * uy + gb_d * (ux * ux - uy * uy) - two * gc_d * ux * uy
    gj[..., 5] = ga_d * uy * uy + gb_d * ux * uy + gc_d * ux * ux
    return gj.reshape(N, -1)


def directional_forward(fgrad: np.ndarray, ugrad: np.ndarray, eps: float) -> np.ndarray:
    ux = ugrad[..., 0][:, :, None]
    uy = ugrad[..., 1][:, :, None]
    d = np.sqrt(ux * ux + uy * uy) + fgrad.dtype.type(eps)
    fx, fy = fgrad[..., 0], fgrad[..., 1]
    return np.stack([(ux * fx + uy * fy) / d, (ux * fy - uy * fx) / d], axis=-1)


def directional_backward(fgrad, ugrad, gout, eps):
    ux = ugrad[..., 0][:, :, None]
    uy = ugrad[..., 1][:, :, None]
    s = np.sqrt(ux * ux + uy * uy)
    d = s + fgrad.dtype.type(eps)
    fx, fy = fgrad[..., 0], fgrad[..., 1]
    d1 = (ux * fx + uy * fy) / d
    d2 = (ux * fy - uy * fx) / d
    g1, g2 = gout[..., 0] / d, gout[..., 1] / d
    gfx = g1 * ux - g2 * uy
    gfy = g1 * uy + g2 * ux
    back = g1 * d1 + g2 * d2
    ex, ey = _safe_unit(ux, s), _safe_unit(uy, s)
    gux = (g1 * fx + g2 * fy - back * ex).sum(axis=2)
    guy = (g1 * fy - g2 * fx - back * ey).sum(axis=2)
    return np.stack([gfx, gfy], axis=-1), np.stack([gux, guy], axis=-1)


def channel_moments(x: np.ndarray):
    mean = x.mean(axis=0, dtype=np.float64)
    xc = x - mean
    return mean, (xc * xc).mean(axis=0)


def normalize_affine(x, mean, inv, gamma, beta):
    xhat = (x - mean) * inv
    return xhat, xhat * gamma + beta


def batchnorm_backward(g, xhat, gamma, inv, training):
    sg = g.sum(axis=0, dtype=np.float64)
    sgx = (g * xhat).sum(axis=0, dtype=np.float64)
    dt = g.dtype
    if training:
        n = g.shape[0]
        gx = (gamma * inv) * (g - (sg / n).astype(dt) - xhat * (sgx / n).astype(dt))
    else:
        gx = (gamma * inv) * g
    return gx.astype(dt, copy=False), sgx.astype(dt), sg.astype(dt)
