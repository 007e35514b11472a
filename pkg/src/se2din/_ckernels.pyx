# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled pointwise invariant kernels; same contracts as ``_fallback``."""
import numpy as np
from cython cimport floating
from libc.math cimport sqrt


def invariants2_forward(floating[:, ::1] jet, Py_ssize_t T, double eps):
    cdef Py_ssize_t N = jet.shape[0]
    cdef Py_ssize_t q = jet.shape[1] // T
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty((N, q * 5), dtype=dtype)
    cdef floating[:, ::1] out = out_arr
    cdef Py_ssize_t n, c, o, p
    cdef floating u, ux, uy, uxx, uxy, uyy, s2, inv_d, a, b, cc
    with nogil:
        for n in range(N):
            for c in range(q):
                o = c * T
                u = jet[n, o]
                ux = jet[n, o + 1]
                uy = jet[n, o + 2]
                uxx = jet[n, o + 3]
                uxy = jet[n, o + 4]
                uyy = jet[n, o + 5]
                s2 = ux * ux + uy * uy
                inv_d = 1.0 / (<floating>sqrt(s2) + <floating>eps)
                a = uxx * ux * ux + 2 * uxy * ux * uy + uyy * uy * uy
                b = ux * uy * (uyy - uxx) + uxy * (ux * ux - uy * uy)
                cc = uxx * uy * uy - 2 * uxy * ux * uy + uyy * ux * ux
                p = c * 5
                out[n, p] = u
                out[n, p + 1] = s2
                out[n, p + 2] = a * inv_d
                out[n, p + 3] = b * inv_d
                out[n, p + 4] = cc * inv_d
    return out_arr


def invariants2_backward(floating[:, ::1] jet, floating[:, ::1] gout, Py_ssize_t T, double eps):
    cdef Py_ssize_t N = jet.shape[0]
    cdef Py_ssize_t q = jet.shape[1] // T
    dtype = np.float32 if floating is float else np.float64
    gj_arr = np.zeros((N, q * T), dtype=dtype)
    cdef floating[:, ::1] gj = gj_arr
    cdef Py_ssize_t n, c, o, p
    cdef floating ux, uy, uxx, uxy, uyy, s, d, a, b, cc
    cdef floating gs2, ga, gb, gc, back, ex, ey
    with nogil:
        for n in range(N):
            for c in range(q):
                o = c * T
                p = c * 5
                ux = jet[n, o + 1]
                uy = jet[n, o + 2]
                uxx = jet[n, o + 3]
                uxy = jet[n, o + 4]
                uyy = jet[n, o + 5]
                s = <floating>sqrt(ux * ux + uy * uy)
                d = s + <floating>eps
                a = uxx * ux * ux + 2 * uxy * ux * uy + uyy * uy * uy
                b = ux * uy * (uyy - uxx) + uxy * (ux * ux - uy * uy)
                cc = uxx * uy * uy - 2 * uxy * ux * uy + uyy * ux * ux
                gs2 = gout[n, p + 1]
                ga = gout[n, p + 2] / d
                gb = gout[n, p + 3] / d
                gc = gout[n, p + 4] / d
                back = (ga * a + gb * b + gc * cc) / d
                if s > 0:
                    ex = ux / s
                    ey = uy / s
                else:
                    ex = 0
                    ey = 0
                gj[n, o] = gout[n, p]
                gj[n, o + 1] = (2 * gs2 * ux
                                + ga * (2 * uxx * ux + 2 * uxy * uy)
                                + gb * (uy * (uyy - uxx) + 2 * uxy * ux)
                                + gc * (2 * uyy * ux - 2 * uxy * uy)
                                - back * ex)
                gj[n, o + 2] = (2 * gs2 * uy
                                + ga * (2 * uxy * ux + 2 * uyy * uy)
                                + gb * (ux * (uyy - uxx) - 2 * uxy * uy)
                                + gc * (2 * uxx * uy - 2 * uxy * ux)
                                - back * ey)
                gj[n, o + 3] = ga * ux * ux - gb * ux * uy + gc * uy * uy
                gj[n, o + 4] = 2 * ga * ux * uy + gb * (ux * ux - uy * uy) - 2 * gc * ux * uy
                gj[n, o + 5] = ga * uy * uy + gb * ux * uy + gc * ux * ux
    return gj_arr


def directional_forward(floating[:, :, :, ::1] fgrad, floating[:, :, ::1] ugrad, double eps):
    cdef Py_ssize_t N = fgrad.shape[0], q = fgrad.shape[1], F = fgrad.shape[2]
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty((N, q, F, 2), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, c, f
    cdef floating ux, uy, inv_d, fx, fy
    with nogil:
        for n in range(N):
            for c in range(q):
                ux = ugrad[n, c, 0]
                uy = ugrad[n, c, 1]
                inv_d = 1.0 / (<floating>sqrt(ux * ux + uy * uy) + <floating>eps)
                for f in range(F):
                    fx = fgrad[n, c, f, 0]
                    fy = fgrad[n, c, f, 1]
                    out[n, c, f, 0] = (ux * fx + uy * fy) * inv_d
                    out[n, c, f, 1] = (ux * fy - uy * fx) * inv_d
    return out_arr


def directional_backward(floating[:, :, :, ::1] fgrad, floating[:, :, ::1] ugrad,
                         floating[:, :, :, ::1] gout, double eps):
    cdef Py_ssize_t N = fgrad.shape[0], q = fgrad.shape[1], F = fgrad.shape[2]
    dtype = np.float32 if floating is float else np.float64
    gf_arr = np.empty((N, q, F, 2), dtype=dtype)
    gu_arr = np.empty((N, q, 2), dtype=dtype)
    cdef floating[:, :, :, ::1] gf = gf_arr
    cdef floating[:, :, ::1] gu = gu_arr
    cdef Py_ssize_t n, c, f
    cdef floating ux, uy, s, d, fx, fy, d1, d2, g1, g2, back, ex, ey, sx, sy
    with nogil:
        for n in range(N):
            for c in range(q):
                ux = ugrad[n, c, 0]
                uy = ugrad[n, c, 1]
                s = <floating>sqrt(ux * ux + uy * uy)
                d = s + <floating>eps
                if s > 0:
                    ex = ux / s
                    ey = uy / s
                else:
                    ex = 0
                    ey = 0
                sx = 0
                sy = 0
                for f in range(F):
                    fx = fgrad[n, c, f, 0]
                    fy = fgrad[n, c, f, 1]
                    d1 = (ux * fx + uy * fy) / d
                    d2 = (ux * fy - uy * fx) / d
                    g1 = gout[n, c, f, 0] / d
                    g2 = gout[n, c, f, 1] / d
                    gf[n, c, f, 0] = g1 * ux - g2 * uy
                    gf[n, c, f, 1] = g1 * uy + g2 * ux
                    back = g1 * d1 + g2 * d2
                    sx = sx + g1 * fx + g2 * fy - back * ex
                    sy = sy + g1 * fy - g2 * fx - back * ey
                gu[n, c, 0] = sx
                gu[n, c, 1] = sy
    return gf_arr, gu_arr


def channel_moments(floating[:, ::1] x):
    """Per-column mean and biased variance, accumulated in double precision."""
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], n, c
    mean_arr = np.zeros(C, dtype=np.float64)
    var_arr = np.zeros(C, dtype=np.float64)
    cdef double[::1] mean = mean_arr
    cdef double[::1] var = var_arr
    cdef double dv
    with nogil:
        for n in range(N):
            for c in range(C):
                mean[c] += x[n, c]
        for c in range(C):
            mean[c] /= N
        for n in range(N):
            for c in range(C):
                dv = x[n, c] - mean[c]
                var[c] += dv * dv
        for c in range(C):
            var[c] /= N
    return mean_arr, var_arr


def normalize_affine(floating[:, ::1] x, floating[::1] mean, floating[::1] inv,
                     floating[::1] gamma, floating[::1] beta):
    """Return ``(xhat, xhat * gamma + beta)`` with ``xhat = (x - mean) * inv``."""
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], n, c
    dtype = np.float32 if floating is float else np.float64
    xhat_arr = np.empty((N, C), dtype=dtype)
    out_arr = np.empty((N, C), dtype=dtype)
    cdef floating[:, ::1] xhat = xhat_arr
    cdef floating[:, ::1] out = out_arr
    cdef floating h
    with nogil:
        for n in range(N):
            for c in range(C):
                h = (x[n, c] - mean[c]) * inv[c]
                xhat[n, c] = h
                out[n, c] = h * gamma[c] + beta[c]
    return xhat_arr, out_arr


def batchnorm_backward(floating[:, ::1] g, floating[:, ::1] xhat, floating[::1] gamma,
                       floating[::1] inv, bint training):
    """Return ``(gx, ggamma, gbeta)``."""
    cdef Py_ssize_t N = g.shape[0], C = g.shape[1], n, c
    dtype = np.float32 if floating is float else np.float64
    sg_arr = np.zeros(C, dtype=np.float64)
    sgx_arr = np.zeros(C, dtype=np.float64)
    gx_arr = np.empty((N, C), dtype=dtype)
    cdef double[::1] sg = sg_arr
    cdef double[::1] sgx = sgx_arr
    cdef floating[:, ::1] gx = gx_arr
    cdef double a, b
    with nogil:
        for n in range(N):
            for c in range(C):
                sg[c] += g[n, c]
                sgx[c] += g[n, c] * xhat[n, c]
        for n in range(N):
            for c in range(C):
                if training:
                    a = sg[c] / N
                    b = sgx[c] / N
                    gx[n, c] = <floating>(gamma[c] * inv[c] * (g[n, c] - a - xhat[n, c] * b))
                else:
                    gx[n, c] = gamma[c] * inv[c] * g[n, c]
    return gx_arr, sgx_arr.astype(dtype), sg_arr.astype(dtype)
