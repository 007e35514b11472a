"""Sampled Gaussian derivative kernels and image jets.

Kernel values are samples of the analytic derivative ``d^(i+j) G / dx^i dy^j``
of the 2-D Gaussian, built as an outer product of 1-D factors.  The 1-D
factors are corrected so that the order-0 factor sums to one, odd orders are
exactly antisymmetric, and even orders >= 2 sum to zero (the sum is removed
along the normalized order-0 profile).

Image axes: ``x`` runs along columns (axis ``W``), ``y`` along rows (axis
``H``).  Because filtering is correlation, the jet correlates with the
mirrored kernels, i.e. the factor ``(-1)^k`` per 1-D order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite_e import hermeval

from .tensor import Tensor, conv2d_separable
from .tensor.core import as_tensor

MAX_ORDER = 4


def jet_order_pairs(n: int) -> list[tuple[int, int]]:
    """Canonical ``(i, j)`` channel order: by total order, then ``i`` descending."""
    return [(m - j, j) for m in range(n + 1) for j in range(m + 1)]


def jet_size(n: int) -> int:
    return (n + 1) * (n + 2) // 2


def default_radius(sigma: float) -> int:
    return int(math.ceil(4 * sigma))


@lru_cache(maxsize=256)
def _factor(k: int, sigma: float, r: int) -> np.ndarray:
    t = np.arange(0, r + 1, dtype=np.float64)
    g = np.exp(-0.5 * (t / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
    coef = np.zeros(k + 1)
    coef[k] = 1.0
    half = (-1.0 / sigma) ** k * hermeval(t / sigma, coef) * g
    if k % 2:
        full = np.concatenate([-half[:0:-1], half])
        full[r] = 0.0
    else:
        full = np.concatenate([half[:0:-1], half])
        if k == 0:
            full /= full.sum()
        else:
            base = _factor(0, sigma, r)
            full = full - full.sum() * base
            full = 0.5 * (full + full[::-1])
    full.setflags(write=False)
    return full


def gaussian_derivative_1d(k: int, sigma: float, radius: int | None = None) -> np.ndarray:
    """Corrected samples of the ``k``-th derivative of the 1-D Gaussian on ``[-r, r]``."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if not 0 <= k <= MAX_ORDER:
        raise ValueError(f"derivative order must be in [0, {MAX_ORDER}]")
    r = default_radius(sigma) if radius is None else int(radius)
    if r < 0:
        raise ValueError("radius must be non-negative")
    return _factor(int(k), float(sigma), r)


@dataclass(frozen=True)
class GaussianKernel:
    i: int
    j: int
    sigma: float
    radius: int
    hx: np.ndarray
    hy: np.ndarray

    @property
    def values(self) -> np.ndarray:
        """``(2r+1) x (2r+1)`` samples, ``values[y, x] = hx[x] * hy[y]``."""
        return np.outer(self.hy, self.hx)


def gaussian_derivative_kernel(i: int, j: int, sigma: float, radius: int | None = None) -> GaussianKernel:
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if i < 0 or j < 0 or i + j > MAX_ORDER:
        raise ValueError(f"need i, j >= 0 and i + j <= {MAX_ORDER}")
    r = default_radius(sigma) if radius is None else int(radius)
    return GaussianKernel(i, j, float(sigma), r,
                          gaussian_derivative_1d(i, sigma, r), gaussian_derivative_1d(j, sigma, r))


def derivative_filter(k: int, sigma: float, radius: int | None = None) -> np.ndarray:
    """1-D correlation filter that estimates the ``k``-th derivative of the smoothed signal."""
    h = gaussian_derivative_1d(k, sigma, radius)
    return h[::-1] if k % 2 else h


@dataclass
class Jet:
    """Smoothed partial derivatives up to ``order``.

    ``channels`` is ``... x H x W x (q*T)``; channel ``c*T + t`` holds the
    derivative ``jet_order_pairs(order)[t]`` of input channel ``c``.
    """

    order: int
    sigma: float
    channels: Tensor

    @property
    def size(self) -> int:
        return jet_size(self.order)

    def component(self, i: int, j: int, c: int = 0) -> np.ndarray:
        t = jet_order_pairs(self.order).index((i, j))
        return self.channels.data[..., c * self.size + t]


def derivatives(u, pairs, sigma: float, padding: str = "zero", radius: int | None = None) -> Tensor:
    """Smoothed derivatives ``pairs`` of every channel of ``u``; channel ``c*len(pairs) + t``."""
    u = as_tensor(u)
    top = max(max(p) for p in pairs)
    filters = [derivative_filter(k, sigma, radius) for k in range(top + 1)]
    return conv2d_separable(u, filters, filters, [(i, j) for i, j in pairs], padding)


def jet(u, n: int, sigma: float, padding: str = "zero", radius: int | None = None) -> Jet:
    """Gaussian jet of order ``n`` (2 or 3) of an image or image batch."""
    if n not in (2, 3):
        raise ValueError(f"jet order must be 2 or 3, got {n}")
    return Jet(n, float(sigma), derivatives(u, jet_order_pairs(n), sigma, padding, radius))


def smooth(u, sigma: float, padding: str = "zero") -> Tensor:
    return derivatives(u, [(0, 0)], sigma, padding)
