"""Point-level SE(2) action on jet space, moving frame and invariantization.

Everything here is vectorized: coordinates and derivative values may be
numpy arrays of matching shape, each entry an independent jet point.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from ..scalespace import jet_order_pairs

FRAME_EPS = 1e-12


class DegenerateFrameError(ValueError):
    """The gradient vanishes, so no moving frame exists at this point."""


@dataclass(frozen=True)
class GroupElement:
    """Rotation by ``theta`` followed by translation ``v``: ``x -> R x + v``."""

    theta: np.ndarray | float
    v: tuple = (0.0, 0.0)

    @staticmethod
    def identity() -> "GroupElement":
        return GroupElement(0.0, (0.0, 0.0))

    def apply(self, x, y):
        c, s = np.cos(self.theta), np.sin(self.theta)
        return x * c - y * s + self.v[0], x * s + y * c + self.v[1]

    def compose(self, other: "GroupElement") -> "GroupElement":
        """``self * other``, i.e. apply ``other`` first."""
        vx, vy = self.apply(other.v[0], other.v[1])
        return GroupElement(self.theta + other.theta, (vx, vy))

    def inverse(self) -> "GroupElement":
        c, s = np.cos(self.theta), np.sin(self.theta)
        vx, vy = self.v
        # -R^T v
        return GroupElement(-self.theta, (-(c * vx + s * vy), -(-s * vx + c * vy)))

    def distance(self, other: "GroupElement") -> np.ndarray:
        """Max of wrapped angle difference and translation difference."""
        dth = np.angle(np.exp(1j * (np.asarray(self.theta) - np.asarray(other.theta))))
        dv = np.maximum(np.abs(np.asarray(self.v[0]) - other.v[0]), np.abs(np.asarray(self.v[1]) - other.v[1]))
        return np.maximum(np.abs(dth), dv)


@dataclass
class JetPoint:
    """Point ``(x, y, u, u_x, ...)`` of the order-``order`` jet space.

    ``d[(i, j)]`` is the derivative ``u_{x^i y^j}``; ``d[(0, 0)]`` is ``u``.
    """

    x: np.ndarray | float
    y: np.ndarray | float
    d: Mapping[tuple[int, int], np.ndarray | float] = field(default_factory=dict)
    order: int = 2

    def __post_init__(self):
        missing = [p for p in jet_order_pairs(self.order) if p not in self.d]
        if missing:
            raise ValueError(f"jet point of order {self.order} lacks derivatives {missing}")

    @property
    def gradient_norm(self):
        return np.hypot(self.d[(1, 0)], self.d[(0, 1)])

    @staticmethod
    def from_components(x, y, values, order: int) -> "JetPoint":
        """Build from derivative values listed in canonical jet order."""
        pairs = jet_order_pairs(order)
        if len(values) != len(pairs):
            raise ValueError(f"expected {len(pairs)} derivative values")
        return JetPoint(x, y, dict(zip(pairs, values)), order)


def _rotation_coefficients(theta, m: int):
    """Coefficients ``C[(i, j)][(a, b)]`` of the order-``m`` derivative transform.

    ``u~_{x^i y^j} = (c d_x - s d_y)^i (s d_x + c d_y)^j u``; expand the
    operator polynomial in ``(d_x, d_y)``.
    """
    c, s = np.cos(theta), np.sin(theta)
    out = {}
    for j in range(m + 1):
        i = m - j
        poly = {(0, 0): 1.0}
        for _ in range(i):
            poly = _poly_mul(poly, {(1, 0): c, (0, 1): -s})
        for _ in range(j):
            poly = _poly_mul(poly, {(1, 0): s, (0, 1): c})
        out[(i, j)] = poly
    return out


def _poly_mul(p, q):
    r = {}
    for (a1, b1), c1 in p.items():
        for (a2, b2), c2 in q.items():
            key = (a1 + a2, b1 + b2)
            r[key] = r.get(key, 0.0) + c1 * c2
    return r


def prolonged_action(g: GroupElement, z: JetPoint, n: int | None = None) -> JetPoint:
    """Act with ``g`` on the jet point ``z`` (coordinates and derivatives up to ``n``)."""
    n = z.order if n is None else n
    if n > 4:
        raise ValueError("prolonged action implemented up to order 4")
    xt, yt = g.apply(z.x, z.y)
    d = {(0, 0): z.d[(0, 0)]}
    for m in range(1, n + 1):
        coeffs = _rotation_coefficients(g.theta, m)
        for (i, j), poly in coeffs.items():
            d[(i, j)] = sum(coef * z.d[(a, b)] for (a, b), coef in poly.items())
    return JetPoint(xt, yt, d, n)


def moving_frame(z: JetPoint, eps: float = FRAME_EPS) -> GroupElement:
    """Group element sending ``z`` into the cross-section ``x = y = u_y = 0, u_x > 0``."""
    ux, uy = z.d[(1, 0)], z.d[(0, 1)]
    if np.any(np.hypot(ux, uy) <= eps):
        raise DegenerateFrameError("gradient vanishes at a jet point")
    theta = -np.arctan2(uy, ux)
    c, s = np.cos(theta), np.sin(theta)
    return GroupElement(theta, (-(z.x * c - z.y * s), -(z.x * s + z.y * c)))


def invariantize_jet(z: JetPoint) -> dict[tuple[int, int], np.ndarray]:
    """``I_ij``: the derivatives of ``z`` read off after moving it into the cross-section."""
    return dict(prolonged_action(moving_frame(z), z).d)


# ---------------------------------------------------------------------------
# closed forms


def _second(z):
    return z.d[(1, 0)], z.d[(0, 1)], z.d[(2, 0)], z.d[(1, 1)], z.d[(0, 2)]


def numerators(z: JetPoint):
    """Numerators of the second-order invariants (each over ``|grad u|^2``)."""
    ux, uy, uxx, uxy, uyy = _second(z)
    a = uxx * ux * ux + 2 * uxy * ux * uy + uyy * uy * uy
    b = ux * uy * (uyy - uxx) - uxy * (uy * uy - ux * ux)
    c = uxx * uy * uy - 2 * uxy * ux * uy + uyy * ux * ux
    return a, b, c


def closed_form_invariants(z: JetPoint) -> dict[str, np.ndarray]:
    """``I00, I10, I20, I11, I02`` in closed form (needs a non-zero gradient)."""
    s2 = z.d[(1, 0)] ** 2 + z.d[(0, 1)] ** 2
    if np.any(s2 <= FRAME_EPS ** 2):
        raise DegenerateFrameError("gradient vanishes at a jet point")
    a, b, c = numerators(z)
    return {"I00": z.d[(0, 0)], "I10": np.sqrt(s2), "I20": a / s2, "I11": b / s2, "I02": c / s2}


def printed_table_I20(z: JetPoint):
    """The second-order form with a unit cross-term coefficient; not an invariant."""
    ux, uy, uxx, uxy, uyy = _second(z)
    return (uxx * ux * ux + uxy * ux * uy + uyy * uy * uy) / (ux * ux + uy * uy)


def regularized_point_invariants(z: JetPoint, eps: float = 1e-12) -> dict[str, np.ndarray]:
    """``I00`` and ``|grad u| * I_ij`` with the ``1 / (|grad u| + eps)`` regularization."""
    ux, uy = z.d[(1, 0)], z.d[(0, 1)]
    s2 = ux * ux + uy * uy
    d = np.sqrt(s2) + eps
    a, b, c = numerators(z)
    return {"I00": z.d[(0, 0)], "J10": s2, "J20": a / d, "J11": b / d, "J02": c / d}


def _total_derivative_regularized(z: JetPoint, eps: float):
    """x- and y- total derivatives of the regularized J20 and J02 at a 3-jet point."""
    if z.order < 3:
        raise ValueError("third-order point features need a 3-jet")
    from .. import _fallback

    pairs = jet_order_pairs(2)
    shape = np.broadcast(*[np.asarray(z.d[p]) for p in jet_order_pairs(3)]).shape
    flat = np.stack([np.broadcast_to(np.asarray(z.d[p], dtype=np.float64), shape).reshape(-1) for p in pairs], axis=1)
    out = {}
    for name, slot in (("J20", 2), ("J02", 4)):
        seed = np.zeros((flat.shape[0], 5))
        seed[:, slot] = 1.0
        partial = _fallback.invariants2_backward(flat, seed, 6, eps)  # d J / d jet
        dx = sum(partial[:, t] * np.broadcast_to(z.d[(i + 1, j)], shape).reshape(-1) for t, (i, j) in enumerate(pairs))
        dy = sum(partial[:, t] * np.broadcast_to(z.d[(i, j + 1)], shape).reshape(-1) for t, (i, j) in enumerate(pairs))
        out[name] = (dx.reshape(shape), dy.reshape(shape))
    return out


def third_order_point_features(z: JetPoint, eps: float = 1e-12) -> dict[str, np.ndarray]:
    """Gradient-aligned and perpendicular derivatives of J20 and J02 at a 3-jet point."""
    ux, uy = z.d[(1, 0)], z.d[(0, 1)]
    d = np.sqrt(ux * ux + uy * uy) + eps
    tot = _total_derivative_regularized(z, eps)
    out = {}
    for k, name in enumerate(("J20", "J02")):
        fx, fy = tot[name]
        out[f"E{2 * k + 1}"] = (ux * fx + uy * fy) / d
        out[f"E{2 * k + 2}"] = (ux * fy - uy * fx) / d
    return out


# ---------------------------------------------------------------------------
# oracle


def random_jet_points(rng: np.random.Generator, count: int, order: int = 2, min_gradient: float = 0.1) -> JetPoint:
    """Components uniform in [-1, 1]; points with ``|grad u| < min_gradient`` are redrawn."""
    pairs = jet_order_pairs(order)
    vals = rng.uniform(-1, 1, size=(count, 2 + len(pairs)))
    while True:
        bad = np.hypot(vals[:, 3], vals[:, 4]) < min_gradient
        if not bad.any():
            break
        vals[bad] = rng.uniform(-1, 1, size=(bad.sum(), vals.shape[1]))
    return JetPoint.from_components(vals[:, 0], vals[:, 1], list(vals[:, 2:].T), order)


def invariance_oracle(formula: Callable[[JetPoint], np.ndarray], trials: int = 1000, angles=36,
                      order: int = 2, seed: int = 0) -> float:
    """Max ``|F(g.z) - F(z)|`` over random jet points and group elements.

    ``angles`` is a count of equally spaced rotations in ``[0, 2 pi)`` or an
    explicit list; each rotation is paired with a random translation.
    """
    rng = np.random.default_rng(seed)
    z = random_jet_points(rng, trials, order)
    thetas = np.arange(angles) * (2 * np.pi / angles) if np.isscalar(angles) else np.asarray(angles, dtype=float)
    base = np.asarray(formula(z))
    worst = 0.0
    for th in thetas:
        v = rng.uniform(-10, 10, size=2)
        gz = prolonged_action(GroupElement(float(th), (float(v[0]), float(v[1]))), z)
        worst = max(worst, float(np.max(np.abs(np.asarray(formula(gz)) - base))))
    return worst
