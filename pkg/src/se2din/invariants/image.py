"""Image-level invariant feature maps built from Gaussian jets."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import kernels
from ..scalespace import Jet, derivatives
from ..tensor import Tensor, interleave_channels, take_channels
from ..tensor.core import ShapeError, as_tensor, make_output

SECOND_ORDER_NAMES = ("I00", "J10", "J20", "J11", "J02")
# (source channel among the five second-order maps, direction 1 or 2)
DEFAULT_THIRD_ORDER = ((2, 1), (2, 2), (4, 1), (4, 2))


def default_eps(dtype) -> float:
    return 1e-12 if np.dtype(dtype) == np.float64 else 1e-6


def feature_count(order: int) -> int:
    """Invariant maps per input channel: ``(n+2 choose 2) - 1``."""
    return {2: 5, 3: 9}[order]


@dataclass
class InvariantFeatures:
    """Per-pixel invariant stack; channel ``c*M + m`` is map ``m`` of input channel ``c``."""

    order: int
    channels: Tensor

    @property
    def per_channel(self) -> int:
        return feature_count(self.order)

    def map(self, m: int, c: int = 0) -> np.ndarray:
        return self.channels.data[..., c * self.per_channel + m]


def regularized_invariant_maps(jet_channels, T: int, eps: float | None = None) -> Tensor:
    """Fused op: ``u``, ``|grad u|^2`` and the three regularized second-order maps."""
    x = as_tensor(jet_channels)
    if x.shape[-1] % T:
        raise ShapeError(f"{x.shape[-1]} jet channels is not a multiple of {T}")
    eps = default_eps(x.dtype) if eps is None else eps
    lead = x.shape[:-1]
    flat = x.data.reshape(-1, x.shape[-1])
    data = kernels.invariants2_forward(flat, T, eps).reshape(lead + (-1,))

    def backward(g):
        return (kernels.invariants2_backward(flat, g.reshape(flat.shape[0], -1), T, eps).reshape(x.shape),)

    return make_output(data, (x,), backward, "regularized_invariants")


def regularized_invariants(jet: Jet, eps: float | None = None) -> InvariantFeatures:
    if jet.order < 2:
        raise ValueError("need a jet of order >= 2")
    return InvariantFeatures(2, regularized_invariant_maps(jet.channels, jet.size, eps))


def directional_derivatives(fgrad, ugrad, eps: float | None = None) -> Tensor:
    """Fused op: derivatives along and across the image gradient.

    ``fgrad`` has ``q*F*2`` channels ``((c*F + f)*2 + {x, y})``; ``ugrad`` has
    ``q*2`` channels ``(c*2 + {x, y})``.  Output channel ``(c*F + f)*2 + k``
    is ``D_{k+1} f``.
    """
    fgrad, ugrad = as_tensor(fgrad), as_tensor(ugrad)
    lead = fgrad.shape[:-1]
    if ugrad.shape[:-1] != lead or ugrad.shape[-1] % 2 or fgrad.shape[-1] % ugrad.shape[-1]:
        raise ShapeError(f"incompatible shapes {fgrad.shape} and {ugrad.shape}")
    q = ugrad.shape[-1] // 2
    F = fgrad.shape[-1] // (2 * q)
    eps = default_eps(fgrad.dtype) if eps is None else eps
    f4 = fgrad.data.reshape(-1, q, F, 2)
    u3 = ugrad.data.reshape(-1, q, 2)
    data = kernels.directional_forward(f4, u3, eps).reshape(fgrad.shape)

    def backward(g):
        gf, gu = kernels.directional_backward(f4, u3, g.reshape(f4.shape), eps)
        return gf.reshape(fgrad.shape), gu.reshape(ugrad.shape)

    return make_output(data, (fgrad, ugrad), backward, "directional_derivatives")


def _gradient_channels(jet: Jet) -> Tensor:
    q = jet.channels.shape[-1] // jet.size
    idx = [c * jet.size + t for c in range(q) for t in (1, 2)]
    return take_channels(jet.channels, idx)


def invariant_derivative(f, jet: Jet, direction: int, sigma_d: float | None = None,
                         eps: float | None = None, padding: str = "zero") -> Tensor:
    """``D1 f`` (along the gradient) or ``D2 f`` (across it), one map per jet channel.

    ``f_x, f_y`` come from Gaussian derivative kernels at ``sigma_d``
    (defaults to the jet's scale).
    """
    if direction not in (1, 2):
        raise ValueError("direction must be 1 or 2")
    f = as_tensor(f)
    q = jet.channels.shape[-1] // jet.size
    if f.shape[:-1] != jet.channels.shape[:-1] or f.shape[-1] != q:
        raise ShapeError(f"f {f.shape} does not match jet {jet.channels.shape}")
    sigma_d = jet.sigma if sigma_d is None else sigma_d
    fgrad = derivatives(f, [(1, 0), (0, 1)], sigma_d, padding)
    both = directional_derivatives(fgrad, _gradient_channels(jet), eps)
    return take_channels(both, [2 * c + direction - 1 for c in range(q)])


def third_order_features(second: InvariantFeatures, jet: Jet, sigma_d: float | None = None,
                         eps: float | None = None, padding: str = "zero",
                         selection: Sequence[tuple[int, int]] = DEFAULT_THIRD_ORDER) -> Tensor:
    """Invariant derivatives of second-order maps; ``len(selection)`` channels per input channel."""
    q = jet.channels.shape[-1] // jet.size
    sources = sorted({s for s, _ in selection})
    src = take_channels(second.channels, [c * 5 + s for c in range(q) for s in sources])
    sigma_d = jet.sigma if sigma_d is None else sigma_d
    fgrad = derivatives(src, [(1, 0), (0, 1)], sigma_d, padding)
    both = directional_derivatives(fgrad, _gradient_channels(jet), eps)
    F = len(sources)
    idx = [(c * F + sources.index(s)) * 2 + d - 1 for c in range(q) for s, d in selection]
    if idx == list(range(q * F * 2)):
        return both
    return take_channels(both, idx)


def invariant_features(jet: Jet, eps: float | None = None, sigma_d: float | None = None,
                       padding: str = "zero",
                       selection: Sequence[tuple[int, int]] = DEFAULT_THIRD_ORDER) -> InvariantFeatures:
    """Full invariant stack of the jet's order (5 maps per channel for n=2, 9 for n=3)."""
    second = regularized_invariants(jet, eps)
    if jet.order == 2:
        return second
    third = third_order_features(second, jet, sigma_d, eps, padding, selection)
    stacked = interleave_channels([second.channels, third], [5, len(selection)])
    return InvariantFeatures(3, stacked)
