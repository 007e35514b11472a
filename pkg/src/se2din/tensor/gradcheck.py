"""Central finite-difference check of tape gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import Parameter, Tape, Tensor


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """Elementwise ``|a - b| / max(|a|, |b|, floor)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def numerical_gradient(fn: Callable[[], Tensor], t: Tensor, eps: float = 1e-4,
                       index: np.ndarray | None = None, points: int = 5) -> np.ndarray:
    """Central differences of ``fn`` with respect to entries of ``t``.

    ``points`` selects the 3-point (second order) or 5-point (fourth order)
    stencil.  The larger step the 5-point rule allows keeps round-off in the
    loss from dominating entries whose gradient is close to zero.
    """
    if points not in (3, 5):
        raise ValueError("points must be 3 or 5")
    flat = t.data.reshape(-1)
    picks = np.arange(flat.size) if index is None else index
    out = np.zeros(len(picks))

    def at(i, x):
        flat[i] = x
        return fn().item()

    for n, i in enumerate(picks):
        orig = flat[i]
        if points == 3:
            out[n] = (at(i, orig + eps) - at(i, orig - eps)) / (2 * eps)
        else:
            out[n] = (8 * (at(i, orig + eps) - at(i, orig - eps))
                      - (at(i, orig + 2 * eps) - at(i, orig - 2 * eps))) / (12 * eps)
        flat[i] = orig
    return out


@dataclass
class GradcheckResult:
    worst: float  # max relative error over the compared entries
    compared: int
    skipped: int  # entries whose difference quotients straddle a kink


def gradcheck_report(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-4,
                     max_per_input: int | None = None, seed: int = 0, points: int = 5,
                     floor: float = 1e-8, kink_tol: float | None = None) -> GradcheckResult:
    """Compare reverse-mode gradients with central differences.

    ``fn`` must rebuild its scalar output from the current values of
    ``inputs`` on every call.  Inputs must be 64-bit.  With ``max_per_input``
    only a random subset of each input's entries is perturbed.

    With ``kink_tol`` each entry is also differenced at ``eps / 2``; when the
    two estimates differ by more than ``kink_tol`` (relative) the stencil
    spans a point where ``fn`` is not differentiable (a ReLU switching sign,
    a max-pool winner changing) and the entry is counted as skipped.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError("gradcheck needs 64-bit inputs")
        t.requires_grad = True
        if isinstance(t, Parameter):
            t.zero_grad()
        else:
            t.grad = None
    with Tape() as tape:
        loss = fn()
    tape.backward(loss)
    rng = np.random.default_rng(seed)
    worst, compared, skipped = 0.0, 0, 0
    for t in inputs:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        index = None
        if max_per_input is not None and t.data.size > max_per_input:
            index = np.sort(rng.choice(t.data.size, max_per_input, replace=False))
        numeric = numerical_gradient(fn, t, eps, index, points)
        a = analytic.reshape(-1) if index is None else analytic.reshape(-1)[index]
        keep = np.ones(a.shape, dtype=bool)
        if kink_tol is not None:
            half = numerical_gradient(fn, t, eps / 2, index, points)
            keep = relative_error(numeric, half, floor) <= kink_tol
        skipped += int((~keep).sum())
        compared += int(keep.sum())
        if keep.any():
            worst = max(worst, float(relative_error(a[keep], numeric[keep], floor).max()))
    return GradcheckResult(worst, compared, skipped)


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-4,
              max_per_input: int | None = None, seed: int = 0, points: int = 5,
              floor: float = 1e-8) -> float:
    """Max relative error between reverse-mode and central-difference gradients."""
    return gradcheck_report(fn, inputs, eps, max_per_input, seed, points, floor).worst
