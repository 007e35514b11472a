"""Invariance and equivariance checks with a stable report format."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from . import container, rng as rngmod
from .data import rotate
from .invariants import point as pt
from .model import Model
from .tensor.core import ShapeError

ROT90_BOUND = 1e-4
CONTINUOUS_BOUND = 0.05
FORMULA_BOUND = 1e-9
PRINTED_FLOOR = 0.1
DEFAULT_ANGLES = (15.0, 30.0, 45.0, 60.0)


@dataclass
class CheckResult:
    name: str
    metric: float
    bound: float
    passed: bool
    # "below": metric must be <= bound; "above": the check expects a violation
    sense: str = "below"
    note: str = ""


def _judge(name, metric, bound, sense="below", note="") -> CheckResult:
    ok = metric <= bound if sense == "below" else metric > bound
    return CheckResult(name, float(metric), float(bound), bool(ok), sense, note)


# -- rot90 ----------------------------------------------------------------------

def check_rot90_invariance(model: Model, images: np.ndarray, batch_size: int = 50) -> float:
    """Max abs logit change under rot90^k, k = 1, 2, 3, in inference mode."""
    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 3:
        images = images[..., None]
    if images.ndim != 4:
        raise ShapeError(f"expected N x H x W x C images, got {images.shape}")
    if images.shape[1] != images.shape[2]:
        raise ShapeError(f"rot90 check needs square images, got {images.shape[1]}x{images.shape[2]}")
    worst = 0.0
    for lo in range(0, len(images), batch_size):
        x = images[lo:lo + batch_size]
        base = model.forward(x, training=False).data.astype(np.float64)
        for k in (1, 2, 3):
            xr = np.ascontiguousarray(np.rot90(x, k, axes=(1, 2)))
            out = model.forward(xr, training=False).data.astype(np.float64)
            worst = max(worst, float(np.max(np.abs(out - base))))
    return worst


# -- continuous angles ----------------------------------------------------------

def synthetic_blobs(seed: int, count: int = 4, size: int = 64, blobs: int = 6,
                    sigma_range=(3.0, 5.0)) -> np.ndarray:
    """Sums of isotropic Gaussians placed well inside a centered disk.

    Returns ``count x size x size x 1`` float32 images with values in [0, 1].
    """
    gen = rngmod.stream(seed, rngmod.SYNTHETIC, 0)
    c = (size - 1) / 2.0
    r, col = np.mgrid[0:size, 0:size].astype(np.float64)
    out = np.zeros((count, size, size, 1), dtype=np.float32)
    for n in range(count):
        img = np.zeros((size, size))
        for _ in range(blobs):
            rad = gen.uniform(0, size * 0.22)
            ang = gen.uniform(0, 2 * np.pi)
            s = gen.uniform(*sigma_range)
            amp = gen.uniform(0.3, 1.0)
            cy, cx = c + rad * np.sin(ang), c + rad * np.cos(ang)
            img += amp * np.exp(-((r - cy) ** 2 + (col - cx) ** 2) / (2 * s * s))
        out[n, ..., 0] = img / img.max()
    return out


def _rotate_batch(x: np.ndarray, theta: float) -> np.ndarray:
    return np.stack([rotate(img, theta) for img in x]).astype(x.dtype, copy=False)


def interior_mask(size: int, margin: float) -> np.ndarray:
    """Pixels closer to the center than ``size / 2 - margin``."""
    c = (size - 1) / 2.0
    r, col = np.mgrid[0:size, 0:size]
    return np.hypot(r - c, col - c) <= size / 2.0 - margin


def max_sigma(model: Model) -> float:
    return max(b.sigma for b in model.config.blocks)


def check_continuous_equivariance(trunk: Callable[[np.ndarray], np.ndarray], thetas: Sequence[float],
                                  images: np.ndarray, margin: float) -> list[tuple[float, float]]:
    """Relative error ``|phi(R u) - R phi(u)| / |phi(u)|`` over the interior disk.

    ``thetas`` in degrees.  Returns ``(theta, error)`` pairs.
    """
    images = np.asarray(images, dtype=np.float32)
    size = images.shape[1]
    if images.shape[1] != images.shape[2]:
        raise ShapeError("continuous check needs square images")
    mask = interior_mask(size, margin)
    if not mask.any():
        raise ValueError(f"margin {margin} leaves no interior on a {size}px image")
    base = np.asarray(trunk(images), dtype=np.float64)
    ref = base[:, mask]
    denom = float(np.linalg.norm(ref))
    rows = []
    for deg in thetas:
        th = math.radians(deg)
        lhs = np.asarray(trunk(_rotate_batch(images, th)), dtype=np.float64)
        rhs = _rotate_batch(base, th)
        err = float(np.linalg.norm(lhs[:, mask] - rhs[:, mask])) / denom
        rows.append((float(deg), err))
    return rows


def model_trunk(model: Model) -> Callable[[np.ndarray], np.ndarray]:
    return lambda x: model.trunk(x, training=False).data


# -- point formulas -------------------------------------------------------------

def _pick(fn, key):
    return lambda z: fn(z)[key]


def formula_suite() -> list[tuple[str, Callable, int, str]]:
    """(name, formula, jet order, sense) for every shipped point invariant."""
    suite = []
    for key in ("I00", "I10", "I20", "I11", "I02"):
        suite.append((key, _pick(pt.closed_form_invariants, key), 2, "below"))
    for key in ("J10", "J20", "J11", "J02"):
        suite.append((f"regularized {key}", _pick(pt.regularized_point_invariants, key), 2, "below"))
    for (i, j) in ((2, 0), (1, 1), (0, 2), (3, 0), (2, 1), (1, 2), (0, 3)):
        order = max(2, i + j)
        suite.append((f"invariantized u_{i}{j}", (lambda z, k=(i, j): pt.invariantize_jet(z)[k]), order, "below"))
    for key in ("E1", "E2", "E3", "E4"):
        suite.append((f"derivative feature {key}", _pick(pt.third_order_point_features, key), 3, "below"))
    suite.append(("I20 with unit cross coefficient", pt.printed_table_I20, 2, "above"))
    return suite


def check_invariant_formulas(trials: int = 1000, angles: int = 36, seed: int = 0) -> list[CheckResult]:
    out = []
    for name, formula, order, sense in formula_suite():
        dev = pt.invariance_oracle(formula, trials=trials, angles=angles, order=order, seed=seed)
        if sense == "above":
            out.append(_judge(name, dev, PRINTED_FLOOR, "above", "expected to vary under rotation"))
        else:
            out.append(_judge(name, dev, FORMULA_BOUND))
    return out


def check_moving_frame(trials: int = 1000, seed: int = 0) -> list[CheckResult]:
    """Equivariance of the frame and membership of the normalized point in the cross-section."""
    gen = np.random.default_rng(seed)
    z = pt.random_jet_points(gen, trials, 2)
    rho = pt.moving_frame(z)
    th = gen.uniform(-np.pi, np.pi, trials)
    v = gen.uniform(-10, 10, (2, trials))
    g = pt.GroupElement(th, (v[0], v[1]))
    lhs = pt.moving_frame(pt.prolonged_action(g, z))
    rhs = rho.compose(g.inverse())
    eq = float(np.max(lhs.distance(rhs)))
    zn = pt.prolonged_action(rho, z)
    cs = float(max(np.max(np.abs(zn.x)), np.max(np.abs(zn.y)), np.max(np.abs(zn.d[(0, 1)]))))
    pos = float(np.min(zn.d[(1, 0)]))
    return [_judge("frame equivariance", eq, 1e-10),
            _judge("cross-section residual", cs, 1e-10),
            _judge("cross-section u_x", pos, 0.0, "above", "must be positive")]


# -- gradients ------------------------------------------------------------------

GRADCHECK_BOUND = 1e-4
# batch statistics couple every pixel, so perturbations cross many more kinks
GRADCHECK_TRAINING_BOUND = 1e-3


def toy_network(seed: int = 0, order: int = 2, width: int = 3, classes: int = 4) -> Model:
    """Two-block 64-bit network with perturbed parameters and statistics."""
    from .model import BlockConfig, NetworkConfig

    cfg = NetworkConfig([BlockConfig(order, 1.0, 1, width, width),
                         BlockConfig(order, 1.5, width, width, classes)], classes=classes, seed=seed)
    model = Model(cfg).astype(np.float64)
    gen = rngmod.stream(seed, rngmod.SYNTHETIC, 1)
    for p in model.parameters():
        p.assign(p.data + 0.3 * gen.standard_normal(p.shape))
    for b in model.blocks:
        for bn in (b.bn1, b.bn2):
            bn.running_mean = 0.2 * gen.standard_normal(bn.running_mean.shape)
            bn.running_var = gen.uniform(0.5, 2.0, bn.running_var.shape)
    return model


def check_gradients(seed: int = 0, order: int = 2, training: bool = False, size: int = 10,
                    batch: int = 3, max_per_input: int | None = 40):
    """Tape gradients of a toy network against fourth-order central differences.

    Covers every parameter and the input image; returns a
    :class:`~se2din.tensor.gradcheck.GradcheckResult`.  With ``training`` the
    batch-statistics path of batch norm is exercised.  Entries whose
    difference quotients at two step sizes disagree sit on a ReLU or max-pool
    kink and are reported as skipped rather than compared.
    """
    from .tensor import Tensor, softmax_cross_entropy
    from .tensor.gradcheck import gradcheck_report

    model = toy_network(seed, order)
    gen = rngmod.stream(seed, rngmod.SYNTHETIC, 2)
    x = Tensor(gen.uniform(0, 1, (batch, size, size, 1)), dtype=np.float64)
    labels = gen.integers(0, model.config.classes, batch)
    states = [(bn, bn.running_mean.copy(), bn.running_var.copy()) for b in model.blocks for bn in (b.bn1, b.bn2)]

    def loss():
        out = softmax_cross_entropy(model.forward(x, training=training), labels)
        # keep every evaluation on identical running statistics
        for bn, m, v in states:
            bn.running_mean, bn.running_var = m.copy(), v.copy()
        return out

    return gradcheck_report(loss, [x] + model.parameters(), eps=1e-5, max_per_input=max_per_input,
                            seed=seed, floor=1e-6, kink_tol=GRADCHECK_BOUND)


# -- reports --------------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.3e}"


def report_text(results: Sequence[CheckResult]) -> str:
    width = max([len(r.name) for r in results] + [5])
    lines = [f"{'check':<{width}}  {'metric':>10}  {'bound':>10}  result"]
    for r in results:
        rel = "<=" if r.sense == "below" else ">"
        verdict = "PASS" if r.passed else "FAIL"
        note = f"  ({r.note})" if r.note else ""
        lines.append(f"{r.name:<{width}}  {_fmt(r.metric):>10}  {rel}{_fmt(r.bound):>8}  {verdict}{note}")
    total = sum(r.passed for r in results)
    lines.append(f"{total}/{len(results)} checks passed")
    return "\n".join(lines) + "\n"


def emit_report(results: Sequence[CheckResult], path) -> tuple[str, str]:
    """Write ``<path>.json`` and ``<path>.txt``; identical inputs give identical bytes."""
    path = str(path)
    stem = path[:-5] if path.endswith(".json") else path
    payload = {"checks": [asdict(r) for r in results], "passed": all(r.passed for r in results)}
    for c in payload["checks"]:
        c["metric"] = float(f"{c['metric']:.6e}")
    js = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    txt = report_text(results)
    container.atomic_write_text(stem + ".json", js)
    container.atomic_write_text(stem + ".txt", txt)
    return stem + ".json", stem + ".txt"


def run_suite(suite: str, model: Model | None = None, images: np.ndarray | None = None,
              seed: int = 0) -> list[CheckResult]:
    """``rot90``, ``continuous``, ``formulas`` or ``all``."""
    if suite not in ("rot90", "continuous", "formulas", "all"):
        raise ValueError(f"unknown suite {suite!r}")
    results: list[CheckResult] = []
    if suite in ("formulas", "all"):
        results += check_invariant_formulas(seed=seed)
        results += check_moving_frame(seed=seed)
    if suite in ("rot90", "all"):
        if model is None:
            raise ValueError("rot90 suite needs a model")
        if images is None:
            images = synthetic_blobs(seed, count=8, size=28, sigma_range=(1.5, 3.0))
        results.append(_judge("rot90 logit deviation", check_rot90_invariance(model, images), ROT90_BOUND))
    if suite in ("continuous", "all"):
        if model is None:
            raise ValueError("continuous suite needs a model")
        blobs = synthetic_blobs(seed)
        margin = 6 + 4 * max_sigma(model)
        for deg, err in check_continuous_equivariance(model_trunk(model), DEFAULT_ANGLES, blobs, margin):
            results.append(_judge(f"trunk equivariance {deg:g} deg", err, CONTINUOUS_BOUND))
    return results
