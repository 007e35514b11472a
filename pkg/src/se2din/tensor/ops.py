"""Differentiable operations on channels-last image batches.

Image tensors are ``B x H x W x C`` (a single ``H x W x C`` image is also
accepted where noted).  Spatial filtering is correlation, not flipped
convolution.
"""
from __future__ import annotations

from functools import lru_cache
from typing import Sequence

import numpy as np

from .. import kernels
from .core import Parameter, ShapeError, Tensor, as_tensor, make_output

PADDING_MODES = ("zero", "reflect")


# ---------------------------------------------------------------------------
# padding helpers


def _reflect_index(src: np.ndarray, n: int) -> np.ndarray:
    # half-sample symmetric: -1 -> 0, n -> n-1
    m = np.mod(src, 2 * n)
    return np.where(m < n, m, 2 * n - 1 - m)


def _check_padding(padding: str) -> None:
    if padding not in PADDING_MODES:
        raise ValueError(f"padding must be one of {PADDING_MODES}, got {padding!r}")


@lru_cache(maxsize=512)
def _corr_matrix_cached(taps: tuple, n: int, padding: str, dtype: str) -> np.ndarray:
    h = np.asarray(taps, dtype=np.float64)
    r = len(h) // 2
    o = np.repeat(np.arange(n), len(h))
    t = np.tile(np.arange(-r, r + 1), n)
    w = np.tile(h, n)
    src = o + t
    m = np.zeros((n, n))
    if padding == "zero":
        keep = (src >= 0) & (src < n)
        np.add.at(m, (o[keep], src[keep]), w[keep])
    else:
        np.add.at(m, (o, _reflect_index(src, n)), w)
    out = m.astype(dtype)
    out.setflags(write=False)
    return out


def correlation_matrix(h: np.ndarray, n: int, padding: str = "zero", dtype=np.float64) -> np.ndarray:
    """Matrix ``M`` with ``M @ x`` equal to the padded 1-D correlation of ``x`` with ``h``."""
    _check_padding(padding)
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 1 or len(h) % 2 == 0:
        raise ShapeError("1-D filter must have odd length")
    return _corr_matrix_cached(tuple(h.tolist()), int(n), padding, np.dtype(dtype).name)


def _pad_matrix(n: int, r: int, padding: str) -> np.ndarray:
    p = np.zeros((n + 2 * r, n))
    src = np.arange(-r, n + r)
    if padding == "zero":
        keep = (src >= 0) & (src < n)
        p[np.nonzero(keep)[0], src[keep]] = 1.0
    else:
        np.add.at(p, (np.arange(n + 2 * r), _reflect_index(src, n)), 1.0)
    return p


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ShapeError(f"expected H x W x C or B x H x W x C, got shape {x.shape}")
    return x, False


# ---------------------------------------------------------------------------
# spatial filtering


def conv2d_depthwise(x, kernels: Sequence[np.ndarray], padding: str = "zero") -> Tensor:
    """Correlate every input channel with every kernel.

    Output channel ``c * K + k`` holds input channel ``c`` correlated with
    ``kernels[k]``; spatial size is preserved.
    """
    _check_padding(padding)
    x = as_tensor(x)
    if len(kernels) == 0:
        raise ShapeError("empty kernel list")
    ks = [np.asarray(k, dtype=np.float64) for k in kernels]
    for k in ks:
        if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
            raise ShapeError(f"kernel support must be odd and square, got {k.shape}")
    R = max(k.shape[0] // 2 for k in ks)
    xb, squeeze = _as_batch(x.data)
    B, H, W, C = xb.shape
    K = len(ks)
    dt = xb.dtype
    if padding == "zero":
        xp = np.pad(xb, ((0, 0), (R, R), (R, R), (0, 0)))
    else:
        xp = np.pad(xb, ((0, 0), (R, R), (R, R), (0, 0)), mode="symmetric")
    out = np.zeros((B, H, W, C, K), dtype=dt)
    taps = []
    for ki, k in enumerate(ks):
        r = k.shape[0] // 2
        for dy in range(-r, r + 1):
            for dx in range(-r, r + 1):
                w = k[dy + r, dx + r]
                if w != 0.0:
                    taps.append((ki, R + dy, R + dx, dt.type(w)))
    for ki, oy, ox, w in taps:
        out[..., ki] += w * xp[:, oy:oy + H, ox:ox + W, :]
    data = out.reshape(B, H, W, C * K)
    if squeeze:
        data = data[0]

    def backward(g):
        gb = g[None] if squeeze else g
        gb = gb.reshape(B, H, W, C, K)
        gp = np.zeros((B, H + 2 * R, W + 2 * R, C), dtype=gb.dtype)
        for ki, oy, ox, w in taps:
            gp[:, oy:oy + H, ox:ox + W, :] += w * gb[..., ki]
        if padding == "zero":
            gx = gp[:, R:R + H, R:R + W, :]
        else:
            ph = _pad_matrix(H, R, padding).astype(gp.dtype)
            pw = _pad_matrix(W, R, padding).astype(gp.dtype)
            gx = np.einsum("ph,bpqc,qw->bhwc", ph, gp, pw, optimize=True)
        gx = np.ascontiguousarray(gx)
        return (gx[0] if squeeze else gx,)

    return make_output(data, (x,), backward, "conv2d_depthwise")


def conv2d_separable(
    x,
    x_filters: Sequence[np.ndarray],
    y_filters: Sequence[np.ndarray],
    pairs: Sequence[tuple[int, int]],
    padding: str = "zero",
) -> Tensor:
    """Depthwise correlation with separable kernels ``k[y, x] = yf[y] * xf[x]``.

    ``pairs[t] = (ix, iy)`` selects the filters of output kernel ``t``;
    output channel ``c * T + t`` matches :func:`conv2d_depthwise` with the
    corresponding outer-product kernels.  Each pass is a single dense matrix
    product against a banded correlation matrix that has the padding folded
    in.
    """
    _check_padding(padding)
    x = as_tensor(x)
    if len(pairs) == 0:
        raise ShapeError("empty kernel list")
    xb, squeeze = _as_batch(x.data)
    B, H, W, C = xb.shape
    dt = xb.dtype
    ax, ay, T = len(x_filters), len(y_filters), len(pairs)
    kx = np.concatenate([correlation_matrix(f, W, padding, dt) for f in x_filters])
    ky = np.concatenate([correlation_matrix(f, H, padding, dt) for f in y_filters])

    # x pass: one (ax*W x W) product per row of every image
    y1 = np.matmul(kx, xb.reshape(B * H, W, C))  # (B*H, ax*W, C)
    # y pass: one (ay*H x H) product per image
    z = np.matmul(ky, y1.reshape(B, H, ax * W * C)).reshape(B, ay, H, ax, W, C)
    out = np.empty((B, H, W, C, T), dtype=dt)
    for t, (ix, iy) in enumerate(pairs):
        out[..., t] = z[:, iy, :, ix]
    data = out.reshape(B, H, W, C * T)
    if squeeze:
        data = data[0]

    def backward(g):
        gb = (g[None] if squeeze else g).reshape(B, H, W, C, T)
        gz = np.zeros((B, ay, H, ax, W, C), dtype=gb.dtype)
        for t, (ix, iy) in enumerate(pairs):
            gz[:, iy, :, ix] += gb[..., t]
        gy1 = np.matmul(ky.T, gz.reshape(B, ay * H, ax * W * C))  # (B, H, ax*W*C)
        gx = np.matmul(kx.T, gy1.reshape(B * H, ax * W, C)).reshape(B, H, W, C)
        return (gx[0] if squeeze else gx,)

    return make_output(data, (x,), backward, "conv2d_separable")


# ---------------------------------------------------------------------------
# pointwise layers


def conv1x1(x, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-pixel affine map ``out = x @ W + b``."""
    x = as_tensor(x)
    cin = x.shape[-1]
    if weight.ndim != 2 or weight.shape[0] != cin:
        raise ShapeError(f"weight {weight.shape} does not match {cin} input channels")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeError(f"bias {bias.shape} does not match weight {weight.shape}")
    xf = x.data.reshape(-1, cin)
    out = xf @ weight.data
    if bias is not None:
        out += bias.data
    data = out.reshape(x.shape[:-1] + (weight.shape[1],))
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gf = g.reshape(-1, weight.shape[1])
        gx = (gf @ weight.data.T).reshape(x.shape) if x.requires_grad else None
        gw = xf.T @ gf if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, gf.sum(axis=0)

    return make_output(data, inputs, backward, "conv1x1")


class BatchNormState:
    """Running statistics of one batch-norm layer."""

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5, dtype=np.float32):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps


def batchnorm(x, gamma: Tensor, beta: Tensor, state: BatchNormState, training: bool) -> Tensor:
    """Per-channel normalization over all but the last axis."""
    x = as_tensor(x)
    C = x.shape[-1]
    xf = x.data.reshape(-1, C)
    n = xf.shape[0]
    if n == 0:
        raise ShapeError("batchnorm on an empty batch")
    dt = x.dtype
    if training:
        mean, var = kernels.channel_moments(xf)
        m = state.momentum
        unbiased = var * (n / (n - 1)) if n > 1 else var
        rdt = state.running_mean.dtype
        state.running_mean = (m * state.running_mean + (1 - m) * mean).astype(rdt)
        state.running_var = (m * state.running_var + (1 - m) * unbiased).astype(rdt)
    else:
        mean, var = state.running_mean, state.running_var
    mean = np.asarray(mean, dtype=np.float64)
    inv = 1.0 / np.sqrt(np.asarray(var, dtype=np.float64) + state.eps)
    xhat, out = kernels.normalize_affine(xf, mean, inv, gamma.data, beta.data)
    data = out.reshape(x.shape)

    def backward(g):
        gx, ggamma, gbeta = kernels.batchnorm_backward(g.reshape(-1, C), xhat, gamma.data, inv, training)
        return gx.reshape(x.shape), ggamma, gbeta

    return make_output(data, (x, gamma, beta), backward, "batchnorm")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    data = np.where(mask, x.data, x.dtype.type(0))

    def backward(g):
        return (g * mask,)

    return make_output(data, (x,), backward, "relu")


def dropout(x, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; the identity outside training or when ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs a generator")
    keep = rng.random(x.shape, dtype=np.float64 if x.dtype == np.float64 else np.float32) >= rate
    scale = x.dtype.type(1.0 / (1.0 - rate))
    mask = keep * scale
    data = x.data * mask

    def backward(g):
        return (g * mask,)

    return make_output(data, (x,), backward, "dropout")


def residual_add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"residual_add shape mismatch {a.shape} vs {b.shape}")

    def backward(g):
        return g, g

    return make_output(a.data + b.data, (a, b), backward, "residual_add")


def global_maxpool(x) -> Tensor:
    """Per-channel spatial maximum: ``(B, H, W, C) -> (B, C)`` or ``(H, W, C) -> (C,)``."""
    x = as_tensor(x)
    xb, squeeze = _as_batch(x.data)
    B, H, W, C = xb.shape
    flat = xb.reshape(B, H * W, C)
    idx = flat.argmax(axis=1)  # first maximum wins ties
    data = np.take_along_axis(flat, idx[:, None, :], axis=1)[:, 0, :]
    if squeeze:
        data = data[0]

    def backward(g):
        gb = g[None] if squeeze else g
        gx = np.zeros_like(flat)
        np.put_along_axis(gx, idx[:, None, :], gb[:, None, :], axis=1)
        gx = gx.reshape(B, H, W, C)
        return (gx[0] if squeeze else gx,)

    return make_output(data, (x,), backward, "global_maxpool")


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} and labels {labels.shape} disagree")
    B, C = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ValueError(f"labels must lie in [0, {C})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    logp = z - logsum[:, None]
    rows = np.arange(B)
    loss = -logp[rows, labels].mean()
    data = np.asarray(loss, dtype=logits.dtype)

    def backward(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (p * (g / B),)

    return make_output(data, (logits,), backward, "softmax_cross_entropy")


# ---------------------------------------------------------------------------
# plumbing


def take_channels(x, index: Sequence[int]) -> Tensor:
    """Gather channels ``index`` along the last axis."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    data = np.ascontiguousarray(x.data[..., index])

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (Ellipsis, index), g)
        return (gx,)

    return make_output(data, (x,), backward, "take_channels")


def interleave_channels(parts: Sequence[Tensor], widths: Sequence[int]) -> Tensor:
    """Concatenate per-group channel blocks.

    ``parts[i]`` has ``q * widths[i]`` channels laid out ``c * widths[i] + m``;
    the result has ``q * sum(widths)`` channels laid out group by group.
    """
    parts = [as_tensor(p) for p in parts]
    lead = parts[0].shape[:-1]
    q = parts[0].shape[-1] // widths[0]
    for p, w in zip(parts, widths):
        if p.shape[:-1] != lead or p.shape[-1] != q * w:
            raise ShapeError("interleave_channels: inconsistent part shapes")
    data = np.concatenate([p.data.reshape(lead + (q, w)) for p, w in zip(parts, widths)], axis=-1)
    data = data.reshape(lead + (q * sum(widths),))
    offsets = np.cumsum([0] + list(widths))

    def backward(g):
        gq = g.reshape(lead + (q, int(offsets[-1])))
        return tuple(
            np.ascontiguousarray(gq[..., offsets[i]:offsets[i + 1]]).reshape(parts[i].shape)
            for i in range(len(parts))
        )

    return make_output(data, parts, backward, "interleave_channels")


def weighted_sum(x, weights: np.ndarray | None = None) -> Tensor:
    """Scalar ``sum(x * weights)`` (plain sum when ``weights`` is None)."""
    x = as_tensor(x)
    w = np.ones_like(x.data) if weights is None else np.asarray(weights, dtype=x.dtype)
    if w.shape != x.shape:
        raise ShapeError("weights must match x")
    data = np.asarray((x.data * w).sum(), dtype=x.dtype)

    def backward(g):
        return (g * w,)

    return make_output(data, (x,), backward, "weighted_sum")


__all__ = [
    "BatchNormState",
    "Parameter",
    "batchnorm",
    "conv1x1",
    "conv2d_depthwise",
    "conv2d_separable",
    "correlation_matrix",
    "dropout",
    "global_maxpool",
    "interleave_channels",
    "relu",
    "residual_add",
    "softmax_cross_entropy",
    "take_channels",
    "weighted_sum",
]
