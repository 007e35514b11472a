"""SE2DIN blocks and the residual invariant network."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import container, rng as rngmod
from .invariants import feature_count, invariant_features
from .scalespace import jet
from .tensor import (
    BatchNormState,
    Parameter,
    Tensor,
    batchnorm,
    conv1x1,
    dropout,
    global_maxpool,
    relu,
    residual_add,
)
from .tensor.core import ShapeError, as_tensor


@dataclass
class BlockConfig:
    order: int
    sigma: float
    in_channels: int
    hidden: int
    out_channels: int
    dropout: float = 0.0
    residual: bool = False

    @property
    def features(self) -> int:
        return self.in_channels * feature_count(self.order)

    def validate(self) -> None:
        if self.order not in (2, 3):
            raise ValueError(f"block order must be 2 or 3, got {self.order}")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if min(self.in_channels, self.hidden, self.out_channels) < 1:
            raise ValueError("channel counts must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.residual and self.in_channels != self.out_channels:
            raise ValueError("a residual block needs equal input and output widths")


@dataclass
class NetworkConfig:
    blocks: list[BlockConfig]
    classes: int = 10
    padding: str = "zero"
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    seed: int = 0

    def validate(self) -> None:
        if not self.blocks:
            raise ValueError("network needs at least one block")
        for b in self.blocks:
            b.validate()
        for prev, nxt in zip(self.blocks, self.blocks[1:]):
            if prev.out_channels != nxt.in_channels:
                raise ValueError("consecutive blocks disagree on channel counts")
        if self.blocks[-1].out_channels != self.classes:
            raise ValueError("last block must output one channel per class")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "NetworkConfig":
        d = dict(d)
        blocks = [BlockConfig(**b) for b in d.pop("blocks")]
        return NetworkConfig(blocks=blocks, **d)


def network_config(order: int, k: int, classes: int = 10, hidden: int | None = None,
                   dropout: float = 0.0, blocks: int = 6, padding: str = "zero",
                   seed: int = 0) -> NetworkConfig:
    """Six-block layout: two blocks at sigma 1, the rest at sigma 2; skip sums on all but first and last."""
    h = k if hidden is None else hidden
    cfgs = []
    for b in range(blocks):
        first, last = b == 0, b == blocks - 1
        cfgs.append(BlockConfig(
            order=order,
            sigma=1.0 if b < 2 else 2.0,
            in_channels=1 if first else k,
            hidden=h,
            out_channels=classes if last else k,
            dropout=dropout,
            residual=not (first or last),
        ))
    return NetworkConfig(cfgs, classes=classes, padding=padding, seed=seed)


class Block:
    def __init__(self, cfg: BlockConfig, index: int, gen: np.random.Generator, momentum: float, eps: float):
        self.cfg = cfg
        fin, h, k = cfg.features, cfg.hidden, cfg.out_channels
        p = f"block{index}."
        self.w1 = Parameter(gen.normal(0, np.sqrt(2.0 / fin), (fin, h)).astype(np.float32), p + "conv1.weight")
        self.b1 = Parameter(np.zeros(h, np.float32), p + "conv1.bias")
        self.g1 = Parameter(np.ones(h, np.float32), p + "bn1.gamma")
        self.beta1 = Parameter(np.zeros(h, np.float32), p + "bn1.beta")
        self.w2 = Parameter(gen.normal(0, np.sqrt(1.0 / h), (h, k)).astype(np.float32), p + "conv2.weight")
        self.b2 = Parameter(np.zeros(k, np.float32), p + "conv2.bias")
        self.g2 = Parameter(np.ones(k, np.float32), p + "bn2.gamma")
        self.beta2 = Parameter(np.zeros(k, np.float32), p + "bn2.beta")
        self.bn1 = BatchNormState(h, momentum, eps)
        self.bn2 = BatchNormState(k, momentum, eps)
        self.prefix = p

    def parameters(self) -> list[Parameter]:
        return [self.w1, self.b1, self.g1, self.beta1, self.w2, self.b2, self.g2, self.beta2]

    def decayed(self) -> list[Parameter]:
        return [self.w1, self.w2]

    def forward(self, u: Tensor, training: bool, gen: np.random.Generator | None, padding: str,
                use_dropout: bool = True) -> Tensor:
        cfg = self.cfg
        if u.shape[-1] != cfg.in_channels:
            raise ShapeError(f"block expects {cfg.in_channels} channels, got {u.shape[-1]}")
        feats = invariant_features(jet(u, cfg.order, cfg.sigma, padding), padding=padding).channels
        x = conv1x1(feats, self.w1, self.b1)
        x = batchnorm(x, self.g1, self.beta1, self.bn1, training)
        x = relu(x)
        x = dropout(x, cfg.dropout, gen, training and use_dropout)
        x = conv1x1(x, self.w2, self.b2)
        x = batchnorm(x, self.g2, self.beta2, self.bn2, training)
        return x


def se2din_block(u, block: Block, training: bool = False, gen: np.random.Generator | None = None,
                 padding: str = "zero") -> Tensor:
    """Jet, invariants, then two 1x1 convolutions with batch norm (ReLU and dropout after the first)."""
    return block.forward(as_tensor(u), training, gen, padding)


class Model:
    """Realized parameters and batch-norm statistics of a :class:`NetworkConfig`."""

    def __init__(self, config: NetworkConfig):
        config.validate()
        self.config = config
        self.blocks = []
        for i, bc in enumerate(config.blocks):
            gen = rngmod.stream(config.seed, rngmod.INIT, i)
            self.blocks.append(Block(bc, i, gen, config.bn_momentum, config.bn_eps))
        self.dtype = np.float32

    # -- parameters ---------------------------------------------------------

    def parameters(self) -> list[Parameter]:
        return [p for b in self.blocks for p in b.parameters()]

    def decayed_parameters(self) -> list[Parameter]:
        return [p for b in self.blocks for p in b.decayed()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def param_count(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def state(self) -> list[tuple[str, np.ndarray]]:
        """Named arrays in canonical order: per block, parameters then running stats."""
        out = []
        for b in self.blocks:
            out += [(b.w1.name, b.w1.data), (b.b1.name, b.b1.data), (b.g1.name, b.g1.data),
                    (b.beta1.name, b.beta1.data),
                    (b.prefix + "bn1.running_mean", b.bn1.running_mean),
                    (b.prefix + "bn1.running_var", b.bn1.running_var),
                    (b.w2.name, b.w2.data), (b.b2.name, b.b2.data), (b.g2.name, b.g2.data),
                    (b.beta2.name, b.beta2.data),
                    (b.prefix + "bn2.running_mean", b.bn2.running_mean),
                    (b.prefix + "bn2.running_var", b.bn2.running_var)]
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        params = {p.name: p for p in self.parameters()}
        expected = [name for name, _ in self.state()]
        missing = [n for n in expected if n not in arrays]
        if missing:
            raise ValueError(f"state lacks {missing[:3]}")
        for b in self.blocks:
            for bn, tag in ((b.bn1, "bn1"), (b.bn2, "bn2")):
                for stat in ("running_mean", "running_var"):
                    arr = np.asarray(arrays[f"{b.prefix}{tag}.{stat}"], dtype=self.dtype)
                    if arr.shape != getattr(bn, stat).shape:
                        raise ShapeError(f"{b.prefix}{tag}.{stat}: bad shape {arr.shape}")
                    setattr(bn, stat, arr.copy())
        for name, p in params.items():
            p.assign(np.asarray(arrays[name], dtype=self.dtype))

    def copy_state(self) -> dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self.state()}

    def astype(self, dtype) -> "Model":
        """Switch parameters and statistics to ``dtype`` in place."""
        self.dtype = np.dtype(dtype).type
        for p in self.parameters():
            p.astype(dtype)
        for b in self.blocks:
            for bn in (b.bn1, b.bn2):
                bn.running_mean = bn.running_mean.astype(dtype)
                bn.running_var = bn.running_var.astype(dtype)
        return self

    # -- evaluation ---------------------------------------------------------

    def trunk(self, x, training: bool = False, seed: int = 0, step: int = 0, use_dropout: bool = True) -> Tensor:
        """Equivariant feature map before pooling: ``B x H x W x classes``.

        ``training`` normalizes with batch statistics (and updates the running
        ones); ``use_dropout=False`` keeps dropout off even then.
        """
        u = as_tensor(x)
        if u.ndim != 4 or u.shape[-1] != self.config.blocks[0].in_channels:
            raise ShapeError(f"expected B x H x W x {self.config.blocks[0].in_channels}, got {u.shape}")
        if u.dtype != self.dtype:
            u = Tensor(u.data.astype(self.dtype))
        for i, b in enumerate(self.blocks):
            gen = None
            if training and use_dropout and b.cfg.dropout > 0:
                gen = rngmod.stream(seed, rngmod.DROPOUT, step * len(self.blocks) + i)
            out = b.forward(u, training, gen, self.config.padding, use_dropout)
            u = residual_add(u, out) if b.cfg.residual else out
        return u

    def forward(self, x, training: bool = False, seed: int = 0, step: int = 0, use_dropout: bool = True) -> Tensor:
        """Class logits ``B x classes`` via global max pooling of the trunk."""
        return global_maxpool(self.trunk(x, training, seed, step, use_dropout))

    def batchnorm_states(self) -> list[BatchNormState]:
        return [bn for b in self.blocks for bn in (b.bn1, b.bn2)]

    def recalibrate(self, images: np.ndarray, batch_size: int = 256) -> None:
        """Replace running statistics by the equal-weight average over batches of ``images``.

        Runs batch-statistics forward passes with dropout off and leaves the
        parameters untouched.
        """
        states = self.batchnorm_states()
        saved = [bn.momentum for bn in states]
        try:
            for i, lo in enumerate(range(0, len(images), batch_size)):
                for bn in states:
                    bn.momentum = i / (i + 1)
                self.forward(images[lo:lo + batch_size], training=True, use_dropout=False)
        finally:
            for bn, m in zip(states, saved):
                bn.momentum = m

    __call__ = forward

    # -- persistence --------------------------------------------------------

    def save(self, path) -> None:
        container.save(path, self.config.to_dict(), self.state())

    @staticmethod
    def load(path) -> "Model":
        header, tensors = container.load(path)
        model = Model(NetworkConfig.from_dict(header))
        model.load_state(dict(tensors))
        return model


def build_network(order: int, k: int, classes: int = 10, **kwargs) -> Model:
    return Model(network_config(order, k, classes, **kwargs))


def param_count(model: Model) -> int:
    return model.param_count()


def forward(model: Model, batch, training: bool = False) -> Tensor:
    return model.forward(batch, training)
