"""Optimization loop, evaluation, grid search and repeated runs."""
from __future__ import annotations

import itertools
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import container
from .data import Dataset, Splits, batches
from .model import Model, network_config
from .tensor import NonFiniteError, Parameter, Tape, softmax_cross_entropy

log = logging.getLogger(__name__)

DEFAULT_GRID = {"dropout": [0.0, 0.1, 0.2, 0.3], "weight_decay": [0.0, 1e-5, 1e-4, 1e-3]}
PRECISIONS = {"float32": np.float32, "float64": np.float64}


@dataclass
class Hyperparams:
    """Training and architecture settings; every field maps to a JSON config key."""

    lr: float = 1e-2
    lr_min: float = 1e-5
    batch_size: int = 64
    epochs: int = 100
    weight_decay: float = 0.0
    dropout: float = 0.0
    seed: int = 0
    precision: str = "float32"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    order: int = 2
    k: int = 20
    hidden: int | None = None
    padding: str = "zero"
    eval_batch_size: int = 256
    test_subset: int | None = None
    recalibrate: int = 1024

    def validate(self) -> None:
        if self.lr < 0 or self.lr_min < 0:
            raise ValueError("learning rates must be non-negative")
        if self.recalibrate < 0:
            raise ValueError("recalibrate must be non-negative")
        if self.batch_size < 1 or self.epochs < 1 or self.eval_batch_size < 1:
            raise ValueError("batch sizes and epochs must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(PRECISIONS)}")
        if self.order not in (2, 3) or self.k < 1:
            raise ValueError("order must be 2 or 3 and k positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown hyperparameters: {sorted(unknown)}")
        hp = cls(**d)
        hp.validate()
        return hp


def load_config(path) -> tuple[Hyperparams, dict]:
    """Read a JSON config: hyperparameter keys plus an optional ``grid`` object."""
    with open(path) as f:
        raw = json.load(f)
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    grid = raw.pop("grid", None) or dict(DEFAULT_GRID)
    for key, vals in grid.items():
        if key not in {f.name for f in fields(Hyperparams)} or not isinstance(vals, list) or not vals:
            raise ValueError(f"{path}: bad grid axis {key!r}")
    return Hyperparams.from_dict(raw), grid


def build_model(hp: Hyperparams) -> Model:
    model = Model(network_config(hp.order, hp.k, hidden=hp.hidden, dropout=hp.dropout,
                                 padding=hp.padding, seed=hp.seed))
    if hp.precision != "float32":
        model.astype(PRECISIONS[hp.precision])
    return model


# -- optimizer ------------------------------------------------------------------

class AdamW:
    """Adaptive moments with weight decay applied directly to the weights."""

    def __init__(self, params: list[Parameter], decayed: list[Parameter], beta1=0.9, beta2=0.999,
                 eps=1e-8, weight_decay=0.0):
        self.params = params
        self.decayed = {id(p) for p in decayed}
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if not p.trainable:
                continue
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            if self.weight_decay and id(p) in self.decayed:
                p.data -= (lr * self.weight_decay) * p.data
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype, copy=False)


def cosine_lr(step: int, total: int, lr: float, lr_min: float) -> float:
    """Cosine decay from ``lr`` at step 0 to ``lr_min`` at ``total``."""
    if total <= 1:
        return lr
    frac = min(step / (total - 1), 1.0)
    return lr_min + 0.5 * (lr - lr_min) * (1.0 + math.cos(math.pi * frac))


# -- records --------------------------------------------------------------------

class TrainingDiverged(RuntimeError):
    def __init__(self, record: "RunRecord"):
        super().__init__(record.diagnostic)
        self.record = record


@dataclass
class RunRecord:
    config: dict
    train_loss: list[float] = field(default_factory=list)
    val_error: list[float] = field(default_factory=list)
    step_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_error: float | None = None
    test_error: float | None = None
    wall_time: float = 0.0
    status: str = "running"
    diagnostic: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "RunRecord":
        return cls(**json.loads(line))


def write_records(path, records) -> None:
    container.atomic_write_text(path, "".join(r.to_json() + "\n" for r in records))


def read_records(path) -> list[RunRecord]:
    with open(path) as f:
        return [RunRecord.from_json(line) for line in f if line.strip()]


# -- loops ----------------------------------------------------------------------

def predict(model: Model, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Class predictions in inference mode."""
    out = []
    for lo in range(0, len(images), batch_size):
        logits = model.forward(images[lo:lo + batch_size], training=False).data
        out.append(np.argmax(logits, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def evaluate(model: Model, dataset: Dataset, batch_size: int = 256) -> float:
    """Classification error in percent."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty split")
    pred = predict(model, dataset.images, batch_size)
    return float(100.0 * np.mean(pred != dataset.labels))


def train_step(model: Model, opt: AdamW, images, labels, lr: float, seed: int, step: int) -> float:
    model.zero_grad()
    with Tape() as tape:
        logits = model.forward(images, training=True, seed=seed, step=step)
        loss = softmax_cross_entropy(logits, labels)
    tape.backward(loss)
    value = float(loss.item())
    if not math.isfinite(value):
        raise NonFiniteError("loss is not finite")
    opt.step(lr)
    return value


def train(model: Model, splits: Splits | Dataset, hp: Hyperparams, checkpoint=None,
          val: Dataset | None = None, test: Dataset | None = None) -> RunRecord:
    """Train ``model`` in place, finishing with its best-validation state.

    ``splits`` is either a :class:`Splits` or a bare training set (then
    ``val``/``test`` are optional).  Raises :class:`TrainingDiverged`, whose
    ``record`` carries the diagnostic, when the loss stops being finite.
    """
    hp.validate()
    if isinstance(splits, Splits):
        train_set, val, test = splits.train, splits.val, splits.test
    else:
        train_set = splits
    if test is not None and hp.test_subset is not None:
        test = test.subset(np.arange(min(hp.test_subset, len(test))))
    if len(train_set) == 0:
        raise ValueError("empty training set")
    record = RunRecord(config=hp.to_dict())
    opt = AdamW(model.parameters(), model.decayed_parameters(), hp.beta1, hp.beta2, hp.adam_eps,
                hp.weight_decay)
    steps_per_epoch = math.ceil(len(train_set) / hp.batch_size)
    total = steps_per_epoch * hp.epochs
    best_state, best_err = None, math.inf
    # fixed subset for end-of-epoch batch-norm statistics
    calib = train_set.images[:hp.recalibrate]
    start = time.perf_counter()
    step = 0
    for epoch in range(hp.epochs):
        losses = []
        for images, labels in batches(train_set, hp.batch_size, shuffle_seed=hp.seed, epoch=epoch):
            lr = cosine_lr(step, total, hp.lr, hp.lr_min)
            try:
                value = train_step(model, opt, images, labels, lr, hp.seed, step)
            except NonFiniteError as exc:
                record.status = "diverged"
                record.diagnostic = f"epoch {epoch} step {step} lr {lr:.3g}: {exc}"
                record.wall_time = time.perf_counter() - start
                log.error("training diverged: %s", record.diagnostic)
                raise TrainingDiverged(record) from exc
            losses.append(value)
            record.step_loss.append(value)
            step += 1
        record.train_loss.append(float(np.mean(losses)))
        if hp.recalibrate:
            model.recalibrate(calib, hp.eval_batch_size)
        if val is not None and len(val):
            err = evaluate(model, val, hp.eval_batch_size)
            record.val_error.append(err)
            if err < best_err:
                best_err, best_state = err, model.copy_state()
                record.best_epoch, record.best_val_error = epoch, err
                if checkpoint is not None:
                    model.save(checkpoint)
        log.info("epoch %d loss %.4f val %s (%.0fs)", epoch, record.train_loss[-1],
                 f"{record.val_error[-1]:.2f}%" if record.val_error else "-", time.perf_counter() - start)
    if best_state is not None:
        model.load_state(best_state)
    else:
        record.best_epoch = hp.epochs - 1
        if checkpoint is not None:
            model.save(checkpoint)
    if test is not None and len(test):
        record.test_error = evaluate(model, test, hp.eval_batch_size)
    record.wall_time = time.perf_counter() - start
    record.status = "ok"
    return record


def run(hp: Hyperparams, splits: Splits, checkpoint=None) -> tuple[Model, RunRecord]:
    model = build_model(hp)
    return model, train(model, splits, hp, checkpoint)


def grid_search(hp: Hyperparams, splits: Splits, grid: dict | None = None, budget: int | None = None):
    """Train one model per grid point; select on validation error.

    ``budget`` caps the epochs of each trial.  Returns ``(best_hp, table)``
    where ``table`` lists one dict per trial in grid order.
    """
    grid = grid or DEFAULT_GRID
    keys = sorted(grid)
    table = []
    best, best_err = None, math.inf
    for values in itertools.product(*(grid[k] for k in keys)):
        trial = replace(hp, **dict(zip(keys, values)))
        if budget is not None:
            trial = replace(trial, epochs=min(trial.epochs, budget))
        model = build_model(trial)
        try:
            rec = train(model, splits.train, trial, val=splits.val)
            err = rec.best_val_error if rec.best_val_error is not None else math.inf
            status = rec.status
        except TrainingDiverged as exc:
            err, status = math.inf, exc.record.status
        row = dict(zip(keys, values), val_error=err if math.isfinite(err) else None, status=status)
        table.append(row)
        log.info("grid %s -> %s", dict(zip(keys, values)), err)
        if err < best_err:
            best, best_err = trial, err
    if best is None:
        raise RuntimeError("every grid trial diverged")
    return replace(best, epochs=hp.epochs), table


def repeat_runs(hp: Hyperparams, splits: Splits, count: int = 10) -> dict:
    """Test error mean and standard deviation over ``count`` seeds."""
    errors = []
    for i in range(count):
        _, rec = run(replace(hp, seed=hp.seed + i), splits)
        errors.append(rec.test_error)
    arr = np.asarray(errors, dtype=np.float64)
    return {"errors": errors, "mean": float(arr.mean()), "std": float(arr.std(ddof=1)) if count > 1 else 0.0}


def format_table(table: list[dict]) -> str:
    if not table:
        return ""
    keys = list(table[0])
    lines = ["\t".join(keys)]
    for row in table:
        lines.append("\t".join(f"{row[k]:.4g}" if isinstance(row[k], float) else str(row[k]) for k in keys))
    return "\n".join(lines) + "\n"


def save_json(path, obj) -> None:
    container.atomic_write_text(Path(path), json.dumps(obj, sort_keys=True, indent=2) + "\n")
