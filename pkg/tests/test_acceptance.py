"""Acceptance criteria, one pass/fail line each.

Criteria 7 to 9 need the real MNIST files: point ``SE2DIN_DATA_DIR`` at a
directory holding either the four IDX files or a dataset written by
``se2din generate-data``.  Without it those criteria report FAIL and the
tests are skipped.
"""
import math
import os
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from se2din import data, train, verify
from se2din.model import Model, build_network, param_count

FIXTURES = Path(__file__).parent / "fixtures"
LINES: list[str] = []

DESK_EPOCHS = int(os.environ.get("SE2DIN_DESK_EPOCHS", "20"))
DESK_TEST_SUBSET = 5000
TRAINED = {"trained order 2": "proxy_order2.se2d", "trained order 3": "proxy_order3.se2d"}


def report(number, title, detail, passed, elapsed=None, limit=None):
    if elapsed is not None and limit is not None:
        passed = passed and elapsed < limit
        detail += f"; {elapsed:.1f}s < {limit:g}s"
    line = f"[{'PASS' if passed else 'FAIL'}] {number}. {title}: {detail}"
    LINES.append(line)
    print(line)
    return passed


def _mnist_rot_test_images(count=100):
    """Rotated test images: the generated benchmark if present, else the bundled real-digit sample."""
    root = data.default_data_dir()
    if root is not None and (root / "mnist_rot.se2d").exists():
        return data.load_splits(root / "mnist_rot.se2d").test.images[:count], "MNIST-Rot test"
    train_base, test_base = data.load_mnist(FIXTURES / "mnist_mini")
    s = data.generate(train_base, test_base, seed=0, sizes=(40, 20, count))
    return s.test.images, "bundled MNIST sample, rotated"


def _desk_splits(mode):
    root = data.default_data_dir()
    if root is None:
        return None, "SE2DIN_DATA_DIR unset"
    cached = root / ("mnist_rot.se2d" if mode == "rotated" else "mnist_rot_unrotated.se2d")
    if cached.exists():
        s = data.load_splits(cached)
    else:
        try:
            mtrain, mtest = data.load_mnist(root)
        except FileNotFoundError as exc:
            return None, str(exc)
        s = data.generate(mtrain, mtest, seed=0, mode=mode)
        data.save_splits(cached, s, {"mode": mode, "seed": 0})
    if len(s.train) != data.TRAIN_SIZE or len(s.val) != data.VAL_SIZE or len(s.test) < DESK_TEST_SUBSET:
        return None, f"{cached} does not hold the 10000/2000/50000 benchmark"
    return s, ""


def _desk_hp(seed=0):
    return train.Hyperparams(seed=seed, epochs=DESK_EPOCHS, test_subset=DESK_TEST_SUBSET)


_desk_cache = {}


def _desk_run(mode):
    if mode not in _desk_cache:
        s, why = _desk_splits(mode)
        if s is None:
            _desk_cache[mode] = (None, why, 0.0)
        else:
            t = time.perf_counter()
            _, rec = train.run(_desk_hp(), s)
            _desk_cache[mode] = (rec, "", time.perf_counter() - t)
    return _desk_cache[mode]


def test_1_invariant_formulas():
    t = time.perf_counter()
    results = verify.check_invariant_formulas(trials=1000, angles=36)
    elapsed = time.perf_counter() - t
    shipped = [r for r in results if r.sense == "below"]
    printed = [r for r in results if r.sense == "above"]
    worst = max(r.metric for r in shipped)
    ok = report(1, "invariant formulas",
                f"{len(shipped)} formulas, max deviation {worst:.2e} < 1e-9; "
                f"printed I20 deviation {printed[0].metric:.3f} > 0.1",
                all(r.passed for r in results), elapsed, 10)
    assert ok


def test_2_moving_frame():
    t = time.perf_counter()
    eq, cs, pos = verify.check_moving_frame(trials=1000)
    elapsed = time.perf_counter() - t
    ok = report(2, "moving frame",
                f"equivariance {eq.metric:.2e}, cross-section residual {cs.metric:.2e} < 1e-10, "
                f"min u_x {pos.metric:.3f} > 0",
                eq.passed and cs.passed and pos.passed, elapsed, 5)
    assert ok


def test_3_rot90_invariance():
    t = time.perf_counter()
    images, source = _mnist_rot_test_images(100)
    models = {"random order 2": build_network(2, 20, seed=0), "random order 3": build_network(3, 15, seed=0)}
    models.update({name: Model.load(FIXTURES / f) for name, f in TRAINED.items()})
    devs = {name: verify.check_rot90_invariance(m, images) for name, m in models.items()}
    elapsed = time.perf_counter() - t
    worst = max(devs.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in devs.items())
    ok = report(3, "rot90 logit invariance",
                f"{len(images)} images ({source}); {detail}; max {worst:.1e} <= 1e-4",
                worst <= 1e-4, elapsed, 60)
    assert ok


def test_4_continuous_equivariance():
    t = time.perf_counter()
    blobs = verify.synthetic_blobs(0)
    models = {"random order 2": build_network(2, 20, seed=0), "random order 3": build_network(3, 15, seed=0)}
    models.update({name: Model.load(FIXTURES / f) for name, f in TRAINED.items()})
    rows = []
    for name, m in models.items():
        margin = 6 + 4 * verify.max_sigma(m)
        errs = verify.check_continuous_equivariance(verify.model_trunk(m), verify.DEFAULT_ANGLES, blobs, margin)
        rows.append((name, max(e for _, e in errs)))
    elapsed = time.perf_counter() - t
    worst = max(e for _, e in rows)
    detail = ", ".join(f"{n} {e:.2%}" for n, e in rows)
    ok = report(4, "continuous-angle trunk equivariance",
                f"worst over 15/30/45/60 deg: {detail}; <= 5%", worst <= 0.05, elapsed, 120)
    assert ok


def test_5_gradient_check():
    t = time.perf_counter()
    res = {order: verify.check_gradients(seed=0, order=order, training=False) for order in (2, 3)}
    elapsed = time.perf_counter() - t
    worst = max(r.worst for r in res.values())
    detail = ", ".join(f"order {o} {r.worst:.1e} ({r.compared} entries, {r.skipped} at kinks)" for o, r in res.items())
    ok = report(5, "gradient check", f"{detail}; < 1e-4", worst < 1e-4, elapsed, 60)
    assert ok


def test_6_parameter_counts():
    n2, n3 = param_count(build_network(2, 20)), param_count(build_network(3, 15))
    ok2 = abs(n2 - 13000) <= 0.25 * 13000
    ok3 = abs(n3 - 11000) <= 0.25 * 11000
    ok = report(6, "parameter counts",
                f"order 2 k=20: {n2} (13k +-25%), order 3 k=15: {n3} (11k +-25%)", ok2 and ok3)
    assert ok


def _skip_without_data(number, title, why):
    report(number, title, f"not run: {why}", False)
    pytest.skip(f"criterion {number} needs MNIST: {why}")


def test_7_desk_mnist_rot():
    rec, why, elapsed = _desk_run("rotated")
    if rec is None:
        _skip_without_data(7, "desk MNIST-Rot training", why)
    ok = report(7, "desk MNIST-Rot training",
                f"{DESK_EPOCHS} epochs, test error on {DESK_TEST_SUBSET} images {rec.test_error:.2f}% <= 5%",
                rec.test_error <= 5.0, elapsed, 3600)
    assert ok


def test_8_unrotated_training():
    rec, why, elapsed = _desk_run("unrotated-train")
    if rec is None:
        _skip_without_data(8, "non-rotated training", why)
    ok = report(8, "non-rotated training",
                f"rotated test error {rec.test_error:.2f}% <= 10% and < 20%",
                rec.test_error <= 10.0 and rec.test_error < 20.0, elapsed, 3600)
    assert ok


def test_9_determinism():
    first, why, _ = _desk_run("rotated")
    if first is None:
        _skip_without_data(9, "determinism", why)
    s, _ = _desk_splits("rotated")
    _, again = train.run(_desk_hp(), s)
    same = first.step_loss == again.step_loss and first.train_loss == again.train_loss
    ok = report(9, "determinism", f"{len(first.step_loss)} step losses bit-identical: {same}", same)
    assert ok
