import json
import math
from dataclasses import replace

import numpy as np
import pytest

from se2din import data, train
from se2din.data import Dataset, Splits
from se2din.tensor import Parameter
from se2din.train import AdamW, Hyperparams, RunRecord, TrainingDiverged

TINY = Hyperparams(order=2, k=3, epochs=2, batch_size=20, lr=0.01, seed=0, recalibrate=40)


def _small(splits, n=(40, 20, 20)):
    return Splits(*(splits.get(name).subset(np.arange(k)) for name, k in zip(("train", "val", "test"), n)))


class TestHyperparams:
    def test_defaults_valid(self):
        Hyperparams().validate()

    @pytest.mark.parametrize("bad", [dict(lr=-1), dict(batch_size=0), dict(dropout=1.0), dict(order=4),
                                     dict(precision="float16"), dict(weight_decay=-1e-3), dict(seed=-1)])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            replace(Hyperparams(), **bad).validate()

    def test_unknown_key(self):
        with pytest.raises(ValueError):
            Hyperparams.from_dict({"learning_rate": 0.1})

    def test_config_file(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"k": 7, "grid": {"dropout": [0.0, 0.5]}}))
        hp, grid = train.load_config(tmp_path / "c.json")
        assert hp.k == 7 and grid == {"dropout": [0.0, 0.5]}
        (tmp_path / "d.json").write_text(json.dumps({"epochs": 3}))
        assert train.load_config(tmp_path / "d.json")[1] == train.DEFAULT_GRID

    def test_bad_grid(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"grid": {"momentum": [0.9]}}))
        with pytest.raises(ValueError):
            train.load_config(tmp_path / "c.json")

    def test_fixture_config(self, fixtures):
        hp, _ = train.load_config(fixtures / "tiny_config.json")
        assert (hp.order, hp.k, hp.epochs) == (2, 4, 3)


class TestOptimizer:
    def _reference_adam(self, x0, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
        x, m, v = x0.copy(), np.zeros_like(x0), np.zeros_like(x0)
        for t, g in enumerate(grads, 1):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            x = x - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
        return x

    def test_matches_reference_adam(self, rng):
        p = Parameter(rng.normal(size=(3, 2)), dtype=np.float64)
        x0 = p.data.copy()
        grads = [rng.normal(size=(3, 2)) for _ in range(5)]
        opt = AdamW([p], [p])
        for g in grads:
            p.grad = g.copy()
            opt.step(0.01)
        np.testing.assert_allclose(p.data, self._reference_adam(x0, grads, 0.01), rtol=1e-12)

    def test_decoupled_weight_decay(self):
        w = Parameter(np.full(3, 2.0), dtype=np.float64)
        b = Parameter(np.full(3, 2.0), dtype=np.float64)
        opt = AdamW([w, b], [w], weight_decay=0.1)
        opt.step(0.5)  # zero gradients: only decay moves w
        np.testing.assert_allclose(w.data, 2.0 * (1 - 0.05))
        np.testing.assert_array_equal(b.data, 2.0)

    def test_cosine_schedule(self):
        assert train.cosine_lr(0, 100, 1e-3, 1e-5) == 1e-3
        assert train.cosine_lr(99, 100, 1e-3, 1e-5) == pytest.approx(1e-5)
        assert train.cosine_lr(49.5, 100, 1.0, 0.0) == pytest.approx(0.5)
        assert train.cosine_lr(5, 1, 0.1, 0.0) == 0.1


class TestTraining:
    def test_zero_learning_rate_keeps_parameters(self, mini_splits):
        hp = replace(TINY, lr=0.0, lr_min=0.0, epochs=1)
        model = train.build_model(hp)
        before = [p.data.copy() for p in model.parameters()]
        train.train(model, _small(mini_splits), hp)
        for a, p in zip(before, model.parameters()):
            np.testing.assert_array_equal(a, p.data)

    def test_deterministic(self, mini_splits):
        s = _small(mini_splits)
        hp = replace(TINY, dropout=0.2)
        r1 = train.train(train.build_model(hp), s, hp)
        r2 = train.train(train.build_model(hp), s, hp)
        assert r1.step_loss == r2.step_loss
        assert r1.val_error == r2.val_error
        r3 = train.train(train.build_model(replace(hp, seed=1)), s, replace(hp, seed=1))
        assert r3.step_loss != r1.step_loss

    def test_record_contents(self, mini_splits, tmp_path):
        hp = replace(TINY, test_subset=10)
        model = train.build_model(hp)
        rec = train.train(model, _small(mini_splits), hp, checkpoint=tmp_path / "m.se2d")
        assert rec.status == "ok" and len(rec.train_loss) == 2 and len(rec.step_loss) == 4
        assert rec.best_val_error == min(rec.val_error)
        assert rec.test_error is not None and (rec.test_error * 10 / 100) == pytest.approx(round(rec.test_error / 10))
        assert (tmp_path / "m.se2d").exists()
        train.write_records(tmp_path / "r.jsonl", [rec, rec])
        back = train.read_records(tmp_path / "r.jsonl")
        assert back[1] == RunRecord.from_json(rec.to_json())

    def test_best_state_restored(self, mini_splits, tmp_path):
        s = _small(mini_splits)
        hp = replace(TINY, epochs=3)
        model = train.build_model(hp)
        rec = train.train(model, s, hp, checkpoint=tmp_path / "m.se2d")
        assert train.evaluate(model, s.val) == rec.best_val_error
        from se2din.model import Model

        assert train.evaluate(Model.load(tmp_path / "m.se2d"), s.val) == rec.best_val_error

    def test_divergence(self, mini_splits):
        s = _small(mini_splits)
        bad = Dataset(s.train.images.copy(), s.train.labels)
        bad.images[3, 5, 5, 0] = np.nan
        with pytest.raises(TrainingDiverged) as info:
            train.train(train.build_model(TINY), bad, TINY)
        assert info.value.record.status == "diverged"
        assert "step 0" in info.value.record.diagnostic

    def test_evaluate_batch_size_invariant(self, tiny_model, mini_splits):
        a = train.evaluate(tiny_model, mini_splits.test, 7)
        b = train.evaluate(tiny_model, mini_splits.test, 256)
        assert a == b

    def test_evaluate_fixture_checkpoint(self, tiny_model, mini_splits):
        assert train.evaluate(tiny_model, mini_splits.test) == pytest.approx(82.5)

    def test_evaluate_empty(self, tiny_model, mini_splits):
        with pytest.raises(ValueError):
            train.evaluate(tiny_model, mini_splits.test.subset(np.arange(0)))

    def test_grid_search(self, mini_splits):
        s = _small(mini_splits, (20, 20, 20))
        best, table = train.grid_search(TINY, s, {"dropout": [0.0, 0.3], "weight_decay": [0.0]}, budget=1)
        assert len(table) == 2 and best.epochs == TINY.epochs
        best_row = min(table, key=lambda r: r["val_error"])
        assert best.dropout == best_row["dropout"]
        assert "val_error" in train.format_table(table).splitlines()[0]

    def test_repeat_runs(self, mini_splits):
        s = _small(mini_splits, (20, 20, 20))
        out = train.repeat_runs(replace(TINY, epochs=1), s, count=2)
        assert len(out["errors"]) == 2
        assert out["mean"] == pytest.approx(np.mean(out["errors"]))

    def test_float64_precision(self, mini_splits):
        hp = replace(TINY, precision="float64", epochs=1)
        model = train.build_model(hp)
        train.train(model, _small(mini_splits), hp)
        assert all(p.data.dtype == np.float64 for p in model.parameters())

    def test_evaluate_order_invariant(self, tiny_model, mini_splits):
        perm = np.random.default_rng(0).permutation(len(mini_splits.test))
        assert train.evaluate(tiny_model, mini_splits.test.subset(perm)) == train.evaluate(tiny_model, mini_splits.test)

    @pytest.mark.slow
    def test_first_batch_loss_decreases(self, mini_splits):
        hp = Hyperparams(batch_size=20)
        model = train.build_model(hp)
        opt = AdamW(model.parameters(), model.decayed_parameters())
        images, labels = mini_splits.train.images[:20], mini_splits.train.labels[:20]
        losses = [train.train_step(model, opt, images, labels, hp.lr, 0, step) for step in range(50)]
        assert losses[-1] < losses[0]

    @pytest.mark.slow
    def test_memorizes_hundred_digits(self, fixtures):
        # Default hyperparameters, 100 rotated real digits, 200 epochs.
        base_train, base_test = data.load_mnist(fixtures / "mnist_mini")
        s = data.generate(base_train, base_test, seed=0, sizes=(100, 20, 40)).train
        hp = Hyperparams(epochs=200)
        model = train.build_model(hp)
        rec = train.train(model, s, hp)
        assert rec.train_loss[-1] < 0.05
        assert train.evaluate(model, s) == 0.0
