import numpy as np
import pytest

from se2din.model import (
    BlockConfig,
    Model,
    NetworkConfig,
    build_network,
    forward,
    network_config,
    param_count,
    se2din_block,
)
from se2din.tensor import ShapeError, Tensor
from se2din.verify import synthetic_blobs


@pytest.fixture(scope="module")
def net2():
    return build_network(2, 6, seed=3)


@pytest.fixture(scope="module")
def net3():
    return build_network(3, 5, seed=4)


class TestConfig:
    def test_layout(self):
        cfg = network_config(2, 20)
        assert len(cfg.blocks) == 6
        assert [b.sigma for b in cfg.blocks] == [1.0, 1.0, 2.0, 2.0, 2.0, 2.0]
        assert [b.residual for b in cfg.blocks] == [False, True, True, True, True, False]
        assert cfg.blocks[0].in_channels == 1 and cfg.blocks[-1].out_channels == 10
        assert all(b.hidden == 20 for b in cfg.blocks)

    def test_round_trip(self):
        cfg = network_config(3, 15, dropout=0.2, padding="reflect")
        assert NetworkConfig.from_dict(cfg.to_dict()) == cfg

    @pytest.mark.parametrize("bad", [
        dict(order=4), dict(sigma=0.0), dict(hidden=0), dict(dropout=1.0), dict(residual=True, out_channels=3),
    ])
    def test_invalid_block(self, bad):
        kw = dict(order=2, sigma=1.0, in_channels=2, hidden=2, out_channels=2)
        kw.update(bad)
        with pytest.raises(ValueError):
            BlockConfig(**kw).validate()

    def test_mismatched_chain(self):
        cfg = NetworkConfig([BlockConfig(2, 1.0, 1, 3, 4), BlockConfig(2, 1.0, 3, 3, 10)])
        with pytest.raises(ValueError):
            Model(cfg)


class TestParamCount:
    def test_frozen_counts(self):
        assert param_count(build_network(2, 20)) == 12990
        assert param_count(build_network(3, 15)) == 12060

    def test_bands(self):
        assert abs(param_count(build_network(2, 20)) - 13000) <= 0.25 * 13000
        assert abs(param_count(build_network(3, 15)) - 11000) <= 0.25 * 11000

    def test_formula(self):
        # per block: (q*M + 1)*h + 2h + (h + 1)*k + 2k
        def block(q, m, h, k):
            return (q * m + 1) * h + 2 * h + (h + 1) * k + 2 * k

        k = 7
        expected = block(1, 5, k, k) + 4 * block(k, 5, k, k) + block(k, 5, k, 10)
        assert param_count(build_network(2, k)) == expected

    def test_pure_function_of_config(self):
        assert param_count(build_network(3, 9, seed=1)) == param_count(build_network(3, 9, seed=2))


class TestForward:
    def test_shapes(self, net2, rng):
        x = rng.uniform(size=(2, 17, 23, 1)).astype(np.float32)
        assert net2.trunk(x).shape == (2, 17, 23, 10)
        assert forward(net2, x).shape == (2, 10)

    def test_block_shape(self, net2, rng):
        out = se2din_block(Tensor(rng.uniform(size=(1, 12, 12, 1))), net2.blocks[0])
        assert out.shape == (1, 12, 12, 6)

    def test_block_channel_check(self, net2):
        with pytest.raises(ShapeError):
            se2din_block(Tensor(np.zeros((1, 8, 8, 2))), net2.blocks[0])

    def test_input_rank_check(self, net2):
        with pytest.raises(ShapeError):
            net2.forward(np.zeros((8, 8, 1), np.float32))

    def test_constant_input_uniform_output(self, net3):
        x = np.full((1, 20, 20, 1), 0.4, np.float32)
        out = se2din_block(Tensor(x), net3.blocks[0], padding="reflect").data
        np.testing.assert_allclose(out, np.broadcast_to(out[:, :1, :1], out.shape), atol=1e-6)

    @pytest.mark.parametrize("order", [2, 3])
    def test_zero_image_finite(self, order):
        logits = build_network(order, 4).forward(np.zeros((1, 28, 28, 1), np.float32)).data
        assert np.isfinite(logits).all()

    def test_deterministic_inference(self, net2, rng):
        x = rng.uniform(size=(2, 16, 16, 1)).astype(np.float32)
        np.testing.assert_array_equal(net2.forward(x).data, net2.forward(x).data)

    @pytest.mark.parametrize("name", ["net2", "net3"])
    def test_rot90_invariance(self, request, name):
        net = request.getfixturevalue(name)
        x = synthetic_blobs(7, count=3, size=28)
        base = net.forward(x).data
        for k in (1, 2, 3):
            rotated = np.rot90(x, k, axes=(1, 2)).copy()
            np.testing.assert_allclose(net.forward(rotated).data, base, atol=1e-4)

    def test_trunk_equivariance_rot90(self, net3):
        x = synthetic_blobs(8, count=2, size=24)
        base = net3.trunk(x).data
        rot = net3.trunk(np.rot90(x, 1, axes=(1, 2)).copy()).data
        np.testing.assert_allclose(rot, np.rot90(base, 1, axes=(1, 2)), atol=1e-4)

    def test_residual_wiring(self, net2, rng):
        x = Tensor(rng.uniform(size=(1, 10, 10, 1)).astype(np.float32))
        b = net2.blocks
        u = b[0].forward(x, False, None, "zero")
        for blk in b[1:5]:
            u = Tensor(u.data + blk.forward(u, False, None, "zero").data)
        u = b[5].forward(u, False, None, "zero")
        np.testing.assert_allclose(net2.trunk(x).data, u.data, atol=1e-6)


class TestTrainingMode:
    def test_dropout_depends_on_seed_and_step(self, rng):
        net = build_network(2, 4, dropout=0.5, seed=1)
        x = rng.uniform(size=(4, 12, 12, 1)).astype(np.float32)
        saved = net.copy_state()
        a = net.forward(x, training=True, seed=5, step=0).data
        net.load_state(saved)
        b = net.forward(x, training=True, seed=5, step=0).data
        net.load_state(saved)
        c = net.forward(x, training=True, seed=5, step=1).data
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_recalibrate_single_batch_equals_batch_stats(self, rng):
        net = build_network(2, 4, seed=2)
        x = rng.uniform(size=(6, 12, 12, 1)).astype(np.float32)
        net.recalibrate(x, batch_size=6)
        after = [(bn.running_mean.copy(), bn.running_var.copy()) for bn in net.batchnorm_states()]
        fresh = build_network(2, 4, seed=2)
        for bn in fresh.batchnorm_states():
            bn.momentum = 0.0
        fresh.forward(x, training=True)
        for (m, v), bn in zip(after, fresh.batchnorm_states()):
            np.testing.assert_allclose(m, bn.running_mean, rtol=1e-6)
            np.testing.assert_allclose(v, bn.running_var, rtol=1e-6)
        assert all(bn.momentum == 0.9 for bn in net.batchnorm_states())

    def test_recalibrate_averages_batches(self, rng):
        net = build_network(2, 3, seed=2)
        x = rng.uniform(size=(4, 10, 10, 1)).astype(np.float32)
        net.recalibrate(x, batch_size=2)
        bn = net.blocks[0].bn1
        means = []
        for half in (x[:2], x[2:]):
            probe = build_network(2, 3, seed=2)
            for s in probe.batchnorm_states():
                s.momentum = 0.0
            probe.forward(half, training=True)
            means.append(probe.blocks[0].bn1.running_mean)
        np.testing.assert_allclose(bn.running_mean, np.mean(means, axis=0), rtol=1e-5)


class TestPersistence:
    def test_save_load_identical(self, net3, tmp_path, rng):
        x = rng.uniform(size=(2, 14, 14, 1)).astype(np.float32)
        net3.blocks[2].bn1.running_mean[:] = 0.25
        net3.save(tmp_path / "m.se2d")
        back = Model.load(tmp_path / "m.se2d")
        assert back.config == net3.config
        np.testing.assert_array_equal(back.forward(x).data, net3.forward(x).data)

    def test_checkpoint_starts_with_magic(self, net2, tmp_path):
        net2.save(tmp_path / "m.se2d")
        raw = (tmp_path / "m.se2d").read_bytes()
        assert raw[:4] == b"SE2D"
        assert int.from_bytes(raw[4:8], "little") == 1

    def test_missing_tensor(self, net2):
        state = net2.copy_state()
        state.pop("block0.conv1.weight")
        with pytest.raises(ValueError):
            build_network(2, 6).load_state(state)

    def test_astype(self, rng):
        net = build_network(2, 3).astype(np.float64)
        x = rng.uniform(size=(1, 10, 10, 1))
        assert net.forward(x).dtype == np.float64
