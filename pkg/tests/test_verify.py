import json

import numpy as np
import pytest

from se2din import verify
from se2din.model import build_network
from se2din.tensor import ShapeError


@pytest.fixture(scope="module")
def random_model():
    return build_network(2, 6, seed=11)


class TestFormulas:
    def test_suite_passes(self):
        results = verify.check_invariant_formulas(trials=200, angles=12)
        assert all(r.passed for r in results), [r for r in results if not r.passed]
        printed = [r for r in results if r.sense == "above"]
        assert len(printed) == 1 and printed[0].metric > 0.1

    def test_suite_covers_all_invariants(self):
        names = [n for n, *_ in verify.formula_suite()]
        for key in ("I00", "I10", "I20", "I11", "I02", "regularized J20", "derivative feature E4"):
            assert key in names

    def test_moving_frame(self):
        results = verify.check_moving_frame(trials=300)
        assert [r.passed for r in results] == [True, True, True]


class TestEquivariance:
    def test_rot90(self, random_model):
        images = verify.synthetic_blobs(1, count=4, size=28, sigma_range=(1.5, 3.0))
        assert verify.check_rot90_invariance(random_model, images) <= verify.ROT90_BOUND

    def test_rot90_nonsquare(self, random_model):
        with pytest.raises(ShapeError):
            verify.check_rot90_invariance(random_model, np.zeros((1, 28, 20, 1)))

    def test_continuous(self, random_model):
        rows = verify.check_continuous_equivariance(verify.model_trunk(random_model), (30.0, 45.0),
                                                    verify.synthetic_blobs(2, count=2), 6 + 4 * 2.0)
        assert [d for d, _ in rows] == [30.0, 45.0]
        assert max(e for _, e in rows) <= verify.CONTINUOUS_BOUND

    def test_continuous_grid_angles(self, random_model):
        rows = dict(verify.check_continuous_equivariance(verify.model_trunk(random_model), (0.0, 90.0),
                                                         verify.synthetic_blobs(2, count=2), 6 + 4 * 2.0))
        assert rows[0.0] == 0.0
        assert rows[90.0] <= 1e-4

    def test_continuous_detects_non_equivariant_map(self):
        # shifting by one pixel commutes with nothing
        rows = verify.check_continuous_equivariance(lambda x: np.roll(x, 3, axis=2), (45.0,),
                                                    verify.synthetic_blobs(3, count=1), 10)
        assert rows[0][1] > verify.CONTINUOUS_BOUND

    def test_blobs(self):
        b = verify.synthetic_blobs(0, count=2, size=32)
        assert b.shape == (2, 32, 32, 1) and b.dtype == np.float32
        assert b.max() == pytest.approx(1.0)
        np.testing.assert_array_equal(b, verify.synthetic_blobs(0, count=2, size=32))

    def test_interior_mask(self):
        m = verify.interior_mask(11, 2.0)
        assert m[5, 5] and not m[0, 0] and m.sum() == np.sum(np.hypot(*np.mgrid[-5:6, -5:6]) <= 3.5)


class TestGradients:
    def test_running_statistics_order2(self):
        res = verify.check_gradients(seed=1, order=2, training=False, max_per_input=15)
        assert res.worst < verify.GRADCHECK_BOUND
        assert res.skipped <= 0.02 * (res.compared + res.skipped)

    def test_toy_network_is_float64(self):
        net = verify.toy_network(0, 3)
        assert len(net.blocks) == 2 and all(p.data.dtype == np.float64 for p in net.parameters())


class TestReport:
    def test_byte_stable(self, tmp_path):
        results = [verify._judge("a", 1.5e-7, 1e-4), verify._judge("bb", 0.6, 0.1, "above", "expected")]
        js, txt = verify.emit_report(results, tmp_path / "r1")
        js2, txt2 = verify.emit_report(results, tmp_path / "r2.json")
        assert open(js, "rb").read() == open(js2, "rb").read()
        assert open(txt, "rb").read() == open(txt2, "rb").read()
        payload = json.loads(open(js).read())
        assert payload["passed"] is True and payload["checks"][1]["sense"] == "above"
        assert open(txt).read().splitlines()[-1] == "2/2 checks passed"

    def test_fail_marked(self):
        text = verify.report_text([verify._judge("x", 2.0, 1.0)])
        assert "FAIL" in text and "0/1" in text

    def test_unknown_suite(self):
        with pytest.raises(ValueError):
            verify.run_suite("everything")

    def test_model_required(self):
        with pytest.raises(ValueError):
            verify.run_suite("rot90")
