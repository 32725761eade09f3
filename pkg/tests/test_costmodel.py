import numpy as np
import pytest

from xmjoin import costmodel as cm


class TestPredict:
    def test_worked_example(self):
        params = cm.CostParams(alpha=0.01, block=512)
        bd = cm.predict_cost(10_000, 2_560_000, 256, params)
        assert bd.total == pytest.approx(10069.53125, abs=1e-9)
        assert bd.outer_scan == pytest.approx(19.53125, abs=1e-12)
        assert bd.inner_lookups == 10_000
        assert bd.per_lookup == pytest.approx(1.005, abs=1e-12)

    def test_inner_side_caps_lookups(self):
        params = cm.CostParams(alpha=0.01, block=512)
        bd = cm.predict_cost(10_000, 512_000, 256, params)
        assert bd.inner_lookups == 2000  # |S| / epsilon < |R|
        assert bd.total == pytest.approx(19.53125 + 2000 * 1.005, abs=1e-9)

    def test_io_call_skeleton_has_no_alpha(self):
        a = cm.predict_io_calls(10_000, 2_560_000, 256,
                                cm.CostParams(alpha=0.0, block=512))
        b = cm.predict_io_calls(10_000, 2_560_000, 256,
                                cm.CostParams(alpha=9.9, block=512))
        assert a == b == pytest.approx(10019.53125, abs=1e-9)

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            cm.predict_cost(-1, 10, 4)
        with pytest.raises(ValueError):
            cm.predict_cost(10, 10, 0)
        with pytest.raises(ValueError):
            cm.predict_io_calls(10, -5, 4)


class TestRegime:
    def test_small_outer_prefers_index(self):
        params = cm.CostParams(alpha=0.01, block=512)
        assert cm.choose_regime(1_000, 10**9, 256, params) == \
            "indexed_lookup"

    def test_comparable_sides_prefer_scan(self):
        params = cm.CostParams(alpha=0.01, block=512)
        assert cm.choose_regime(10**6, 10**6, 256, params) == \
            "sequential_scan"

    def test_tie_goes_sequential(self):
        # alpha=0, block=1, inner <= outer makes both plans cost the same
        params = cm.CostParams(alpha=0.0, block=1)
        assert cm.choose_regime(10, 5, 1, params) == "sequential_scan"


class TestCalibrate:
    def test_recovers_planted_alpha_exactly(self):
        c, a = 48e-6, 0.03
        lat = {b: c * (1 + a * b) for b in (1, 16, 256)}
        alpha, c0 = cm.calibrate_alpha(lat)
        assert alpha == pytest.approx(a, rel=1e-9)
        assert c0 == pytest.approx(c, rel=1e-9)

    def test_recovers_under_noise(self):
        c, a = 48e-6, 0.03
        rng = np.random.default_rng(10)
        lat = {b: c * (1 + a * b) * (1 + 0.05 * rng.standard_normal())
               for b in (1, 16, 256)}
        alpha, _ = cm.calibrate_alpha(lat)
        assert abs(alpha - a) / a < 0.20

    def test_non_monotone_falls_back_to_two_largest(self):
        with pytest.warns(UserWarning, match="not increasing"):
            alpha, c0 = cm.calibrate_alpha({1: 10.0, 16: 8.0, 256: 20.0})
        assert alpha == pytest.approx(12 / 1728)
        assert c0 == pytest.approx(8 / (1 + alpha * 16))

    def test_decreasing_profile_clamps_to_zero(self):
        with pytest.warns(UserWarning):
            alpha, c0 = cm.calibrate_alpha({1: 10.0, 16: 9.0, 256: 8.0})
        assert alpha == 0.0
        assert c0 == pytest.approx(9.0)

    def test_negative_intercept_falls_back(self):
        with pytest.warns(UserWarning):
            alpha, _ = cm.calibrate_alpha({1: 0.1, 16: 2.0, 256: 40.0})
        assert alpha >= 0.0

    def test_input_validation(self):
        with pytest.raises(ValueError):
            cm.calibrate_alpha({1: 1.0})
        with pytest.raises(ValueError):
            cm.calibrate_alpha({1: 1.0, 16: -2.0})


class TestProbeDevice:
    def test_rejects_small_file(self, tmp_path):
        with pytest.raises(ValueError):
            cm.probe_device(tmp_path / "p.bin", file_bytes=1 << 20)

    def test_probe_and_calibrate_end_to_end(self, tmp_path):
        lat = cm.probe_device(tmp_path / "probe.bin", repeats=4, seed=1)
        assert sorted(lat) == [1, 16, 256]
        assert all(v > 0 for v in lat.values())
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            alpha, c0 = cm.calibrate_alpha(lat)
        assert alpha >= 0.0 and c0 > 0.0
        assert not (tmp_path / "probe.bin").exists()
