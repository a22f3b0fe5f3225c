import math

import numpy as np
import pytest

from sdran.model import (
    Bounds,
    GainLevelSet,
    RadioConfig,
    Topology,
    dbm_to_watts,
    dl_rate,
    feedback_time,
    path_loss,
    quantize_gain,
    queue_step,
    round_trip,
    upload_time,
)


class TestPathLoss:
    def test_hand_values(self):
        assert path_loss(10.0) == pytest.approx(30 + 20 * math.log10(2.4) + 46, abs=1e-9)
        assert path_loss(10.0) == pytest.approx(83.604, abs=1e-3)
        assert path_loss(40.0) == pytest.approx(101.666, abs=1e-3)

    def test_unit_distance_drops_log_term(self):
        assert path_loss(1.0) == pytest.approx(20 * math.log10(2.4) + 46, abs=1e-12)

    def test_nonpositive_distance_rejected(self):
        with pytest.raises(ValueError):
            path_loss(0.0)
        with pytest.raises(ValueError):
            path_loss(-3.0)


class TestGainQuantization:
    def setup_method(self):
        self.levels = GainLevelSet.from_exponential(scale=1.0, n_levels=2)

    def test_two_level_split_at_median(self):
        assert self.levels.thresholds[0] == pytest.approx(math.log(2.0), abs=1e-12)
        # conditional means of Exp(1) below/above its median: 1 -+ ln 2
        assert self.levels.values[0] == pytest.approx(1.0 - math.log(2.0), abs=1e-12)
        assert self.levels.values[1] == pytest.approx(1.0 + math.log(2.0), abs=1e-12)

    def test_boundaries_clamp(self):
        assert quantize_gain(0.0, self.levels) == 0
        assert quantize_gain(1e9, self.levels) == 1

    def test_tie_rounds_up(self):
        assert quantize_gain(math.log(2.0), self.levels) == 1

    def test_level_mean_preserved(self):
        # cell means weighted by the uniform cell masses recover the fade mean
        vals = np.asarray(self.levels.values)
        assert float(vals @ self.levels.level_pmf()) == pytest.approx(1.0, abs=1e-12)

    def test_multi_level_monotone(self):
        ls = GainLevelSet.from_exponential(scale=2.5, n_levels=4)
        assert len(ls.values) == 4
        assert all(np.diff(ls.values) > 0)
        assert ls.max_value == ls.values[-1]


class TestFronthaulTimes:
    def test_upload_zero_rate(self):
        assert upload_time(0.1, np.array([1.0]), np.array([0.0]), 0.0, 10, 1e-12) == 0.0

    def test_upload_hand_value(self):
        # single carrier, P*h equal to the noise power, no interference:
        # one bit/s/Hz per carrier, so T0 * R / 1 slots
        t = upload_time(1.0, np.array([1.0]), np.array([0.0]), 0.5, 10, 1.0)
        assert t == pytest.approx(5.0, abs=1e-12)

    def test_upload_interference_monotone(self):
        base = upload_time(1.0, np.array([1.0, 0.5]), np.array([0.0, 0.0]), 0.5, 10, 1.0)
        worse = upload_time(1.0, np.array([1.0, 0.5]), np.array([0.3, 0.1]), 0.5, 10, 1.0)
        assert worse > base

    def test_upload_unreachable(self):
        assert upload_time(1.0, np.array([0.0]), np.array([0.0]), 0.5, 10, 1.0) == math.inf

    def test_upload_scales_with_rate_and_frame(self):
        a = upload_time(1.0, np.array([1.0]), np.array([0.0]), 0.25, 10, 1.0)
        b = upload_time(1.0, np.array([1.0]), np.array([0.0]), 0.5, 10, 1.0)
        c = upload_time(1.0, np.array([1.0]), np.array([0.0]), 0.25, 20, 1.0)
        assert b == pytest.approx(2 * a, rel=1e-12)
        assert c == pytest.approx(2 * a, rel=1e-12)

    def test_feedback_zero_rate(self):
        assert feedback_time(np.array([1.0]), 2, 0.0, 10, 1.0, 1.0) == 0.0

    def test_feedback_single_bs_reduces_to_snr(self):
        # one BS: interference term vanishes, SINR = P_C h / noise
        t = feedback_time(np.array([1.0]), 1, 0.5, 10, 1.0, 1.0)
        assert t == pytest.approx(10 * 0.5 / math.log2(2.0), rel=1e-12)

    def test_feedback_hand_value_two_bs(self):
        # P_C h == noise and two BSs: SINR = 1/3
        t = feedback_time(np.array([1.0]), 2, 0.5, 10, 1.0, 1.0)
        assert t == pytest.approx(10 * 0.5 / math.log2(4.0 / 3.0), rel=1e-12)


class TestRoundTrip:
    G = (0.25, 0.5)

    def test_zero_raw_ceils_to_first_level(self):
        val, ok = round_trip(np.array([0.0]), np.array([0.0]), self.G)
        assert val == 0.25 and ok

    def test_ceiling_rule(self):
        val, ok = round_trip(np.array([0.2]), np.array([0.1]), self.G)
        assert val == 0.5 and ok

    def test_overflow_sets_flag(self):
        val, ok = round_trip(np.array([0.6]), np.array([0.3]), self.G)
        assert val == 0.5 and not ok

    def test_unreachable_overflows(self):
        val, ok = round_trip(np.array([math.inf]), np.array([0.0]), self.G)
        assert val == 0.5 and not ok

    def test_max_over_bs(self):
        val, ok = round_trip(np.array([0.05, 0.2]), np.array([0.01, 0.04]), self.G)
        # 0.2 + 0.04 -> ceil to 0.25
        assert val == 0.25 and ok


class TestDlRate:
    def test_full_fronthaul_kills_rate(self):
        assert dl_rate(1.0, 1.0, 0.0, 10, 10, 1e-12) == 0.0

    def test_zero_power(self):
        assert dl_rate(0.0, 1.0, 0.0, 0, 10, 1e-12) == 0.0

    def test_unit_sinr(self):
        assert dl_rate(1.0, 1.0, 0.0, 0, 10, 1.0) == pytest.approx(1.0, abs=1e-12)

    def test_monotonicities(self):
        base = dl_rate(1.0, 1.0, 1.0, 2, 10, 1.0)
        assert dl_rate(2.0, 1.0, 1.0, 2, 10, 1.0) > base
        assert dl_rate(1.0, 2.0, 1.0, 2, 10, 1.0) > base
        assert dl_rate(1.0, 1.0, 2.0, 2, 10, 1.0) < base
        assert dl_rate(1.0, 1.0, 1.0, 4, 10, 1.0) < base

    def test_bounded_by_interference_free_max(self):
        rng = np.random.default_rng(7)
        r_max = dl_rate(2.0, 3.0, 0.0, 0, 10, 1.0)
        for _ in range(200):
            p = rng.uniform(0, 2.0)
            h = rng.uniform(0, 3.0)
            i = rng.uniform(0, 5.0)
            f = rng.uniform(0, 10)
            assert dl_rate(p, h, i, f, 10, 1.0) <= r_max + 1e-12


class TestQueueStep:
    def test_hand_value(self):
        assert queue_step(5.0, 3.0, 2.0) == 4.0

    def test_clamps_at_zero(self):
        assert queue_step(1.0, 5.0, 0.0) == 0.0

    def test_identity_on_arrival(self):
        assert queue_step(0.0, 0.0, 7.5) == 7.5

    def test_output_at_least_arrival(self):
        rng = np.random.default_rng(3)
        for _ in range(300):
            q, r, lam = rng.uniform(0, 10, size=3)
            out = queue_step(q, r, lam)
            assert out >= lam
            assert out >= 0.0


class TestContainers:
    def test_topology_requires_all_links(self):
        with pytest.raises(ValueError):
            Topology(bs_count=2, ues_per_bs=(1, 1),
                     distances={(0, (0, 0)): 10.0, (1, (0, 0)): 40.0,
                                (1, (1, 0)): 10.0})  # missing 0 -> (1, 0)

    def test_topology_rejects_nonpositive_distance(self):
        with pytest.raises(ValueError):
            Topology(bs_count=1, ues_per_bs=(1,), distances={(0, (0, 0)): 0.0})

    def test_radio_config_conversion_factor(self):
        cfg = RadioConfig(subcarrier_count=2, bandwidth_hz=10e6,
                          bs_power_w=dbm_to_watts(20), controller_power_w=dbm_to_watts(25),
                          noise_w=dbm_to_watts(-85), carrier_ghz=2.4,
                          slot_s=0.1, frame_slots=10)
        assert cfg.bits_per_rate_unit == pytest.approx(1e6)
        assert cfg.bs_budget_w == pytest.approx(0.2, rel=1e-9)

    def test_bounds_orders_v_and_u(self):
        with pytest.raises(ValueError):
            Bounds(r_max=1.0, v_max=(2.0,), u_max=(1.0,))
        Bounds(r_max=1.0, v_max=(1.0,), u_max=(1.0,))
