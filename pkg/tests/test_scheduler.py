import itertools
import math

import numpy as np
import pytest

from sdran.scheduler import (
    EmpiricalEstimators,
    InterferenceEstimate,
    WaterfillResult,
    allocated_subcarriers,
    project_action,
    serve_slot,
    update_interference_estimate,
    waterfill,
)

from test_game import build_game


def wf_objective(weights, gains, est, cond, noise, powers):
    """Direct evaluation of the scheduler's expected-log objective."""
    total = 0.0
    m_count, s_count = gains.shape
    for m in range(m_count):
        for s in range(s_count):
            if powers[m, s] == 0.0:
                continue
            vals, probs = est.pmf(m, s, cond)
            total += weights[m] * float(
                (probs * np.log(1.0 + powers[m, s] * gains[m, s]
                                / (noise + vals))).sum())
    return total


def separable_grid_best(weights, gains, est, cond, noise, carriers, budget, steps):
    """Exhaustive grid search over the budgeted mesh (separable objective)."""
    m_count, s_count = gains.shape
    cells = [(m, s) for m in range(m_count) for s in range(s_count) if s in carriers]
    axis = np.linspace(0.0, budget, steps + 1)
    per_cell = []
    for (m, s) in cells:
        vals, probs = est.pmf(m, s, cond)
        contrib = np.array([
            weights[m] * float((probs * np.log(1.0 + p * gains[m, s] / (noise + vals))).sum())
            for p in axis])
        per_cell.append(contrib)
    best = -np.inf
    best_p = None
    idx_mesh = np.array(list(itertools.product(range(steps + 1), repeat=len(cells))))
    totals = axis[idx_mesh].sum(axis=1)
    ok = totals <= budget + 1e-12
    idx_mesh = idx_mesh[ok]
    obj = np.zeros(len(idx_mesh))
    for j in range(len(cells)):
        obj += per_cell[j][idx_mesh[:, j]]
    k = int(np.argmax(obj))
    best = float(obj[k])
    best_p = np.zeros((m_count, s_count))
    for j, (m, s) in enumerate(cells):
        best_p[m, s] = axis[idx_mesh[k, j]]
    return best, best_p


class TestAllocatedSubcarriers:
    def test_zero_action_empty_set(self):
        assert allocated_subcarriers(np.zeros((2, 2)), 2) == frozenset()

    def test_single_positive_entry(self):
        a = np.zeros((2, 2))
        a[1, 1] = 0.1
        assert allocated_subcarriers(a, 2) == frozenset({1})

    def test_non_sdn_full_set(self):
        assert allocated_subcarriers(np.zeros((2, 2)), 2, non_sdn=True) == frozenset({0, 1})
        assert allocated_subcarriers(None, 3) == frozenset({0, 1, 2})


class TestInterferenceEstimate:
    def test_cold_start_point_mass_at_zero(self):
        est = InterferenceEstimate()
        vals, probs = est.pmf(0, 0, "anything")
        assert vals.tolist() == [0.0] and probs.tolist() == [1.0]

    def test_first_observation_point_mass(self):
        est = InterferenceEstimate()
        est.update("c", np.array([[3.5]]))
        vals, probs = est.pmf(0, 0, "c")
        assert vals.tolist() == [3.5] and probs.tolist() == [1.0]

    def test_two_equal_observations_stay_point_mass(self):
        est = InterferenceEstimate()
        est.update("c", np.array([[3.5]]))
        est.update("c", np.array([[3.5]]))
        vals, probs = est.pmf(0, 0, "c")
        assert vals.tolist() == [3.5]
        assert probs.tolist() == [1.0]

    def test_two_distinct_observations_half_half(self):
        est = InterferenceEstimate()
        est.update("c", np.array([[1.0]]))
        est.update("c", np.array([[2.0]]))
        vals, probs = est.pmf(0, 0, "c")
        assert sorted(vals.tolist()) == [1.0, 2.0]
        assert probs.tolist() == [0.5, 0.5]

    def test_conditions_isolated(self):
        est = InterferenceEstimate()
        est.update("a", np.array([[1.0]]))
        est.update("b", np.array([[9.0]]))
        vals_a, _ = est.pmf(0, 0, "a")
        assert vals_a.tolist() == [1.0]

    def test_pmf_stays_distribution(self):
        est = InterferenceEstimate()
        rng = np.random.default_rng(0)
        for _ in range(50):
            est.update("c", rng.uniform(0, 5, size=(2, 2)))
        for m in range(2):
            for s in range(2):
                _, probs = est.pmf(m, s, "c")
                assert probs.sum() == pytest.approx(1.0, abs=1e-12)
                assert np.all(probs >= 0)

    def test_functional_wrapper(self):
        est = InterferenceEstimate()
        out = update_interference_estimate(est, np.array([[1.0]]), "c")
        assert out is est
        assert est.count(0, 0, "c") == 1


class TestWaterfill:
    noise = 1e-2

    def test_single_cell_gets_full_budget(self):
        est = InterferenceEstimate()
        res = waterfill(np.array([1.0]), 0.0, np.array([[2.0]]), est,
                        frozenset({0}), budget=0.7, noise=self.noise, cond="c")
        assert res.powers[0, 0] == pytest.approx(0.7, rel=1e-9)
        assert res.kkt_residual <= 1e-8

    def test_symmetric_cells_split_equally(self):
        est = InterferenceEstimate()
        res = waterfill(np.array([2.0]), 1.0, np.array([[1.5, 1.5]]), est,
                        frozenset({0, 1}), budget=1.0, noise=self.noise, cond="c")
        assert res.powers[0, 0] == pytest.approx(res.powers[0, 1], rel=1e-9)
        assert res.powers.sum() == pytest.approx(1.0, rel=1e-9)
        assert res.kkt_residual <= 1e-8

    def test_classical_two_carrier_closed_form(self):
        # deterministic interference: P_s = mu - (noise + I_s)/h_s
        est = InterferenceEstimate()
        est.update("c", np.array([[0.05, 0.2]]))
        h = np.array([[1.0, 0.8]])
        w = 3.0  # queue 2 + tradeoff 1
        budget = 2.0
        res = waterfill(np.array([2.0]), 1.0, h, est, frozenset({0, 1}),
                        budget=budget, noise=self.noise, cond="c")
        a = (self.noise + 0.05) / 1.0
        b = (self.noise + 0.2) / 0.8
        mu = (budget + a + b) / 2.0
        assert res.powers[0, 0] == pytest.approx(mu - a, rel=1e-8)
        assert res.powers[0, 1] == pytest.approx(mu - b, rel=1e-8)
        # water level equals w / mu for the weighted problem
        assert res.water_level == pytest.approx(w / mu, rel=1e-8)

    def test_matches_grid_search(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            m_count, s_count = 2, 2
            est = InterferenceEstimate()
            for _ in range(3):
                est.update("c", rng.uniform(0, 0.3, size=(m_count, s_count)))
            gains = rng.uniform(0.2, 2.0, size=(m_count, s_count))
            q = rng.uniform(0, 4, size=m_count)
            v = rng.uniform(0, 3)
            budget = rng.uniform(0.5, 2.0)
            carriers = frozenset({0, 1})
            res = waterfill(q, v, gains, est, carriers, budget, self.noise, "c")
            assert res.kkt_residual <= 1e-8
            w = q + v
            obj_wf = wf_objective(w, gains, est, "c", self.noise, res.powers)
            steps = 22
            obj_grid, _ = separable_grid_best(w, gains, est, "c", self.noise,
                                              carriers, budget, steps)
            # continuous optimum dominates the mesh, and the mesh is within
            # its resolution bound of the optimum
            assert obj_wf >= obj_grid - 1e-9
            lipschitz = sum(
                (q[m] + v) * gains[m, s] / self.noise
                for m in range(m_count) for s in range(s_count))
            assert obj_wf <= obj_grid + lipschitz * (budget / steps) + 1e-9

    def test_empty_carriers_rejected(self):
        with pytest.raises(ValueError):
            waterfill(np.array([1.0]), 0.0, np.array([[1.0]]),
                      InterferenceEstimate(), frozenset(), 1.0, self.noise, "c")

    def test_degenerate_zero_weights_uniform_split(self):
        est = InterferenceEstimate()
        with pytest.warns(UserWarning):
            res = waterfill(np.array([0.0]), 0.0, np.array([[1.0, 1.0]]), est,
                            frozenset({0, 1}), 1.0, self.noise, "c")
        assert res.degenerate
        assert res.powers[0, 0] == pytest.approx(0.5)

    def test_unallocated_carriers_stay_zero(self):
        est = InterferenceEstimate()
        res = waterfill(np.array([1.0, 2.0]), 1.0,
                        np.array([[1.0, 2.0], [0.5, 1.5]]), est,
                        frozenset({1}), 1.0, self.noise, "c")
        assert np.all(res.powers[:, 0] == 0.0)


class TestProjection:
    def test_grid_member_unchanged(self):
        game = build_game(ues=2, carriers=2, grid_levels=2)
        acts = game.actions
        cand = acts.restricted(0, {0, 1})
        for a in (0, 3, acts.sizes[0] - 1):
            got = project_action(acts.actions[0][a], acts.actions[0][cand], cand)
            assert got == a

    def test_half_step_tie_lower_index(self):
        game = build_game(ues=1, carriers=1, grid_levels=1)
        acts = game.actions
        cand = acts.restricted(0, {0})
        p = np.array([[0.5]])  # halfway between levels 0 and 1
        assert project_action(p, acts.actions[0][cand], cand) == 0

    def test_projection_within_budget(self):
        game = build_game(ues=2, carriers=2, grid_levels=2)
        acts = game.actions
        rng = np.random.default_rng(1)
        cand = acts.restricted(0, {0, 1})
        for _ in range(50):
            p = rng.uniform(0, 1.5, size=(2, 2))
            idx = project_action(p, acts.actions[0][cand], cand)
            chosen = acts.actions[0][idx]
            assert chosen.sum() <= acts.budgets[0] + 1e-12
            assert np.all((chosen > 0).sum(axis=0) <= 1)


class TestServeSlot:
    def setup_method(self):
        self.game = build_game(ues=2, carriers=2, grid_levels=2)

    def test_empty_allocation_idles(self):
        est = InterferenceEstimate()
        q = np.array([5e5, 2e5])
        arr = np.array([1e5, 3e4])
        res = serve_slot(self.game, 0, q, 100.0,
                         np.full((2, 2), 1e-9), est, frozenset(), arr,
                         np.zeros((2, 2)), 0.25, 1e6, "c")
        assert res.action_index == 0
        assert np.all(res.rates == 0.0)
        assert np.allclose(res.queues, q + arr)

    def test_never_powers_outside_allocation(self):
        est = InterferenceEstimate()
        rng = np.random.default_rng(2)
        for carriers in ({0}, {1}, {0, 1}):
            res = serve_slot(self.game, 0, rng.uniform(0, 1e6, 2), 100.0,
                             rng.uniform(1e-10, 1e-8, (2, 2)), est,
                             frozenset(carriers), rng.uniform(0, 1e5, 2),
                             np.zeros((2, 2)), 0.25, 1e6, "c")
            for s in range(2):
                if s not in carriers:
                    assert np.all(res.powers[:, s] == 0.0)
            assert np.all((res.powers > 0).sum(axis=0) <= 1)

    def test_zero_tradeoff_prioritizes_backlog(self):
        # symmetric channels, very different queues: the loaded UE gets
        # weakly more power when the tradeoff weight is off
        est = InterferenceEstimate()
        gains = np.full((2, 2), 1e-9)
        q = np.array([8e6, 1e3])
        res = serve_slot(self.game, 0, q, 0.0, gains, est, frozenset({0, 1}),
                         np.zeros(2), np.zeros((2, 2)), 0.0, 1e6, "c")
        assert res.powers[0].sum() >= res.powers[1].sum()

    def test_large_tradeoff_prefers_better_channel(self):
        est = InterferenceEstimate()
        gains = np.array([[5e-9, 5e-9], [5e-10, 5e-10]])
        q = np.array([0.0, 5e6])  # worse channel has the backlog
        res = serve_slot(self.game, 0, q, 1e9, gains, est, frozenset({0, 1}),
                         np.zeros(2), np.zeros((2, 2)), 0.0, 1e6, "c")
        assert res.powers[0].sum() >= res.powers[1].sum()

    def test_conservation_bookkeeping(self):
        est = InterferenceEstimate()
        rng = np.random.default_rng(3)
        q = rng.uniform(0, 1e6, 2)
        arr = rng.uniform(0, 1e5, 2)
        res = serve_slot(self.game, 0, q, 100.0, rng.uniform(1e-10, 1e-8, (2, 2)),
                         est, frozenset({0, 1}), arr, np.zeros((2, 2)),
                         0.25, 1e6, "c")
        for m in range(2):
            assert res.queues[m] == pytest.approx(
                q[m] - res.served_bits[m] + arr[m], rel=1e-12)


class TestEmpiricalEstimators:
    def test_constant_arrivals_exact_after_one_frame(self):
        game = build_game(ues=2, carriers=1)
        est = EmpiricalEstimators(game, bits_per_unit=1e6, track_channels=False)
        lam_bits = 4e5
        arrivals = np.full((10, 4), lam_bits)  # 2 BSs x 2 UEs
        est.update_frame(arrivals, None, None)
        # per BS: 2 UEs at 0.4 rate units each
        assert est.lam_hat == pytest.approx(np.array([0.8, 0.8]), rel=1e-12)

    def test_recursion_matches_batch(self):
        game = build_game(ues=1, carriers=1)
        est = EmpiricalEstimators(game, bits_per_unit=1e6, track_channels=True)
        rng = np.random.default_rng(4)
        all_arr, all_dig, all_vs = [], [], []
        for n in range(7):
            arr = rng.uniform(0, 1e6, size=(10, 2))
            dig = rng.integers(0, 2, size=(10, 2))
            vs = int(rng.integers(0, 2))
            est.update_frame(arr, dig, vs)
            all_arr.append(arr)
            all_dig.append(dig)
            all_vs.append(vs)
        arr = np.concatenate(all_arr, axis=0)
        dig = np.concatenate(all_dig, axis=0)
        lam0 = arr[:, :1].sum() / 1e6 / 70
        assert est.lam_hat[0] == pytest.approx(lam0, rel=1e-12)
        pmf0 = np.bincount(dig[:, 0], minlength=2) / 70
        assert est.gain_pmfs[0][0] == pytest.approx(pmf0, abs=1e-12)
        vs_pmf = np.bincount(np.array(all_vs), minlength=2) / 7
        assert est.varsigma_pmf == pytest.approx(vs_pmf, abs=1e-12)

    def test_deterministic_channel_point_mass_fixed_point(self):
        game = build_game(ues=1, carriers=1)
        est = EmpiricalEstimators(game, bits_per_unit=1e6, track_channels=True)
        dig = np.ones((10, 2), dtype=np.int64)
        for _ in range(5):
            est.update_frame(np.zeros((10, 2)), dig, 0)
        assert est.gain_pmfs[0][0] == pytest.approx(np.array([0.0, 1.0]), abs=1e-12)

    def test_channels_frozen_outside_statistics_mode(self):
        game = build_game(ues=1, carriers=1)
        est = EmpiricalEstimators(game, bits_per_unit=1e6, track_channels=False)
        before = [p.copy() for p in est.gain_pmfs[0]]
        est.update_frame(np.ones((10, 2)), np.ones((10, 2), dtype=np.int64), 1)
        assert np.array_equal(est.gain_pmfs[0][0], before[0])
        assert est.lam_hat[0] > 0


class TestWaterfillCloudDominance:
    def test_beats_random_feasible_cloud(self):
        rng = np.random.default_rng(31)
        noise = 1e-2
        est = InterferenceEstimate()
        for _ in range(4):
            est.update("c", rng.uniform(0, 0.3, size=(2, 2)))
        gains = rng.uniform(0.2, 2.0, size=(2, 2))
        q = rng.uniform(0, 4, size=2)
        v = 1.5
        budget = 1.2
        res = waterfill(q, v, gains, est, frozenset({0, 1}), budget, noise, "c")
        obj_star = wf_objective(q + v, gains, est, "c", noise, res.powers)
        # 1e5 random feasible points, all dominated by the solution
        pts = rng.uniform(0, 1, size=(100_000, 4))
        pts *= (budget * rng.uniform(0, 1, size=(100_000, 1))) / pts.sum(
            axis=1, keepdims=True)
        vals_cells = []
        for i, (m, s) in enumerate([(m, s) for m in range(2) for s in range(2)]):
            ivals, iprobs = est.pmf(m, s, "c")
            contrib = (q[m] + v) * (iprobs[None, :] * np.log(
                1.0 + pts[:, i:i + 1] * gains[m, s] / (noise + ivals[None, :]))
            ).sum(axis=1)
            vals_cells.append(contrib)
        cloud = np.sum(vals_cells, axis=0)
        assert obj_star >= cloud.max() - 1e-9
