import numpy as np
import pytest

from sdran.controller_stats import (
    EstimatedStatistics,
    FronthaulPayload,
    InfeasibleAllocation,
    MappingRule,
    StatisticsController,
    build_program,
    payload_stats,
    problem_dimensions,
    sample_mapping_rules,
    solve_stats_allocation,
)
from sdran.game import Strategy, check_epsilon_cce, epsilon_gap
from sdran.solver import solve_concave

from test_game import build_game


def true_stats(game, lam_hat):
    """Exact model statistics (what perfectly converged estimates look like)."""
    g = len(game.states.g_set)
    gain_pmfs = [[np.asarray(l.pmf, float) for l in links]
                 for links in game.states.own_links]
    return EstimatedStatistics(varsigma_pmf=np.full(g, 1.0 / g),
                               gain_pmfs=gain_pmfs,
                               lam_hat=np.asarray(lam_hat, float))


class TestMappingRule:
    def test_index_roundtrip(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n_states = int(rng.integers(1, 12))
            n_actions = int(rng.integers(2, 9))
            actions = tuple(int(a) for a in rng.integers(0, n_actions, size=n_states))
            rule = MappingRule(actions=actions, n_actions=n_actions)
            back = MappingRule.from_index(rule.index, n_states, n_actions)
            assert back.actions == actions

    def test_index_is_mixed_radix(self):
        rule = MappingRule(actions=(2, 0, 1), n_actions=3)
        assert rule.index == 2 * 9 + 0 * 3 + 1


class TestBuildProgram:
    def test_single_bs_two_actions_concentrates_on_better(self):
        game = build_game(bs_count=1, g_set=(0.25,))
        stats = true_stats(game, [0.1])
        prog = build_program(stats, game)
        strat, thetas, rep = solve_stats_allocation(prog, tol=1e-9)
        vt = game.v_table()
        # in every state the better action gets essentially all the mass
        for wi in range(game.states.n_states):
            best = int(np.argmax(vt[0, wi]))
            assert strat.table[wi, best] > 1 - 1e-5

    def test_variable_count_matches_formula(self):
        game = build_game()
        stats = true_stats(game, [0.05, 0.05])
        prog = build_program(stats, game)
        n_vars, _ = problem_dimensions(game)
        assert prog.program.n == n_vars

    def test_infeasible_demand_reported(self):
        game = build_game()
        vmax = game.v_max()
        stats = true_stats(game, vmax * 10.0)
        prog = build_program(stats, game)
        with pytest.raises(InfeasibleAllocation):
            solve_stats_allocation(prog, tol=1e-8)

    def test_symmetric_instance_symmetric_utilities(self):
        game = build_game()
        stats = true_stats(game, [0.2, 0.2])
        prog = build_program(stats, game)
        strat, _, rep = solve_stats_allocation(prog, tol=1e-9)
        w = prog.state_pmf
        vt = game.v_table()
        vhat = np.einsum("w,wa,bwa->b", w, strat.table, vt)
        assert vhat[0] == pytest.approx(vhat[1], rel=1e-4)

    def test_objective_beats_uniform_when_uniform_feasible(self):
        game = build_game()
        # tiny demand keeps the uniform table feasible
        stats = true_stats(game, [1e-4, 1e-4])
        prog = build_program(stats, game)
        strat, _, rep = solve_stats_allocation(prog, tol=1e-9)
        w, vt, lam = prog.state_pmf, game.v_table(), prog.lam_hat
        uni = np.full_like(strat.table, 1.0 / game.actions.n_actions)
        vhat_u = np.einsum("w,wa,bwa->b", w, uni, vt)
        vhat_s = np.einsum("w,wa,bwa->b", w, strat.table, vt)
        assert float(lam @ np.log1p(vhat_s)) >= float(lam @ np.log1p(vhat_u)) - 1e-9


class TestAllocationAudit:
    def test_solution_is_equilibrium_under_v(self):
        game = build_game()
        stats = true_stats(game, [0.2, 0.1])
        prog = build_program(stats, game)
        strat, thetas, _ = solve_stats_allocation(prog, tol=1e-9)
        res = check_epsilon_cce(game, strat, 1e-6, game.v_table(), prog.state_pmf)
        assert res.passed

    def test_demand_constraint_respected(self):
        game = build_game()
        lam = [0.2, 0.1]
        stats = true_stats(game, lam)
        prog = build_program(stats, game)
        strat, _, _ = solve_stats_allocation(prog, tol=1e-9)
        vhat = np.einsum("w,wa,bwa->b", prog.state_pmf, strat.table, game.v_table())
        assert np.all(vhat >= np.asarray(lam) - 1e-6)

    def test_epsilon_shift_covers_true_utility(self):
        game = build_game()
        stats = true_stats(game, [0.2, 0.1])
        prog = build_program(stats, game)
        strat, _, _ = solve_stats_allocation(prog, tol=1e-9)
        gap = epsilon_gap(game, strat, prog.state_pmf)
        res = check_epsilon_cce(game, strat, gap + 1e-6, game.u_table(), prog.state_pmf)
        assert res.passed


class TestSampling:
    def test_deterministic_strategy_constant_rules(self):
        game = build_game()
        n_w, n_a = game.states.n_states, game.actions.n_actions
        picks = np.arange(n_w) % n_a
        strat = Strategy.deterministic(picks, n_a)
        rules = sample_mapping_rules(strat, 10, np.random.default_rng(1))
        assert len(rules) == 10
        for rule in rules:
            assert rule.actions == tuple(picks)

    def test_fixed_seed_reproducible(self):
        game = build_game()
        strat = Strategy.uniform(game.states.n_states, game.actions.n_actions)
        r1 = sample_mapping_rules(strat, 10, np.random.default_rng(42))
        r2 = sample_mapping_rules(strat, 10, np.random.default_rng(42))
        assert [r.index for r in r1] == [r.index for r in r2]

    def test_uniform_two_action_frequencies(self):
        rng = np.random.default_rng(7)
        table = np.zeros((3, 2))
        table[:, :] = 0.5
        strat = Strategy(table)
        rules = sample_mapping_rules(strat, 4000, rng)
        draws = np.array([r.actions for r in rules])  # (4000, 3)
        freq = draws.mean(axis=0)
        sigma = 0.5 / np.sqrt(4000)
        assert np.all(np.abs(freq - 0.5) < 3 * sigma + 1e-9)


class TestPayloadAndDimensions:
    def test_payload_counts_default_shape(self):
        # 2 UEs x 2 carriers x 2-level per-carrier links: 1 + |G| + 8 values
        game = build_game(ues=2, carriers=2, grid_levels=1)
        p = payload_stats(game, 10, r_unit=0.025 * np.log2(1.05))
        assert p.upload_counts == (11, 11)
        assert p.feedback_count == 10
        assert p.r_fb == pytest.approx(10 * 0.025 * np.log2(1.05))
        assert p.r_up[0] == pytest.approx(11 * 0.025 * np.log2(1.05))

    def test_dimension_formula_hand_instances(self):
        # instance 1: single BS, |W| = 2 (one fronthaul level, one 2-level link),
        # |A| = 3 via a 2-positive-level grid on one (UE, carrier) cell
        game = build_game(bs_count=1, g_set=(0.25,), grid_levels=2)
        assert game.states.n_states == 2
        assert game.actions.n_actions == 3
        n_vars, n_cons = problem_dimensions(game)
        assert n_vars == 2 * 3 + 2 == 8
        assert n_cons == 2 * 1 + 2 * 3 + 2 + 6 + 2 * 2

        # instance 2: the 2-BS single-carrier toy
        game2 = build_game()
        w, a = game2.states.n_states, game2.actions.n_actions
        wb = game2.states.local_sizes
        ab = game2.actions.sizes
        n_vars2, n_cons2 = problem_dimensions(game2)
        assert n_vars2 == w * a + sum(wb)
        assert n_cons2 == 2 * 2 + sum(wb[b] * ab[b] for b in range(2)) + w + w * a + 2 * sum(wb)

        # instance 3: symmetric BSs double the per-BS sums
        game3 = build_game(ues=2, carriers=1, grid_levels=1)
        wb3 = game3.states.local_sizes
        assert wb3[0] == wb3[1]
        n_vars3, n_cons3 = problem_dimensions(game3)
        assert n_vars3 == game3.states.n_states * game3.actions.n_actions + 2 * wb3[0]


class TestController:
    def test_resolve_cadence(self):
        game = build_game()
        ctrl = StatisticsController(game, frame_slots=5, tol=1e-7,
                                    initial_resolves=2, resolve_period=3)
        stats = true_stats(game, [0.1, 0.1])
        rng = np.random.default_rng(0)
        for _ in range(8):
            rules = ctrl.recommendations(stats, rng)
            assert len(rules) == 5
        # calls 1,2 solve; then calls 5 and 8 ((calls-2) % 3 == 0)
        assert ctrl._solves == 4
