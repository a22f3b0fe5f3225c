import math

import numpy as np
import pytest
import scipy.sparse as sp

from sdran.solver import (
    CcpStop,
    ConcaveProgram,
    DcLogProgram,
    HessianParts,
    ccp_solve,
    ccp_solve_batch,
    convexify_f,
    solve_concave,
)


def quadratic_on_simplex(n):
    """maximize -||x||^2 on the probability simplex."""

    def value(x):
        return -float(x @ x)

    def grad(x):
        return -2.0 * x

    def hess(x):
        return -2.0 * np.eye(n)

    return ConcaveProgram(
        n=n, value=value, grad=grad, hess=hess,
        a_eq=np.ones((1, n)), b_eq=np.array([1.0]),
        lb=np.zeros(n), ub=np.ones(n),
        x0=np.full(n, 1.0 / n) + np.linspace(-0.01, 0.01, n))


def log_budget_program(n, budget):
    """maximize sum log(1 + x_i) subject to sum x <= budget, x >= 0."""

    def value(x):
        return float(np.sum(np.log1p(x)))

    def grad(x):
        return 1.0 / (1.0 + x)

    def hess(x):
        return np.diag(-1.0 / (1.0 + x) ** 2)

    return ConcaveProgram(
        n=n, value=value, grad=grad, hess=hess,
        a_in=np.ones((1, n)), b_in=np.array([budget]),
        lb=np.zeros(n), ub=None,
        x0=np.full(n, 0.9 * budget / n))


class TestSolveConcave:
    def test_simplex_symmetry(self):
        rep = solve_concave(quadratic_on_simplex(5), tol=1e-8)
        assert rep.status == "optimal"
        assert rep.x == pytest.approx(np.full(5, 0.2), abs=1e-6)
        assert rep.kkt_residual <= 1e-8

    def test_equal_split_budget(self):
        rep = solve_concave(log_budget_program(4, 2.0), tol=1e-8)
        assert rep.status == "optimal"
        assert rep.x == pytest.approx(np.full(4, 0.5), abs=1e-6)

    def test_1d_monotone_hits_boundary(self):
        prog = ConcaveProgram(
            n=1,
            value=lambda x: float(np.log1p(x[0])),
            grad=lambda x: np.array([1.0 / (1.0 + x[0])]),
            hess=lambda x: np.array([[-1.0 / (1.0 + x[0]) ** 2]]),
            lb=np.zeros(1), ub=np.array([2.0]), x0=np.array([1.0]))
        rep = solve_concave(prog, tol=1e-9)
        assert rep.x[0] == pytest.approx(2.0, abs=1e-6)

    def test_beats_random_feasible_points(self):
        prog = log_budget_program(6, 3.0)
        rep = solve_concave(prog, tol=1e-8)
        rng = np.random.default_rng(11)
        for _ in range(1000):
            x = rng.uniform(0, 1, size=6)
            x *= 3.0 * rng.uniform(0, 1) / x.sum()
            assert rep.objective >= prog.value(x) - 1e-7

    def test_phase1_recovers_from_infeasible_start(self):
        prog = log_budget_program(3, 1.5)
        prog.x0 = np.full(3, 2.0)  # violates the budget row
        rep = solve_concave(prog, tol=1e-8)
        assert rep.status == "optimal"
        assert rep.x == pytest.approx(np.full(3, 0.5), abs=1e-5)

    def test_infeasible_program_detected(self):
        # sum x <= 1 with lower bounds forcing sum x >= 3
        def value(x):
            return -float(x @ x)

        prog = ConcaveProgram(
            n=3, value=value, grad=lambda x: -2 * x, hess=lambda x: -2 * np.eye(3),
            a_in=np.ones((1, 3)), b_in=np.array([1.0]),
            lb=np.ones(3), ub=np.full(3, 5.0), x0=np.full(3, 1.5))
        rep = solve_concave(prog, tol=1e-8)
        assert rep.status == "infeasible"

    def test_structured_path_matches_dense(self):
        # same concave program solved via both Newton paths
        rng = np.random.default_rng(5)
        n = 40
        a = rng.uniform(0.1, 1.0, size=(2, n))
        lam = np.array([1.0, 2.0])

        def value(x):
            return float(lam @ np.log1p(a @ x))

        def grad(x):
            return (lam / (1.0 + a @ x)) @ a

        def hess_parts(x):
            den = 1.0 + a @ x
            return HessianParts(diag=np.zeros(n), factors=a, coeffs=-lam / den**2)

        def hess_dense(x):
            return hess_parts(x).dense(n)

        b_eq = np.ones(4)
        x0 = np.full(n, 4.0 / n)
        common = dict(a_eq=_block_eq(n, 4), b_eq=b_eq, lb=np.zeros(n), ub=np.ones(n), x0=x0)
        p_dense = ConcaveProgram(n=n, value=value, grad=grad, hess=hess_dense, **common)
        p_struct = ConcaveProgram(n=n, value=value, grad=grad, hess=hess_parts, **common)
        r1 = solve_concave(p_dense, tol=1e-8)
        import sdran.solver as sv
        old = sv._DENSE_LIMIT
        sv._DENSE_LIMIT = 10
        try:
            r2 = solve_concave(p_struct, tol=1e-8)
        finally:
            sv._DENSE_LIMIT = old
        assert r1.objective == pytest.approx(r2.objective, rel=1e-7)
        assert np.allclose(r1.x, r2.x, atol=1e-5)


def _block_eq(n, blocks):
    a = np.zeros((blocks, n))
    size = n // blocks
    for i in range(blocks):
        a[i, i * size:(i + 1) * size] = 1.0
    return a


def random_dc_program(rng, n_bs=2, ues=2, carriers=2):
    """Random difference-of-convex power instance with the network shape."""
    n = n_bs * ues * carriers
    group_ids = np.repeat(np.arange(n_bs), ues * carriers)
    budgets = rng.uniform(0.5, 2.0, size=n_bs)
    k1 = rng.integers(2, 6)
    k2 = rng.integers(2, 6)

    def rows(k):
        w = rng.uniform(0.0, 3.0, size=k)
        c = rng.uniform(0.5, 2.0, size=k)
        a = rng.uniform(0.0, 4.0, size=(k, n)) * (rng.uniform(size=(k, n)) < 0.6)
        return w, c, a

    cw, cc, ca = rows(k1)
    vw, vc, va = rows(k2)
    return DcLogProgram(n=n, conc_w=cw, conc_c=cc, conc_a=ca,
                        conv_w=vw, conv_c=vc, conv_a=va,
                        group_ids=group_ids, budgets=budgets)


class TestConvexify:
    def test_tangent_anchor(self):
        rng = np.random.default_rng(0)
        prog = random_dc_program(rng)
        ref = prog.uniform_start() * 0.7
        lin = convexify_f(prog, ref)
        assert lin.value(ref) == pytest.approx(prog.f_value(ref), rel=1e-12)

    def test_affine_f_is_exact_everywhere(self):
        # a concave part with zero weights is affine (identically zero)
        rng = np.random.default_rng(1)
        prog = random_dc_program(rng)
        prog.conc_w = np.zeros_like(prog.conc_w)
        ref = prog.uniform_start()
        lin = convexify_f(prog, ref)
        for _ in range(10):
            x = prog.uniform_start() * rng.uniform(0, 1)
            assert lin.value(x) == pytest.approx(prog.f_value(x), abs=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        prog = random_dc_program(rng)
        ref = prog.uniform_start() * 0.5
        lin = convexify_f(prog, ref)
        h = 1e-6
        for j in range(prog.n):
            e = np.zeros(prog.n)
            e[j] = h
            fd = (prog.f_value(ref + e) - prog.f_value(ref - e)) / (2 * h)
            denom = max(1.0, abs(fd))
            assert abs(lin.k[j] - fd) / denom < 1e-6

    def test_tangent_dominates_concave_part(self):
        rng = np.random.default_rng(3)
        prog = random_dc_program(rng)
        ref = prog.uniform_start() * 0.6
        lin = convexify_f(prog, ref)
        for _ in range(50):
            x = prog.uniform_start() * rng.uniform(0, 1, size=prog.n)
            assert lin.value(x) >= prog.f_value(x) - 1e-9


class TestCcp:
    def test_monotone_objective_on_random_instances(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            prog = random_dc_program(rng)
            res = ccp_solve(prog)
            objs = res.objectives
            assert all(objs[i + 1] <= objs[i] + 1e-9 for i in range(len(objs) - 1))
            assert res.converged
            assert res.iterations <= 50
            assert prog.feasible(res.x)

    def test_zero_weights_returns_start(self):
        rng = np.random.default_rng(9)
        prog = random_dc_program(rng)
        prog.conc_w = np.zeros_like(prog.conc_w)
        prog.conv_w = np.zeros_like(prog.conv_w)
        res = ccp_solve(prog)
        assert np.allclose(res.x, prog.uniform_start())
        assert res.iterations <= 2

    def test_affine_concave_part_converges_fast(self):
        rng = np.random.default_rng(10)
        prog = random_dc_program(rng)
        prog.conc_w = np.zeros_like(prog.conc_w)  # DC degenerates to convex
        res = ccp_solve(prog)
        assert res.converged
        assert res.iterations <= 2

    def test_batch_matches_sequential(self):
        rng = np.random.default_rng(77)
        base = random_dc_program(rng)
        progs = []
        for _ in range(6):
            p = DcLogProgram(
                n=base.n,
                conc_w=rng.uniform(0, 3, size=base.conc_w.shape),
                conc_c=rng.uniform(0.5, 2, size=base.conc_c.shape),
                conc_a=rng.uniform(0, 4, size=base.conc_a.shape),
                conv_w=rng.uniform(0, 3, size=base.conv_w.shape),
                conv_c=rng.uniform(0.5, 2, size=base.conv_c.shape),
                conv_a=rng.uniform(0, 4, size=base.conv_a.shape),
                group_ids=base.group_ids, budgets=base.budgets)
            progs.append(p)
        batch = ccp_solve_batch(progs, inner_tol=1e-10)
        for p, rb in zip(progs, batch):
            rs = ccp_solve(p, inner_tol=1e-10)
            assert p.objective(rb.x) == pytest.approx(p.objective(rs.x), rel=1e-5, abs=1e-7)
            objs = rb.objectives
            assert all(objs[i + 1] <= objs[i] + 1e-8 for i in range(len(objs) - 1))
