"""Statistics-based resource allocation at the controller.

From uploaded per-link gain pmfs, the fronthaul-time pmf, and arrival
estimates, the controller builds one concave program over the conditional
action table: maximize a proportional-fairness network utility of the
per-BS pessimistic rates subject to per-BS demand, the no-gain-by-deviating
(equilibrium) rows, row-stochasticity, and deviation-value boxes.  The
solved table is sampled into one state-to-action lookup per slot of the
upcoming frame; each lookup is transmitted as a single mixed-radix index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .game import Game, Strategy
from .solver import ConcaveProgram, HessianParts, SolveReport, solve_concave

__all__ = [
    "EstimatedStatistics",
    "MappingRule",
    "FronthaulPayload",
    "StatsProgram",
    "InfeasibleAllocation",
    "build_program",
    "solve_stats_allocation",
    "sample_mapping_rules",
    "payload_stats",
    "problem_dimensions",
    "StatisticsController",
]


class InfeasibleAllocation(RuntimeError):
    """The demand constraints cannot be met by any recommendation table."""


@dataclass
class EstimatedStatistics:
    """What the BSs upload: marginal pmfs and mean arrivals (rate units)."""

    varsigma_pmf: np.ndarray
    gain_pmfs: list[list[np.ndarray]]  # [bs][link position] -> pmf over levels
    lam_hat: np.ndarray

    def validate(self, game: Game) -> None:
        if abs(self.varsigma_pmf.sum() - 1.0) > 1e-9 or self.varsigma_pmf.min() < 0:
            raise ValueError("fronthaul pmf must be a distribution")
        for b, links in enumerate(game.states.own_links):
            if len(self.gain_pmfs[b]) != len(links):
                raise ValueError(f"BS {b}: wrong number of link pmfs")
            for pos, link in enumerate(links):
                pmf = self.gain_pmfs[b][pos]
                if len(pmf) != len(link.levels.values):
                    raise ValueError(f"BS {b} link {pos}: pmf length mismatch")
                if abs(pmf.sum() - 1.0) > 1e-9 or pmf.min() < 0:
                    raise ValueError(f"BS {b} link {pos}: pmf is not a distribution")
        if np.any(self.lam_hat < 0):
            raise ValueError("arrival estimates must be nonnegative")


@dataclass(frozen=True)
class MappingRule:
    """Complete state-to-action lookup, wire-encoded as one integer.

    The index is the mixed-radix number whose digits are the per-state
    action indices, state 0 most significant.
    """

    actions: tuple[int, ...]
    n_actions: int

    @property
    def index(self) -> int:
        out = 0
        for a in self.actions:
            out = out * self.n_actions + int(a)
        return out

    @classmethod
    def from_index(cls, index: int, n_states: int, n_actions: int) -> "MappingRule":
        digits = []
        for _ in range(n_states):
            digits.append(index % n_actions)
            index //= n_actions
        return cls(actions=tuple(reversed(digits)), n_actions=n_actions)

    def action_of(self, state_idx: int) -> int:
        return self.actions[state_idx]


@dataclass(frozen=True)
class FronthaulPayload:
    """Value counts and the derived per-direction rate requirements."""

    upload_counts: tuple[int, ...]   # per BS
    feedback_count: int
    r_unit: float

    @property
    def r_up(self) -> np.ndarray:
        return np.asarray(self.upload_counts, float) * self.r_unit

    @property
    def r_fb(self) -> float:
        return self.feedback_count * self.r_unit


@dataclass
class StatsProgram:
    """Assembled concave program plus the layout needed to decode it."""

    program: ConcaveProgram
    game: Game
    state_pmf: np.ndarray
    lam_hat: np.ndarray
    v_max: np.ndarray
    n_p: int
    theta_offsets: list[int]  # start of each BS's deviation-value block
    agg: np.ndarray           # (B, n) aggregation rows: vhat_b = agg[b] . x


def build_program(stats: EstimatedStatistics, game: Game,
                  v_max: np.ndarray | None = None,
                  equilibrium_slack: float = 1e-8) -> StatsProgram:
    """Assemble the recommendation program over the estimated statistics.

    Variables are the flattened conditional action table followed by one
    deviation-value box variable per (BS, local state).  The objective is
    ``sum_b lam_hat_b * ln(1 + vhat_b)`` with ``vhat_b`` affine in the
    table; every constraint is affine.

    The equilibrium rows are slackened by ``equilibrium_slack`` times the
    utility scale: at many optima the achieved utility meets the expected
    deviation value exactly, so the unperturbed polytope has an empty
    interior and a barrier method could not start.  The default keeps the
    slack two orders of magnitude below the audit tolerance used on the
    solved table; large in-simulation instances may widen it for better
    barrier conditioning, trading an equally small equilibrium violation.
    """
    states, acts = game.states, game.actions
    if acts.n_actions == 0 or states.n_states == 0:
        raise ValueError("cannot build a program over empty spaces")
    stats.validate(game)
    if v_max is None:
        v_max = game.v_max()
    w = states.state_pmf(stats.varsigma_pmf, stats.gain_pmfs)
    vt = game.v_table()
    B = game.bs_count
    n_p = states.n_states * acts.n_actions
    theta_offsets = []
    off = n_p
    for b in range(B):
        theta_offsets.append(off)
        off += states.local_sizes[b]
    n = off
    lam = np.asarray(stats.lam_hat, float)

    # aggregation rows: vhat_b = agg[b] . x
    agg = np.zeros((B, n))
    for b in range(B):
        agg[b, :n_p] = (w[:, None] * vt[b]).ravel()

    def value(x):
        v = agg @ x
        if np.any(v <= -1.0):
            return -math.inf
        return float(lam @ np.log1p(v))

    def grad(x):
        v = agg @ x
        return (lam / (1.0 + v)) @ agg

    def hess(x):
        v = agg @ x
        return HessianParts(diag=np.zeros(n), factors=agg,
                            coeffs=-lam / (1.0 + v) ** 2)

    slack = equilibrium_slack * max(1.0, float(np.max(v_max)))
    rows, rhs = [], []
    # demand: vhat_b >= lam_b
    for b in range(B):
        rows.append(sp.csr_matrix(-agg[b][None, :]))
        rhs.append(-lam[b])
    # no-gain-by-deviating rows, one per (b, observable local state, deviation)
    for b in range(B):
        w_local = states.local_pmf(b, w)
        repl = acts.replace(b)
        for li in range(states.local_sizes[b]):
            if w_local[li] <= 0.0:
                continue
            cons = states.consistent_states(b, li)
            # coefficient of p[omega, a] is w[omega] * v_b(omega, a with b's part swapped)
            for chi in range(acts.sizes[b]):
                coefs = w[cons, None] * vt[b][cons[:, None], repl[None, :, chi]]
                row = sp.lil_matrix((1, n))
                cells = (cons[:, None] * acts.n_actions
                         + np.arange(acts.n_actions)[None, :]).ravel()
                row[0, cells] = coefs.ravel()
                row[0, theta_offsets[b] + li] = -w_local[li]
                rows.append(row.tocsr())
                rhs.append(slack)
    # expected deviation value cannot exceed the achieved utility
    for b in range(B):
        w_local = states.local_pmf(b, w)
        row = sp.lil_matrix((1, n))
        row[0, theta_offsets[b]:theta_offsets[b] + states.local_sizes[b]] = w_local
        row[0, :n_p] = -agg[b][:n_p]
        rows.append(row.tocsr())
        rhs.append(slack)
    a_in = sp.vstack(rows, format="csr")
    b_in = np.asarray(rhs, float)

    # row-stochasticity of the table
    eq_rows = sp.csr_matrix(
        (np.ones(n_p),
         (np.repeat(np.arange(states.n_states), acts.n_actions), np.arange(n_p))),
        shape=(states.n_states, n))
    b_eq = np.ones(states.n_states)

    lb = np.zeros(n)
    ub = np.full(n, np.inf)
    for b in range(B):
        sl = slice(theta_offsets[b], theta_offsets[b] + states.local_sizes[b])
        ub[sl] = v_max[b]
    x0 = np.empty(n)
    x0[:n_p] = 1.0 / acts.n_actions
    for b in range(B):
        sl = slice(theta_offsets[b], theta_offsets[b] + states.local_sizes[b])
        x0[sl] = 0.5 * v_max[b]

    prog = ConcaveProgram(n=n, value=value, grad=grad, hess=hess,
                          a_eq=eq_rows, b_eq=b_eq, a_in=a_in, b_in=b_in,
                          lb=lb, ub=ub, x0=x0)
    return StatsProgram(program=prog, game=game, state_pmf=w, lam_hat=lam,
                        v_max=np.asarray(v_max, float), n_p=n_p,
                        theta_offsets=theta_offsets, agg=agg)


_CUTTING_PLANE_SIZE = 2000  # above this variable count, solve by outer LPs


def solve_stats_allocation(sp_: StatsProgram, tol: float = 1e-8
                           ) -> tuple[Strategy, list[np.ndarray], SolveReport]:
    """Solve the assembled program into a recommendation table.

    Desk-scale programs go through the in-repo barrier solver; large
    strategy tables are handled by outer linearization (the objective is
    concave in just the per-BS aggregates, so a handful of cutting planes
    over exact LP solves is both faster and numerically sounder than
    squeezing a barrier method through the equilibrium-thin polytope).

    Raises :class:`InfeasibleAllocation` when the demand rows cannot be
    satisfied.  Table rows are cleaned of numerical dust (entries below
    1e-12 dropped) and renormalized to exact distributions.
    """
    if sp_.program.n > _CUTTING_PLANE_SIZE:
        rep = _solve_cutting_planes(sp_, tol=max(tol, 1e-9))
    else:
        rep = solve_concave(sp_.program, tol=tol)
    if rep.status == "infeasible":
        raise InfeasibleAllocation(
            "estimated demand exceeds every achievable pessimistic rate")
    states, acts = sp_.game.states, sp_.game.actions
    table = rep.x[:sp_.n_p].reshape(states.n_states, acts.n_actions).copy()
    table[table < 1e-12] = 0.0
    table /= table.sum(axis=1, keepdims=True)
    thetas = []
    for b, off in enumerate(sp_.theta_offsets):
        thetas.append(rep.x[off:off + states.local_sizes[b]].copy())
    return Strategy(table), thetas, rep


def _solve_cutting_planes(sp_: StatsProgram, tol: float,
                          max_cuts: int = 40) -> SolveReport:
    """Kelley's method: maximize z s.t. z <= tangent cuts of the objective.

    Each iteration solves one exact LP over the original rows plus the
    accumulated hypograph cuts; the gap between the LP value (an upper
    bound) and the true objective at its argmax (a lower bound) certifies
    convergence.  The objective varies only through the per-BS aggregate
    rates, so a handful of cuts closes the gap.
    """
    from scipy.optimize import linprog

    prog = sp_.program
    n = prog.n
    lam = sp_.lam_hat
    agg = sp_.agg

    def f_and_grad(x):
        v = agg @ x
        val = float(lam @ np.log1p(v))
        grad = (lam / (1.0 + v)) @ agg
        return val, grad

    a_in = sp.csr_matrix(prog.a_in)
    bounds = [(float(prog.lb[i]),
               float(prog.ub[i]) if np.isfinite(prog.ub[i]) else None)
              for i in range(n)] + [(None, None)]
    a_eq = sp.hstack([sp.csr_matrix(prog.a_eq),
                      sp.csr_matrix((prog.a_eq.shape[0], 1))], format="csr")
    cost = np.zeros(n + 1)
    cost[-1] = -1.0  # maximize z
    base_rows = sp.hstack([a_in, sp.csr_matrix((a_in.shape[0], 1))], format="csr")

    x = prog.x0.copy()
    cuts, cut_rhs = [], []
    best_x, best_val = None, -math.inf
    iterations = 0
    for it in range(1, max_cuts + 1):
        val, grad = f_and_grad(x)
        if val > best_val:
            best_val, best_x = val, x.copy()
        # z - grad.x <= f(x_j) - grad.x_j
        row = np.concatenate([-grad, [1.0]])
        cuts.append(sp.csr_matrix(row))
        cut_rhs.append(val - float(grad @ x))
        a_ub = sp.vstack([base_rows] + cuts, format="csr")
        b_ub = np.concatenate([prog.b_in, cut_rhs])
        res = linprog(cost, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=prog.b_eq,
                      bounds=bounds, method="highs",
                      options={"primal_feasibility_tolerance": 1e-10,
                               "dual_feasibility_tolerance": 1e-9})
        iterations = it
        if res.status == 2:
            return SolveReport(x=prog.x0, objective=-math.inf,
                               kkt_residual=math.inf, iterations=it,
                               status="infeasible")
        if res.status != 0:
            break
        x = res.x[:n]
        upper = float(res.x[-1])
        val_new, _ = f_and_grad(x)
        if val_new > best_val:
            best_val, best_x = val_new, x.copy()
        gap = upper - best_val
        if gap <= tol * max(1.0, abs(best_val)):
            return SolveReport(x=best_x, objective=best_val,
                               kkt_residual=max(gap, 0.0), iterations=it,
                               status="optimal")
    return SolveReport(x=best_x if best_x is not None else prog.x0,
                       objective=best_val, kkt_residual=math.inf,
                       iterations=iterations, status="max_iter")


def sample_mapping_rules(strategy: Strategy, frame_slots: int,
                         rng: np.random.Generator) -> list[MappingRule]:
    """Draw one state-to-action lookup per slot of the next frame."""
    table = strategy.table
    n_states, n_actions = table.shape
    cum = np.cumsum(table, axis=1)
    cum[:, -1] = 1.0
    draws = rng.random((frame_slots, n_states))
    rules = []
    for t in range(frame_slots):
        actions = tuple(int(np.searchsorted(cum[wi], draws[t, wi], side="right"))
                        for wi in range(n_states))
        actions = tuple(min(a, n_actions - 1) for a in actions)
        rules.append(MappingRule(actions=actions, n_actions=n_actions))
    return rules


def payload_stats(game: Game, frame_slots: int, r_unit: float) -> FronthaulPayload:
    """Upload/feedback value counts for the statistics-based exchange.

    Per BS: one arrival mean, the fronthaul-time pmf, and one pmf entry per
    level of each own-link codebook.  Feedback: one lookup index per slot.
    """
    counts = []
    for links in game.states.own_links:
        c = 1 + len(game.states.g_set) + sum(len(l.levels.values) for l in links)
        counts.append(c)
    return FronthaulPayload(upload_counts=tuple(counts),
                            feedback_count=frame_slots, r_unit=r_unit)


def problem_dimensions(game: Game) -> tuple[int, int]:
    """Closed-form variable and constraint counts of the assembled program."""
    states, acts = game.states, game.actions
    if acts.n_actions == 0 or min(acts.sizes) == 0:
        raise ValueError("degenerate action space")
    n_w, n_a = states.n_states, acts.n_actions
    n_vars = n_w * n_a + sum(states.local_sizes)
    n_cons = (2 * game.bs_count
              + sum(states.local_sizes[b] * acts.sizes[b] for b in range(game.bs_count))
              + n_w + n_w * n_a + 2 * sum(states.local_sizes))
    return n_vars, n_cons


class StatisticsController:
    """Per-frame driver around the program: cadence, cache, and sampling.

    Solving the full table program every frame is wasteful once the
    estimates settle, so the controller re-solves on a schedule (every
    frame for the first ``initial_resolves`` invocations, then every
    ``resolve_period`` frames) and otherwise reuses the cached table.
    """

    def __init__(self, game: Game, frame_slots: int, *, tol: float = 1e-7,
                 initial_resolves: int = 6, resolve_period: int = 25,
                 equilibrium_slack: float = 1e-8):
        self.game = game
        self.frame_slots = frame_slots
        self.tol = tol
        self.equilibrium_slack = equilibrium_slack
        self.initial_resolves = initial_resolves
        self.resolve_period = resolve_period
        self.strategy: Strategy | None = None
        self.thetas: list[np.ndarray] | None = None
        self._solves = 0
        self._calls = 0
        self._v_max = game.v_max()

    def recommendations(self, stats: EstimatedStatistics,
                        rng: np.random.Generator) -> list[MappingRule]:
        self._calls += 1
        due = (self.strategy is None
               or self._calls <= self.initial_resolves
               or (self._calls - self.initial_resolves) % self.resolve_period == 0)
        if due:
            prog = build_program(stats, self.game, v_max=self._v_max,
                                 equilibrium_slack=self.equilibrium_slack)
            self.strategy, self.thetas, _ = solve_stats_allocation(prog, tol=self.tol)
            self._solves += 1
        return sample_mapping_rules(self.strategy, self.frame_slots, rng)
