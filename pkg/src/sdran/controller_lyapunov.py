"""State-realization-based resource allocation at the controller.

Instead of state statistics, the BSs upload last frame's state realizations.
The controller stabilizes one virtual queue per long-run constraint of the
recommendation program: per-(BS, local state, deviation) queues for the
no-gain rows, plus per-BS queues for the deviation-value budget, the demand
constraint, and the auxiliary-rate coupling (the last one signed).  Per
uploaded slot it solves three decomposed subproblems: two scalar closed
forms and one difference-of-convex power program handled by the
convex-concave procedure, then rebuilds the per-state recommendation table
from the time-averaged queue values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .controller_stats import FronthaulPayload, MappingRule
from .game import Game
from .solver import CcpStop, DcLogProgram, ccp_solve, ccp_solve_batch

__all__ = [
    "VirtualQueueSet",
    "bootstrap_rule",
    "LyapunovScratch",
    "solve_p1",
    "solve_p2",
    "build_p3",
    "solve_p3",
    "project_global_action",
    "update_virtual_queues",
    "averaged_queues",
    "payload_realization",
    "RealizationController",
]


@dataclass
class VirtualQueueSet:
    """Constraint-tracking queues: three clamped families and one signed."""

    y: list[np.ndarray]  # [b] -> (local states, per-BS actions), >= 0
    z: np.ndarray        # (B,), >= 0
    d: np.ndarray        # (B,), >= 0
    f: np.ndarray        # (B,), signed

    @classmethod
    def zeros(cls, game: Game) -> "VirtualQueueSet":
        B = game.bs_count
        y = [np.zeros((game.states.local_sizes[b], game.actions.sizes[b]))
             for b in range(B)]
        return cls(y=y, z=np.zeros(B), d=np.zeros(B), f=np.zeros(B))

    def copy(self) -> "VirtualQueueSet":
        return VirtualQueueSet(y=[a.copy() for a in self.y], z=self.z.copy(),
                               d=self.d.copy(), f=self.f.copy())

    def validate(self) -> None:
        for arr in self.y:
            if np.any(arr < 0):
                raise ValueError("deviation queues must be nonnegative")
        if np.any(self.z < 0) or np.any(self.d < 0):
            raise ValueError("z and d queues must be nonnegative")


@dataclass
class LyapunovScratch:
    """Per-slot auxiliary solutions produced during the replay."""

    gamma: np.ndarray        # (B,) auxiliary rate in [0, v_max]
    theta_tilde: np.ndarray  # (B,) deviation-value stand-in at the realized state


def solve_p1(f_b: float, kappa: float, lam_hat_b: float, v_max_b: float) -> float:
    """Closed-form minimizer of ``f*g - kappa*lam*ln(1+g)`` over [0, v_max].

    Three regimes: the queue is so low that the ceiling is optimal, an
    interior stationary point, or zero.
    """
    if v_max_b <= 0:
        raise ValueError("v_max must be positive")
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    kl = kappa * lam_hat_b
    if f_b <= kl / (v_max_b + 1.0):
        return v_max_b
    if f_b <= kl:
        return kl / f_b - 1.0
    return 0.0


def solve_p2(z_b: float, y_sum: float, v_max_b: float) -> float:
    """Minimizer of ``(z - y_sum) * theta`` over [0, v_max]; ties go to 0."""
    return v_max_b if z_b < y_sum else 0.0


def _cross_pattern(game: Game, b: int, m: int, s: int, var_offset: list[int]) -> np.ndarray:
    """Coefficients of every power variable in UE (b, m)'s worst-case
    interference on carrier ``s``, normalized by the noise power."""
    n = var_offset[-1]
    row = np.zeros(n)
    for tx in range(game.bs_count):
        if tx == b:
            continue
        hmax = game.interference.hmax(tx, b, m, s)
        for m2 in range(game.states.ues_per_bs[tx]):
            row[var_offset[tx] + m2 * game.states.subcarriers + s] = hmax / game.noise_w
    return row


def build_p3(game: Game, queues: VirtualQueueSet, state_idx: int,
             reduce_overlap: bool = False) -> DcLogProgram:
    """Assemble the slot subproblem over continuous relaxed powers.

    The objective is the queue-weighted drift expression at the given global
    state: deviation-queue terms and the own-rate terms of the clamped
    queues form the concave part; the own-rate terms enter the convex part
    with their negated weights.  Indicator signs are frozen from the signed
    queue at build time.  Variables are ordered (BS, UE, carrier), carrier
    fastest, with one budget group per BS.

    ``reduce_overlap`` merges log terms that appear on both sides with the
    same affine argument, keeping only the net weight on the correct side.
    The objective is unchanged, but the difference-of-convex overlap
    shrinks, which removes the slow tail the convex-concave procedure
    exhibits when the two sides nearly cancel.  The default keeps the two
    sides exactly as the drift expansion writes them (that split is what
    the published linearization constants differentiate).
    """
    queues.validate()
    states, acts = game.states, game.actions
    B = game.bs_count
    var_offset = [0]
    for b in range(B):
        var_offset.append(var_offset[-1] + states.ues_per_bs[b] * states.subcarriers)
    n = var_offset[-1]
    noise = game.noise_w

    conc_w, conc_c, conc_a = [], [], []
    conv_w, conv_c, conv_a = [], [], []

    def add(weight: float, const: float, row: np.ndarray, concave: bool):
        # emit a fixed row layout (batch solving needs identical shapes
        # across instances): negative weights land on the opposite side
        conc_w.append(max(weight, 0.0) if concave else max(-weight, 0.0))
        conc_c.append(const)
        conc_a.append(row)
        conv_w.append(max(-weight, 0.0) if concave else max(weight, 0.0))
        conv_c.append(const)
        conv_a.append(row)

    for b in range(B):
        li = states.local_of_global(b, state_idx)
        y_vec = queues.y[b][li]
        y_sum = float(y_vec.sum())
        own = states.own_gains(b, state_idx)
        f_b = float(queues.f[b])
        f_neg = max(-f_b, 0.0)   # -F 1{F<0}
        f_pos = max(f_b, 0.0)    # +F 1{F>0}
        zdf = float(queues.d[b]) + f_pos + float(queues.z[b])
        levels = acts.level_grids[b]
        lev_idx = acts.level_indices[b]  # (A_b, M, S)
        for m in range(states.ues_per_bs[b]):
            for s in range(states.subcarriers):
                cross = _cross_pattern(game, b, m, s, var_offset)
                own_row = cross.copy()
                own_row[var_offset[b] + m * states.subcarriers + s] += own[m, s] / noise
                # deviation-queue terms, grouped by the deviation's power level
                for L, lev in enumerate(levels):
                    w = float(y_vec[lev_idx[:, m, s] == L].sum())
                    if lev == 0.0 and reduce_overlap:
                        continue  # folded into the net standalone-cross term
                    add(w, 1.0 + lev * own[m, s] / noise, cross, True)
                if reduce_overlap:
                    y_zero = float(y_vec[lev_idx[:, m, s] == 0].sum())
                    # own-rate rows: concave f_neg vs convex zdf, same argument
                    add(f_neg - zdf, 1.0, own_row, True)
                    # standalone-cross rows: concave (zdf + zero-level
                    # deviation mass) vs convex (y_sum + f_neg)
                    add(zdf + y_zero - y_sum - f_neg, 1.0, cross, True)
                else:
                    # own-rate term of the sign-split queue, negative side
                    add(f_neg, 1.0, own_row, True)
                    # clamped-queue interference credit
                    add(zdf, 1.0, cross, True)
                    # convex side: own-rate and deviation-baseline terms
                    add(zdf, 1.0, own_row, False)
                    add(y_sum + f_neg, 1.0, cross, False)
    group_ids = np.concatenate([
        np.full(states.ues_per_bs[b] * states.subcarriers, b, dtype=np.int64)
        for b in range(B)])
    k1, k2 = len(conc_w), len(conv_w)
    return DcLogProgram(
        n=n,
        conc_w=np.asarray(conc_w), conc_c=np.asarray(conc_c),
        conc_a=np.asarray(conc_a).reshape(k1, n),
        conv_w=np.asarray(conv_w), conv_c=np.asarray(conv_c),
        conv_a=np.asarray(conv_a).reshape(k2, n),
        group_ids=group_ids,
        budgets=np.asarray(acts.budgets, float))


def project_global_action(game: Game, x: np.ndarray) -> int:
    """Nearest member of the global action grid, per-BS Euclidean.

    The product structure makes the global nearest point the tuple of
    per-BS nearest points; ties resolve to the lowest canonical index.
    """
    states, acts = game.states, game.actions
    offset = 0
    per_bs = []
    for b in range(game.bs_count):
        size = states.ues_per_bs[b] * states.subcarriers
        xb = x[offset:offset + size].reshape(states.ues_per_bs[b], states.subcarriers)
        d2 = ((acts.actions[b] - xb[None]) ** 2).sum(axis=(1, 2))
        per_bs.append(int(np.argmin(d2)))
        offset += size
    return acts.encode(tuple(per_bs))


def solve_p3(game: Game, prog: DcLogProgram, x0: np.ndarray | None = None,
             stop: CcpStop = CcpStop(), inner_tol: float = 1e-10) -> tuple[int, np.ndarray]:
    """Continuous CCP solve followed by projection to the action grid."""
    res = ccp_solve(prog, x0=x0, stop=stop, inner_tol=inner_tol)
    return project_global_action(game, res.x), res.x


def update_virtual_queues(game: Game, queues: VirtualQueueSet, state_idx: int,
                          action_idx: int, scratch: LyapunovScratch,
                          lam_hat: np.ndarray) -> VirtualQueueSet:
    """One slot of the queue recursions at the realized state and action.

    Deviation queues move only at the realized local state (their drive is
    gated on observing that state); the clamped families floor at zero; the
    signed family does not.
    """
    vt = game.v_table()
    out = queues.copy()
    v_real = vt[:, state_idx, action_idx]
    for b in range(game.bs_count):
        li = game.states.local_of_global(b, state_idx)
        repl = game.actions.replace(b)
        v_dev = vt[b, state_idx, repl[action_idx]]  # (A_b,) utility per deviation
        out.y[b][li] = np.maximum(
            queues.y[b][li] + v_dev - scratch.theta_tilde[b], 0.0)
    out.z = np.maximum(queues.z + scratch.theta_tilde - v_real, 0.0)
    out.d = np.maximum(queues.d + np.asarray(lam_hat) - v_real, 0.0)
    out.f = queues.f + scratch.gamma - v_real
    return out


def averaged_queues(sums: VirtualQueueSet, count: int) -> VirtualQueueSet:
    """Arithmetic means of the queue history accumulated in ``sums``."""
    if count <= 0:
        raise ValueError("cannot average an empty queue history")
    return VirtualQueueSet(y=[a / count for a in sums.y], z=sums.z / count,
                           d=sums.d / count, f=sums.f / count)


def payload_realization(frame_slots: int, r_unit: float,
                        bs_count: int = 1) -> FronthaulPayload:
    """Value counts for the realization-based exchange.

    Per BS: one state realization per slot of the reported frame plus the
    arrival mean.  Feedback: a single table index.
    """
    return FronthaulPayload(upload_counts=tuple([frame_slots + 1] * bs_count),
                            feedback_count=1, r_unit=r_unit)


def bootstrap_rule(game: Game) -> MappingRule:
    """Deterministic full-power spread: carrier s serves UE (s mod M_b).

    Used before the controller has anything to work from.  The literal
    uniform power split projects to the all-zero action under the
    lowest-index tie rule, which would idle the whole first frame;
    spreading the budget round-robin keeps every carrier active.
    """
    per_bs = []
    for b in range(game.bs_count):
        M, S = game.states.ues_per_bs[b], game.states.subcarriers
        target = np.zeros((M, S))
        per_carrier = game.actions.budgets[b] / S
        grid = game.actions.level_grids[b]
        lev = int(np.argmin(np.abs(grid - per_carrier)))
        if grid[lev] == 0.0 and len(grid) > 1:
            lev = 1
        for s in range(S):
            target[s % M, s] = grid[lev]
        d2 = ((game.actions.actions[b] - target[None]) ** 2).sum(axis=(1, 2))
        per_bs.append(int(np.argmin(d2)))
    a_idx = game.actions.encode(tuple(per_bs))
    return MappingRule(actions=tuple([a_idx] * game.states.n_states),
                       n_actions=game.actions.n_actions)


class RealizationController:
    """Per-frame driver: replay the uploaded slots, then rebuild the table.

    The controller's queue chain is internal to it; replaying the same
    uploads twice from the same carried state yields identical queues.  The
    first frame has nothing to replay, so the caller starts from the
    deterministic full-power spread rule (see ``bootstrap_rule``).
    """

    def __init__(self, game: Game, kappa: float, *,
                 stop: CcpStop | None = None, inner_tol: float = 1e-5):
        # The in-simulation tolerances are deliberately looser than the
        # library defaults: every solution is immediately projected onto a
        # coarse power grid, so objective precision beyond ~1e-3 relative
        # cannot change the chosen action in practice.
        self.game = game
        self.kappa = kappa
        self.stop = stop if stop is not None else CcpStop(rel_change=1e-3, max_iter=8)
        self.inner_tol = inner_tol
        self.v_max = game.v_max()
        self.queues = VirtualQueueSet.zeros(game)
        self.sums = VirtualQueueSet.zeros(game)
        self.count = 0
        self._warm: np.ndarray | None = None        # replay warm start
        self._warm_rule: np.ndarray | None = None   # (n_states, n) warm starts

    def bootstrap_rule(self) -> MappingRule:
        return bootstrap_rule(self.game)

    def replay_slot(self, state_idx: int, lam_hat: np.ndarray) -> LyapunovScratch:
        """Advance the queue chain by one uploaded slot (steps P1, P2, P3)."""
        game = self.game
        B = game.bs_count
        gamma = np.array([
            solve_p1(float(self.queues.f[b]), self.kappa, float(lam_hat[b]),
                     float(self.v_max[b])) for b in range(B)])
        theta = np.empty(B)
        for b in range(B):
            li = game.states.local_of_global(b, state_idx)
            theta[b] = solve_p2(float(self.queues.z[b]),
                                float(self.queues.y[b][li].sum()),
                                float(self.v_max[b]))
        prog = build_p3(game, self.queues, state_idx, reduce_overlap=True)
        res = ccp_solve_batch([prog], x0=self._warm, stop=self.stop,
                              inner_tol=self.inner_tol)[0]
        action_idx = project_global_action(game, res.x)
        self._warm = res.x

        # accumulate the pre-update values: they are this slot's queue state
        for b in range(B):
            self.sums.y[b] += self.queues.y[b]
        self.sums.z += self.queues.z
        self.sums.d += self.queues.d
        self.sums.f += self.queues.f
        self.count += 1

        scratch = LyapunovScratch(gamma=gamma, theta_tilde=theta)
        self.queues = update_virtual_queues(game, self.queues, state_idx,
                                            action_idx, scratch, lam_hat)
        return scratch

    def run_frame(self, lam_hat: np.ndarray,
                  realized_states: list[int]) -> MappingRule:
        """Replay one uploaded frame, then emit the next recommendation table."""
        if not realized_states:
            raise ValueError("nothing uploaded: no slots to replay")
        for w_idx in realized_states:
            self.replay_slot(int(w_idx), lam_hat)
        avg = averaged_queues(self.sums, self.count)
        game = self.game
        progs = [build_p3(game, avg, w, reduce_overlap=True)
                 for w in range(game.states.n_states)]
        x0 = self._warm_rule
        results = ccp_solve_batch(progs, x0=x0, stop=self.stop,
                                  inner_tol=self.inner_tol)
        self._warm_rule = np.stack([r.x for r in results])
        actions = tuple(project_global_action(game, r.x) for r in results)
        return MappingRule(actions=actions, n_actions=game.actions.n_actions)
