"""Finite stochastic game played by the base stations.

State, action, and cross-channel enumerations with exact (never sampled)
expectation machinery.  A per-BS local state is a fronthaul time level plus
the quantized gains of the BS's own serving links; the global state shares
one fronthaul level across all BSs.  Actions are per-(UE, sub-carrier) power
matrices drawn from a finite level grid, subject to the per-BS budget and
the one-UE-per-sub-carrier rule.

Utilities come in two flavours: the true utility ``u`` (expected effective
rate over the random cross-channel gains) and the pessimistic utility ``v``
(every cross gain replaced by its codebook maximum), which lower-bounds
``u`` pointwise.  Deviation values, equilibrium checks, and the u-vs-v gap
are computed by exhaustive enumeration so they can serve as audit oracles.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .model import GainLevelSet

__all__ = [
    "LinkQuant",
    "StateSpace",
    "ActionSpace",
    "InterferenceModel",
    "Strategy",
    "Game",
    "EquilibriumAudit",
    "utility_u",
    "utility_v",
    "stationary_expected_utility",
    "deviation_value",
    "check_epsilon_cce",
    "epsilon_gap",
    "audit_strategy",
]

_MAX_ENUM = 200_000  # guard against runaway table sizes


@dataclass(frozen=True)
class LinkQuant:
    """One quantized channel variable and the (UE, sub-carrier) cells it feeds.

    With frequency-flat fading a single variable covers every sub-carrier of
    a UE link; with per-carrier fading each cell gets its own variable.
    """

    cells: tuple[tuple[int, int], ...]  # (m, s) pairs sharing this gain
    levels: GainLevelSet
    pmf: tuple[float, ...]

    def __post_init__(self):
        if len(self.pmf) != len(self.levels.values):
            raise ValueError("pmf length must match the level count")
        if abs(sum(self.pmf) - 1.0) > 1e-9 or min(self.pmf) < 0:
            raise ValueError("pmf must be a distribution")


class StateSpace:
    """Shared fronthaul level plus per-BS own-link gain digits.

    Digit order is documented and canonical: the fronthaul digit is most
    significant, then BS 0's links in declaration order, then BS 1's, etc.
    Within one BS the local index uses the same order restricted to its own
    digits.
    """

    def __init__(self, g_set: tuple[float, ...], own_links: list[list[LinkQuant]],
                 ues_per_bs: tuple[int, ...], subcarriers: int):
        if len(g_set) == 0:
            raise ValueError("fronthaul level set must be nonempty")
        if any(np.diff(np.asarray(g_set)) <= 0):
            raise ValueError("fronthaul levels must be strictly increasing")
        self.g_set = tuple(float(g) for g in g_set)
        self.own_links = own_links
        self.ues_per_bs = ues_per_bs
        self.subcarriers = subcarriers
        self.bs_count = len(own_links)

        # per-BS cell -> link position lookup
        self._cell_to_link: list[dict[tuple[int, int], int]] = []
        for b, links in enumerate(own_links):
            lookup: dict[tuple[int, int], int] = {}
            for pos, link in enumerate(links):
                for cell in link.cells:
                    if cell in lookup:
                        raise ValueError(f"cell {cell} of BS {b} mapped twice")
                    lookup[cell] = pos
            expect = {(m, s) for m in range(ues_per_bs[b]) for s in range(subcarriers)}
            if set(lookup) != expect:
                raise ValueError(f"BS {b} link cells do not cover its (UE, carrier) grid")
            self._cell_to_link.append(lookup)

        self._radix = [len(self.g_set)] + [
            len(link.levels.values) for links in own_links for link in links
        ]
        self._bs_digit_slices = []
        pos = 1
        for links in own_links:
            self._bs_digit_slices.append(slice(pos, pos + len(links)))
            pos += len(links)

        self.n_states = int(np.prod(self._radix))
        if self.n_states > _MAX_ENUM:
            raise ValueError(f"state space too large to enumerate ({self.n_states})")
        self.local_sizes = [
            len(self.g_set) * int(np.prod([len(l.levels.values) for l in links]))
            for links in own_links
        ]

        # digit table, one row per global state (mixed radix, last digit fastest)
        digits = np.zeros((self.n_states, len(self._radix)), dtype=np.int64)
        idx = np.arange(self.n_states)
        for col in range(len(self._radix) - 1, -1, -1):
            digits[:, col] = idx % self._radix[col]
            idx //= self._radix[col]
        self.digits = digits

        # local index of every global state, per BS
        self._local_of_global = np.zeros((self.n_states, self.bs_count), dtype=np.int64)
        for b in range(self.bs_count):
            loc = digits[:, 0].copy()
            for col in range(self._bs_digit_slices[b].start, self._bs_digit_slices[b].stop):
                loc = loc * self._radix[col] + digits[:, col]
            self._local_of_global[:, b] = loc

        # global states grouped by each BS's local state
        self._consistent: list[list[np.ndarray]] = []
        for b in range(self.bs_count):
            groups = [np.array([], dtype=np.int64)] * self.local_sizes[b]
            order = np.argsort(self._local_of_global[:, b], kind="stable")
            sorted_loc = self._local_of_global[order, b]
            bounds = np.searchsorted(sorted_loc, np.arange(self.local_sizes[b] + 1))
            for li in range(self.local_sizes[b]):
                groups[li] = order[bounds[li]:bounds[li + 1]]
            self._consistent.append(groups)

    # -- indexing ---------------------------------------------------------

    def encode(self, varsigma_idx: int, level_digits: dict[tuple[int, int, int], int]) -> int:
        """Global index from fronthaul digit plus {(b, m, s): level} digits."""
        out = varsigma_idx
        col = 1
        for b, links in enumerate(self.own_links):
            for pos, link in enumerate(links):
                m, s = link.cells[0]
                d = level_digits[(b, m, s)]
                out = out * self._radix[col] + d
                col += 1
        return out

    def encode_from_arrays(self, varsigma_idx: int, levels_per_bs: list[np.ndarray]) -> int:
        """Global index from per-BS (M_b, S) level-index arrays."""
        out = varsigma_idx
        col = 1
        for b, links in enumerate(self.own_links):
            arr = levels_per_bs[b]
            for link in links:
                m, s = link.cells[0]
                out = out * self._radix[col] + int(arr[m, s])
                col += 1
        return out

    def local_of_global(self, b: int, state_idx: int) -> int:
        return int(self._local_of_global[state_idx, b])

    def consistent_states(self, b: int, local_idx: int) -> np.ndarray:
        """Global states whose BS-``b`` component equals the given local state."""
        return self._consistent[b][local_idx]

    def varsigma_of(self, state_idx) -> np.ndarray:
        g = np.asarray(self.g_set)
        return g[self.digits[state_idx, 0]]

    def own_gains(self, b: int, state_idx: int) -> np.ndarray:
        """(M_b, S) gain values of BS ``b``'s serving links in this state."""
        out = np.zeros((self.ues_per_bs[b], self.subcarriers))
        sl = self._bs_digit_slices[b]
        for pos, link in enumerate(self.own_links[b]):
            lev = link.levels.values[self.digits[state_idx, sl.start + pos]]
            for (m, s) in link.cells:
                out[m, s] = lev
        return out

    def own_gain_table(self, b: int) -> np.ndarray:
        """(n_states, M_b, S) gains of BS ``b``, for every global state."""
        out = np.zeros((self.n_states, self.ues_per_bs[b], self.subcarriers))
        sl = self._bs_digit_slices[b]
        for pos, link in enumerate(self.own_links[b]):
            vals = np.asarray(link.levels.values)[self.digits[:, sl.start + pos]]
            for (m, s) in link.cells:
                out[:, m, s] = vals
        return out

    # -- probabilities ----------------------------------------------------

    def state_pmf(self, varsigma_pmf: np.ndarray,
                  gain_pmfs: list[list[np.ndarray]] | None = None) -> np.ndarray:
        """Product-form pmf over global states.

        ``gain_pmfs[b][pos]`` overrides link pmfs (used with empirical
        estimates); defaults to the links' own pmfs.
        """
        vp = np.asarray(varsigma_pmf, dtype=float)
        if vp.shape != (len(self.g_set),) or abs(vp.sum() - 1.0) > 1e-9 or vp.min() < 0:
            raise ValueError("invalid fronthaul pmf")
        w = vp[self.digits[:, 0]].astype(float)
        col = 1
        for b, links in enumerate(self.own_links):
            for pos, link in enumerate(links):
                pmf = np.asarray(gain_pmfs[b][pos] if gain_pmfs is not None else link.pmf)
                w = w * pmf[self.digits[:, col]]
                col += 1
        return w

    def local_pmf(self, b: int, w: np.ndarray) -> np.ndarray:
        """Marginal pmf of BS ``b``'s local state under a global pmf."""
        return np.bincount(self._local_of_global[:, b], weights=w,
                           minlength=self.local_sizes[b])


class ActionSpace:
    """Per-BS feasible power matrices and the global product space."""

    def __init__(self, ues_per_bs: tuple[int, ...], subcarriers: int,
                 level_grids: list[np.ndarray], budgets: list[float]):
        self.ues_per_bs = ues_per_bs
        self.subcarriers = subcarriers
        self.bs_count = len(ues_per_bs)
        self.level_grids = [np.asarray(g, dtype=float) for g in level_grids]
        self.budgets = [float(x) for x in budgets]
        for g in self.level_grids:
            if g[0] != 0.0 or np.any(np.diff(g) <= 0):
                raise ValueError("level grid must start at 0 and increase")

        self.actions: list[np.ndarray] = []      # [b] -> (A_b, M_b, S) powers
        self.level_indices: list[np.ndarray] = []  # [b] -> (A_b, M_b, S) grid indices
        for b in range(self.bs_count):
            idx_mats = _enumerate_bs_actions(
                ues_per_bs[b], subcarriers, self.level_grids[b], self.budgets[b])
            self.level_indices.append(idx_mats)
            self.actions.append(self.level_grids[b][idx_mats])
        self.sizes = [a.shape[0] for a in self.actions]
        self.n_actions = int(np.prod(self.sizes))
        if self.n_actions > _MAX_ENUM:
            raise ValueError(f"action space too large to enumerate ({self.n_actions})")

        # decode table: global action -> per-BS action indices (BS 0 most significant)
        dec = np.zeros((self.n_actions, self.bs_count), dtype=np.int64)
        idx = np.arange(self.n_actions)
        for b in range(self.bs_count - 1, -1, -1):
            dec[:, b] = idx % self.sizes[b]
            idx //= self.sizes[b]
        self.decode = dec

        self.power_sums = [a.sum(axis=1) for a in self.actions]  # [b] -> (A_b, S)
        self._replace: list[np.ndarray] = []
        weights = np.ones(self.bs_count, dtype=np.int64)
        for b in range(self.bs_count - 2, -1, -1):
            weights[b] = weights[b + 1] * self.sizes[b + 1]
        self._flat_base = (dec * weights).sum(axis=1)
        for b in range(self.bs_count):
            base = self._flat_base - dec[:, b] * weights[b]
            self._replace.append(base[:, None] + weights[b] * np.arange(self.sizes[b])[None, :])

    def encode(self, per_bs: tuple[int, ...]) -> int:
        out = 0
        for b in range(self.bs_count):
            out = out * self.sizes[b] + per_bs[b]
        return out

    def replace(self, b: int) -> np.ndarray:
        """(n_actions, A_b) table: global action with BS b's part swapped."""
        return self._replace[b]

    def restricted(self, b: int, carriers: frozenset[int] | set[int]) -> np.ndarray:
        """Indices of BS ``b`` actions whose support lies inside ``carriers``."""
        powers = self.actions[b]
        outside = [s for s in range(self.subcarriers) if s not in carriers]
        if not outside:
            return np.arange(self.sizes[b])
        mask = (powers[:, :, outside] == 0.0).all(axis=(1, 2))
        return np.nonzero(mask)[0]


def _enumerate_bs_actions(m_count: int, s_count: int, grid: np.ndarray,
                          budget: float) -> np.ndarray:
    """All (M, S) level-index matrices obeying the two feasibility rules."""
    per_carrier = [np.zeros(m_count, dtype=np.int64)]
    for m in range(m_count):
        for li in range(1, len(grid)):
            col = np.zeros(m_count, dtype=np.int64)
            col[m] = li
            per_carrier.append(col)
    mats = []
    for combo in itertools.product(per_carrier, repeat=s_count):
        idx = np.stack(combo, axis=1)  # (M, S)
        if grid[idx].sum() <= budget * (1.0 + 1e-12):
            mats.append(idx)
    mats.sort(key=lambda a: tuple(a.flatten()))
    return np.stack(mats, axis=0)


class InterferenceModel:
    """Random cross-channel gains: tx BS -> another BS's UE, per sub-carrier."""

    def __init__(self, cross_links: dict[tuple[int, int], list[LinkQuant]],
                 ues_per_bs: tuple[int, ...], subcarriers: int, bs_count: int):
        self.cross_links = cross_links
        self.bs_count = bs_count
        self.ues_per_bs = ues_per_bs
        self.subcarriers = subcarriers
        self._cell_to_link: dict[tuple[int, int], dict[tuple[int, int], int]] = {}
        for (tx, rx), links in cross_links.items():
            lookup: dict[tuple[int, int], int] = {}
            for pos, link in enumerate(links):
                for cell in link.cells:
                    lookup[cell] = pos
            expect = {(m, s) for m in range(ues_per_bs[rx]) for s in range(subcarriers)}
            if set(lookup) != expect:
                raise ValueError(f"cross links {tx}->{rx} do not cover the UE grid")
            self._cell_to_link[(tx, rx)] = lookup

    def link(self, tx: int, rx: int, m: int, s: int) -> LinkQuant:
        return self.cross_links[(tx, rx)][self._cell_to_link[(tx, rx)][(m, s)]]

    def hmax(self, tx: int, rx: int, m: int, s: int) -> float:
        return self.link(tx, rx, m, s).levels.max_value

    def hmax_table(self, rx: int) -> np.ndarray:
        """(bs_count, M_rx, S) max cross gains into BS ``rx``'s UEs (0 on tx=rx)."""
        out = np.zeros((self.bs_count, self.ues_per_bs[rx], self.subcarriers))
        for tx in range(self.bs_count):
            if tx == rx:
                continue
            for m in range(self.ues_per_bs[rx]):
                for s in range(self.subcarriers):
                    out[tx, m, s] = self.hmax(tx, rx, m, s)
        return out

    def combos(self, rx: int, m: int, s: int) -> tuple[np.ndarray, np.ndarray]:
        """All joint cross-gain outcomes hitting UE (rx, m) on carrier ``s``.

        Returns ``(gains, probs)`` with gains of shape (n_combos, bs_count);
        the tx == rx column is zero.
        """
        txs = [tx for tx in range(self.bs_count) if tx != rx]
        level_lists = [np.asarray(self.link(tx, rx, m, s).levels.values) for tx in txs]
        pmfs = [np.asarray(self.link(tx, rx, m, s).pmf) for tx in txs]
        n = int(np.prod([len(l) for l in level_lists])) if txs else 1
        gains = np.zeros((n, self.bs_count))
        probs = np.ones(n)
        for i, combo in enumerate(itertools.product(*[range(len(l)) for l in level_lists])):
            for j, tx in enumerate(txs):
                gains[i, tx] = level_lists[j][combo[j]]
                probs[i] *= pmfs[j][combo[j]]
        return gains, probs


@dataclass
class Strategy:
    """Conditional action distribution, one row per global state."""

    table: np.ndarray  # (n_states, n_actions)

    def __post_init__(self):
        t = self.table
        if np.any(t < -1e-12):
            raise ValueError("strategy entries must be nonnegative")
        if np.any(np.abs(t.sum(axis=1) - 1.0) > 1e-8):
            raise ValueError("every strategy row must sum to one")

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "Strategy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions_per_state: np.ndarray, n_actions: int) -> "Strategy":
        t = np.zeros((len(actions_per_state), n_actions))
        t[np.arange(len(actions_per_state)), actions_per_state] = 1.0
        return cls(t)


class Game:
    """Bundle of spaces plus cached utility tables."""

    def __init__(self, states: StateSpace, actions: ActionSpace,
                 interference: InterferenceModel, frame_slots: int, noise_w: float):
        if states.bs_count != actions.bs_count:
            raise ValueError("state and action spaces disagree on the BS count")
        self.states = states
        self.actions = actions
        self.interference = interference
        self.frame_slots = frame_slots
        self.noise_w = noise_w
        self._v_table: np.ndarray | None = None
        self._u_table: np.ndarray | None = None

    @property
    def bs_count(self) -> int:
        return self.states.bs_count

    def _time_factor(self) -> np.ndarray:
        ts = self.states.varsigma_of(np.arange(self.states.n_states))
        return (self.frame_slots - ts) / self.frame_slots

    def _cross_interference(self, b: int) -> np.ndarray:
        """(n_actions, M_b, S) worst-case interference at BS b's UEs."""
        acts, states = self.actions, self.states
        hmax = self.interference.hmax_table(b)  # (B, M_b, S)
        out = np.zeros((acts.n_actions, states.ues_per_bs[b], states.subcarriers))
        for tx in range(self.bs_count):
            if tx == b:
                continue
            ps = acts.power_sums[tx][acts.decode[:, tx]]  # (n_actions, S)
            out += ps[:, None, :] * hmax[tx][None, :, :]
        return out

    def v_table(self) -> np.ndarray:
        """(bs_count, n_states, n_actions) pessimistic utilities."""
        if self._v_table is not None:
            return self._v_table
        states, acts = self.states, self.actions
        factor = self._time_factor()
        table = np.zeros((self.bs_count, states.n_states, acts.n_actions))
        for b in range(self.bs_count):
            own = states.own_gain_table(b)                     # (W, M, S)
            p = acts.actions[b][acts.decode[:, b]]             # (A, M, S)
            cross = self._cross_interference(b)                # (A, M, S)
            sinr = p[None] * own[:, None] / (self.noise_w + cross[None])
            table[b] = factor[:, None] * np.log2(1.0 + sinr).sum(axis=(2, 3))
        self._v_table = table
        return table

    def u_table(self) -> np.ndarray:
        """(bs_count, n_states, n_actions) true expected utilities."""
        if self._u_table is not None:
            return self._u_table
        states, acts = self.states, self.actions
        factor = self._time_factor()
        table = np.zeros((self.bs_count, states.n_states, acts.n_actions))
        for b in range(self.bs_count):
            own = states.own_gain_table(b)
            p = acts.actions[b][acts.decode[:, b]]
            for m in range(states.ues_per_bs[b]):
                for s in range(states.subcarriers):
                    gains, probs = self.interference.combos(b, m, s)
                    rate_ms = np.zeros((states.n_states, acts.n_actions))
                    for c in range(gains.shape[0]):
                        interf = np.zeros(acts.n_actions)
                        for tx in range(self.bs_count):
                            if tx == b:
                                continue
                            interf += gains[c, tx] * acts.power_sums[tx][acts.decode[:, tx], s]
                        sinr = p[None, :, m, s] * own[:, None, m, s] / (self.noise_w + interf[None, :])
                        rate_ms += probs[c] * np.log2(1.0 + sinr)
                    table[b] += factor[:, None] * rate_ms
        self._u_table = table
        return table

    def table(self, utility: str) -> np.ndarray:
        if utility == "u":
            return self.u_table()
        if utility == "v":
            return self.v_table()
        raise ValueError("utility must be 'u' or 'v'")

    def v_max(self) -> np.ndarray:
        """Per-BS ceiling of the pessimistic utility over all states/actions.

        Attained with every interferer silent, so it also ceils ``u``.
        """
        out = np.zeros(self.bs_count)
        states, acts = self.states, self.actions
        factor = self._time_factor()
        for b in range(self.bs_count):
            own = states.own_gain_table(b)
            p = acts.actions[b]  # (A_b, M, S)
            rate = np.log2(1.0 + p[None] * own[:, None] / self.noise_w).sum(axis=(2, 3))
            out[b] = float(np.max(factor[:, None] * rate))
        return out


def utility_u(game: Game, state_idx: int, action_idx: int) -> np.ndarray:
    """Per-BS expected effective rate at one (state, action) pair."""
    return game.u_table()[:, state_idx, action_idx].copy()


def utility_v(game: Game, state_idx: int, action_idx: int) -> np.ndarray:
    """Per-BS pessimistic rate (cross gains pinned at their maxima)."""
    return game.v_table()[:, state_idx, action_idx].copy()


def stationary_expected_utility(strategy: Strategy, state_pmf: np.ndarray,
                                util_table: np.ndarray) -> np.ndarray:
    """Per-BS long-run utility of a stationary strategy under a state pmf."""
    joint = state_pmf[:, None] * strategy.table
    return np.einsum("wa,bwa->b", joint, util_table)


def deviation_value(game: Game, b: int, local_idx: int, strategy: Strategy,
                    util_table_b: np.ndarray, state_pmf: np.ndarray) -> float:
    """Best single-BS deviation payoff given its observed local state.

    Maximizes, over the deviating action, the conditional expectation of
    the utility when everyone else keeps following the recommendation.
    """
    states, acts = game.states, game.actions
    w_local = states.local_pmf(b, state_pmf)
    if w_local[local_idx] <= 0.0:
        raise ValueError(f"local state {local_idx} of BS {b} has zero probability")
    cons = states.consistent_states(b, local_idx)
    weights = (state_pmf[cons] / w_local[local_idx])[:, None] * strategy.table[cons]
    repl = acts.replace(b)
    best = -math.inf
    for chi in range(acts.sizes[b]):
        val = float(np.sum(weights * util_table_b[cons[:, None], repl[:, chi][None, :]]))
        best = max(best, val)
    return best


def _deviation_values(game: Game, b: int, strategy: Strategy,
                      util_table_b: np.ndarray, state_pmf: np.ndarray) -> np.ndarray:
    """Vector of deviation values over BS b's local states (nan where P=0)."""
    states = game.states
    w_local = states.local_pmf(b, state_pmf)
    out = np.full(states.local_sizes[b], np.nan)
    for li in range(states.local_sizes[b]):
        if w_local[li] > 0.0:
            out[li] = deviation_value(game, b, li, strategy, util_table_b, state_pmf)
    return out


@dataclass
class CceCheckResult:
    passed: bool
    per_bs_passed: list[bool]
    worst_violation: float
    theta: list[np.ndarray]        # deviation values per BS over local states
    achieved: np.ndarray           # per-BS stationary utility


def check_epsilon_cce(game: Game, strategy: Strategy, eps: float,
                      util_table: np.ndarray, state_pmf: np.ndarray) -> CceCheckResult:
    """Audit a strategy against the two equilibrium inequalities.

    The per-state deviation bound holds by construction of the deviation
    values; the binding check is that each BS's stationary utility is within
    ``eps`` of its expected best-deviation payoff.  Zero-probability local
    states are skipped.  Returns the worst violation magnitude (negative
    slack counts as zero).
    """
    states = game.states
    ubar = stationary_expected_utility(strategy, state_pmf, util_table)
    per_bs, thetas = [], []
    worst = 0.0
    for b in range(game.bs_count):
        theta = _deviation_values(game, b, strategy, util_table[b], state_pmf)
        thetas.append(theta)
        w_local = states.local_pmf(b, state_pmf)
        mask = w_local > 0.0
        expected_dev = float(np.sum(w_local[mask] * theta[mask]))
        violation = expected_dev - ubar[b] - eps
        per_bs.append(violation <= 0.0)
        worst = max(worst, violation)
    return CceCheckResult(all(per_bs), per_bs, worst, thetas, ubar)


def epsilon_gap(game: Game, strategy: Strategy, state_pmf: np.ndarray) -> float:
    """Certified slack between the pessimistic and the true equilibrium.

    For each BS, the expected excess of the true-utility deviation value
    over the pessimistic one; the maximum over BSs bounds how far the
    strategy can be from equilibrium under the true utility.  Always >= 0.
    """
    states = game.states
    ut, vt = game.u_table(), game.v_table()
    gap = 0.0
    for b in range(game.bs_count):
        mu = _deviation_values(game, b, strategy, ut[b], state_pmf)
        theta = _deviation_values(game, b, strategy, vt[b], state_pmf)
        w_local = states.local_pmf(b, state_pmf)
        mask = w_local > 0.0
        gap = max(gap, float(np.sum(w_local[mask] * (mu[mask] - theta[mask]))))
    return gap


@dataclass
class EquilibriumAudit:
    """Everything the equilibrium proofs quantify, evaluated exhaustively."""

    theta: list[np.ndarray]     # pessimistic deviation values per BS
    mu: list[np.ndarray]        # true-utility deviation values per BS
    gap: float                  # max_b expected (mu - theta)
    slack: np.ndarray           # (B, W, A) pointwise u - v, nonnegative


def audit_strategy(game: Game, strategy: Strategy, state_pmf: np.ndarray) -> EquilibriumAudit:
    ut, vt = game.u_table(), game.v_table()
    theta = [_deviation_values(game, b, strategy, vt[b], state_pmf)
             for b in range(game.bs_count)]
    mu = [_deviation_values(game, b, strategy, ut[b], state_pmf)
          for b in range(game.bs_count)]
    gap = epsilon_gap(game, strategy, state_pmf)
    return EquilibriumAudit(theta=theta, mu=mu, gap=gap, slack=ut - vt)
