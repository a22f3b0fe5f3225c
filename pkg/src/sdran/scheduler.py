"""Per-slot user scheduling at the base station.

Given the controller's allocated sub-carriers, the BS maximizes a
queue-plus-tradeoff weighted sum of expected log rates over continuous
powers (expectation over its empirical conditional interference pmf),
solves the resulting water-filling system by nested bisection with a KKT
certificate, then projects onto the discrete action grid restricted to the
allocated carriers.  The module also owns the empirical estimators the BSs
maintain: conditional interference pmfs, mean arrivals, and (for the
statistics-based mode) gain and fronthaul-time pmfs.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .game import Game
from .model import dl_rate, queue_step

__all__ = [
    "allocated_subcarriers",
    "InterferenceEstimate",
    "WaterfillResult",
    "waterfill",
    "project_action",
    "ServeResult",
    "serve_slot",
    "update_interference_estimate",
    "EmpiricalEstimators",
]


def allocated_subcarriers(action_powers: np.ndarray | None, subcarriers: int,
                          non_sdn: bool = False) -> frozenset[int]:
    """Carriers the BS may use this slot.

    SDN modes: exactly the positively powered carriers of the received
    recommendation.  Without a controller (or when recommendations never
    arrived), every carrier is allowed.
    """
    if non_sdn or action_powers is None:
        return frozenset(range(subcarriers))
    return frozenset(int(s) for s in range(subcarriers)
                     if float(action_powers[:, s].sum()) > 0.0)


class InterferenceEstimate:
    """Empirical conditional pmfs of the per-(UE, carrier) interference.

    Keyed by (UE, carrier, condition); the condition is the BS's observed
    local state together with its allocated-carrier set.  Each observation
    re-weights the stored pmf by count/(count+1) and gives the new value
    mass 1/(count+1); the support holds exactly the observed values.
    Unseen conditions start as a point mass at zero interference.
    """

    def __init__(self):
        self._pmfs: dict[tuple, dict[float, float]] = {}
        self._counts: dict[tuple, int] = {}

    def pmf(self, m: int, s: int, cond) -> tuple[np.ndarray, np.ndarray]:
        key = (m, s, cond)
        entry = self._pmfs.get(key)
        if not entry:
            return np.array([0.0]), np.array([1.0])
        vals = np.fromiter(entry.keys(), dtype=float, count=len(entry))
        probs = np.fromiter(entry.values(), dtype=float, count=len(entry))
        return vals, probs

    def count(self, m: int, s: int, cond) -> int:
        return self._counts.get((m, s, cond), 0)

    def update(self, cond, observed: np.ndarray) -> None:
        """Fold one slot's realized interference matrix into the condition."""
        m_count, s_count = observed.shape
        for m in range(m_count):
            for s in range(s_count):
                key = (m, s, cond)
                n = self._counts.get(key, 0)
                entry = self._pmfs.setdefault(key, {})
                scale = n / (n + 1.0)
                for k in list(entry):
                    entry[k] *= scale
                val = float(observed[m, s])
                entry[val] = entry.get(val, 0.0) + 1.0 / (n + 1.0)
                self._counts[key] = n + 1


def update_interference_estimate(est: InterferenceEstimate, observed: np.ndarray,
                                 cond) -> InterferenceEstimate:
    """Functional wrapper over :meth:`InterferenceEstimate.update`."""
    est.update(cond, observed)
    return est


@dataclass
class WaterfillResult:
    powers: np.ndarray       # (M, S) continuous optimum
    water_level: float
    kkt_residual: float      # max of the relative KKT components
    degenerate: bool = False


def waterfill(queue_units: np.ndarray, tradeoff: float, gains: np.ndarray,
              est: InterferenceEstimate, carriers: frozenset[int], budget: float,
              noise: float, cond) -> WaterfillResult:
    """Budget-constrained weighted water-filling over the allowed carriers.

    A (UE, carrier) cell receives power iff its zero-power expected marginal
    exceeds the water level; positive powers solve the expected-marginal
    equation at the level, and the level is bisected until the powers sum to
    the budget.  Carriers outside the allocation stay at zero.
    """
    if len(carriers) == 0:
        raise ValueError("no allocation: empty carrier set")
    if budget <= 0:
        raise ValueError("power budget must be positive")
    m_count, s_count = gains.shape
    weights = np.asarray(queue_units, float) + tradeoff
    cells = [(m, s) for m in range(m_count) for s in range(s_count) if s in carriers]
    n_c = len(cells)
    # expected marginal of cell i at power P: sum_k a[i,k] / (b[i,k] + P),
    # padded to a rectangle (zero-weight pads contribute nothing)
    k_max = 1
    pmfs = []
    for (m, s) in cells:
        vals, probs = est.pmf(m, s, cond)
        pmfs.append((vals, probs))
        k_max = max(k_max, len(vals))
    a = np.zeros((n_c, k_max))
    bden = np.ones((n_c, k_max))
    for i, (m, s) in enumerate(cells):
        vals, probs = pmfs[i]
        h = gains[m, s]
        if h > 0:
            a[i, :len(vals)] = weights[m] * probs
            bden[i, :len(vals)] = (noise + vals) / h

    def marg_and_slope(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        den = bden + p[:, None]
        r = a / den
        return r.sum(axis=1), -(r / den).sum(axis=1)

    def marginals(p: np.ndarray) -> np.ndarray:
        return (a / (bden + p[:, None])).sum(axis=1)

    marg0 = marginals(np.zeros(n_c))
    if np.all(marg0 <= 0.0):
        warnings.warn("all scheduling marginals vanish; splitting the budget evenly")
        powers = np.zeros((m_count, s_count))
        for (m, s) in cells:
            powers[m, s] = budget / n_c
        return WaterfillResult(powers=powers, water_level=0.0,
                               kkt_residual=0.0, degenerate=True)

    w_tot = a.sum(axis=1)
    b_bar = (a * bden).sum(axis=1) / np.maximum(w_tot, 1e-300)

    def powers_at(level: float) -> tuple[np.ndarray, np.ndarray]:
        """Per-cell root of marginal(P) = level.

        The marginal is convex decreasing, so Newton from any point on the
        left of the root climbs monotonically; the Jensen bound
        ``w/level - b_bar`` is such a point (exact for one-point pmfs).
        """
        active = marg0 > level
        if not active.any():
            return np.zeros(n_c), np.full(n_c, -np.inf)
        p = np.where(active, np.maximum(w_tot / level - b_bar, 0.0), 0.0)
        slope = None
        for _ in range(50):
            den = bden + p[:, None]
            r = a / den
            m = r.sum(axis=1)
            slope = (r / den).sum(axis=1)
            step = np.where(active, (m - level) / slope, 0.0)
            p = p + step
            if float(np.abs(step).max()) <= 1e-13 * (1.0 + float(p.max())):
                break
        return np.maximum(p, 0.0), -slope

    # analytic start (exact when every pmf is a point mass and all cells active)
    level = float(w_tot.sum() / (budget + b_bar.sum()))
    level_hi = float(marg0.max())      # total = 0 here
    level_lo = 0.0                     # total >= budget in the limit
    level = min(level, level_hi * (1 - 1e-12))
    p = np.zeros(n_c)
    for _ in range(200):
        p, slope = powers_at(level)
        total = float(p.sum())
        if abs(total - budget) <= 1e-12 * budget:
            break
        if total > budget:
            level_lo = level
        else:
            level_hi = level
        active = p > 0
        dtot = float((1.0 / slope[active]).sum()) if active.any() else 0.0
        nxt = level + (budget - total) / dtot if dtot != 0.0 else 0.5 * (level_lo + level_hi)
        if not (level_lo < nxt < level_hi):
            nxt = 0.5 * (level_lo + level_hi)
        if level_hi - level_lo <= 1e-15 * level_hi:
            level = 0.5 * (level_lo + level_hi)
            p, _ = powers_at(level)
            break
        level = nxt
    total = p.sum()
    if total > 0:
        p *= budget / total  # close the residual gap exactly

    marg = marginals(p)
    active = p > 1e-12 * budget
    stat = float(np.max(np.abs(marg[active] - level))) / max(level, 1e-300) if active.any() else 0.0
    dual = float(np.max(np.maximum(marg0[~active] - level, 0.0))) / max(level, 1e-300) \
        if (~active).any() else 0.0
    budget_res = abs(p.sum() - budget) / budget
    residual = max(stat, dual, budget_res)

    powers = np.zeros((m_count, s_count))
    for i, (m, s) in enumerate(cells):
        powers[m, s] = p[i]
    return WaterfillResult(powers=powers, water_level=level, kkt_residual=residual)


def project_action(p_star: np.ndarray, candidate_powers: np.ndarray,
                   candidate_indices: np.ndarray) -> int:
    """Nearest feasible grid action to the continuous powers.

    ``candidate_powers`` is the (K, M, S) stack of allowed actions (already
    restricted to the allocated carriers); returns the action's index in the
    full per-BS action space.  Ties go to the lowest canonical index, which
    is the first row because the candidates are enumerated in index order.
    """
    d2 = ((candidate_powers - p_star[None]) ** 2).sum(axis=(1, 2))
    return int(candidate_indices[int(np.argmin(d2))])


@dataclass
class ServeResult:
    action_index: int        # index in the BS's full action space
    powers: np.ndarray       # (M, S) transmitted
    rates: np.ndarray        # (M, S) effective spectral efficiencies
    queues: np.ndarray       # (M,) bits after the slot
    served_bits: np.ndarray  # (M,)
    slack_bits: np.ndarray   # (M,) offered service beyond the backlog
    waterfill: WaterfillResult


def serve_slot(game: Game, b: int, queues_bits: np.ndarray, tradeoff: float,
               gains: np.ndarray, est: InterferenceEstimate,
               carriers: frozenset[int], arrivals_bits: np.ndarray,
               realized_interference: np.ndarray, varsigma: float,
               bits_per_unit: float, cond) -> ServeResult:
    """One BS-slot: schedule, transmit, observe, and account.

    The power decision sees only the BS's own queues, gains, and estimated
    interference pmfs; the realized cross interference enters afterwards,
    when rates and queue departures are settled.
    """
    acts = game.actions
    budget = acts.budgets[b]
    if len(carriers) == 0:
        # nothing allocated this slot: the BS idles and queues only grow
        wf = WaterfillResult(powers=np.zeros_like(gains), water_level=0.0,
                             kkt_residual=0.0, degenerate=True)
        a_idx = 0
    else:
        wf = waterfill(queues_bits / bits_per_unit, tradeoff, gains, est,
                       carriers, budget, game.noise_w, cond)
        cand = acts.restricted(b, carriers)
        a_idx = project_action(wf.powers, acts.actions[b][cand], cand)
    powers = acts.actions[b][a_idx]
    m_count, s_count = powers.shape
    rates = np.zeros((m_count, s_count))
    for m in range(m_count):
        for s in range(s_count):
            rates[m, s] = dl_rate(powers[m, s], gains[m, s],
                                  realized_interference[m, s], varsigma,
                                  game.frame_slots, game.noise_w)
    service = rates.sum(axis=1) * bits_per_unit
    new_q = np.empty(m_count)
    served = np.empty(m_count)
    slack = np.empty(m_count)
    for m in range(m_count):
        new_q[m] = queue_step(queues_bits[m], service[m], arrivals_bits[m])
        served[m] = min(queues_bits[m], service[m])
        slack[m] = service[m] - served[m]
    return ServeResult(action_index=a_idx, powers=powers, rates=rates,
                       queues=new_q, served_bits=served, slack_bits=slack,
                       waterfill=wf)


class EmpiricalEstimators:
    """Running per-BS estimates uploaded over the fronthaul.

    Arrival means update after every frame in all modes; gain-level and
    fronthaul-time pmfs update only when channel statistics are being
    tracked (the statistics-based exchange).  All three follow the same
    frame-indexed running-average recursion, whose fixed point is the batch
    empirical mean.
    """

    def __init__(self, game: Game, bits_per_unit: float, track_channels: bool):
        self.game = game
        self.bits_per_unit = bits_per_unit
        self.track_channels = track_channels
        self.frames = 0
        self.lam_hat = np.zeros(game.bs_count)
        # uninformative priors; the first frame's update replaces them fully
        self.gain_pmfs = [
            [np.full(len(link.levels.values), 1.0 / len(link.levels.values))
             for link in links]
            for links in game.states.own_links]
        g = len(game.states.g_set)
        self.varsigma_pmf = np.full(g, 1.0 / g)

    def update_frame(self, arrivals_bits: np.ndarray,
                     gain_digits: np.ndarray | None,
                     varsigma_idx: int | None) -> None:
        """Fold one finished frame into the running averages.

        ``arrivals_bits`` is (slots, total UEs) in declaration order;
        ``gain_digits`` is (slots, total own links); ``varsigma_idx`` indexes
        the fronthaul-time level observed this frame (None outside SDN).
        """
        n = self.frames
        t0 = arrivals_bits.shape[0]
        col = 0
        for b in range(self.game.bs_count):
            ues = self.game.states.ues_per_bs[b]
            frame_sum = float(arrivals_bits[:, col:col + ues].sum()) / self.bits_per_unit
            self.lam_hat[b] = (n * self.lam_hat[b] / (n + 1)
                               + frame_sum / ((n + 1) * t0))
            col += ues
        if self.track_channels and gain_digits is not None:
            link_col = 0
            for b, links in enumerate(self.game.states.own_links):
                for pos, link in enumerate(links):
                    pmf = self.gain_pmfs[b][pos]
                    fresh = np.bincount(gain_digits[:, link_col],
                                        minlength=len(pmf)).astype(float)
                    self.gain_pmfs[b][pos] = (n * pmf / (n + 1)
                                              + fresh / ((n + 1) * t0))
                    link_col += 1
        if self.track_channels and varsigma_idx is not None:
            fresh = np.zeros_like(self.varsigma_pmf)
            fresh[varsigma_idx] = 1.0
            self.varsigma_pmf = (n * self.varsigma_pmf / (n + 1)
                                 + fresh / (n + 1))
        self.frames = n + 1
