"""Slotted-time, two-timescale simulation harness.

One episode advances frame by frame: at a frame boundary the fronthaul
exchange runs (upload times, feedback times, quantized round trip), the
active controller produces recommendation tables, and then every slot of
the frame draws channels and arrivals, lets each BS schedule inside its
allocated carriers, settles the mutually induced interference, and updates
the empirical estimators.  The non-SDN baseline skips the fronthaul
entirely and schedules over all carriers.

All randomness flows from one 64-bit seed through named per-frame
substreams, so any frame's draws can be reproduced in isolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .controller_lyapunov import (
    RealizationController,
    bootstrap_rule,
    payload_realization,
)
from .controller_stats import (
    EstimatedStatistics,
    MappingRule,
    StatisticsController,
    payload_stats,
)
from .game import ActionSpace, Game, InterferenceModel, LinkQuant, StateSpace
from .model import (
    Bounds,
    FronthaulState,
    GainLevelSet,
    RadioConfig,
    Topology,
    db_to_linear,
    dbm_to_watts,
    dl_rate,
    feedback_time,
    path_loss,
    quantize_gain,
    queue_step,
    round_trip,
    upload_time,
)
from .scheduler import (
    EmpiricalEstimators,
    InterferenceEstimate,
    allocated_subcarriers,
    project_action,
    waterfill,
)

__all__ = [
    "Scenario",
    "SimEnvironment",
    "Metrics",
    "build_environment",
    "generate_channels",
    "generate_arrivals",
    "run_episode",
    "compute_ratios",
    "default_ue_profile",
]

MODES = ("statistics", "realization", "non-sdn")

# substream ids for the per-frame RNG split
_STREAM_FRONTHAUL = 0
_STREAM_CHANNELS = 1
_STREAM_ARRIVALS = 2
_STREAM_CONTROLLER = 3


def frame_rng(seed: int, frame: int, stream: int) -> np.random.Generator:
    """Named substream: any frame's draws are reproducible in isolation."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(frame, stream)))


def default_ue_profile(ues_per_bs: tuple[int, ...]) -> tuple[tuple[float, float], ...]:
    """Distance pattern used throughout: UEs alternate between a near
    profile (10 m serving, 40 m to every interferer) and a far one
    (20 m serving, 30 m interfering)."""
    patterns = [(10.0, 40.0), (20.0, 30.0)]
    dists = []
    for count in ues_per_bs:
        for m in range(count):
            dists.append(patterns[m % 2])
    return tuple(dists)


@dataclass(frozen=True)
class Scenario:
    """A complete, validated experiment description."""

    mode: str = "realization"
    frames: int = 300
    seed: int = 1
    bs_count: int = 2
    ues_per_bs: tuple[int, ...] = (2, 2)
    ue_distances: tuple[tuple[float, float], ...] | None = None  # (own, cross) m
    arrival_mbps: tuple[float, ...] = (8.0, 8.0, 5.0, 5.0)
    tradeoff_v: float = 100.0
    kappa: float = 1e4
    fronthaul_snr_db: float = 20.0
    subcarriers: int = 2
    frame_slots: int = 10
    g_set: tuple[float, ...] = (0.25, 0.5)
    noise_dbm: float = -85.0
    bs_power_dbm: float = 20.0
    controller_power_dbm: float = 25.0
    carrier_ghz: float = 2.4
    bandwidth_hz: float = 10e6
    slot_s: float = 0.1
    gain_levels: int = 2
    power_levels: int = 2
    frequency_flat: bool = True
    lambda_max_factor: float = 3.0
    warmup_slots: int = 100
    r_unit: float = 0.025 * math.log2(1.05)
    stats_initial_resolves: int = 6
    stats_resolve_period: int = 25

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.frames < 1:
            raise ValueError("need at least one frame")
        if len(self.ues_per_bs) != self.bs_count:
            raise ValueError("ues_per_bs must match bs_count")
        n_ues = sum(self.ues_per_bs)
        if len(self.arrival_mbps) != n_ues:
            raise ValueError("need one arrival mean per UE")
        if self.ue_distances is not None and len(self.ue_distances) != n_ues:
            raise ValueError("need one distance pair per UE")
        if self.gain_levels < 1 or self.power_levels < 1:
            raise ValueError("gain and power level counts must be >= 1")

    @property
    def n_ues(self) -> int:
        return sum(self.ues_per_bs)

    @property
    def slots(self) -> int:
        return self.frames * self.frame_slots


@dataclass
class SimEnvironment:
    scenario: Scenario
    topology: Topology
    radio: RadioConfig
    game: Game
    arrival_means_bits: np.ndarray     # per UE, bits per slot
    lambda_max_bits: float
    fronthaul_gain_scale: float        # mean controller-link gain
    own_paths: list[np.ndarray]        # [b] -> per own link mean gain
    cross_paths: dict                  # (tx, rx) -> per cross link mean gain

    @property
    def bits_per_unit(self) -> float:
        return self.radio.bits_per_rate_unit

    def ue_index(self, b: int, m: int) -> int:
        return sum(self.scenario.ues_per_bs[:b]) + m

    def bounds(self) -> Bounds:
        """Certified ceilings: interference-free rates bound both utilities."""
        v_max = self.game.v_max()
        r_max = 0.0
        for b, links in enumerate(self.game.states.own_links):
            top = max(link.levels.max_value for link in links)
            budget = self.game.actions.budgets[b]
            r_max = max(r_max, math.log2(1.0 + budget * top / self.radio.noise_w))
        return Bounds(r_max=r_max, v_max=tuple(v_max), u_max=tuple(v_max))


def build_environment(scenario: Scenario) -> SimEnvironment:
    """Materialize the topology, codebooks, and game spaces."""
    sc = scenario
    dists = sc.ue_distances or default_ue_profile(sc.ues_per_bs)
    distances = {}
    flat = 0
    for b in range(sc.bs_count):
        for m in range(sc.ues_per_bs[b]):
            own, cross = dists[flat]
            flat += 1
            for tx in range(sc.bs_count):
                distances[(tx, (b, m))] = own if tx == b else cross
    topology = Topology(bs_count=sc.bs_count, ues_per_bs=sc.ues_per_bs,
                        distances=distances, controller_present=sc.mode != "non-sdn")
    radio = RadioConfig(
        subcarrier_count=sc.subcarriers, bandwidth_hz=sc.bandwidth_hz,
        bs_power_w=dbm_to_watts(sc.bs_power_dbm),
        controller_power_w=dbm_to_watts(sc.controller_power_dbm),
        noise_w=dbm_to_watts(sc.noise_dbm), carrier_ghz=sc.carrier_ghz,
        slot_s=sc.slot_s, frame_slots=sc.frame_slots)

    def link_cells(m):
        if sc.frequency_flat:
            return [tuple((m, s) for s in range(sc.subcarriers))]
        return [((m, s),) for s in range(sc.subcarriers)]

    def path_factor(tx, b, m):
        return db_to_linear(-path_loss(distances[(tx, (b, m))], sc.carrier_ghz))

    own_links, own_paths = [], []
    for b in range(sc.bs_count):
        links, paths = [], []
        for m in range(sc.ues_per_bs[b]):
            scale = path_factor(b, b, m)
            ls = GainLevelSet.from_exponential(scale, sc.gain_levels)
            for cells in link_cells(m):
                links.append(LinkQuant(cells=tuple(cells), levels=ls,
                                       pmf=tuple(ls.level_pmf())))
                paths.append(scale)
        own_links.append(links)
        own_paths.append(np.asarray(paths))
    states = StateSpace(g_set=sc.g_set, own_links=own_links,
                        ues_per_bs=sc.ues_per_bs, subcarriers=sc.subcarriers)

    cross_links, cross_paths = {}, {}
    for tx in range(sc.bs_count):
        for rx in range(sc.bs_count):
            if tx == rx:
                continue
            links, paths = [], []
            for m in range(sc.ues_per_bs[rx]):
                scale = path_factor(tx, rx, m)
                ls = GainLevelSet.from_exponential(scale, sc.gain_levels)
                for cells in link_cells(m):
                    links.append(LinkQuant(cells=tuple(cells), levels=ls,
                                           pmf=tuple(ls.level_pmf())))
                    paths.append(scale)
            cross_links[(tx, rx)] = links
            cross_paths[(tx, rx)] = np.asarray(paths)
    interference = InterferenceModel(cross_links, sc.ues_per_bs,
                                     sc.subcarriers, sc.bs_count)

    budget = radio.bs_budget_w
    grid = np.linspace(0.0, budget, sc.power_levels + 1)
    actions = ActionSpace(sc.ues_per_bs, sc.subcarriers,
                          [grid] * sc.bs_count, [budget] * sc.bs_count)
    game = Game(states, actions, interference, sc.frame_slots, radio.noise_w)

    means = np.array([m * 1e6 * sc.slot_s for m in sc.arrival_mbps])
    lam_max = sc.lambda_max_factor * float(means.max())
    fh_scale = db_to_linear(sc.fronthaul_snr_db) * radio.noise_w / radio.bs_power_w
    return SimEnvironment(scenario=sc, topology=topology, radio=radio, game=game,
                          arrival_means_bits=means, lambda_max_bits=lam_max,
                          fronthaul_gain_scale=fh_scale,
                          own_paths=own_paths, cross_paths=cross_paths)


@dataclass
class ChannelDraw:
    own_digits: np.ndarray          # per own link, declaration order
    own_gains: list[np.ndarray]     # [b] -> (M_b, S) level values
    cross_gains: dict               # (tx, rx) -> (M_rx, S) level values


def generate_channels(env: SimEnvironment, rng: np.random.Generator) -> ChannelDraw:
    """One slot of quantized block-fading gains for every link.

    Each quantized channel variable gets an independent unit-mean
    exponential fade scaled by its path factor, then snaps to its codebook
    level; the realized gain is the level value, so the simulated world and
    the finite game model coincide exactly.
    """
    sc = env.scenario
    states = env.game.states
    digits_all = []
    own_gains = []
    for b in range(sc.bs_count):
        links = states.own_links[b]
        raws = env.own_paths[b] * rng.exponential(size=len(links))
        gains = np.zeros((sc.ues_per_bs[b], sc.subcarriers))
        for pos, link in enumerate(links):
            idx = quantize_gain(float(raws[pos]), link.levels)
            digits_all.append(idx)
            val = link.levels.values[idx]
            for (m, s) in link.cells:
                gains[m, s] = val
        own_gains.append(gains)
    cross = {}
    for (tx, rx), links in env.game.interference.cross_links.items():
        raws = env.cross_paths[(tx, rx)] * rng.exponential(size=len(links))
        g = np.zeros((sc.ues_per_bs[rx], sc.subcarriers))
        for pos, link in enumerate(links):
            idx = quantize_gain(float(raws[pos]), link.levels)
            val = link.levels.values[idx]
            for (m, s) in link.cells:
                g[m, s] = val
        cross[(tx, rx)] = g
    return ChannelDraw(own_digits=np.asarray(digits_all, dtype=np.int64),
                       own_gains=own_gains, cross_gains=cross)


def generate_arrivals(env: SimEnvironment, rng: np.random.Generator) -> np.ndarray:
    """Per-UE Poisson arrivals in bits, clipped at the configured cap."""
    draws = rng.poisson(env.arrival_means_bits).astype(float)
    return np.minimum(draws, env.lambda_max_bits)


@dataclass
class Metrics:
    """Everything an episode records, plus the derived summaries."""

    scenario: Scenario
    rates: np.ndarray            # (slots, n_ues) per-slot spectral sum over carriers
    queues: np.ndarray           # (slots, n_ues) bits, end of slot
    powers: np.ndarray           # (slots, bs_count) transmitted watts
    arrivals: np.ndarray         # (slots, n_ues) bits
    served: np.ndarray           # (slots, n_ues) bits drained
    slack: np.ndarray            # (slots, n_ues) offered service beyond backlog
    varsigma: np.ndarray         # (frames,) quantized slots spent in the fronthaul
    available: np.ndarray        # (frames,) bool, recommendations arrived
    r_up: np.ndarray             # per-BS upload rate requirement (0 for non-SDN)
    r_fb: float
    virtual_queue_report: dict | None = None  # realization mode: |q|/T ratios

    def moving_average_sum_rate(self) -> np.ndarray:
        total = self.rates.sum(axis=1)
        return np.cumsum(total) / np.arange(1, len(total) + 1)

    def long_run_sum_rate(self, warmup: int | None = None) -> float:
        w = self.scenario.warmup_slots if warmup is None else warmup
        w = min(w, max(self.rates.shape[0] - 1, 0))
        return float(self.rates[w:].sum(axis=1).mean())

    def long_run_total_queue(self, warmup: int | None = None) -> float:
        w = self.scenario.warmup_slots if warmup is None else warmup
        w = min(w, max(self.queues.shape[0] - 1, 0))
        return float(self.queues[w:].sum(axis=1).mean())

    def long_run_ue_rates(self, warmup: int | None = None) -> np.ndarray:
        w = self.scenario.warmup_slots if warmup is None else warmup
        w = min(w, max(self.rates.shape[0] - 1, 0))
        return self.rates[w:].mean(axis=0)

    def long_run_ue_queues(self, warmup: int | None = None) -> np.ndarray:
        w = self.scenario.warmup_slots if warmup is None else warmup
        w = min(w, max(self.queues.shape[0] - 1, 0))
        return self.queues[w:].mean(axis=0)

    def conservation_error(self) -> float:
        """Largest per-UE relative defect of arrivals = served + backlog."""
        total_in = self.arrivals.sum(axis=0)
        total_out = self.served.sum(axis=0) + self.queues[-1]
        scale = np.maximum(total_in, 1.0)
        return float(np.max(np.abs(total_in - total_out) / scale))

    def mean_varsigma(self) -> float:
        return float(self.varsigma.mean())


def compute_ratios(sdn: Metrics, baseline: Metrics,
                   warmup: int | None = None) -> tuple[float, float]:
    """Throughput and backlog ratios of an SDN run over its paired baseline."""
    base_rate = baseline.long_run_sum_rate(warmup)
    base_queue = baseline.long_run_total_queue(warmup)
    if base_rate <= 0.0 or base_queue <= 0.0:
        raise ValueError("baseline averages must be positive to form ratios")
    return (sdn.long_run_sum_rate(warmup) / base_rate,
            sdn.long_run_total_queue(warmup) / base_queue)


def _fronthaul_exchange(env: SimEnvironment, frame: int, payload_up: np.ndarray,
                        payload_fb: float) -> tuple[FronthaulState, int]:
    """Draw the frame's controller-link fades and price the exchange."""
    sc = env.scenario
    rng = frame_rng(sc.seed, frame, _STREAM_FRONTHAUL)
    S, B = sc.subcarriers, sc.bs_count
    up_gains = env.fronthaul_gain_scale * rng.exponential(size=(B, S))
    fb_gains = env.fronthaul_gain_scale * rng.exponential(size=(B, S))
    p = env.radio.bs_power_w
    ups = np.empty(B)
    fbs = np.empty(B)
    for b in range(B):
        interference = p * (up_gains.sum(axis=0) - up_gains[b])
        ups[b] = upload_time(p, up_gains[b], interference, float(payload_up[b]),
                             sc.frame_slots, env.radio.noise_w)
        fbs[b] = feedback_time(fb_gains[b], B, payload_fb, sc.frame_slots,
                               env.radio.noise_w, env.radio.controller_power_w)
    varsigma, available = round_trip(ups, fbs, sc.g_set)
    vs_idx = int(np.searchsorted(np.asarray(sc.g_set), varsigma))
    state = FronthaulState(upload_slots=ups, feedback_slots=fbs,
                           round_trip_slots=varsigma, available=available,
                           g_set=sc.g_set, r_up=np.asarray(payload_up, float),
                           r_fb=payload_fb)
    return state, vs_idx


def run_episode(scenario: Scenario) -> Metrics:
    """Simulate one full episode and return its recorded metrics."""
    sc = scenario
    env = build_environment(sc)
    game = env.game
    n_ues = sc.n_ues
    B = sc.bs_count
    bits_per_unit = env.bits_per_unit

    estimators = EmpiricalEstimators(game, bits_per_unit,
                                     track_channels=sc.mode == "statistics")
    interference_est = [InterferenceEstimate() for _ in range(B)]
    queues = np.zeros(n_ues)

    stats_ctrl = realz_ctrl = None
    bootstrap = None
    if sc.mode == "statistics":
        stats_ctrl = StatisticsController(
            game, sc.frame_slots, initial_resolves=sc.stats_initial_resolves,
            resolve_period=sc.stats_resolve_period)
        payload = payload_stats(game, sc.frame_slots, sc.r_unit)
        bootstrap = bootstrap_rule(game)
    elif sc.mode == "realization":
        realz_ctrl = RealizationController(game, sc.kappa)
        payload = payload_realization(sc.frame_slots, sc.r_unit, bs_count=B)
        bootstrap = realz_ctrl.bootstrap_rule()
    else:
        payload = None

    T = sc.slots
    rates = np.zeros((T, n_ues))
    queues_log = np.zeros((T, n_ues))
    powers_log = np.zeros((T, B))
    arrivals_log = np.zeros((T, n_ues))
    served_log = np.zeros((T, n_ues))
    slack_log = np.zeros((T, n_ues))
    varsigma_log = np.zeros(sc.frames)
    available_log = np.zeros(sc.frames, dtype=bool)

    upload_buffer: list[int] = []
    vq_tracker = _VirtualQueueTracker(realz_ctrl) if realz_ctrl else None

    for frame in range(1, sc.frames + 1):
        if sc.mode == "non-sdn":
            varsigma, available, vs_idx = 0.0, False, None
        else:
            fh, vs_idx = _fronthaul_exchange(env, frame, payload.r_up,
                                             payload.r_fb)
            varsigma, available = fh.round_trip_slots, fh.available

        rules: list[MappingRule] | None = None
        rule: MappingRule | None = None
        if sc.mode == "statistics" and available:
            if estimators.frames == 0:
                rules = [bootstrap] * sc.frame_slots
            else:
                stats = EstimatedStatistics(
                    varsigma_pmf=estimators.varsigma_pmf.copy(),
                    gain_pmfs=[[p.copy() for p in pm] for pm in estimators.gain_pmfs],
                    lam_hat=estimators.lam_hat.copy())
                rng_c = frame_rng(sc.seed, frame, _STREAM_CONTROLLER)
                rules = stats_ctrl.recommendations(stats, rng_c)
        elif sc.mode == "realization" and available:
            if not upload_buffer:
                rule = bootstrap
            else:
                rule = realz_ctrl.run_frame(estimators.lam_hat.copy(), upload_buffer)

        rng_ch = frame_rng(sc.seed, frame, _STREAM_CHANNELS)
        rng_ar = frame_rng(sc.seed, frame, _STREAM_ARRIVALS)
        n_links = sum(len(l) for l in game.states.own_links)
        frame_arrivals = np.zeros((sc.frame_slots, n_ues))
        frame_digits = np.zeros((sc.frame_slots, n_links), dtype=np.int64)
        frame_states: list[int] = []
        sdn_active = sc.mode != "non-sdn" and available

        for k in range(sc.frame_slots):
            t = (frame - 1) * sc.frame_slots + k
            draw = generate_channels(env, rng_ch)
            arrivals = generate_arrivals(env, rng_ar)
            frame_arrivals[k] = arrivals
            frame_digits[k] = draw.own_digits

            state_idx = None
            if sc.mode != "non-sdn":
                # states realize even on unavailable frames (varsigma known)
                state_idx = _encode_state(game, vs_idx, draw)
                frame_states.append(state_idx)

            # decision pass: each BS schedules from its own view only
            chosen_powers = []
            conds = []
            for b in range(B):
                if sdn_active:
                    if sc.mode == "statistics":
                        a_global = rules[k].action_of(state_idx)
                    else:
                        a_global = rule.action_of(state_idx)
                    rec_powers = game.actions.actions[b][game.actions.decode[a_global][b]]
                    carriers = allocated_subcarriers(rec_powers, sc.subcarriers)
                else:
                    carriers = allocated_subcarriers(None, sc.subcarriers,
                                                     non_sdn=True)
                cond = ((vs_idx, tuple(draw.own_gains[b].ravel().tolist())),
                        carriers)
                conds.append(cond)
                q_b = np.array([queues[env.ue_index(b, m)]
                                for m in range(sc.ues_per_bs[b])])
                if len(carriers) == 0:
                    a_idx = 0
                else:
                    wf = waterfill(q_b / bits_per_unit, sc.tradeoff_v,
                                   draw.own_gains[b], interference_est[b],
                                   carriers, game.actions.budgets[b],
                                   env.radio.noise_w, cond)
                    cand = game.actions.restricted(b, carriers)
                    a_idx = project_action(wf.powers,
                                           game.actions.actions[b][cand], cand)
                chosen_powers.append(game.actions.actions[b][a_idx])

            # settlement pass: realized interference, rates, queues, estimates
            for b in range(B):
                interf = np.zeros((sc.ues_per_bs[b], sc.subcarriers))
                for tx in range(B):
                    if tx == b:
                        continue
                    interf += draw.cross_gains[(tx, b)] \
                        * chosen_powers[tx].sum(axis=0)[None, :]
                for m in range(sc.ues_per_bs[b]):
                    ue = env.ue_index(b, m)
                    r_m = 0.0
                    for s in range(sc.subcarriers):
                        r_m += dl_rate(chosen_powers[b][m, s],
                                       draw.own_gains[b][m, s],
                                       interf[m, s], varsigma, sc.frame_slots,
                                       env.radio.noise_w)
                    service = r_m * bits_per_unit
                    served = min(queues[ue], service)
                    slack_log[t, ue] = service - served
                    served_log[t, ue] = served
                    rates[t, ue] = r_m
                    queues[ue] = queue_step(queues[ue], service, arrivals[ue])
                interference_est[b].update(conds[b], interf)
                powers_log[t, b] = float(chosen_powers[b].sum())
            arrivals_log[t] = arrivals
            queues_log[t] = queues

        estimators.update_frame(
            frame_arrivals,
            frame_digits if sc.mode == "statistics" else None,
            vs_idx if sc.mode == "statistics" else None)
        if sc.mode == "realization":
            upload_buffer = frame_states
        varsigma_log[frame - 1] = varsigma
        available_log[frame - 1] = available

    vq_report = vq_tracker.report(T) if vq_tracker else None
    return Metrics(scenario=sc, rates=rates, queues=queues_log, powers=powers_log,
                   arrivals=arrivals_log, served=served_log, slack=slack_log,
                   varsigma=varsigma_log, available=available_log,
                   r_up=(payload.r_up if payload else np.zeros(B)),
                   r_fb=(payload.r_fb if payload else 0.0),
                   virtual_queue_report=vq_report)


def _cond_carriers(sc, b, powers, sdn_active):
    return allocated_subcarriers(powers, sc.subcarriers, non_sdn=not sdn_active)


def _encode_state(game: Game, vs_idx: int, draw: ChannelDraw) -> int:
    out = vs_idx
    col = 1
    radix = game.states._radix
    for d in draw.own_digits:
        out = out * radix[col] + int(d)
        col += 1
    return out


class _VirtualQueueTracker:
    """Exposes the controller's final virtual-queue magnitudes."""

    def __init__(self, ctrl: RealizationController):
        self.ctrl = ctrl

    def report(self, horizon: int) -> dict:
        q = self.ctrl.queues
        return {
            "y_max": float(max(arr.max() for arr in q.y)),
            "z": q.z.copy(),
            "d": q.d.copy(),
            "f": q.f.copy(),
            "replayed_slots": self.ctrl.count,
        }
