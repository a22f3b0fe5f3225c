"""Physical-layer and queueing primitives.

Everything here is a pure function of its inputs: indoor path loss, gain
quantization, fronthaul time costs, effective downlink spectral efficiency,
and the data-queue recursion.  Powers are in watts, distances in meters,
rates in bit/s/Hz, queue lengths in bits.  The conversion between spectral
efficiency and bits served in one slot goes through a single explicit factor
(``RadioConfig.bits_per_rate_unit``) so that no other module multiplies
bandwidths by slot lengths on its own.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "dbm_to_watts",
    "db_to_linear",
    "path_loss",
    "Topology",
    "RadioConfig",
    "GainLevelSet",
    "FronthaulState",
    "TrafficState",
    "Bounds",
    "quantize_gain",
    "upload_time",
    "feedback_time",
    "round_trip",
    "dl_rate",
    "queue_step",
]


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) * 1e-3


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def path_loss(distance_m: float, carrier_ghz: float = 2.4) -> float:
    """Indoor office path loss in dB at the given distance.

    ``30 log10(d) + 20 log10(f_GHz) + 46`` with d in meters.
    """
    if distance_m <= 0:
        raise ValueError(f"distance must be positive, got {distance_m}")
    return 30.0 * math.log10(distance_m) + 20.0 * math.log10(carrier_ghz) + 46.0


@dataclass(frozen=True)
class Topology:
    """Cell layout: which BS serves which UEs and all tx->rx distances.

    UEs are identified by (serving BS index, local UE index).  ``distances``
    maps every (tx BS, (b, m)) pair to meters; it must contain the serving
    link of every UE and the cross link from every other BS.
    """

    bs_count: int
    ues_per_bs: tuple[int, ...]
    distances: dict[tuple[int, tuple[int, int]], float]
    controller_present: bool = True

    def __post_init__(self):
        if self.bs_count < 1:
            raise ValueError("need at least one BS")
        if len(self.ues_per_bs) != self.bs_count:
            raise ValueError("ues_per_bs must have one entry per BS")
        if any(u < 1 for u in self.ues_per_bs):
            raise ValueError("every BS must serve at least one UE")
        for b in range(self.bs_count):
            for m in range(self.ues_per_bs[b]):
                for tx in range(self.bs_count):
                    d = self.distances.get((tx, (b, m)))
                    if d is None:
                        raise ValueError(f"missing distance for link {tx}->{(b, m)}")
                    if d <= 0:
                        raise ValueError(f"nonpositive distance on link {tx}->{(b, m)}")

    def ues(self):
        for b in range(self.bs_count):
            for m in range(self.ues_per_bs[b]):
                yield (b, m)


@dataclass(frozen=True)
class RadioConfig:
    """Static radio parameters shared by every module."""

    subcarrier_count: int
    bandwidth_hz: float
    bs_power_w: float          # per-subcarrier BS transmit power
    controller_power_w: float  # per-subcarrier controller transmit power
    noise_w: float
    carrier_ghz: float
    slot_s: float
    frame_slots: int           # slots per frame

    def __post_init__(self):
        if self.subcarrier_count < 1 or self.frame_slots < 1:
            raise ValueError("subcarrier_count and frame_slots must be >= 1")
        if min(self.bs_power_w, self.controller_power_w, self.noise_w) <= 0:
            raise ValueError("powers and noise variance must be positive")
        if self.bandwidth_hz <= 0 or self.slot_s <= 0:
            raise ValueError("bandwidth and slot duration must be positive")

    @property
    def bits_per_rate_unit(self) -> float:
        """Bits carried in one slot by 1 bit/s/Hz on one sub-channel."""
        return self.bandwidth_hz * self.slot_s

    @property
    def bs_budget_w(self) -> float:
        """Total per-slot power budget of one BS across sub-carriers."""
        return self.subcarrier_count * self.bs_power_w


def _truncated_exp_mean(a: float, b: float) -> float:
    # mean of Exp(1) restricted to [a, b); b may be inf
    mass = math.exp(-a) - (math.exp(-b) if math.isfinite(b) else 0.0)
    num = (1.0 + a) * math.exp(-a) - ((1.0 + b) * math.exp(-b) if math.isfinite(b) else 0.0)
    return num / mass


@dataclass(frozen=True)
class GainLevelSet:
    """Finite quantization codebook for one link's channel gain.

    ``values`` are the representative gains (linear scale, strictly
    increasing); ``thresholds`` are the cell edges, one fewer than values.
    """

    values: tuple[float, ...]
    thresholds: tuple[float, ...]

    def __post_init__(self):
        v = np.asarray(self.values)
        if len(v) == 0:
            raise ValueError("level set must be nonempty")
        if np.any(v < 0) or np.any(np.diff(v) <= 0):
            raise ValueError("levels must be nonnegative and strictly increasing")
        if len(self.thresholds) != len(self.values) - 1:
            raise ValueError("need exactly len(values)-1 thresholds")
        if np.any(np.diff(np.asarray(self.thresholds)) <= 0):
            raise ValueError("thresholds must be strictly increasing")

    @property
    def max_value(self) -> float:
        return self.values[-1]

    @classmethod
    def from_exponential(cls, scale: float, n_levels: int) -> "GainLevelSet":
        """Quantile codebook for an exponentially faded link.

        Cells are the ``n_levels`` equal-probability quantile cells of an
        Exp(1) fade; each level is the conditional mean of its cell, scaled
        by the link's deterministic path factor ``scale``.
        """
        if scale <= 0:
            raise ValueError("scale must be positive")
        if n_levels < 1:
            raise ValueError("need at least one level")
        edges = [-math.log(1.0 - k / n_levels) for k in range(1, n_levels)]
        cells = list(zip([0.0] + edges, edges + [math.inf]))
        values = tuple(scale * _truncated_exp_mean(a, b) for a, b in cells)
        thresholds = tuple(scale * e for e in edges)
        return cls(values=values, thresholds=thresholds)

    def level_pmf(self) -> np.ndarray:
        """Occupancy probabilities of the quantile cells (uniform)."""
        n = len(self.values)
        return np.full(n, 1.0 / n)


def quantize_gain(raw_gain: float, levels: GainLevelSet) -> int:
    """Index of the quantization cell containing ``raw_gain``.

    Values at a cell edge round up; anything beyond the extremes clamps.
    """
    if raw_gain < 0:
        raise ValueError("gain must be nonnegative")
    return int(np.searchsorted(np.asarray(levels.thresholds), raw_gain, side="right"))


@dataclass
class FronthaulState:
    """Per-frame fronthaul accounting: time portions and payload rates."""

    upload_slots: np.ndarray     # per BS
    feedback_slots: np.ndarray   # per BS
    round_trip_slots: float      # quantized, member of g_set
    available: bool              # False when the raw round trip overflowed g_set
    g_set: tuple[float, ...]
    r_up: np.ndarray             # per-BS required upload rate, bit/s/Hz
    r_fb: float                  # required feedback rate, bit/s/Hz


@dataclass
class TrafficState:
    """Data queues (bits) and the arrival process parameters."""

    queues: np.ndarray         # bits, per UE
    arrival_means: np.ndarray  # bits per slot, per UE
    lambda_max: float          # per-slot arrival cap, bits

    def __post_init__(self):
        if np.any(self.queues < 0):
            raise ValueError("queue lengths must be nonnegative")
        if np.any(self.arrival_means < 0) or self.lambda_max <= 0:
            raise ValueError("arrival means must be >= 0 and the cap positive")


@dataclass(frozen=True)
class Bounds:
    """Certified rate/utility ceilings used by the controllers."""

    r_max: float                 # max per-link effective rate, bit/s/Hz
    v_max: tuple[float, ...]     # per-BS pessimistic-utility ceiling
    u_max: tuple[float, ...]     # per-BS true-utility ceiling

    def __post_init__(self):
        if any(v > u + 1e-12 for v, u in zip(self.v_max, self.u_max)):
            raise ValueError("v_max must not exceed u_max")


def upload_time(
    power_w: float,
    own_gains: np.ndarray,
    interference_w: np.ndarray,
    required_rate: float,
    frame_slots: int,
    noise_w: float,
) -> float:
    """Slots a BS needs to push its payload up to the controller.

    ``own_gains`` are the BS-to-controller gains per sub-carrier and
    ``interference_w`` the aggregate received power of the other BSs'
    simultaneous uploads per sub-carrier (watts).  The BS spreads its
    budget equally, ``power_w`` on each sub-carrier.  Returns ``inf``
    when the link supports no rate at all ("fronthaul unreachable").
    """
    if required_rate < 0:
        raise ValueError("required rate must be nonnegative")
    if required_rate == 0.0:
        return 0.0
    own_gains = np.asarray(own_gains, dtype=float)
    interference_w = np.asarray(interference_w, dtype=float)
    sinr = power_w * own_gains / (noise_w + interference_w)
    spectral = float(np.sum(np.log2(1.0 + sinr)))
    if spectral <= 0.0:
        return math.inf
    return frame_slots * required_rate / spectral


def feedback_time(
    gains: np.ndarray,
    bs_count: int,
    required_rate: float,
    frame_slots: int,
    noise_w: float,
    controller_power_w: float,
) -> float:
    """Slots the controller needs to push recommendations to one BS.

    The controller splits ``subcarrier_count * controller_power_w`` evenly
    over BSs and sub-carriers, so each BS decodes its own stream against
    the other ``bs_count - 1`` streams received through the same channel.
    """
    if required_rate < 0:
        raise ValueError("required rate must be nonnegative")
    if required_rate == 0.0:
        return 0.0
    gains = np.asarray(gains, dtype=float)
    p = controller_power_w
    sinr = p * gains / (bs_count * noise_w + (bs_count - 1) * p * gains)
    spectral = float(np.sum(np.log2(1.0 + sinr)))
    if spectral <= 0.0:
        return math.inf
    return frame_slots * required_rate / spectral


def round_trip(
    upload_slots: np.ndarray,
    feedback_slots: np.ndarray,
    g_set: tuple[float, ...],
) -> tuple[float, bool]:
    """Quantized fronthaul round trip and whether it fit inside ``g_set``.

    The raw cost is the slowest upload plus the slowest feedback; it is
    ceiled to the next element of ``g_set``.  Beyond ``max(g_set)`` the
    frame is marked unavailable (recommendations never arrive) and the
    whole ``max(g_set)`` portion is still spent.
    """
    ups = np.asarray(upload_slots, dtype=float)
    fbs = np.asarray(feedback_slots, dtype=float)
    if ups.size == 0 or fbs.size == 0:
        raise ValueError("need at least one upload and one feedback time")
    g = np.asarray(g_set, dtype=float)
    raw = float(np.max(ups) + np.max(fbs))
    idx = int(np.searchsorted(g, raw, side="left"))
    if idx >= g.size:
        return float(g[-1]), False
    return float(g[idx]), True


def dl_rate(
    power_w: float,
    gain: float,
    interference_w: float,
    fronthaul_slots: float,
    frame_slots: int,
    noise_w: float,
) -> float:
    """Effective DL spectral efficiency on one (UE, sub-carrier) link.

    The log term is scaled by the slot fraction left over after the
    frame's fronthaul exchange.
    """
    if power_w < 0 or interference_w < 0:
        raise ValueError("power and interference must be nonnegative")
    if not 0 <= fronthaul_slots <= frame_slots:
        raise ValueError("fronthaul time must lie within the frame")
    frac = (frame_slots - fronthaul_slots) / frame_slots
    return frac * math.log2(1.0 + power_w * gain / (noise_w + interference_w))


def queue_step(queue: float, service: float, arrival: float) -> float:
    """One slot of the data-queue recursion (all in bits)."""
    if queue < 0 or service < 0 or arrival < 0:
        raise ValueError("queue, service and arrival must be nonnegative")
    return max(queue - service, 0.0) + arrival
