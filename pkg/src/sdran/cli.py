"""Experiment orchestration and the command-line interface.

Configurations are plain ``key = value`` text (one pair per line, ``#``
comments).  A plan expands into episodes over an optional sweep axis and a
seed list; each episode writes one per-slot CSV and one summary CSV with
fixed, versioned schemas.  SDN episodes also run their seed-matched non-SDN
twin internally so the summary can carry the throughput/backlog ratios.

Subcommands: ``run`` (no sweep axis), ``sweep`` (one axis), ``audit``
(solve the statistics program at the exact model statistics and print the
equilibrium audit).
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from dataclasses import dataclass, replace
from multiprocessing import Pool

import numpy as np

from .controller_stats import EstimatedStatistics, build_program, solve_stats_allocation
from .game import check_epsilon_cce, epsilon_gap
from .sim import MODES, Metrics, Scenario, build_environment, compute_ratios, run_episode

__all__ = ["ExperimentPlan", "parse_config", "run_plan", "main"]

PERSLOT_SCHEMA = "sdran-perslot-v1"
SUMMARY_SCHEMA = "sdran-summary-v1"

SWEEP_AXES = ("V", "snr", "bs")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentPlan:
    base: Scenario
    axis: str | None           # None | "V" | "snr" | "bs"
    values: tuple[float, ...]  # sweep values (empty when axis is None)
    seeds: tuple[int, ...]
    out_dir: str
    workers: int = 0           # 0: pick from the CPU count

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if self.axis is not None:
            if self.axis not in SWEEP_AXES:
                raise ConfigError(f"unknown sweep axis {self.axis!r}")
            if not self.values:
                raise ConfigError("sweep axis without values")
            if self.axis == "bs" and any(v != int(v) or v < 1 for v in self.values):
                raise ConfigError("bs sweep values must be positive integers")

    def points(self):
        if self.axis is None:
            return [("base", "default")]
        return [(self.axis, v) for v in self.values]

    def scenario_at(self, axis: str, value, seed: int) -> Scenario:
        sc = replace(self.base, seed=int(seed))
        if axis == "base":
            return sc
        if axis == "V":
            return replace(sc, tradeoff_v=float(value))
        if axis == "snr":
            return replace(sc, fronthaul_snr_db=float(value))
        if axis == "bs":
            n = int(value)
            ues = tuple([2] * n)
            return replace(sc, bs_count=n, ues_per_bs=ues,
                           arrival_mbps=tuple([7.0] * (2 * n)),
                           ue_distances=None)
        raise ConfigError(f"unknown axis {axis!r}")


_BOOL = {"true": True, "false": False, "1": True, "0": False,
         "yes": True, "no": False}


def _parse_scalar(key, text, line_no, cast):
    try:
        return cast(text)
    except ValueError:
        raise ConfigError(f"line {line_no}: bad value for {key}: {text!r}")


def _parse_tuple(key, text, line_no, cast):
    try:
        return tuple(cast(p.strip()) for p in text.split(",") if p.strip())
    except ValueError:
        raise ConfigError(f"line {line_no}: bad list for {key}: {text!r}")


def parse_config(text: str) -> ExperimentPlan:
    """Parse and validate a key=value experiment description.

    Unknown keys, type mismatches, and invariant violations raise
    :class:`ConfigError` with the offending line number.  Unspecified keys
    fall back to the default indoor two-cell scenario.
    """
    fields: dict = {}
    axis = None
    values: tuple[float, ...] = ()
    seeds: tuple[int, ...] = (1,)
    out_dir = "out"
    workers = 0
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected key = value, got {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        if key == "mode":
            if val not in MODES:
                raise ConfigError(f"line {line_no}: mode must be one of {MODES}")
            fields["mode"] = val
        elif key == "frames":
            fields["frames"] = _parse_scalar(key, val, line_no, int)
        elif key == "seed":
            seeds = (_parse_scalar(key, val, line_no, int),)
        elif key == "seeds":
            seeds = _parse_tuple(key, val, line_no, int)
        elif key == "V":
            fields["tradeoff_v"] = _parse_scalar(key, val, line_no, float)
        elif key == "kappa":
            fields["kappa"] = _parse_scalar(key, val, line_no, float)
        elif key == "snr_db":
            fields["fronthaul_snr_db"] = _parse_scalar(key, val, line_no, float)
        elif key == "bs_count":
            fields["bs_count"] = _parse_scalar(key, val, line_no, int)
        elif key == "ues_per_bs":
            fields["ues_per_bs"] = _parse_tuple(key, val, line_no, int)
        elif key == "arrival_mbps":
            fields["arrival_mbps"] = _parse_tuple(key, val, line_no, float)
        elif key == "subcarriers":
            fields["subcarriers"] = _parse_scalar(key, val, line_no, int)
        elif key == "T0":
            fields["frame_slots"] = _parse_scalar(key, val, line_no, int)
        elif key == "g_set":
            fields["g_set"] = _parse_tuple(key, val, line_no, float)
        elif key == "noise_dbm":
            fields["noise_dbm"] = _parse_scalar(key, val, line_no, float)
        elif key == "bs_power_dbm":
            fields["bs_power_dbm"] = _parse_scalar(key, val, line_no, float)
        elif key == "controller_power_dbm":
            fields["controller_power_dbm"] = _parse_scalar(key, val, line_no, float)
        elif key == "carrier_ghz":
            fields["carrier_ghz"] = _parse_scalar(key, val, line_no, float)
        elif key == "bandwidth_hz":
            fields["bandwidth_hz"] = _parse_scalar(key, val, line_no, float)
        elif key == "slot_s":
            fields["slot_s"] = _parse_scalar(key, val, line_no, float)
        elif key == "gain_levels":
            fields["gain_levels"] = _parse_scalar(key, val, line_no, int)
        elif key == "power_levels":
            fields["power_levels"] = _parse_scalar(key, val, line_no, int)
        elif key == "frequency_flat":
            if val.lower() not in _BOOL:
                raise ConfigError(f"line {line_no}: frequency_flat must be boolean")
            fields["frequency_flat"] = _BOOL[val.lower()]
        elif key == "lambda_max_factor":
            fields["lambda_max_factor"] = _parse_scalar(key, val, line_no, float)
        elif key == "warmup_slots":
            fields["warmup_slots"] = _parse_scalar(key, val, line_no, int)
        elif key == "stats_initial_resolves":
            fields["stats_initial_resolves"] = _parse_scalar(key, val, line_no, int)
        elif key == "stats_resolve_period":
            fields["stats_resolve_period"] = _parse_scalar(key, val, line_no, int)
        elif key == "out_dir":
            out_dir = val
        elif key == "workers":
            workers = _parse_scalar(key, val, line_no, int)
        elif key == "sweep":
            parts = val.split(None, 1)
            if len(parts) != 2:
                raise ConfigError(f"line {line_no}: sweep needs an axis and values")
            axis = parts[0]
            if axis not in SWEEP_AXES:
                raise ConfigError(f"line {line_no}: sweep axis must be one of {SWEEP_AXES}")
            values = _parse_tuple("sweep", parts[1], line_no, float)
        else:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")

    if "bs_count" in fields and "ues_per_bs" not in fields:
        fields["ues_per_bs"] = tuple([2] * fields["bs_count"])
    if "ues_per_bs" in fields and "arrival_mbps" not in fields:
        fields["arrival_mbps"] = tuple([7.0] * sum(fields["ues_per_bs"]))
    try:
        base = Scenario(**fields)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario: {exc}") from exc
    return ExperimentPlan(base=base, axis=axis, values=values, seeds=seeds,
                          out_dir=out_dir, workers=workers)


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _file_stem(mode: str, axis: str, value, seed: int) -> str:
    if isinstance(value, float) and value == int(value):
        value = int(value)
    return f"{mode}_{axis}={value}_seed={seed}"


def write_perslot_csv(path: str, metrics: Metrics) -> None:
    sc = metrics.scenario
    ue_labels = [f"b{b}u{m}" for b in range(sc.bs_count)
                 for m in range(sc.ues_per_bs[b])]
    header = (["slot", "frame", "varsigma", "available"]
              + [f"rate_{u}" for u in ue_labels]
              + [f"queue_{u}" for u in ue_labels]
              + [f"power_b{b}" for b in range(sc.bs_count)])
    with open(path, "w", newline="") as fh:
        fh.write(f"# {PERSLOT_SCHEMA}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(metrics.rates.shape[0]):
            frame = t // sc.frame_slots
            row = [t + 1, frame + 1,
                   _fmt(metrics.varsigma[frame]), _fmt(metrics.available[frame])]
            row += [_fmt(x) for x in metrics.rates[t]]
            row += [_fmt(x) for x in metrics.queues[t]]
            row += [_fmt(x) for x in metrics.powers[t]]
            writer.writerow(row)


def write_summary_csv(path: str, metrics: Metrics, axis: str, value, seed: int,
                      ratios: tuple[float, float] | None) -> None:
    sc = metrics.scenario
    ue_rates = metrics.long_run_ue_rates()
    ue_queues = metrics.long_run_ue_queues()
    bs_rates, bs_queues = [], []
    col = 0
    for b in range(sc.bs_count):
        n = sc.ues_per_bs[b]
        bs_rates.append(ue_rates[col:col + n].sum())
        bs_queues.append(ue_queues[col:col + n].sum())
        col += n
    header = (["mode", "axis", "value", "seed", "frames", "slots", "warmup_slots",
               "sum_rate", "total_queue_bits", "mean_varsigma",
               "unavailable_frames", "r_up_max", "r_fb",
               "eta_rate", "eta_queue", "conservation_error",
               "vq_y_max", "vq_z_max", "vq_d_max", "vq_f_max"]
              + [f"rate_bs{b}" for b in range(sc.bs_count)]
              + [f"queue_bs{b}_bits" for b in range(sc.bs_count)]
              + [f"rate_ue{i}" for i in range(sc.n_ues)]
              + [f"queue_ue{i}_bits" for i in range(sc.n_ues)])
    unavailable = int(np.sum(~metrics.available)) if sc.mode != "non-sdn" else 0
    row = [sc.mode, axis, _fmt(value) if not isinstance(value, str) else value,
           seed, sc.frames, sc.slots, sc.warmup_slots,
           _fmt(metrics.long_run_sum_rate()),
           _fmt(metrics.long_run_total_queue()),
           _fmt(metrics.mean_varsigma()), unavailable,
           _fmt(float(np.max(metrics.r_up)) if metrics.r_up.size else 0.0),
           _fmt(metrics.r_fb),
           _fmt(ratios[0]) if ratios else "",
           _fmt(ratios[1]) if ratios else "",
           _fmt(metrics.conservation_error())]
    vq = metrics.virtual_queue_report
    if vq is not None:
        row += [_fmt(vq["y_max"]), _fmt(float(np.max(np.abs(vq["z"])))),
                _fmt(float(np.max(np.abs(vq["d"])))),
                _fmt(float(np.max(np.abs(vq["f"]))))]
    else:
        row += ["", "", "", ""]
    row += [_fmt(x) for x in bs_rates]
    row += [_fmt(x) for x in bs_queues]
    row += [_fmt(x) for x in ue_rates]
    row += [_fmt(x) for x in ue_queues]
    with open(path, "w", newline="") as fh:
        fh.write(f"# {SUMMARY_SCHEMA}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerow(row)


def _run_point(task) -> tuple[str, str]:
    axis, value, seed, plan = task
    scenario = plan.scenario_at(axis, value, seed)
    metrics = run_episode(scenario)
    ratios = None
    if scenario.mode != "non-sdn":
        baseline = run_episode(replace(scenario, mode="non-sdn"))
        ratios = compute_ratios(metrics, baseline)
    elif scenario.mode == "non-sdn":
        ratios = (1.0, 1.0)
    stem = _file_stem(scenario.mode, axis, value, seed)
    slot_path = os.path.join(plan.out_dir, f"{stem}.csv")
    summary_path = os.path.join(plan.out_dir, f"{stem}.summary.csv")
    write_perslot_csv(slot_path, metrics)
    write_summary_csv(summary_path, metrics, axis, value, seed, ratios)
    return slot_path, summary_path


def run_plan(plan: ExperimentPlan) -> list[str]:
    """Execute every (sweep point, seed) episode and write its CSV pair."""
    os.makedirs(plan.out_dir, exist_ok=True)
    tasks = [(axis, value, seed, plan)
             for (axis, value) in plan.points() for seed in plan.seeds]
    workers = plan.workers or min(len(tasks), os.cpu_count() or 1)
    written: list[str] = []
    if workers <= 1 or len(tasks) == 1:
        for task in tasks:
            written.extend(_run_point(task))
    else:
        with Pool(processes=workers, initializer=_limit_blas_threads) as pool:
            for pair in pool.imap(_run_point, tasks):
                written.extend(pair)
    return written


def _limit_blas_threads():
    os.environ.setdefault("OMP_NUM_THREADS", "1")
    os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")


def run_audit(plan: ExperimentPlan, out=None) -> bool:
    """Solve the statistics program at exact model statistics and audit it."""
    out = out if out is not None else sys.stdout
    scenario = replace(plan.base, mode="statistics", seed=plan.seeds[0])
    env = build_environment(scenario)
    game = env.game
    g = len(game.states.g_set)
    lam = env.arrival_means_bits / env.bits_per_unit
    lam_bs = np.array([
        lam[sum(scenario.ues_per_bs[:b]):sum(scenario.ues_per_bs[:b + 1])].sum()
        for b in range(scenario.bs_count)])
    stats = EstimatedStatistics(
        varsigma_pmf=np.full(g, 1.0 / g),
        gain_pmfs=[[np.asarray(l.pmf, float) for l in links]
                   for links in game.states.own_links],
        lam_hat=lam_bs)
    prog = build_program(stats, game)
    strategy, thetas, rep = solve_stats_allocation(prog, tol=1e-8)
    vt, ut = game.v_table(), game.u_table()
    res_v = check_epsilon_cce(game, strategy, 1e-6, vt, prog.state_pmf)
    gap = epsilon_gap(game, strategy, prog.state_pmf)
    res_u = check_epsilon_cce(game, strategy, gap + 1e-6, ut, prog.state_pmf)
    print(f"solver: {rep.status}, {rep.iterations} iterations, "
          f"residual {rep.kkt_residual:.2e}", file=out)
    print(f"equilibrium audit (pessimistic utility, eps=1e-6): "
          f"{'PASS' if res_v.passed else 'FAIL'} "
          f"(worst violation {res_v.worst_violation:.3e})", file=out)
    print(f"certified pessimistic-to-true gap: {gap:.6e}", file=out)
    print(f"equilibrium audit (true utility, eps=gap+1e-6): "
          f"{'PASS' if res_u.passed else 'FAIL'} "
          f"(worst violation {res_u.worst_violation:.3e})", file=out)
    return res_v.passed and res_u.passed


def _load_plan(args) -> ExperimentPlan:
    with open(args.config) as fh:
        plan = parse_config(fh.read())
    if args.seed is not None:
        plan = replace(plan, seeds=(args.seed,))
    if args.out_dir is not None:
        plan = replace(plan, out_dir=args.out_dir)
    if args.mode is not None:
        plan = replace(plan, base=replace(plan.base, mode=args.mode))
    if args.workers is not None:
        plan = replace(plan, workers=args.workers)
    return plan


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="sdran",
        description="Fronthaul-aware SDN RAN simulator and controllers")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("run", "run the plan (no sweep axis)"),
                            ("sweep", "run the plan over its sweep axis"),
                            ("audit", "equilibrium audit of the statistics controller")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="path to a key=value configuration file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out-dir", default=None)
        p.add_argument("--mode", choices=MODES, default=None)
        p.add_argument("--workers", type=int, default=None)
    args = parser.parse_args(argv)
    try:
        plan = _load_plan(args)
        if args.command == "run":
            if plan.axis is not None:
                raise ConfigError("config has a sweep axis; use the sweep command")
            run_plan(plan)
        elif args.command == "sweep":
            if plan.axis is None:
                raise ConfigError("sweep command needs a sweep axis in the config")
            run_plan(plan)
        else:
            ok = run_audit(plan)
            return 0 if ok else 1
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
