"""Figure analogues of the reference result set, rendered from CSV logs.

Inputs are the simulator's per-slot and summary CSVs (schemas
``sdran-perslot-v1`` and ``sdran-summary-v1``).  Every figure is a pure
read-then-render function: inputs are never modified, styling is pinned,
and the written image is byte-identical across reruns of the same inputs.

fig3   moving-average network sum rate vs slot, per mode
fig4   per-UE long-run rate vs the tradeoff weight V
fig5   per-UE long-run queue vs V
fig6   per-BS long-run rate vs V, per mode
fig7   per-BS long-run queue vs V, per mode
fig8   long-run sum rate vs total queue, parameterized by V, per mode
fig9   long-run sum rate and total queue vs fronthaul SNR, per mode
fig10  throughput and queue ratios vs fronthaul SNR, per BS density
"""

from __future__ import annotations

import glob as globlib
from dataclasses import dataclass

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

__all__ = ["FigureSpec", "SchemaError", "render", "FIGURES"]

PERSLOT_SCHEMA = "sdran-perslot-v1"
SUMMARY_SCHEMA = "sdran-summary-v1"

_STYLE = {
    "figure.figsize": (7.0, 4.5),
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.6,
    "font.size": 10,
}
_MODE_STYLE = {
    "non-sdn": dict(color="#777777", linestyle="--", marker="s"),
    "statistics": dict(color="#1f77b4", linestyle="-", marker="o"),
    "realization": dict(color="#d62728", linestyle="-", marker="^"),
}


class SchemaError(ValueError):
    """An input file does not carry the columns a figure needs."""


@dataclass(frozen=True)
class FigureSpec:
    figure: str          # one of FIGURES
    inputs: str          # glob over CSV files
    output: str          # image path

    def __post_init__(self):
        if self.figure not in FIGURES:
            raise ValueError(f"unknown figure {self.figure!r}; "
                             f"choose from {sorted(FIGURES)}")


def _read_csv(path: str) -> pd.DataFrame:
    df = pd.read_csv(path, comment="#")
    df["__path"] = path
    return df


def _load(spec: FigureSpec, kind: str, columns: list[str]) -> pd.DataFrame:
    paths = sorted(globlib.glob(spec.inputs))
    if kind == "summary":
        paths = [p for p in paths if p.endswith(".summary.csv")]
    else:
        paths = [p for p in paths if not p.endswith(".summary.csv")]
    if not paths:
        raise SchemaError(f"no {kind} CSV matches {spec.inputs!r}")
    frames = []
    for p in paths:
        df = _read_csv(p)
        for col in columns:
            if col not in df.columns:
                raise SchemaError(f"{p}: missing required column {col!r}")
        frames.append(df)
    return pd.concat(frames, ignore_index=True)


def _save(fig, spec: FigureSpec) -> None:
    fig.savefig(spec.output, format="png", metadata={"Software": "ranplot"})
    plt.close(fig)


def _mode_of(path: str) -> str:
    name = path.replace("\\", "/").rsplit("/", 1)[-1]
    return name.split("_", 1)[0]


def _fig3(spec: FigureSpec):
    df = _load(spec, "perslot", ["slot"])
    rate_cols = [c for c in df.columns if c.startswith("rate_")]
    if not rate_cols:
        raise SchemaError("per-slot inputs carry no rate_* columns")
    df["mode"] = df["__path"].map(_mode_of)
    df["sum_rate"] = df[rate_cols].sum(axis=1)
    fig, ax = plt.subplots()
    for mode in sorted(df["mode"].unique()):
        sub = df[df["mode"] == mode]
        per_slot = sub.groupby("slot")["sum_rate"].mean().sort_index()
        moving = per_slot.cumsum() / np.arange(1, len(per_slot) + 1)
        ax.plot(per_slot.index, moving.values,
                label=mode, **_MODE_STYLE.get(mode, {}), markevery=max(len(moving) // 12, 1))
    ax.set_xlabel("slot")
    ax.set_ylabel("moving-average network sum rate (bit/s/Hz)")
    ax.legend()
    return fig


def _sweep_frame(spec: FigureSpec, cols: list[str]) -> pd.DataFrame:
    df = _load(spec, "summary", ["mode", "axis", "value", "seed"] + cols)
    df["value"] = df["value"].astype(float)
    return df


def _fig_per_ue(spec: FigureSpec, prefix: str, ylabel: str):
    df = _sweep_frame(spec, [])
    ue_cols = [c for c in df.columns if c.startswith(prefix)]
    if not ue_cols:
        raise SchemaError(f"summary inputs carry no {prefix}* columns")
    df = df[df["axis"] == "V"]
    if df.empty:
        raise SchemaError("figure needs summaries from a V sweep")
    fig, ax = plt.subplots()
    grouped = df.groupby("value")[ue_cols].mean().sort_index()
    for col in ue_cols:
        ax.plot(grouped.index, grouped[col].values, marker="o",
                label=col.replace(prefix, "UE "))
    ax.set_xscale("symlog", linthresh=1.0)
    ax.set_xlabel("tradeoff weight V")
    ax.set_ylabel(ylabel)
    ax.legend()
    return fig


def _fig4(spec):
    return _fig_per_ue(spec, "rate_ue", "long-run UE rate (bit/s/Hz)")


def _fig5(spec):
    return _fig_per_ue(spec, "queue_ue", "long-run UE queue (bits)")


def _fig_per_bs(spec: FigureSpec, prefix: str, ylabel: str):
    df = _sweep_frame(spec, [])
    bs_cols = [c for c in df.columns if c.startswith(prefix)]
    if not bs_cols:
        raise SchemaError(f"summary inputs carry no {prefix}* columns")
    df = df[df["axis"] == "V"]
    if df.empty:
        raise SchemaError("figure needs summaries from a V sweep")
    fig, ax = plt.subplots()
    for mode in sorted(df["mode"].unique()):
        sub = df[df["mode"] == mode].groupby("value")[bs_cols].mean().sort_index()
        for col in bs_cols:
            style = dict(_MODE_STYLE.get(mode, {}))
            style["linestyle"] = "-" if col.endswith("0") else ":"
            ax.plot(sub.index, sub[col].values,
                    label=f"{mode} {col.replace(prefix, 'BS ')}", **style)
    ax.set_xscale("symlog", linthresh=1.0)
    ax.set_xlabel("tradeoff weight V")
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=8)
    return fig


def _fig6(spec):
    return _fig_per_bs(spec, "rate_bs", "long-run BS rate (bit/s/Hz)")


def _fig7(spec):
    return _fig_per_bs(spec, "queue_bs", "long-run BS queue (bits)")


def _fig8(spec: FigureSpec):
    df = _sweep_frame(spec, ["sum_rate", "total_queue_bits"])
    df = df[df["axis"] == "V"]
    if df.empty:
        raise SchemaError("figure needs summaries from a V sweep")
    fig, ax = plt.subplots()
    for mode in sorted(df["mode"].unique()):
        sub = df[df["mode"] == mode].groupby("value")[
            ["sum_rate", "total_queue_bits"]].mean().sort_index()
        ax.plot(sub["total_queue_bits"].values, sub["sum_rate"].values,
                label=mode, **_MODE_STYLE.get(mode, {}))
        for v, row in sub.iterrows():
            ax.annotate(f"V={v:g}", (row["total_queue_bits"], row["sum_rate"]),
                        fontsize=7, textcoords="offset points", xytext=(4, 4))
    ax.set_xscale("log")
    ax.set_xlabel("long-run total queue (bits)")
    ax.set_ylabel("long-run network sum rate (bit/s/Hz)")
    ax.legend()
    return fig


def _fig9(spec: FigureSpec):
    df = _sweep_frame(spec, ["sum_rate", "total_queue_bits"])
    df = df[df["axis"] == "snr"]
    if df.empty:
        raise SchemaError("figure needs summaries from an snr sweep")
    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(7.0, 6.5))
    for mode in sorted(df["mode"].unique()):
        sub = df[df["mode"] == mode].groupby("value")[
            ["sum_rate", "total_queue_bits"]].mean().sort_index()
        ax1.plot(sub.index, sub["sum_rate"].values, label=mode,
                 **_MODE_STYLE.get(mode, {}))
        ax2.plot(sub.index, sub["total_queue_bits"].values, label=mode,
                 **_MODE_STYLE.get(mode, {}))
    ax1.set_ylabel("sum rate (bit/s/Hz)")
    ax2.set_ylabel("total queue (bits)")
    ax2.set_yscale("log")
    ax2.set_xlabel("fronthaul SNR (dB)")
    ax1.legend()
    return fig


def _fig10(spec: FigureSpec):
    df = _sweep_frame(spec, ["eta_rate", "eta_queue", "frames"])
    df = df[(df["axis"] == "snr") & (df["mode"] != "non-sdn")]
    if df.empty:
        raise SchemaError("figure needs SDN summaries from an snr sweep")
    # density identified by the UE column count of each file
    def density(path):
        cols = [c for c in _read_csv(path).columns if c.startswith("rate_bs")]
        return len(cols)
    df["bs_count"] = df["__path"].map(density)
    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(7.0, 6.5))
    for (mode, dens) in sorted({(m, d) for m, d in
                                zip(df["mode"], df["bs_count"])}):
        sub = df[(df["mode"] == mode) & (df["bs_count"] == dens)]
        grouped = sub.groupby("value")[["eta_rate", "eta_queue"]].mean().sort_index()
        label = f"{mode}, {dens} BSs"
        style = dict(_MODE_STYLE.get(mode, {}))
        style["linestyle"] = "-" if dens <= 2 else ":"
        ax1.plot(grouped.index, grouped["eta_rate"].values, label=label, **style)
        ax2.plot(grouped.index, grouped["eta_queue"].values, label=label, **style)
    ax1.axhline(1.0, color="k", linewidth=0.8, alpha=0.5)
    ax2.axhline(1.0, color="k", linewidth=0.8, alpha=0.5)
    ax1.set_ylabel("throughput ratio vs non-SDN")
    ax2.set_ylabel("queue ratio vs non-SDN")
    ax2.set_xlabel("fronthaul SNR (dB)")
    ax1.legend(fontsize=8)
    return fig


FIGURES = {
    "fig3": _fig3,
    "fig4": _fig4,
    "fig5": _fig5,
    "fig6": _fig6,
    "fig7": _fig7,
    "fig8": _fig8,
    "fig9": _fig9,
    "fig10": _fig10,
}


def render(spec: FigureSpec) -> str:
    """Render one figure to its output path and return the path.

    Raises :class:`SchemaError` before writing anything when the inputs are
    missing or lack a required column.
    """
    with matplotlib.rc_context(_STYLE):
        fig = FIGURES[spec.figure](spec)
        _save(fig, spec)
    return spec.output
