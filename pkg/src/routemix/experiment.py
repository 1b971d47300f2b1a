"""Experiment campaigns: the routing-mix sweep and the calibration grid.

The sweep routes the same demand with an increasing share of
navigation-provider vehicles (i = 0..10 tenths, several repetitions each),
simulates every mix, and records total CO2, its Gini index, the fitted
heavy-tail exponent, travel times, and teleports. The calibration campaign
searches (fleet size, perturbation strength, extra-vehicle config) for the
cell whose simulated travel-time distribution best matches an observed
sample (ascending JS divergence, ties by |mean difference| then teleports).

Every cell derives its own seed from the master seed, so campaigns are
reproducible end to end and cells can run in any order; rows are flushed to
CSV as they complete, so a crash loses at most one cell.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .analysis import (
    FitError,
    fit_truncated_powerlaw,
    gini,
    positive_values,
    smallest_positive,
    travel_time_comparison,
)
from .demand import ODMatrix, TileGrid, sample_demand
from .emissions import EmissionCoefficients, aggregate, default_coefficients, total_emissions
from .network import RoadNetwork
from .routing import FastestPathProvider, NavigationProvider, route_demand
from .seeding import derive_rng, stable_u64
from .sim import (
    ExtraVehiclesConfig,
    SimConfig,
    assign_departures,
    build_extra_traffic,
    simulate,
)

log = logging.getLogger(__name__)

SWEEP_COLUMNS = [
    "provider", "i", "rep", "seed", "total_co2_mg", "gini", "alpha", "lambda",
    "mean_travel_time_s", "teleports",
]

CALIBRATION_COLUMNS = ["n", "w", "extra", "js", "abs_dtt_s", "teleports", "failed"]


@dataclass(frozen=True)
class SweepConfig:
    n: int
    provider_name: str = "fastest"
    w: float = 5.0
    i_values: tuple[int, ...] = tuple(range(11))
    repetitions: int = 10
    master_seed: int = 0
    horizon: float = 3600.0
    extra: str = "none"
    fix_demand: bool = False
    fix_departures: bool = False
    fit_tail: bool = True
    sim: SimConfig = field(default_factory=SimConfig)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("fleet size must be >= 1")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not self.i_values:
            raise ValueError("at least one mix value required")
        bad = [i for i in self.i_values if not 0 <= i <= 10]
        if bad:
            raise ValueError(f"mix values must be in 0..10, got {bad}")
        if self.w < 1:
            raise ValueError("perturbation strength w must be >= 1")


@dataclass
class SweepResult:
    config: SweepConfig
    rows: list[dict] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


@dataclass(frozen=True)
class CalibrationGrid:
    n_values: tuple[int, ...] = (5000, 10000, 15000, 20000)
    w_values: tuple[float, ...] = (1.0, 2.5, 5.0, 10.0, 15.0, 25.0)
    extra_configs: tuple[str, ...] = ("none", "15_start", "15_start+45_end")
    runs_per_cell: int = 5

    def __post_init__(self):
        if not (self.n_values and self.w_values and self.extra_configs):
            raise ValueError("calibration grid must be nonempty")
        if self.runs_per_cell < 1:
            raise ValueError("runs_per_cell must be >= 1")
        for spec in self.extra_configs:
            ExtraVehiclesConfig.parse(spec)

    def cells(self) -> list[tuple[int, float, str]]:
        return [
            (n, w, c)
            for n in self.n_values
            for w in self.w_values
            for c in self.extra_configs
        ]


class _RowWriter:
    """Append-only CSV writer, flushing after every row."""

    def __init__(self, path: str | None, columns: list[str]):
        self.columns = columns
        self._fh = None
        if path:
            new = not (os.path.exists(path) and os.path.getsize(path) > 0)
            self._fh = open(path, "a", newline="", encoding="utf-8")
            self._writer = csv.writer(self._fh)
            if new:
                self._writer.writerow(columns)
                self._fh.flush()

    def write(self, row: dict) -> None:
        if self._fh is None:
            return
        self._writer.writerow([row.get(c, "") for c in self.columns])
        self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()


def write_manifest(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, default=str)
        fh.write("\n")


def _run_cell(
    cfg: SweepConfig,
    net: RoadNetwork,
    od: ODMatrix,
    grid: TileGrid,
    provider: NavigationProvider,
    coef: EmissionCoefficients,
    i: int,
    rep: int,
) -> dict:
    master = cfg.master_seed
    demand_seed = (master, "demand") if cfg.fix_demand else (master, "demand", rep)
    demand = sample_demand(od, net, grid, cfg.n, derive_rng(*demand_seed))
    routed = route_demand(net, demand, i, provider, cfg.w,
                          seed=stable_u64(master, "routing", i, rep))
    dep_seed = (master, "departures") if cfg.fix_departures else (master, "departures", i, rep)
    sched = assign_departures(routed, cfg.horizon, derive_rng(*dep_seed))
    extra_cfg = ExtraVehiclesConfig.parse(cfg.extra)
    extra = build_extra_traffic(net, grid, cfg.n, extra_cfg, cfg.w, max(sched.values()),
                                seed=stable_u64(master, "extra", i, rep))
    cell_seed = stable_u64(master, "sim", i, rep)
    sim_cfg = replace(cfg.sim, horizon=cfg.horizon)
    traj, stats = simulate(net, routed, sched, sim_cfg, extra=extra, seed=cell_seed)
    weighted = aggregate(traj, coef, net)

    masses = positive_values(weighted.masses())
    alpha = lam = math.nan
    g = math.nan
    if len(masses) > 0:
        g = gini(masses)
        if cfg.fit_tail:
            try:
                fit = fit_truncated_powerlaw(masses, smallest_positive(masses))
                alpha, lam = fit.params["alpha"], fit.params["lambda"]
            except FitError as exc:
                log.warning("tail fit skipped for i=%d rep=%d: %s", i, rep, exc)
    return {
        "provider": cfg.provider_name,
        "i": i,
        "rep": rep,
        "seed": cell_seed,
        "total_co2_mg": total_emissions(weighted),
        "gini": g,
        "alpha": alpha,
        "lambda": lam,
        "mean_travel_time_s": stats.mean_travel_time,
        "teleports": stats.teleports,
    }


def run_sweep(
    cfg: SweepConfig,
    net: RoadNetwork,
    od: ODMatrix,
    grid: TileGrid,
    provider: NavigationProvider | None = None,
    coef: EmissionCoefficients | None = None,
    csv_path: str | None = None,
    manifest_path: str | None = None,
) -> SweepResult:
    """Run every (mix, repetition) cell of the sweep."""
    provider = provider or FastestPathProvider()
    coef = coef or default_coefficients()
    result = SweepResult(cfg)
    writer = _RowWriter(csv_path, SWEEP_COLUMNS)
    if manifest_path:
        write_manifest(manifest_path, {
            "campaign": "sweep",
            "config": dataclasses.asdict(cfg),
            "coefficients": coef.label,
            "provider": provider.name,
        })
    try:
        for i in cfg.i_values:
            for rep in range(cfg.repetitions):
                try:
                    row = _run_cell(cfg, net, od, grid, provider, coef, i, rep)
                except Exception as exc:  # cell isolation: record and move on
                    log.error("sweep cell i=%d rep=%d failed: %s", i, rep, exc)
                    result.failures.append({"i": i, "rep": rep, "error": str(exc)})
                    continue
                result.rows.append(row)
                writer.write(row)
    finally:
        writer.close()
    return result


def run_w_sweep(
    cfg: SweepConfig,
    net: RoadNetwork,
    od: ODMatrix,
    grid: TileGrid,
    w_values: Sequence[float],
    provider: NavigationProvider | None = None,
    coef: EmissionCoefficients | None = None,
) -> dict[float, SweepResult]:
    """Repeat the whole sweep for each perturbation strength."""
    return {
        float(w): run_sweep(replace(cfg, w=float(w)), net, od, grid, provider, coef)
        for w in w_values
    }


def summarize(result: SweepResult) -> list[dict]:
    """Per-mix mean and standard deviation of the sweep metrics."""
    out = []
    metrics = ("total_co2_mg", "gini", "alpha", "mean_travel_time_s", "teleports")
    for i in result.config.i_values:
        rows = [r for r in result.rows if r["i"] == i]
        if not rows:
            continue
        entry: dict = {"i": i, "reps": len(rows)}
        for m in metrics:
            vals = np.array([r[m] for r in rows], dtype=float)
            entry[f"{m}_mean"] = float(np.nanmean(vals)) if not np.isnan(vals).all() else math.nan
            entry[f"{m}_std"] = float(np.nanstd(vals)) if not np.isnan(vals).all() else math.nan
        out.append(entry)
    return out


def save_summary_csv(summary: list[dict], path: str) -> None:
    if not summary:
        raise ValueError("empty summary")
    columns = list(summary[0].keys())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in summary:
            w.writerow([row[c] for c in columns])


def run_calibration(
    grid_cfg: CalibrationGrid,
    net: RoadNetwork,
    od: ODMatrix,
    tile_grid: TileGrid,
    real_times: Sequence[float],
    master_seed: int = 0,
    horizon: float = 3600.0,
    sim: SimConfig | None = None,
    bins: int = 60,
    csv_path: str | None = None,
    manifest_path: str | None = None,
) -> list[dict]:
    """Grid-search traffic realism against an observed travel-time sample.

    Every cell simulates an all-perturbed demand (no provider-routed
    vehicles) runs_per_cell times; rows are ranked ascending by mean JS
    divergence with |mean travel-time difference| and teleports breaking
    ties. Cells whose every run fails are flagged and ranked last.
    """
    if len(real_times) == 0:
        raise ValueError("calibration needs a nonempty observed travel-time sample")
    sim = sim or SimConfig()
    provider = FastestPathProvider()  # unused at i=0; keeps routing uniform
    writer = _RowWriter(csv_path, CALIBRATION_COLUMNS)
    if manifest_path:
        write_manifest(manifest_path, {
            "campaign": "calibration",
            "grid": dataclasses.asdict(grid_cfg),
            "master_seed": master_seed,
            "horizon": horizon,
            "bins": bins,
            "n_real_times": len(real_times),
        })
    rows = []
    try:
        for n, w, extra_spec in grid_cfg.cells():
            js_vals, dtt_vals, tp_vals = [], [], []
            for run in range(grid_cfg.runs_per_cell):
                try:
                    seed_parts = (master_seed, "cal", n, w, extra_spec, run)
                    demand = sample_demand(od, net, tile_grid, n,
                                           derive_rng(*seed_parts, "demand"))
                    routed = route_demand(net, demand, 0, provider, w,
                                          seed=stable_u64(*seed_parts, "routing"))
                    sched = assign_departures(routed, horizon,
                                              derive_rng(*seed_parts, "departures"))
                    extra = build_extra_traffic(net, tile_grid, n,
                                                ExtraVehiclesConfig.parse(extra_spec), w,
                                                max(sched.values()),
                                                seed=stable_u64(*seed_parts, "extra"))
                    _, stats = simulate(net, routed, sched, replace(sim, horizon=horizon),
                                        extra=extra, seed=stable_u64(*seed_parts, "sim"))
                    sim_times = list(stats.travel_times.values())
                    cmp = travel_time_comparison(sim_times, real_times, bins=bins)
                except Exception as exc:
                    log.error("calibration run (%s, %s, %s) #%d failed: %s",
                              n, w, extra_spec, run, exc)
                    continue
                js_vals.append(cmp["js"])
                dtt_vals.append(cmp["abs_mean_diff"])
                tp_vals.append(stats.teleports)
            row = {
                "n": n,
                "w": w,
                "extra": extra_spec,
                "js": float(np.mean(js_vals)) if js_vals else math.nan,
                "abs_dtt_s": float(np.mean(dtt_vals)) if dtt_vals else math.nan,
                "teleports": float(np.mean(tp_vals)) if tp_vals else math.nan,
                "failed": not js_vals,
            }
            rows.append(row)
            writer.write(row)
    finally:
        writer.close()
    ranked = sorted(
        (r for r in rows if not r["failed"]),
        key=lambda r: (r["js"], r["abs_dtt_s"], r["teleports"]),
    )
    return ranked + [r for r in rows if r["failed"]]
