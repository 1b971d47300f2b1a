"""Command-line interface.

Subcommand groups mirror the pipeline: ``net``, ``demand``, ``route``,
``simulate``, ``emissions``, ``analyze``, ``experiment``. Global flags:
``--seed`` (master seed), ``--config`` (JSON/TOML defaults for experiment
campaigns), ``--out`` (output directory).
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import sys

import click
import numpy as np

from . import analysis, demand as demand_mod, emissions as emissions_mod
from . import experiment as experiment_mod
from . import network as network_mod
from . import routing as routing_mod
from . import sim as sim_mod
from .seeding import derive_rng, stable_u64

log = logging.getLogger(__name__)


class CliState:
    def __init__(self, seed: int, config: str | None, out: str):
        self.seed = seed
        self.out = out
        self.config: dict = _load_config(config) if config else {}

    def path(self, name: str) -> str:
        os.makedirs(self.out, exist_ok=True)
        return os.path.join(self.out, name)


def _load_config(path: str) -> dict:
    if path.endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _fail(exc: Exception) -> "click.ClickException":
    return click.ClickException(str(exc))


def _load_net(path: str) -> network_mod.RoadNetwork:
    try:
        return network_mod.load_network(path)
    except network_mod.NetworkError as exc:
        raise _fail(exc)


def _grid_for(net: network_mod.RoadNetwork, side: float) -> demand_mod.TileGrid:
    return demand_mod.build_grid(net.bbox, side)


def _build_provider(spec: str, fallback: str) -> routing_mod.NavigationProvider:
    if spec == "fastest":
        return routing_mod.FastestPathProvider()
    if spec.startswith("fixtures:"):
        return routing_mod.FixtureProvider(spec.split(":", 1)[1], fallback=fallback)
    if spec.startswith("http:") or spec.startswith("https:"):
        return routing_mod.HttpProvider(spec)
    raise click.ClickException(
        f"unknown provider {spec!r}; use 'fastest', 'fixtures:<dir>', or an http(s) URL"
    )


def _read_column(path: str, column: str) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        if column == "travel_time" and column not in fields \
                and {"depart_time", "arrive_time"} <= set(fields):
            return np.array([float(r["arrive_time"]) - float(r["depart_time"])
                             for r in reader])
        if column not in fields:
            raise click.ClickException(f"{path}: no column {column!r} (has {fields})")
        return np.array([float(r[column]) for r in reader if r[column] != ""])


def _sim_config(ctx_cfg: dict, **overrides) -> sim_mod.SimConfig:
    allowed = {f.name for f in dataclasses.fields(sim_mod.SimConfig)}
    merged = {k: v for k, v in ctx_cfg.get("sim", {}).items() if k in allowed}
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return sim_mod.SimConfig(**merged)


@click.group()
@click.option("--seed", type=int, default=0, show_default=True, help="Master seed.")
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON/TOML config with campaign defaults.")
@click.option("--out", type=click.Path(file_okay=False), default=".", show_default=True,
              help="Output directory.")
@click.pass_context
def main(ctx, seed, config, out):
    """Routing-share what-if analysis: demand, routing, traffic, CO2."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = CliState(seed, config, out)


# -- net ----------------------------------------------------------------------

@main.group()
def net():
    """Road network tools."""


@net.command("validate")
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
def net_validate(path):
    n = _load_net(path)
    click.echo(f"ok: {len(n.nodes)} nodes, {len(n.edges)} edges")


@net.command("synth")
@click.option("--rows", type=int, required=True)
@click.option("--cols", type=int, required=True)
@click.option("--block", type=float, default=100.0, show_default=True, help="Block length, m.")
@click.option("--speed", type=float, default=13.9, show_default=True, help="Speed limit, m/s.")
@click.option("--light-period", type=int, default=None, help="Signalize every k-th node.")
@click.option("-o", "--output", default="network.json", show_default=True)
@click.pass_obj
def net_synth(state, rows, cols, block, speed, light_period, output):
    try:
        g = network_mod.synth_grid(rows, cols, block, speed, light_period)
    except ValueError as exc:
        raise _fail(exc)
    path = state.path(output)
    network_mod.store_network(g, path)
    click.echo(f"wrote {path}: {len(g.nodes)} nodes, {len(g.edges)} edges")


# -- demand ---------------------------------------------------------------------

@main.group()
def demand():
    """Tile grids, OD matrices, trip sampling."""


@demand.command("synth-records")
@click.option("--net", "net_path", required=True, type=click.Path(exists=True))
@click.option("--side", type=float, required=True, help="Tile side, m.")
@click.option("--n", type=int, required=True)
@click.option("--pop", type=click.Choice(["uniform", "center"]), default="uniform",
              show_default=True)
@click.option("--decay", type=float, default=2000.0, show_default=True)
@click.option("--horizon", type=float, default=3600.0, show_default=True)
@click.option("-o", "--output", default="records.csv", show_default=True)
@click.pass_obj
def demand_synth_records(state, net_path, side, n, pop, decay, horizon, output):
    g = _grid_for(_load_net(net_path), side)
    weights = demand_mod.center_weighted_population(g) if pop == "center" else None
    recs = demand_mod.synth_trip_records(
        g, n, derive_rng(state.seed, "synth-records"), tile_weights=weights,
        decay_m=decay, horizon=horizon,
    )
    path = state.path(output)
    demand_mod.save_trip_records(recs, path)
    click.echo(f"wrote {path}: {len(recs)} records")


@demand.command("build-od")
@click.option("--net", "net_path", required=True, type=click.Path(exists=True))
@click.option("--side", type=float, required=True)
@click.option("--records", required=True, type=click.Path(exists=True))
@click.option("-o", "--output", default="od.csv", show_default=True)
@click.pass_obj
def demand_build_od(state, net_path, side, records, output):
    g = _grid_for(_load_net(net_path), side)
    try:
        od = demand_mod.estimate_od(demand_mod.load_trip_records(records), g)
    except ValueError as exc:
        raise _fail(exc)
    path = state.path(output)
    demand_mod.save_od_matrix(od, path)
    click.echo(f"wrote {path}: {len(od.flows)} OD pairs, total {od.total}")


@demand.command("sample")
@click.option("--net", "net_path", required=True, type=click.Path(exists=True))
@click.option("--side", type=float, required=True)
@click.option("--od", "od_path", required=True, type=click.Path(exists=True))
@click.option("--n", type=int, required=True)
@click.option("-o", "--output", default="demand.csv", show_default=True)
@click.pass_obj
def demand_sample(state, net_path, side, od_path, n, output):
    net_ = _load_net(net_path)
    try:
        d = demand_mod.sample_demand(
            demand_mod.load_od_matrix(od_path), net_, _grid_for(net_, side), n,
            derive_rng(state.seed, "demand"),
        )
    except ValueError as exc:
        raise _fail(exc)
    path = state.path(output)
    demand_mod.save_demand(d, path)
    click.echo(f"wrote {path}: {d.n} trips")


# -- route -----------------------------------------------------------------------

_PROVIDER_OPTS = [
    click.option("--provider", default="fastest", show_default=True,
                 help="'fastest', 'fixtures:<dir>', or an http(s) URL."),
    click.option("--fallback", type=click.Choice(["error", "fastest"]), default="error",
                 show_default=True, help="Behavior for missing fixtures."),
]


def _with_provider_opts(fn):
    for opt in reversed(_PROVIDER_OPTS):
        fn = opt(fn)
    return fn


@main.group()
def route():
    """Path computation."""


@route.command("single")
@click.option("--net", "net_path", required=True, type=click.Path(exists=True))
@click.option("--from", "e_o", required=True)
@click.option("--to", "e_d", required=True)
@click.option("--w", type=float, default=None, help="Perturbed routing with this strength.")
@_with_provider_opts
@click.pass_obj
def route_single(state, net_path, e_o, e_d, w, provider, fallback):
    net_ = _load_net(net_path)
    try:
        if w is not None:
            p = routing_mod.perturbed_fastest_path(
                net_, e_o, e_d, w, derive_rng(state.seed, "route-single"))
        elif provider == "fastest":
            p = routing_mod.fastest_path(net_, e_o, e_d)
        else:
            p = routing_mod.external_route(net_, _build_provider(provider, fallback), e_o, e_d)
    except (routing_mod.RoutingError, ValueError) as exc:
        raise _fail(exc)
    click.echo(json.dumps({"provider": p.provider, "edges": list(p.edges)}))


@route.command("demand")
@click.option("--net", "net_path", required=True, type=click.Path(exists=True))
@click.option("--demand", "demand_path", required=True, type=click.Path(exists=True))
@click.option("--mix-tenths", "-i", type=int, required=True,
              help="Tenths of the fleet routed by the provider (0..10).")
@click.option("--w", type=float, default=5.0, show_default=True)
@_with_provider_opts
@click.option("-o", "--output", default="routed.json", show_default=True)
@click.pass_obj
def route_demand_cmd(state, net_path, demand_path, mix_tenths, w, provider, fallback, output):
    net_ = _load_net(net_path)
    d = demand_mod.load_demand(demand_path, net_)
    try:
        rd = routing_mod.route_demand(net_, d, mix_tenths, _build_provider(provider, fallback),
                                      w, seed=state.seed)
    except (routing_mod.RoutingError, ValueError) as exc:
        raise _fail(exc)
    path = state.path(output)
    routing_mod.save_routed_demand(rd, path)
    click.echo(f"wrote {path}: {rd.n} paths, {routing_mod.mixed_count(rd.n, mix_tenths)} provider-routed")


@route.command("perturbation-curve")
@click.option("--net", "net_path", required=True, type=click.Path(exists=True))
@click.option("--pairs", type=int, default=500, show_default=True)
@click.option("--w-values", default="1,2,5,10,20", show_default=True)
@click.option("-o", "--output", default="perturbation_curve.csv", show_default=True)
@click.pass_obj
def route_perturbation_curve(state, net_path, pairs, w_values, output):
    net_ = _load_net(net_path)
    ws = [float(x) for x in w_values.split(",")]
    rows = routing_mod.perturbation_curve(net_, pairs, ws, seed=state.seed)
    path = state.path(output)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["w", "mean_sspd_m"])
        w.writerows(rows)
    click.echo(f"wrote {path}")


# -- simulate -----------------------------------------------------------------------

@main.command("simulate")
@click.option("--net", "net_path", required=True, type=click.Path(exists=True))
@click.option("--routes", required=True, type=click.Path(exists=True),
              help="Routed-demand JSON.")
@click.option("--horizon", type=float, default=3600.0, show_default=True)
@click.option("--sigma", type=float, default=None, help="Driver imperfection override.")
@click.option("--teleport-threshold", type=float, default=None)
@click.option("--extra", default="none", show_default=True,
              help="Background vehicles: none, X_start, or X_start+Y_end.")
@click.option("--side", type=float, default=None,
              help="Tile side for extra-vehicle OD sampling (required with --extra).")
@click.option("--w", type=float, default=5.0, show_default=True,
              help="Perturbation strength for extra-vehicle routes.")
@click.option("--traj", default="trajectories.csv", show_default=True)
@click.option("--stats", "stats_name", default="sim_stats.json", show_default=True)
@click.pass_obj
def simulate_cmd(state, net_path, routes, horizon, sigma, teleport_threshold,
                 extra, side, w, traj, stats_name):
    net_ = _load_net(net_path)
    try:
        rd = routing_mod.load_routed_demand(routes, net_)
    except (routing_mod.RoutingError, KeyError, ValueError) as exc:
        raise _fail(exc)
    cfg = _sim_config(state.config, horizon=horizon, sigma=sigma,
                      teleport_threshold=teleport_threshold)
    sched = sim_mod.assign_departures(rd, horizon, derive_rng(state.seed, "departures"))
    extra_traffic = None
    extra_cfg = sim_mod.ExtraVehiclesConfig.parse(extra)
    if extra_cfg.counts(rd.n) != (0, 0):
        if side is None:
            raise click.ClickException("--extra needs --side for OD sampling")
        extra_traffic = sim_mod.build_extra_traffic(
            net_, _grid_for(net_, side), rd.n, extra_cfg, w, max(sched.values()),
            seed=stable_u64(state.seed, "extra"),
        )
    try:
        log_, stats = sim_mod.simulate(net_, rd, sched, cfg, extra=extra_traffic,
                                       seed=state.seed)
    except sim_mod.SimulationError as exc:
        raise _fail(exc)
    tpath, spath = state.path(traj), state.path(stats_name)
    log_.to_csv(tpath)
    with open(spath, "w", encoding="utf-8") as fh:
        json.dump(stats.to_dict(), fh, indent=2)
        fh.write("\n")
    click.echo(f"wrote {tpath} ({len(log_)} records) and {spath}: "
               f"arrived {stats.arrived}/{stats.departed}, teleports {stats.teleports}")


# -- emissions -----------------------------------------------------------------------

@main.group()
def emissions():
    """Per-road CO2 aggregation and exports."""


def _coef_from(path: str | None) -> emissions_mod.EmissionCoefficients:
    if path is None:
        return emissions_mod.default_coefficients()
    try:
        return emissions_mod.load_coefficients(path)
    except ValueError as exc:
        raise _fail(exc)


@emissions.command("aggregate")
@click.option("--net", "net_path", required=True, type=click.Path(exists=True))
@click.option("--traj", required=True, type=click.Path(exists=True))
@click.option("--coef", type=click.Path(exists=True), default=None,
              help="Coefficient config (JSON/TOML); packaged default otherwise.")
@click.option("--dt", type=float, default=1.0, show_default=True)
@click.option("-o", "--output", default="weighted.csv", show_default=True)
@click.pass_obj
def emissions_aggregate(state, net_path, traj, coef, dt, output):
    net_ = _load_net(net_path)
    try:
        log_ = sim_mod.TrajectoryLog.from_csv(traj, net_, dt=dt)
        g = emissions_mod.aggregate(log_, _coef_from(coef), net_, dt=dt)
    except ValueError as exc:
        raise _fail(exc)
    path = state.path(output)
    emissions_mod.save_weighted_csv(g, path)
    click.echo(f"wrote {path}: total {emissions_mod.total_emissions(g):.1f} mg")


@emissions.command("diff")
@click.option("--net", "net_path", required=True, type=click.Path(exists=True))
@click.option("-a", "weighted_a", required=True, type=click.Path(exists=True))
@click.option("-b", "weighted_b", required=True, type=click.Path(exists=True))
@click.option("-o", "--output", default="diff.csv", show_default=True)
@click.pass_obj
def emissions_diff_cmd(state, net_path, weighted_a, weighted_b, output):
    net_ = _load_net(net_path)
    try:
        g_a = emissions_mod.load_weighted_csv(weighted_a, net_)
        g_b = emissions_mod.load_weighted_csv(weighted_b, net_)
        diff = emissions_mod.emission_diff(g_a, g_b)
    except ValueError as exc:
        raise _fail(exc)
    path = state.path(output)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["edge_id", "diff_mg_per_m"])
        for eid in net_.edge_ids:
            w.writerow([eid, repr(diff[eid])])
    click.echo(f"wrote {path}")


@emissions.command("export-geojson")
@click.option("--net", "net_path", required=True, type=click.Path(exists=True))
@click.option("--weighted", required=True, type=click.Path(exists=True))
@click.option("--diff-with", type=click.Path(exists=True), default=None,
              help="Second weighted CSV; exports signed per-meter differences.")
@click.option("-o", "--output", default="emissions.geojson", show_default=True)
@click.pass_obj
def emissions_export_geojson(state, net_path, weighted, diff_with, output):
    net_ = _load_net(net_path)
    try:
        g = emissions_mod.load_weighted_csv(weighted, net_)
        diff = None
        if diff_with:
            g_b = emissions_mod.load_weighted_csv(diff_with, net_)
            diff = emissions_mod.emission_diff(g, g_b)
        path = state.path(output)
        emissions_mod.export_geojson(g, diff=diff, path=path)
    except ValueError as exc:
        raise _fail(exc)
    click.echo(f"wrote {path}")


# -- analyze -----------------------------------------------------------------------

@main.group()
def analyze():
    """Distribution statistics."""


@analyze.command("gini")
@click.option("--csv", "csv_path", required=True, type=click.Path(exists=True))
@click.option("--column", default="co2_mg", show_default=True)
@click.option("--include-zeros", is_flag=True, default=False,
              help="Keep zero entries (excluded by default).")
def analyze_gini(csv_path, column, include_zeros):
    values = _read_column(csv_path, column)
    if not include_zeros:
        values = analysis.positive_values(values)
    try:
        click.echo(f"{analysis.gini(values):.6f}")
    except ValueError as exc:
        raise _fail(exc)


@analyze.command("fit")
@click.option("--csv", "csv_path", required=True, type=click.Path(exists=True))
@click.option("--column", default="co2_mg", show_default=True)
@click.option("--x-min", default="auto", show_default=True,
              help="'auto' (smallest positive), 'scan' (KS scan), or a number.")
@click.option("-o", "--output", default="fit_report.json", show_default=True)
@click.pass_obj
def analyze_fit(state, csv_path, column, x_min, output):
    values = analysis.positive_values(_read_column(csv_path, column))
    try:
        if x_min == "auto":
            xm = analysis.smallest_positive(values)
        elif x_min == "scan":
            xm = analysis.scan_x_min(values)
        else:
            xm = float(x_min)
        fits = analysis.fit_all_models(values, xm)
        sel = analysis.select_best(fits, values)
    except (analysis.FitError, ValueError) as exc:
        raise _fail(exc)
    report = analysis.selection_report(sel)
    path = state.path(output)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    click.echo(f"winner: {sel.winner}; wrote {path}")


@analyze.command("js")
@click.option("--a", "path_a", required=True, type=click.Path(exists=True))
@click.option("--b", "path_b", required=True, type=click.Path(exists=True))
@click.option("--column", default="travel_time", show_default=True)
@click.option("--bins", type=int, default=60, show_default=True)
def analyze_js(path_a, path_b, column, bins):
    a = _read_column(path_a, column)
    b = _read_column(path_b, column)
    try:
        out = analysis.travel_time_comparison(a, b, bins=bins)
    except ValueError as exc:
        raise _fail(exc)
    click.echo(json.dumps(out))


@analyze.command("ccdf")
@click.option("--csv", "csv_path", required=True, type=click.Path(exists=True))
@click.option("--column", default="co2_mg", show_default=True)
@click.option("--include-zeros", is_flag=True, default=False)
@click.option("-o", "--output", default="ccdf.csv", show_default=True)
@click.pass_obj
def analyze_ccdf(state, csv_path, column, include_zeros, output):
    values = _read_column(csv_path, column)
    if not include_zeros:
        values = analysis.positive_values(values)
    try:
        xs, ps = analysis.ccdf(values)
    except ValueError as exc:
        raise _fail(exc)
    path = state.path(output)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "p_ge_x"])
        w.writerows(zip(xs, ps))
    click.echo(f"wrote {path}")


# -- experiment -----------------------------------------------------------------------

@main.group()
def experiment():
    """Sweep and calibration campaigns."""


def _parse_i_values(text: str) -> tuple[int, ...]:
    if "-" in text and "," not in text:
        lo, hi = text.split("-")
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(x) for x in text.split(","))


@experiment.command("sweep")
@click.option("--net", "net_path", required=True, type=click.Path(exists=True))
@click.option("--od", "od_path", required=True, type=click.Path(exists=True))
@click.option("--side", type=float, required=True)
@click.option("--n", type=int, default=None)
@click.option("--w", type=float, default=None)
@click.option("--i-values", default=None, help="e.g. '0-10' or '0,5,10'.")
@click.option("--reps", type=int, default=None)
@click.option("--extra", default=None)
@click.option("--fix-demand", is_flag=True, default=False,
              help="Share one demand across repetitions (only the provider-routed subset varies).")
@click.option("--coef", type=click.Path(exists=True), default=None)
@_with_provider_opts
@click.pass_obj
def experiment_sweep(state, net_path, od_path, side, n, w, i_values, reps, extra,
                     fix_demand, coef, provider, fallback):
    net_ = _load_net(net_path)
    od = demand_mod.load_od_matrix(od_path)
    grid = _grid_for(net_, side)
    conf = dict(state.config.get("sweep", state.config))
    conf.pop("sim", None)
    overrides = {
        "n": n, "w": w, "repetitions": reps, "extra": extra,
        "i_values": _parse_i_values(i_values) if i_values else None,
    }
    conf.update({k: v for k, v in overrides.items() if v is not None})
    conf.setdefault("n", 100)
    if "i_values" in conf:
        conf["i_values"] = tuple(conf["i_values"])
    conf["master_seed"] = state.seed
    conf["fix_demand"] = fix_demand or conf.get("fix_demand", False)
    try:
        cfg = experiment_mod.SweepConfig(sim=_sim_config(state.config), **conf)
    except (TypeError, ValueError) as exc:
        raise _fail(exc)
    res = experiment_mod.run_sweep(
        cfg, net_, od, grid,
        provider=_build_provider(provider, fallback),
        coef=_coef_from(coef),
        csv_path=state.path("sweep_rows.csv"),
        manifest_path=state.path("sweep_manifest.json"),
    )
    if res.rows:
        experiment_mod.save_summary_csv(experiment_mod.summarize(res),
                                        state.path("sweep_summary.csv"))
    click.echo(f"{len(res.rows)} rows, {len(res.failures)} failures -> {state.out}")
    if not res.ok:
        sys.exit(1)


@experiment.command("calibrate")
@click.option("--net", "net_path", required=True, type=click.Path(exists=True))
@click.option("--od", "od_path", required=True, type=click.Path(exists=True))
@click.option("--side", type=float, required=True)
@click.option("--real-times", required=True, type=click.Path(exists=True),
              help="Trip-record CSV supplying the observed travel-time sample.")
@click.option("--horizon", type=float, default=3600.0, show_default=True)
@click.option("--bins", type=int, default=60, show_default=True)
@click.pass_obj
def experiment_calibrate(state, net_path, od_path, side, real_times, horizon, bins):
    net_ = _load_net(net_path)
    od = demand_mod.load_od_matrix(od_path)
    grid = _grid_for(net_, side)
    times = [r.travel_time for r in demand_mod.load_trip_records(real_times)]
    conf = state.config.get("calibration", {})
    allowed = {f.name for f in dataclasses.fields(experiment_mod.CalibrationGrid)}
    try:
        cal = experiment_mod.CalibrationGrid(
            **{k: tuple(v) if isinstance(v, list) else v
               for k, v in conf.items() if k in allowed})
    except (TypeError, ValueError) as exc:
        raise _fail(exc)
    ranked = experiment_mod.run_calibration(
        cal, net_, od, grid, times, master_seed=state.seed, horizon=horizon,
        sim=_sim_config(state.config), bins=bins,
        csv_path=state.path("calibration_cells.csv"),
        manifest_path=state.path("calibration_manifest.json"),
    )
    path = state.path("calibration_ranked.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(experiment_mod.CALIBRATION_COLUMNS)
        for r in ranked:
            w.writerow([r[c] for c in experiment_mod.CALIBRATION_COLUMNS])
    best = next((r for r in ranked if not r["failed"]), None)
    if best:
        click.echo(f"best: n={best['n']} w={best['w']} extra={best['extra']} "
                   f"js={best['js']:.4f}; wrote {path}")
    else:
        click.echo(f"every cell failed; wrote {path}")
        sys.exit(1)


@experiment.command("summarize")
@click.option("--rows", "rows_path", required=True, type=click.Path(exists=True))
@click.option("-o", "--output", default="sweep_summary.csv", show_default=True)
@click.pass_obj
def experiment_summarize(state, rows_path, output):
    with open(rows_path, newline="", encoding="utf-8") as fh:
        raw = list(csv.DictReader(fh))
    if not raw:
        raise click.ClickException(f"{rows_path}: no rows")
    metrics = ("total_co2_mg", "gini", "alpha", "mean_travel_time_s", "teleports")
    by_i: dict[int, list[dict]] = {}
    for r in raw:
        by_i.setdefault(int(r["i"]), []).append(r)
    summary = []
    for i in sorted(by_i):
        entry: dict = {"i": i, "reps": len(by_i[i])}
        for m in metrics:
            vals = np.array([float(r[m]) if r[m] not in ("", "nan") else math.nan
                             for r in by_i[i]])
            entry[f"{m}_mean"] = float(np.nanmean(vals)) if not np.isnan(vals).all() else math.nan
            entry[f"{m}_std"] = float(np.nanstd(vals)) if not np.isnan(vals).all() else math.nan
        summary.append(entry)
    path = state.path(output)
    experiment_mod.save_summary_csv(summary, path)
    click.echo(f"wrote {path}")


if __name__ == "__main__":
    main()
