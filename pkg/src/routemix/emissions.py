"""Per-road CO2 accounting from simulated trajectories.

The instantaneous emission rate is a polynomial in speed s and acceleration
a, clamped at zero: c0 + c1*s*a + c2*s*a^2 + c3*s + c4*s^2 + c5*s^3, in mg/s.
Each per-step rate is integrated over the step and credited to the edge the
vehicle occupies at that step, yielding a network weighted by CO2 mass.
Coefficient sets are configuration data (JSON or TOML), never baked in.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .network import RoadNetwork
from .sim import TrajectoryLog


@dataclass(frozen=True)
class EmissionCoefficients:
    """Polynomial coefficients yielding mg/s for s in m/s, a in m/s^2."""

    label: str
    c0: float
    c1: float
    c2: float
    c3: float
    c4: float
    c5: float

    def __post_init__(self):
        values = (self.c0, self.c1, self.c2, self.c3, self.c4, self.c5)
        if not all(math.isfinite(c) for c in values):
            raise ValueError("coefficients must be finite")
        if self.c0 < 0:
            raise ValueError(f"idling coefficient c0 must be >= 0, got {self.c0}")

    def as_tuple(self) -> tuple[float, ...]:
        return (self.c0, self.c1, self.c2, self.c3, self.c4, self.c5)


def load_coefficients(path: str) -> EmissionCoefficients:
    """Read a coefficient config ({label, c0..c5}) from JSON or TOML."""
    if path.endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError:  # Python 3.10
            import tomli as tomllib

        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    else:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    try:
        return EmissionCoefficients(
            label=str(doc["label"]),
            **{k: float(doc[k]) for k in ("c0", "c1", "c2", "c3", "c4", "c5")},
        )
    except KeyError as exc:
        raise ValueError(f"{path}: missing coefficient field {exc}") from exc


def default_coefficients() -> EmissionCoefficients:
    """Packaged default: average gasoline passenger car, CO2 in mg/s."""
    ref = resources.files("routemix").joinpath("data/default_passenger_car.json")
    doc = json.loads(ref.read_text(encoding="utf-8"))
    return EmissionCoefficients(
        label=str(doc["label"]),
        **{k: float(doc[k]) for k in ("c0", "c1", "c2", "c3", "c4", "c5")},
    )


def instantaneous_emission(coef: EmissionCoefficients, s: float, a: float) -> float:
    """Emission rate at speed s and acceleration a, mg/s, clamped at zero."""
    if s < 0:
        raise ValueError(f"speed must be >= 0, got {s}")
    val = (coef.c0 + coef.c1 * s * a + coef.c2 * s * a * a
           + coef.c3 * s + coef.c4 * s * s + coef.c5 * s * s * s)
    return val if val > 0.0 else 0.0


def emission_rates(coef: EmissionCoefficients, s: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Vectorized emission rates, mg/s, clamped at zero."""
    s = np.asarray(s, dtype=float)
    a = np.asarray(a, dtype=float)
    val = (coef.c0 + coef.c1 * s * a + coef.c2 * s * a * a
           + coef.c3 * s + coef.c4 * s * s + coef.c5 * s**3)
    return np.maximum(val, 0.0)


@dataclass(frozen=True)
class WeightedNetwork:
    """Road network annotated with per-edge CO2 mass, mg."""

    network: RoadNetwork
    mass_mg: dict[str, float]

    def __post_init__(self):
        unknown = set(self.mass_mg) - set(self.network.edges)
        if unknown:
            raise ValueError(f"mass assigned to unknown edges {sorted(unknown)[:5]}")
        negative = [e for e, m in self.mass_mg.items() if m < 0]
        if negative:
            raise ValueError(f"negative emission mass on {negative[:5]}")

    def mass_of(self, edge_id: str) -> float:
        return self.mass_mg.get(edge_id, 0.0)

    def masses(self) -> np.ndarray:
        """Per-edge masses in canonical edge order, mg."""
        return np.array([self.mass_of(eid) for eid in self.network.edge_ids])


def aggregate(
    log: TrajectoryLog, coef: EmissionCoefficients, net: RoadNetwork, dt: float | None = None
) -> WeightedNetwork:
    """Credit each per-step emission mass (rate x dt) to the occupied edge."""
    if dt is None:
        dt = log.dt
    for eid in log.edge_ids:
        if eid not in net.edges:
            raise ValueError(f"trajectory log references unknown edge {eid!r}")
    cols = log.columns()
    if len(log) == 0:
        return WeightedNetwork(net, {})
    rates = emission_rates(coef, cols["speed"], cols["accel"])
    # log edge indices refer to log.edge_ids; remap into net's canonical order
    remap = np.array([net.edge_index[eid] for eid in log.edge_ids])
    edge_idx = remap[cols["edge"]]
    per_edge = np.bincount(edge_idx, weights=rates * dt, minlength=len(net.edge_ids))
    mass = {eid: float(per_edge[i]) for i, eid in enumerate(net.edge_ids) if per_edge[i] > 0.0}
    return WeightedNetwork(net, mass)


def total_emissions(g: WeightedNetwork) -> float:
    """Network-wide CO2 mass, mg."""
    return float(sum(g.mass_mg.values()))


def per_meter(g: WeightedNetwork) -> dict[str, float]:
    """Per-edge emission intensity, mg per meter of road."""
    return {
        eid: g.mass_of(eid) / e.length for eid, e in g.network.edges.items()
    }


def emission_diff(g_a: WeightedNetwork, g_b: WeightedNetwork) -> dict[str, float]:
    """Signed per-edge difference of emission intensity (a minus b), mg/m."""
    if g_a.network is not g_b.network and g_a.network != g_b.network:
        raise ValueError("weighted networks must share the same underlying road network")
    pa, pb = per_meter(g_a), per_meter(g_b)
    return {eid: pa[eid] - pb[eid] for eid in g_a.network.edges}


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_WEIGHTED_HEADER = ["edge_id", "co2_mg", "co2_mg_per_m"]


def save_weighted_csv(g: WeightedNetwork, path: str) -> None:
    intensity = per_meter(g)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(_WEIGHTED_HEADER)
        for eid in g.network.edge_ids:
            w.writerow([eid, repr(g.mass_of(eid)), repr(intensity[eid])])


def load_weighted_csv(path: str, net: RoadNetwork) -> WeightedNetwork:
    mass = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _WEIGHTED_HEADER:
            raise ValueError(f"{path}: expected header {','.join(_WEIGHTED_HEADER)}")
        for row in reader:
            if not row:
                continue
            eid, mg = row[0], float(row[1])
            if eid not in net.edges:
                raise ValueError(f"{path}: unknown edge id {eid!r}")
            if mg != 0.0:
                mass[eid] = mg
    return WeightedNetwork(net, mass)


def export_geojson(
    g: WeightedNetwork,
    diff: dict[str, float] | None = None,
    path: str | None = None,
) -> dict:
    """Edge LineStrings with ``co2_mg_per_m`` properties (or ``diff_mg_per_m``
    when a signed per-edge diff is supplied). Coordinates are the planar
    meters used throughout; no geodetic CRS is implied."""
    net = g.network
    intensity = per_meter(g)
    features = []
    for eid, e in net.edges.items():
        a, b = net.nodes[e.from_node], net.nodes[e.to_node]
        props: dict[str, object] = {"edge_id": eid, "road_type": e.road_type}
        if diff is None:
            props["co2_mg_per_m"] = intensity[eid]
        else:
            props["diff_mg_per_m"] = diff[eid]
        features.append({
            "type": "Feature",
            "geometry": {"type": "LineString", "coordinates": [[a.x, a.y], [b.x, b.y]]},
            "properties": props,
        })
    doc = {"type": "FeatureCollection", "features": features}
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
    return doc
