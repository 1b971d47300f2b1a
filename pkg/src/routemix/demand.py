"""Mobility demand: square tiling, OD matrix estimation, and trip sampling.

The urban area is split into square tiles; trip records are counted into an
origin-destination matrix of tile-to-tile flows; the demand for a run is a
multiset of N edge-to-edge trips sampled with probability proportional to the
OD counts. A gravity-style synthetic trip-record generator stands in for real
GPS-derived records.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .network import RoadNetwork

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TileGrid:
    origin_x: float
    origin_y: float
    side: float
    n_rows: int
    n_cols: int

    def __post_init__(self):
        if self.side <= 0:
            raise ValueError(f"tile side must be > 0, got {self.side}")
        if self.n_rows < 1 or self.n_cols < 1:
            raise ValueError("grid must have at least one row and column")

    @property
    def extent(self) -> tuple[float, float, float, float]:
        return (
            self.origin_x,
            self.origin_y,
            self.origin_x + self.n_cols * self.side,
            self.origin_y + self.n_rows * self.side,
        )

    def tile_center(self, tile: tuple[int, int]) -> tuple[float, float]:
        r, c = tile
        return (self.origin_x + (c + 0.5) * self.side, self.origin_y + (r + 0.5) * self.side)


@dataclass(frozen=True)
class TripRecord:
    origin_x: float
    origin_y: float
    dest_x: float
    dest_y: float
    depart_time: float
    arrive_time: float

    def __post_init__(self):
        if not self.arrive_time > self.depart_time:
            raise ValueError(
                f"arrive_time {self.arrive_time} must exceed depart_time {self.depart_time}"
            )

    @property
    def travel_time(self) -> float:
        return self.arrive_time - self.depart_time


@dataclass(frozen=True)
class ODMatrix:
    """Tile-to-tile trip counts; keys are ((o_row, o_col), (d_row, d_col))."""

    flows: dict[tuple[tuple[int, int], tuple[int, int]], int]

    def __post_init__(self):
        if any(v < 0 for v in self.flows.values()):
            raise ValueError("OD counts must be >= 0")
        if not any(v > 0 for v in self.flows.values()):
            raise ValueError("OD matrix needs at least one positive entry")

    @property
    def total(self) -> int:
        return sum(self.flows.values())


@dataclass(frozen=True)
class Trip:
    vehicle_id: str
    origin_edge: str
    dest_edge: str

    def __post_init__(self):
        if self.origin_edge == self.dest_edge:
            raise ValueError(f"trip {self.vehicle_id}: origin and destination edge coincide")


@dataclass(frozen=True)
class MobilityDemand:
    trips: tuple[Trip, ...]

    @property
    def n(self) -> int:
        return len(self.trips)


def build_grid(bbox: tuple[float, float, float, float], side: float) -> TileGrid:
    """Square tiling covering the bounding box with ceil-division counts."""
    x_min, y_min, x_max, y_max = bbox
    if not (x_max > x_min and y_max > y_min):
        raise ValueError(f"degenerate bbox {bbox}")
    if side <= 0:
        raise ValueError(f"tile side must be > 0, got {side}")
    return TileGrid(
        origin_x=x_min,
        origin_y=y_min,
        side=side,
        n_rows=math.ceil((y_max - y_min) / side),
        n_cols=math.ceil((x_max - x_min) / side),
    )


def tile_of(grid: TileGrid, x: float, y: float) -> tuple[int, int]:
    """Tile index (row, col) containing the point; upper/right boundary clamps."""
    x_min, y_min, x_max, y_max = grid.extent
    if not (x_min <= x <= x_max and y_min <= y <= y_max):
        raise ValueError(f"point ({x}, {y}) outside grid extent {grid.extent}")
    col = min(int((x - grid.origin_x) // grid.side), grid.n_cols - 1)
    row = min(int((y - grid.origin_y) // grid.side), grid.n_rows - 1)
    return row, col


def estimate_od(records: Sequence[TripRecord], grid: TileGrid) -> ODMatrix:
    """Count records into tile-to-tile flows; records outside the grid are skipped."""
    if not records:
        raise ValueError("no trip records")
    flows: dict[tuple[tuple[int, int], tuple[int, int]], int] = {}
    skipped = 0
    for rec in records:
        try:
            o = tile_of(grid, rec.origin_x, rec.origin_y)
            d = tile_of(grid, rec.dest_x, rec.dest_y)
        except ValueError:
            skipped += 1
            continue
        flows[(o, d)] = flows.get((o, d), 0) + 1
    if not flows:
        raise ValueError("every trip record falls outside the grid extent")
    if skipped:
        log.warning("estimate_od: skipped %d records outside the grid", skipped)
    return ODMatrix(flows)


def edges_in_tile(net: RoadNetwork, grid: TileGrid, tile: tuple[int, int]) -> set[str]:
    """Edges whose source node lies in the tile (membership by edge source)."""
    r, c = tile
    if not (0 <= r < grid.n_rows and 0 <= c < grid.n_cols):
        raise ValueError(f"tile {tile} outside {grid.n_rows}x{grid.n_cols} grid")
    found = set()
    for e in net.edges.values():
        n = net.nodes[e.from_node]
        try:
            if tile_of(grid, n.x, n.y) == (r, c):
                found.add(e.id)
        except ValueError:
            continue  # node outside grid extent belongs to no tile
    return found


def _tile_edge_index(net: RoadNetwork, grid: TileGrid) -> dict[tuple[int, int], list[str]]:
    by_tile: dict[tuple[int, int], list[str]] = {}
    for eid in net.edges:  # canonical order keeps sampling deterministic
        n = net.nodes[net.edges[eid].from_node]
        try:
            t = tile_of(grid, n.x, n.y)
        except ValueError:
            continue
        by_tile.setdefault(t, []).append(eid)
    return by_tile


def feasible_od_pairs(
    od: ODMatrix, net: RoadNetwork, grid: TileGrid
) -> tuple[list[tuple[tuple[int, int], tuple[int, int]]], dict[tuple[int, int], list[str]]]:
    """OD pairs that can actually yield a trip: both tiles hold edges, and a
    same-tile pair needs at least two distinct edges."""
    by_tile = _tile_edge_index(net, grid)
    pairs = []
    for (o, d), count in sorted(od.flows.items()):
        if count <= 0:
            continue
        if o not in by_tile or d not in by_tile:
            continue
        if o == d and len(by_tile[o]) < 2:
            continue
        pairs.append((o, d))
    return pairs, by_tile


def sample_demand(
    od: ODMatrix,
    net: RoadNetwork,
    grid: TileGrid,
    n: int,
    rng: np.random.Generator,
) -> MobilityDemand:
    """Sample N trips: OD pair with probability proportional to its count
    (restricted to feasible pairs), then origin and destination edges uniform
    within the tiles, redrawn until distinct."""
    if n < 1:
        raise ValueError(f"demand size must be >= 1, got {n}")
    pairs, by_tile = feasible_od_pairs(od, net, grid)
    dropped = [k for k, v in od.flows.items() if v > 0 and k not in set(pairs)]
    if dropped:
        log.warning(
            "sample_demand: %d OD pairs have no usable edges and were excluded", len(dropped)
        )
    if not pairs:
        raise ValueError("no feasible OD pair: every tile pair lacks usable edges")
    weights = np.array([od.flows[p] for p in pairs], dtype=float)
    probs = weights / weights.sum()
    width = len(str(max(n - 1, 1)))
    choices = rng.choice(len(pairs), size=n, p=probs)
    trips = []
    for k, pair_idx in enumerate(choices):
        o, d = pairs[pair_idx]
        origin_edges = by_tile[o]
        dest_edges = by_tile[d]
        e_o = origin_edges[rng.integers(len(origin_edges))]
        e_d = dest_edges[rng.integers(len(dest_edges))]
        while e_o == e_d:
            e_o = origin_edges[rng.integers(len(origin_edges))]
            e_d = dest_edges[rng.integers(len(dest_edges))]
        trips.append(Trip(vehicle_id=f"v{k:0{width}d}", origin_edge=e_o, dest_edge=e_d))
    return MobilityDemand(tuple(trips))


# ---------------------------------------------------------------------------
# Synthetic trip records (fixture stand-in for GPS-derived data)
# ---------------------------------------------------------------------------

def synth_trip_records(
    grid: TileGrid,
    n_records: int,
    rng: np.random.Generator,
    tile_weights: np.ndarray | None = None,
    decay_m: float = 2000.0,
    speed_mps: float = 8.0,
    horizon: float = 3600.0,
) -> list[TripRecord]:
    """Gravity-style synthetic records: flow(o, d) proportional to
    pop(o) * pop(d) * exp(-distance / decay_m).

    ``tile_weights`` is an (n_rows, n_cols) population array (uniform when
    omitted). Travel times come from straight-line distance at ``speed_mps``
    with lognormal noise, so the records double as a plausible "observed"
    travel-time sample for calibration.
    """
    if n_records < 1:
        raise ValueError("n_records must be >= 1")
    if tile_weights is None:
        pop = np.ones((grid.n_rows, grid.n_cols))
    else:
        pop = np.asarray(tile_weights, dtype=float)
        if pop.shape != (grid.n_rows, grid.n_cols):
            raise ValueError(
                f"tile_weights shape {pop.shape} != grid {grid.n_rows}x{grid.n_cols}"
            )
        if (pop < 0).any() or pop.sum() <= 0:
            raise ValueError("tile_weights must be nonnegative with positive total")
    tiles = [(r, c) for r in range(grid.n_rows) for c in range(grid.n_cols)]
    centers = np.array([grid.tile_center(t) for t in tiles])
    w = np.array([pop[t] for t in tiles])
    dist = np.hypot(
        centers[:, None, 0] - centers[None, :, 0], centers[:, None, 1] - centers[None, :, 1]
    )
    gravity = np.outer(w, w) * np.exp(-dist / decay_m)
    gravity[w == 0, :] = 0.0
    gravity[:, w == 0] = 0.0
    flat = gravity.ravel()
    probs = flat / flat.sum()
    draws = rng.choice(len(flat), size=n_records, p=probs)
    records = []
    for idx in draws:
        o, d = tiles[idx // len(tiles)], tiles[idx % len(tiles)]
        ox = grid.origin_x + (o[1] + rng.random()) * grid.side
        oy = grid.origin_y + (o[0] + rng.random()) * grid.side
        dx = grid.origin_x + (d[1] + rng.random()) * grid.side
        dy = grid.origin_y + (d[0] + rng.random()) * grid.side
        depart = rng.random() * horizon
        crow = math.hypot(dx - ox, dy - oy)
        travel = max(1.0, crow / speed_mps * rng.lognormal(mean=0.0, sigma=0.25))
        records.append(TripRecord(ox, oy, dx, dy, depart, depart + travel))
    return records


def center_weighted_population(grid: TileGrid, peak: float = 4.0) -> np.ndarray:
    """Population surface peaking at the grid center, for core-heavy demand."""
    rows = np.arange(grid.n_rows)[:, None]
    cols = np.arange(grid.n_cols)[None, :]
    rc, cc = (grid.n_rows - 1) / 2.0, (grid.n_cols - 1) / 2.0
    span = max(grid.n_rows, grid.n_cols, 2)
    d2 = ((rows - rc) ** 2 + (cols - cc) ** 2) / (span / 2.0) ** 2
    return 1.0 + (peak - 1.0) * np.exp(-2.0 * d2)


# ---------------------------------------------------------------------------
# CSV round-trips
# ---------------------------------------------------------------------------

_RECORD_HEADER = ["origin_x", "origin_y", "dest_x", "dest_y", "depart_time", "arrive_time"]
_OD_HEADER = ["o_row", "o_col", "d_row", "d_col", "count"]
_DEMAND_HEADER = ["vehicle_id", "origin_edge", "dest_edge"]


def _check_header(got: list[str] | None, want: list[str], path: str) -> None:
    if got != want:
        raise ValueError(f"{path}: expected header {','.join(want)}, got {got}")


def save_trip_records(records: Iterable[TripRecord], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(_RECORD_HEADER)
        for r in records:
            w.writerow([repr(v) for v in (r.origin_x, r.origin_y, r.dest_x, r.dest_y,
                                           r.depart_time, r.arrive_time)])


def load_trip_records(path: str) -> list[TripRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        _check_header(next(reader, None), _RECORD_HEADER, path)
        return [TripRecord(*(float(v) for v in row)) for row in reader if row]


def save_od_matrix(od: ODMatrix, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(_OD_HEADER)
        for (o, d), count in sorted(od.flows.items()):
            w.writerow([o[0], o[1], d[0], d[1], count])


def load_od_matrix(path: str) -> ODMatrix:
    flows = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        _check_header(next(reader, None), _OD_HEADER, path)
        for row in reader:
            if not row:
                continue
            o = (int(row[0]), int(row[1]))
            d = (int(row[2]), int(row[3]))
            flows[(o, d)] = flows.get((o, d), 0) + int(row[4])
    return ODMatrix(flows)


def save_demand(demand: MobilityDemand, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(_DEMAND_HEADER)
        for t in demand.trips:
            w.writerow([t.vehicle_id, t.origin_edge, t.dest_edge])


def load_demand(path: str, net: RoadNetwork | None = None) -> MobilityDemand:
    trips = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        _check_header(next(reader, None), _DEMAND_HEADER, path)
        for row in reader:
            if not row:
                continue
            t = Trip(vehicle_id=row[0], origin_edge=row[1], dest_edge=row[2])
            if net is not None:
                for eid in (t.origin_edge, t.dest_edge):
                    if eid not in net.edges:
                        raise ValueError(f"{path}: trip {t.vehicle_id} references unknown edge {eid!r}")
            trips.append(t)
    return MobilityDemand(tuple(trips))
