"""Routing: exact fastest paths, noise-perturbed paths, external providers.

Paths are edge sequences inclusive of both the origin and destination edge,
minimizing total free-flow travel time. Perturbed routing multiplies each
edge weight by an independent Uniform[1, w] factor per call, so w = 1 is the
exact fastest path and larger w wanders further from it; the wander distance
is measured with the symmetrized segment-path distance (SSPD).
"""

from __future__ import annotations

import heapq
import json
import logging
import math
import os
import re
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .demand import MobilityDemand
from .network import RoadNetwork
from .seeding import derive_rng, stable_u64

log = logging.getLogger(__name__)

PROVIDER_FASTEST = "fastest"


class RoutingError(ValueError):
    """Routing failure: unreachable destination or invalid path."""


class ProviderError(RoutingError):
    """External provider failed to deliver a usable path."""


def perturbed_label(w: float) -> str:
    return f"perturbed(w={w:g})"


def external_label(name: str) -> str:
    return f"external({name})"


_PERTURBED_RE = re.compile(r"^perturbed\(w=([0-9.eE+-]+)\)$")
_EXTERNAL_RE = re.compile(r"^external\(([^)]*)\)$")


def parse_provider_label(label: str) -> tuple[str, float | None, str | None]:
    """Split a provider label into (kind, w, name)."""
    if label == PROVIDER_FASTEST:
        return "fastest", None, None
    m = _PERTURBED_RE.match(label)
    if m:
        return "perturbed", float(m.group(1)), None
    m = _EXTERNAL_RE.match(label)
    if m:
        return "external", None, m.group(1)
    raise ValueError(f"unrecognized provider label {label!r}")


@dataclass(frozen=True)
class RoutedPath:
    vehicle_id: str
    edges: tuple[str, ...]
    provider: str


@dataclass(frozen=True)
class RoutedDemand:
    paths: tuple[RoutedPath, ...]
    mix_tenths: int
    provider_name: str

    @property
    def n(self) -> int:
        return len(self.paths)


def validate_path_edges(net: RoadNetwork, edges: Sequence[str], e_o: str, e_d: str) -> None:
    """Check endpoint, adjacency, and no-immediate-repeat invariants."""
    if not edges:
        raise RoutingError("empty path")
    if edges[0] != e_o:
        raise RoutingError(f"path starts at {edges[0]!r}, expected origin edge {e_o!r}")
    if edges[-1] != e_d:
        raise RoutingError(f"path ends at {edges[-1]!r}, expected destination edge {e_d!r}")
    for eid in edges:
        if eid not in net.edges:
            raise RoutingError(f"path references unknown edge {eid!r}")
    for a, b in zip(edges, edges[1:]):
        if a == b:
            raise RoutingError(f"edge {a!r} repeated consecutively")
        if net.edges[a].to_node != net.edges[b].from_node:
            raise RoutingError(
                f"edges {a!r} -> {b!r} not adjacent "
                f"({net.edges[a].to_node!r} != {net.edges[b].from_node!r})"
            )


def path_cost(net: RoadNetwork, edges: Sequence[str]) -> float:
    """Total free-flow travel time of an edge sequence, seconds."""
    tt = net.edge_travel_times
    idx = net.edge_index
    return float(sum(tt[idx[e]] for e in edges))


def _shortest_edge_path(
    net: RoadNetwork, src: int, dst: int, weights: np.ndarray
) -> list[int] | None:
    """Dijkstra over the edge adjacency graph; cost includes both endpoints.

    Ties are broken by edge index in the heap; callers needing the exact
    lexicographic-sequence tie-break use :func:`_lexicographic_fastest`.
    """
    succ = net.edge_successors
    n = len(weights)
    dist = [math.inf] * n
    parent = [-1] * n
    start_cost = float(weights[src])
    dist[src] = start_cost
    heap: list[tuple[float, int]] = [(start_cost, src)]
    while heap:
        d, e = heapq.heappop(heap)
        if d > dist[e]:
            continue
        if e == dst:
            path = [e]
            while path[-1] != src:
                path.append(parent[path[-1]])
            path.reverse()
            return path
        base = d
        for f in succ[e]:
            nd = base + weights[f]
            if nd < dist[f]:
                dist[f] = nd
                parent[f] = e
                heapq.heappush(heap, (nd, f))
    return None


def _lexicographic_fastest(net: RoadNetwork, src: int, dst: int) -> list[int] | None:
    """Fastest edge path; equal-cost ties resolve to the lexicographically
    smallest edge-id sequence. Heap entries carry the id sequence so the tie
    order is exact and global."""
    weights = net.edge_travel_times
    ids = net.edge_ids
    succ = net.edge_successors
    settled: set[int] = set()
    heap: list[tuple[float, tuple[str, ...], int]] = [(float(weights[src]), (ids[src],), src)]
    while heap:
        d, id_seq, e = heapq.heappop(heap)
        if e in settled:
            continue
        settled.add(e)
        if e == dst:
            pos = net.edge_index
            return [pos[i] for i in id_seq]
        for f in succ[e]:
            if f not in settled:
                heapq.heappush(heap, (d + float(weights[f]), id_seq + (ids[f],), f))
    return None


def _require_edge(net: RoadNetwork, eid: str) -> int:
    idx = net.edge_index.get(eid)
    if idx is None:
        raise RoutingError(f"unknown edge {eid!r}")
    return idx


def fastest_path(net: RoadNetwork, e_o: str, e_d: str, vehicle_id: str = "") -> RoutedPath:
    """Minimum free-flow-time path from e_o to e_d, both edges included."""
    src, dst = _require_edge(net, e_o), _require_edge(net, e_d)
    found = _lexicographic_fastest(net, src, dst)
    if found is None:
        raise RoutingError(f"destination edge {e_d!r} unreachable from {e_o!r}")
    ids = net.edge_ids
    return RoutedPath(vehicle_id, tuple(ids[i] for i in found), PROVIDER_FASTEST)


def perturbed_fastest_path(
    net: RoadNetwork,
    e_o: str,
    e_d: str,
    w: float,
    rng: np.random.Generator,
    vehicle_id: str = "",
) -> RoutedPath:
    """Fastest path under edge weights scaled by fresh Uniform[1, w] draws.

    w = 1 performs no draws and is bit-identical to :func:`fastest_path`.
    """
    if w < 1:
        raise ValueError(f"perturbation strength w must be >= 1, got {w}")
    if w == 1:
        p = fastest_path(net, e_o, e_d, vehicle_id)
        return RoutedPath(vehicle_id, p.edges, perturbed_label(1.0))
    src, dst = _require_edge(net, e_o), _require_edge(net, e_d)
    noise = rng.uniform(1.0, w, size=len(net.edge_ids))
    weights = net.edge_travel_times * noise
    found = _shortest_edge_path(net, src, dst, weights)
    if found is None:
        raise RoutingError(f"destination edge {e_d!r} unreachable from {e_o!r}")
    ids = net.edge_ids
    return RoutedPath(vehicle_id, tuple(ids[i] for i in found), perturbed_label(w))


# ---------------------------------------------------------------------------
# External navigation providers
# ---------------------------------------------------------------------------

class NavigationProvider(Protocol):
    """Anything that can propose an edge sequence for an origin/destination
    edge pair. Proposals are validated (never repaired) by external_route."""

    name: str

    def plan(self, net: RoadNetwork, e_o: str, e_d: str) -> Sequence[str]: ...

    def provider_label(self) -> str: ...


class FastestPathProvider:
    """In-process navigation service suggesting the exact fastest path."""

    name = "fastest"

    def __init__(self) -> None:
        self._cache: dict[tuple[int, str, str], tuple[str, ...]] = {}

    def plan(self, net: RoadNetwork, e_o: str, e_d: str) -> Sequence[str]:
        key = (id(net), e_o, e_d)
        hit = self._cache.get(key)
        if hit is None:
            hit = fastest_path(net, e_o, e_d).edges
            self._cache[key] = hit
        return hit

    def provider_label(self) -> str:
        return PROVIDER_FASTEST


class FixtureProvider:
    """Replays recorded routes from ``<dir>/<e_o>__<e_d>.json`` files.

    Each fixture holds an edge-id array (bare, or under an ``edges`` key).
    Missing fixtures either raise or fall back to the fastest path,
    depending on ``fallback``.
    """

    def __init__(self, directory: str, fallback: str = "error", name: str = "fixture"):
        if fallback not in ("error", "fastest"):
            raise ValueError(f"fallback must be 'error' or 'fastest', got {fallback!r}")
        self.directory = directory
        self.fallback = fallback
        self.name = name
        self._fastest = FastestPathProvider()

    def fixture_path(self, e_o: str, e_d: str) -> str:
        return os.path.join(self.directory, f"{e_o}__{e_d}.json")

    def plan(self, net: RoadNetwork, e_o: str, e_d: str) -> Sequence[str]:
        path = self.fixture_path(e_o, e_d)
        if not os.path.exists(path):
            if self.fallback == "fastest":
                return self._fastest.plan(net, e_o, e_d)
            raise ProviderError(f"no fixture for ({e_o}, {e_d}) at {path}")
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        if isinstance(doc, dict):
            doc = doc.get("edges")
        if not isinstance(doc, list) or not all(isinstance(x, str) for x in doc):
            raise ProviderError(f"{path}: fixture must be a JSON array of edge ids")
        return doc

    def provider_label(self) -> str:
        return external_label(self.name)


def write_fixture(directory: str, e_o: str, e_d: str, edges: Sequence[str]) -> str:
    """Record a route fixture; returns the file path."""
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, f"{e_o}__{e_d}.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(list(edges), fh)
    return path


class HttpProvider:
    """Generic HTTP navigation client.

    Sends ``GET {base_url}/route`` with the origin edge's source-node and the
    destination edge's target-node coordinates; expects a JSON body with an
    ``edges`` array of edge ids.
    """

    def __init__(self, base_url: str, timeout: float = 10.0, name: str = "http"):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.name = name
        self._client = None

    def _get_client(self):
        if self._client is None:
            import httpx

            self._client = httpx.Client(timeout=self.timeout)
        return self._client

    def plan(self, net: RoadNetwork, e_o: str, e_d: str) -> Sequence[str]:
        import httpx

        origin = net.nodes[net.edges[e_o].from_node]
        dest = net.nodes[net.edges[e_d].to_node]
        params = {
            "from_x": origin.x,
            "from_y": origin.y,
            "to_x": dest.x,
            "to_y": dest.y,
            "from_edge": e_o,
            "to_edge": e_d,
        }
        try:
            resp = self._get_client().get(f"{self.base_url}/route", params=params)
        except httpx.HTTPError as exc:
            raise ProviderError(f"route request for ({e_o}, {e_d}) failed: {exc}") from exc
        if resp.status_code != 200:
            raise ProviderError(
                f"route request for ({e_o}, {e_d}) returned HTTP {resp.status_code}"
            )
        doc = resp.json()
        edges = doc.get("edges") if isinstance(doc, dict) else None
        if not isinstance(edges, list) or not all(isinstance(x, str) for x in edges):
            raise ProviderError("provider response lacks an 'edges' array of edge ids")
        return edges

    def provider_label(self) -> str:
        return external_label(self.name)


def external_route(
    net: RoadNetwork,
    provider: NavigationProvider,
    e_o: str,
    e_d: str,
    vehicle_id: str = "",
) -> RoutedPath:
    """Route via an external provider; proposals failing validation are
    rejected, never repaired."""
    _require_edge(net, e_o)
    _require_edge(net, e_d)
    edges = tuple(provider.plan(net, e_o, e_d))
    validate_path_edges(net, edges, e_o, e_d)
    label = provider.provider_label()
    if isinstance(provider, FixtureProvider) and provider.fallback == "fastest":
        # a fallback answer is an honest fastest path, not the provider's
        if not os.path.exists(provider.fixture_path(e_o, e_d)):
            label = PROVIDER_FASTEST
    return RoutedPath(vehicle_id, edges, label)


# ---------------------------------------------------------------------------
# Demand routing with provider mixing
# ---------------------------------------------------------------------------

def mixed_count(n: int, mix_tenths: int) -> int:
    """Vehicles routed by the navigation provider: round(n * i / 10),
    half away from zero."""
    return int(math.floor(n * mix_tenths / 10 + 0.5))


def route_demand(
    net: RoadNetwork,
    demand: MobilityDemand,
    mix_tenths: int,
    provider: NavigationProvider,
    w: float,
    seed: int,
) -> RoutedDemand:
    """Route every trip: a uniformly random subset of round(N*i/10) vehicles
    follows ``provider``; the rest get perturbed fastest paths with strength
    ``w``. Per-vehicle noise streams derive from (seed, vehicle_id), so the
    result does not depend on iteration order."""
    if demand.n == 0:
        raise ValueError("empty demand")
    if not 0 <= mix_tenths <= 10:
        raise ValueError(f"mix_tenths must be in 0..10, got {mix_tenths}")
    k = mixed_count(demand.n, mix_tenths)
    selector = derive_rng(seed, "mix-selection", mix_tenths)
    chosen = set(selector.choice(demand.n, size=k, replace=False)) if k else set()
    paths = []
    for i, trip in enumerate(demand.trips):
        try:
            if i in chosen:
                rp = external_route(net, provider, trip.origin_edge, trip.dest_edge,
                                    vehicle_id=trip.vehicle_id)
            else:
                vrng = derive_rng(seed, "route", trip.vehicle_id)
                rp = perturbed_fastest_path(net, trip.origin_edge, trip.dest_edge, w, vrng,
                                            vehicle_id=trip.vehicle_id)
        except RoutingError as exc:
            raise RoutingError(f"vehicle {trip.vehicle_id}: {exc}") from exc
        paths.append(rp)
    return RoutedDemand(tuple(paths), mix_tenths, provider.name)


def save_routed_demand(d: RoutedDemand, path: str) -> None:
    doc = {
        "mix_tenths": d.mix_tenths,
        "provider_name": d.provider_name,
        "paths": [
            {"vehicle_id": p.vehicle_id, "provider": p.provider, "edges": list(p.edges)}
            for p in d.paths
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_routed_demand(path: str, net: RoadNetwork) -> RoutedDemand:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    paths = []
    for rec in doc["paths"]:
        edges = tuple(rec["edges"])
        validate_path_edges(net, edges, edges[0], edges[-1])
        parse_provider_label(rec["provider"])
        paths.append(RoutedPath(rec["vehicle_id"], edges, rec["provider"]))
    return RoutedDemand(tuple(paths), int(doc["mix_tenths"]), str(doc["provider_name"]))


# ---------------------------------------------------------------------------
# Path similarity (SSPD)
# ---------------------------------------------------------------------------

def _path_polyline(net: RoadNetwork, p: RoutedPath) -> np.ndarray:
    """Vertices: each edge's source node plus the final edge's target node."""
    src_xy, tgt_xy = net.edge_endpoints_xy
    idx = net.edge_index
    rows = [src_xy[idx[e]] for e in p.edges]
    rows.append(tgt_xy[idx[p.edges[-1]]])
    return np.asarray(rows, dtype=float)


def _points_to_polyline(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Euclidean distance from each point to the polyline (min over segments)."""
    a = poly[:-1]
    b = poly[1:]
    ab = b - a
    ab2 = (ab * ab).sum(axis=1)
    ab2 = np.where(ab2 == 0.0, 1.0, ab2)  # degenerate segments act as points
    ap = points[:, None, :] - a[None, :, :]
    t = np.clip((ap * ab[None, :, :]).sum(axis=2) / ab2[None, :], 0.0, 1.0)
    proj = a[None, :, :] + t[:, :, None] * ab[None, :, :]
    d = np.linalg.norm(points[:, None, :] - proj, axis=2)
    return d.min(axis=1)


def sspd(a: RoutedPath, b: RoutedPath, net: RoadNetwork) -> float:
    """Symmetrized segment-path distance between two paths, meters.

    SPD(a, b) is the mean over a's sample points (edge source nodes plus the
    final target node) of the point-to-polyline distance to b; SSPD averages
    the two directions.
    """
    pa = _path_polyline(net, a)
    pb = _path_polyline(net, b)
    spd_ab = float(_points_to_polyline(pa, pb).mean())
    spd_ba = float(_points_to_polyline(pb, pa).mean())
    return 0.5 * (spd_ab + spd_ba)


def perturbation_curve(
    net: RoadNetwork,
    n_pairs: int,
    w_values: Sequence[float],
    seed: int,
) -> list[tuple[float, float]]:
    """Mean SSPD between w-perturbed paths and the exact fastest path over the
    same random origin-destination pairs, one row per w."""
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    ids = net.edge_ids
    pair_rng = derive_rng(seed, "sspd-pairs")
    pairs = []
    while len(pairs) < n_pairs:
        i, j = pair_rng.integers(len(ids)), pair_rng.integers(len(ids))
        if i != j:
            pairs.append((ids[i], ids[j]))
    baselines = [fastest_path(net, e_o, e_d) for e_o, e_d in pairs]
    rows = []
    for w in w_values:
        total = 0.0
        for k, (e_o, e_d) in enumerate(pairs):
            prng = derive_rng(seed, "sspd-route", w, k)
            p = perturbed_fastest_path(net, e_o, e_d, w, prng)
            total += sspd(p, baselines[k], net)
        rows.append((float(w), total / n_pairs))
    return rows
