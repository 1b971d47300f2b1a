"""Directed road networks: loading, validation, SCC extraction, grid synthesis.

A network is a directed graph of junction nodes and road edges carrying the
attributes the router and the simulator need (length, speed limit, lanes,
traffic-light flags). Networks are immutable after construction and always
fully valid: construction either succeeds with every invariant holding or
raises listing every violation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping

import numpy as np

ROAD_TYPES = ("motorway", "primary", "secondary", "residential", "other")

_NODE_FIELDS = {"id", "x", "y", "traffic_light"}
_EDGE_FIELDS = {"id", "from", "to", "length", "speed_limit", "lanes", "road_type"}


class NetworkError(ValueError):
    """Malformed or invariant-violating network input."""


@dataclass(frozen=True)
class Node:
    id: str
    x: float
    y: float
    has_traffic_light: bool = False


@dataclass(frozen=True)
class Edge:
    id: str
    from_node: str
    to_node: str
    length: float
    speed_limit: float
    lanes: int = 1
    road_type: str = "other"
    self_loop: bool = False


class RoadNetwork:
    """Validated directed road network.

    ``nodes`` and ``edges`` are keyed by id in canonical (sorted) order;
    ``out_edges`` maps each node id to its outgoing edge ids, sorted.
    Instances are treated as immutable once built.
    """

    nodes: Mapping[str, Node]
    edges: Mapping[str, Edge]
    out_edges: Mapping[str, tuple[str, ...]]

    def __init__(self, nodes: Iterable[Node], edges: Iterable[Edge]):
        nodes = list(nodes)
        edges = list(edges)
        node_map = {n.id: n for n in sorted(nodes, key=lambda n: n.id)}
        edge_map = {e.id: e for e in sorted(edges, key=lambda e: e.id)}
        errors = _validate(node_map, edge_map, nodes, edges)
        if errors:
            raise NetworkError("invalid network:\n  " + "\n  ".join(errors))
        adjacency: dict[str, list[str]] = {nid: [] for nid in node_map}
        for e in edge_map.values():
            adjacency[e.from_node].append(e.id)
        self.nodes = node_map
        self.edges = edge_map
        self.out_edges = {nid: tuple(sorted(eids)) for nid, eids in adjacency.items()}

    def __repr__(self) -> str:
        return f"<RoadNetwork |V|={len(self.nodes)} |E|={len(self.edges)}>"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RoadNetwork):
            return NotImplemented
        return self.nodes == other.nodes and self.edges == other.edges

    __hash__ = None  # mutable-style equality; not hashable

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        """(x_min, y_min, x_max, y_max) over node coordinates."""
        xs = [n.x for n in self.nodes.values()]
        ys = [n.y for n in self.nodes.values()]
        return min(xs), min(ys), max(xs), max(ys)

    # Cached index structures for the router and simulator. The network is
    # frozen, so these are computed once per instance.

    @cached_property
    def edge_ids(self) -> tuple[str, ...]:
        return tuple(self.edges.keys())

    @cached_property
    def edge_index(self) -> dict[str, int]:
        return {eid: i for i, eid in enumerate(self.edge_ids)}

    @cached_property
    def edge_successors(self) -> tuple[tuple[int, ...], ...]:
        """For each edge index, the indices of edges leaving its end node."""
        idx = self.edge_index
        return tuple(
            tuple(idx[eid] for eid in self.out_edges[e.to_node]) for e in self.edges.values()
        )

    @cached_property
    def edge_travel_times(self) -> np.ndarray:
        return np.array([free_flow_time(e) for e in self.edges.values()])

    @cached_property
    def edge_endpoints_xy(self) -> tuple[np.ndarray, np.ndarray]:
        """(source_xy, target_xy) arrays, one row per edge in index order."""
        src = np.array([(self.nodes[e.from_node].x, self.nodes[e.from_node].y) for e in self.edges.values()])
        tgt = np.array([(self.nodes[e.to_node].x, self.nodes[e.to_node].y) for e in self.edges.values()])
        return src, tgt


def _validate(
    node_map: dict[str, Node],
    edge_map: dict[str, Edge],
    nodes: list[Node],
    edges: list[Edge],
) -> list[str]:
    errors = []
    if len(node_map) != len(nodes):
        seen: set[str] = set()
        for n in nodes:
            if n.id in seen:
                errors.append(f"duplicate node id {n.id!r}")
            seen.add(n.id)
    if len(edge_map) != len(edges):
        seen = set()
        for e in edges:
            if e.id in seen:
                errors.append(f"duplicate edge id {e.id!r}")
            seen.add(e.id)
    for n in nodes:
        if not (math.isfinite(n.x) and math.isfinite(n.y)):
            errors.append(f"node {n.id!r}: non-finite coordinates ({n.x}, {n.y})")
    for e in edges:
        for endpoint, label in ((e.from_node, "from"), (e.to_node, "to")):
            if endpoint not in node_map:
                errors.append(f"edge {e.id!r}: {label} node {endpoint!r} does not exist")
        if e.from_node == e.to_node and not e.self_loop:
            errors.append(f"edge {e.id!r}: from == to ({e.from_node!r}) without self-loop flag")
        if not (e.length > 0 and math.isfinite(e.length)):
            errors.append(f"edge {e.id!r}: length must be > 0, got {e.length}")
        if not (e.speed_limit > 0 and math.isfinite(e.speed_limit)):
            errors.append(f"edge {e.id!r}: speed_limit must be > 0, got {e.speed_limit}")
        if e.lanes < 1:
            errors.append(f"edge {e.id!r}: lanes must be >= 1, got {e.lanes}")
        if e.road_type not in ROAD_TYPES:
            errors.append(f"edge {e.id!r}: unknown road_type {e.road_type!r}")
    return errors


def free_flow_time(e: Edge) -> float:
    """Unimpeded traversal time of an edge, seconds."""
    return e.length / e.speed_limit


def _coerce_id(value: object, where: str) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, int):
        return str(value)
    raise NetworkError(f"{where}: id must be a string, got {type(value).__name__}")


def _require_fields(obj: dict, allowed: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise NetworkError(f"{where}: unknown fields {sorted(unknown)}")
    missing = allowed - set(obj)
    if missing:
        raise NetworkError(f"{where}: missing fields {sorted(missing)}")


def network_from_dict(doc: dict) -> RoadNetwork:
    """Build a network from the JSON document form. Unknown fields rejected."""
    if not isinstance(doc, dict):
        raise NetworkError("top level must be an object")
    _require_fields(doc, {"nodes", "edges"}, "top level")
    nodes = []
    for i, rec in enumerate(doc["nodes"]):
        where = f"nodes[{i}]"
        if not isinstance(rec, dict):
            raise NetworkError(f"{where}: must be an object")
        _require_fields(rec, _NODE_FIELDS, where)
        nodes.append(
            Node(
                id=_coerce_id(rec["id"], where),
                x=float(rec["x"]),
                y=float(rec["y"]),
                has_traffic_light=bool(rec["traffic_light"]),
            )
        )
    edges = []
    for i, rec in enumerate(doc["edges"]):
        where = f"edges[{i}]"
        if not isinstance(rec, dict):
            raise NetworkError(f"{where}: must be an object")
        _require_fields(rec, _EDGE_FIELDS, where)
        edges.append(
            Edge(
                id=_coerce_id(rec["id"], where),
                from_node=_coerce_id(rec["from"], where),
                to_node=_coerce_id(rec["to"], where),
                length=float(rec["length"]),
                speed_limit=float(rec["speed_limit"]),
                lanes=int(rec["lanes"]),
                road_type=str(rec["road_type"]),
            )
        )
    return RoadNetwork(nodes, edges)


def network_to_dict(net: RoadNetwork) -> dict:
    return {
        "nodes": [
            {"id": n.id, "x": n.x, "y": n.y, "traffic_light": n.has_traffic_light}
            for n in net.nodes.values()
        ],
        "edges": [
            {
                "id": e.id,
                "from": e.from_node,
                "to": e.to_node,
                "length": e.length,
                "speed_limit": e.speed_limit,
                "lanes": e.lanes,
                "road_type": e.road_type,
            }
            for e in net.edges.values()
        ],
    }


def load_network(path: str) -> RoadNetwork:
    """Load and validate a network JSON file."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise NetworkError(f"{path}: line {exc.lineno} col {exc.colno}: {exc.msg}") from exc
    try:
        return network_from_dict(doc)
    except NetworkError as exc:
        raise NetworkError(f"{path}: {exc}") from exc


def store_network(net: RoadNetwork, path: str) -> None:
    """Write the canonical JSON form (stable ordering, round-trips exactly)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(network_to_json(net))


def network_to_json(net: RoadNetwork) -> str:
    return json.dumps(network_to_dict(net), indent=2) + "\n"


def largest_scc(net: RoadNetwork) -> RoadNetwork:
    """Subgraph induced by the largest strongly connected component.

    Size ties break toward the component containing the lexicographically
    smallest node id. Edges with either endpoint outside the component are
    dropped.
    """
    if not net.nodes:
        raise NetworkError("empty network has no strongly connected component")
    comp = _scc_components(net)
    max_size = max(len(c) for c in comp)
    candidates = [c for c in comp if len(c) == max_size]
    best = min(candidates, key=min)
    keep = set(best)
    nodes = [n for n in net.nodes.values() if n.id in keep]
    edges = [e for e in net.edges.values() if e.from_node in keep and e.to_node in keep]
    return RoadNetwork(nodes, edges)


def _scc_components(net: RoadNetwork) -> list[list[str]]:
    """Iterative Tarjan over node ids."""
    index: dict[str, int] = {}
    lowlink: dict[str, int] = {}
    on_stack: set[str] = set()
    stack: list[str] = []
    components: list[list[str]] = []
    counter = 0
    succ = {
        nid: [net.edges[eid].to_node for eid in out] for nid, out in net.out_edges.items()
    }
    for root in net.nodes:
        if root in index:
            continue
        work = [(root, iter(succ[root]))]
        index[root] = lowlink[root] = counter
        counter += 1
        stack.append(root)
        on_stack.add(root)
        while work:
            v, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = lowlink[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(succ[w])))
                    advanced = True
                    break
                if w in on_stack:
                    lowlink[v] = min(lowlink[v], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                lowlink[parent] = min(lowlink[parent], lowlink[v])
            if lowlink[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                components.append(comp)
    return components


def synth_grid(
    rows: int,
    cols: int,
    block_len: float = 100.0,
    speed_limit: float = 13.9,
    light_period: int | None = None,
) -> RoadNetwork:
    """Manhattan grid with two directed edges per block.

    Node ``r{row}c{col}`` sits at (col*block_len, row*block_len). When
    ``light_period = k``, every k-th intersection (row-major order) gets a
    traffic light. The result is strongly connected for rows, cols >= 2.
    """
    if rows < 2 or cols < 2:
        raise ValueError(f"grid needs rows, cols >= 2, got {rows}x{cols}")
    if block_len <= 0 or speed_limit <= 0:
        raise ValueError("block_len and speed_limit must be positive")
    nodes = []
    for r in range(rows):
        for c in range(cols):
            lit = light_period is not None and (r * cols + c) % light_period == 0
            nodes.append(Node(id=f"r{r}c{c}", x=c * block_len, y=r * block_len, has_traffic_light=lit))
    edges = []

    def _add_pair(a: str, b: str) -> None:
        edges.append(Edge(id=f"{a}-{b}", from_node=a, to_node=b, length=block_len,
                          speed_limit=speed_limit, lanes=1, road_type="residential"))
        edges.append(Edge(id=f"{b}-{a}", from_node=b, to_node=a, length=block_len,
                          speed_limit=speed_limit, lanes=1, road_type="residential"))

    for r in range(rows):
        for c in range(cols):
            here = f"r{r}c{c}"
            if c + 1 < cols:
                _add_pair(here, f"r{r}c{c + 1}")
            if r + 1 < rows:
                _add_pair(here, f"r{r + 1}c{c}")
    return RoadNetwork(nodes, edges)
