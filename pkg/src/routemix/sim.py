"""Time-stepped microscopic traffic simulation of a routed demand.

One lane per edge, Krauss-style safe-speed car following with driver
imperfection, fixed-cycle two-phase traffic lights, capacity-gated edge
entry, and gridlock teleports. Deterministic: identical (network, demand,
schedule, config, seed) reproduce the trajectory log byte for byte.
Vehicles that finish their last edge leave the network; the run continues
past the insertion horizon until everyone arrives or a hard drain cap hits.
"""

from __future__ import annotations

import csv
import logging
import math
from array import array
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .demand import TileGrid, feasible_od_pairs
from .network import RoadNetwork
from .routing import RoutedDemand, RoutedPath, perturbed_fastest_path
from .seeding import derive_pyrandom, derive_rng

log = logging.getLogger(__name__)


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    """Simulation parameters, SI units throughout."""

    dt: float = 1.0                  # step length, s
    horizon: float = 3600.0          # departure window, s; drain continues after
    accel_max: float = 2.6           # m/s^2
    decel_max: float = 4.5           # m/s^2
    tau: float = 1.0                 # driver reaction time, s
    sigma: float = 0.5               # driver imperfection in [0, 1]
    vehicle_length: float = 5.0      # m
    min_gap: float = 2.5             # m, bumper-to-bumper floor
    teleport_threshold: float = 300.0  # s of standstill before a teleport
    light_green: float = 45.0        # s, first phase green
    light_red: float = 45.0          # s, first phase red (= second phase green)
    drain_factor: float = 3.0        # hard cap at drain_factor * horizon

    def __post_init__(self):
        positive = {
            "dt": self.dt, "horizon": self.horizon, "accel_max": self.accel_max,
            "decel_max": self.decel_max, "tau": self.tau,
            "vehicle_length": self.vehicle_length, "min_gap": self.min_gap,
            "teleport_threshold": self.teleport_threshold,
            "light_green": self.light_green, "light_red": self.light_red,
            "drain_factor": self.drain_factor,
        }
        bad = [k for k, v in positive.items() if not v > 0]
        if bad:
            raise ValueError(f"parameters must be positive: {bad}")
        if not 0.0 <= self.sigma <= 1.0:
            raise ValueError(f"sigma must be in [0, 1], got {self.sigma}")


def edge_capacity(length: float, lanes: int, cfg: SimConfig) -> int:
    """Vehicles an edge can hold: lanes * length / (vehicle_length + min_gap)."""
    return max(1, math.ceil(lanes * length / (cfg.vehicle_length + cfg.min_gap)))


def assign_departures(
    d: RoutedDemand, horizon: float, rng: np.random.Generator
) -> dict[str, float]:
    """One i.i.d. Uniform[0, horizon) departure per path."""
    if horizon <= 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    times = rng.uniform(0.0, horizon, size=d.n)
    return {p.vehicle_id: float(t) for p, t in zip(d.paths, times)}


def car_following_speed(
    v: float,
    v_leader: float | None,
    gap: float | None,
    v_max: float,
    cfg: SimConfig,
    rng=None,
) -> float:
    """Krauss-style safe speed for the next step.

    ``gap`` is the effective headroom to the leader (bumper gap already net
    of any standstill margin); ``None`` or infinity means free driving.
    The imperfection term subtracts sigma * a * dt * eta with eta uniform
    from the vehicle's own generator.
    """
    v_des = min(v + cfg.accel_max * cfg.dt, v_max)
    if gap is not None and math.isfinite(gap):
        vl = v_leader or 0.0
        v_safe = vl + (gap - vl * cfg.tau) / (cfg.tau + (v + vl) / (2.0 * cfg.decel_max))
        v_des = min(v_des, v_safe)
    if cfg.sigma > 0.0 and rng is not None:
        v_des -= cfg.sigma * cfg.accel_max * cfg.dt * rng.random()
    return max(0.0, v_des)


# ---------------------------------------------------------------------------
# Extra (background) vehicles for calibration runs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExtraVehiclesConfig:
    """Background-vehicle spec: ``none``, ``X_start``, or ``X_start+Y_end``.

    X_start injects floor(N * X / 100) vehicles at t = 0; Y_end injects
    floor(N * Y / 100) right after the last scheduled departure.
    """

    start_pct: float = 0.0
    end_pct: float = 0.0

    @classmethod
    def parse(cls, spec: str) -> "ExtraVehiclesConfig":
        spec = spec.strip()
        if spec == "none":
            return cls()
        start = end = 0.0
        for part in spec.split("+"):
            try:
                value, anchor = part.rsplit("_", 1)
                pct = float(value)
            except ValueError as exc:
                raise ValueError(f"bad extra-vehicles spec {spec!r}") from exc
            if anchor == "start":
                start = pct
            elif anchor == "end":
                end = pct
            else:
                raise ValueError(f"bad extra-vehicles spec {spec!r}: anchor {anchor!r}")
        return cls(start, end)

    @property
    def label(self) -> str:
        parts = []
        if self.start_pct:
            parts.append(f"{self.start_pct:g}_start")
        if self.end_pct:
            parts.append(f"{self.end_pct:g}_end")
        return "+".join(parts) if parts else "none"

    def counts(self, n: int) -> tuple[int, int]:
        return int(n * self.start_pct // 100), int(n * self.end_pct // 100)


@dataclass(frozen=True)
class ExtraTraffic:
    """Materialized background vehicles: routed paths plus insertion times."""

    paths: tuple[RoutedPath, ...]
    departures: dict[str, float] = field(compare=False)


def build_extra_traffic(
    net: RoadNetwork,
    grid: TileGrid,
    n_base: int,
    extra: ExtraVehiclesConfig,
    w: float,
    last_departure: float,
    seed: int,
) -> ExtraTraffic | None:
    """Route background vehicles over uniformly sampled feasible tile pairs
    with perturbed fastest paths; start extras at t = 0, end extras just
    after the last scheduled departure."""
    n_start, n_end = extra.counts(n_base)
    if n_start + n_end == 0:
        return None
    from .demand import ODMatrix, sample_demand

    pairs, _ = feasible_od_pairs(
        ODMatrix({(t, t2): 1 for t in _all_tiles(grid) for t2 in _all_tiles(grid)}), net, grid
    )
    if not pairs:
        raise SimulationError("no feasible tile pairs to draw extra vehicles from")
    uniform_od = ODMatrix({p: 1 for p in pairs})
    demand = sample_demand(uniform_od, net, grid, n_start + n_end,
                           derive_rng(seed, "extra-demand"))
    paths = []
    departures = {}
    for k, trip in enumerate(demand.trips):
        vid = f"x{k:05d}"
        vrng = derive_rng(seed, "extra-route", vid)
        p = perturbed_fastest_path(net, trip.origin_edge, trip.dest_edge, w, vrng, vehicle_id=vid)
        paths.append(p)
        departures[vid] = 0.0 if k < n_start else last_departure + 1e-9
    return ExtraTraffic(tuple(paths), departures)


def _all_tiles(grid: TileGrid):
    return [(r, c) for r in range(grid.n_rows) for c in range(grid.n_cols)]


# ---------------------------------------------------------------------------
# Trajectory log
# ---------------------------------------------------------------------------

class TrajectoryLog:
    """Columnar per-step kinematics plus per-vehicle edge-entry events."""

    def __init__(self, edge_ids: tuple[str, ...], dt: float):
        self.edge_ids = edge_ids
        self.dt = dt
        self.vehicle_ids: list[str] = []
        self.extra_flags: list[bool] = []
        self._vehicle = array("i")
        self._time = array("d")
        self._edge = array("i")
        self._pos = array("f")
        self._speed = array("f")
        self._accel = array("f")
        self.entries: dict[int, list[tuple[int, float]]] = {}
        self.departures: dict[str, float] = {}
        self.arrivals: dict[str, float] = {}

    def register_vehicle(self, vid: str, is_extra: bool) -> int:
        self.vehicle_ids.append(vid)
        self.extra_flags.append(is_extra)
        return len(self.vehicle_ids) - 1

    def append(self, veh: int, t: float, edge: int, pos: float, speed: float, accel: float):
        self._vehicle.append(veh)
        self._time.append(t)
        self._edge.append(edge)
        self._pos.append(pos)
        self._speed.append(speed)
        self._accel.append(accel)

    def record_entry(self, veh: int, edge: int, t: float) -> None:
        self.entries.setdefault(veh, []).append((edge, t))

    def __len__(self) -> int:
        return len(self._time)

    def columns(self) -> dict[str, np.ndarray]:
        return {
            "vehicle": np.asarray(self._vehicle),
            "time": np.asarray(self._time),
            "edge": np.asarray(self._edge),
            "pos": np.asarray(self._pos),
            "speed": np.asarray(self._speed),
            "accel": np.asarray(self._accel),
        }

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["vehicle_id", "time", "edge_id", "pos", "speed", "accel"])
            for i in range(len(self)):
                w.writerow([
                    self.vehicle_ids[self._vehicle[i]],
                    repr(self._time[i]),
                    self.edge_ids[self._edge[i]],
                    repr(float(self._pos[i])),
                    repr(float(self._speed[i])),
                    repr(float(self._accel[i])),
                ])

    @classmethod
    def from_csv(cls, path: str, net: RoadNetwork, dt: float = 1.0) -> "TrajectoryLog":
        """Rebuild the kinematic columns from CSV. Entry events, departures,
        and arrivals are not serialized; reloaded logs support emission
        aggregation but not travel-time extraction."""
        out = cls(net.edge_ids, dt)
        veh_index: dict[str, int] = {}
        eidx = net.edge_index
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["vehicle_id", "time", "edge_id", "pos", "speed", "accel"]:
                raise ValueError(f"{path}: unexpected header {header}")
            for row in reader:
                if not row:
                    continue
                vid, t, eid, pos, speed, accel = row
                if eid not in eidx:
                    raise ValueError(f"{path}: unknown edge id {eid!r}")
                if vid not in veh_index:
                    veh_index[vid] = out.register_vehicle(vid, vid.startswith("x"))
                out.append(veh_index[vid], float(t), eidx[eid], float(pos),
                           float(speed), float(accel))
        return out


def travel_times(log: TrajectoryLog, include_extras: bool = False) -> dict[str, float]:
    """Arrival minus scheduled departure per arrived vehicle, seconds."""
    vid_extra = dict(zip(log.vehicle_ids, log.extra_flags))
    out = {}
    for vid, arrival in log.arrivals.items():
        if not include_extras and vid_extra.get(vid, False):
            continue
        out[vid] = arrival - log.departures[vid]
    return out


@dataclass
class SimStats:
    departed: int = 0
    arrived: int = 0
    teleports: int = 0
    never_inserted: int = 0
    en_route_at_end: int = 0
    capped: bool = False
    travel_times: dict[str, float] = field(default_factory=dict)

    @property
    def mean_travel_time(self) -> float:
        if not self.travel_times:
            return math.nan
        return sum(self.travel_times.values()) / len(self.travel_times)

    def to_dict(self) -> dict:
        return {
            "teleports": self.teleports,
            "arrived": self.arrived,
            "mean_travel_time": self.mean_travel_time,
        }


# ---------------------------------------------------------------------------
# The stepper
# ---------------------------------------------------------------------------

class _Vehicle:
    __slots__ = ("vid", "idx", "path", "leg", "pos", "speed", "rng", "stuck",
                 "is_extra", "depart", "edge", "stamp")

    def __init__(self, vid, idx, path, depart, rng, is_extra):
        self.vid = vid
        self.idx = idx
        self.path = path          # list of edge indices
        self.leg = 0
        self.edge = path[0]
        self.pos = 0.0
        self.speed = 0.0
        self.rng = rng
        self.stuck = 0.0
        self.is_extra = is_extra
        self.depart = depart
        self.stamp = -1.0         # last step this vehicle was updated


def simulate(
    net: RoadNetwork,
    demand: RoutedDemand,
    sched: Mapping[str, float],
    cfg: SimConfig,
    extra: ExtraTraffic | None = None,
    seed: int = 0,
) -> tuple[TrajectoryLog, SimStats]:
    """Run the demand through the network; returns per-step kinematics and
    aggregate counters.

    Per step and per vehicle the speed follows the Krauss safe-speed rule; a
    vehicle crosses into its next edge only when that edge has spare capacity
    and entry room and, at signalized junctions, only during its approach's
    green phase. A vehicle stopped for ``teleport_threshold`` seconds jumps
    to the next edge on its route with room (completing the trip immediately
    when no such edge exists).
    """
    eidx = net.edge_index
    edges = list(net.edges.values())
    n_edges = len(edges)
    lengths = [e.length for e in edges]
    vmaxs = [e.speed_limit for e in edges]
    caps = [edge_capacity(e.length, e.lanes, cfg) for e in edges]
    src_xy, tgt_xy = net.edge_endpoints_xy
    light_end = [net.nodes[e.to_node].has_traffic_light for e in edges]
    # two-phase split by approach axis: east-west approaches share phase 0
    phase = [
        0 if abs(tgt_xy[i][0] - src_xy[i][0]) >= abs(tgt_xy[i][1] - src_xy[i][1]) else 1
        for i in range(n_edges)
    ]

    log_ = TrajectoryLog(net.edge_ids, cfg.dt)
    stats = SimStats()

    all_paths = list(demand.paths) + (list(extra.paths) if extra else [])
    departures = dict(sched)
    if extra:
        departures.update(extra.departures)
    missing = [p.vehicle_id for p in all_paths if p.vehicle_id not in departures]
    if missing:
        raise SimulationError(f"schedule missing departures for {missing[:5]}")

    vehicles: list[_Vehicle] = []
    n_demand = len(demand.paths)
    for k, p in enumerate(all_paths):
        path_idx = []
        for eid in p.edges:
            i = eidx.get(eid)
            if i is None:
                raise SimulationError(f"vehicle {p.vehicle_id}: path references unknown edge {eid!r}")
            path_idx.append(i)
        is_extra = k >= n_demand
        vrng = derive_pyrandom(seed, "dawdle", p.vehicle_id) if cfg.sigma > 0 else None
        idx = log_.register_vehicle(p.vehicle_id, is_extra)
        v = _Vehicle(p.vehicle_id, idx, path_idx, departures[p.vehicle_id], vrng, is_extra)
        vehicles.append(v)
        log_.departures[p.vehicle_id] = v.depart

    pending = sorted(vehicles, key=lambda v: (v.depart, v.vid))
    pending.reverse()  # pop from the end in depart order
    waiting: deque[_Vehicle] = deque()
    queues: list[list[_Vehicle]] = [[] for _ in range(n_edges)]

    dt = cfg.dt
    veh_len = cfg.vehicle_length
    min_gap = cfg.min_gap
    a_max = cfg.accel_max
    b_max = cfg.decel_max
    tau = cfg.tau
    sigma = cfg.sigma
    dawdle = sigma * a_max * dt
    cycle = cfg.light_green + cfg.light_red
    hard_cap = cfg.drain_factor * cfg.horizon
    active = 0
    t = 0.0

    def _room(edge: int) -> bool:
        q = queues[edge]
        if len(q) >= caps[edge]:
            return False
        return not q or (q[-1].pos - veh_len) >= min_gap

    while True:
        if active == 0 and not pending and not waiting:
            break
        if t >= hard_cap:
            stats.capped = True
            break

        # insertions: newly eligible first, then retry the blocked ones FIFO
        while pending and pending[-1].depart <= t:
            waiting.append(pending.pop())
        for _ in range(len(waiting)):
            v = waiting.popleft()
            e0 = v.path[0]
            if _room(e0):
                queues[e0].append(v)
                v.pos = 0.0
                v.speed = 0.0
                active += 1
                stats.departed += 1
                log_.record_entry(v.idx, e0, t)
            else:
                waiting.append(v)

        green0 = (t % cycle) < cfg.light_green
        t_next = t + dt

        teleport_due: list[_Vehicle] = []
        for ei in range(n_edges):
            q = queues[ei]
            if not q:
                continue
            length = lengths[ei]
            vmax = vmaxs[ei]
            exit_green = (not light_end[ei]) or (green0 if phase[ei] == 0 else not green0)
            k = 0
            while k < len(q):
                v = q[k]
                if v.stamp == t_next:  # entered this edge earlier in the step
                    k += 1
                    continue
                v.stamp = t_next
                old_speed = v.speed
                last_leg = v.leg == len(v.path) - 1

                # desired speed before constraints
                v_des = old_speed + a_max * dt
                if v_des > vmax:
                    v_des = vmax

                # crossed and arrived predecessors are already out of q, so
                # q[k-1] is the true same-edge leader, updated this step
                leader = q[k - 1] if k > 0 else None
                cross_allowed = False
                next_edge = -1
                if leader is not None:
                    gap = leader.pos - veh_len - min_gap - v.pos
                    vl = leader.speed
                    v_safe = vl + (gap - vl * tau) / (tau + (old_speed + vl) / (2.0 * b_max))
                    if v_safe < v_des:
                        v_des = v_safe
                elif not last_leg:
                    next_edge = v.path[v.leg + 1]
                    cross_allowed = exit_green and _room(next_edge)
                    if cross_allowed:
                        nq = queues[next_edge]
                        if nq:
                            lead = nq[-1]
                            gap = (length - v.pos) + lead.pos - veh_len - min_gap
                            vl = lead.speed
                            v_safe = vl + (gap - vl * tau) / (tau + (old_speed + vl) / (2.0 * b_max))
                            if v_safe < v_des:
                                v_des = v_safe
                    else:
                        gap = length - v.pos
                        v_safe = gap / (tau + old_speed / (2.0 * b_max))
                        if v_safe < v_des:
                            v_des = v_safe

                if v.rng is not None:
                    v_des -= dawdle * v.rng.random()
                new_speed = v_des if v_des > 0.0 else 0.0
                new_pos = v.pos + new_speed * dt

                # hard clamps guarantee gap and stop-line invariants exactly
                if leader is not None:
                    limit = leader.pos - veh_len - min_gap
                    if new_pos > limit:
                        new_pos = limit if limit > v.pos else v.pos
                        new_speed = (new_pos - v.pos) / dt
                elif not last_leg and not cross_allowed and new_pos > length:
                    new_pos = length
                    new_speed = (new_pos - v.pos) / dt

                arrived = False
                if new_pos >= length:
                    if last_leg:
                        arrived = True
                        new_pos = length
                    elif cross_allowed:
                        overshoot = new_pos - length
                        nq = queues[next_edge]
                        limit = nq[-1].pos - veh_len - min_gap if nq else lengths[next_edge]
                        if limit < 0.0:
                            limit = 0.0
                        if overshoot > limit:
                            overshoot = limit
                        if overshoot > lengths[next_edge]:
                            overshoot = lengths[next_edge]
                        del q[k]
                        nq.append(v)
                        v.leg += 1
                        v.edge = next_edge
                        new_pos = overshoot
                        log_.record_entry(v.idx, next_edge, t_next)

                accel = (new_speed - old_speed) / dt
                v.pos = new_pos
                v.speed = new_speed

                if arrived:
                    del q[k]
                    active -= 1
                    stats.arrived += 1
                    log_.arrivals[v.vid] = t_next
                    log_.append(v.idx, t_next, ei, length, new_speed, accel)
                else:
                    log_.append(v.idx, t_next, v.edge, new_pos, new_speed, accel)
                    if new_speed < 0.1:
                        v.stuck += dt
                        if v.stuck >= cfg.teleport_threshold:
                            teleport_due.append(v)
                    else:
                        v.stuck = 0.0
                    if v.edge == ei:
                        k += 1

        for v in teleport_due:
            target = -1
            for j in range(v.leg + 1, len(v.path)):
                if _room(v.path[j]):
                    target = j
                    break
            stats.teleports += 1
            queues[v.edge].remove(v)
            if target < 0:
                # nowhere downstream has room: complete the trip directly
                active -= 1
                stats.arrived += 1
                log_.arrivals[v.vid] = t_next
            else:
                nxt = v.path[target]
                queues[nxt].append(v)
                v.leg = target
                v.edge = nxt
                v.pos = 0.0
                v.speed = 0.0
                v.stuck = 0.0
                log_.record_entry(v.idx, nxt, t_next)

        t = t_next

    stats.never_inserted = len(pending) + len(waiting)
    stats.en_route_at_end = active
    stats.travel_times = travel_times(log_)
    return log_, stats
