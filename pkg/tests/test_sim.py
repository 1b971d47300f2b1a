import collections
import math
import random

import numpy as np
import pytest

from routemix.demand import build_grid
from routemix.network import Edge, Node, RoadNetwork, synth_grid
from routemix.routing import RoutedDemand, RoutedPath, fastest_path
from routemix.sim import (
    ExtraVehiclesConfig,
    SimConfig,
    SimulationError,
    TrajectoryLog,
    assign_departures,
    build_extra_traffic,
    car_following_speed,
    edge_capacity,
    simulate,
    travel_times,
)


def _straight_net(n_edges=3, length=100.0, speed=10.0):
    nodes = [Node(f"n{i}", i * length, 0.0) for i in range(n_edges + 1)]
    edges = [Edge(f"e{i}", f"n{i}", f"n{i+1}", length, speed) for i in range(n_edges)]
    return RoadNetwork(nodes, edges)


def _grid_demand(net, n, seed=0, horizon=300.0):
    ids = list(net.edges)
    rng = random.Random(seed)
    paths = [fastest_path(net, *rng.sample(ids, 2), vehicle_id=f"v{k:04d}") for k in range(n)]
    rd = RoutedDemand(tuple(paths), 0, "fastest")
    sched = assign_departures(rd, horizon, np.random.default_rng(seed))
    return rd, sched


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(dt=0)
    with pytest.raises(ValueError):
        SimConfig(sigma=1.5)


def test_edge_capacity():
    cfg = SimConfig()
    assert edge_capacity(100.0, 1, cfg) == math.ceil(100 / 7.5)
    assert edge_capacity(100.0, 2, cfg) == math.ceil(200 / 7.5)
    assert edge_capacity(1.0, 1, cfg) == 1


def test_assign_departures_bounds_and_mean():
    net = _straight_net()
    paths = tuple(RoutedPath(f"v{k}", ("e0", "e1", "e2"), "fastest") for k in range(10000))
    rd = RoutedDemand(paths, 0, "f")
    sched = assign_departures(rd, 3600.0, np.random.default_rng(42))
    times = np.array(list(sched.values()))
    assert len(sched) == 10000
    assert times.min() >= 0 and times.max() < 3600
    assert abs(times.mean() - 1800) < 40
    tiny = assign_departures(rd, 1.0, np.random.default_rng(0))
    assert max(tiny.values()) < 1.0


def test_car_following_rule_examples():
    cfg = SimConfig(sigma=0.0)
    assert car_following_speed(0.0, None, None, 30.0, cfg) == pytest.approx(2.6)
    # leader stopped at zero effective gap: full stop, never negative
    v = 10.0
    for _ in range(20):
        v = car_following_speed(v, 0.0, 0.0, 30.0, cfg)
        assert v >= 0.0
    assert v == 0.0


def test_car_following_converges_to_leader_speed():
    cfg = SimConfig(sigma=0.0)
    v_leader = 8.0
    v, gap = 0.0, 60.0
    for _ in range(300):
        v_new = car_following_speed(v, v_leader, gap, 30.0, cfg)
        gap += (v_leader - v_new) * cfg.dt
        v = v_new
    assert v == pytest.approx(v_leader, abs=1e-6)


def test_single_vehicle_free_flow_closed_form():
    net = _straight_net(3, 100.0, 10.0)
    d = RoutedDemand((RoutedPath("v0", ("e0", "e1", "e2"), "fastest"),), 0, "f")
    cfg = SimConfig(sigma=0.0)
    log, stats = simulate(net, d, {"v0": 0.0}, cfg)
    # ramp 0 -> 10 m/s at 2.6 m/s^2 covers v^2/2a = 19.2 m in 3.85 s,
    # then 280.8 m at 10 m/s: 31.9 s total
    a, vmax, dist = cfg.accel_max, 10.0, 300.0
    closed_form = vmax / a + (dist - vmax**2 / (2 * a)) / vmax
    assert stats.travel_times["v0"] == pytest.approx(closed_form, abs=2 * cfg.dt)


def test_two_vehicle_gap_never_below_min_gap():
    net = _straight_net(3, 100.0, 10.0)
    d = RoutedDemand(
        (RoutedPath("a", ("e0", "e1", "e2"), "f"), RoutedPath("b", ("e0", "e1", "e2"), "f")),
        0, "f",
    )
    cfg = SimConfig()  # dawdling on
    log, stats = simulate(net, d, {"a": 0.0, "b": 1.0}, cfg, seed=5)
    cols = log.columns()
    by_step = collections.defaultdict(dict)
    for i in range(len(log)):
        by_step[(cols["time"][i], cols["edge"][i])][cols["vehicle"][i]] = cols["pos"][i]
    for positions in by_step.values():
        if len(positions) == 2:
            gap = abs(positions[0] - positions[1]) - cfg.vehicle_length
            assert gap >= cfg.min_gap - 1e-5
    assert stats.arrived == 2


def test_no_negative_speed_no_position_overrun():
    net = synth_grid(4, 4, block_len=100.0, light_period=2)
    rd, sched = _grid_demand(net, 60, seed=2)
    log, _ = simulate(net, rd, sched, SimConfig(), seed=2)
    cols = log.columns()
    assert (cols["speed"] >= 0).all()
    lengths = np.array([net.edges[eid].length for eid in net.edge_ids])
    assert (cols["pos"] <= lengths[cols["edge"]] + 1e-4).all()
    assert (cols["pos"] >= 0).all()


def test_capacity_never_exceeded():
    net = synth_grid(3, 3, block_len=60.0, light_period=1)
    rd, sched = _grid_demand(net, 120, seed=3, horizon=120.0)
    cfg = SimConfig()
    log, _ = simulate(net, rd, sched, cfg, seed=3)
    cols = log.columns()
    caps = {i: edge_capacity(net.edges[eid].length, net.edges[eid].lanes, cfg)
            for i, eid in enumerate(net.edge_ids)}
    counts = collections.Counter(zip(cols["time"], cols["edge"]))
    for (t, e), c in counts.items():
        assert c <= caps[e], f"edge {e} at t={t}: {c} > {caps[e]}"


def test_conservation_and_determinism():
    net = synth_grid(4, 4, block_len=100.0, light_period=2)
    rd, sched = _grid_demand(net, 100, seed=7)
    cfg = SimConfig()
    log1, s1 = simulate(net, rd, sched, cfg, seed=11)
    log2, s2 = simulate(net, rd, sched, cfg, seed=11)
    assert s1.departed == s1.arrived + s1.en_route_at_end
    assert s1.departed + s1.never_inserted == rd.n
    for col in ("vehicle", "time", "edge", "pos", "speed", "accel"):
        assert log1.columns()[col].tobytes() == log2.columns()[col].tobytes()
    assert s1.teleports == s2.teleports


def test_different_seed_changes_dawdling():
    net = synth_grid(4, 4, block_len=100.0)
    rd, sched = _grid_demand(net, 50, seed=9)
    log1, _ = simulate(net, rd, sched, SimConfig(), seed=1)
    log2, _ = simulate(net, rd, sched, SimConfig(), seed=2)
    assert log1.columns()["speed"].tobytes() != log2.columns()["speed"].tobytes()


def test_teleport_exactly_once_past_stuck_light():
    # east-west approach gets a 1 s green then a red longer than the run;
    # the vehicle stalls at the line and must teleport exactly once
    nodes = [Node("n0", 0, 0), Node("n1", 100, 0, has_traffic_light=True),
             Node("n2", 100, 100), Node("n3", 100, 200)]
    edges = [Edge("e0", "n0", "n1", 100.0, 10.0), Edge("e1", "n1", "n2", 100.0, 10.0),
             Edge("e2", "n2", "n3", 100.0, 10.0)]
    net = RoadNetwork(nodes, edges)
    d = RoutedDemand((RoutedPath("v0", ("e0", "e1", "e2"), "f"),), 0, "f")
    cfg = SimConfig(sigma=0.0, light_green=1.0, light_red=1e6, teleport_threshold=60.0)
    log, st = simulate(net, d, {"v0": 0.0}, cfg)
    assert st.teleports == 1
    assert st.arrived == 1
    entered = [e for e, _ in log.entries[0]]
    assert entered[0] == net.edge_index["e0"]
    assert net.edge_index["e1"] in entered  # re-inserted past the light


def test_teleport_with_no_free_edge_completes_trip():
    # destination edge too short to take a second vehicle: the blocked
    # follower teleport-arrives instead of vanishing
    nodes = [Node("n0", 0, 0), Node("n1", 50, 0), Node("n2", 57, 0)]
    edges = [Edge("a", "n0", "n1", 50.0, 10.0), Edge("b", "n1", "n2", 7.0, 5.0)]
    net = RoadNetwork(nodes, edges)
    d = RoutedDemand(
        (RoutedPath("v0", ("a", "b"), "f"), RoutedPath("v1", ("a", "b"), "f")), 0, "f"
    )
    cfg = SimConfig(sigma=0.0, teleport_threshold=30.0, light_green=1.0, light_red=1e6,
                    drain_factor=100.0, horizon=10.0)
    # no lights in net, so light config is irrelevant; capacity of b is 1
    log, st = simulate(net, d, {"v0": 0.0, "v1": 1.0}, cfg)
    assert st.departed == 2
    assert st.arrived + st.en_route_at_end == 2


def test_monotone_congestion_in_fleet_size():
    net = synth_grid(10, 10, block_len=100.0, light_period=2)
    rd_small, sched_small = _grid_demand(net, 200, seed=4, horizon=3600.0)
    rd_big, sched_big = _grid_demand(net, 2000, seed=4, horizon=3600.0)
    cfg = SimConfig()
    _, s_small = simulate(net, rd_small, sched_small, cfg, seed=4)
    _, s_big = simulate(net, rd_big, sched_big, cfg, seed=4)
    assert s_big.mean_travel_time >= s_small.mean_travel_time


def test_travel_times_exclude_non_arrived():
    net = _straight_net(2, 100.0, 10.0)
    d = RoutedDemand((RoutedPath("v0", ("e0", "e1"), "f"),
                      RoutedPath("v1", ("e0", "e1"), "f")), 0, "f")
    # v1 departs after the drain cap so it never enters
    cfg = SimConfig(sigma=0.0, horizon=30.0, drain_factor=2.0)
    log, st = simulate(net, d, {"v0": 0.0, "v1": 9.9e5}, cfg)
    tts = travel_times(log)
    assert "v0" in tts and "v1" not in tts
    assert st.never_inserted == 1
    assert tts["v0"] == st.travel_times["v0"]
    v_dep, v_arr = log.departures["v0"], log.arrivals["v0"]
    assert tts["v0"] == v_arr - v_dep


def test_unknown_edge_rejected():
    net = _straight_net(2)
    d = RoutedDemand((RoutedPath("v0", ("e0", "zz"), "f"),), 0, "f")
    with pytest.raises(SimulationError, match="zz"):
        simulate(net, d, {"v0": 0.0}, SimConfig())


def test_extra_vehicles_config_counts():
    assert ExtraVehiclesConfig.parse("none").counts(15000) == (0, 0)
    assert ExtraVehiclesConfig.parse("15_start").counts(15000) == (2250, 0)
    assert ExtraVehiclesConfig.parse("15_start+45_end").counts(15000) == (2250, 6750)
    assert ExtraVehiclesConfig.parse("15_start+45_end").label == "15_start+45_end"
    with pytest.raises(ValueError):
        ExtraVehiclesConfig.parse("15_bogus")


def test_extra_traffic_injection():
    net = synth_grid(4, 4, block_len=200.0)
    grid = build_grid(net.bbox, 300.0)
    rd, sched = _grid_demand(net, 40, seed=5, horizon=200.0)
    extra = build_extra_traffic(net, grid, rd.n, ExtraVehiclesConfig.parse("10_start+20_end"),
                                w=5.0, last_departure=max(sched.values()), seed=5)
    assert len(extra.paths) == 4 + 8
    starts = [t for t in extra.departures.values() if t == 0.0]
    late = [t for t in extra.departures.values() if t > 0]
    assert len(starts) == 4 and len(late) == 8
    assert all(t > max(sched.values()) - 1e-9 for t in late)

    log, st = simulate(net, rd, sched, SimConfig(), extra=extra, seed=5)
    assert st.departed <= rd.n + 12
    # extras never contribute travel times by default
    assert all(not vid.startswith("x") for vid in st.travel_times)
    with_x = travel_times(log, include_extras=True)
    assert any(vid.startswith("x") for vid in with_x)


def test_trajectory_csv_roundtrip(tmp_path):
    net = _straight_net(2, 100.0, 10.0)
    d = RoutedDemand((RoutedPath("v0", ("e0", "e1"), "f"),), 0, "f")
    log, st = simulate(net, d, {"v0": 0.0}, SimConfig(sigma=0.0))
    p = tmp_path / "traj.csv"
    log.to_csv(str(p))
    back = TrajectoryLog.from_csv(str(p), net)
    for col in ("time", "edge", "pos", "speed", "accel"):
        assert np.allclose(back.columns()[col], log.columns()[col])
    assert back.vehicle_ids == log.vehicle_ids


def test_stats_dict_schema():
    net = _straight_net(2)
    d = RoutedDemand((RoutedPath("v0", ("e0", "e1"), "f"),), 0, "f")
    _, st = simulate(net, d, {"v0": 0.0}, SimConfig(sigma=0.0))
    assert set(st.to_dict()) == {"teleports", "arrived", "mean_travel_time"}
