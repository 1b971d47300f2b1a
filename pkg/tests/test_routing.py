import json
import math
import random

import numpy as np
import pytest

from oracles import bellman_ford_cost, random_digraph
from routemix.demand import MobilityDemand, Trip
from routemix.network import Edge, Node, RoadNetwork, synth_grid
from routemix.routing import (
    FastestPathProvider,
    FixtureProvider,
    HttpProvider,
    ProviderError,
    RoutingError,
    external_route,
    fastest_path,
    load_routed_demand,
    mixed_count,
    parse_provider_label,
    path_cost,
    perturbation_curve,
    perturbed_fastest_path,
    route_demand,
    save_routed_demand,
    sspd,
    validate_path_edges,
    write_fixture,
)


def _diamond():
    """Two routes between shared origin/destination edges: fast costs 20 s
    inner, slow costs 30 s inner."""
    nodes = [
        Node("s", -10, 0), Node("a", 0, 0), Node("b", 50, 50), Node("c", 50, -50),
        Node("d", 100, 0), Node("t", 110, 0),
    ]
    edges = [
        Edge("in", "s", "a", 100, 10),          # 10 s
        Edge("fast1", "a", "b", 100, 10),       # 10 s
        Edge("fast2", "b", "d", 100, 10),       # 10 s
        Edge("slow1", "a", "c", 150, 10),       # 15 s
        Edge("slow2", "c", "d", 150, 10),       # 15 s
        Edge("out", "d", "t", 100, 10),         # 10 s
    ]
    return RoadNetwork(nodes, edges)


def _line():
    nodes = [Node("a", 0, 0), Node("b", 100, 0), Node("c", 200, 0)]
    edges = [Edge("e1", "a", "b", 100, 10), Edge("e2", "b", "c", 100, 10)]
    return RoadNetwork(nodes, edges)


def test_fastest_path_unique_line():
    net = _line()
    p = fastest_path(net, "e1", "e2")
    assert p.edges == ("e1", "e2")
    assert p.provider == "fastest"


def test_fastest_path_picks_fast_branch():
    net = _diamond()
    p = fastest_path(net, "in", "out")
    assert p.edges == ("in", "fast1", "fast2", "out")
    # oracle: enumerate both routes
    fast = path_cost(net, ("in", "fast1", "fast2", "out"))
    slow = path_cost(net, ("in", "slow1", "slow2", "out"))
    assert fast < slow
    assert path_cost(net, p.edges) == pytest.approx(fast)


def test_fastest_path_matches_bellman_ford_on_grid():
    net = synth_grid(5, 5, block_len=100.0)
    rng = random.Random(4)
    ids = list(net.edges)
    for _ in range(100):
        e_o, e_d = rng.sample(ids, 2)
        p = fastest_path(net, e_o, e_d)
        assert path_cost(net, p.edges) == pytest.approx(bellman_ford_cost(net, e_o, e_d))


def test_fastest_path_unreachable():
    nodes = [Node("a", 0, 0), Node("b", 10, 0), Node("c", 20, 0)]
    edges = [Edge("e1", "a", "b", 10, 10), Edge("e2", "c", "b", 10, 10)]
    net = RoadNetwork(nodes, edges)
    with pytest.raises(RoutingError, match="unreachable"):
        fastest_path(net, "e1", "e2")


def test_fastest_path_lexicographic_tie_break():
    # 2x2 grid, all weights equal: two 4-edge routes tie from r0c0-r0c1 to
    # r1c0-r1c1; the lexicographically smaller id sequence must win.
    net = synth_grid(2, 2, block_len=100.0)
    tie_a = ("r0c0-r0c1", "r0c1-r0c0", "r0c0-r1c0", "r1c0-r1c1")
    tie_b = ("r0c0-r0c1", "r0c1-r1c1", "r1c1-r1c0", "r1c0-r1c1")
    for t in (tie_a, tie_b):
        validate_path_edges(net, t, "r0c0-r0c1", "r1c0-r1c1")
    assert path_cost(net, tie_a) == path_cost(net, tie_b)
    assert tie_a < tie_b
    p = fastest_path(net, "r0c0-r0c1", "r1c0-r1c1")
    assert p.edges == tie_a


def test_perturbed_w1_identical_to_fastest():
    net = synth_grid(4, 4)
    rng = np.random.default_rng(0)
    ids = list(net.edges)
    for _ in range(20):
        e_o, e_d = random.Random(8).sample(ids, 2)
        assert perturbed_fastest_path(net, e_o, e_d, 1.0, rng).edges == fastest_path(net, e_o, e_d).edges


def test_perturbed_rejects_w_below_one():
    net = _line()
    with pytest.raises(ValueError):
        perturbed_fastest_path(net, "e1", "e2", 0.5, np.random.default_rng(0))


def test_perturbed_slow_branch_frequency():
    net = _diamond()
    rng = np.random.default_rng(123)
    slow = 0
    n = 2000
    for _ in range(n):
        p = perturbed_fastest_path(net, "in", "out", 10.0, rng)
        if "slow1" in p.edges:
            slow += 1
    assert 0 < slow < n


def test_perturbed_cost_never_beats_optimum():
    net = synth_grid(5, 5, block_len=100.0)
    ids = list(net.edges)
    pick = random.Random(21)
    for seed in range(50):
        e_o, e_d = pick.sample(ids, 2)
        best = path_cost(net, fastest_path(net, e_o, e_d).edges)
        p = perturbed_fastest_path(net, e_o, e_d, 8.0, np.random.default_rng(seed))
        validate_path_edges(net, p.edges, e_o, e_d)
        assert path_cost(net, p.edges) >= best - 1e-9


def test_provider_labels_roundtrip():
    assert parse_provider_label("fastest") == ("fastest", None, None)
    assert parse_provider_label("perturbed(w=5)") == ("perturbed", 5.0, None)
    assert parse_provider_label("external(tomtom)") == ("external", None, "tomtom")
    with pytest.raises(ValueError):
        parse_provider_label("magic")


def test_fixture_provider_replay(tmp_path):
    net = _diamond()
    write_fixture(str(tmp_path), "in", "out", ["in", "slow1", "slow2", "out"])
    prov = FixtureProvider(str(tmp_path))
    p = external_route(net, prov, "in", "out", vehicle_id="v1")
    assert p.edges == ("in", "slow1", "slow2", "out")
    assert p.provider == "external(fixture)"


def test_fixture_provider_rejects_invalid_path(tmp_path):
    net = _diamond()
    write_fixture(str(tmp_path), "in", "out", ["in", "fast2", "out"])  # skips fast1
    prov = FixtureProvider(str(tmp_path))
    with pytest.raises(RoutingError, match="not adjacent"):
        external_route(net, prov, "in", "out")


def test_fixture_provider_missing_fallbacks(tmp_path):
    net = _diamond()
    strict = FixtureProvider(str(tmp_path), fallback="error")
    with pytest.raises(ProviderError, match="no fixture"):
        external_route(net, strict, "in", "out")
    soft = FixtureProvider(str(tmp_path), fallback="fastest")
    p = external_route(net, soft, "in", "out")
    assert p.edges == fastest_path(net, "in", "out").edges
    assert p.provider == "fastest"


def test_http_provider(monkeypatch):
    import httpx

    net = _diamond()

    def handler(request):
        assert request.url.params["from_edge"] == "in"
        return httpx.Response(200, json={"edges": ["in", "fast1", "fast2", "out"]})

    prov = HttpProvider("http://nav.test")
    prov._client = httpx.Client(transport=httpx.MockTransport(handler))
    p = external_route(net, prov, "in", "out")
    assert p.edges == ("in", "fast1", "fast2", "out")
    assert p.provider == "external(http)"

    def failing(request):
        return httpx.Response(404)

    prov._client = httpx.Client(transport=httpx.MockTransport(failing))
    with pytest.raises(ProviderError, match="404"):
        external_route(net, prov, "in", "out")


def _demand(net, n, seed=0):
    ids = list(net.edges)
    rng = random.Random(seed)
    trips = []
    for k in range(n):
        e_o, e_d = rng.sample(ids, 2)
        trips.append(Trip(f"v{k:03d}", e_o, e_d))
    return MobilityDemand(tuple(trips))


def test_route_demand_mixing_counts():
    net = synth_grid(4, 4)
    demand = _demand(net, 40)
    prov = FastestPathProvider()
    for i, expect in [(0, 0), (10, 40), (5, 20), (3, 12)]:
        rd = route_demand(net, demand, i, prov, w=5.0, seed=7)
        r_routed = [p for p in rd.paths if p.provider == "fastest"]
        assert len(r_routed) == expect
        assert all(p.provider == "perturbed(w=5)" for p in rd.paths if p not in r_routed)


def test_mixed_count_paper_point():
    assert mixed_count(15000, 5) == 7500
    assert mixed_count(15, 1) == 2  # 1.5 rounds half away from zero
    assert mixed_count(7, 5) == 4


def test_route_demand_deterministic_bytes(tmp_path):
    net = synth_grid(4, 4)
    demand = _demand(net, 30)
    prov = FastestPathProvider()
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    save_routed_demand(route_demand(net, demand, 4, prov, 5.0, seed=11), str(a))
    save_routed_demand(route_demand(net, demand, 4, prov, 5.0, seed=11), str(b))
    assert a.read_bytes() == b.read_bytes()
    reloaded = load_routed_demand(str(a), net)
    assert reloaded.mix_tenths == 4
    assert reloaded.n == 30


def test_route_demand_propagates_failure_with_vehicle_id():
    nodes = [Node("a", 0, 0), Node("b", 10, 0), Node("c", 20, 0)]
    edges = [Edge("e1", "a", "b", 10, 10), Edge("e2", "c", "b", 10, 10)]
    net = RoadNetwork(nodes, edges)
    demand = MobilityDemand((Trip("v000", "e1", "e2"),))
    with pytest.raises(RoutingError, match="v000"):
        route_demand(net, demand, 0, FastestPathProvider(), 5.0, seed=0)


def test_all_outputs_satisfy_invariants():
    net = synth_grid(5, 5, block_len=150.0)
    demand = _demand(net, 25, seed=3)
    rd = route_demand(net, demand, 5, FastestPathProvider(), 6.0, seed=5)
    for trip, p in zip(demand.trips, rd.paths):
        validate_path_edges(net, p.edges, trip.origin_edge, trip.dest_edge)


def test_sspd_identical_zero():
    net = synth_grid(3, 3)
    p = fastest_path(net, "r0c0-r0c1", "r2c1-r2c2")
    assert sspd(p, p, net) == pytest.approx(0.0)


def test_sspd_parallel_offset():
    # two straight 2-edge paths along y=0 and y=100, same x extent
    nodes = [
        Node("a0", 0, 0), Node("a1", 100, 0), Node("a2", 200, 0),
        Node("b0", 0, 100), Node("b1", 100, 100), Node("b2", 200, 100),
    ]
    edges = [
        Edge("low1", "a0", "a1", 100, 10), Edge("low2", "a1", "a2", 100, 10),
        Edge("high1", "b0", "b1", 100, 10), Edge("high2", "b1", "b2", 100, 10),
    ]
    net = RoadNetwork(nodes, edges)
    low = fastest_path(net, "low1", "low2")
    high = fastest_path(net, "high1", "high2")
    assert sspd(low, high, net) == pytest.approx(100.0)


def test_sspd_symmetry_random_pairs():
    net = synth_grid(5, 5, block_len=120.0)
    ids = list(net.edges)
    pick = random.Random(2)
    for seed in range(100):
        e1, e2 = pick.sample(ids, 2)
        e3, e4 = pick.sample(ids, 2)
        a = perturbed_fastest_path(net, e1, e2, 5.0, np.random.default_rng(seed))
        b = perturbed_fastest_path(net, e3, e4, 5.0, np.random.default_rng(seed + 1000))
        assert sspd(a, b, net) == pytest.approx(sspd(b, a, net))


def test_perturbation_curve_w1_zero_and_monotone_trend():
    net = synth_grid(6, 6, block_len=100.0)
    rows = perturbation_curve(net, n_pairs=60, w_values=[1, 3, 8, 20], seed=13)
    assert rows[0][0] == 1.0
    assert rows[0][1] == pytest.approx(0.0)
    assert rows[-1][1] > rows[0][1]


def test_routed_demand_json_schema(tmp_path):
    net = synth_grid(3, 3)
    demand = _demand(net, 5, seed=9)
    rd = route_demand(net, demand, 2, FastestPathProvider(), 3.0, seed=1)
    p = tmp_path / "routes.json"
    save_routed_demand(rd, str(p))
    doc = json.loads(p.read_text())
    assert set(doc["paths"][0]) == {"vehicle_id", "provider", "edges"}
