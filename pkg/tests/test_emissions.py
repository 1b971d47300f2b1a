import json
import math

import numpy as np
import pytest

from routemix.emissions import (
    EmissionCoefficients,
    aggregate,
    default_coefficients,
    emission_diff,
    emission_rates,
    export_geojson,
    instantaneous_emission,
    load_coefficients,
    load_weighted_csv,
    per_meter,
    save_weighted_csv,
    total_emissions,
    WeightedNetwork,
)
from routemix.network import Edge, Node, RoadNetwork, synth_grid
from routemix.sim import TrajectoryLog

ONES = EmissionCoefficients("ones", 1, 1, 1, 1, 1, 1)


def _two_edge_net(len_a=10.0, len_b=10.0):
    nodes = [Node("n0", 0, 0), Node("n1", len_a, 0), Node("n2", len_a + len_b, 0)]
    edges = [Edge("ea", "n0", "n1", len_a, 10.0), Edge("eb", "n1", "n2", len_b, 10.0)]
    return RoadNetwork(nodes, edges)


def _log_for(net, rows, dt=1.0):
    """rows: (vehicle_id, t, edge_id, pos, speed, accel)"""
    log = TrajectoryLog(net.edge_ids, dt)
    idx = {}
    for vid, t, eid, pos, speed, accel in rows:
        if vid not in idx:
            idx[vid] = log.register_vehicle(vid, False)
        log.append(idx[vid], t, net.edge_index[eid], pos, speed, accel)
    return log


def test_polynomial_hand_value():
    assert instantaneous_emission(ONES, 2.0, 1.0) == pytest.approx(19.0)


def test_polynomial_idling_is_c0():
    coef = EmissionCoefficients("c", 7.25, 2, 3, 4, 5, 6)
    assert instantaneous_emission(coef, 0.0, 0.0) == 7.25


def test_polynomial_clamps_negative():
    coef = EmissionCoefficients("c", 1.0, 10.0, 0, 0, 0, 0)
    assert instantaneous_emission(coef, 10.0, -5.0) == 0.0


def test_polynomial_rejects_negative_speed():
    with pytest.raises(ValueError):
        instantaneous_emission(ONES, -1.0, 0.0)


def test_monotone_in_speed_at_zero_accel():
    coef = EmissionCoefficients("c", 2.0, 1.0, 1.0, 3.0, 0.5, 0.01)
    speeds = np.linspace(0, 40, 200)
    vals = emission_rates(coef, speeds, np.zeros_like(speeds))
    assert (np.diff(vals) >= 0).all()


def test_vector_matches_scalar():
    rng = np.random.default_rng(0)
    s = rng.uniform(0, 30, 50)
    a = rng.uniform(-4, 4, 50)
    coef = default_coefficients()
    vec = emission_rates(coef, s, a)
    for i in range(50):
        assert vec[i] == pytest.approx(instantaneous_emission(coef, s[i], a[i]))


def test_aggregate_idling_single_edge():
    net = _two_edge_net()
    coef = EmissionCoefficients("c", 3.0, 0, 0, 0, 0, 0)
    rows = [("v0", float(t), "ea", 0.0, 0.0, 0.0) for t in range(1, 11)]
    g = aggregate(_log_for(net, rows), coef, net)
    assert g.mass_of("ea") == pytest.approx(30.0)
    assert g.mass_of("eb") == 0.0


def test_aggregate_additive_disjoint_vehicles():
    net = _two_edge_net()
    rows = (
        [("v0", float(t), "ea", 0.0, 2.0, 0.0) for t in range(1, 6)]
        + [("v1", float(t), "eb", 0.0, 3.0, 1.0) for t in range(1, 9)]
    )
    g = aggregate(_log_for(net, rows), ONES, net)
    rate_a = instantaneous_emission(ONES, 2.0, 0.0)
    rate_b = instantaneous_emission(ONES, 3.0, 1.0)
    assert g.mass_of("ea") == pytest.approx(5 * rate_a)
    assert g.mass_of("eb") == pytest.approx(8 * rate_b)


def test_aggregate_conserves_mass_against_flat_sum():
    net = synth_grid(4, 4, block_len=100.0)
    rng = np.random.default_rng(42)
    coef = default_coefficients()
    rows = []
    eids = list(net.edges)
    for v in range(100):
        for t in range(1, 40):
            eid = eids[rng.integers(len(eids))]
            rows.append((f"v{v}", float(t), eid, 0.0,
                         float(rng.uniform(0, 30)), float(rng.uniform(-4, 4))))
    log = _log_for(net, rows)
    g = aggregate(log, coef, net)
    flat = math.fsum(
        instantaneous_emission(coef, float(s), float(a)) * 1.0
        for s, a in zip(log.columns()["speed"], log.columns()["accel"])
    )
    assert total_emissions(g) == pytest.approx(flat, rel=1e-9)


def test_aggregate_permutation_invariant():
    net = _two_edge_net()
    rows = [("v0", 1.0, "ea", 0, 5.0, 1.0), ("v0", 2.0, "eb", 0, 7.0, -1.0),
            ("v1", 1.0, "eb", 0, 3.0, 0.5)]
    g1 = aggregate(_log_for(net, rows), ONES, net)
    g2 = aggregate(_log_for(net, list(reversed(rows))), ONES, net)
    assert g1.mass_mg == pytest.approx(g2.mass_mg)


def test_total_and_per_meter():
    net = _two_edge_net(len_a=50.0, len_b=10.0)
    g = WeightedNetwork(net, {"ea": 100.0, "eb": 7.0})
    assert total_emissions(g) == 107.0
    pm = per_meter(g)
    assert pm["ea"] == pytest.approx(2.0)
    assert pm["eb"] == pytest.approx(0.7)
    empty = WeightedNetwork(net, {})
    assert total_emissions(empty) == 0.0
    assert per_meter(empty)["ea"] == 0.0


def test_emission_diff():
    net = _two_edge_net(len_a=10.0, len_b=10.0)
    g_a = WeightedNetwork(net, {"ea": 10.0})
    g_b = WeightedNetwork(net, {"eb": 10.0})
    d = emission_diff(g_a, g_b)
    assert d == pytest.approx({"ea": 1.0, "eb": -1.0})
    anti = emission_diff(g_b, g_a)
    assert all(anti[k] == pytest.approx(-v) for k, v in d.items())
    assert emission_diff(g_a, g_a) == pytest.approx({"ea": 0.0, "eb": 0.0})


def test_emission_diff_network_mismatch():
    g_a = WeightedNetwork(_two_edge_net(), {"ea": 1.0})
    g_b = WeightedNetwork(_two_edge_net(len_a=20.0), {"ea": 1.0})
    with pytest.raises(ValueError, match="underlying"):
        emission_diff(g_a, g_b)


def test_weighted_validation():
    net = _two_edge_net()
    with pytest.raises(ValueError):
        WeightedNetwork(net, {"nope": 1.0})
    with pytest.raises(ValueError):
        WeightedNetwork(net, {"ea": -1.0})


def test_weighted_csv_roundtrip(tmp_path):
    net = _two_edge_net(len_a=25.0)
    g = WeightedNetwork(net, {"ea": 12.5, "eb": 0.25})
    p = tmp_path / "weighted.csv"
    save_weighted_csv(g, str(p))
    header = p.read_text().splitlines()[0]
    assert header == "edge_id,co2_mg,co2_mg_per_m"
    back = load_weighted_csv(str(p), net)
    assert back.mass_mg == pytest.approx(g.mass_mg)


def test_geojson_export(tmp_path):
    net = _two_edge_net()
    g = WeightedNetwork(net, {"ea": 20.0})
    doc = export_geojson(g, path=str(tmp_path / "out.geojson"))
    assert doc["type"] == "FeatureCollection"
    by_id = {f["properties"]["edge_id"]: f for f in doc["features"]}
    assert by_id["ea"]["properties"]["co2_mg_per_m"] == pytest.approx(2.0)
    assert by_id["ea"]["geometry"]["coordinates"] == [[0.0, 0.0], [10.0, 0.0]]
    diff_doc = export_geojson(g, diff={"ea": 1.0, "eb": -1.0})
    assert diff_doc["features"][0]["properties"].get("diff_mg_per_m") is not None


def test_coefficient_configs(tmp_path):
    cj = tmp_path / "car.json"
    cj.write_text(json.dumps({"label": "car", "c0": 1, "c1": 2, "c2": 3,
                              "c3": 4, "c4": 5, "c5": 6}))
    coef = load_coefficients(str(cj))
    assert coef.c3 == 4.0
    ct = tmp_path / "car.toml"
    ct.write_text('label = "car"\nc0 = 1.5\nc1 = 0\nc2 = 0\nc3 = 0\nc4 = 0\nc5 = 0\n')
    assert load_coefficients(str(ct)).c0 == 1.5
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"label": "x", "c0": 1}))
    with pytest.raises(ValueError):
        load_coefficients(str(bad))


def test_default_coefficients_plausible():
    coef = default_coefficients()
    assert coef.c0 > 0
    # idling emits, cruising at urban speed emits more than nothing
    assert instantaneous_emission(coef, 13.9, 0.0) > 0
