import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hostcap.fixtures import demo_feeder, three_bus, three_bus_profiles
from hostcap.grid import BaselineProfiles, DimensionMismatch, Network, solve_distflow
from hostcap.oracle import (
    DIVERGENCE,
    EV,
    LEVEL1_CHARGER_KW,
    OVERVOLTAGE,
    PV,
    THERMAL,
    UNDERVOLTAGE,
    FeasibilityOracle,
    Location,
    ProfileSet,
    Scenario,
    ScenarioError,
    aggregate_load,
    apply_scenario,
    evaluate_scenario,
    evaluate_timestep,
    read_profiles,
    validate_scenario,
    write_profiles,
)


def with_T(net: Network, T: int) -> Network:
    base = BaselineProfiles(np.repeat(net.baseline.d[:, :1], T, axis=1), np.repeat(net.baseline.e[:, :1], T, axis=1))
    return Network(net.buses, net.lines, net.root_bus, base, base_kva=net.base_kva)


def ev_at(bus, kw, profile_type=0, sid=0):
    return Scenario(sid, (Location(bus, EV, kw, 1.0, profile_type),))


def leaf_voltage(net, kw, kind=EV):
    p = -net.baseline.d[:, 0].copy()
    q = -net.baseline.e[:, 0].copy()
    p[2] += -kw if kind == EV else kw
    return math.sqrt(solve_distflow(net, p, q, tol=1e-13).v[2])


def bisect_size(net, target, kind, lo, hi):
    """Installed kW at bus 2 that puts its voltage magnitude at ``target``."""
    f = lambda s: leaf_voltage(net, s, kind) - target
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if (f(mid) > 0) == (f(lo) > 0):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# -- injections --------------------------------------------------------------


def test_empty_scenario_is_baseline():
    net = demo_feeder()
    p, q = apply_scenario(net, Scenario(0), {}, 50)
    assert np.array_equal(p, -net.baseline.d[:, 50])
    assert np.array_equal(q, -net.baseline.e[:, 50])


def test_single_pv_formula():
    net = demo_feeder()
    d = net.baseline.d.copy()
    d[3, :] = 1.0
    net = Network(net.buses, net.lines, net.root_bus, BaselineProfiles(d, net.baseline.e))
    profiles = {PV: ProfileSet(PV, np.full((1, net.baseline.T), 0.8))}
    s = Scenario(0, (Location("3", PV, 5.0, 1.0, 0, eta=1.0),))
    p, q = apply_scenario(net, s, profiles, 7)
    assert p[3] == pytest.approx(3.0, abs=1e-12)
    assert q[3] == -net.baseline.e[3, 7]


def test_two_ev_locations_add():
    net = demo_feeder()
    profiles = {EV: ProfileSet(EV, -np.ones((1, net.baseline.T)))}
    loc = Location("4", EV, 1, LEVEL1_CHARGER_KW)
    p0, _ = apply_scenario(net, Scenario(0), profiles, 0)
    p, _ = apply_scenario(net, Scenario(1, (loc, loc)), profiles, 0)
    assert p0[4] - p[4] == pytest.approx(3.84, abs=1e-12)


def test_power_factor_reactive_share():
    net = demo_feeder()
    profiles = {PV: ProfileSet(PV, np.ones((1, net.baseline.T)))}
    s = Scenario(0, (Location("5", PV, 10.0, 1.0, 0, eta=0.8),))
    p, q = apply_scenario(net, s, profiles, 0)
    p0, q0 = apply_scenario(net, Scenario(0), profiles, 0)
    assert p[5] - p0[5] == pytest.approx(10.0)
    assert q[5] - q0[5] == pytest.approx(7.5)  # 10 * tan(arccos 0.8)


def test_step_out_of_range():
    with pytest.raises(DimensionMismatch):
        apply_scenario(three_bus(), Scenario(0), {}, 1)


def test_aggregate_load_sums_buses():
    net = demo_feeder()
    profiles = {EV: ProfileSet(EV, -np.ones((1, net.baseline.T)))}
    agg = aggregate_load(net, ev_at("8", 3.0), profiles)
    assert np.allclose(agg, net.baseline.d.sum(axis=0) + 3.0)


# -- single steps ------------------------------------------------------------


def test_empty_scenario_feasible():
    ok, viol = evaluate_timestep(three_bus(), Scenario(0), three_bus_profiles(), 0)
    assert ok == 1 and viol == []


def test_constructed_undervoltage_magnitude():
    net = three_bus()
    size = bisect_size(net, 0.94, EV, 0.0, 20.0)
    ok, viol = evaluate_timestep(net, ev_at("2", size), three_bus_profiles(), 0)
    assert ok == 0
    worst = [v for v in viol if v.kind == UNDERVOLTAGE]
    assert worst and worst[0].element == "2"
    assert worst[0].magnitude == pytest.approx(0.01, abs=1e-6)


def test_constructed_overvoltage_from_pv_backfeed():
    net = three_bus()
    size = bisect_size(net, 1.06, PV, 0.0, 30.0)
    profiles = {PV: ProfileSet(PV, np.ones((1, 1)))}
    ok, viol = evaluate_timestep(net, Scenario(0, (Location("2", PV, size),)), profiles, 0)
    assert ok == 0
    over = [v for v in viol if v.kind == OVERVOLTAGE]
    assert over and over[0].element == "2"
    assert over[0].magnitude == pytest.approx(0.01, abs=1e-6)


def test_thermal_violation_recorded():
    net = demo_feeder()
    profiles = {EV: ProfileSet(EV, -np.ones((1, net.baseline.T)))}
    # 80 kW at bus 13 is twice the 40 kVA rating of its lateral
    ok, viol = evaluate_timestep(net, ev_at("13", 80.0), profiles, 0)
    assert ok == 0
    assert any(v.kind == THERMAL and v.element in ("12-13", "3-12") for v in viol)


def test_divergence_is_infeasible_not_error():
    net = three_bus()
    ok, viol = evaluate_timestep(net, ev_at("2", 60.0), three_bus_profiles(), 0)
    assert ok == 0
    assert viol[0].kind == DIVERGENCE


# -- scenario verdicts -------------------------------------------------------


def two_bad_steps():
    """T = 144 three-bus network whose scenario fails exactly at two steps."""
    net = with_T(three_bus(), 144)
    shape = np.zeros((1, 144))
    shape[0, [10, 100]] = -1.0
    return net, {EV: ProfileSet(EV, shape)}, ev_at("2", 4.0)


def test_142_of_144_threshold():
    net, profiles, s = two_bad_steps()
    v98 = evaluate_scenario(net, s, profiles, 0.98)
    assert v98.per_step.sum() == 142
    assert v98.pass_fraction == 142 / 144
    assert v98.label == 1 and v98.concerning
    v1 = evaluate_scenario(net, s, profiles, 1.0)
    assert v1.label == 0
    assert {w.t for w in v1.worst_violations} == {10, 100}


def test_eps_zero_always_feasible():
    net, profiles, s = two_bad_steps()
    big = ev_at("2", 60.0)
    assert evaluate_scenario(net, big, profiles, 0.0).label == 1


def test_all_pass_unit_fraction():
    v = evaluate_scenario(three_bus(), Scenario(0), three_bus_profiles(), 1.0)
    assert v.label == 1 and v.pass_fraction == 1.0 and not v.concerning


def test_eps_out_of_range():
    with pytest.raises(ValueError):
        evaluate_scenario(three_bus(), Scenario(0), three_bus_profiles(), 1.5)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 8.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_label_monotone_in_eps(kw, e1, e2):
    net = with_T(three_bus(), 12)
    shape = -np.linspace(0, 1, 12)[None, :]
    profiles = {EV: ProfileSet(EV, shape)}
    lo, hi = sorted((e1, e2))
    v_hi = evaluate_scenario(net, ev_at("2", kw), profiles, hi)
    v_lo = evaluate_scenario(net, ev_at("2", kw), profiles, lo)
    assert v_hi.label <= v_lo.label
    assert v_hi.per_step.sum() / 12 == v_hi.pass_fraction
    assert v_hi.label == int(v_hi.pass_fraction >= hi)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 4), st.floats(0, 4), st.floats(0, 1), st.floats(0, 1))
def test_load_monotonicity_three_bus(a, b, sa, sb):
    net, profiles = three_bus(), three_bus_profiles()
    big = Scenario(0, (Location("1", EV, a), Location("2", EV, b)))
    small = Scenario(1, (Location("1", EV, a * sa), Location("2", EV, b * sb)))
    if evaluate_scenario(net, big, profiles).label == 1:
        assert evaluate_scenario(net, small, profiles).label == 1


def test_empty_scenario_matches_baseline_on_fixtures():
    for net in (three_bus(), demo_feeder()):
        v = evaluate_scenario(net, Scenario(0), {}, 1.0)
        assert v.label == 1 and v.pass_fraction == 1.0


def test_oracle_deterministic_and_parallel_consistent():
    net = demo_feeder()
    T = net.baseline.T
    profiles = {EV: ProfileSet(EV, -np.ones((2, T)) * np.array([[1.0], [0.5]]))}
    scenarios = [ev_at(str(1 + k % 14), 10.0 * k, k % 2, sid=k) for k in range(8)]
    oracle = FeasibilityOracle(net, profiles, 0.98)
    seq = oracle.evaluate_many(scenarios)
    par = oracle.evaluate_many(scenarios, workers=2)
    again = oracle.evaluate_many(scenarios)
    for a, b, c in zip(seq, par, again):
        assert a.label == b.label == c.label
        assert np.array_equal(a.per_step, b.per_step)
        assert a.worst_violations == c.worst_violations


# -- validation and files ----------------------------------------------------


def test_validate_scenario_problems():
    net = three_bus()
    bad = Scenario(
        0,
        (
            Location("9", EV, 1.0),
            Location("1", EV, -1.0),
            Location("1", EV, 1.0, profile_type=3),
            Location("1", PV, 1.0),
            Location("1", EV, 1.0, eta=0.0),
        ),
    )
    problems = validate_scenario(net, bad, three_bus_profiles())
    text = " ".join(problems)
    for needle in ("unknown bus", "negative size", "out of range", "no PV profiles", "power factor"):
        assert needle in text


def test_profile_sign_convention():
    with pytest.raises(ScenarioError):
        ProfileSet(EV, np.ones((1, 3)))
    with pytest.raises(ScenarioError):
        ProfileSet(PV, -np.ones((1, 3)))


def test_profile_csv_roundtrip(tmp_path):
    ps = ProfileSet(PV, np.random.default_rng(0).uniform(0, 1, (3, 6)))
    path = tmp_path / "pv.csv"
    write_profiles(ps, path)
    assert path.read_text().splitlines()[0] == "type_id,t0,t1,t2,t3,t4,t5"
    back = read_profiles(path, PV)
    assert np.array_equal(back.shapes, ps.shapes)


def test_profile_csv_negate_and_sign_check(tmp_path):
    path = tmp_path / "ev.csv"
    path.write_text("type_id,t0,t1\n0,1.0,0.5\n1,0.0,1.0\n")
    with pytest.raises(ScenarioError):
        read_profiles(path, EV)
    ps = read_profiles(path, EV, negate=True)
    assert np.array_equal(ps.shapes, [[-1.0, -0.5], [0.0, -1.0]])


def test_profile_csv_bad_header(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("type,t0\n0,1\n")
    with pytest.raises(ScenarioError):
        read_profiles(path, PV)


def test_scenario_dict_roundtrip():
    s = Scenario(7, (Location("3", PV, 2.0, 25.0, 4, 0.95), Location("1", EV, 3, 1.92, 1)), {"lambda": 1.2})
    assert Scenario.from_dict(s.to_dict()) == s
    assert s.total_ev == 3 and s.total_pv_kw == 50.0
