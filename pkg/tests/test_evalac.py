from __future__ import annotations

import json

import numpy as np
import pytest

from aidcots.errors import Infeasible
from aidcots.evalac import KINDS, EvalConfig, evaluate, islands, redispatch_dc
from aidcots.netmodel import parse_matpower

from conftest import two_bus_text

DC_SET_14 = [3, 5, 9, 11, 14, 19, 20]


@pytest.fixture(scope="module")
def base14(case14):
    return evaluate(case14)


def test_base_topology_feasible(base14):
    assert base14.converged and base14.feasible and not base14.violations
    assert base14.losses >= 0
    assert base14.total_gen_cost > base14.dc_cost  # slack pays for the losses


def test_dc_switching_set_infeasible(case14):
    rep = evaluate(case14, case14.mask_opening(DC_SET_14))
    assert not rep.feasible
    assert {v.kind for v in rep.violations} <= set(KINDS)
    assert all(v.magnitude >= 0 for v in rep.violations)


def test_dc_redispatch_below_ac_baseline(case14):
    p, cost = redispatch_dc(case14)
    assert cost < 2178.08
    assert p.sum() == pytest.approx((case14.p_demand + case14.g_shunt).sum(), rel=1e-9)


def test_single_generator_serves_demand():
    net = parse_matpower(two_bus_text(pd=40.0))
    p, cost = redispatch_dc(net)
    assert p[0] == pytest.approx(0.4, abs=1e-9)
    assert cost == pytest.approx(10.0 * 40.0, rel=1e-9)


def test_demand_above_capacity_is_infeasible():
    net = parse_matpower(two_bus_text(pd=300.0))  # the generator tops out at 200 MW
    with pytest.raises(Infeasible):
        redispatch_dc(net)
    rep = evaluate(net)
    assert not rep.feasible and not rep.converged


def test_islanded_load_bus_reported():
    net = parse_matpower(two_bus_text(pd=40.0))
    rep = evaluate(net, [0])
    assert not rep.feasible
    assert rep.islanded_buses == (2,)
    assert [v for v in rep.violations if v.kind == "islanded"][0].entity == 2


def test_islanded_reporting_is_monotone(case14):
    # structural check: opening more lines never drops an islanded load bus
    rng = np.random.default_rng(11)
    cfg = EvalConfig(repair=False)
    radial = [14, 17, 20]  # lines whose loss strands buses in a thinned 14-bus grid
    for _ in range(4):
        extra = sorted(int(k) for k in rng.choice(np.arange(1, 21), 3, replace=False))
        small = sorted(set(radial[:1] + extra[:1]))
        large = sorted(set(small + extra + radial))
        a = {v.entity for v in evaluate(case14, case14.mask_opening(small), cfg).violations if v.kind == "islanded"}
        b = {v.entity for v in evaluate(case14, case14.mask_opening(large), cfg).violations if v.kind == "islanded"}
        assert a <= b
        _, rest_small = islands(case14, case14.mask_opening(small))
        _, rest_large = islands(case14, case14.mask_opening(large))
        assert set(rest_small) <= set(rest_large)


def test_deterministic_report(case14, base14):
    again = evaluate(case14)
    a, b = base14.to_dict(), again.to_dict()
    a.pop("times"), b.pop("times")
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_report_fields(base14):
    d = json.loads(base14.to_json())
    for key in ("ac_feasible", "approximate AC cost", "dc_cost", "converged", "max_violation", "violations",
                "islanded_buses", "losses", "repair_iterations", "p_gen_mw", "q_gen_mvar", "v_mag", "times"):
        assert key in d
    assert d["ac_feasible"] is True and d["violations"] == []


def test_thermal_violation_detected():
    net = parse_matpower(two_bus_text(pd=40.0, r=0.01, rate=30.0))
    rep = evaluate(net, cfg=EvalConfig(repair=False))
    # the DC dispatch sees the rating too; an infeasible redispatch is also a thermal verdict
    assert not rep.feasible and any(v.kind == "thermal" for v in rep.violations)


def test_voltage_violation_detected_and_repaired():
    net = parse_matpower(two_bus_text(pd=80.0, qd=40.0, x=0.3))
    raw = evaluate(net, cfg=EvalConfig(repair=False))
    assert raw.converged and not raw.feasible
    low = [v for v in raw.violations if v.kind == "v_low"]
    assert low and low[0].entity == 2 and low[0].value < 0.9
    fixed = evaluate(net)
    assert fixed.feasible and fixed.repair_iterations > 0
    assert fixed.v_setpoint[0] > net.v_setpoint[0]
