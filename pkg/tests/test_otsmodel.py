from __future__ import annotations

from types import SimpleNamespace

import numpy as np
import pytest
from scipy.optimize import linprog, minimize

from aidcots import sens
from aidcots.cases import load_case
from aidcots.errors import InconsistentPoint, MissingSensitivities, UnboundedCost
from aidcots.mip.bnb import MIPResult, branch_and_bound, presolve_bounds
from aidcots.modeldesc import linearize
from aidcots.netmodel import Network, build_admittance, parse_matpower
from aidcots.otsmodel import (OTSConfig, augment_aidc, big_m, build_dc_ots, build_dc_opf, candidate_lines,
                              extract_solution, restricted_dc_equivalent, solve_model, to_lp_format)
from aidcots.tol import ToleranceConfig, ToleranceSet, build_tolerances

from conftest import two_bus_text

OFF = OTSConfig(protect_bridges=False)


def reference_dc_opf(net: Network, z=None) -> float:
    """Independent DC-OPF: dispatch and angles in one dense LP solved by HiGHS (linear costs only)."""
    z = net.full_mask() if z is None else np.asarray(z)
    N, G = net.n_bus, net.n_gen
    base = net.base_mva
    bdc = np.array([br.x / (br.r**2 + br.x**2) for br in net.branches])
    lines = [l for l in range(net.n_branch) if z[l] and net.in_service[l]]
    # variables: pg (G), theta (N)
    c = np.concatenate([[g.cost[1] * base if g.in_service else 0.0 for g in net.generators], np.zeros(N)])
    c0 = sum(g.cost[0] for g in net.generators if g.in_service)
    Aeq = np.zeros((N + 1, G + N))
    beq = np.zeros(N + 1)
    for k, g in enumerate(net.generators):
        Aeq[net.gen_bus_idx[k], k] += 1.0
    for l in lines:
        i, j = net.f_idx[l], net.t_idx[l]
        # outgoing flow b (theta_i - theta_j - shift) leaves bus i
        for bus, sgn in ((i, 1.0), (j, -1.0)):
            Aeq[bus, G + i] -= sgn * bdc[l]
            Aeq[bus, G + j] += sgn * bdc[l]
            beq[bus] -= sgn * bdc[l] * net.shift[l]
    beq[:N] += net.p_demand + net.g_shunt
    Aeq[N, G + net.slack_index] = 1.0
    Aub, bub = [], []
    for l in lines:
        row = np.zeros(G + N)
        i, j = net.f_idx[l], net.t_idx[l]
        row[G + i], row[G + j] = bdc[l], -bdc[l]
        off = bdc[l] * net.shift[l]
        Aub += [row, -row]
        bub += [net.rate_a[l] + off, net.rate_a[l] - off]
    bounds = [(g.p_min, g.p_max) if g.in_service else (0, 0) for g in net.generators] + [(-0.6, 0.6)] * N
    res = linprog(c, A_ub=np.array(Aub), b_ub=np.array(bub), A_eq=Aeq, b_eq=beq, bounds=bounds, method="highs")
    assert res.status == 0
    return res.fun + c0


@pytest.fixture(scope="module")
def bundle14():
    net = load_case("case14")
    from aidcots.acpf import solve_pf

    return sens.compute(build_admittance(net), solve_pf(net))


def test_big_m_examples(case14):
    fake = SimpleNamespace(b_series=np.array([-10.0]), shift=np.array([0.0]))
    assert big_m(fake, (-0.6, 0.6)).values[0] == pytest.approx(12.0)
    assert big_m(fake, (0.3, 0.3)).values[0] == 0.0
    ref = np.array([1.2 * br.x / (br.r**2 + br.x**2) for br in case14.branches])
    np.testing.assert_allclose(big_m(case14).values, ref, rtol=1e-13)
    with pytest.raises(ValueError):
        big_m(case14, (0.6, -0.6))


def test_case14_model_counts(case14):
    m = build_dc_ots(case14, cfg=OFF)
    names = m.var_names
    assert int(m.binary.sum()) == 20
    assert sum(n.startswith("f[") for n in names) == 20
    th = [m.index(f"theta[{i}]") for i in range(14)]
    assert len(th) == 14 and sum(m.lb[j] == m.ub[j] for j in th) == 1
    assert sum(n.startswith("pg[") for n in names) == 5


def test_bridge_protection(case14):
    assert len(candidate_lines(case14, OTSConfig())) == 19
    assert 13 not in candidate_lines(case14, OTSConfig())
    tf = [k for k, br in enumerate(case14.branches) if br.is_transformer]
    assert not set(tf) & set(candidate_lines(case14, OTSConfig(exclude_transformers=True)))


def test_single_line_only_topology():
    net = parse_matpower(two_bus_text(pd=30.0, rate=100.0))
    sol = solve_model(build_dc_ots(net, cfg=OFF), net)
    assert sol.z.tolist() == [1]
    assert sol.p_gen[0] == pytest.approx(0.3)


@pytest.mark.parametrize("name", ["case14", "case30"])
def test_fixed_topology_matches_reference_lp(name):
    net = load_case(name)
    sol = solve_model(build_dc_opf(net), net)
    assert sol.model_cost == pytest.approx(reference_dc_opf(net), rel=1e-6)
    z = net.full_mask()
    z[4] = 0
    assert solve_model(build_dc_opf(net, z), net).model_cost == pytest.approx(reference_dc_opf(net, z), rel=1e-6)


def test_all_closed_equals_opf(case14):
    m = build_dc_ots(case14, cfg=OFF)
    lb = m.lb.copy()
    lb[m.binaries] = 1.0
    sol = solve_model(m.with_bounds(lb=lb), case14)
    assert sol.model_cost == pytest.approx(reference_dc_opf(case14), rel=1e-9)


def test_concave_cost_rejected():
    text = two_bus_text().replace("2\t0\t0\t3\t0\t10\t0", "2\t0\t0\t3\t-1\t10\t0")
    net = parse_matpower(text)
    with pytest.raises(UnboundedCost):
        build_dc_ots(net)


def test_quadratic_cost_tangent_cuts():
    net = load_case("case3")
    assert any(g.cost[2] > 0 for g in net.generators)
    pwl = solve_model(build_dc_opf(net), net)
    # exact convex QP over the same DC constraints, dispatch only (no congestion on this case)
    base = net.base_mva
    gens = [k for k, g in enumerate(net.generators) if g.in_service]

    def cost(p):
        return sum(net.generators[k].cost_at(p[i] * base) for i, k in enumerate(gens))

    cons = [{"type": "eq", "fun": lambda p: p.sum() - net.p_demand.sum()}]
    bnds = [(net.generators[k].p_min, net.generators[k].p_max) for k in gens]
    exact = minimize(cost, pwl.p_gen[gens], bounds=bnds, constraints=cons, method="SLSQP",
                     options={"ftol": 1e-12, "maxiter": 500})
    tight = reference_congestion_free(net)
    if tight:
        assert pwl.model_cost <= exact.fun + 1e-6  # tangent cuts under-approximate
        assert pwl.model_cost == pytest.approx(exact.fun, rel=1e-3)
    # the reported cost at the dispatch itself is within the PWL tolerance of the true cost
    assert pwl.dispatch_cost == pytest.approx(cost(pwl.p_gen[gens]), rel=1e-3)


def reference_congestion_free(net: Network) -> bool:
    sol = solve_model(build_dc_opf(net), net)
    return bool(np.all(np.abs(sol.flows) < net.rate_a - 1e-6))


def test_noop_augmentation(case14, bundle14):
    L = case14.n_branch
    tols = ToleranceSet(np.full(L, np.inf), np.full(L, np.inf))
    base = solve_model(build_dc_ots(case14, cfg=OFF), case14)
    for reform in ("milp", "miqcqp", "misocp"):
        cfg = OTSConfig(protect_bridges=False, variant="aidc", reformulation=reform)
        m = augment_aidc(build_dc_ots(case14, cfg=cfg), bundle14.first, bundle14.second, tols, cfg)
        assert solve_model(m, case14).model_cost == pytest.approx(base.model_cost, abs=1e-6)


def test_missing_sensitivities(case14):
    with pytest.raises(MissingSensitivities):
        augment_aidc(build_dc_ots(case14), None, None, None, OTSConfig(variant="aidc"))


def test_tight_tolerance_fixes_lines(case14, bundle14):
    cfg = OTSConfig(protect_bridges=False, variant="aidc", gamma1=0.1, gamma2=0.1)
    tols = build_tolerances(bundle14.first, bundle14.second, case14, ToleranceConfig(cap_lin=1e-6))
    m = augment_aidc(build_dc_ots(case14, cfg=cfg), bundle14.first, bundle14.second, tols, cfg)
    assert len(m.meta["forced_closed"]) == 20
    lb, _, _ = presolve_bounds(linearize(m))
    assert np.all(lb[m.binaries] == 1.0)
    res = branch_and_bound(linearize(m))
    assert res.nodes <= 1


def test_restricted_equivalent(case14, bundle14):
    xi = bundle14.first.xi
    tcfg = ToleranceConfig(cap_lin=float(np.median(xi)))
    tols = build_tolerances(bundle14.first, bundle14.second, case14, tcfg)
    for g in (0.01, 1.0, 10.0):
        cfg = OTSConfig(protect_bridges=False, variant="aidc", gamma1=g, gamma2=g)
        full = augment_aidc(build_dc_ots(case14, cfg=cfg), bundle14.first, bundle14.second, tols, cfg)
        red = restricted_dc_equivalent(case14, cfg, bundle14.first, bundle14.second, tols)
        assert 0 < int(red.binary.sum()) < 20
        a, b = solve_model(full, case14), solve_model(red, case14)
        assert a.model_cost == pytest.approx(b.model_cost, abs=1e-6)
        assert a.lines_opened == b.lines_opened


def test_objective_nondecreasing_in_gamma1(case14, bundle14):
    tols = build_tolerances(bundle14.first, bundle14.second, case14)
    last = -np.inf
    for g in (0.0, 0.01, 0.1, 1.0):
        cfg = OTSConfig(protect_bridges=False, variant="aidc", gamma1=g, gamma2=0.01)
        m = augment_aidc(build_dc_ots(case14, cfg=cfg), bundle14.first, bundle14.second, tols, cfg)
        cost = solve_model(m, case14).model_cost
        assert cost >= last - 1e-9
        last = cost


def test_misocp_structure(case14, bundle14):
    tols = build_tolerances(bundle14.first, bundle14.second, case14)
    cfg = OTSConfig(variant="aidc", reformulation="misocp", gamma2=1.0)
    m = augment_aidc(build_dc_ots(case14, cfg=cfg), bundle14.first, bundle14.second, tols, cfg)
    assert len(m.cones) == int(m.binary.sum())
    lin = linearize(m)
    assert lin.is_linear and sum(n.endswith("_pos") for n in lin.row_names) == len(m.cones)


def test_extract_statuses(case14):
    m = build_dc_ots(case14)
    inf = extract_solution(m, MIPResult("infeasible", None, np.inf, np.inf, np.inf, 3, 3, 0.1))
    assert inf.status == "infeasible" and not inf.has_point
    good = branch_and_bound(linearize(m))
    tl = MIPResult("time_limit", good.x, good.objective, good.objective - 1.0, 1.0 / good.objective, 5, 9, 1.0)
    sol = extract_solution(m, tl)
    assert sol.status == "time_limit" and sol.gap > 0
    bad = good.x.copy()
    bad[m.index("f[0]")] += 1e-3
    with pytest.raises(InconsistentPoint):
        extract_solution(m, MIPResult("optimal", bad, good.objective, good.objective, 0, 1, 1, 0))


def test_solution_reports_opened_set(case14):
    sol = solve_model(build_dc_ots(case14, cfg=OFF), case14)
    assert sol.lines_opened == [k + 1 for k in range(20) if sol.z[k] == 0]
    assert sol.model_cost == pytest.approx(2051.526309, rel=1e-9)


def test_disconnection_flagged(case14):
    m = build_dc_ots(case14, cfg=OTSConfig(candidates=(13,)))
    ub = m.ub.copy()
    ub[m.index("z[13]")] = 0.0
    sol = solve_model(m.with_bounds(ub=ub), case14)
    assert sol.lines_opened == [14] and sol.disconnected


def test_lp_format(case14):
    text = to_lp_format(build_dc_ots(case14, cfg=OFF))
    assert text.startswith("\\") and "Binaries" in text and text.rstrip().endswith("End")
    assert "balance(0):" in text.replace("balance[0]", "balance(0)") or "balance[0]:" in text
    assert text.count("\n") > 100
