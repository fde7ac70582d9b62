from __future__ import annotations

import numpy as np
import pytest

from aidcots.acpf import (PFState, UnknownIndexing, injections, mismatch, pf_jacobian, solve_pf)
from aidcots.cases import load_case
from aidcots.errors import DisconnectedNetwork
from aidcots.netmodel import build_admittance, parse_matpower

from conftest import two_bus_text


def test_two_bus_closed_form():
    # lossless line x = 0.1 with a 0.1 p.u. load: V = cos(theta), sin(2 theta) = -0.02
    net = parse_matpower(two_bus_text(pd=10.0))
    st = solve_pf(net)
    theta = 0.5 * np.arcsin(-0.02)
    assert st.converged
    assert st.v_ang[1] == pytest.approx(theta, abs=1e-12)
    assert st.v_mag[1] == pytest.approx(np.cos(theta), abs=1e-12)
    view = build_admittance(net)
    assert np.max(np.abs(mismatch(view, st, injections(net)))) <= 1e-10


def test_zero_injection_flat_residual():
    net = parse_matpower(two_bus_text(pd=0.0))
    idx = UnknownIndexing.for_network(net)
    x = PFState(np.ones(2), np.zeros(2), False, 0, np.nan, idx, (), net.full_mask())
    np.testing.assert_array_equal(mismatch(build_admittance(net), x, injections(net)), 0.0)
    st = solve_pf(net)
    assert st.iterations <= 1


def test_indexing_layout(case14):
    idx = UnknownIndexing.for_network(case14)
    n_pq = sum(k == "PQ" for k in case14.bus_kind)
    assert idx.n_x == case14.n_bus - 1 + n_pq
    x = np.arange(idx.n_x, dtype=float)
    vm, va = idx.unpack(x, np.ones(14), np.zeros(14))
    np.testing.assert_array_equal(idx.pack(vm, va), x)


def test_jacobian_matches_fd(case14):
    rng = np.random.default_rng(3)
    view = build_admittance(case14)
    st = solve_pf(case14)
    idx = st.indexing
    x0 = st.x + 1e-2 * rng.standard_normal(idx.n_x)
    base = st.with_x(x0)
    s = injections(case14)
    J = pf_jacobian(view, base).toarray()
    h = 1e-6
    fd = np.zeros_like(J)
    for k in range(idx.n_x):
        e = np.zeros(idx.n_x)
        e[k] = h
        fd[:, k] = (mismatch(view, base.with_x(x0 + e), s) - mismatch(view, base.with_x(x0 - e), s)) / (2 * h)
    np.testing.assert_allclose(fd, J, rtol=1e-6, atol=1e-6 * np.abs(J).max())


def test_jacobian_deterministic(case14, state14):
    view = build_admittance(case14)
    a = pf_jacobian(view, state14).toarray()
    assert np.array_equal(a, pf_jacobian(view, state14).toarray())


def test_lossless_flat_jacobian():
    net = parse_matpower(two_bus_text(pd=0.0))
    st = solve_pf(net)
    J = pf_jacobian(build_admittance(net), st).toarray()
    # dP2/dtheta2 = 10, dQ2/dV2 = 10 at flat start for x = 0.1
    np.testing.assert_allclose(J, np.diag([10.0, 10.0]), atol=1e-12)


def test_mismatch_grows_linearly(case14, state14):
    view = build_admittance(case14)
    s = injections(case14)
    d = np.random.default_rng(0).standard_normal(state14.indexing.n_x)
    J = pf_jacobian(view, state14)
    for eps in (1e-4, 1e-5):
        m = mismatch(view, state14.with_x(state14.x + eps * d), s)
        assert np.linalg.norm(m) == pytest.approx(eps * np.linalg.norm(J @ d), rel=1e-2)


@pytest.mark.parametrize("name", ["case14", "case30", "case57", "case118"])
def test_cases_converge_quadratically(name):
    st = solve_pf(load_case(name))
    assert st.converged and st.iterations <= 10
    h = [m for m in st.history if m > 0]
    assert h[-1] <= 1e4 * h[-2] ** 2
    net = load_case(name)
    assert np.max(np.abs(mismatch(build_admittance(net), st, injections(net)))) <= 1e-8


def test_non_convergence_is_not_error():
    st = solve_pf(load_case("case39"))
    assert not st.converged


def test_disconnected_raises(case14):
    with pytest.raises(DisconnectedNetwork):
        solve_pf(case14, case14.mask_opening([14]))


def test_pv_setpoints_held(case14, state14):
    pv = [k for k, kind in enumerate(case14.bus_kind) if kind != "PQ"]
    np.testing.assert_allclose(state14.v_mag[pv], case14.v_setpoint[pv])
    assert state14.v_ang[case14.slack_index] == 0.0
