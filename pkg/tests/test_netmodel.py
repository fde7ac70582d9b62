from __future__ import annotations

import numpy as np
import pytest

from aidcots.errors import DuplicateBusId, MalformedRow, MissingMatrix, NoSlackBus
from aidcots.netmodel import Network, build_admittance, incidence, parse_matpower, to_matpower

from conftest import matpower_text, two_bus_text


def dense_admittance(net: Network, z) -> np.ndarray:
    """Independent pi-model stamping, one branch at a time into a dense matrix."""
    n = net.n_bus
    Y = np.zeros((n, n), dtype=complex)
    pos = {b.id: k for k, b in enumerate(net.buses)}
    for k, br in enumerate(net.branches):
        if not (z[k] and br.in_service):
            continue
        i, j = pos[br.from_bus], pos[br.to_bus]
        y = 1.0 / complex(br.r, br.x)
        t = br.tap * np.exp(1j * br.shift)
        Y[i, i] += (y + 0.5j * br.b_charge) / abs(t) ** 2
        Y[j, j] += y + 0.5j * br.b_charge
        Y[i, j] += -y / np.conj(t)
        Y[j, i] += -y / t
    for k, b in enumerate(net.buses):
        Y[k, k] += complex(b.g_shunt, b.b_shunt)
    return Y


def test_case14_counts(case14):
    assert (case14.n_bus, case14.n_branch, case14.n_gen) == (14, 20, 5)
    assert case14.slack_index == 0


def test_two_bus_parse(two_bus):
    assert (two_bus.n_bus, two_bus.n_branch) == (2, 1)
    assert two_bus.p_demand[1] == pytest.approx(0.1)


def test_unlimited_rating_sentinel(two_bus):
    assert two_bus.branches[0].unlimited
    assert two_bus.rate_a[0] == pytest.approx(10.0 * max(two_bus.total_demand, 1.0))


def test_no_slack_raises():
    text = two_bus_text().replace("1\t3\t0", "1\t2\t0", 1)
    with pytest.raises(NoSlackBus):
        parse_matpower(text)


def test_missing_matrix_raises():
    text = two_bus_text()
    start = text.index("mpc.branch")
    with pytest.raises(MissingMatrix):
        parse_matpower(text[:start])


def test_malformed_row_reports_line():
    text = two_bus_text().replace("\t0.1\t", "\tabc\t", 1)
    with pytest.raises(MalformedRow) as exc:
        parse_matpower(text)
    bad_line = next(k for k, ln in enumerate(text.splitlines(), 1) if "abc" in ln)
    assert exc.value.line == bad_line


def test_duplicate_bus_raises():
    buses = [[1, 3, 0, 0, 0, 0, 1, 1.0, 0, 100, 1, 1.1, 0.9], [1, 1, 0, 0, 0, 0, 1, 1.0, 0, 100, 1, 1.1, 0.9]]
    text = matpower_text(buses, [[1, 0, 0, 1, -1, 1.0, 100, 1, 1, 0]], [[1, 1, 0, 0.1, 0, 0, 0, 0, 0, 0, 1, -360, 360]])
    with pytest.raises(DuplicateBusId):
        parse_matpower(text)


def test_single_line_stamp():
    net = parse_matpower(two_bus_text(r=0.0, x=0.1, pd=0.0))
    B = build_admittance(net).B.toarray()
    assert B[0, 1] == pytest.approx(10.0)
    assert B[0, 0] == pytest.approx(-10.0)


def test_empty_topology_only_shunts(case14):
    Y = build_admittance(case14, np.zeros(case14.n_branch, dtype=int)).Y.toarray()
    np.testing.assert_array_equal(Y, np.diag(case14.g_shunt + 1j * case14.b_shunt))


@pytest.mark.parametrize("name", ["case14", "case30", "case57"])
def test_admittance_matches_dense_oracle(name):
    from aidcots.cases import load_case

    net = load_case(name)
    z = net.full_mask()
    Y = build_admittance(net, z).Y.toarray()
    np.testing.assert_allclose(Y, dense_admittance(net, z), rtol=0, atol=1e-12)
    z[3] = 0
    np.testing.assert_allclose(build_admittance(net, z).Y.toarray(), dense_admittance(net, z), rtol=0, atol=1e-12)


def test_rebuild_is_bit_identical(case14):
    a, b = build_admittance(case14).Y, build_admittance(case14).Y
    assert np.array_equal(a.toarray(), b.toarray())


def test_opening_touches_four_positions(case14):
    full = build_admittance(case14).Y.toarray()
    for line in range(case14.n_branch):
        z = case14.full_mask()
        z[line] = 0
        diff = np.argwhere(build_admittance(case14, z).Y.toarray() != full)
        i, j = case14.f_idx[line], case14.t_idx[line]
        assert {tuple(d) for d in diff} <= {(i, i), (i, j), (j, i), (j, j)}


def test_incidence(case14, two_bus):
    A = incidence(case14)
    assert A.shape == (14, 20) and A.nnz == 40
    np.testing.assert_array_equal(np.asarray(A.sum(axis=0)).ravel(), 0)
    np.testing.assert_array_equal(incidence(two_bus).toarray().ravel(), [1, -1])


def test_json_round_trip(case30):
    back = Network.from_json(case30.to_json())
    for attr in ("p_demand", "q_demand", "b_shunt", "g_series", "b_series", "rate_a", "tap", "v_min"):
        np.testing.assert_allclose(getattr(back, attr), getattr(case30, attr), rtol=1e-12)


def test_matpower_round_trip(case14):
    back = parse_matpower(to_matpower(case14))
    np.testing.assert_allclose(back.b_series, case14.b_series, rtol=1e-12)
    np.testing.assert_allclose(back.p_demand, case14.p_demand, rtol=1e-12)
    assert [g.cost for g in back.generators] == [g.cost for g in case14.generators]


def test_out_of_service_line_is_open():
    text = two_bus_text()
    net = parse_matpower(text)
    lines = text.splitlines()
    k = next(i for i, ln in enumerate(lines) if ln.startswith("mpc.branch"))
    row = lines[k + 1].split("\t")
    row[11] = "0"  # status column
    lines[k + 1] = "\t".join(row)
    lines.insert(k + 1, "\t1\t2\t0\t0.2\t0\t0\t0\t0\t0\t0\t1\t-360\t360;")
    net = parse_matpower("\n".join(lines))
    assert net.full_mask().tolist() == [1, 0]
    assert net.bridges() == {0}


def test_bridges_case14(case14):
    # bus 8 hangs off a single branch
    b = case14.bridges()
    assert len(b) == 1
    line = next(iter(b))
    assert 8 in (case14.branches[line].from_bus, case14.branches[line].to_bus)


def test_components_slack_first(case14):
    comps = case14.components(case14.mask_opening([14]))
    assert case14.slack_index in comps[0]
    assert len(comps) == 2
