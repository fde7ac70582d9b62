"""AC feasibility evaluation of a switched topology.

The pipeline is: split off islands, redispatch active power with a DC-OPF
on the fixed topology, solve the AC power flow (the slack absorbs losses),
then adjust PV and slack voltage setpoints by sequential linear programming
to remove voltage, reactive and thermal violations where possible.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .acpf import PFState, branch_flows, injections, power_injection, solve_pf
from .errors import Infeasible
from .mip.simplex import LPData, solve_lp
from .netmodel import PQ, Network, build_admittance

logger = logging.getLogger(__name__)

CHECK_TOL = 1e-4
KINDS = ("v_low", "v_high", "q_min", "q_max", "p_min", "p_max", "thermal", "islanded")


@dataclass(frozen=True)
class Violation:
    kind: str
    entity: int  # 1-based bus or branch position in the original network
    magnitude: float  # p.u. excess beyond the limit
    value: float
    limit: float


@dataclass(frozen=True)
class EvalConfig:
    tol: float = CHECK_TOL
    repair: bool = True
    repair_iter: int = 30
    trust_radius: float = 0.05
    fd_step: float = 1e-6


@dataclass(frozen=True, eq=False)
class ACEvalReport:
    feasible: bool  # converged with no violation beyond tolerance
    violations: tuple[Violation, ...]
    total_gen_cost: float  # approximate AC cost: DC dispatch with slack losses
    dc_cost: float
    p_gen: np.ndarray
    q_gen: np.ndarray
    v_mag: np.ndarray
    v_ang: np.ndarray
    v_setpoint: np.ndarray
    islanded_buses: tuple[int, ...]
    losses: float
    converged: bool
    repair_iterations: int
    times: dict = field(default_factory=dict)

    @property
    def max_violation(self) -> float:
        return max((v.magnitude for v in self.violations), default=0.0)

    def to_dict(self) -> dict:
        return {
            "ac_feasible": bool(self.feasible),
            "approximate AC cost": _num(self.total_gen_cost),
            "dc_cost": _num(self.dc_cost),
            "converged": bool(self.converged),
            "max_violation": _num(self.max_violation),
            "violations": [asdict(v) for v in self.violations],
            "islanded_buses": list(self.islanded_buses),
            "losses": _num(self.losses),
            "repair_iterations": int(self.repair_iterations),
            "p_gen_mw": [_num(p) for p in self.p_gen],
            "q_gen_mvar": [_num(q) for q in self.q_gen],
            "v_mag": [_num(v) for v in self.v_mag],
            "times": {k: round(float(t), 6) for k, t in self.times.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _num(v: float):
    return None if v is None or not np.isfinite(v) else float(v)


def islands(net: Network, z) -> tuple[list[int], list[int]]:
    """Buses in the slack component, and the remaining (islanded) buses."""
    comps = net.components(z)
    main = comps[0]
    rest = sorted(b for c in comps[1:] for b in c)
    return main, rest


def redispatch_dc(net: Network, z=None) -> tuple[np.ndarray, float]:
    """DC-OPF dispatch (p.u., per generator) and cost on a fixed topology."""
    from .otsmodel import build_dc_opf, solve_model

    z = net.full_mask() if z is None else np.asarray(z)
    sol = solve_model(build_dc_opf(net, z), net)
    if sol.status != "optimal":
        raise Infeasible("dc-opf", f"fixed-topology DC dispatch is {sol.status}")
    return sol.p_gen, sol.dispatch_cost


class _Evaluator:
    """AC quantities and limit checks for a connected network at given dispatch."""

    def __init__(self, net: Network, p_gen: np.ndarray, tol: float):
        self.net = net
        self.view = build_admittance(net)
        self.p_gen = p_gen
        self.tol = tol
        kinds = net.bus_kind
        self.ctrl = np.array([k for k in range(net.n_bus) if kinds[k] != PQ], dtype=int)
        self.gens_at = {b: [k for k in range(net.n_gen) if net.gen_on[k] and net.gen_bus_idx[k] == b]
                        for b in self.ctrl}
        self.spec = injections(net, p_gen, np.zeros(net.n_gen))

    def solve(self, vset: np.ndarray, x0: PFState | None = None) -> PFState:
        return solve_pf(self.net, s=self.spec, x0=x0, v_set=vset)

    def bus_gen(self, st: PFState) -> tuple[np.ndarray, np.ndarray]:
        S = power_injection(self.view, st.v_mag, st.v_ang)
        return S.real + self.net.p_demand, S.imag + self.net.q_demand

    def margins(self, st: PFState) -> tuple[np.ndarray, list[tuple[str, int, float, float]]]:
        """Signed constraint values g <= 0 with labels (kind, element, value, limit)."""
        net = self.net
        vals, labels = [], []
        vm = st.v_mag
        for i in range(net.n_bus):
            vals += [net.v_min[i] - vm[i], vm[i] - net.v_max[i]]
            labels += [("v_low", i, vm[i], net.v_min[i]), ("v_high", i, vm[i], net.v_max[i])]
        pb, qb = self.bus_gen(st)
        for b in self.ctrl:
            gs = self.gens_at[b]
            qlo = sum(net.generators[k].q_min for k in gs)
            qhi = sum(net.generators[k].q_max for k in gs)
            vals += [qlo - qb[b], qb[b] - qhi]
            labels += [("q_min", b, qb[b], qlo), ("q_max", b, qb[b], qhi)]
        sl = net.slack_index
        gs = self.gens_at.get(sl, [])
        plo = sum(net.generators[k].p_min for k in gs)
        phi = sum(net.generators[k].p_max for k in gs)
        vals += [plo - pb[sl], pb[sl] - phi]
        labels += [("p_min", sl, pb[sl], plo), ("p_max", sl, pb[sl], phi)]
        Sf, St = branch_flows(self.view, st.v_mag, st.v_ang)
        for l, br in enumerate(net.branches):
            if not br.in_service or br.unlimited:
                continue
            m = max(abs(Sf[l]), abs(St[l]))
            vals.append(m - net.rate_a[l])
            labels.append(("thermal", l, m, net.rate_a[l]))
        return np.array(vals), labels

    def excess(self, g: np.ndarray) -> float:
        return float(np.maximum(g, 0.0).sum())


def _repair(ev: _Evaluator, vset: np.ndarray, st: PFState, cfg: EvalConfig) -> tuple[np.ndarray, PFState, int]:
    """SLP on voltage setpoints: minimise total violation within a shrinking box."""
    net = ev.net
    ctrl = ev.ctrl
    g, _ = ev.margins(st)
    best = ev.excess(g)
    r = cfg.trust_radius
    it = 0
    while it < cfg.repair_iter and best > 0.1 * cfg.tol and r > 1e-5:
        it += 1
        # finite-difference sensitivities of every margin to each setpoint, from warm starts
        D = np.zeros((g.size, ctrl.size))
        for c, b in enumerate(ctrl):
            vp = vset.copy()
            vp[b] += cfg.fd_step
            sp_ = ev.solve(vp, st)
            if not sp_.converged:
                D[:, c] = 0.0
                continue
            D[:, c] = (ev.margins(sp_)[0] - g) / cfg.fd_step
        active = np.flatnonzero(g > -0.1)
        nd, ns = ctrl.size, active.size
        lb = np.concatenate([np.maximum(-r, net.v_min[ctrl] - vset[ctrl]), np.zeros(ns)])
        ub = np.concatenate([np.minimum(r, net.v_max[ctrl] - vset[ctrl]), np.full(ns, np.inf)])
        A = np.hstack([D[active], -np.eye(ns)])
        lp = LPData(c=np.concatenate([np.zeros(nd), np.ones(ns)]), A=A, row_lo=np.full(ns, -np.inf),
                    row_hi=-g[active], lb=lb, ub=np.maximum(ub, lb), c0=0.0)
        res = solve_lp(lp)
        if res.status != "optimal":
            r *= 0.5
            continue
        trial = vset.copy()
        trial[ctrl] += res.x[:nd]
        st_t = ev.solve(trial, st)
        if not st_t.converged:
            r *= 0.5
            continue
        g_t, _ = ev.margins(st_t)
        e_t = ev.excess(g_t)
        if e_t < best - 1e-12:
            vset, st, g, best = trial, st_t, g_t, e_t
        else:
            r *= 0.5
    return vset, st, it


def evaluate(net: Network, z=None, cfg: EvalConfig | None = None, p_gen: np.ndarray | None = None) -> ACEvalReport:
    """Check whether topology ``z`` admits an AC operating point within limits.

    Parameters
    ----------
    net, z
        Network and switching mask (1 closed, 0 open).
    p_gen
        Optional per-generator active dispatch (p.u.); by default a DC-OPF
        on the fixed topology supplies it.
    """
    cfg = cfg or EvalConfig()
    z = net.full_mask() if z is None else np.asarray(z, dtype=int)
    times = {}
    t0 = time.perf_counter()
    main, rest = islands(net, z)
    sub, _ = net.subnetwork(main, z)
    keep_ids = {net.buses[b].id for b in main}
    gen_pos = [k for k, g in enumerate(net.generators) if g.bus in keep_ids]
    bus_pos = np.array(main, dtype=int)
    times["islanding"] = time.perf_counter() - t0
    # a cut-off load bus sheds its demand; cut-off buses without load are harmless
    viol: list[Violation] = [Violation("islanded", b + 1, float(net.p_demand[b]), float(net.p_demand[b]), 0.0)
                             for b in rest if net.p_demand[b] != 0 or net.q_demand[b] != 0]

    t0 = time.perf_counter()
    nanv = np.full(net.n_bus, np.nan)
    nang = np.full(net.n_gen, np.nan)
    if p_gen is None:
        try:
            pg_sub, dc_cost = redispatch_dc(sub)
        except Infeasible as exc:
            # flow limits (or capacity) make the dispatch impossible; no single branch is singled out
            logger.info("redispatch failed: %s", exc)
            viol.append(Violation("thermal", 0, 0.0, 0.0, 0.0))
            times["redispatch"] = time.perf_counter() - t0
            return ACEvalReport(False, tuple(viol), np.nan, np.nan, nang, nang, nanv, nanv, nanv,
                                tuple(b + 1 for b in rest), np.nan, False, 0, times)
    else:
        pg_sub = np.asarray(p_gen, dtype=float)[gen_pos]
        dc_cost = float(sum(sub.generators[k].cost_at(pg_sub[k] * net.base_mva)
                            for k in range(sub.n_gen) if sub.gen_on[k]))
    times["redispatch"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    ev = _Evaluator(sub, pg_sub, cfg.tol)
    vset = sub.v_setpoint.copy()
    st = ev.solve(vset)
    times["ac_pf"] = time.perf_counter() - t0
    if not st.converged:
        return ACEvalReport(False, tuple(viol), np.nan, dc_cost, nang, nang, nanv, nanv, nanv, tuple(b + 1 for b in rest),
                            np.nan, False, 0, times)

    t0 = time.perf_counter()
    iters = 0
    if cfg.repair:
        g, _ = ev.margins(st)
        if np.any(g > 0.1 * cfg.tol):
            vset, st, iters = _repair(ev, vset, st, cfg)
    times["repair"] = time.perf_counter() - t0

    g, labels = ev.margins(st)
    for val, (kind, el, value, limit) in zip(g, labels):
        if val > cfg.tol:
            pos = int(bus_pos[el]) + 1 if kind != "thermal" else int(_orig_branch(net, sub, z, el)) + 1
            viol.append(Violation(kind, pos, float(val), float(value), float(limit)))

    pb, qb = ev.bus_gen(st)
    p_out = np.zeros(net.n_gen)
    q_out = np.zeros(net.n_gen)
    p_out[gen_pos] = pg_sub
    sl = sub.slack_index
    for b in ev.ctrl:
        gs = ev.gens_at[b]
        if not gs:
            continue
        if b == sl:
            others = sum(pg_sub[k] for k in gs[1:])
            p_out[gen_pos[gs[0]]] = pb[b] - others
        # reactive output split by capability range
        span = np.array([sub.generators[k].q_max - sub.generators[k].q_min for k in gs])
        share = span / span.sum() if span.sum() > 0 else np.full(len(gs), 1.0 / len(gs))
        for k, w in zip(gs, share):
            q_out[gen_pos[k]] = qb[b] * w
    cost = float(sum(g_.cost_at(p_out[k] * net.base_mva) for k, g_ in enumerate(net.generators)
                     if g_.in_service and g_.bus in keep_ids))
    vm, va, vs = nanv.copy(), nanv.copy(), nanv.copy()
    vm[bus_pos], va[bus_pos], vs[bus_pos] = st.v_mag, st.v_ang, vset
    base = net.base_mva
    return ACEvalReport(
        feasible=not viol, violations=tuple(viol), total_gen_cost=cost, dc_cost=dc_cost,
        p_gen=p_out * base, q_gen=q_out * base, v_mag=vm, v_ang=va, v_setpoint=vs,
        islanded_buses=tuple(b + 1 for b in rest), losses=float(pb.sum() - sub.p_demand.sum()), converged=True, repair_iterations=iters, times=times,
    )


def _orig_branch(net: Network, sub: Network, z, k: int) -> int:
    ids = {b.id for b in sub.buses}
    pos = [l for l, br in enumerate(net.branches)
           if z[l] and br.in_service and br.from_bus in ids and br.to_bus in ids]
    return pos[k]
