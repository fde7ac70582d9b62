"""DC-OTS and AC-informed DC-OTS model construction.

The DC flow on line ``l`` from ``i`` to ``j`` is
``f = b_l (theta_i - theta_j - shift_l)`` with ``b_l = x/(r^2 + x^2)``, the
negated imaginary part of the series admittance (taps are ignored, as is
usual for DC models). Dispatch variables are per-unit; objective terms are
in dollars.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import Infeasible, InconsistentPoint, MissingSensitivities, UnboundedCost
from .modeldesc import EQ, GE, LE, AbsCone, ModelBuilder, ModelDescription, QuadRow, linearize, to_lp_format
from .netmodel import Network

logger = logging.getLogger(__name__)

VARIANTS = ("dc", "aidc")
REFORMULATIONS = ("miqcqp", "milp", "misocp")
DEFAULT_BOX = (-0.6, 0.6)


@dataclass(frozen=True)
class OTSConfig:
    variant: str = "dc"
    reformulation: str = "milp"
    gamma1: float = 0.0
    gamma2: float = 0.0
    angle_box: tuple[float, float] = DEFAULT_BOX
    protect_bridges: bool = True
    exclude_transformers: bool = False
    candidates: tuple[int, ...] | None = None  # explicit 0-based lines; overrides the filters
    pwl_segments: int = 8
    pwl_rel_error: float = 1e-3

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.reformulation not in REFORMULATIONS:
            raise ValueError(f"reformulation must be one of {REFORMULATIONS}")
        if not (np.isfinite(self.gamma1) and np.isfinite(self.gamma2)) or self.gamma1 < 0 or self.gamma2 < 0:
            raise ValueError("gamma weights must be finite and non-negative")
        if self.angle_box[0] > self.angle_box[1]:
            raise ValueError("angle box lower end exceeds upper end")
        if self.pwl_segments < 2:
            raise ValueError("need at least two cost segments")


@dataclass(frozen=True, eq=False)
class BigMVector:
    values: np.ndarray
    angle_box: tuple[float, float]


@dataclass(frozen=True, eq=False)
class OTSSolution:
    z: np.ndarray
    p_gen: np.ndarray
    theta: np.ndarray
    flows: np.ndarray
    model_cost: float
    status: str
    gap: float
    wall_time: float
    dispatch_cost: float = np.nan
    repair_cost: float = np.nan
    disconnected: bool = False
    nodes: int = 0

    @property
    def lines_opened(self) -> list[int]:
        """1-based branch positions with z = 0 among in-service lines."""
        return [int(k) + 1 for k in np.flatnonzero(self.z == 0)]

    @property
    def has_point(self) -> bool:
        return self.p_gen is not None and self.p_gen.size > 0


def dc_susceptance(net: Network) -> np.ndarray:
    return -net.b_series


def big_m(net: Network, angle_box: tuple[float, float] = DEFAULT_BOX) -> BigMVector:
    """M_l = |b_l| (theta_max - theta_min), widened by |b_l shift_l| on phase shifters."""
    lo, hi = angle_box
    if lo > hi:
        raise ValueError("angle box lower end exceeds upper end")
    b = np.abs(dc_susceptance(net))
    return BigMVector(b * (hi - lo) + b * np.abs(net.shift), (float(lo), float(hi)))


def candidate_lines(net: Network, cfg: OTSConfig) -> list[int]:
    """0-based lines carrying a switching variable."""
    if cfg.candidates is not None:
        cand = sorted(set(int(k) for k in cfg.candidates))
        bad = [k for k in cand if not (0 <= k < net.n_branch and net.in_service[k])]
        if bad:
            raise ValueError(f"candidate lines not in service: {[k + 1 for k in bad]}")
        return cand
    out = [k for k, br in enumerate(net.branches) if br.in_service and br.switchable]
    if cfg.exclude_transformers:
        out = [k for k in out if not net.branches[k].is_transformer]
    if cfg.protect_bridges:
        bridges = net.bridges()
        out = [k for k in out if k not in bridges]
    return out


def _cost_terms(net: Network, cfg: OTSConfig):
    """Per-generator linear cost per p.u. plus tangent cuts for convex quadratic parts."""
    base = net.base_mva
    lin, const, cuts = [], [], []
    for k, g in enumerate(net.generators):
        c0, c1, c2 = g.cost
        if c2 < 0:
            raise UnboundedCost(k)
        if c2 == 0 or g.p_max <= g.p_min:
            lin.append(c1 * base + (c2 * base**2 * (g.p_min + g.p_max) if c2 else 0.0))
            const.append(c0 - (c2 * base**2 * g.p_min * g.p_max if c2 else 0.0))
            cuts.append(None)
            continue
        pts = _tangent_points(g, base, cfg)
        # tangent at p: c0 + c1 P + c2 (2 p P - p^2), P in MW
        cuts.append([(c1 * base + 2 * c2 * p * base, c0 - c2 * p * p) for p in pts])
        lin.append(0.0)
        const.append(0.0)
    return lin, const, cuts


def _tangent_points(g, base: float, cfg: OTSConfig, max_points: int = 4096) -> np.ndarray:
    """Tangent abscissae (MW) keeping the under-approximation within pwl_rel_error of the cost.

    Between neighbouring tangents at p < q the largest gap is c2 (q - p)^2 / 4,
    so q is pushed as far as that gap allows relative to the smallest cost on
    [p, q]. Near zero cost the budget uses the cost 1% into the range.
    """
    c0, c1, c2 = g.cost
    lo, hi = g.p_min * base, g.p_max * base
    rtol = cfg.pwl_rel_error
    floor = max(abs(g.cost_at(lo + 0.01 * (hi - lo))), 1e-12)

    def cmin(a, b):
        vals = [g.cost_at(a), g.cost_at(b)]
        vertex = -c1 / (2 * c2)
        if a < vertex < b:
            vals.append(g.cost_at(vertex))
        return min(vals)

    pts = [lo]
    while pts[-1] < hi and len(pts) < max_points:
        p = pts[-1]
        step = hi - p
        while c2 * step**2 / 4 > rtol * max(cmin(p, p + step), floor):
            step *= 0.5
        pts.append(min(p + step, hi))
    pts = np.union1d(pts, np.linspace(lo, hi, cfg.pwl_segments))
    return pts


def _build(net: Network, bigM: BigMVector, cfg: OTSConfig, candidates: Sequence[int],
           closed: np.ndarray | None = None) -> ModelDescription:
    mb = ModelBuilder()
    lo, hi = bigM.angle_box
    b = dc_susceptance(net)
    closed = net.in_service.copy() if closed is None else (np.asarray(closed, bool) & net.in_service)
    cand = [k for k in candidates if closed[k]]
    lin, const, cuts = _cost_terms(net, cfg)
    gen_vars, cost_vars = [], {}
    for k, g in enumerate(net.generators):
        on = g.in_service
        j = mb.add_var(f"pg[{k}]", g.p_min if on else 0.0, g.p_max if on else 0.0, cost=lin[k] if on else 0.0)
        gen_vars.append(j)
        if on:
            mb.c0 += const[k]
        if on and cuts[k] is not None:
            e = mb.add_var(f"gcost[{k}]", -np.inf, np.inf, cost=1.0)
            cost_vars[k] = e
            for s, (slope, icpt) in enumerate(cuts[k]):
                mb.add_row(f"gcut[{k},{s}]", {e: 1.0, j: -slope}, GE, icpt)
    th = []
    for i in range(net.n_bus):
        fixed = i == net.slack_index
        th.append(mb.add_var(f"theta[{i}]", 0.0 if fixed else lo, 0.0 if fixed else hi))
    fl, zv = {}, {}
    for l in range(net.n_branch):
        if closed[l]:
            rate = net.rate_a[l]
            fl[l] = mb.add_var(f"f[{l}]", -rate, rate)
    for l in cand:
        zv[l] = mb.add_var(f"z[{l}]", 0.0, 1.0, binary=True)
    A_f, A_t = net.f_idx, net.t_idx
    for i in range(net.n_bus):
        coefs = {}
        for k in range(net.n_gen):
            if net.gen_bus_idx[k] == i:
                coefs[gen_vars[k]] = coefs.get(gen_vars[k], 0.0) + 1.0
        # generation minus outgoing flow equals demand
        for l, j in fl.items():
            if A_f[l] == i:
                coefs[j] = coefs.get(j, 0.0) - 1.0
            if A_t[l] == i:
                coefs[j] = coefs.get(j, 0.0) + 1.0
        mb.add_row(f"balance[{i}]", coefs, EQ, net.p_demand[i] + net.g_shunt[i])
    for l, j in fl.items():
        i, k = int(A_f[l]), int(A_t[l])
        expr = {j: 1.0, th[i]: -b[l], th[k]: b[l]}
        rhs = -b[l] * net.shift[l]
        if l in zv:
            M = float(bigM.values[l])
            rate = net.rate_a[l]
            mb.add_row(f"bigm_up[{l}]", {**expr, zv[l]: M}, LE, rhs + M)
            mb.add_row(f"bigm_dn[{l}]", {**expr, zv[l]: -M}, GE, rhs - M)
            mb.add_row(f"flim_up[{l}]", {j: 1.0, zv[l]: -rate}, LE, 0.0)
            mb.add_row(f"flim_dn[{l}]", {j: 1.0, zv[l]: rate}, GE, 0.0)
        else:
            mb.add_row(f"flow[{l}]", expr, EQ, rhs)
    meta = {
        "variant": "dc",
        "reformulation": cfg.reformulation,
        "gen_vars": gen_vars,
        "cost_vars": cost_vars,
        "theta_vars": th,
        "flow_vars": fl,
        "z_vars": zv,
        "candidates": list(cand),
        "closed": closed.copy(),
        "big_m": bigM.values.copy(),
        "angle_box": bigM.angle_box,
        "n_branch": net.n_branch,
        "dispatch_c": np.array(mb.c, dtype=float),
        "dispatch_c0": mb.c0,
        "forced_closed": [],
        "repair_weight": {},
    }
    return mb.build(meta)


def build_dc_ots(net: Network, bigM: BigMVector | None = None, cfg: OTSConfig | None = None) -> ModelDescription:
    """DC-OTS: nodal balance, big-M flow definition, z-scaled flow limits, one binary per candidate."""
    cfg = cfg or OTSConfig()
    bigM = bigM or big_m(net, cfg.angle_box)
    return _build(net, bigM, cfg, candidate_lines(net, cfg))


def build_dc_opf(net: Network, z=None, cfg: OTSConfig | None = None) -> ModelDescription:
    """DC-OPF LP for a fixed topology: lines with z = 0 are removed."""
    cfg = cfg or OTSConfig()
    z = net.full_mask() if z is None else np.asarray(z)
    return _build(net, big_m(net, cfg.angle_box), cfg, [], closed=z.astype(bool))


def augment_aidc(model: ModelDescription, first, second, tols, cfg: OTSConfig) -> ModelDescription:
    """Add repair costs and trust-region rows to a DC-OTS model.

    Objective gains gamma1 (1 - z) xi plus the second-order term of the
    chosen reformulation; rows bound (1 - z) xi by eps_lin and the
    second-order change by eps_quad.
    """
    if first is None or second is None or tols is None:
        raise MissingSensitivities("AIDC augmentation needs first- and second-order sensitivities and tolerances")
    mb = ModelBuilder.from_model(model)
    zv = model.meta["z_vars"]
    g1, g2 = cfg.gamma1, cfg.gamma2
    forced, weights = [], {}
    p = tols.config.p
    xi_all, s_all = first.norm(p), second.norm(p)
    for l, j in zv.items():
        xi, s = float(xi_all[l]), float(s_all[l])
        eps_l, eps_q = float(tols.eps_lin[l]), float(tols.eps_quad[l])
        # gamma1 xi (1 - z)
        mb.c0 += g1 * xi
        mb.add_cost(j, -g1 * xi)
        mb.add_row(f"trust_lin[{l}]", {j: -xi}, LE, eps_l - xi)
        half = 0.5 * s
        if cfg.reformulation == "miqcqp":
            # gamma2 s/2 (1 - z)^2 = gamma2 s/2 (1 - 2z + z^2)
            mb.c0 += g2 * half
            mb.add_cost(j, -2 * g2 * half)
            mb.q_obj[j] = mb.q_obj.get(j, 0.0) + g2 * half
            mb.quad_rows.append(QuadRow(f"trust_quad[{l}]", {j: -2 * half}, {j: half}, eps_q - half))
        elif cfg.reformulation == "milp":
            mb.c0 += g2 * half
            mb.add_cost(j, -g2 * half)
            mb.add_row(f"trust_quad[{l}]", {j: -half}, LE, eps_q - half)
        else:
            t = mb.add_var(f"t[{l}]", 0.0, 1.0)
            v = mb.add_var(f"v[{l}]", 0.0, max(s, 0.0))
            w = mb.add_var(f"w[{l}]", 0.0, eps_q, cost=g2)
            mb.add_row(f"tdef[{l}]", {t: 1.0, j: 1.0}, EQ, 1.0)
            mb.add_row(f"vdef[{l}]", {v: 1.0, t: -s}, EQ, 0.0)
            mb.cones.append(AbsCone(f"cone[{l}]", v, 0.5, w))
        weights[l] = g1 * xi + g2 * half
        if xi > eps_l or half > eps_q:
            forced.append(l)
    meta = dict(model.meta)
    meta.update(variant="aidc", reformulation=cfg.reformulation, forced_closed=sorted(forced),
                repair_weight=weights, gamma=(g1, g2), xi=xi_all.copy(), s=s_all.copy(),
                eps_lin=tols.eps_lin.copy(), eps_quad=tols.eps_quad.copy())
    out = mb.build(meta)
    _assert_fixing(out)
    return out


def _assert_fixing(model: ModelDescription) -> None:
    """Every line whose trust rows exceed their tolerance must be forced closed by a singleton bound."""
    from .mip.bnb import presolve_bounds

    if model.cones:
        return  # the cone path implies closure through t, v, w rather than a singleton row
    lin = linearize(model)
    lb, _, _ = presolve_bounds(lin)
    zv = model.meta["z_vars"]
    for l in model.meta["forced_closed"]:
        assert lb[zv[l]] == 1.0, f"line {l + 1} exceeds its tolerance but is not fixed closed"


def restricted_dc_equivalent(net: Network, cfg: OTSConfig, first, second, tols,
                             bigM: BigMVector | None = None) -> ModelDescription:
    """DC-OTS over lines within both tolerances, with repair weights moved onto (1 - z).

    Its optimum equals that of the milp AIDC model: lines outside the
    tolerances are closed in both.
    """
    bigM = bigM or big_m(net, cfg.angle_box)
    base_cand = candidate_lines(net, cfg)
    p = tols.config.p
    xi, s = first.norm(p), second.norm(p)
    keep = [l for l in base_cand if xi[l] <= tols.eps_lin[l] and 0.5 * s[l] <= tols.eps_quad[l]]
    model = _build(net, bigM, cfg, keep)
    mb = ModelBuilder.from_model(model)
    for l, j in model.meta["z_vars"].items():
        w = cfg.gamma1 * xi[l] + cfg.gamma2 * 0.5 * s[l]
        mb.c0 += w
        mb.add_cost(j, -w)
    meta = dict(model.meta)
    meta.update(variant="aidc-restricted")
    return mb.build(meta)


def extract_solution(model: ModelDescription, raw, net: Network | None = None, tol: float = 1e-6) -> OTSSolution:
    """Map a solver point back to network quantities and verify it."""
    meta = model.meta
    L = meta["n_branch"]
    status = raw.status
    wall = float(getattr(raw, "wall_time", 0.0))
    gap = float(getattr(raw, "gap", 0.0))
    nodes = int(getattr(raw, "nodes", 0))
    if getattr(raw, "x", None) is None:
        empty = np.zeros(0)
        return OTSSolution(np.zeros(L, dtype=int), empty, empty, empty, np.nan, status, np.inf, wall, nodes=nodes)
    x = np.asarray(raw.x, dtype=float).copy()
    xb = x[model.binary]
    if np.any(np.abs(xb - np.round(xb)) > tol):
        raise InconsistentPoint(float(np.max(np.abs(xb - np.round(xb)))), "integrality")
    x[model.binary] = np.round(xb)
    lin = linearize(model)
    res = lin.residuals(x)
    worst = max(res["linear"], res["bounds"])
    if worst > tol:
        where = "linear constraints" if res["linear"] >= res["bounds"] else "variable bounds"
        raise InconsistentPoint(worst, where)
    orig = model.residuals(x)
    if max(orig["quadratic"], orig["cone"]) > tol:
        raise InconsistentPoint(max(orig["quadratic"], orig["cone"]), "quadratic or cone rows")
    obj = model.objective(x)
    if abs(obj - lin.objective(x)) > tol * max(1.0, abs(obj)):
        raise InconsistentPoint(abs(obj - lin.objective(x)), "objective reformulation")
    if hasattr(raw, "objective") and np.isfinite(raw.objective) and abs(raw.objective - lin.objective(x)) > tol * max(1.0, abs(obj)):
        raise InconsistentPoint(abs(raw.objective - lin.objective(x)), "reported objective")
    z = np.asarray(meta["closed"], dtype=int).copy()
    for l, j in meta["z_vars"].items():
        z[l] = int(x[j])
    flows = np.zeros(L)
    for l, j in meta["flow_vars"].items():
        flows[l] = x[j]
    dispatch = float(np.asarray(meta["dispatch_c"]) @ x[: len(meta["dispatch_c"])] + meta["dispatch_c0"])
    disconnected = False
    if net is not None:
        disconnected = len(net.components(z)) > 1
    return OTSSolution(
        z=z, p_gen=x[meta["gen_vars"]], theta=x[meta["theta_vars"]], flows=flows,
        model_cost=obj, status=status, gap=gap, wall_time=wall, dispatch_cost=dispatch,
        repair_cost=obj - dispatch, disconnected=disconnected, nodes=nodes,
    )


def solve_model(model: ModelDescription, net: Network | None = None, opts=None, backend: str = "builtin",
                **backend_kw) -> OTSSolution:
    """Linearise, solve with the chosen backend and extract the solution."""
    from .mip.bnb import BnBOptions, branch_and_bound
    from .mip.external import solve_external

    lin = linearize(model)
    t0 = time.perf_counter()
    if backend == "builtin":
        raw = branch_and_bound(lin, opts or BnBOptions())
    else:
        raw = solve_external(lin, backend, **backend_kw)
    sol = extract_solution(model, raw, net)
    if sol.status == "infeasible":
        logger.info("model infeasible after %.2fs", time.perf_counter() - t0)
    return sol


__all__ = [
    "OTSConfig", "BigMVector", "OTSSolution", "ModelDescription", "big_m", "build_dc_ots", "build_dc_opf",
    "augment_aidc", "restricted_dc_equivalent", "extract_solution", "candidate_lines", "solve_model",
    "to_lp_format", "Infeasible",
]
