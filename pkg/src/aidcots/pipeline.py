"""End-to-end switching run: operating point, sensitivities, model, solve, AC check."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import sens
from .acpf import PFState, injections, solve_pf
from .evalac import ACEvalReport, EvalConfig, evaluate, redispatch_dc
from .errors import AidcError
from .mip.bnb import BnBOptions
from .netmodel import Network, build_admittance
from .otsmodel import OTSConfig, OTSSolution, augment_aidc, big_m, build_dc_ots, solve_model
from .tol import ToleranceConfig, ToleranceSet, build_tolerances

logger = logging.getLogger(__name__)

GAMMA_SCALE = 0.05  # default weight per 1000 $ of base dispatch cost


@dataclass(frozen=True)
class PipelineConfig:
    model: str = "dc"
    ots: OTSConfig = field(default_factory=OTSConfig)
    tol: ToleranceConfig = field(default_factory=ToleranceConfig)
    bnb: BnBOptions = field(default_factory=BnBOptions)
    gamma1: float | None = None  # None selects the cost-scaled default
    gamma2: float | None = None
    backend: str = "builtin"
    evaluate: bool = True


@dataclass(frozen=True, eq=False)
class OperatingPoint:
    state: PFState
    p_gen: np.ndarray
    source: str  # "case" or "dc-redispatch"


@dataclass(frozen=True, eq=False)
class PipelineResult:
    case: str
    model: str
    reformulation: str
    solution: OTSSolution
    evaluation: ACEvalReport | None
    gamma: tuple[float, float]
    forced_closed: tuple[int, ...]
    times: dict

    @property
    def timed_out(self) -> bool:
        return self.solution.status == "time_limit"

    def to_dict(self) -> dict:
        sol = self.solution
        ev = self.evaluation
        return {
            "case": self.case,
            "model": self.model,
            "reformulation": self.reformulation if self.model == "aidc" else None,
            "status": sol.status,
            "lines_opened": sol.lines_opened if sol.has_point else None,
            "model_cost": _num(sol.model_cost),
            "dispatch_cost": _num(sol.dispatch_cost),
            "repair_cost": _num(sol.repair_cost),
            "gap": _num(sol.gap),
            "nodes": int(sol.nodes),
            "disconnected": bool(sol.disconnected),
            "gamma": [float(g) for g in self.gamma],
            "forced_closed": [k + 1 for k in self.forced_closed],
            "ac_feasible": None if ev is None else bool(ev.feasible),
            "approximate AC cost": None if ev is None else _num(ev.total_gen_cost),
            "ac_evaluation": None if ev is None else ev.to_dict(),
            "times": {k: round(float(v), 6) for k, v in self.times.items()},
        }


def _num(v):
    return None if v is None or not np.isfinite(v) else float(v)


def operating_point(net: Network) -> OperatingPoint:
    """AC state at the case dispatch; falls back to DC redispatch if that does not converge."""
    st = solve_pf(net)
    p_gen = np.array([g.p_gen for g in net.generators])
    if st.converged:
        return OperatingPoint(st, p_gen, "case")
    logger.info("case dispatch does not converge; using DC redispatch as operating point")
    p_gen, _ = redispatch_dc(net)
    st = solve_pf(net, s=injections(net, p_gen))
    if not st.converged:
        raise AidcError(f"no converged AC operating point for {net.name}")
    return OperatingPoint(st, p_gen, "dc-redispatch")


def default_gammas(net: Network) -> tuple[float, float]:
    """gamma1 = gamma2 = 0.05 per 1000 $ of fixed-topology DC dispatch cost."""
    _, cost = redispatch_dc(net)
    g = GAMMA_SCALE * cost / 1000.0
    return g, g


def sensitivities(net: Network, point: OperatingPoint | None = None) -> sens.SensitivityBundle:
    point = point or operating_point(net)
    return sens.compute(build_admittance(net), point.state)


def run(net: Network, cfg: PipelineConfig | None = None) -> PipelineResult:
    """Run the switching pipeline once and return the solution, AC verdict and stage times."""
    cfg = cfg or PipelineConfig()
    if cfg.model not in ("dc", "aidc"):
        raise ValueError(f"unknown model {cfg.model!r}")
    times = {}
    t_all = time.perf_counter()
    ocfg = cfg.ots
    gamma = (0.0, 0.0)
    tols: ToleranceSet | None = None
    bundle = None
    if cfg.model == "aidc":
        t0 = time.perf_counter()
        point = operating_point(net)
        times["pf"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        bundle = sensitivities(net, point)
        times["sens"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        tols = build_tolerances(bundle.first, bundle.second, net, cfg.tol)
        times["tol"] = time.perf_counter() - t0
        g1, g2 = cfg.gamma1, cfg.gamma2
        if g1 is None or g2 is None:
            d1, d2 = default_gammas(net)
            g1 = d1 if g1 is None else g1
            g2 = d2 if g2 is None else g2
        gamma = (float(g1), float(g2))
        ocfg = replace(ocfg, variant="aidc", gamma1=gamma[0], gamma2=gamma[1])
    t0 = time.perf_counter()
    model = build_dc_ots(net, big_m(net, ocfg.angle_box), ocfg)
    if cfg.model == "aidc":
        model = augment_aidc(model, bundle.first, bundle.second, tols, ocfg)
    times["build"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    sol = solve_model(model, net, cfg.bnb, backend=cfg.backend, time_limit=cfg.bnb.time_limit) \
        if cfg.backend != "builtin" else solve_model(model, net, cfg.bnb)
    times["solve"] = time.perf_counter() - t0
    forced = tuple(model.meta.get("forced_closed", ()))
    if sol.has_point:
        opened = [l for l in forced if sol.z[l] == 0]
        assert not opened, f"lines {[l + 1 for l in opened]} exceed their tolerances but were opened"
    ev = None
    if cfg.evaluate and sol.has_point:
        t0 = time.perf_counter()
        ev = evaluate(net, sol.z, EvalConfig())
        times["eval"] = time.perf_counter() - t0
    times["total"] = time.perf_counter() - t_all
    return PipelineResult(net.name, cfg.model, ocfg.reformulation, sol, ev, gamma, forced, times)
