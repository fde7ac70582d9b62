"""LP-based branch and bound over binary variables.

Ties between optimal integer points are resolved canonically: fewest
binaries at zero, then the lexicographically smallest set of zero
positions. Nodes whose bound ties the incumbent are explored only while
they can still produce a smaller key, so the result matches exhaustive
enumeration under the same rule.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericalFailure
from ..modeldesc import ModelDescription
from .simplex import INFEASIBLE, OPTIMAL, UNBOUNDED, LPData, solve_lp

logger = logging.getLogger(__name__)

TIME_LIMIT = "time_limit"
NODE_SELECTION = ("best-bound", "depth-first")
BRANCHING = ("most-fractional", "pseudo-cost")


@dataclass(frozen=True)
class BnBOptions:
    time_limit: float = 1800.0
    rel_gap: float = 1e-6
    node_selection: str = "best-bound"
    branching: str = "most-fractional"
    seed: int = 0
    int_tol: float = 1e-6
    tie_tol: float = 1e-9
    presolve: bool = True
    canonical_ties: bool = True
    max_nodes: int | None = None

    def __post_init__(self):
        if self.time_limit <= 0 or self.rel_gap < 0:
            raise ValueError("time_limit must be positive and rel_gap non-negative")
        if self.node_selection not in NODE_SELECTION:
            raise ValueError(f"node_selection must be one of {NODE_SELECTION}")
        if self.branching not in BRANCHING:
            raise ValueError(f"branching must be one of {BRANCHING}")


@dataclass(frozen=True, eq=False)
class MIPResult:
    status: str
    x: np.ndarray | None
    objective: float
    bound: float
    gap: float
    nodes: int  # branching nodes explored below the root
    lp_solves: int
    wall_time: float
    fixed_by_presolve: dict = field(default_factory=dict)

    @property
    def has_point(self) -> bool:
        return self.x is not None


def tie_key(x: np.ndarray, binaries: np.ndarray) -> tuple[int, tuple[int, ...]]:
    """(number of binaries at zero, their positions within ``binaries``)."""
    zeros = tuple(int(k) for k, j in enumerate(binaries) if x[j] < 0.5)
    return len(zeros), zeros


def presolve_bounds(model: ModelDescription, int_tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray, dict]:
    """Tighten bounds from singleton rows; binaries are rounded to integral bounds.

    Returns new (lb, ub) and the binaries fixed by this step.
    """
    lb, ub = model.lb.astype(float).copy(), model.ub.astype(float).copy()
    A = model.A.tocsr()
    lo, hi = model.row_lo, model.row_hi
    counts = np.diff(A.indptr)
    for r in np.flatnonzero(counts == 1):
        j = int(A.indices[A.indptr[r]])
        a = float(A.data[A.indptr[r]])
        l, h = (lo[r] / a, hi[r] / a) if a > 0 else (hi[r] / a, lo[r] / a)
        lb[j] = max(lb[j], l)
        ub[j] = min(ub[j], h)
    fixed = {}
    for j in model.binaries:
        lb[j] = max(0.0, np.ceil(lb[j] - int_tol))
        ub[j] = min(1.0, np.floor(ub[j] + int_tol))
        if lb[j] == ub[j]:
            fixed[int(j)] = int(lb[j])
    return lb, ub, fixed


@dataclass(order=True)
class _Node:
    priority: tuple
    lb: np.ndarray = field(compare=False)
    ub: np.ndarray = field(compare=False)
    parent_bound: float = field(compare=False)
    depth: int = field(compare=False)
    warm: object = field(compare=False, default=None)
    branch: tuple | None = field(compare=False, default=None)  # (var, direction, parent value)


class _PseudoCosts:
    def __init__(self, n_bin: int, seed: int):
        rng = np.random.default_rng(seed)
        self.sum = np.zeros((n_bin, 2))
        self.cnt = np.zeros((n_bin, 2))
        self.init = 1.0 + 1e-3 * rng.random((n_bin, 2))  # deterministic tie-breaking

    def update(self, k: int, up: bool, gain: float, frac: float) -> None:
        if frac > 1e-12:
            self.sum[k, int(up)] += max(gain, 0.0) / frac
            self.cnt[k, int(up)] += 1

    def estimate(self) -> np.ndarray:
        known = self.cnt > 0
        avg = self.sum / np.maximum(self.cnt, 1)
        n_known = known.sum(axis=0)
        fill = np.where(n_known > 0, (avg * known).sum(axis=0) / np.maximum(n_known, 1), 1.0)
        return np.where(known, avg, fill * self.init)


def branch_and_bound(model: ModelDescription, opts: BnBOptions | None = None) -> MIPResult:
    """Minimise a linear model with binaries by LP-based branch and bound."""
    opts = opts or BnBOptions()
    if not model.is_linear:
        raise ValueError("branch_and_bound needs a linear model (quadratic rows and cones must be reduced)")
    assert not model.cones and not model.quad_rows
    t0 = time.perf_counter()
    bins = model.binaries
    pos = {int(j): k for k, j in enumerate(bins)}
    lb, ub, fixed = (presolve_bounds(model) if opts.presolve
                     else (model.lb.copy(), model.ub.copy(), {}))
    if np.any(lb > ub + 1e-9):
        return MIPResult(INFEASIBLE, None, np.inf, np.inf, np.inf, 0, 0, time.perf_counter() - t0, fixed)
    base = LPData.from_model(model)

    def lp_at(lo_, hi_, warm):
        return solve_lp(LPData(base.c, base.A, base.row_lo, base.row_hi, lo_, hi_, base.c0), warm=warm)

    inc_obj, inc_x, inc_key = np.inf, None, None
    # nodes drives the node limit; branched (non-root nodes) is what gets reported
    lp_solves = nodes = branched = 0
    pc = _PseudoCosts(len(bins), opts.seed)
    counter = itertools.count()
    best_bound = -np.inf

    def tie_tol(ref):
        return opts.tie_tol * max(1.0, abs(ref))

    def gap_tol(ref):
        return max(opts.rel_gap * max(1.0, abs(ref)), tie_tol(ref))

    def consider(x, obj):
        nonlocal inc_obj, inc_x, inc_key
        key = tie_key(x, bins)
        if inc_x is None or obj < inc_obj - tie_tol(inc_obj):
            inc_obj, inc_x, inc_key = obj, x.copy(), key
        elif opts.canonical_ties and abs(obj - inc_obj) <= tie_tol(inc_obj) and key < inc_key:
            inc_obj, inc_x, inc_key = min(obj, inc_obj), x.copy(), key

    def push(heap, node_lb, node_ub, bound, depth, warm, branch, order):
        if opts.node_selection == "best-bound":
            prio = (bound, order, next(counter))
        else:
            prio = (-depth, order, next(counter))
        heapq.heappush(heap, _Node(prio, node_lb, node_ub, bound, depth, warm, branch))

    heap: list[_Node] = []
    push(heap, lb, ub, -np.inf, 0, None, None, 0)
    status = OPTIMAL
    root_unbounded = False
    while heap:
        if time.perf_counter() - t0 > opts.time_limit or (opts.max_nodes and nodes >= opts.max_nodes):
            status = TIME_LIMIT
            break
        node = heapq.heappop(heap)
        if inc_x is not None and node.parent_bound > inc_obj + tie_tol(inc_obj):
            continue
        nodes += 1
        branched += node.depth > 0
        res = lp_at(node.lb, node.ub, node.warm)
        lp_solves += 1
        if res.status == UNBOUNDED:
            if node.depth == 0:
                root_unbounded = True
                break
            raise NumericalFailure("unbounded relaxation below a bounded root", node=nodes)
        if res.status != OPTIMAL:
            continue
        obj, x = res.objective, res.x
        if obj < node.parent_bound - 1e-7 * max(1.0, abs(node.parent_bound)):
            raise NumericalFailure(
                f"child relaxation {obj:.10g} below parent bound {node.parent_bound:.10g}", node=nodes)
        obj = max(obj, node.parent_bound)
        if node.depth == 0 and inc_x is None and np.any(node.ub[bins] > node.lb[bins]):
            # the all-ones completion carries the smallest tie key; try it first
            ones_lb = node.lb.copy()
            ones_lb[bins] = np.maximum(ones_lb[bins], node.ub[bins])
            r1 = lp_at(ones_lb, node.ub, res.basis)
            lp_solves += 1
            if r1.status == OPTIMAL:
                xr = r1.x.copy()
                xr[bins] = np.round(xr[bins])
                consider(xr, max(r1.objective, obj))
        if node.branch is not None and opts.branching == "pseudo-cost":
            j, up, val = node.branch
            pc.update(pos[j], up, obj - node.parent_bound, (1 - val) if up else val)
        if inc_x is not None:
            if obj > inc_obj + tie_tol(inc_obj):
                continue
            in_tie = obj >= inc_obj - tie_tol(inc_obj)
            if not in_tie and obj >= inc_obj - gap_tol(inc_obj):
                continue
        else:
            in_tie = False
        xb = x[bins]
        frac = np.abs(xb - np.round(xb))
        fractional = np.flatnonzero(frac > opts.int_tol)
        free = np.flatnonzero(node.ub[bins] > node.lb[bins])
        n_fixed0 = int(np.sum(node.ub[bins] < 0.5))
        if fractional.size == 0:
            xr = x.copy()
            xr[bins] = np.round(xb)
            consider(xr, obj)
            if not opts.canonical_ties:
                continue
            # a leaf with fewer zeros may still tie below this node
            if n_fixed0 >= inc_key[0]:
                continue
            zero_free = [k for k in free if xr[bins[k]] < 0.5]
            if not zero_free:
                continue
            k = int(zero_free[0])
        else:
            if in_tie and opts.canonical_ties:
                if n_fixed0 > inc_key[0]:
                    continue
                if n_fixed0 == inc_key[0]:
                    # only the all-ones completion can match the zero count
                    ones_lb = node.lb.copy()
                    ones_lb[bins[free]] = 1.0
                    zeros = tuple(sorted(int(k) for k in range(len(bins)) if node.ub[bins[k]] < 0.5))
                    if (len(zeros), zeros) < inc_key:
                        r2 = lp_at(ones_lb, node.ub, res.basis)
                        lp_solves += 1
                        if r2.status == OPTIMAL:
                            xr = r2.x.copy()
                            xr[bins] = np.round(xr[bins])
                            consider(xr, max(r2.objective, obj))
                    continue
            k = _select(fractional, xb, frac, opts, pc)
        j = int(bins[k])
        val = float(x[j])
        parent = obj
        for order, (direction, v) in enumerate(((True, 1.0), (False, 0.0))):
            c_lb, c_ub = node.lb.copy(), node.ub.copy()
            c_lb[j] = c_ub[j] = v
            push(heap, c_lb, c_ub, parent, node.depth + 1, res.basis, (j, direction, val), order)
    wall = time.perf_counter() - t0
    if root_unbounded:
        return MIPResult(UNBOUNDED, None, -np.inf, -np.inf, np.inf, branched, lp_solves, wall, fixed)
    if status == TIME_LIMIT:
        best_bound = min([n.parent_bound for n in heap] + [inc_obj])
    else:
        best_bound = inc_obj
    if inc_x is None:
        st = INFEASIBLE if status == OPTIMAL else TIME_LIMIT
        return MIPResult(st, None, np.inf, best_bound, np.inf, branched, lp_solves, wall, fixed)
    gap = 0.0 if status == OPTIMAL else (inc_obj - best_bound) / max(1.0, abs(inc_obj))
    return MIPResult(status, inc_x, float(model.c @ inc_x + model.c0), best_bound, max(gap, 0.0),
                     branched, lp_solves, wall, fixed)


def _select(fractional: np.ndarray, xb: np.ndarray, frac: np.ndarray, opts: BnBOptions, pc: _PseudoCosts) -> int:
    if opts.branching == "most-fractional":
        closeness = np.minimum(xb[fractional] - np.floor(xb[fractional]), np.ceil(xb[fractional]) - xb[fractional])
        return int(fractional[np.argmax(closeness)])
    est = pc.estimate()
    f = xb[fractional] - np.floor(xb[fractional])
    down = est[fractional, 0] * f
    up = est[fractional, 1] * (1 - f)
    score = np.maximum(down, 1e-6) * np.maximum(up, 1e-6)
    return int(fractional[np.argmax(score)])
