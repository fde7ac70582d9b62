"""Bounded-variable revised simplex with dual-simplex warm starts.

Rows ``lo <= A x <= hi`` are written as ``A x - s = 0`` with the row slack
``s`` bounded by ``[lo, hi]``. The cold start takes the slack basis and adds
an artificial column to every row whose slack starts outside its range;
phase 1 drives those artificials to zero. The basis inverse is kept
explicitly (dense) with rank-one updates and a periodic refactorisation,
which is adequate for the desk-scale models used here.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..errors import NumericalFailure
from ..modeldesc import ModelDescription

logger = logging.getLogger(__name__)

FEAS_TOL = 1e-9
OPT_TOL = 1e-9
PIVOT_TOL = 1e-9
REFACTOR_EVERY = 64
DEGENERATE_STREAK = 50
OPTIMAL, INFEASIBLE, UNBOUNDED = "optimal", "infeasible", "unbounded"


@dataclass(frozen=True, eq=False)
class LPData:
    """min c x + c0  s.t.  row_lo <= A x <= row_hi,  lb <= x <= ub."""

    c: np.ndarray
    A: np.ndarray
    row_lo: np.ndarray
    row_hi: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    c0: float = 0.0

    @classmethod
    def from_model(cls, model: ModelDescription, lb=None, ub=None) -> "LPData":
        if not model.is_linear:
            raise ValueError("LP relaxation requires a linear model; call linearize() first")
        A = model.A.toarray() if sp.issparse(model.A) else np.asarray(model.A, dtype=float)
        return cls(np.asarray(model.c, float), A, model.row_lo, model.row_hi,
                   np.asarray(model.lb if lb is None else lb, float),
                   np.asarray(model.ub if ub is None else ub, float), float(model.c0))

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape


@dataclass(frozen=True)
class BasisToken:
    """Basis snapshot over structural and slack columns, reusable as a warm start."""

    basis: tuple[int, ...]
    at_upper: tuple[bool, ...]


@dataclass(frozen=True, eq=False)
class LPResult:
    status: str
    x: np.ndarray | None
    objective: float
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    basis: BasisToken | None = None
    iterations: int = 0
    warm: bool = False


class _Engine:
    """Simplex state for one LP over columns [structural | slack | artificial]."""

    def __init__(self, lp: LPData, max_iter: int | None = None):
        self.lp = lp
        m, n = lp.shape
        self.m, self.n = m, n
        self.K = np.hstack([lp.A, -np.eye(m)])
        self.lo = np.concatenate([lp.lb, lp.row_lo])
        self.hi = np.concatenate([lp.ub, lp.row_hi])
        self.cost = np.concatenate([lp.c, np.zeros(m)])
        self.x = np.zeros(n + m)
        self.basis = np.zeros(m, dtype=int)
        self.is_basic = np.zeros(n + m, dtype=bool)
        self.Binv = np.eye(m)
        self.iterations = 0
        self.since_refactor = 0
        self.max_iter = max_iter or 50 * (n + 2 * m) + 1000
        self.bland = False

    # -- bookkeeping -----------------------------------------------------------

    @property
    def N(self) -> int:
        return self.K.shape[1]

    def _nonbasic_value(self, j: int, upper: bool = False) -> float:
        lo, hi = self.lo[j], self.hi[j]
        if upper and np.isfinite(hi):
            return hi
        if np.isfinite(lo):
            return lo
        if np.isfinite(hi):
            return hi
        return 0.0

    def refactor(self) -> None:
        B = self.K[:, self.basis]
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError:
            raise NumericalFailure("singular basis matrix") from None
        if not np.all(np.isfinite(self.Binv)):
            raise NumericalFailure("non-finite basis inverse")
        self.recompute_basics()
        self.since_refactor = 0

    def recompute_basics(self) -> None:
        nb = ~self.is_basic
        self.x[self.basis] = -self.Binv @ (self.K[:, nb] @ self.x[nb])

    def duals(self, cost: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        y = cost[self.basis] @ self.Binv
        return y, cost - y @ self.K

    def _pivot(self, r: int, j: int, w: np.ndarray) -> None:
        leaving = self.basis[r]
        p = w[r]
        row = self.Binv[r] / p
        self.Binv -= np.outer(w, row)
        self.Binv[r] = row
        self.basis[r] = j
        self.is_basic[leaving] = False
        self.is_basic[j] = True
        self.since_refactor += 1
        if self.since_refactor >= REFACTOR_EVERY:
            self.refactor()

    def add_artificials(self, rows: np.ndarray, signs: np.ndarray) -> None:
        cols = np.zeros((self.m, len(rows)))
        cols[rows, np.arange(len(rows))] = signs
        self.K = np.hstack([self.K, cols])
        k = len(rows)
        self.lo = np.concatenate([self.lo, np.zeros(k)])
        self.hi = np.concatenate([self.hi, np.full(k, np.inf)])
        self.cost = np.concatenate([self.cost, np.zeros(k)])
        self.x = np.concatenate([self.x, np.zeros(k)])
        self.is_basic = np.concatenate([self.is_basic, np.zeros(k, dtype=bool)])

    # -- primal simplex ----------------------------------------------------------

    def primal(self, cost: np.ndarray) -> str:
        streak = 0
        self.bland = False
        while True:
            if self.iterations >= self.max_iter:
                raise NumericalFailure(f"simplex iteration limit {self.max_iter} reached")
            y, d = self.duals(cost)
            nb = np.flatnonzero(~self.is_basic & (self.hi > self.lo))
            xj, lo, hi = self.x[nb], self.lo[nb], self.hi[nb]
            dn = d[nb]
            can_up = xj < hi - FEAS_TOL
            can_dn = xj > lo + FEAS_TOL
            score = np.where(can_up & (dn < -OPT_TOL), -dn, 0.0)
            score = np.maximum(score, np.where(can_dn & (dn > OPT_TOL), dn, 0.0))
            cand = np.flatnonzero(score > 0)
            if cand.size == 0:
                return OPTIMAL
            k = cand[0] if self.bland else cand[np.argmax(score[cand])]
            j = int(nb[k])
            direction = 1.0 if (dn[k] < 0 and can_up[k]) else -1.0
            w = self.Binv @ self.K[:, j]
            t, r = self._ratio(w * direction)
            t_flip = self.hi[j] - self.lo[j]
            if min(t, t_flip) == np.inf:
                return UNBOUNDED
            self.iterations += 1
            if t_flip <= t:
                self.x[j] = self.hi[j] if direction > 0 else self.lo[j]
                self.x[self.basis] -= direction * t_flip * w
                step = t_flip
            else:
                self.x[j] += direction * t
                self.x[self.basis] -= direction * t * w
                leaving = self.basis[r]
                self.x[leaving] = self.lo[leaving] if direction * w[r] > 0 else self.hi[leaving]
                self._pivot(r, j, w)
                step = t
            if step <= 1e-12:
                streak += 1
                if streak >= DEGENERATE_STREAK:
                    self.bland = True
            else:
                streak = 0
                self.bland = False

    def _ratio(self, dw: np.ndarray) -> tuple[float, int]:
        """Largest step along -dw keeping basics within bounds, with its blocking row."""
        xb = self.x[self.basis]
        lo, hi = self.lo[self.basis], self.hi[self.basis]
        t = np.full(self.m, np.inf)
        dec = dw > PIVOT_TOL
        inc = dw < -PIVOT_TOL
        with np.errstate(invalid="ignore"):
            t[dec] = (xb[dec] - lo[dec]) / dw[dec]
            t[inc] = (hi[inc] - xb[inc]) / -dw[inc]
        t = np.where(np.isnan(t), np.inf, t)
        t = np.maximum(t, 0.0)
        tmin = float(t.min()) if self.m else np.inf
        if tmin == np.inf:
            return np.inf, -1
        ties = np.flatnonzero(t <= tmin + 1e-12)
        if self.bland:
            r = int(ties[np.argmin(self.basis[ties])])
        else:
            r = int(ties[np.argmax(np.abs(dw[ties]))])
        return float(t[r]), r

    # -- dual simplex -------------------------------------------------------------

    def dual_feasible(self, cost: np.ndarray, tol: float = 1e-7) -> bool:
        _, d = self.duals(cost)
        nb = np.flatnonzero(~self.is_basic & (self.hi > self.lo))
        xj = self.x[nb]
        at_lo = np.abs(xj - self.lo[nb]) <= FEAS_TOL
        at_hi = np.abs(xj - self.hi[nb]) <= FEAS_TOL
        dn = d[nb]
        bad = (~at_lo & (dn > tol)) | (~at_hi & (dn < -tol))
        return not bad.any()

    def dual(self, cost: np.ndarray) -> str:
        streak = 0
        bland = False
        last_obj = -np.inf
        while True:
            if self.iterations >= self.max_iter:
                raise NumericalFailure(f"dual simplex iteration limit {self.max_iter} reached")
            xb = self.x[self.basis]
            lo, hi = self.lo[self.basis], self.hi[self.basis]
            infeas = np.maximum(lo - xb, xb - hi)
            rows = np.flatnonzero(infeas > FEAS_TOL)
            if rows.size == 0:
                return OPTIMAL
            r = int(rows[np.argmin(self.basis[rows])]) if bland else int(rows[np.argmax(infeas[rows])])
            below = xb[r] < lo[r]
            _, d = self.duals(cost)
            alpha = self.Binv[r] @ self.K
            nb = np.flatnonzero(~self.is_basic & (self.hi > self.lo))
            a, dn, xj = alpha[nb], d[nb], self.x[nb]
            at_lo = np.abs(xj - self.lo[nb]) <= FEAS_TOL
            at_hi = np.abs(xj - self.hi[nb]) <= FEAS_TOL
            free = ~at_lo & ~at_hi
            sgn = 1.0 if below else -1.0  # +1: x_r must increase
            # x_r moves by -alpha_j dx_j; eligible entering moves x_r the right way
            up_ok = (at_lo | free) & (sgn * a < -PIVOT_TOL)
            dn_ok = (at_hi | free) & (sgn * a > PIVOT_TOL)
            elig = up_ok | dn_ok
            if not elig.any():
                return INFEASIBLE
            ratio = np.full(len(nb), np.inf)
            ratio[elig] = np.abs(dn[elig]) / np.abs(a[elig])
            rmin = ratio.min()
            ties = np.flatnonzero(ratio <= rmin + 1e-12)
            k = int(ties[0]) if bland else int(ties[np.argmax(np.abs(a[ties]))])
            j = int(nb[k])
            w = self.Binv @ self.K[:, j]
            target = lo[r] if below else hi[r]
            delta = (xb[r] - target) / w[r]
            self.iterations += 1
            self.x[j] += delta
            self.x[self.basis] -= delta * w
            leaving = self.basis[r]
            self.x[leaving] = target
            self._pivot(r, j, w)
            obj = float(cost @ self.x)
            if obj <= last_obj + 1e-12:
                streak += 1
                bland = streak >= DEGENERATE_STREAK
            else:
                streak = 0
                bland = False
            last_obj = max(last_obj, obj)

    # -- results -------------------------------------------------------------------------

    def token(self) -> BasisToken:
        nm = self.n + self.m
        at_upper = tuple(bool(not self.is_basic[j] and np.isfinite(self.hi[j])
                              and abs(self.x[j] - self.hi[j]) <= FEAS_TOL and self.hi[j] > self.lo[j])
                         for j in range(nm))
        return BasisToken(tuple(int(b) for b in self.basis), at_upper)

    def primal_residual(self) -> float:
        nm = self.n + self.m
        x = self.x[:nm]
        r = np.abs(self.K[:, :nm] @ x).max(initial=0.0)
        b = np.maximum(np.maximum(self.lo[:nm] - x, x - self.hi[:nm]), 0.0).max(initial=0.0)
        return float(max(r, b))


def _cold_start(eng: _Engine) -> str:
    lp = eng.lp
    n, m = eng.n, eng.m
    for j in range(n):
        eng.x[j] = eng._nonbasic_value(j)
    act = lp.A @ eng.x[:n]
    rows, signs = [], []
    for i in range(m):
        s = n + i
        if lp.row_lo[i] - FEAS_TOL <= act[i] <= lp.row_hi[i] + FEAS_TOL:
            eng.x[s] = act[i]
        else:
            eng.x[s] = lp.row_lo[i] if act[i] < lp.row_lo[i] else lp.row_hi[i]
            rows.append(i)
            signs.append(np.sign(eng.x[s] - act[i]))
    eng.add_artificials(np.array(rows, dtype=int), np.array(signs))
    basis = np.arange(n, n + m)
    for k, i in enumerate(rows):
        basis[i] = n + m + k
    eng.basis = basis
    eng.is_basic[:] = False
    eng.is_basic[basis] = True
    eng.refactor()
    if rows:
        cost1 = np.zeros(eng.N)
        cost1[n + m:] = 1.0
        status = eng.primal(cost1)
        infeas = float(eng.x[n + m:].sum())
        scale = max(1.0, float(np.abs(lp.row_lo[np.isfinite(lp.row_lo)]).max(initial=0.0)),
                    float(np.abs(lp.row_hi[np.isfinite(lp.row_hi)]).max(initial=0.0)))
        if status != OPTIMAL or infeas > 1e-8 * scale:
            return INFEASIBLE
        _drive_out_artificials(eng)
    eng.cost = np.concatenate([eng.cost[: n + m], np.zeros(eng.N - n - m)])
    return eng.primal(eng.cost)


def _drive_out_artificials(eng: _Engine) -> None:
    nm = eng.n + eng.m
    eng.hi[nm:] = 0.0
    eng.x[nm:] = np.where(eng.is_basic[nm:], eng.x[nm:], 0.0)
    for r in range(eng.m):
        if eng.basis[r] < nm:
            continue
        row = eng.Binv[r] @ eng.K[:, :nm]
        cand = np.flatnonzero(~eng.is_basic[:nm] & (np.abs(row) > 1e-7))
        if cand.size == 0:
            continue  # redundant row; the artificial stays basic, fixed at zero
        j = int(cand[np.argmax(np.abs(row[cand]))])
        w = eng.Binv @ eng.K[:, j]
        leaving = eng.basis[r]
        eng._pivot(r, j, w)
        eng.x[leaving] = 0.0
    eng.recompute_basics()


def _warm_start(eng: _Engine, token: BasisToken) -> str | None:
    nm = eng.n + eng.m
    if len(token.basis) != eng.m or len(token.at_upper) != nm:
        return None
    basis = np.array(token.basis, dtype=int)
    eng.basis = basis
    eng.is_basic[:] = False
    eng.is_basic[basis] = True
    for j in range(nm):
        if not eng.is_basic[j]:
            eng.x[j] = eng._nonbasic_value(j, token.at_upper[j])
    try:
        eng.refactor()
    except NumericalFailure:
        return None
    if np.linalg.norm(eng.Binv, np.inf) > 1e12:
        return None
    if eng.dual_feasible(eng.cost):
        status = eng.dual(eng.cost)
        if status == INFEASIBLE:
            return INFEASIBLE
    elif eng.primal_residual() > FEAS_TOL:
        return None
    return eng.primal(eng.cost)


def solve_lp(lp: LPData | ModelDescription, warm: BasisToken | None = None,
             max_iter: int | None = None) -> LPResult:
    """Solve an LP; with ``warm`` the dual simplex restarts from that basis.

    A warm start that fails (singular basis, neither primal nor dual
    feasible, numerical trouble) silently falls back to a cold start.
    """
    if isinstance(lp, ModelDescription):
        lp = LPData.from_model(lp)
    if np.any(lp.lb > lp.ub + FEAS_TOL) or np.any(lp.row_lo > lp.row_hi + FEAS_TOL):
        return LPResult(INFEASIBLE, None, np.inf)
    # a bound at the wrong infinity (x <= -inf, x >= +inf) admits no point
    if np.any(np.isposinf(lp.lb) | np.isneginf(lp.ub)) or np.any(np.isposinf(lp.row_lo) | np.isneginf(lp.row_hi)):
        return LPResult(INFEASIBLE, None, np.inf)
    status = None
    used_warm = False
    eng = None
    if warm is not None:
        eng = _Engine(lp, max_iter)
        try:
            status = _warm_start(eng, warm)
            used_warm = status is not None
        except NumericalFailure as exc:
            logger.debug("warm start abandoned: %s", exc)
            status = None
    if status is None:
        eng = _Engine(lp, max_iter)
        status = _cold_start(eng)
    if status == OPTIMAL:
        eng.recompute_basics()
        if eng.primal_residual() > 1e-8:
            eng.refactor()
            status = eng.primal(eng.cost)
            res = eng.primal_residual()
            if res > 1e-8:
                raise NumericalFailure(f"LP solution violates constraints by {res:.2e}")
    if status != OPTIMAL:
        return LPResult(status, None, np.inf if status == INFEASIBLE else -np.inf,
                        iterations=eng.iterations, warm=used_warm)
    n = eng.n
    x = eng.x[:n].copy()
    # snap values within tolerance of a bound onto it
    for bnd in (lp.lb, lp.ub):
        close = np.isfinite(bnd) & (np.abs(x - bnd) <= 1e-11)
        x[close] = bnd[close]
    y, d = eng.duals(eng.cost)
    obj = float(lp.c @ x) + lp.c0
    return LPResult(OPTIMAL, x, obj, duals=y, reduced_costs=d[:n], basis=eng.token(),
                    iterations=eng.iterations, warm=used_warm)
