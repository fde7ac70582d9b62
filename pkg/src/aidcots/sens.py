"""First- and second-order sensitivities of the power-flow state to line admittances.

The parameters of line ``l`` are the real and imaginary parts ``g``, ``b`` of
its series admittance before the tap transformation. All state objects live
on the reduced unknown set of :class:`~aidcots.acpf.UnknownIndexing`, and
equation rows share that layout: the active-power row of bus ``k`` sits at
the position of ``theta[k]`` and the reactive row at that of ``vm[k]``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .acpf import PFState, UnknownIndexing, factorize, lu_solve, pf_jacobian
from .netmodel import AdmittanceView

logger = logging.getLogger(__name__)

PARAMS = ("g", "b")


# ---------------------------------------------------------------------------
# per-line geometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _LineTerms:
    """Trigonometric building blocks of every branch at one operating point."""

    vf: np.ndarray
    vt: np.ndarray
    tap: np.ndarray
    c: np.ndarray
    s: np.ndarray

    @property
    def a(self) -> np.ndarray:
        return self.vf * self.vt / self.tap

    @classmethod
    def at(cls, view: AdmittanceView, x: PFState) -> "_LineTerms":
        net = view.net
        f, t = net.f_idx, net.t_idx
        delta = x.v_ang[f] - x.v_ang[t] - net.shift
        return cls(x.v_mag[f], x.v_mag[t], net.tap, np.cos(delta), np.sin(delta))


def _row_maps(idx: UnknownIndexing, f: np.ndarray, t: np.ndarray):
    """Row positions (or -1) of the P and Q equations at the from/to buses of each line."""
    p_row = -np.ones(idx.n_bus, dtype=int)
    q_row = -np.ones(idx.n_bus, dtype=int)
    p_row[idx.non_slack] = np.arange(idx.n_ang)
    q_row[idx.pq] = idx.n_ang + np.arange(len(idx.pq))
    return p_row[f], q_row[f], p_row[t], q_row[t]


def _line_derivs(T: _LineTerms, which: str) -> tuple[np.ndarray, ...]:
    """(dp_f, dq_f, dp_t, dq_t) with respect to the series g or b of each line."""
    a, c, s, t2 = T.a, T.c, T.s, T.tap**2
    if which == "g":
        return T.vf**2 / t2 - a * c, -a * s, T.vt**2 - a * c, a * s
    if which == "b":
        return -a * s, -(T.vf**2) / t2 + a * c, a * s, -(T.vt**2) + a * c
    raise ValueError(f"unknown parameter {which!r}")


def _line_derivs_grad(T: _LineTerms, which: str) -> list[tuple[np.ndarray, ...]]:
    """State gradients of :func:`_line_derivs`.

    Returns four tuples (one per injection) of partials with respect to
    (vm_f, vm_t, theta_f, theta_t), each a length-L array.
    """
    a, c, s, tau = T.a, T.c, T.s, T.tap
    vf, vt = T.vf, T.vt
    ac, as_ = a * c, a * s
    if which == "g":
        return [
            (2 * vf / tau**2 - vt / tau * c, -vf / tau * c, as_, -as_),
            (-vt / tau * s, -vf / tau * s, -ac, ac),
            (-vt / tau * c, 2 * vt - vf / tau * c, as_, -as_),
            (vt / tau * s, vf / tau * s, ac, -ac),
        ]
    if which == "b":
        return [
            (-vt / tau * s, -vf / tau * s, -ac, ac),
            (-2 * vf / tau**2 + vt / tau * c, vf / tau * c, -as_, as_),
            (vt / tau * s, vf / tau * s, ac, -ac),
            (vt / tau * c, -2 * vt + vf / tau * c, -as_, as_),
        ]
    raise ValueError(f"unknown parameter {which!r}")


# ---------------------------------------------------------------------------
# data types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AdmittanceJacobian:
    """Derivatives of the mismatch equations w.r.t. every line's g and b (n_x x L each)."""

    dg: sp.csc_matrix
    db: sp.csc_matrix
    indexing: UnknownIndexing

    def _split(self, M):
        n = self.indexing.n_ang
        return M[:n], M[n:]

    @property
    def dp_dg(self):
        return self._split(self.dg)[0]

    @property
    def dq_dg(self):
        return self._split(self.dg)[1]

    @property
    def dp_db(self):
        return self._split(self.db)[0]

    @property
    def dq_db(self):
        return self._split(self.db)[1]


@dataclass(frozen=True, eq=False)
class FirstOrderSens:
    xi_g: np.ndarray  # n_x x L
    xi_b: np.ndarray
    indexing: UnknownIndexing

    @property
    def xi(self) -> np.ndarray:
        """Per-line first-order magnitude ||Xi_g[:, l]||_1 + ||Xi_b[:, l]||_1."""
        return self.norm(1)

    def norm(self, p: int = 1) -> np.ndarray:
        stacked = np.vstack([self.xi_g, self.xi_b])
        return np.linalg.norm(stacked, ord=p, axis=0)

    def predict(self, line: int, dg: float, db: float) -> np.ndarray:
        return self.xi_g[:, line] * dg + self.xi_b[:, line] * db


@dataclass(frozen=True, eq=False)
class SecondOrderSens:
    s_gg: np.ndarray  # n_x x L, column l = d2x/dg_l^2
    s_bb: np.ndarray
    s_gb: np.ndarray
    s_bg: np.ndarray
    indexing: UnknownIndexing

    @property
    def aggregate(self) -> np.ndarray:
        """Per-line sum of the four second-derivative columns."""
        return self.s_gg + self.s_bb + self.s_gb + self.s_bg

    @property
    def s(self) -> np.ndarray:
        return self.norm(1)

    def norm(self, p: int = 1) -> np.ndarray:
        return np.linalg.norm(self.aggregate, ord=p, axis=0)

    def predict(self, line: int, dg: float, db: float) -> np.ndarray:
        """Second-order Taylor term for the perturbation (dg, db) of one line."""
        return 0.5 * (self.s_gg[:, line] * dg**2 + 2 * self.s_gb[:, line] * dg * db
                      + self.s_bb[:, line] * db**2)


@dataclass(frozen=True, eq=False)
class SensitivityBundle:
    first: FirstOrderSens
    second: SecondOrderSens
    state: PFState

    def to_rows(self, p: int = 1) -> list[dict]:
        xi, s = self.first.norm(p), self.second.norm(p)
        return [{"line": k + 1, "xi": float(xi[k]), "s": float(s[k])} for k in range(len(xi))]


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def admittance_jacobian(view: AdmittanceView, x: PFState) -> AdmittanceJacobian:
    """Closed-form derivatives of the mismatch in every line's series g and b."""
    net = view.net
    idx = x.indexing
    T = _LineTerms.at(view, x)
    closed = view.closed
    rows = _row_maps(idx, net.f_idx, net.t_idx)
    L = net.n_branch
    out = {}
    for which in PARAMS:
        vals = _line_derivs(T, which)
        r, cidx, v = [], [], []
        for rr, vv in zip(rows, vals):
            keep = (rr >= 0) & closed
            r.append(rr[keep])
            cidx.append(np.flatnonzero(keep))
            v.append(vv[keep])
        out[which] = sp.csc_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(cidx))),
                                   shape=(idx.n_x, L))
    return AdmittanceJacobian(out["g"], out["b"], idx)


def _expand(idx: UnknownIndexing, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return idx.expand(np.asarray(u, dtype=float))


def hessian_xx_apply(view: AdmittanceView, x: PFState, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear form sum_ij d2f/dx_i dx_j u_i v_j of the mismatch, without forming the tensor.

    Uses V_k = |v_k| exp(j theta_k): the first variation of V along ``u`` is
    exp(j theta)(du_m + j|v| du_theta) and the mixed second variation is
    exp(j theta)(j(du_m dv_theta + dv_m du_theta) - |v| du_theta dv_theta).
    """
    idx = x.indexing
    um, ua = _expand(idx, u)
    vm_, va = _expand(idx, v)
    Y = view.Y
    e = np.exp(1j * x.v_ang)
    V = x.v_mag * e
    Vu = e * (um + 1j * x.v_mag * ua)
    Vv = e * (vm_ + 1j * x.v_mag * va)
    Vuv = e * (1j * (um * va + vm_ * ua) - x.v_mag * ua * va)
    d2S = (Vuv * np.conj(Y @ V) + V * np.conj(Y @ Vuv)
           + Vu * np.conj(Y @ Vv) + Vv * np.conj(Y @ Vu))
    return np.concatenate([d2S.real[idx.non_slack], d2S.imag[idx.pq]])


def mixed_hessian_apply(view: AdmittanceView, x: PFState, which: str, line: int, u: np.ndarray) -> np.ndarray:
    """Directional state derivative of the admittance-Jacobian column of one line parameter."""
    net = view.net
    idx = x.indexing
    out = np.zeros(idx.n_x)
    if not view.closed[line]:
        return out
    dvm, dth = _expand(idx, u)
    f, t = int(net.f_idx[line]), int(net.t_idx[line])
    T = _LineTerms.at(view, x)
    grads = _line_derivs_grad(T, which)
    rows = [r[line] for r in _row_maps(idx, net.f_idx, net.t_idx)]
    for rr, (gvf, gvt, gtf, gtt) in zip(rows, grads):
        if rr >= 0:
            out[rr] += (gvf[line] * dvm[f] + gvt[line] * dvm[t] + gtf[line] * dth[f] + gtt[line] * dth[t])
    return out


def _jacobian_lu(view: AdmittanceView, x: PFState):
    return factorize(pf_jacobian(view, x))


def first_order(view: AdmittanceView, x: PFState, lu=None) -> FirstOrderSens:
    """Solve J Xi = -J_alpha for all 2L parameter columns with one factorisation."""
    if lu is None:
        lu = _jacobian_lu(view, x)
    Ja = admittance_jacobian(view, x)
    L = view.net.n_branch
    rhs = -np.hstack([Ja.dg.toarray(), Ja.db.toarray()])
    if rhs.shape[0] == 0:
        sol = rhs
    else:
        sol = lu_solve(lu, rhs)
    return FirstOrderSens(sol[:, :L], sol[:, L:], x.indexing)


def second_order_systems(view: AdmittanceView, x: PFState, first: FirstOrderSens, line: int) -> dict[str, np.ndarray]:
    """Right-hand-side inner terms of the four second-order systems for one line.

    Each value ``r`` satisfies ``J @ S + r = 0`` for the matching column ``S``.
    The pure second derivative of the mismatch in a single series parameter is
    identically zero because injections are affine in g and b.
    """
    sg, sb = first.xi_g[:, line], first.xi_b[:, line]
    h_gg = hessian_xx_apply(view, x, sg, sg)
    h_bb = hessian_xx_apply(view, x, sb, sb)
    h_gb = hessian_xx_apply(view, x, sg, sb)
    h_bg = hessian_xx_apply(view, x, sb, sg)
    xg_sg = mixed_hessian_apply(view, x, "g", line, sg)
    xb_sb = mixed_hessian_apply(view, x, "b", line, sb)
    xg_sb = mixed_hessian_apply(view, x, "g", line, sb)
    xb_sg = mixed_hessian_apply(view, x, "b", line, sg)
    # injections are affine in (g, b) of one line, so the pure parameter term vanishes
    f_aa = np.zeros(x.indexing.n_x)
    assert not f_aa.any()
    return {
        "gg": h_gg + 2 * xg_sg + f_aa,
        "bb": h_bb + 2 * xb_sb + f_aa,
        "gb": h_gb + xg_sb + xb_sg + f_aa,
        "bg": h_bg + xb_sg + xg_sb + f_aa,
    }


def second_order(view: AdmittanceView, x: PFState, first: FirstOrderSens, lu=None) -> SecondOrderSens:
    """Per-line same-parameter second derivatives of the state, reusing one factorisation of J."""
    if lu is None:
        lu = _jacobian_lu(view, x)
    idx = x.indexing
    L = view.net.n_branch
    cols = {k: np.zeros((idx.n_x, L)) for k in ("gg", "bb", "gb", "bg")}
    closed = view.closed
    rhs = {k: np.zeros((idx.n_x, L)) for k in cols}
    for line in range(L):
        if not closed[line]:
            continue
        for k, r in second_order_systems(view, x, first, line).items():
            rhs[k][:, line] = -r
    if idx.n_x:
        for k in cols:
            cols[k] = lu_solve(lu, rhs[k])
    gap = np.max(np.abs(cols["gb"] - cols["bg"])) if L and idx.n_x else 0.0
    scale = max(1.0, float(np.max(np.abs(cols["gb"]))) if L and idx.n_x else 1.0)
    if gap > 1e-8 * scale:
        logger.warning("mixed second derivatives differ by %.3e", gap)
    return SecondOrderSens(cols["gg"], cols["bb"], cols["gb"], cols["bg"], idx)


def compute(view: AdmittanceView, x: PFState) -> SensitivityBundle:
    """First- and second-order sensitivities at one converged state."""
    lu = _jacobian_lu(view, x)
    first = first_order(view, x, lu)
    return SensitivityBundle(first, second_order(view, x, first, lu), x)


def second_order_residuals(view: AdmittanceView, x: PFState, first: FirstOrderSens,
                           second: SecondOrderSens) -> np.ndarray:
    """Max-norm residual of each of the four second-order systems, per line (L x 4)."""
    J = pf_jacobian(view, x)
    L = view.net.n_branch
    out = np.zeros((L, 4))
    for line in range(L):
        if not view.closed[line]:
            continue
        sysr = second_order_systems(view, x, first, line)
        for j, (k, col) in enumerate((("gg", second.s_gg), ("bb", second.s_bb),
                                      ("gb", second.s_gb), ("bg", second.s_bg))):
            out[line, j] = np.max(np.abs(J @ col[:, line] + sysr[k])) if x.indexing.n_x else 0.0
    return out
