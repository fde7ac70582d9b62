"""Finite-difference oracles that re-solve the power flow under admittance perturbations.

Second differences at small steps are dominated by rounding when the full
state is stored, because ``x`` is O(1) while the curvature signal is
O(h^2 * |S|). :func:`resolve_increment` therefore solves the perturbed
power flow for the increment ``d = x' - x0`` directly, evaluating the change
of the mismatch in a cancellation-free form. It never uses the sensitivity
formulas, so it stays an independent check.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .acpf import InjectionSpec, PFState, factorize, lu_solve, pf_jacobian, solve_pf
from .netmodel import AdmittanceView, Network

logger = logging.getLogger(__name__)


def line_delta_y(view: AdmittanceView, line: int, dg: float, db: float) -> sp.csr_matrix:
    """Change of the bus admittance matrix when line ``line``'s series element moves by dg + j db."""
    net = view.net
    dy = complex(dg, db)
    tau = net.tap[line] * np.exp(1j * net.shift[line])
    f, t = int(net.f_idx[line]), int(net.t_idx[line])
    vals = [dy / net.tap[line] ** 2, -dy / np.conj(tau), -dy / tau, dy]
    return sp.csr_matrix((vals, ([f, f, t, t], [f, t, f, t])), shape=(net.n_bus, net.n_bus))


def _dV(x0: PFState, d: np.ndarray) -> np.ndarray:
    dm, dth = x0.indexing.expand(d)
    rel = 1.0 + dm / x0.v_mag
    em1 = -2.0 * np.sin(0.5 * dth) ** 2 + 1j * np.sin(dth)  # exp(j dth) - 1
    return x0.V * (em1 * rel + dm / x0.v_mag)


def mismatch_increment(view: AdmittanceView, x0: PFState, d: np.ndarray, dY: sp.csr_matrix) -> np.ndarray:
    """f(x0 + d, alpha + dalpha) - f(x0, alpha), evaluated without subtracting large terms."""
    idx = x0.indexing
    V0 = x0.V
    dV = _dV(x0, d)
    Y = view.Y
    V1 = V0 + dV
    dS = dV * np.conj(Y @ V0) + V0 * np.conj(Y @ dV) + dV * np.conj(Y @ dV) + V1 * np.conj(dY @ V1)
    return np.concatenate([dS.real[idx.non_slack], dS.imag[idx.pq]])


def resolve_increment(view: AdmittanceView, x0: PFState, dY: sp.csr_matrix, max_iter: int = 30) -> np.ndarray:
    """State increment that restores the base mismatch after the admittance change ``dY``."""
    view1 = AdmittanceView(view.Y + dY, view.y_series, view.mask, view.net)
    d = np.zeros(x0.indexing.n_x)
    last = np.inf
    for _ in range(max_iter):
        F = mismatch_increment(view, x0, d, dY)
        lu = factorize(pf_jacobian(view1, x0.with_x(x0.x + d)))
        step = lu_solve(lu, -F)
        d = d + step
        size = float(np.max(np.abs(step))) if step.size else 0.0
        if size <= 1e-15 * max(float(np.max(np.abs(d))) if d.size else 0.0, 1e-300) or size >= last:
            break
        last = size
    return d


@dataclass(frozen=True)
class FDReport:
    first_g: np.ndarray  # per-line relative error, inf-norm
    first_b: np.ndarray
    second_gg: np.ndarray
    second_bb: np.ndarray

    def summary(self) -> dict[str, float]:
        return {k: float(np.max(v)) if np.size(v) else 0.0 for k, v in self.__dict__.items()}


def _rel(fd: np.ndarray, col: np.ndarray) -> float:
    scale = float(np.max(np.abs(col))) if col.size else 0.0
    err = float(np.max(np.abs(fd - col))) if col.size else 0.0
    return err / scale if scale > 0 else err


def fd_first(view: AdmittanceView, x0: PFState, line: int, which: str, h: float) -> np.ndarray:
    dg, db = (h, 0.0) if which == "g" else (0.0, h)
    xp = resolve_increment(view, x0, line_delta_y(view, line, dg, db))
    xm = resolve_increment(view, x0, line_delta_y(view, line, -dg, -db))
    return (xp - xm) / (2 * h)


def fd_second(view: AdmittanceView, x0: PFState, line: int, which: str, h: float) -> np.ndarray:
    dg, db = (h, 0.0) if which == "g" else (0.0, h)
    xp = resolve_increment(view, x0, line_delta_y(view, line, dg, db))
    xm = resolve_increment(view, x0, line_delta_y(view, line, -dg, -db))
    return (xp + xm) / h**2


def check_bundle(view: AdmittanceView, x0: PFState, bundle, lines=None) -> FDReport:
    """Relative inf-norm errors of the first- and second-order columns against FD re-solves.

    Steps follow h = 1e-5 max(1, |p|) for first order and 1e-4 max(1, |p|)
    for second order, where p is the perturbed parameter.
    """
    net = view.net
    lines = [k for k in range(net.n_branch) if view.closed[k]] if lines is None else list(lines)
    out = {k: np.zeros(len(lines)) for k in ("first_g", "first_b", "second_gg", "second_bb")}
    for i, l in enumerate(lines):
        g, b = net.g_series[l], net.b_series[l]
        out["first_g"][i] = _rel(fd_first(view, x0, l, "g", 1e-5 * max(1, abs(g))), bundle.first.xi_g[:, l])
        out["first_b"][i] = _rel(fd_first(view, x0, l, "b", 1e-5 * max(1, abs(b))), bundle.first.xi_b[:, l])
        out["second_gg"][i] = _rel(fd_second(view, x0, l, "g", 1e-4 * max(1, abs(g))), bundle.second.s_gg[:, l])
        out["second_bb"][i] = _rel(fd_second(view, x0, l, "b", 1e-4 * max(1, abs(b))), bundle.second.s_bb[:, l])
    return FDReport(**out)


def perturbed_state(net, state: PFState, s: InjectionSpec, line: int, dg: float, db: float) -> PFState | None:
    """Full re-solve of the power flow with one line's series admittance shifted by dg + j db."""
    br = net.branches[line]
    zz = 1.0 / (br.y_series + complex(dg, db))
    branches = list(net.branches)
    branches[line] = replace(br, r=zz.real, x=zz.imag)
    net2 = Network(net.base_mva, net.buses, tuple(branches), net.generators, net.name)
    st = solve_pf(net2, state.mask, s=s, x0=state)
    return st if st.converged else None


__all__ = ["line_delta_y", "mismatch_increment", "resolve_increment", "fd_first", "fd_second",
           "check_bundle", "perturbed_state", "FDReport"]
