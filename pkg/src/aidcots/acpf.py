"""Newton-Raphson AC power flow on a reduced unknown set.

Unknowns are angles at every non-slack bus followed by magnitudes at PQ
buses; equations are active-power balance at non-slack buses followed by
reactive-power balance at PQ buses. Generator reactive limits are not
enforced here.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DisconnectedNetwork, SingularJacobian
from .netmodel import PV, SLACK, AdmittanceView, Network, build_admittance

logger = logging.getLogger(__name__)

TOL = 1e-8
MAX_ITER = 50
DIVERGED = 1e10  # mismatch beyond this is treated as divergence


@dataclass(frozen=True, eq=False)
class UnknownIndexing:
    """Map between full bus vectors and the reduced state/equation vectors."""

    n_bus: int
    slack: int
    pq: np.ndarray  # internal bus indices, ascending
    non_slack: np.ndarray

    @classmethod
    def for_network(cls, net: Network) -> "UnknownIndexing":
        kinds = net.bus_kind
        pq = np.array([k for k, t in enumerate(kinds) if t not in (SLACK, PV)], dtype=int)
        ns = np.array([k for k in range(net.n_bus) if k != net.slack_index], dtype=int)
        return cls(net.n_bus, net.slack_index, pq, ns)

    @property
    def n_x(self) -> int:
        return len(self.non_slack) + len(self.pq)

    @property
    def n_ang(self) -> int:
        return len(self.non_slack)

    @cached_property
    def labels(self) -> list[tuple[str, int]]:
        """Ordered (quantity, bus index) pairs; quantity is 'theta' or 'vm'."""
        return [("theta", int(k)) for k in self.non_slack] + [("vm", int(k)) for k in self.pq]

    @cached_property
    def position(self) -> dict[tuple[str, int], int]:
        return {lab: i for i, lab in enumerate(self.labels)}

    def pack(self, v_mag: np.ndarray, v_ang: np.ndarray) -> np.ndarray:
        return np.concatenate([v_ang[self.non_slack], v_mag[self.pq]])

    def unpack(self, x: np.ndarray, v_mag: np.ndarray, v_ang: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Overwrite the unknown entries of copies of (v_mag, v_ang) with ``x``."""
        vm = np.array(v_mag, dtype=float, copy=True)
        va = np.array(v_ang, dtype=float, copy=True)
        va[self.non_slack] = x[: self.n_ang]
        vm[self.pq] = x[self.n_ang:]
        return vm, va

    def expand(self, dx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Full-length (d|v|, dθ) for a reduced direction; fixed entries are zero."""
        return self.unpack(dx, np.zeros(self.n_bus), np.zeros(self.n_bus))


@dataclass(frozen=True)
class InjectionSpec:
    p_inject: np.ndarray
    q_inject: np.ndarray


@dataclass(frozen=True, eq=False)
class PFState:
    v_mag: np.ndarray
    v_ang: np.ndarray
    converged: bool
    iterations: int
    max_mismatch: float
    indexing: UnknownIndexing
    history: tuple[float, ...] = ()
    mask: np.ndarray | None = field(default=None, repr=False)

    @property
    def V(self) -> np.ndarray:
        return self.v_mag * np.exp(1j * self.v_ang)

    @property
    def x(self) -> np.ndarray:
        return self.indexing.pack(self.v_mag, self.v_ang)

    def with_x(self, x: np.ndarray) -> "PFState":
        vm, va = self.indexing.unpack(x, self.v_mag, self.v_ang)
        return PFState(vm, va, False, 0, np.nan, self.indexing, (), self.mask)


def injections(net: Network, p_gen: np.ndarray | None = None, q_gen: np.ndarray | None = None) -> InjectionSpec:
    """Net bus injections from per-generator dispatch (p.u.); defaults to the case-file dispatch."""
    if p_gen is None:
        p_gen = np.array([g.p_gen for g in net.generators])
    if q_gen is None:
        q_gen = np.array([g.q_gen for g in net.generators])
    on = net.gen_on
    pg = np.zeros(net.n_bus)
    qg = np.zeros(net.n_bus)
    np.add.at(pg, net.gen_bus_idx[on], np.asarray(p_gen)[on])
    np.add.at(qg, net.gen_bus_idx[on], np.asarray(q_gen)[on])
    return InjectionSpec(pg - net.p_demand, qg - net.q_demand)


def power_injection(view: AdmittanceView, v_mag: np.ndarray, v_ang: np.ndarray) -> np.ndarray:
    """Complex injections S = V * conj(Y V) at every bus."""
    V = v_mag * np.exp(1j * v_ang)
    return V * np.conj(view.Y @ V)


def mismatch(view: AdmittanceView, x: PFState, s: InjectionSpec) -> np.ndarray:
    """Computed minus specified injection, in equation order (P at non-slack, Q at PQ)."""
    idx = x.indexing
    S = power_injection(view, x.v_mag, x.v_ang)
    return np.concatenate([S.real[idx.non_slack] - s.p_inject[idx.non_slack],
                           S.imag[idx.pq] - s.q_inject[idx.pq]])


def dS_dV(view: AdmittanceView, v_mag: np.ndarray, v_ang: np.ndarray) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Full complex derivatives of bus injections w.r.t. magnitudes and angles."""
    Y = view.Y
    V = v_mag * np.exp(1j * v_ang)
    I = Y @ V
    dV = sp.diags(V)
    dVn = sp.diags(V / np.abs(V))
    dS_dVm = dV @ np.conj(Y @ dVn) + sp.diags(np.conj(I)) @ dVn
    dS_dVa = 1j * dV @ np.conj(sp.diags(I) - Y @ dV)
    return sp.csr_matrix(dS_dVm), sp.csr_matrix(dS_dVa)


def pf_jacobian(view: AdmittanceView, x: PFState) -> sp.csc_matrix:
    """Reduced Jacobian of :func:`mismatch` with respect to the unknowns."""
    idx = x.indexing
    dVm, dVa = dS_dV(view, x.v_mag, x.v_ang)
    ns, pq = idx.non_slack, idx.pq
    J = sp.bmat([
        [dVa[ns][:, ns].real, dVm[ns][:, pq].real],
        [dVa[pq][:, ns].imag, dVm[pq][:, pq].imag],
    ], format="csc")
    J.eliminate_zeros()
    return J


def setpoint_jacobian(view: AdmittanceView, x: PFState, buses: np.ndarray) -> sp.csc_matrix:
    """Derivative of :func:`mismatch` with respect to magnitudes at fixed-voltage ``buses``."""
    idx = x.indexing
    dVm, _ = dS_dV(view, x.v_mag, x.v_ang)
    cols = dVm[:, buses]
    return sp.vstack([cols[idx.non_slack].real, cols[idx.pq].imag], format="csc")


def factorize(J: sp.csc_matrix, iteration: int | None = None):
    """Sparse LU of ``J``; raises :class:`SingularJacobian` on failure."""
    if J.shape[0] == 0:
        return None
    try:
        lu = spla.splu(sp.csc_matrix(J))
    except RuntimeError:
        raise SingularJacobian(iteration) from None
    d = np.abs(lu.U.diagonal())
    if not np.all(np.isfinite(d)) or d.min() <= 1e-14 * max(d.max(), 1.0):
        raise SingularJacobian(iteration)
    return lu


def lu_solve(lu, rhs: np.ndarray) -> np.ndarray:
    if lu is None:
        return np.zeros_like(rhs)
    return lu.solve(rhs)


def flat_start(net: Network, idx: UnknownIndexing, v_set: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    vm = np.ones(net.n_bus)
    vs = net.v_setpoint if v_set is None else np.asarray(v_set, dtype=float)
    fixed = np.setdiff1d(np.arange(net.n_bus), idx.pq)
    vm[fixed] = vs[fixed]
    return vm, np.zeros(net.n_bus)


def solve_pf(
    net: Network,
    z=None,
    s: InjectionSpec | None = None,
    x0: PFState | None = None,
    v_set: np.ndarray | None = None,
    tol: float = TOL,
    max_iter: int = MAX_ITER,
) -> PFState:
    """Full-step Newton power flow.

    Parameters
    ----------
    net, z
        Network and switching mask (default: all in-service lines closed).
    s
        Net injections; default is the case-file dispatch.
    x0
        Starting state; default is a flat start with setpoints at PV and slack buses.
    v_set
        Per-bus magnitude setpoints used at PV and slack buses when starting flat.

    Returns
    -------
    PFState
        ``converged`` is False if ``max_iter`` is reached; this is not an error.
    """
    z = net.full_mask() if z is None else np.asarray(z, dtype=int)
    comps = net.components(z)
    if len(comps) > 1:
        raise DisconnectedNetwork(comps)
    view = build_admittance(net, z)
    s = injections(net) if s is None else s
    idx = UnknownIndexing.for_network(net)
    if x0 is None:
        vm, va = flat_start(net, idx, v_set)
    else:
        vm, va = np.array(x0.v_mag, dtype=float), np.array(x0.v_ang, dtype=float)
        if v_set is not None:
            fixed = np.setdiff1d(np.arange(net.n_bus), idx.pq)
            vm[fixed] = np.asarray(v_set)[fixed]
    state = PFState(vm, va, False, 0, np.nan, idx, (), z)
    history = []
    for it in range(max_iter + 1):
        F = mismatch(view, state, s)
        norm = float(np.max(np.abs(F))) if F.size else 0.0
        history.append(norm)
        if not np.isfinite(norm) or norm > DIVERGED:
            break
        if norm <= tol:
            return PFState(state.v_mag, state.v_ang, True, it, norm, idx, tuple(history), z)
        if it == max_iter:
            break
        lu = factorize(pf_jacobian(view, state), it)
        dx = lu_solve(lu, -F)
        state = state.with_x(state.x + dx)
    logger.info("power flow did not converge after %d iterations (mismatch %.3e)", len(history) - 1, history[-1])
    return PFState(state.v_mag, state.v_ang, False, len(history) - 1, history[-1], idx, tuple(history), z)


def branch_flows(view: AdmittanceView, v_mag: np.ndarray, v_ang: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Complex power entering each branch at its from and to ends (zero where open)."""
    from .netmodel import branch_stamps

    net = view.net
    yff, yft, ytf, ytt = branch_stamps(net, view.mask)
    V = v_mag * np.exp(1j * v_ang)
    Vf, Vt = V[net.f_idx], V[net.t_idx]
    If = yff * Vf + yft * Vt
    It = ytf * Vf + ytt * Vt
    return Vf * np.conj(If), Vt * np.conj(It)
