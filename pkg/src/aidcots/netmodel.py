"""Network data model, MATPOWER case parsing and admittance assembly.

All electrical quantities are stored in per-unit on ``base_mva``; angles are
in radians. Cost polynomials keep MATPOWER units (dollars per MW^k) because
the optimisation models price dispatch in MW.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import DuplicateBusId, MalformedRow, MissingMatrix, NoSlackBus

logger = logging.getLogger(__name__)

SLACK, PV, PQ, ISOLATED = "slack", "PV", "PQ", "isolated"
_BUS_KIND = {3: SLACK, 2: PV, 1: PQ, 4: ISOLATED}
_KIND_CODE = {v: k for k, v in _BUS_KIND.items()}

# MATPOWER column counts that must be present
_MIN_COLS = {"bus": 13, "gen": 10, "branch": 11}


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str
    p_demand: float
    q_demand: float
    g_shunt: float
    b_shunt: float
    v_min: float
    v_max: float
    v_setpoint: float
    v_init: float = 1.0
    a_init: float = 0.0
    base_kv: float = 1.0
    area: int = 1
    zone: int = 1


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charge: float
    rate_a: float
    tap: float = 1.0
    shift: float = 0.0
    in_service: bool = True
    switchable: bool = True
    unlimited: bool = False
    angmin: float = -2 * np.pi
    angmax: float = 2 * np.pi
    rate_b: float = 0.0
    rate_c: float = 0.0

    @property
    def is_transformer(self) -> bool:
        return self.tap != 1.0 or self.shift != 0.0

    @property
    def y_series(self) -> complex:
        return 1.0 / complex(self.r, self.x)


@dataclass(frozen=True)
class Generator:
    bus: int
    p_gen: float
    q_gen: float
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    v_setpoint: float
    cost: tuple[float, ...] = (0.0, 0.0, 0.0)  # ascending: c0 + c1*P + c2*P^2, P in MW
    in_service: bool = True
    m_base: float = 100.0

    def cost_at(self, p_mw: float) -> float:
        return float(sum(c * p_mw**k for k, c in enumerate(self.cost)))


@dataclass(frozen=True, eq=False)
class Network:
    """Immutable grid description with derived index and array views."""

    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    name: str = "case"

    def __post_init__(self):
        seen = {}
        for k, b in enumerate(self.buses):
            if b.id in seen:
                raise DuplicateBusId(b.id, k + 1)
            seen[b.id] = k
        if not any(b.kind == SLACK for b in self.buses):
            raise NoSlackBus()
        for br in self.branches:
            if br.from_bus not in seen or br.to_bus not in seen:
                raise ValueError(f"branch {br.from_bus}-{br.to_bus} references unknown bus")
            if br.from_bus == br.to_bus:
                raise ValueError(f"branch {br.from_bus}-{br.to_bus} is a self-loop")
            if br.x == 0 and br.r == 0:
                raise ValueError(f"branch {br.from_bus}-{br.to_bus} has zero impedance")
        for g in self.generators:
            if g.bus not in seen:
                raise ValueError(f"generator references unknown bus {g.bus}")

    # -- sizes and index maps --------------------------------------------------

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    @cached_property
    def bus_index(self) -> dict[int, int]:
        return {b.id: k for k, b in enumerate(self.buses)}

    @cached_property
    def slack_index(self) -> int:
        slacks = [k for k, b in enumerate(self.buses) if b.kind == SLACK]
        if len(slacks) > 1:
            logger.warning("%s: %d reference buses, using bus %d", self.name, len(slacks),
                           self.buses[slacks[0]].id)
        return slacks[0]

    @cached_property
    def bus_kind(self) -> tuple[str, ...]:
        """Effective bus kinds: one slack, PV only where an in-service generator sits."""
        has_gen = np.zeros(self.n_bus, dtype=bool)
        for g in self.generators:
            if g.in_service:
                has_gen[self.bus_index[g.bus]] = True
        out = []
        for k, b in enumerate(self.buses):
            if k == self.slack_index:
                out.append(SLACK)
            elif b.kind in (SLACK, PV) and has_gen[k]:
                out.append(PV)
            elif b.kind == ISOLATED:
                out.append(ISOLATED)
            else:
                out.append(PQ)
        return tuple(out)

    # -- arrays ----------------------------------------------------------------

    @cached_property
    def f_idx(self) -> np.ndarray:
        return np.array([self.bus_index[br.from_bus] for br in self.branches], dtype=int)

    @cached_property
    def t_idx(self) -> np.ndarray:
        return np.array([self.bus_index[br.to_bus] for br in self.branches], dtype=int)

    @cached_property
    def gen_bus_idx(self) -> np.ndarray:
        return np.array([self.bus_index[g.bus] for g in self.generators], dtype=int)

    @cached_property
    def in_service(self) -> np.ndarray:
        return np.array([br.in_service for br in self.branches], dtype=bool)

    @cached_property
    def gen_on(self) -> np.ndarray:
        return np.array([g.in_service for g in self.generators], dtype=bool)

    @cached_property
    def y_series(self) -> np.ndarray:
        return np.array([br.y_series for br in self.branches], dtype=complex)

    @property
    def g_series(self) -> np.ndarray:
        return self.y_series.real

    @property
    def b_series(self) -> np.ndarray:
        return self.y_series.imag

    @cached_property
    def tap(self) -> np.ndarray:
        return np.array([br.tap for br in self.branches])

    @cached_property
    def shift(self) -> np.ndarray:
        return np.array([br.shift for br in self.branches])

    @cached_property
    def b_charge(self) -> np.ndarray:
        return np.array([br.b_charge for br in self.branches])

    @cached_property
    def rate_a(self) -> np.ndarray:
        return np.array([br.rate_a for br in self.branches])

    @cached_property
    def p_demand(self) -> np.ndarray:
        return np.array([b.p_demand for b in self.buses])

    @cached_property
    def q_demand(self) -> np.ndarray:
        return np.array([b.q_demand for b in self.buses])

    @cached_property
    def g_shunt(self) -> np.ndarray:
        return np.array([b.g_shunt for b in self.buses])

    @cached_property
    def b_shunt(self) -> np.ndarray:
        return np.array([b.b_shunt for b in self.buses])

    @cached_property
    def v_setpoint(self) -> np.ndarray:
        """Voltage setpoints per bus: generator setpoint where one exists, else the file value."""
        v = np.array([b.v_setpoint for b in self.buses])
        for g in self.generators:
            if g.in_service:
                v[self.bus_index[g.bus]] = g.v_setpoint
        return v

    @cached_property
    def v_min(self) -> np.ndarray:
        return np.array([b.v_min for b in self.buses])

    @cached_property
    def v_max(self) -> np.ndarray:
        return np.array([b.v_max for b in self.buses])

    @property
    def total_demand(self) -> float:
        return float(self.p_demand.sum())

    # -- topology helpers ------------------------------------------------------

    def full_mask(self) -> np.ndarray:
        """Switching mask with every in-service branch closed."""
        return self.in_service.astype(int)

    def mask_opening(self, opened: Iterable[int]) -> np.ndarray:
        """Mask with the given 1-based branch positions opened."""
        z = self.full_mask()
        for pos in opened:
            if not 1 <= pos <= self.n_branch:
                raise IndexError(f"branch position {pos} out of range 1..{self.n_branch}")
            z[pos - 1] = 0
        return z

    def components(self, z: Sequence[int] | np.ndarray) -> list[list[int]]:
        """Connected components (internal bus indices) under mask ``z``; slack component first."""
        z = np.asarray(z, dtype=bool) & self.in_service
        adj = sp.coo_matrix(
            (np.ones(int(z.sum())), (self.f_idx[z], self.t_idx[z])),
            shape=(self.n_bus, self.n_bus),
        )
        n, labels = connected_components(adj, directed=False)
        groups = [sorted(np.flatnonzero(labels == k).tolist()) for k in range(n)]
        groups.sort(key=lambda g: (self.slack_index not in g, g[0]))
        return groups

    def bridges(self, z: Sequence[int] | np.ndarray | None = None) -> set[int]:
        """0-based positions of branches whose removal disconnects the closed topology."""
        z = self.full_mask() if z is None else np.asarray(z)
        closed = [k for k in range(self.n_branch) if z[k] and self.in_service[k]]
        base = len(self.components(z))
        out = set()
        for k in closed:
            zz = np.array(z, copy=True)
            zz[k] = 0
            if len(self.components(zz)) > base:
                out.add(k)
        return out

    def subnetwork(self, keep_buses: Sequence[int], z: Sequence[int] | np.ndarray) -> tuple["Network", np.ndarray]:
        """Network restricted to internal bus indices ``keep_buses`` and branches closed in ``z``.

        Returns the reduced network and the original 0-based positions of its branches.
        """
        keep = set(int(k) for k in keep_buses)
        z = np.asarray(z)
        ids = {self.buses[k].id for k in keep}
        buses = tuple(b for k, b in enumerate(self.buses) if k in keep)
        pos = [k for k, br in enumerate(self.branches)
               if z[k] and br.in_service and br.from_bus in ids and br.to_bus in ids]
        branches = tuple(self.branches[k] for k in pos)
        gens = tuple(g if g.bus in ids else replace(g, in_service=False) for g in self.generators)
        gens = tuple(g for g in gens if g.bus in ids)
        return Network(self.base_mva, buses, branches, gens, self.name), np.array(pos, dtype=int)

    # -- serialisation ---------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "base_mva": self.base_mva,
            "buses": [asdict(b) for b in self.buses],
            "branches": [asdict(br) for br in self.branches],
            "generators": [{**asdict(g), "cost": list(g.cost)} for g in self.generators],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "Network":
        return cls(
            base_mva=float(d["base_mva"]),
            buses=tuple(Bus(**b) for b in d["buses"]),
            branches=tuple(Branch(**br) for br in d["branches"]),
            generators=tuple(Generator(**{**g, "cost": tuple(g["cost"])}) for g in d["generators"]),
            name=d.get("name", "case"),
        )

    @classmethod
    def from_json(cls, text: str) -> "Network":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# MATPOWER parsing
# ---------------------------------------------------------------------------

_SCALAR_RE = re.compile(r"mpc\.baseMVA\s*=\s*([^;\n]+);")
_NAME_RE = re.compile(r"function\s+mpc\s*=\s*(\w+)")


def _matrix_rows(text: str, name: str) -> list[tuple[int, list[float]]]:
    m = re.search(r"mpc\." + name + r"\s*=\s*\[", text)
    if m is None:
        raise MissingMatrix(name)
    end = text.find("]", m.end())
    if end < 0:
        raise MalformedRow(text.count("\n", 0, m.start()) + 1, f"unterminated mpc.{name} block")
    body_start = m.end()
    line0 = text.count("\n", 0, body_start) + 1
    rows = []
    for k, raw in enumerate(text[body_start:end].split("\n")):
        code = raw.split("%", 1)[0]
        for chunk in code.split(";"):
            chunk = chunk.strip().replace(",", " ")
            if not chunk:
                continue
            try:
                rows.append((line0 + k, [float(v) for v in chunk.split()]))
            except ValueError:
                raise MalformedRow(line0 + k, f"non-numeric entry in mpc.{name}") from None
    return rows


def _check_cols(rows, name):
    need = _MIN_COLS[name]
    for line, vals in rows:
        if len(vals) < need:
            raise MalformedRow(line, f"mpc.{name} row has {len(vals)} columns, expected at least {need}")


def parse_matpower(text: str, name: str | None = None) -> Network:
    """Parse MATPOWER ``.m`` case text into a per-unit :class:`Network`."""
    m = _SCALAR_RE.search(text)
    if m is None:
        raise MissingMatrix("baseMVA")
    try:
        base = float(m.group(1).strip())
    except ValueError:
        raise MalformedRow(text.count("\n", 0, m.start()) + 1, "baseMVA is not a number") from None
    if name is None:
        nm = _NAME_RE.search(text)
        name = nm.group(1) if nm else "case"

    bus_rows = _matrix_rows(text, "bus")
    gen_rows = _matrix_rows(text, "gen")
    br_rows = _matrix_rows(text, "branch")
    try:
        cost_rows = _matrix_rows(text, "gencost")
    except MissingMatrix:
        cost_rows = []
    for rows, nm_ in ((bus_rows, "bus"), (gen_rows, "gen"), (br_rows, "branch")):
        _check_cols(rows, nm_)

    buses = []
    seen = set()
    for line, v in bus_rows:
        bid = int(v[0])
        if bid in seen:
            raise DuplicateBusId(bid, line)
        seen.add(bid)
        code = int(v[1])
        if code not in _BUS_KIND:
            raise MalformedRow(line, f"unknown bus type {code}")
        if v[12] > v[11]:
            raise MalformedRow(line, "Vmin exceeds Vmax")
        buses.append(Bus(
            id=bid, kind=_BUS_KIND[code],
            p_demand=v[2] / base, q_demand=v[3] / base,
            g_shunt=v[4] / base, b_shunt=v[5] / base,
            v_min=v[12], v_max=v[11], v_setpoint=v[7],
            v_init=v[7], a_init=np.deg2rad(v[8]), base_kv=v[9],
            area=int(v[6]), zone=int(v[10]),
        ))
    if not any(b.kind == SLACK for b in buses):
        raise NoSlackBus()

    costs = []
    for line, v in cost_rows[: len(gen_rows)]:
        model = int(v[0])
        if model != 2:
            raise MalformedRow(line, "only polynomial (model 2) generator costs are supported")
        n = int(v[3])
        coef = v[4:4 + n]
        if len(coef) < n:
            raise MalformedRow(line, f"gencost row declares {n} coefficients, has {len(coef)}")
        asc = list(reversed(coef))
        while len(asc) > 3 and asc[-1] == 0.0:
            asc.pop()
        if len(asc) > 3:
            raise MalformedRow(line, "generator cost polynomial of degree > 2")
        costs.append(tuple(asc + [0.0] * (3 - len(asc))))
    while len(costs) < len(gen_rows):
        costs.append((0.0, 0.0, 0.0))

    gens = []
    for (line, v), cost in zip(gen_rows, costs):
        if int(v[0]) not in seen:
            raise MalformedRow(line, f"generator at unknown bus {int(v[0])}")
        if v[9] > v[8] or v[4] > v[3]:
            raise MalformedRow(line, "generator lower limit exceeds upper limit")
        gens.append(Generator(
            bus=int(v[0]), p_gen=v[1] / base, q_gen=v[2] / base,
            q_max=v[3] / base, q_min=v[4] / base, v_setpoint=v[5], m_base=v[6],
            in_service=v[7] > 0, p_max=v[8] / base, p_min=v[9] / base, cost=cost,
        ))

    total_pd = sum(b.p_demand for b in buses)
    sentinel = 10.0 * max(total_pd, 1.0)
    branches = []
    for line, v in br_rows:
        f, t = int(v[0]), int(v[1])
        if f not in seen or t not in seen:
            raise MalformedRow(line, f"branch references unknown bus ({f}, {t})")
        if f == t:
            raise MalformedRow(line, "branch connects a bus to itself")
        if v[3] == 0.0:
            raise MalformedRow(line, "branch reactance is zero")
        tap = v[8] if v[8] != 0.0 else 1.0
        on = v[10] > 0
        unlimited = v[5] == 0.0
        branches.append(Branch(
            from_bus=f, to_bus=t, r=v[2], x=v[3], b_charge=v[4],
            rate_a=sentinel if unlimited else v[5] / base,
            rate_b=v[6] / base, rate_c=v[7] / base,
            tap=tap, shift=np.deg2rad(v[9]), in_service=on, switchable=on,
            unlimited=unlimited,
            angmin=np.deg2rad(v[11]) if len(v) > 11 else -2 * np.pi,
            angmax=np.deg2rad(v[12]) if len(v) > 12 else 2 * np.pi,
        ))
    return Network(base, tuple(buses), tuple(branches), tuple(gens), name)


def load_matpower(path) -> Network:
    with open(path, encoding="utf-8") as fh:
        return parse_matpower(fh.read())


def _fmt(v: float) -> str:
    return repr(float(v))


def to_matpower(net: Network) -> str:
    """Serialise back to MATPOWER text; parse(to_matpower(net)) reproduces ``net``."""
    base = net.base_mva
    out = [f"function mpc = {net.name}", "mpc.version = '2';", f"mpc.baseMVA = {_fmt(base)};", "", "mpc.bus = ["]
    for b in net.buses:
        out.append("\t" + "\t".join([
            str(b.id), str(_KIND_CODE[b.kind]), _fmt(b.p_demand * base), _fmt(b.q_demand * base),
            _fmt(b.g_shunt * base), _fmt(b.b_shunt * base), str(b.area), _fmt(b.v_setpoint),
            _fmt(np.rad2deg(b.a_init)), _fmt(b.base_kv), str(b.zone), _fmt(b.v_max), _fmt(b.v_min),
        ]) + ";")
    out += ["];", "", "mpc.gen = ["]
    for g in net.generators:
        out.append("\t" + "\t".join([
            str(g.bus), _fmt(g.p_gen * base), _fmt(g.q_gen * base), _fmt(g.q_max * base),
            _fmt(g.q_min * base), _fmt(g.v_setpoint), _fmt(g.m_base), "1" if g.in_service else "0",
            _fmt(g.p_max * base), _fmt(g.p_min * base),
        ]) + ";")
    out += ["];", "", "mpc.branch = ["]
    for br in net.branches:
        out.append("\t" + "\t".join([
            str(br.from_bus), str(br.to_bus), _fmt(br.r), _fmt(br.x), _fmt(br.b_charge),
            "0" if br.unlimited else _fmt(br.rate_a * base), _fmt(br.rate_b * base),
            _fmt(br.rate_c * base), _fmt(0.0 if br.tap == 1.0 else br.tap),
            _fmt(np.rad2deg(br.shift)), "1" if br.in_service else "0",
            _fmt(np.rad2deg(br.angmin)), _fmt(np.rad2deg(br.angmax)),
        ]) + ";")
    out += ["];", "", "mpc.gencost = ["]
    for g in net.generators:
        c0, c1, c2 = g.cost
        out.append("\t2\t0\t0\t3\t" + "\t".join(_fmt(c) for c in (c2, c1, c0)) + ";")
    out += ["];", ""]
    return "\n".join(out)


# ---------------------------------------------------------------------------
# Incidence and admittance
# ---------------------------------------------------------------------------


def incidence(net: Network) -> sp.csc_matrix:
    """Signed bus-branch incidence (N x L): +1 at the from bus, -1 at the to bus."""
    L = net.n_branch
    rows = np.concatenate([net.f_idx, net.t_idx])
    cols = np.concatenate([np.arange(L), np.arange(L)])
    vals = np.concatenate([np.ones(L), -np.ones(L)])
    return sp.csc_matrix((vals, (rows, cols)), shape=(net.n_bus, L))


@dataclass(frozen=True, eq=False)
class AdmittanceView:
    """Bus admittance ``Y = G + jB`` for one switching mask."""

    Y: sp.csr_matrix
    y_series: np.ndarray
    mask: np.ndarray
    net: Network = field(repr=False)

    @property
    def G(self) -> sp.csr_matrix:
        return self.Y.real

    @property
    def B(self) -> sp.csr_matrix:
        return self.Y.imag

    @property
    def closed(self) -> np.ndarray:
        """Boolean per branch: in service and closed under the mask."""
        return self.mask.astype(bool) & self.net.in_service


def branch_stamps(net: Network, z) -> tuple[np.ndarray, ...]:
    """Per-branch pi-model entries (Yff, Yft, Ytf, Ytt) with tap and shift, zeroed where open."""
    on = np.asarray(z, dtype=bool) & net.in_service
    ys = net.y_series * on
    bc = net.b_charge * on
    tau = net.tap * np.exp(1j * net.shift)
    ytt = ys + 0.5j * bc
    yff = ytt / (net.tap**2)
    yft = -ys / np.conj(tau)
    ytf = -ys / tau
    return yff, yft, ytf, ytt


def build_admittance(net: Network, z=None) -> AdmittanceView:
    """Assemble the bus admittance matrix for switching mask ``z`` (1 = closed)."""
    z = net.full_mask() if z is None else np.asarray(z, dtype=int)
    if z.shape != (net.n_branch,):
        raise ValueError(f"mask length {z.shape} != number of branches {net.n_branch}")
    yff, yft, ytf, ytt = branch_stamps(net, z)
    f, t = net.f_idx, net.t_idx
    n = net.n_bus
    rows = np.concatenate([f, f, t, t, np.arange(n)])
    cols = np.concatenate([f, t, f, t, np.arange(n)])
    vals = np.concatenate([yff, yft, ytf, ytt, net.g_shunt + 1j * net.b_shunt])
    Y = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    Y.sum_duplicates()
    return AdmittanceView(Y=Y, y_series=net.y_series.copy(), mask=z.copy(), net=net)
