"""Solver-agnostic mixed-integer model description."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp

LE, GE, EQ = "<=", ">=", "=="


@dataclass(frozen=True)
class QuadRow:
    """lin . x + sum_j quad[j] x_j^2 <= rhs, with quadratic terms on binaries only."""

    name: str
    lin: Mapping[int, float]
    quad: Mapping[int, float]
    rhs: float

    def value(self, x: np.ndarray) -> float:
        return float(sum(a * x[j] for j, a in self.lin.items()) + sum(a * x[j] ** 2 for j, a in self.quad.items()))


@dataclass(frozen=True)
class AbsCone:
    """|scale * x[var]| <= x[epi], a one-dimensional 1-norm cone."""

    name: str
    var: int
    scale: float
    epi: int


@dataclass(frozen=True, eq=False)
class ModelDescription:
    var_names: tuple[str, ...]
    lb: np.ndarray
    ub: np.ndarray
    binary: np.ndarray
    A: sp.csr_matrix
    sense: tuple[str, ...]
    rhs: np.ndarray
    row_names: tuple[str, ...]
    c: np.ndarray
    c0: float = 0.0
    q_obj: np.ndarray | None = None  # diagonal quadratic objective, binaries only
    quad_rows: tuple[QuadRow, ...] = ()
    cones: tuple[AbsCone, ...] = ()
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.var_names)
        if self.A.shape != (len(self.row_names), n):
            raise ValueError(f"constraint matrix shape {self.A.shape} does not match names")
        if self.q_obj is not None and np.any(self.q_obj[~self.binary] != 0):
            raise ValueError("quadratic objective terms are allowed on binaries only")
        for q in self.quad_rows:
            if any(not self.binary[j] for j in q.quad):
                raise ValueError(f"quadratic row {q.name} has a non-binary squared term")

    @property
    def n_var(self) -> int:
        return len(self.var_names)

    @property
    def n_row(self) -> int:
        return len(self.row_names)

    @property
    def binaries(self) -> np.ndarray:
        return np.flatnonzero(self.binary)

    @property
    def is_linear(self) -> bool:
        return not self.quad_rows and not self.cones and (self.q_obj is None or not np.any(self.q_obj))

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except AttributeError:
            object.__setattr__(self, "_index", {v: k for k, v in enumerate(self.var_names)})
            return self._index[name]

    @property
    def row_lo(self) -> np.ndarray:
        s = np.array(self.sense)
        return np.where(s == LE, -np.inf, self.rhs)

    @property
    def row_hi(self) -> np.ndarray:
        s = np.array(self.sense)
        return np.where(s == GE, np.inf, self.rhs)

    def objective(self, x: np.ndarray) -> float:
        val = float(self.c @ x) + self.c0
        if self.q_obj is not None:
            val += float(self.q_obj @ (x**2))
        return val

    def residuals(self, x: np.ndarray) -> dict[str, float]:
        """Largest violation of each constraint family at ``x``."""
        act = self.A @ x
        lin = np.maximum(np.maximum(self.row_lo - act, act - self.row_hi), 0.0)
        bnd = np.maximum(np.maximum(self.lb - x, x - self.ub), 0.0)
        integ = np.abs(x[self.binary] - np.round(x[self.binary])) if self.binary.any() else np.zeros(0)
        quad = [max(q.value(x) - q.rhs, 0.0) for q in self.quad_rows]
        cone = [max(abs(k.scale * x[k.var]) - x[k.epi], 0.0) for k in self.cones]
        return {
            "linear": float(lin.max(initial=0.0)),
            "bounds": float(bnd.max(initial=0.0)),
            "integrality": float(integ.max(initial=0.0)),
            "quadratic": float(max(quad, default=0.0)),
            "cone": float(max(cone, default=0.0)),
        }

    def with_bounds(self, lb: np.ndarray | None = None, ub: np.ndarray | None = None) -> "ModelDescription":
        return ModelDescription(
            self.var_names, self.lb if lb is None else np.asarray(lb, float),
            self.ub if ub is None else np.asarray(ub, float), self.binary, self.A, self.sense, self.rhs,
            self.row_names, self.c, self.c0, self.q_obj, self.quad_rows, self.cones, self.meta)

    def summary(self) -> dict[str, int]:
        return {"variables": self.n_var, "binaries": int(self.binary.sum()), "rows": self.n_row,
                "quadratic_rows": len(self.quad_rows), "cones": len(self.cones)}


class ModelBuilder:
    """Incremental construction of a :class:`ModelDescription`."""

    def __init__(self):
        self.names: list[str] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.binary: list[bool] = []
        self.c: list[float] = []
        self.rows: list[dict[int, float]] = []
        self.sense: list[str] = []
        self.rhs: list[float] = []
        self.row_names: list[str] = []
        self.quad_rows: list[QuadRow] = []
        self.cones: list[AbsCone] = []
        self.q_obj: dict[int, float] = {}
        self.c0 = 0.0
        self._idx: dict[str, int] = {}

    @classmethod
    def from_model(cls, m: ModelDescription) -> "ModelBuilder":
        b = cls()
        for k, nm in enumerate(m.var_names):
            b.add_var(nm, m.lb[k], m.ub[k], bool(m.binary[k]), m.c[k])
        A = m.A.tocsr()
        for r in range(m.n_row):
            sl = slice(A.indptr[r], A.indptr[r + 1])
            b.add_row(m.row_names[r], dict(zip(A.indices[sl].tolist(), A.data[sl].tolist())), m.sense[r], m.rhs[r])
        b.quad_rows = list(m.quad_rows)
        b.cones = list(m.cones)
        if m.q_obj is not None:
            b.q_obj = {int(j): float(v) for j, v in enumerate(m.q_obj) if v}
        b.c0 = m.c0
        return b

    def add_var(self, name: str, lb: float = 0.0, ub: float = math.inf, binary: bool = False, cost: float = 0.0) -> int:
        if name in self._idx:
            raise ValueError(f"duplicate variable {name}")
        self._idx[name] = len(self.names)
        self.names.append(name)
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.binary.append(binary)
        self.c.append(float(cost))
        return self._idx[name]

    def var(self, name: str) -> int:
        return self._idx[name]

    def add_cost(self, j: int, coef: float) -> None:
        self.c[j] += float(coef)

    def add_row(self, name: str, coefs: Mapping[int, float], sense: str, rhs: float) -> int:
        if sense not in (LE, GE, EQ):
            raise ValueError(f"bad sense {sense!r}")
        self.rows.append({int(j): float(a) for j, a in coefs.items() if a != 0.0})
        self.sense.append(sense)
        self.rhs.append(float(rhs))
        self.row_names.append(name)
        return len(self.rows) - 1

    def build(self, meta: Mapping | None = None) -> ModelDescription:
        n = len(self.names)
        r, cidx, v = [], [], []
        for i, row in enumerate(self.rows):
            for j, a in row.items():
                r.append(i)
                cidx.append(j)
                v.append(a)
        A = sp.csr_matrix((v, (r, cidx)), shape=(len(self.rows), n))
        q = None
        if self.q_obj:
            q = np.zeros(n)
            for j, a in self.q_obj.items():
                q[j] += a
        return ModelDescription(
            var_names=tuple(self.names), lb=np.array(self.lb), ub=np.array(self.ub),
            binary=np.array(self.binary, dtype=bool), A=A, sense=tuple(self.sense), rhs=np.array(self.rhs),
            row_names=tuple(self.row_names), c=np.array(self.c), c0=self.c0, q_obj=q,
            quad_rows=tuple(self.quad_rows), cones=tuple(self.cones), meta=dict(meta or {}),
        )


def linearize(model: ModelDescription) -> ModelDescription:
    """Reduce binary squares and scalar cones to linear form.

    ``x^2 = x`` for a binary; ``|a x| <= w`` becomes ``a x - w <= 0`` and
    ``-a x - w <= 0``.
    """
    if model.is_linear:
        return model
    b = ModelBuilder.from_model(model)
    for j, a in b.q_obj.items():
        b.add_cost(j, a)
    b.q_obj = {}
    for q in b.quad_rows:
        coefs = dict(q.lin)
        for j, a in q.quad.items():
            coefs[j] = coefs.get(j, 0.0) + a
        b.add_row(q.name, coefs, LE, q.rhs)
    b.quad_rows = []
    for k in b.cones:
        b.add_row(k.name + "_pos", {k.var: k.scale, k.epi: -1.0}, LE, 0.0)
        b.add_row(k.name + "_neg", {k.var: -k.scale, k.epi: -1.0}, LE, 0.0)
    b.cones = []
    return b.build({**model.meta, "linearized_from": model.meta.get("reformulation")})


def to_lp_format(model: ModelDescription) -> str:
    """CPLEX LP-format text (bounds, binaries, linear rows, diagonal quadratic objective)."""

    def term(a, name, first):
        sign = "-" if a < 0 else ("" if first else "+")
        return f"{sign} {abs(a):.17g} {name}".strip()

    safe = [n.replace("[", "(").replace("]", ")") for n in model.var_names]
    lines = ["\\ generated model", "Minimize"]
    obj = [term(a, safe[j], i == 0) for i, (j, a) in enumerate((j, a) for j, a in enumerate(model.c) if a)]
    if model.q_obj is not None and np.any(model.q_obj):
        qt = " + ".join(f"{2 * a:.17g} {safe[j]} ^ 2" for j, a in enumerate(model.q_obj) if a)
        obj.append(f"+ [ {qt} ] / 2")
    if model.c0:
        obj.append(term(model.c0, "", not obj).strip())
    lines.append(" obj: " + (" ".join(obj) if obj else "0 " + safe[0]))
    lines.append("Subject To")
    A = model.A.tocsr()
    op = {LE: "<=", GE: ">=", EQ: "="}
    for r in range(model.n_row):
        sl = slice(A.indptr[r], A.indptr[r + 1])
        ts = [term(a, safe[j], i == 0) for i, (j, a) in enumerate(zip(A.indices[sl], A.data[sl]))]
        lines.append(f" {model.row_names[r]}: {' '.join(ts) or '0 ' + safe[0]} {op[model.sense[r]]} {model.rhs[r]:.17g}")
    for q in model.quad_rows:
        ts = [term(a, safe[j], i == 0) for i, (j, a) in enumerate(q.lin.items())]
        qt = " + ".join(f"{a:.17g} {safe[j]} ^ 2" for j, a in q.quad.items())
        lines.append(f" {q.name}: {' '.join(ts)} + [ {qt} ] <= {q.rhs:.17g}")
    lines.append("Bounds")
    for j, nm in enumerate(safe):
        lo, hi = model.lb[j], model.ub[j]
        lo_s = "-inf" if np.isneginf(lo) else f"{lo:.17g}"
        hi_s = "+inf" if np.isposinf(hi) else f"{hi:.17g}"
        lines.append(f" {lo_s} <= {nm} <= {hi_s}")
    if model.binary.any():
        lines.append("Binaries")
        lines.append(" " + " ".join(safe[j] for j in model.binaries))
    lines.append("End")
    return "\n".join(lines) + "\n"
