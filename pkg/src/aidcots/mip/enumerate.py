"""Exhaustive enumeration oracle over a subset of binaries."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import TooManyBinaries
from ..modeldesc import ModelDescription
from .bnb import tie_key
from .simplex import INFEASIBLE, OPTIMAL, LPData, solve_lp

MAX_ENUM = 20


@dataclass(frozen=True, eq=False)
class EnumResult:
    status: str
    objective: float
    x: np.ndarray | None
    zeros: tuple[int, ...]  # 0-based positions (within the model's binaries) set to zero
    evaluated: int


def restrict(model: ModelDescription, subset: Sequence[int]) -> ModelDescription:
    """Fix every binary outside ``subset`` (positions within model.binaries) to one."""
    bins = model.binaries
    keep = set(int(k) for k in subset)
    lb, ub = model.lb.copy(), model.ub.copy()
    for k, j in enumerate(bins):
        if k not in keep:
            lb[j] = ub[j] = 1.0
    return model.with_bounds(lb, ub)


def enumerate_oracle(model: ModelDescription, subset: Sequence[int] | None = None,
                     tie_tol: float = 1e-9, limit: int = MAX_ENUM) -> EnumResult:
    """Best assignment of the listed binaries (others fixed to one) by solving every LP.

    Ties within ``tie_tol`` (relative) go to the fewest zeros, then the
    lexicographically smallest zero set.
    """
    bins = model.binaries
    subset = list(range(len(bins))) if subset is None else sorted(int(k) for k in subset)
    if len(subset) > limit:
        raise TooManyBinaries(len(subset), limit)
    base = LPData.from_model(model)
    lb0, ub0 = model.lb.copy(), model.ub.copy()
    for k, j in enumerate(bins):
        if k not in subset:
            lb0[j] = ub0[j] = 1.0
    results = []
    warm = None
    for bits in itertools.product((1.0, 0.0), repeat=len(subset)):
        lb, ub = lb0.copy(), ub0.copy()
        ok = True
        for k, v in zip(subset, bits):
            j = bins[k]
            if not model.lb[j] <= v <= model.ub[j]:
                ok = False
                break
            lb[j] = ub[j] = v
        if not ok:
            continue
        res = solve_lp(LPData(base.c, base.A, base.row_lo, base.row_hi, lb, ub, base.c0), warm=warm)
        if res.status == OPTIMAL:
            warm = res.basis
            x = res.x.copy()
            x[bins] = np.round(x[bins])
            results.append((res.objective, tie_key(x, bins), x))
    n_eval = 2 ** len(subset)
    if not results:
        return EnumResult(INFEASIBLE, np.inf, None, (), n_eval)
    best = min(r[0] for r in results)
    tol = tie_tol * max(1.0, abs(best))
    obj, key, x = min((r for r in results if r[0] <= best + tol), key=lambda r: r[1])
    return EnumResult(OPTIMAL, float(model.c @ x + model.c0), x, key[1], n_eval)
