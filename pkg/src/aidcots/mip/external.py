"""Adapter for an external MIP solver run as a subprocess.

The solver command receives two arguments: an LP-format model file and the
path where it must write its solution. The solution file is plain text::

    status optimal
    objective 123.4
    <variable name> <value>
    ...

Variable names are those of the LP file. Missing variables default to 0.
"""

from __future__ import annotations

import logging
import shlex
import subprocess
import tempfile
import time
from pathlib import Path

import numpy as np

from ..errors import NumericalFailure
from ..modeldesc import ModelDescription, to_lp_format
from .bnb import MIPResult

logger = logging.getLogger(__name__)

KNOWN_STATUS = {"optimal", "infeasible", "time_limit", "unbounded"}


def lp_name(name: str) -> str:
    return name.replace("[", "(").replace("]", ")")


def parse_solution(text: str, model: ModelDescription) -> tuple[str, float, np.ndarray | None]:
    status, objective = "unknown", np.nan
    index = {lp_name(n): k for k, n in enumerate(model.var_names)}
    index.update({n: k for k, n in enumerate(model.var_names)})  # bracketed model names are accepted too
    x = np.zeros(model.n_var)
    seen = False
    for raw in text.splitlines():
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        if len(parts) != 2:
            raise NumericalFailure(f"unreadable solution line {raw!r}")
        key, val = parts
        if key == "status":
            status = val
        elif key == "objective":
            objective = float(val)
        elif key in index:
            x[index[key]] = float(val)
            seen = True
        else:
            raise NumericalFailure(f"solution names unknown variable {key!r}")
    if status not in KNOWN_STATUS:
        raise NumericalFailure(f"external solver reported status {status!r}")
    return status, objective, (x if seen or status in ("optimal", "time_limit") else None)


def solve_external(model: ModelDescription, command: str, time_limit: float | None = None,
                   workdir: str | None = None) -> MIPResult:
    """Write ``model`` as LP text, run ``command`` on it and read back the point."""
    t0 = time.perf_counter()
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        lp = Path(tmp) / "model.lp"
        sol = Path(tmp) / "model.sol"
        lp.write_text(to_lp_format(model))
        argv = shlex.split(command) + [str(lp), str(sol)]
        logger.info("running external solver: %s", " ".join(argv))
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=time_limit)
        except subprocess.TimeoutExpired:
            return MIPResult("time_limit", None, np.nan, -np.inf, np.inf, 0, 0, time.perf_counter() - t0)
        if proc.returncode != 0:
            raise NumericalFailure(f"external solver exited with code {proc.returncode}: {proc.stderr.strip()[:200]}")
        if not sol.exists():
            raise NumericalFailure("external solver wrote no solution file")
        status, obj, x = parse_solution(sol.read_text(), model)
    if x is not None and not np.isfinite(obj):
        obj = model.objective(x)
    wall = time.perf_counter() - t0
    bound = obj if status == "optimal" else -np.inf
    return MIPResult(status, x, obj, bound, 0.0 if status == "optimal" else np.inf, 0, 0, wall)
