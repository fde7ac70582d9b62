"""Bundled PGLib-OPF cases (v23.07, CC BY 4.0) and case lookup."""

from __future__ import annotations

import os
from pathlib import Path

from ..netmodel import Network, load_matpower

CASE_DIR = Path(__file__).resolve().parent
ENV_VAR = "AIDCOTS_CASE_DIR"


def case_path(name: str | os.PathLike) -> Path:
    """Resolve a case name or path.

    Lookup order: the path as given, then ``$AIDCOTS_CASE_DIR``, then the
    bundled directory. Short names like ``case14`` expand to the PGLib file.
    """
    p = Path(name)
    if p.is_file():
        return p
    stem = p.name
    candidates = [stem, stem + ".m", f"pglib_opf_{stem}.m"]
    if stem.startswith("case") and "_" not in stem:
        candidates += [f"pglib_opf_{stem}_ieee.m", f"pglib_opf_{stem}_epri.m", f"pglib_opf_{stem}_pjm.m",
                       f"pglib_opf_{stem}_lmbd.m"]
    dirs = [Path(d) for d in [os.environ.get(ENV_VAR)] if d] + [CASE_DIR]
    for d in dirs:
        for c in candidates:
            if (d / c).is_file():
                return d / c
    raise FileNotFoundError(f"case {name!r} not found (searched {', '.join(map(str, dirs))})")


def load_case(name: str | os.PathLike) -> Network:
    return load_matpower(case_path(name))


def bundled() -> list[str]:
    return sorted(p.name for p in CASE_DIR.glob("*.m"))
