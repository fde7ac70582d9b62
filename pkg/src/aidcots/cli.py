"""Command-line interface: ``aidcots {pf,sens,ots,eval,bench,sweep}``.

Exit codes: 0 success, 1 error, 2 solver time limit (the report is still written).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from typing import Sequence

import numpy as np

from . import __version__
from .cases import load_case
from .errors import AidcError
from .evalac import EvalConfig, evaluate
from .mip.bnb import BnBOptions
from .otsmodel import OTSConfig
from .pipeline import PipelineConfig, operating_point, run, sensitivities
from .tol import ToleranceConfig, build_tolerances

logger = logging.getLogger("aidcots")

EXIT_OK, EXIT_ERROR, EXIT_TIME_LIMIT = 0, 1, 2
ROW_FIELDS = ("case", "model", "status", "lines_opened", "model_cost", "approximate AC cost",
              "ac_feasible", "solve_time", "error")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are errors (exit 1), not time limits
        raise UsageError(message)


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _onoff(text: str) -> bool:
    if text.lower() in ("on", "true", "yes", "1"):
        return True
    if text.lower() in ("off", "false", "no", "0"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {text!r}")


def _box(text: str) -> tuple[float, float]:
    vals = _floats(text)
    if len(vals) == 1:
        vals = [-abs(vals[0]), abs(vals[0])]
    if len(vals) != 2:
        raise argparse.ArgumentTypeError("angle box is LO,HI or a single half-width")
    return vals[0], vals[1]


def _add_output(p: argparse.ArgumentParser, default: str = "json") -> None:
    p.add_argument("--format", choices=("json", "csv", "table"), default=default)
    p.add_argument("--output", "-o", help="write the report here instead of stdout")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=("dc", "aidc"), default="dc")
    p.add_argument("--reform", choices=("milp", "miqcqp", "misocp"), default="milp")
    p.add_argument("--gamma1", type=float)
    p.add_argument("--gamma2", type=float)
    p.add_argument("--alpha1", type=float, default=1.0)
    p.add_argument("--alpha2", type=float, default=1.0)
    p.add_argument("--p", type=int, choices=(1, 2), default=1, help="norm index for sensitivities")
    p.add_argument("--floor-lin", type=float, default=1e-6)
    p.add_argument("--floor-quad", type=float, default=1e-6)
    p.add_argument("--cap-lin", type=float, default=np.inf)
    p.add_argument("--cap-quad", type=float, default=np.inf)
    p.add_argument("--angle-box", type=_box, default=(-0.6, 0.6))
    p.add_argument("--protect-bridges", type=_onoff, default=True, metavar="on|off")
    p.add_argument("--exclude-transformers", action="store_true")
    p.add_argument("--time-limit", type=float, default=1800.0)
    p.add_argument("--rel-gap", type=float, default=1e-6)
    p.add_argument("--node-selection", choices=("best-bound", "depth-first"), default="best-bound")
    p.add_argument("--branching", choices=("most-fractional", "pseudo-cost"), default="most-fractional")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--backend", default="builtin", help="'builtin' or an external solver command")
    p.add_argument("--no-eval", action="store_true", help="skip the AC evaluation")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="aidcots", description="Transmission switching on a DC network model guided by AC admittance sensitivities")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("pf", help="AC power flow at the case dispatch")
    p.add_argument("case")
    p.add_argument("--open", type=_ints, default=[], help="1-based branches to open")
    _add_output(p)

    p = sub.add_parser("sens", help="first- and second-order admittance sensitivities")
    p.add_argument("case")
    p.add_argument("--p", type=int, choices=(1, 2), default=1)
    p.add_argument("--check-fd", action="store_true", help="verify against finite differences")
    _add_output(p)

    p = sub.add_parser("ots", help="solve DC-OTS or AIDC-OTS and evaluate the topology under AC")
    p.add_argument("case")
    _add_model_flags(p)
    _add_output(p)

    p = sub.add_parser("eval", help="AC evaluation of a given topology")
    p.add_argument("case")
    p.add_argument("--open", type=_ints, default=[], help="1-based branches to open")
    p.add_argument("--no-repair", action="store_true", help="keep the case voltage setpoints")
    _add_output(p)

    p = sub.add_parser("bench", help="one row per (case, model)")
    p.add_argument("cases", nargs="*")
    p.add_argument("--models", default="dc,aidc")
    p.add_argument("--csv", help="also write the rows as CSV here")
    _add_model_flags(p)
    _add_output(p)

    p = sub.add_parser("sweep", help="AIDC over a list of gamma values (gamma1 = gamma2)")
    p.add_argument("case")
    p.add_argument("--gamma", type=_floats, required=True)
    _add_model_flags(p)
    _add_output(p, "table")
    return ap


def _pipeline_config(a, model: str | None = None, gamma=None) -> PipelineConfig:
    model = model or a.model
    ots = OTSConfig(reformulation=a.reform, angle_box=tuple(a.angle_box), protect_bridges=a.protect_bridges,
                    exclude_transformers=a.exclude_transformers)
    tol = ToleranceConfig(alpha1=a.alpha1, alpha2=a.alpha2, p=a.p, floor_lin=a.floor_lin,
                          floor_quad=a.floor_quad, cap_lin=a.cap_lin, cap_quad=a.cap_quad)
    bnb = BnBOptions(time_limit=a.time_limit, rel_gap=a.rel_gap, node_selection=a.node_selection,
                     branching=a.branching, seed=a.seed)
    g1, g2 = (gamma, gamma) if gamma is not None else (a.gamma1, a.gamma2)
    return PipelineConfig(model=model, ots=ots, tol=tol, bnb=bnb, gamma1=g1, gamma2=g2,
                          backend=a.backend, evaluate=not a.no_eval)


def _check_flags(a) -> None:
    if a.command == "ots" and a.model == "dc" and (a.gamma1 is not None or a.gamma2 is not None):
        raise UsageError("--gamma1/--gamma2 apply only with --model aidc")


def _row(res) -> dict:
    d = res.to_dict()
    return {"case": d["case"], "model": d["model"], "status": d["status"], "lines_opened": d["lines_opened"],
            "model_cost": d["model_cost"], "approximate AC cost": d["approximate AC cost"],
            "ac_feasible": d["ac_feasible"], "solve_time": d["times"].get("solve"), "error": None}


def _render(data, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(data, indent=2, sort_keys=True) + "\n"
    rows = data if isinstance(data, list) else [_flatten(data)]
    keys = {k for r in rows for k in r}
    if rows and set(ROW_FIELDS) <= keys:
        cols = sorted(keys - set(ROW_FIELDS)) + list(ROW_FIELDS)
    else:
        cols = sorted(keys)
    cells = [[_cell(r.get(c)) for c in cols] for r in rows]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        w.writerows(cells)
        return buf.getvalue()
    widths = [max([len(c)] + [len(r[i]) for r in cells]) for i, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.ljust(w) for v, w in zip(r, widths)) for r in cells]
    return "\n".join(lines) + "\n"


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, (list, tuple)):
        return " ".join(_cell(x) for x in v) if not v or not isinstance(v[0], dict) else json.dumps(v)
    return str(v)


def _emit(text: str, path: str | None) -> None:
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_pf(a) -> int:
    from .acpf import solve_pf

    net = load_case(a.case)
    z = net.mask_opening(a.open)
    t0 = time.perf_counter()
    st = solve_pf(net, z)
    rep = {"case": net.name, "converged": bool(st.converged), "iterations": int(st.iterations),
           "max_mismatch": float(st.max_mismatch), "mismatch_history": [float(h) for h in st.history],
           "v_mag": st.v_mag.tolist(), "v_ang_deg": np.degrees(st.v_ang).tolist(),
           "times": {"pf": time.perf_counter() - t0}}
    _emit(_render(rep, a.format), a.output)
    return EXIT_OK


def cmd_sens(a) -> int:
    from .fdcheck import check_bundle
    from .netmodel import build_admittance

    net = load_case(a.case)
    t0 = time.perf_counter()
    point = operating_point(net)
    bundle = sensitivities(net, point)
    t_sens = time.perf_counter() - t0
    tols = build_tolerances(bundle.first, bundle.second, net, ToleranceConfig(p=a.p))
    rows = bundle.to_rows(a.p)
    for r, el, eq in zip(rows, tols.eps_lin, tols.eps_quad):
        r["eps_lin"], r["eps_quad"] = float(el), float(eq)
    rep = {"case": net.name, "operating_point": point.source, "lines": rows, "times": {"sens": t_sens}}
    if a.check_fd:
        t0 = time.perf_counter()
        fd = check_bundle(build_admittance(net), point.state, bundle)
        rep["fd_check"] = fd.summary()
        rep["times"]["fd_check"] = time.perf_counter() - t0
    _emit(_render(rows if a.format != "json" else rep, a.format), a.output)
    return EXIT_OK


def cmd_ots(a) -> int:
    net = load_case(a.case)
    res = run(net, _pipeline_config(a))
    _emit(_render(res.to_dict(), a.format), a.output)
    return EXIT_TIME_LIMIT if res.timed_out else EXIT_OK


def cmd_eval(a) -> int:
    net = load_case(a.case)
    z = net.mask_opening(a.open)
    rep = evaluate(net, z, EvalConfig(repair=not a.no_repair))
    d = {"case": net.name, "lines_opened": sorted(a.open), **rep.to_dict()}
    _emit(_render(d, a.format), a.output)
    return EXIT_OK


def cmd_bench(a) -> int:
    rows, timed_out = [], False
    for case in a.cases:
        for model in [m.strip() for m in a.models.split(",") if m.strip()]:
            try:
                res = run(load_case(case), _pipeline_config(a, model=model))
                rows.append(_row(res))
                timed_out |= res.timed_out
            except (AidcError, OSError, ValueError) as exc:
                logger.error("%s/%s failed: %s", case, model, exc)
                rows.append({**{k: None for k in ROW_FIELDS}, "case": case, "model": model,
                             "status": "error", "error": str(exc)})
    _emit(_render(rows, a.format), a.output)
    if a.csv:
        with open(a.csv, "w") as fh:
            fh.write(_render(rows, "csv"))
    return EXIT_TIME_LIMIT if timed_out else EXIT_OK


def cmd_sweep(a) -> int:
    net = load_case(a.case)
    rows, timed_out = [], False
    for g in a.gamma:
        res = run(net, _pipeline_config(a, model="aidc", gamma=g))
        rows.append({"gamma": g, **_row(res)})
        timed_out |= res.timed_out
    _emit(_render(rows, a.format), a.output)
    return EXIT_TIME_LIMIT if timed_out else EXIT_OK


COMMANDS = {"pf": cmd_pf, "sens": cmd_sens, "ots": cmd_ots, "eval": cmd_eval, "bench": cmd_bench, "sweep": cmd_sweep}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        a = build_parser().parse_args(argv)
        _check_flags(a)
    except UsageError as exc:
        print(f"aidcots: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    logging.basicConfig(level=logging.WARNING - 10 * min(a.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[a.command](a)
    except (AidcError, OSError, ValueError, IndexError) as exc:
        print(f"aidcots: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
