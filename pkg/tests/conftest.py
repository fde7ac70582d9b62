from __future__ import annotations

import numpy as np
import pytest

from aidcots.acpf import solve_pf
from aidcots.cases import load_case
from aidcots.modeldesc import LE, ModelBuilder
from aidcots.netmodel import parse_matpower


def matpower_text(buses, gens, branches, gencost=None, base=100.0) -> str:
    """Assemble a MATPOWER case from row lists."""

    def block(name, rows):
        body = "\n".join("\t" + "\t".join(repr(float(v)) if isinstance(v, float) else str(v) for v in r) + ";"
                         for r in rows)
        return f"mpc.{name} = [\n{body}\n];\n"

    text = f"function mpc = testcase\nmpc.version = '2';\nmpc.baseMVA = {base};\n"
    text += block("bus", buses) + block("gen", gens) + block("branch", branches)
    if gencost is not None:
        text += block("gencost", gencost)
    return text


def two_bus_text(r=0.0, x=0.1, pd=10.0, qd=0.0, rate=0.0, b=0.0) -> str:
    buses = [[1, 3, 0, 0, 0, 0, 1, 1.0, 0, 100, 1, 1.1, 0.9],
             [2, 1, pd, qd, 0, 0, 1, 1.0, 0, 100, 1, 1.1, 0.9]]
    gens = [[1, 0, 0, 100, -100, 1.0, 100, 1, 200, 0]]
    branches = [[1, 2, r, x, b, rate, 0, 0, 0, 0, 1, -360, 360]]
    return matpower_text(buses, gens, branches, [[2, 0, 0, 3, 0, 10, 0]])


@pytest.fixture
def two_bus():
    return parse_matpower(two_bus_text(), name="two_bus")


@pytest.fixture(scope="session")
def case14():
    return load_case("case14")


@pytest.fixture(scope="session")
def case30():
    return load_case("case30")


@pytest.fixture(scope="session")
def state14(case14):
    return solve_pf(case14)


@pytest.fixture(scope="session")
def state30(case30):
    return solve_pf(case30)


def rand_milp(seed: int, n_bin: int = 8, n_cont: int = 3):
    """Small random MILP with knapsack rows and x <= M y couplings."""
    rng = np.random.default_rng(seed)
    b = ModelBuilder()
    ys = [b.add_var(f"y{k}", 0, 1, True, float(rng.integers(-5, 6))) for k in range(n_bin)]
    xs = [b.add_var(f"x{k}", 0, float(rng.integers(1, 5)), False, float(rng.integers(-3, 4))) for k in range(n_cont)]
    for r in range(rng.integers(2, 6)):
        coefs = {j: float(rng.integers(-4, 6)) for j in ys + xs if rng.random() < 0.6}
        b.add_row(f"r{r}", coefs, LE, float(rng.integers(2, 12)))
    for k, x in enumerate(xs):
        b.add_row(f"c{k}", {x: 1.0, ys[k]: -5.0}, LE, 0.0)
    return b.build()


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
