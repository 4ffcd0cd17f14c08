import json
from pathlib import Path

import numpy as np
import pytest

from bcmtor.tor import run_pipeline
from bcmtor.wavesim import (SimGrid, assemble_control_operator, assemble_response,
                            constant_potential, gaussian_bump, zero_potential)

DATA = Path(__file__).parent / "data"

L, T, NX = 1.0, 0.45, 400


def fixture_values(x):
    return 2 - 1.5 * np.exp(-20 * (x - 0.4) ** 2)


@pytest.fixture(scope="session")
def frozen():
    return json.loads((DATA / "frozen.json").read_text())


@pytest.fixture(scope="session")
def grid():
    return SimGrid(L, T, NX)


@pytest.fixture(scope="session")
def fixture_q(grid):
    return gaussian_bump(grid, 0.4, 20 ** -0.5, 1.5, 2.0)


class Case:
    """Response, oracle control operator and pipeline output for one q."""

    def __init__(self, q, grid):
        self.q = q
        self.grid = grid
        self.R = assemble_response(q, grid)
        self.W = assemble_control_operator(q, grid)
        self.result = run_pipeline(self.R)

    @property
    def gram(self):
        return self.W.H @ self.W


@pytest.fixture(scope="session")
def fixture_case(fixture_q, grid):
    return Case(fixture_q, grid)


@pytest.fixture(scope="session")
def zero_case(grid):
    return Case(zero_potential(grid), grid)


@pytest.fixture(scope="session")
def one_case(grid):
    return Case(constant_potential(grid, 1.0), grid)


def rel_l2(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(b))


ACCEPTANCE = []


def verdict(number, ok, detail):
    """Record and print one acceptance line, then assert it."""
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
