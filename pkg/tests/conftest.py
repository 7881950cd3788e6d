from __future__ import annotations

import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

M3 = np.array([[0.8, 0.2, 0.0], [0.2, 0.2, 0.9], [0.0, 0.6, 0.1]])
BOX_G = np.eye(3)
BOX_g = np.array([0.6, 0.5, 0.5])


@pytest.fixture
def m3():
    from markovsafe import validate_chain

    return validate_chain(M3)


@pytest.fixture
def box_safe():
    from markovsafe import Polyhedron

    return Polyhedron(BOX_G, BOX_g, True)


@pytest.fixture(scope="session")
def default_scenario():
    """Synthesis plus invariant set on the canonical grid; shared because it takes about a minute."""
    import time

    from markovsafe import SynthesisProblem, build, default_grid, maximal_invariant_set, synthesize

    grid = default_grid()
    graph, safe, v = build(grid)
    start = time.perf_counter()
    syn = synthesize(SynthesisProblem(graph, v))
    result = maximal_invariant_set(syn.chain, safe)
    elapsed = time.perf_counter() - start
    return {"grid": grid, "graph": graph, "safe": safe, "v": v, "synthesis": syn, "result": result,
            "elapsed": elapsed}


ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
