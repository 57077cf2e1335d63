import numpy as np
import pytest

from frgt.synthflow import FlowCase, GridSpec, generate_case


def random_graph_edges(rng, n, extra=None):
    """Connected random graph: a random spanning tree plus extra chords, both directions."""
    edges = [(int(rng.integers(0, k)), k) for k in range(1, n)]
    for _ in range(extra if extra is not None else n):
        a, b = rng.integers(0, n, 2)
        if a != b:
            edges.append((int(a), int(b)))
    e = np.array(edges, dtype=np.int64).reshape(-1, 2)
    return np.concatenate([e, e[:, ::-1]])


@pytest.fixture(scope="session")
def small_case():
    """A small cambered airfoil graph with targets and full sensing."""
    return generate_case(FlowCase("joukowski", u_inf=12.0, alpha=0.1), GridSpec(24, 4))


@pytest.fixture(scope="session")
def cylinder_case():
    return generate_case(FlowCase("cylinder", u_inf=10.0), GridSpec(8, 3))


# --------------------------------------------------------------------------
# acceptance reporting: one PASS/FAIL line per criterion, repeated in the summary

ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
