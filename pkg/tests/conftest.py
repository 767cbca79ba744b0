import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bundlenet.graph import build_graph

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def random_graph(rng, max_nodes=20, min_each=1, p=0.4):
    """Random tripartite graph with at most ``max_nodes`` nodes in total."""
    total = int(rng.integers(3 * min_each, max_nodes + 1))
    cuts = np.sort(rng.choice(np.arange(1, total - 1), size=2, replace=False)) if total > 3 else np.array([1, 2])
    n_u, n_i, n_b = int(cuts[0]), int(cuts[1] - cuts[0]), int(total - cuts[1])
    n_u, n_i, n_b = max(n_u, min_each), max(n_i, min_each), max(n_b, min_each)

    def edges(a, b):
        mask = rng.random((a, b)) < p
        return np.argwhere(mask)

    return build_graph(edges(n_u, n_b), edges(n_u, n_i), edges(n_b, n_i), (n_u, n_i, n_b))


@pytest.fixture
def fig3_graph():
    """3 users, 4 items, 3 bundles, shaped like the problem-definition figure."""
    ub = [(0, 0), (0, 1), (1, 1), (2, 2)]
    ui = [(0, 0), (0, 1), (1, 2), (2, 3), (2, 1)]
    bi = [(0, 0), (0, 1), (1, 1), (1, 2), (2, 2), (2, 3)]
    return build_graph(ub, ui, bi, (3, 4, 3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


def record_acceptance(number, passed, detail):
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
