import numpy as np
import pytest

from gridlevels.errors import ConfigError
from gridlevels.network import (LineParams, MultilevelConfig, NetworkGraph, NodeParams,
                                build_multilevel)
from gridlevels.steady_state import solve_synchronous_state

ACCEPTANCE_LINES = []


def two_node(b=1.0, k=1.0, p2=0.0, q=0.0, m=1.0, d=1.0, tau=1.0, reference=0):
    nodes = [NodeParams.with_injections(0, m, d, tau, k, p=-p2, q=q),
             NodeParams.with_injections(1, m, d, tau, k, p=p2, q=q)]
    return NetworkGraph(nodes, [LineParams(0, 1, b)], reference)


def random_tree(n, seed, flat=False, b_range=(0.5, 2.0)):
    """Random tree on ``n`` nodes; with ``flat`` the injections make the
    flat profile (theta = 0, v = 1) an exact equilibrium."""
    rng = np.random.default_rng(seed)
    lines = [LineParams(int(rng.integers(0, i)), i, float(rng.uniform(*b_range)))
             for i in range(1, n)]
    incident = np.zeros(n)
    for ln in lines:
        incident[ln.from_id] += ln.b
        incident[ln.to_id] += ln.b
    nodes = []
    for i in range(n):
        k = 2 * incident[i] + rng.uniform(1.0, 3.0)
        q = k - incident[i] if flat else rng.uniform(0.5, 1.5) * (k - incident[i])
        nodes.append(NodeParams.with_injections(
            i, rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0), k, p=0.0, q=q))
    return NetworkGraph(nodes, lines, reference=int(rng.integers(0, n)))


def random_multilevel(seed, counts=None):
    """Builder graph with random level counts; seeds whose draws leave no
    positive nuclear supply are skipped deterministically."""
    while True:
        rng = np.random.default_rng(seed)
        if counts is None:
            n4 = int(rng.integers(2, 6))
            c = {5: 1, 4: n4, 3: n4 * int(rng.integers(2, 6))}
        else:
            c = counts
        try:
            return build_multilevel(MultilevelConfig(counts=c, seed=seed))
        except ConfigError:
            seed += 10_000


@pytest.fixture(scope="session")
def default_graph():
    return build_multilevel()


@pytest.fixture(scope="session")
def default_state(default_graph):
    return solve_synchronous_state(default_graph)


@pytest.fixture(scope="session")
def small_graph():
    return random_multilevel(3, counts={5: 1, 4: 3, 3: 9})


@pytest.fixture(scope="session")
def small_state(small_graph):
    return solve_synchronous_state(small_graph)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
