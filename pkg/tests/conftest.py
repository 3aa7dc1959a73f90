import networkx as nx
import numpy as np
import pytest

from txdiff.molgraph import MolecularGraph


def to_networkx(g: MolecularGraph) -> nx.Graph:
    """Attributed graph used as an isomorphism oracle independent of canonical ranks."""
    h = nx.Graph()
    for i, atom in enumerate(g.atoms):
        h.add_node(i, key=(atom.element, atom.formal_charge, atom.aromatic, g.hydrogen_counts[i]))
    for b in g.bonds:
        h.add_edge(b.i, b.j, order=int(b.order))
    return h


def isomorphic(g: MolecularGraph, h: MolecularGraph) -> bool:
    return nx.is_isomorphic(
        to_networkx(g),
        to_networkx(h),
        node_match=lambda a, b: a["key"] == b["key"],
        edge_match=lambda a, b: a["order"] == b["order"],
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
