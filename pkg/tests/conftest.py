import numpy as np
import pytest

from psfuse.mesh import Mesh, build_structured_mesh


@pytest.fixture(scope="session")
def unit_mesh():
    # 0.1 edge, 20% extension: 15 x 15 cells, 256 nodes
    return build_structured_mesh((0, 0, 1, 1), 0.1, 0.2)


@pytest.fixture(scope="session")
def tiny_mesh():
    # at most 200 nodes, used by the dense oracles
    m = build_structured_mesh((0, 0, 1, 1), 0.125, 0.25)
    assert m.n_nodes <= 200
    return m


@pytest.fixture(scope="session")
def irregular_mesh():
    """Jittered lattice without the lattice shortcut, so generic point location is used."""
    base = build_structured_mesh((0, 0, 1, 1), 0.2, 0.0)
    rng = np.random.default_rng(3)
    nodes = base.nodes.copy()
    interior = (nodes > 1e-9).all(1) & (nodes < 1 - 1e-9).all(1)
    nodes[interior] += rng.uniform(-0.04, 0.04, size=(interior.sum(), 2))
    return Mesh(nodes, base.triangles, (0, 0, 1, 1))


# acceptance outcomes, printed once at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
