import numpy as np
import pytest

from qcoupling.models import (
    colorings_model,
    complete_graph,
    hardcore_model,
    hypercube_model,
    path_graph,
)


@pytest.fixture(scope="session")
def hypercube2():
    return hypercube_model(2)


@pytest.fixture(scope="session")
def hypercube3():
    return hypercube_model(3)


@pytest.fixture(scope="session")
def hardcore_p3_lam2():
    return hardcore_model(path_graph(3), 2.0)


@pytest.fixture(scope="session")
def hardcore_p3_lam_half():
    return hardcore_model(path_graph(3), 0.5)


@pytest.fixture(scope="session")
def colorings_k3_q4():
    return colorings_model(complete_graph(3), 4)


def random_ergodic_chain(n: int, rng: np.random.Generator):
    """Strictly positive column-stochastic matrix (hence ergodic)."""
    from qcoupling.chain import TransitionMatrix

    cols = rng.dirichlet(np.ones(n), size=n).T + 1e-3
    cols /= cols.sum(axis=0)
    return TransitionMatrix(tuple(str(i) for i in range(n)), cols)
