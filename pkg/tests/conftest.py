import numpy as np
import pytest

from hgnb.model import CountMatrix, DesignMatrices, ModelState


def random_instance(V=4, J=5, K=2, P=2, Q=2, seed=0, with_aux=True):
    """Small random (counts, designs, state) triple with every block populated."""
    g = np.random.default_rng(seed)
    x = np.vstack([np.ones(J), g.normal(size=(P - 1, J))]) if P else np.zeros((0, J))
    z = np.vstack([np.ones(V), g.normal(size=(Q - 1, V))]) if Q else np.zeros((0, V))
    designs = DesignMatrices(x, z, cell_intercept_included=P > 0, gene_intercept_included=Q > 0)
    counts = CountMatrix.from_dense(g.poisson(3.0, size=(V, J)))
    state = ModelState(
        r=g.gamma(2.0, 1.0, J),
        h=1.3,
        beta=0.3 * g.normal(size=(P, V)),
        delta=0.3 * g.normal(size=(Q, J)),
        phi=0.5 * g.normal(size=(K, V)),
        theta=0.5 * g.normal(size=(K, J)),
        alpha=g.gamma(2.0, 1.0, P),
        eta=g.gamma(2.0, 1.0, Q),
        gamma=g.gamma(2.0, 1.0, K),
        omega=g.gamma(1.0, 0.5, (V, J)) if with_aux else None,
        ell=None,
    )
    return counts, designs, state


@pytest.fixture
def instance():
    return random_instance()
