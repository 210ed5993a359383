"""Geweke joint-distribution check for the Gibbs sweep.

Marginal-conditional draws come straight from the prior; successive-conditional
draws alternate one sweep with a fresh data draw.  Agreement of the two sets of
moments checks every conditional at once.
"""

import numpy as np

from hgnb.errors import NumericalError

from hgnb.gibbs import gibbs_sweep, iteration_stream
from hgnb.model import CountData, DesignMatrices, Hyperparams
from hgnb.simulate import sample_counts, sample_prior_state


def statistics(state):
    return np.array([state.r[0], state.h, state.beta[0, 0], state.theta[0, 0]])


STAT_NAMES = ("r[0]", "h", "beta[0,0]", "theta[0,0]")

#: exact CRT draws cost one uniform per unit of count, so runaway draws are refused
MAX_COUNT = 10**7


def batch_means_se(x, n_batches=50):
    """Standard error of the mean of a correlated series, per column."""
    x = np.asarray(x, dtype=float)
    m = x.shape[0] // n_batches
    b = x[: m * n_batches].reshape(n_batches, m, -1).mean(axis=1)
    return b.std(axis=0, ddof=1) / np.sqrt(n_batches)


def geweke(V=5, J=8, K=2, e0=1.0, f0=0.01, n_samples=10_000, seed=0, pg_terms=200):
    """Return ``(z, forward_mean, chain_mean)`` for :data:`STAT_NAMES`."""
    g = np.random.default_rng(seed)
    designs = DesignMatrices.intercepts(V, J)
    forward = np.array([statistics(sample_prior_state(designs, K, g, e0=e0, f0=f0)) for _ in range(n_samples)])

    hyper = Hyperparams(K=K, e0=e0, f0=f0, n_iterations=2, burn_in=1, pg_terms=pg_terms, seed=seed)
    state = sample_prior_state(designs, K, g, e0=e0, f0=f0)
    chain = np.empty_like(forward)
    for i in range(n_samples):
        counts = sample_counts(state, designs, g)
        if counts.dense.max(initial=0) > MAX_COUNT:
            raise NumericalError(f"sweep {i}: simulated count {counts.dense.max()} exceeds {MAX_COUNT}")
        gibbs_sweep(CountData(counts), designs, state, hyper, iteration_stream(seed, i))
        chain[i] = statistics(state)

    se_f = forward.std(axis=0, ddof=1) / np.sqrt(n_samples)
    se_c = batch_means_se(chain)
    z = (forward.mean(axis=0) - chain.mean(axis=0)) / np.sqrt(se_f**2 + se_c**2)
    return z, forward.mean(axis=0), chain.mean(axis=0)
