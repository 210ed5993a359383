"""Synthetic count data.

Two generators:

* :func:`simulate_hgnb` runs the hGNB model forward (priors or fixed values).
* :func:`simulate_zinb` is the clustering benchmark: factor scores from a
  Gaussian mixture, zero-inflated NB counts, and a logit-linear dropout model
  whose intercept is calibrated to hit a target fraction of zeros.

The ZINB presets are synthetic stand-ins (means on a circle, log-normal gene
baselines); they are not fitted to any real dataset.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .distributions import (
    RngStream,
    as_generator,
    sample_categorical,
    sample_gamma,
    sample_negative_binomial,
)
from .errors import DataError, InfeasibleTargetError, NumericalError
from .model import P_EPS, CountMatrix, DesignMatrices, ModelState, softplus


# ---------------------------------------------------------------------------
# hGNB forward simulation
# ---------------------------------------------------------------------------


def sample_prior_state(designs: DesignMatrices, K: int, rng, *, e0=0.01, f0=0.01, fixed=None) -> ModelState:
    """Draw every latent block from the hierarchical prior.

    Entries of ``fixed`` (a mapping from field name to value) replace the
    corresponding draw; descendants are drawn conditional on fixed values.
    """
    g = as_generator(rng)
    fixed = dict(fixed or {})
    V, J, P, Q = designs.n_genes, designs.n_cells, designs.P, designs.Q

    def get(name, draw):
        if name in fixed:
            return np.array(fixed[name], dtype=float) if np.ndim(fixed[name]) else float(fixed[name])
        return draw()

    alpha = get("alpha", lambda: sample_gamma(e0, 1 / f0, g, size=(P,)) if P else np.zeros(0))
    eta = get("eta", lambda: sample_gamma(e0, 1 / f0, g, size=(Q,)) if Q else np.zeros(0))
    gamma = get("gamma", lambda: sample_gamma(e0, 1 / f0, g, size=(K,)))
    h = get("h", lambda: float(sample_gamma(e0, 1 / f0, g)))
    r = get("r", lambda: sample_gamma(e0, 1 / h, g, size=(J,)))
    beta = get("beta", lambda: g.standard_normal((P, V)) / np.sqrt(alpha)[:, None])
    delta = get("delta", lambda: g.standard_normal((Q, J)) / np.sqrt(eta)[:, None])
    phi = get("phi", lambda: g.standard_normal((K, V)))
    theta = get("theta", lambda: g.standard_normal((K, J)) / np.sqrt(gamma)[:, None])
    return ModelState(r=np.atleast_1d(r), h=float(h), beta=np.atleast_2d(beta).reshape(P, V),
                      delta=np.atleast_2d(delta).reshape(Q, J), phi=phi, theta=theta,
                      alpha=np.atleast_1d(alpha), eta=np.atleast_1d(eta), gamma=np.atleast_1d(gamma))


def sample_counts(state: ModelState, designs: DesignMatrices, rng) -> CountMatrix:
    """Draw ``n[v, j] ~ NB(r[j], logistic(psi[v, j]))`` given every parameter."""
    psi = state.psi(designs)
    if np.any(psi >= np.log1p(-P_EPS) - np.log(P_EPS)):
        raise NumericalError("p numerically equal to 1 in simulation")
    p = expit(psi)
    n = sample_negative_binomial(np.broadcast_to(state.r[None, :], psi.shape), p, rng)
    return CountMatrix.from_dense(n)


def simulate_hgnb(designs: DesignMatrices, K: int, rng, *, e0=0.01, f0=0.01, fixed=None):
    """Forward simulation of the full model; returns ``(counts, truth)``."""
    g = as_generator(rng)
    truth = sample_prior_state(designs, K, g, e0=e0, f0=f0, fixed=fixed)
    return sample_counts(truth, designs, g), truth


def structural_zero_probability(state: ModelState, designs: DesignMatrices) -> np.ndarray:
    """``P(n[v, j] = 0) = (1 - p[v, j]) ** r[j]`` for every entry."""
    return np.exp(-state.r[None, :] * softplus(state.psi(designs)))


# ---------------------------------------------------------------------------
# ZINB clustering benchmark
# ---------------------------------------------------------------------------


@dataclass
class SimSpec:
    """Configuration of one ZINB benchmark scenario.

    Gene log-means are ``baseline[v] + size_factor[j] + loading[:, v] @ score[:, j]``
    with per-gene NB size.  A count is dropped (set to zero) with probability
    ``logistic(dropout_intercept + dropout_slope * log_mean)``.  When
    ``dropout_intercept`` is ``None`` it is calibrated to
    ``target_zero_fraction``.
    """

    n_genes: int = 1000
    n_cells: int = 100
    n_factors: int = 2
    n_clusters: int = 3
    target_zero_fraction: float | None = 0.4
    cluster_radius: float = 1.0
    cluster_sd: float = 0.25
    weights: list[float] | None = None
    cluster_means: list[list[float]] | None = None
    cluster_covs: list[list[list[float]]] | None = None
    loading_sd: float = 0.6
    baseline_log_mean: float = 1.0
    baseline_log_sd: float = 1.0
    size_log_mean: float = float(np.log(2.0))
    size_log_sd: float = 0.5
    library_log_sd: float = 0.3
    dropout_slope: float = -0.5
    dropout_intercept: float | None = None
    seed: int = 0

    def __post_init__(self):
        if min(self.n_genes, self.n_cells, self.n_factors, self.n_clusters) < 1:
            raise DataError("SimSpec dimensions must be positive")
        if self.target_zero_fraction is not None and not 0 < self.target_zero_fraction < 1:
            raise DataError("target_zero_fraction must lie in (0, 1)")
        w = self.mixture_weights()
        if w.shape != (self.n_clusters,) or np.any(w < 0) or not np.isclose(w.sum(), 1.0):
            raise DataError("mixture weights must be n_clusters non-negative values summing to 1")
        if self.mixture_means().shape != (self.n_clusters, self.n_factors):
            raise DataError("cluster_means must be n_clusters x n_factors")
        if self.mixture_covs().shape != (self.n_clusters, self.n_factors, self.n_factors):
            raise DataError("cluster_covs must be n_clusters x n_factors x n_factors")

    def mixture_weights(self) -> np.ndarray:
        if self.weights is None:
            return np.full(self.n_clusters, 1.0 / self.n_clusters)
        return np.asarray(self.weights, dtype=float)

    def mixture_means(self) -> np.ndarray:
        if self.cluster_means is not None:
            return np.asarray(self.cluster_means, dtype=float)
        angles = np.pi / 2 + 2 * np.pi * np.arange(self.n_clusters) / self.n_clusters
        means = np.zeros((self.n_clusters, self.n_factors))
        means[:, 0] = self.cluster_radius * np.cos(angles)
        if self.n_factors > 1:
            means[:, 1] = self.cluster_radius * np.sin(angles)
        return means

    def mixture_covs(self) -> np.ndarray:
        if self.cluster_covs is not None:
            return np.asarray(self.cluster_covs, dtype=float)
        return np.broadcast_to(self.cluster_sd**2 * np.eye(self.n_factors),
                               (self.n_clusters, self.n_factors, self.n_factors)).copy()

    def replace(self, **changes) -> "SimSpec":
        return dataclasses.replace(self, **changes)


PRESETS: dict[str, SimSpec] = {
    "zinb-40": SimSpec(target_zero_fraction=0.4),
    "zinb-60": SimSpec(target_zero_fraction=0.6),
    "zinb-80": SimSpec(target_zero_fraction=0.8),
    "zinb-40-J1000": SimSpec(n_cells=1000, target_zero_fraction=0.4),
    "zinb-60-J1000": SimSpec(n_cells=1000, target_zero_fraction=0.6),
    "zinb-80-J1000": SimSpec(n_cells=1000, target_zero_fraction=0.8),
}


def preset(name: str, **changes) -> SimSpec:
    try:
        return PRESETS[name].replace(**changes)
    except KeyError:
        raise DataError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass
class _Structure:
    labels: np.ndarray
    scores: np.ndarray
    log_mean: np.ndarray
    nb_counts: np.ndarray
    dropout_uniform: np.ndarray
    extras: dict = field(default_factory=dict)


def _draw_structure(spec: SimSpec, rng) -> _Structure:
    g = as_generator(rng)
    V, J, K = spec.n_genes, spec.n_cells, spec.n_factors
    labels = np.asarray(sample_categorical(spec.mixture_weights(), g, size=J))
    means, covs = spec.mixture_means(), spec.mixture_covs()
    chol = []
    for c in range(spec.n_clusters):
        try:
            chol.append(np.linalg.cholesky(covs[c]))
        except np.linalg.LinAlgError:
            raise DataError(f"mixture covariance of cluster {c} is not positive definite") from None
    z = g.standard_normal((J, K))
    scores = np.stack([means[labels[j]] + chol[labels[j]] @ z[j] for j in range(J)], axis=1)
    baseline = spec.baseline_log_mean + spec.baseline_log_sd * g.standard_normal(V)
    loadings = spec.loading_sd * g.standard_normal((K, V))
    size_factor = spec.library_log_sd * g.standard_normal(J)
    size_factor -= size_factor.mean()
    size = np.exp(spec.size_log_mean + spec.size_log_sd * g.standard_normal(V))
    log_mean = baseline[:, None] + size_factor[None, :] + loadings.T @ scores
    mu = np.exp(log_mean)
    p = mu / (mu + size[:, None])
    nb = sample_negative_binomial(np.broadcast_to(size[:, None], mu.shape), p, g)
    u = g.random((V, J))
    return _Structure(labels, scores, log_mean, nb, u,
                      dict(baseline=baseline, loadings=loadings, size_factor=size_factor, nb_size=size))


def _dropout_mask(structure: _Structure, spec: SimSpec, intercept: float) -> np.ndarray:
    prob = expit(intercept + spec.dropout_slope * structure.log_mean)
    return structure.dropout_uniform < prob


def _zero_fraction(structure: _Structure, spec: SimSpec, intercept: float) -> float:
    zero = (structure.nb_counts == 0) | _dropout_mask(structure, spec, intercept)
    return float(zero.mean())


_LO, _HI = -40.0, 40.0


def _calibrate(structure, spec, target, tol=0.0025, max_iter=80):
    floor = _zero_fraction(structure, spec, _LO)
    if target < floor:
        if floor - target <= 0.01:
            return _LO
        raise InfeasibleTargetError(
            f"target zero fraction {target:.3f} is below the structural-zero floor {floor:.3f}"
        )
    ceiling = _zero_fraction(structure, spec, _HI)
    if target > ceiling:
        raise InfeasibleTargetError(f"target zero fraction {target:.3f} exceeds reachable {ceiling:.3f}")
    lo, hi = _LO, _HI
    mid = 0.5 * (lo + hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        frac = _zero_fraction(structure, spec, mid)
        if abs(frac - target) <= tol:
            break
        if frac < target:
            lo = mid
        else:
            hi = mid
    return mid


def calibrate_zero_fraction(spec: SimSpec, target: float, rng=None) -> float:
    """Dropout intercept that gives ``target`` zeros on a pilot simulation.

    The pilot reuses the random draws of ``simulate_zinb(spec, rng)``, so the
    zero fraction is monotone in the intercept and bisection converges.
    """
    if not 0 < target < 1:
        raise DataError("target must lie in (0, 1)")
    rng = RngStream(spec.seed) if rng is None else rng
    return _calibrate(_draw_structure(spec, rng), spec, target)


class ZinbSample(NamedTuple):
    counts: CountMatrix
    labels: np.ndarray
    info: dict


def simulate_zinb(spec: SimSpec, rng=None) -> ZinbSample:
    """One benchmark dataset: counts, true cluster labels and generating values."""
    rng = RngStream(spec.seed) if rng is None else rng
    st = _draw_structure(spec, rng)
    intercept = spec.dropout_intercept
    if intercept is None:
        if spec.target_zero_fraction is None:
            intercept = -np.inf
        else:
            intercept = _calibrate(st, spec, spec.target_zero_fraction)
    dropped = _dropout_mask(st, spec, intercept)
    counts = np.where(dropped, 0, st.nb_counts)
    info = dict(st.extras, scores=st.scores, log_mean=st.log_mean, dropout_intercept=float(intercept),
                dropped=dropped, structural_zero_fraction=float(np.mean(st.nb_counts == 0)))
    return ZinbSample(CountMatrix.from_dense(counts), st.labels, info)


def filter_genes(counts: CountMatrix, min_reads: int = 5, min_cells: int = 5):
    """Keep genes with at least ``min_reads`` reads in at least ``min_cells`` cells.

    Returns ``(filtered_counts, kept_gene_indices)``.
    """
    enough = (counts.matrix >= min_reads).sum(axis=1).A1
    keep = np.flatnonzero(enough >= min_cells)
    if keep.size == 0:
        raise DataError("no gene passes the expression filter")
    return counts.subset(genes=keep), keep
