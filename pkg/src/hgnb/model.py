"""Data containers and probability computations for the hGNB count model.

Counts are a genes x cells matrix ``n[v, j]``.  Each entry is negative
binomial with cell dispersion ``r[j]`` and probability ``p[v, j]`` whose logit
is

    psi[v, j] = beta[:, v] @ x[:, j] + delta[:, j] @ z[:, v] + phi[:, v] @ theta[:, j]

Orientation is genes along rows and cells along columns everywhere.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Iterator

import numpy as np
import scipy.sparse as sp
from scipy.special import expit, gammaln

from .errors import DataError, NumericalError

#: probabilities are kept inside [P_EPS, 1 - P_EPS] before taking logs
P_EPS = 1e-12
#: logit of 1 - P_EPS; |psi| beyond this counts as a clamp event
PSI_MAX = float(np.log1p(-P_EPS) - np.log(P_EPS))


def logistic(x):
    """Numerically stable logistic function (no overflow for large |x|)."""
    return expit(x)


def clamp_psi(psi):
    """Clip a logit array to ``[-PSI_MAX, PSI_MAX]``.

    Returns the clipped array and the number of entries that were moved.
    """
    psi = np.asarray(psi, dtype=float)
    if not np.all(np.isfinite(psi)):
        raise NumericalError("non-finite linear predictor psi")
    n_clamped = int(np.count_nonzero(np.abs(psi) > PSI_MAX))
    if n_clamped:
        psi = np.clip(psi, -PSI_MAX, PSI_MAX)
    return psi, n_clamped


def softplus(x):
    """``log(1 + exp(x))`` without overflow; about 3x faster than ``np.logaddexp(0, x)``."""
    x = np.asarray(x, dtype=float)
    out = np.exp(-np.abs(x))
    np.log1p(out, out=out)
    out += np.maximum(x, 0.0)
    return out


# _nb_loglik_terms takes a keyword argument of the same name
_softplus = softplus


def log_p_and_log1m_p(psi):
    """Return ``(log p, log(1 - p))`` for ``p = logistic(psi)``, computed stably."""
    psi = np.asarray(psi, dtype=float)
    # log(1 - p) = -softplus(psi), log p = -softplus(-psi)
    return -softplus(-psi), -softplus(psi)


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CountMatrix:
    """Sparse genes x cells matrix of non-negative integer read counts.

    Zeros are implicit; only counts >= 1 are stored.
    """

    matrix: sp.csr_matrix
    gene_ids: tuple[str, ...] | None = None
    cell_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        m = sp.csr_matrix(self.matrix)
        if m.shape[0] < 1 or m.shape[1] < 1:
            raise DataError(f"count matrix must be at least 1x1, got {m.shape}")
        data = np.asarray(m.data)
        if data.size and not np.all(np.isfinite(data)):
            raise DataError("count matrix contains non-finite entries")
        if data.size and np.any(data != np.round(data)):
            raise DataError("count matrix contains fractional entries")
        if data.size and np.any(data < 0):
            raise DataError("count matrix contains negative entries")
        m = sp.csr_matrix(m, dtype=np.int64)
        m.eliminate_zeros()
        m.sum_duplicates()
        m.sort_indices()
        object.__setattr__(self, "matrix", m)
        for name, n in (("gene_ids", m.shape[0]), ("cell_ids", m.shape[1])):
            ids = getattr(self, name)
            if ids is not None:
                ids = tuple(str(i) for i in ids)
                if len(ids) != n:
                    raise DataError(f"{name} has {len(ids)} entries, expected {n}")
                object.__setattr__(self, name, ids)

    @classmethod
    def from_dense(cls, array, gene_ids=None, cell_ids=None) -> "CountMatrix":
        array = np.asarray(array)
        if array.ndim != 2:
            raise DataError(f"expected a 2-d array, got shape {array.shape}")
        return cls(sp.csr_matrix(array), gene_ids, cell_ids)

    @classmethod
    def from_coo(cls, n_genes, n_cells, rows, cols, values, **ids) -> "CountMatrix":
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if rows.size and (rows.min() < 0 or rows.max() >= n_genes):
            raise DataError("gene index out of range")
        if cols.size and (cols.min() < 0 or cols.max() >= n_cells):
            raise DataError("cell index out of range")
        m = sp.coo_matrix((np.asarray(values), (rows, cols)), shape=(n_genes, n_cells))
        return cls(m.tocsr(), **ids)

    @property
    def n_genes(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_cells(self) -> int:
        return self.matrix.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    @cached_property
    def dense(self) -> np.ndarray:
        out = self.matrix.toarray()
        out.flags.writeable = False
        return out

    def zero_fraction(self) -> float:
        return 1.0 - self.nnz / (self.n_genes * self.n_cells)

    def entries(self) -> Iterator[tuple[int, int, int]]:
        coo = self.matrix.tocoo()
        for v, j, n in zip(coo.row, coo.col, coo.data):
            yield int(v), int(j), int(n)

    def subset(self, genes=None, cells=None) -> "CountMatrix":
        genes = np.arange(self.n_genes) if genes is None else np.asarray(genes)
        cells = np.arange(self.n_cells) if cells is None else np.asarray(cells)
        m = self.matrix[genes][:, cells]
        gid = None if self.gene_ids is None else [self.gene_ids[i] for i in genes]
        cid = None if self.cell_ids is None else [self.cell_ids[i] for i in cells]
        return CountMatrix(m, gid, cid)

    def __eq__(self, other):
        if not isinstance(other, CountMatrix) or self.shape != other.shape:
            return False
        return (self.matrix != other.matrix).nnz == 0


@dataclass(frozen=True, eq=False)
class DesignMatrices:
    """Known covariates: ``cell_covariates`` is P x J, ``gene_covariates`` is Q x V."""

    cell_covariates: np.ndarray
    gene_covariates: np.ndarray
    cell_intercept_included: bool = False
    gene_intercept_included: bool = False

    def __post_init__(self):
        for name, flag in (
            ("cell_covariates", self.cell_intercept_included),
            ("gene_covariates", self.gene_intercept_included),
        ):
            a = np.array(getattr(self, name), dtype=float)
            if a.ndim != 2:
                raise DataError(f"{name} must be 2-d, got shape {a.shape}")
            if not np.all(np.isfinite(a)):
                raise DataError(f"{name} contains non-finite entries")
            if flag and (a.shape[0] == 0 or not np.all(a[0] == 1.0)):
                raise DataError(f"{name}: intercept flag set but first row is not all ones")
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    @classmethod
    def intercepts(cls, n_genes: int, n_cells: int) -> "DesignMatrices":
        """Intercept-only design: gene baselines via beta, cell offsets via delta."""
        return cls(np.ones((1, n_cells)), np.ones((1, n_genes)), True, True)

    @property
    def P(self) -> int:
        return self.cell_covariates.shape[0]

    @property
    def Q(self) -> int:
        return self.gene_covariates.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cell_covariates.shape[1]

    @property
    def n_genes(self) -> int:
        return self.gene_covariates.shape[1]

    def check(self, counts: CountMatrix) -> None:
        if self.n_cells != counts.n_cells:
            raise DataError(
                f"cell covariates have {self.n_cells} columns, counts have {counts.n_cells} cells"
            )
        if self.n_genes != counts.n_genes:
            raise DataError(
                f"gene covariates have {self.n_genes} columns, counts have {counts.n_genes} genes"
            )


@dataclass
class Hyperparams:
    """Fixed constants of the model and the sampler run."""

    K: int = 2
    e0: float = 0.01
    f0: float = 0.01
    n_iterations: int = 2000
    burn_in: int = 1000
    seed: int = 0
    thin: int = 1
    pg_terms: int = 200
    block_size: int = 128
    keep_auxiliaries: bool = False

    def __post_init__(self):
        if self.K < 1:
            raise DataError("K must be >= 1")
        if not (self.e0 > 0 and self.f0 > 0):
            raise DataError("e0 and f0 must be positive")
        if self.n_iterations < 1:
            raise DataError("n_iterations must be >= 1")
        if not 0 <= self.burn_in < self.n_iterations:
            raise DataError("burn_in must satisfy 0 <= burn_in < n_iterations")
        if not 0 <= int(self.seed) < 2**64:
            raise DataError("seed must be a 64-bit unsigned integer")
        if self.thin < 1 or self.pg_terms < 1 or self.block_size < 1:
            raise DataError("thin, pg_terms and block_size must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass(eq=False)
class ModelState:
    """All latent variables of one Gibbs iteration.

    Column conventions follow the model: ``beta[:, v]``, ``phi[:, v]`` are
    per gene and ``delta[:, j]``, ``theta[:, j]`` per cell.  ``omega`` and
    ``ell`` are V x J and may be ``None`` in lightweight snapshots.
    """

    r: np.ndarray
    h: float
    beta: np.ndarray
    delta: np.ndarray
    phi: np.ndarray
    theta: np.ndarray
    alpha: np.ndarray
    eta: np.ndarray
    gamma: np.ndarray
    omega: np.ndarray | None = None
    ell: np.ndarray | None = None

    ARRAY_FIELDS = ("r", "beta", "delta", "phi", "theta", "alpha", "eta", "gamma", "omega", "ell")

    @property
    def n_genes(self) -> int:
        return self.phi.shape[1]

    @property
    def n_cells(self) -> int:
        return self.theta.shape[1]

    @property
    def K(self) -> int:
        return self.phi.shape[0]

    def copy(self, auxiliaries: bool = True) -> "ModelState":
        kw = {}
        for name in self.ARRAY_FIELDS:
            a = getattr(self, name)
            if name in ("omega", "ell") and not auxiliaries:
                a = None
            kw[name] = None if a is None else np.array(a, copy=True)
        return ModelState(h=float(self.h), **kw)

    def validate(self, designs: DesignMatrices | None = None) -> None:
        V, J, K = self.n_genes, self.n_cells, self.K
        expected = {
            "r": (J,),
            "phi": (K, V),
            "theta": (K, J),
            "gamma": (K,),
            "beta": (self.beta.shape[0], V),
            "delta": (self.delta.shape[0], J),
            "alpha": (self.beta.shape[0],),
            "eta": (self.delta.shape[0],),
        }
        if designs is not None:
            expected["beta"] = (designs.P, V)
            expected["delta"] = (designs.Q, J)
            expected["alpha"] = (designs.P,)
            expected["eta"] = (designs.Q,)
            if designs.n_cells != J or designs.n_genes != V:
                raise DataError("state dimensions do not match the design matrices")
        for name, shape in expected.items():
            a = getattr(self, name)
            if a.shape != shape:
                raise DataError(f"state.{name} has shape {a.shape}, expected {shape}")
        for name in self.ARRAY_FIELDS:
            a = getattr(self, name)
            if a is not None and not np.all(np.isfinite(a)):
                raise NumericalError(f"state.{name} contains non-finite values")
        if not np.isfinite(self.h) or self.h <= 0:
            raise NumericalError("h must be positive and finite")
        for name in ("r", "alpha", "eta", "gamma"):
            if np.any(getattr(self, name) <= 0):
                raise NumericalError(f"state.{name} must be strictly positive")
        if self.omega is not None and np.any(self.omega < 0):
            raise NumericalError("omega must be non-negative")

    def psi(self, designs: DesignMatrices) -> np.ndarray:
        """Full V x J matrix of logits."""
        return (
            self.beta.T @ designs.cell_covariates
            + designs.gene_covariates.T @ self.delta
            + self.phi.T @ self.theta
        )

    def arrays(self) -> dict[str, np.ndarray]:
        out = {name: getattr(self, name) for name in self.ARRAY_FIELDS if getattr(self, name) is not None}
        out["h"] = np.asarray(self.h)
        return out

    @classmethod
    def from_arrays(cls, arrays) -> "ModelState":
        kw = {name: (np.array(arrays[name]) if name in arrays else None) for name in cls.ARRAY_FIELDS}
        return cls(h=float(arrays["h"]), **kw)

    def equals(self, other: "ModelState") -> bool:
        """Exact (bitwise) equality of every field."""
        if self.h != other.h:
            return False
        for name in self.ARRAY_FIELDS:
            a, b = getattr(self, name), getattr(other, name)
            if (a is None) != (b is None):
                return False
            if a is not None and not np.array_equal(a, b):
                return False
        return True


@dataclass
class ChainOutput:
    """Result of :func:`hgnb.gibbs.run_chain`.

    ``log_likelihoods[i]`` is the data log-likelihood after sweep ``i``.
    ``point_estimate`` is the post-burn-in state with the largest value.
    """

    samples: list[ModelState]
    sample_iterations: list[int]
    log_likelihoods: np.ndarray
    point_estimate: ModelState
    point_iteration: int
    burn_in: int
    meta: dict[str, Any] = field(default_factory=dict)
    reports: list = field(default_factory=list)
    final_state: ModelState | None = None

    def __post_init__(self):
        ll = np.asarray(self.log_likelihoods, dtype=float)
        self.log_likelihoods = ll
        post = ll[self.burn_in:]
        if post.size and ll[self.point_iteration] != post.max():
            raise NumericalError("point estimate is not the maximum-likelihood post-burn-in sample")

    @property
    def point_log_likelihood(self) -> float:
        return float(self.log_likelihoods[self.point_iteration])


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def logit_psi(state: ModelState, designs: DesignMatrices, v: int, j: int) -> float:
    """Logit of the NB probability for gene ``v`` in cell ``j``."""
    if not (0 <= v < state.n_genes and 0 <= j < state.n_cells):
        raise IndexError(f"(v={v}, j={j}) outside {state.n_genes}x{state.n_cells}")
    if designs.P != state.beta.shape[0] or designs.Q != state.delta.shape[0]:
        raise DataError("design dimensions do not match state")
    if designs.n_cells != state.n_cells or designs.n_genes != state.n_genes:
        raise DataError("design column counts do not match state")
    x, z = designs.cell_covariates[:, j], designs.gene_covariates[:, v]
    val = float(state.beta[:, v] @ x + state.delta[:, j] @ z + state.phi[:, v] @ state.theta[:, j])
    if not np.isfinite(val):
        raise NumericalError(f"non-finite psi at (v={v}, j={j})")
    return val


def nb_log_pmf(n, r, p):
    """Log PMF of NB(r, p): ``log Gamma(n+r) - log n! - log Gamma(r) + n log p + r log(1-p)``.

    Works elementwise on arrays.
    """
    n = np.asarray(n)
    r = np.asarray(r, dtype=float)
    p = np.asarray(p, dtype=float)
    if np.any(n < 0) or np.any(n != np.floor(n)):
        raise ValueError("n must be a non-negative integer")
    if np.any(~(r > 0)) or np.any(~np.isfinite(r)):
        raise ValueError("r must be positive and finite")
    if np.any(~((p > 0) & (p < 1))):
        raise ValueError("p must lie in (0, 1)")
    n = n.astype(float)
    out = gammaln(n + r) - gammaln(n + 1.0) - gammaln(r) + n * np.log(p) + r * np.log1p(-p)
    return out[()] if out.ndim == 0 else out


class CountData:
    """Dense view of a count matrix plus per-entry constants reused by the sampler.

    The log-likelihood needs ``log Gamma(n + r_j) - log Gamma(r_j)`` for every
    nonzero entry; those are grouped by distinct ``(cell, count)`` pairs.
    """

    def __init__(self, counts):
        dense = counts.dense if isinstance(counts, CountMatrix) else np.asarray(counts)
        self.dense = dense
        self.n = dense.astype(float)
        rows, cols = np.nonzero(dense)
        nz = dense[rows, cols].astype(np.int64)
        # row-major nonzeros; the entries of rows [a, b) are nz_flat[row_ptr[a]:row_ptr[b]]
        self.nz_flat = rows * dense.shape[1] + cols
        self.nz_cols = cols
        self.nz_counts = nz
        self.row_ptr = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=dense.shape[0]))])
        self.nnz_per_cell = np.bincount(cols, minlength=dense.shape[1]).astype(float)
        pairs = np.stack([cols, nz], axis=1)
        uniq, mult = np.unique(pairs, axis=0, return_counts=True) if nz.size else (np.zeros((0, 2), int), np.zeros(0))
        self.pair_cells = uniq[:, 0]
        self.pair_counts = uniq[:, 1].astype(float)
        self.pair_mult = mult.astype(float)
        self.log_factorial_sum = float(np.sum(gammaln(nz + 1.0)))
        self._kappa_r = self._kappa = None

    def kappa(self, r) -> np.ndarray:
        """``(n - r_j) / 2``, read-only; recomputed only when ``r`` changes."""
        r = np.asarray(r, dtype=float)
        if self._kappa_r is None or not np.array_equal(self._kappa_r, r):
            k = (self.n - r[None, :]) / 2.0
            k.flags.writeable = False
            self._kappa_r, self._kappa = r.copy(), k
        return self._kappa

    @property
    def shape(self):
        return self.dense.shape


def as_count_data(counts) -> CountData:
    return counts if isinstance(counts, CountData) else CountData(counts)


def _nb_loglik_terms(counts, r, psi, softplus=None):
    """Sum of NB log PMFs given the logits; returns (total, clamp_events).

    ``softplus`` may carry a precomputed ``log(1 + exp(psi))`` of the clamped logits.
    """
    data = as_count_data(counts)
    psi, n_clamped = clamp_psi(psi)
    log_q = -(_softplus(psi) if softplus is None else softplus)  # log(1 - p)
    # sum_vj [r_j log(1-p) + n log p] = sum_vj [(r_j + n) log(1-p) + n psi]
    total = float(np.sum((r[None, :] + data.n) * log_q + data.n * psi))
    if data.pair_cells.size:
        rr = r[data.pair_cells]
        total += float(np.sum(data.pair_mult * gammaln(data.pair_counts + rr)))
        total -= float(np.sum(data.nnz_per_cell * gammaln(r)))
        total -= data.log_factorial_sum
    return total, n_clamped


def data_log_likelihood(counts: CountMatrix, state: ModelState, designs: DesignMatrices,
                        return_clamps: bool = False):
    """Log-likelihood of every entry, zeros included, under the given state."""
    designs.check(counts)
    if state.n_genes != counts.n_genes or state.n_cells != counts.n_cells:
        raise DataError("state dimensions do not match the count matrix")
    psi = state.psi(designs)
    if not np.all(np.isfinite(psi)):
        raise NumericalError("non-finite psi in log-likelihood")
    total, n_clamped = _nb_loglik_terms(counts.dense, np.asarray(state.r, float), psi)
    if not np.isfinite(total):
        raise NumericalError("non-finite log-likelihood")
    return (total, n_clamped) if return_clamps else total


def nb_mean(r, psi):
    """NB mean ``r p / (1 - p)`` with ``p = logistic(psi)``; equals ``r exp(psi)``."""
    psi = np.asarray(psi, dtype=float)
    if np.any(psi >= PSI_MAX):
        raise NumericalError("p numerically equal to 1: infinite NB mean")
    return np.asarray(r, dtype=float) * np.exp(psi)


def expected_count(state: ModelState, designs: DesignMatrices, v: int, j: int) -> float:
    """Model mean of ``n[v, j]``."""
    return float(nb_mean(state.r[j], logit_psi(state, designs, v, j)))


def expected_counts(state: ModelState, designs: DesignMatrices) -> np.ndarray:
    """V x J matrix of model means."""
    return nb_mean(state.r[None, :], state.psi(designs))
