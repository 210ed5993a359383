"""Gibbs sampler for the hGNB model.

One sweep visits the blocks in this order (``DEFAULT_ORDER``)::

    crt -> dispersion -> pg -> cell_regression -> gene_regression
        -> loadings -> scores -> precisions -> rate

Randomness is keyed by ``(seed, iteration, phase, block)``: genes and cells
are cut into fixed-size blocks and each block draws from its own stream, so
results do not depend on how many worker threads process the blocks.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .distributions import (
    RngStream,
    _crt_kernel,
    as_generator,
    gaussian_conditional,
    sample_crt,
    sample_gamma,
    sample_gaussian_conditional,
    sample_polya_gamma,
)
from .errors import DataError, HGNBError, NumericalError
from .model import (
    ChainOutput,
    CountMatrix,
    DesignMatrices,
    Hyperparams,
    ModelState,
    CountData,
    _nb_loglik_terms,
    as_count_data,
    clamp_psi,
)
from .model import softplus as _softplus  # the name is also a keyword argument below

log = logging.getLogger(__name__)

DEFAULT_ORDER = (
    "crt",
    "dispersion",
    "pg",
    "cell_regression",
    "gene_regression",
    "loadings",
    "scores",
    "precisions",
    "rate",
)
PHASE_ID = {name: i for i, name in enumerate(DEFAULT_ORDER)}
#: state fields that can be held fixed via ``frozen=``
FREEZABLE = ("r", "delta", "beta", "phi", "theta", "alpha", "eta", "gamma", "h")

_ITER_KIND, _INIT_KIND = 0, 1


@dataclass
class SweepReport:
    iteration: int
    log_likelihood: float
    elapsed: float
    clamp_events: int


class ChainError(HGNBError):
    """An update failed; carries the iteration at which it happened."""

    def __init__(self, iteration: int, cause: Exception):
        super().__init__(f"iteration {iteration}: {cause}")
        self.iteration = iteration
        self.cause = cause


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _blocks(n: int, size: int) -> list[slice]:
    return [slice(s, min(s + size, n)) for s in range(0, n, size)]


def _run_blocks(work: Callable, n_units: int, rng, block_size: int, executor=None) -> None:
    """Call ``work(slice, generator)`` for every block of ``range(n_units)``."""
    blocks = _blocks(n_units, block_size)
    if isinstance(rng, RngStream):
        gens = [rng.child(b).generator() for b in range(len(blocks))]
    else:
        # a shared Generator forces sequential order
        g = as_generator(rng)
        gens = [g] * len(blocks)
        executor = None
    if executor is None or len(blocks) < 2:
        for sl, g in zip(blocks, gens):
            work(sl, g)
    else:
        for fut in [executor.submit(work, sl, g) for sl, g in zip(blocks, gens)]:
            fut.result()


def _dense(counts) -> np.ndarray:
    if isinstance(counts, (CountMatrix, CountData)):
        return counts.dense
    return np.asarray(counts)


def _float_counts(counts) -> np.ndarray:
    return counts.n if isinstance(counts, CountData) else _dense(counts).astype(float)


def _check_gamma(shape, scale, what):
    """Full-conditional gamma parameters must be finite and positive; overflow upstream breaks this."""
    ok = np.isfinite(shape) & np.isfinite(scale) & (np.asarray(shape) > 0) & (np.asarray(scale) > 0)
    if not np.all(ok):
        raise NumericalError(f"degenerate gamma conditional for {what}")


def _kappa(n, r):
    return (n - r[None, :]) / 2.0


def _row_terms(kappa, omega, offset, F):
    """Canonical Gaussian terms for units on the rows of ``kappa``.

    ``F`` is D x C (one covariate/factor column per column of ``kappa``).
    Returns ``linear`` (U x D) and ``data_precision`` (U x D x D).
    """
    resid = kappa - omega * offset
    linear = resid @ F.T
    D = F.shape[0]
    prec = np.empty((kappa.shape[0], D, D))
    # one mat-vec per distinct entry of the symmetric D x D accumulator
    for a in range(D):
        for b in range(a, D):
            prec[:, a, b] = omega @ (F[a] * F[b])
            prec[:, b, a] = prec[:, a, b]
    return linear, prec


# ---------------------------------------------------------------------------
# conditional parameters (deterministic; used by samplers and oracle tests)
# ---------------------------------------------------------------------------


def dispersion_conditional(ell, psi, h, e0, softplus=None):
    """Shape and scale of the gamma full conditional of each ``r_j``.

    ``shape = e0 + sum_v ell[v, j]``, ``scale = 1 / (h - sum_v log(1 - p[v, j]))``.
    Returns ``(shape, scale, clamp_events)``.
    """
    ell = np.asarray(ell)
    psi, n_clamped = clamp_psi(psi)
    if softplus is None:
        softplus = _softplus(psi)
    neg_log_q = softplus.sum(axis=0)  # -sum_v log(1 - p)
    shape = e0 + ell.sum(axis=0)
    scale = 1.0 / (h + neg_log_q)
    return shape, scale, n_clamped


def precision_conditionals(state: ModelState, e0: float, f0: float):
    """Gamma (shape, scale) pairs for ``alpha``, ``eta`` and ``gamma``."""
    V, J = state.n_genes, state.n_cells
    return {
        "alpha": (e0 + V / 2.0, 1.0 / (f0 + 0.5 * np.sum(state.beta**2, axis=1))),
        "eta": (e0 + J / 2.0, 1.0 / (f0 + 0.5 * np.sum(state.delta**2, axis=1))),
        "gamma": (e0 + J / 2.0, 1.0 / (f0 + 0.5 * np.sum(state.theta**2, axis=1))),
    }


def rate_conditional(r, e0: float, f0: float):
    """Gamma (shape, scale) of ``h``: ``(e0 (1 + J), 1 / (f0 + sum_j r_j))``."""
    r = np.asarray(r, dtype=float)
    return e0 * (1 + r.size), 1.0 / (f0 + r.sum())


def _block_inputs(block: str, counts, state: ModelState, designs: DesignMatrices):
    """Return ``(kappa, omega, offset, F, prior)`` oriented with the updated units on rows."""
    if isinstance(counts, CountData):
        kappa = counts.kappa(state.r)
    else:
        kappa = _kappa(_float_counts(counts), state.r)
    omega = state.omega
    if omega is None:
        raise DataError("omega must be sampled before Gaussian updates")
    x, z = designs.cell_covariates, designs.gene_covariates
    if block == "beta":
        return kappa, omega, z.T @ state.delta + state.phi.T @ state.theta, x, state.alpha
    if block == "delta":
        return kappa.T, omega.T, (state.beta.T @ x + state.phi.T @ state.theta).T, z, state.eta
    if block == "phi":
        return kappa, omega, state.beta.T @ x + z.T @ state.delta, state.theta, np.ones(state.K)
    if block == "theta":
        return kappa.T, omega.T, (state.beta.T @ x + z.T @ state.delta).T, state.phi, state.gamma
    raise ValueError(f"unknown Gaussian block {block!r}")


def gaussian_block_conditional(block: str, counts, state: ModelState, designs: DesignMatrices):
    """Posterior mean and covariance of every column of ``block``.

    ``block`` is one of ``"beta"``, ``"delta"``, ``"phi"``, ``"theta"``.
    Returns ``(means, covs)`` with shapes ``(U, D)`` and ``(U, D, D)``.
    """
    kappa, omega, offset, F, prior = _block_inputs(block, counts, state, designs)
    linear, prec = _row_terms(kappa, omega, offset, F)
    mean, L = gaussian_conditional(prior, prec, linear)
    eye = np.broadcast_to(np.eye(F.shape[0]), prec.shape)
    Linv = np.linalg.solve(L, eye)
    cov = np.swapaxes(Linv, -1, -2) @ Linv
    return mean, cov


# ---------------------------------------------------------------------------
# sampling updates
# ---------------------------------------------------------------------------


class _LogitCache:
    """``psi`` and ``softplus(psi)`` for the current coefficient and factor blocks.

    Valid until one of beta, delta, phi, theta changes; the sweep calls
    ``invalidate`` after each Gaussian block.
    """

    def __init__(self):
        self.invalidate()

    def invalidate(self):
        self._raw = self._psi = self._softplus = None
        self._clamps = 0

    def raw(self, state, designs):
        if self._raw is None:
            self._raw = state.psi(designs)
        return self._raw

    def get(self, state, designs):
        if self._psi is None:
            self._psi, self._clamps = clamp_psi(self.raw(state, designs))
            self._softplus = _softplus(self._psi)
        return self._psi, self._softplus, self._clamps


def update_crt_counts(counts, state: ModelState, rng, *, block_size=128, executor=None):
    """Redraw ``ell[v, j] ~ CRT(n[v, j], r[j])``; zero counts give zero."""
    n = _dense(counts)
    ell = np.zeros(n.shape, dtype=np.int64)
    if isinstance(counts, CountData):
        # same draws as sample_crt on each row block, without rescanning for nonzeros
        if np.any(~(state.r > 0)):
            raise ValueError("CRT concentration r must be positive")
        flat = ell.reshape(-1)

        def work(sl, g):
            seg = slice(counts.row_ptr[sl.start], counts.row_ptr[sl.stop])
            flat[counts.nz_flat[seg]] = _crt_kernel(counts.nz_counts[seg], state.r[counts.nz_cols[seg]], g)
    else:
        def work(sl, g):
            ell[sl] = sample_crt(n[sl], state.r[None, :], g)

    _run_blocks(work, n.shape[0], rng, block_size, executor)
    state.ell = ell
    return ell


def update_dispersions(state: ModelState, counts, designs: DesignMatrices, rng, *, e0=0.01,
                       block_size=128, executor=None, cache=None):
    """Redraw each cell dispersion from its gamma full conditional."""
    if state.ell is None:
        raise DataError("CRT counts must be sampled before dispersions")
    if cache is None:
        cache = _LogitCache()
    psi, softplus, n_clamped = cache.get(state, designs)
    shape, scale, _ = dispersion_conditional(state.ell, psi, state.h, e0, softplus)
    _check_gamma(shape, scale, "r")
    r = np.empty(state.n_cells)

    def work(sl, g):
        r[sl] = sample_gamma(shape[sl], scale[sl], g)

    _run_blocks(work, state.n_cells, rng, block_size, executor)
    state.r = r
    return r, n_clamped


def update_pg_auxiliaries(state: ModelState, counts, designs: DesignMatrices, rng, *, terms=200,
                          block_size=128, executor=None, cache=None):
    """Redraw ``omega[v, j] ~ PG(n[v, j] + r[j], psi[v, j])`` for every entry."""
    n = _dense(counts)
    psi = state.psi(designs) if cache is None else cache.raw(state, designs)
    omega = np.empty(n.shape)

    def work(sl, g):
        omega[sl] = sample_polya_gamma(n[sl] + state.r[None, :], psi[sl], g, terms=terms)

    _run_blocks(work, n.shape[0], rng, block_size, executor)
    state.omega = omega
    return omega


def _update_gaussian(block, counts, state, designs, rng, block_size, executor):
    kappa, omega, offset, F, prior = _block_inputs(block, counts, state, designs)
    U, D = kappa.shape[0], F.shape[0]
    out = np.empty((D, U))
    if D == 0:
        setattr(state, block, out)
        return out
    unit = "gene" if block in ("beta", "phi") else "cell"

    def work(sl, g):
        linear, prec = _row_terms(kappa[sl], omega[sl], offset[sl], F)
        draw = sample_gaussian_conditional(prior, prec, linear, g, what=f"{block} posterior precision",
                                           index_name=unit, index_offset=sl.start)
        out[:, sl] = draw.T

    _run_blocks(work, U, rng, block_size, executor)
    setattr(state, block, out)
    return out


def update_gene_regression(state, counts, designs, rng, *, block_size=128, executor=None):
    """Redraw every ``beta[:, v]`` from its Gaussian full conditional."""
    return _update_gaussian("beta", counts, state, designs, rng, block_size, executor)


def update_cell_regression(state, counts, designs, rng, *, block_size=128, executor=None):
    """Redraw every ``delta[:, j]`` from its Gaussian full conditional."""
    return _update_gaussian("delta", counts, state, designs, rng, block_size, executor)


def update_factor_loadings(state, counts, designs, rng, *, block_size=128, executor=None):
    """Redraw every ``phi[:, v]``; the prior is N(0, I_K)."""
    return _update_gaussian("phi", counts, state, designs, rng, block_size, executor)


def update_factor_scores(state, counts, designs, rng, *, block_size=128, executor=None):
    """Redraw every ``theta[:, j]``; the prior precision is diag(gamma)."""
    return _update_gaussian("theta", counts, state, designs, rng, block_size, executor)


def update_precisions(state: ModelState, rng, *, e0=0.01, f0=0.01, frozen=()):
    """Normal-gamma conjugate redraw of ``alpha``, ``eta`` and ``gamma``."""
    g = as_generator(rng)
    for name, (shape, scale) in precision_conditionals(state, e0, f0).items():
        if name in frozen:
            continue
        scale = np.asarray(scale, dtype=float)
        _check_gamma(shape, scale, name)
        setattr(state, name, sample_gamma(shape, scale, g, size=scale.shape) if scale.size else scale)
    return state.alpha, state.eta, state.gamma


def update_rate_h(state: ModelState, rng, *, e0=0.01, f0=0.01):
    """Gamma-gamma conjugate redraw of the dispersion rate ``h``."""
    shape, scale = rate_conditional(state.r, e0, f0)
    _check_gamma(shape, scale, "h")
    state.h = float(sample_gamma(shape, scale, rng))
    return state.h


# ---------------------------------------------------------------------------
# sweep and chain
# ---------------------------------------------------------------------------


def init_state(n_genes: int, n_cells: int, designs: DesignMatrices, hyper: Hyperparams,
               rng=None) -> ModelState:
    """Starting point: r = h = 1, unit precisions, N(0, 0.01) coefficients and factors."""
    if rng is None:
        rng = RngStream(hyper.seed, (_INIT_KIND, 0, 0))
    g = as_generator(rng)
    sd = 0.1
    P, Q, K = designs.P, designs.Q, hyper.K
    return ModelState(
        r=np.ones(n_cells),
        h=1.0,
        beta=sd * g.standard_normal((P, n_genes)),
        delta=sd * g.standard_normal((Q, n_cells)),
        phi=sd * g.standard_normal((K, n_genes)),
        theta=sd * g.standard_normal((K, n_cells)),
        alpha=np.ones(P),
        eta=np.ones(Q),
        gamma=np.ones(K),
        omega=np.zeros((n_genes, n_cells)),
        ell=np.zeros((n_genes, n_cells), dtype=np.int64),
    )


def gibbs_sweep(counts, designs: DesignMatrices, state: ModelState, hyper: Hyperparams, rng: RngStream,
                *, order: Iterable[str] = DEFAULT_ORDER, frozen: Iterable[str] = (), executor=None,
                cache: _LogitCache | None = None) -> int:
    """Run one full sweep in place.  ``rng`` is the iteration's stream.

    Returns the number of probability clamp events.
    """
    frozen = set(frozen)
    if cache is None:
        cache = _LogitCache()
    bs = hyper.block_size
    clamps = 0
    for phase in order:
        ph = rng.child(PHASE_ID[phase])
        if phase == "crt":
            update_crt_counts(counts, state, ph, block_size=bs, executor=executor)
        elif phase == "dispersion":
            if "r" not in frozen:
                _, c = update_dispersions(state, counts, designs, ph, e0=hyper.e0, block_size=bs,
                                          executor=executor, cache=cache)
                clamps += c
        elif phase == "pg":
            update_pg_auxiliaries(state, counts, designs, ph, terms=hyper.pg_terms, block_size=bs,
                                  executor=executor, cache=cache)
        elif phase == "cell_regression":
            if "delta" not in frozen:
                update_cell_regression(state, counts, designs, ph, block_size=bs, executor=executor)
                cache.invalidate()
        elif phase == "gene_regression":
            if "beta" not in frozen:
                update_gene_regression(state, counts, designs, ph, block_size=bs, executor=executor)
                cache.invalidate()
        elif phase == "loadings":
            if "phi" not in frozen:
                update_factor_loadings(state, counts, designs, ph, block_size=bs, executor=executor)
                cache.invalidate()
        elif phase == "scores":
            if "theta" not in frozen:
                update_factor_scores(state, counts, designs, ph, block_size=bs, executor=executor)
                cache.invalidate()
        elif phase == "precisions":
            update_precisions(state, ph, e0=hyper.e0, f0=hyper.f0, frozen=frozen)
        elif phase == "rate":
            if "h" not in frozen:
                update_rate_h(state, ph, e0=hyper.e0, f0=hyper.f0)
        else:
            raise ValueError(f"unknown phase {phase!r}")
    return clamps


def iteration_stream(seed: int, iteration: int) -> RngStream:
    return RngStream(seed, (_ITER_KIND, iteration, 0))


def run_chain(counts: CountMatrix, designs: DesignMatrices, hyper: Hyperparams, rng: RngStream | None = None,
              *, workers: int = 1, init: ModelState | None = None, order=DEFAULT_ORDER, frozen=(),
              store_samples: bool = True, checkpoint_path=None, checkpoint_every: int | None = None,
              stop_after: int | None = None, resume: Checkpoint | None = None,
              callback: Callable[[SweepReport], None] | None = None) -> ChainOutput:
    """Run the sampler for ``hyper.n_iterations`` sweeps.

    The log-likelihood is recorded after every sweep.  Post-burn-in states
    (every ``hyper.thin``-th) are stored, and the one with the largest
    log-likelihood becomes the point estimate.

    ``stop_after`` ends the run early after that many total iterations (used
    together with ``checkpoint_path`` to split a run); ``resume`` continues a
    run from a checkpoint, bit-identically.
    """
    designs.check(counts)
    frozen = tuple(frozen)
    unknown = set(frozen) - set(FREEZABLE)
    if unknown:
        raise ValueError(f"cannot freeze {sorted(unknown)}")
    if rng is None:
        rng = RngStream(hyper.seed)
    seed = rng.seed
    V, J = counts.shape

    if resume is not None:
        state = resume.state.copy()
        start = resume.iteration
        trace = list(np.asarray(resume.log_likelihoods, dtype=float))
        best_state, best_it = resume.best_state, resume.best_iteration
        best_ll = trace[best_it] if best_it >= 0 else -np.inf
    else:
        state = init.copy() if init is not None else init_state(V, J, designs, hyper,
                                                                 RngStream(seed, (_INIT_KIND, 0, 0)))
        if state.omega is None:
            state.omega = np.zeros((V, J))
        if state.ell is None:
            state.ell = np.zeros((V, J), dtype=np.int64)
        start, trace, best_state, best_it, best_ll = 0, [], None, -1, -np.inf
    state.validate(designs)

    dense = CountData(counts)
    meta = {
        "hyper": hyper.to_dict(),
        "seed": seed,
        "order": list(order),
        "frozen": list(frozen),
        "n_genes": V,
        "n_cells": J,
        "P": designs.P,
        "Q": designs.Q,
        "partition": {"block_size": hyper.block_size, "policy": "fixed-size blocks, one stream per block"},
    }

    def _checkpoint(it, st):
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, Checkpoint(st, it, np.asarray(trace), best_state, best_it, meta))

    samples, sample_its, reports = [], [], []
    cache = _LogitCache()
    end = hyper.n_iterations if stop_after is None else min(stop_after, hyper.n_iterations)
    executor = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for it in range(start, end):
            t0 = time.perf_counter()
            backup = state.copy() if checkpoint_path is not None else None
            try:
                clamps = gibbs_sweep(dense, designs, state, hyper, iteration_stream(seed, it),
                                     order=order, frozen=frozen, executor=executor, cache=cache)
                psi, softplus, c2 = cache.get(state, designs)
                ll, _ = _nb_loglik_terms(dense, state.r, psi, softplus)
                if not np.isfinite(ll):
                    raise NumericalError("non-finite log-likelihood")
            except (HGNBError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
                cache.invalidate()
                if backup is not None:
                    _checkpoint(it, backup)
                raise ChainError(it, exc) from exc
            trace.append(ll)
            report = SweepReport(it, ll, time.perf_counter() - t0, clamps + c2)
            reports.append(report)
            if report.clamp_events:
                log.debug("iteration %d: %d clamp events", it, report.clamp_events)
            if callback is not None:
                callback(report)
            if it >= hyper.burn_in:
                keep = (it - hyper.burn_in) % hyper.thin == 0
                if ll > best_ll:
                    best_ll, best_it = ll, it
                    best_state = state.copy(auxiliaries=hyper.keep_auxiliaries)
                if keep and store_samples:
                    samples.append(state.copy(auxiliaries=hyper.keep_auxiliaries))
                    sample_its.append(it)
            if checkpoint_every and (it + 1) % checkpoint_every == 0:
                _checkpoint(it + 1, state)
    finally:
        if executor is not None:
            executor.shutdown()

    if stop_after is not None and end < hyper.n_iterations:
        _checkpoint(end, state)
    elif checkpoint_path is not None:
        _checkpoint(end, state)
    if best_state is None:
        # run stopped before burn-in ended: report the latest state
        best_state, best_it = state.copy(auxiliaries=hyper.keep_auxiliaries), len(trace) - 1
        burn = best_it
    else:
        burn = hyper.burn_in
    out = ChainOutput(
        samples=samples,
        sample_iterations=sample_its,
        log_likelihoods=np.asarray(trace),
        point_estimate=best_state,
        point_iteration=best_it,
        burn_in=burn,
        meta=meta,
        reports=reports,
        final_state=state,
    )
    return out


def resume_chain(checkpoint_path, counts: CountMatrix, designs: DesignMatrices, hyper: Hyperparams | None = None,
                 **kwargs) -> ChainOutput:
    """Continue a chain saved by :func:`run_chain`."""
    ck = load_checkpoint(checkpoint_path)
    if hyper is None:
        hyper = Hyperparams(**ck.meta["hyper"])
    kwargs.setdefault("order", tuple(ck.meta.get("order", DEFAULT_ORDER)))
    kwargs.setdefault("frozen", tuple(ck.meta.get("frozen", ())))
    return run_chain(counts, designs, hyper, RngStream(ck.meta["seed"]), resume=ck,
                     checkpoint_path=checkpoint_path, **kwargs)


def transform(counts: CountMatrix, designs: DesignMatrices, fitted: ModelState, hyper: Hyperparams,
              *, workers: int = 1) -> ChainOutput:
    """Embed new cells with the gene-side blocks (beta, phi, alpha) held at ``fitted``.

    ``counts`` must cover the same genes as the fit; cell-side quantities
    (r, delta, theta and their hyperparameters) are sampled afresh.
    """
    V, J = counts.shape
    if fitted.n_genes != V:
        raise DataError(f"fitted state has {fitted.n_genes} genes, new counts have {V}")
    init = init_state(V, J, designs, hyper, RngStream(hyper.seed, (_INIT_KIND, 1, 0)))
    init.beta = np.array(fitted.beta, copy=True)
    init.phi = np.array(fitted.phi, copy=True)
    init.alpha = np.array(fitted.alpha, copy=True)
    if init.beta.shape[0] != designs.P:
        raise DataError("fitted beta does not match the cell covariates")
    return run_chain(counts, designs, hyper, workers=workers, init=init, frozen=("beta", "phi", "alpha"))
