"""Random variate generation for the Gibbs sampler.

Every sampler takes either an :class:`RngStream` (a reproducible
``(seed, stream_id)`` key, re-materialized on each call) or an already
constructed :class:`numpy.random.Generator`.  Streams are derived with
``SeedSequence`` spawn keys and drive a PCG64 bit generator, so any
sub-stream can be recreated without replaying the others.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import NumericalError



@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id)``.

    ``stream_id`` is a tuple of non-negative integers; :meth:`child` appends
    to it.  Identical keys always give identical draw sequences.
    """

    seed: int
    stream_id: tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        sid = self.stream_id
        sid = (int(sid),) if np.isscalar(sid) else tuple(int(s) for s in sid)
        if any(s < 0 or s >= 2**64 for s in sid):
            raise ValueError("stream ids must be 64-bit unsigned integers")
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "stream_id", sid)

    def child(self, *keys: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id + tuple(int(k) for k in keys))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=self.stream_id)
        return np.random.Generator(np.random.PCG64(ss))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


# ---------------------------------------------------------------------------
# Gamma
# ---------------------------------------------------------------------------


def sample_gamma(shape, scale, rng, size=None):
    """Gamma(shape, scale) draws; mean ``shape * scale``.

    Shapes below one use ``Gamma(a) = Gamma(a + 1) * U**(1/a)``, evaluated in
    log space.  Draws that underflow are floored at the smallest positive
    double so the result is always strictly positive.
    """
    g = as_generator(rng)
    shape = np.asarray(shape, dtype=float)
    scale = np.asarray(scale, dtype=float)
    if np.any(~(shape > 0)) or np.any(~(scale > 0)) or not np.all(np.isfinite(shape)):
        raise ValueError("gamma shape and scale must be positive")
    if size is None:
        size = np.broadcast_shapes(shape.shape, scale.shape)
    shape = np.broadcast_to(shape, size)
    small = shape < 1.0
    if not np.any(small):
        out = g.standard_gamma(shape)
    else:
        out = np.asarray(g.standard_gamma(shape + small), dtype=float).reshape(shape.shape)
        a = shape[small]
        log_u = np.log(g.random(a.shape))
        with np.errstate(divide="ignore", under="ignore"):
            out[small] = np.exp(np.log(out[small]) + log_u / a)
    out = np.maximum(out * scale, np.finfo(float).tiny)
    return out[()] if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Chinese restaurant table
# ---------------------------------------------------------------------------


def crt_mean(n, r):
    """Analytic mean ``sum_{t=1}^{n} r / (r + t - 1)``."""
    t = np.arange(int(n))
    return float(np.sum(r / (r + t)))


@numba.njit(cache=True, nogil=True)
def _crt_kernel(n, r, g):
    out = np.zeros(n.size, dtype=np.int64)
    for i in range(n.size):
        ri = r[i]
        ell = 0
        for t in range(n[i]):
            # Bernoulli(r / (r + t)), t = 0..n-1
            if g.random() * (ri + t) < ri:
                ell += 1
        out[i] = ell
    return out


def sample_crt(n, r, rng):
    """Chinese-restaurant-table draws ``l = sum_{t=1}^{n} Bernoulli(r / (r + t - 1))``.

    ``n`` and ``r`` broadcast against each other.  The Bernoulli sum is
    evaluated exactly, one uniform per trial, for every count size.
    """
    g = as_generator(rng)
    n = np.asarray(n)
    r = np.asarray(r, dtype=float)
    if np.any(~(r > 0)):
        raise ValueError("CRT concentration r must be positive")
    if np.any(n < 0):
        raise ValueError("CRT count n must be non-negative")
    n, r = np.broadcast_arrays(n.astype(np.int64), r)
    flat_n = n.ravel()
    out = np.zeros(flat_n.shape, dtype=np.int64)
    idx = np.flatnonzero(flat_n)
    if idx.size:
        out[idx] = _crt_kernel(flat_n[idx], np.ascontiguousarray(r.ravel()[idx]), g)
    out = out.reshape(n.shape)
    return out[()] if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Polya-Gamma
# ---------------------------------------------------------------------------


def _pg1_moments(c):
    """Mean and variance of PG(1, c)."""
    c = np.abs(np.asarray(c, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        th = np.tanh(c / 2)
        mean = th / (2 * c)
        # sech^2 = 1 - tanh^2
        var = (2 * th - c * (1 - th * th)) / (4 * c**3)
    small = c < 0.1
    if np.any(small):
        c2 = c[small] ** 2
        mean[small] = 0.25 - c2 / 48 + c2**2 / 480 - 17 * c2**3 / 80640 + 31 * c2**4 / 1451520
        var[small] = 1 / 24 - c2 / 120 + 17 * c2**2 / 13440 - 31 * c2**3 / 181440 + 691 * c2**4 / 31933440
    return mean, var


def _pg1_mean(c):
    return _pg1_moments(np.atleast_1d(c))[0].reshape(np.shape(c))


def _pg1_var(c):
    return _pg1_moments(np.atleast_1d(c))[1].reshape(np.shape(c))


def pg_mean(b, c):
    """Mean of PG(b, c): ``b / (2c) tanh(c / 2)``, ``b / 4`` at ``c = 0``."""
    return np.asarray(b, dtype=float) * _pg1_mean(c)


def pg_var(b, c):
    """Variance of PG(b, c): ``b (sinh c - c) / (4 c^3) sech^2(c / 2)``."""
    return np.asarray(b, dtype=float) * _pg1_var(c)


def pg_laplace(b, c, t):
    """Laplace transform ``E exp(-t w)`` of PG(b, c)."""
    b = np.asarray(b, dtype=float)
    return (np.cosh(np.asarray(c) / 2) / np.cosh(np.sqrt(np.asarray(c) ** 2 / 4 + np.asarray(t) / 2))) ** b


@numba.njit(cache=True, nogil=True)
def _gamma_mt(g, d, c):
    # Marsaglia-Tsang squeeze/rejection for shape d + 1/3 >= 1, with c = 1 / sqrt(9 d)
    while True:
        x = g.standard_normal()
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = g.random()
        if u < 1.0 - 0.0331 * x * x * x * x or np.log(u) < 0.5 * x * x + d * (1.0 - v + np.log(v)):
            return d * v


@numba.njit(cache=True, nogil=True)
def _gamma(g, a):
    if a >= 1.0:
        d = a - 1.0 / 3.0
        return _gamma_mt(g, d, 1.0 / np.sqrt(9.0 * d))
    # boost: Gamma(a) = Gamma(a + 1) * U^(1/a)
    d = a + 2.0 / 3.0
    return _gamma_mt(g, d, 1.0 / np.sqrt(9.0 * d)) * (1.0 - g.random()) ** (1.0 / a)


@numba.njit(cache=True, nogil=True)
def _pg_kernel(b, c, terms, g):
    two_pi_sq = 2.0 * np.pi * np.pi
    tiny = np.finfo(np.float64).tiny
    out = np.empty(b.size)
    for i in range(b.size):
        bi = b[i]
        ci = abs(c[i])
        a2 = (ci / (2.0 * np.pi)) ** 2
        # all series terms share the shape bi
        boost = bi < 1.0
        dd = bi + 2.0 / 3.0 if boost else bi - 1.0 / 3.0
        cc = 1.0 / np.sqrt(9.0 * dd)
        inv_b = 1.0 / bi
        acc = 0.0
        s1 = 0.0
        s2 = 0.0
        for k in range(1, terms + 1):
            d = (k - 0.5) ** 2 + a2
            gk = _gamma_mt(g, dd, cc)
            if boost:
                gk *= (1.0 - g.random()) ** inv_b
            acc += gk / d
            s1 += 1.0 / d
            s2 += 1.0 / (d * d)
        # PG(1, c) mean and variance
        if ci < 0.1:
            c2 = ci * ci
            m1 = 0.25 - c2 / 48 + c2**2 / 480 - 17 * c2**3 / 80640 + 31 * c2**4 / 1451520
            v1 = 1 / 24 - c2 / 120 + 17 * c2**2 / 13440 - 31 * c2**3 / 181440 + 691 * c2**4 / 31933440
        else:
            th = np.tanh(ci / 2)
            m1 = th / (2 * ci)
            v1 = (2 * th - ci * (1 - th * th)) / (4 * ci**3)
        tail_mean = two_pi_sq * m1 - s1
        tail_var = two_pi_sq * two_pi_sq * v1 - s2
        if tail_mean > 0.0 and tail_var > 0.0:
            # b units of a tail with mean m, variance v: shape b m^2 / v, scale v / m
            acc += _gamma(g, bi * tail_mean * tail_mean / tail_var) * (tail_var / tail_mean)
        out[i] = max(acc / two_pi_sq, tiny)
    return out


def sample_polya_gamma(b, c, rng, terms: int = 200):
    """Draws from PG(b, c) for real ``b > 0``.

    Uses the series ``w = 1/(2 pi^2) sum_k g_k / ((k - 1/2)^2 + c^2/(4 pi^2))``
    with ``g_k ~ Gamma(b, 1)``, truncated after ``terms`` summands.  The
    remainder is replaced by one gamma variate whose mean and variance match
    those of the discarded tail, so the first two moments are exact for any
    truncation level.
    """
    g = as_generator(rng)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    if np.any(~(b > 0)) or not np.all(np.isfinite(b)):
        raise ValueError("PG shape b must be positive and finite")
    if not np.all(np.isfinite(c)):
        raise ValueError("PG tilt c must be finite")
    if int(terms) < 1:
        raise ValueError("terms must be >= 1")
    b, c = np.broadcast_arrays(b, c)
    out = _pg_kernel(np.ascontiguousarray(b.ravel()), np.ascontiguousarray(c.ravel()), int(terms), g)
    out = out.reshape(b.shape)
    return out[()] if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Multivariate normal in precision form
# ---------------------------------------------------------------------------


def _cholesky_batched(precision, what="precision", index_name="index", index_offset=0):
    try:
        return np.linalg.cholesky(precision)
    except np.linalg.LinAlgError:
        if precision.ndim == 2:
            raise NumericalError(f"{what} matrix is not positive definite") from None
        for i in range(precision.shape[0]):
            try:
                np.linalg.cholesky(precision[i])
            except np.linalg.LinAlgError:
                raise NumericalError(
                    f"{what} matrix is not positive definite at {index_name} {i + index_offset}"
                ) from None
        raise


def gaussian_conditional(prior_precision, data_precision, linear, what="precision", index_name="index",
                         index_offset=0):
    """Mean and Cholesky factor of ``N(Lambda^-1 linear, Lambda^-1)``.

    ``Lambda = diag(prior_precision) + data_precision``.  ``data_precision``
    may carry leading batch dimensions (``(..., D, D)``) with ``linear`` of
    shape ``(..., D)``.  Returns ``(mean, L)`` with ``L L^T = Lambda``.
    """
    prior = np.asarray(prior_precision, dtype=float)
    lam = np.array(data_precision, dtype=float)
    D = lam.shape[-1]
    lam[..., np.arange(D), np.arange(D)] += prior
    L = _cholesky_batched(lam, what, index_name, index_offset)
    y = np.linalg.solve(L, np.asarray(linear, dtype=float)[..., None])
    mean = np.linalg.solve(np.swapaxes(L, -1, -2), y)[..., 0]
    return mean, L


def sample_gaussian_conditional(prior_precision, data_precision, linear, rng,
                                what="precision", index_name="index", index_offset=0):
    """Batched draw from the canonical-form Gaussian of :func:`gaussian_conditional`."""
    mean, L = gaussian_conditional(prior_precision, data_precision, linear, what, index_name, index_offset)
    z = as_generator(rng).standard_normal(mean.shape)
    return mean + np.linalg.solve(np.swapaxes(L, -1, -2), z[..., None])[..., 0]


def sample_mvn_cholesky(mean, prior_precision, data_precision, rng):
    """One draw from ``N(mean, (diag(prior_precision) + data_precision)^-1)``.

    Never forms the covariance: draws ``mean + L^-T z`` where ``L`` is the
    Cholesky factor of the precision.
    """
    mean = np.asarray(mean, dtype=float)
    D = mean.shape[-1]
    data_precision = np.zeros((D, D)) if data_precision is None else data_precision
    lam = np.array(data_precision, dtype=float)
    lam[np.arange(D), np.arange(D)] += np.asarray(prior_precision, dtype=float)
    L = _cholesky_batched(lam)
    z = as_generator(rng).standard_normal(D)
    return mean + np.linalg.solve(L.T, z)


# ---------------------------------------------------------------------------
# Discrete
# ---------------------------------------------------------------------------


def sample_negative_binomial(r, p, rng, size=None):
    """NB(r, p) draws (mean ``r p / (1 - p)``) via the gamma-Poisson mixture."""
    g = as_generator(rng)
    r = np.asarray(r, dtype=float)
    p = np.asarray(p, dtype=float)
    if np.any(~(r > 0)):
        raise ValueError("NB dispersion r must be positive")
    if np.any(~((p >= 0) & (p < 1))):
        raise ValueError("NB probability p must lie in [0, 1)")
    lam = sample_gamma(r, np.maximum(p / (1 - p), np.finfo(float).tiny), g, size=size)
    out = g.poisson(np.where(p > 0, lam, 0.0))
    return out[()] if np.ndim(out) == 0 else out


def sample_bernoulli(prob, rng, size=None):
    g = as_generator(rng)
    prob = np.asarray(prob, dtype=float)
    if np.any((prob < 0) | (prob > 1)):
        raise ValueError("Bernoulli probability must lie in [0, 1]")
    if size is None:
        size = prob.shape
    return g.random(size) < prob


def sample_categorical(weights, rng, size=None):
    g = as_generator(rng)
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or not w.sum() > 0:
        raise ValueError("categorical weights must be non-negative with positive sum")
    return g.choice(w.size, size=size, p=w / w.sum())
