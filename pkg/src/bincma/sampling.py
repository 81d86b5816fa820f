"""Turning a search distribution ``(m, sigma, C)`` into integer candidates.

Coordinate ``j`` takes values in ``{0 .. dims[j] - 1}``. Its marginal is a
binomial on ``n_j = dims[j] - 1`` trials whose success probability is set
so that the binomial variance equals ``sigma**2 * C[j, j]`` (clamped to the
binomial maximum ``n_j / 4``), recentred on ``m[j]`` and wrapped modulo
``dims[j]``. Cross-coordinate dependence comes either from a Gaussian copula
or, for small dimension, from an exact multivariate Bernoulli law fitted to
the target covariances.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from bincma import poisson_binomial as pbm
from bincma.errors import BadDimension, DimensionTooLarge, InfeasibleMoments, VarianceTooLarge
from bincma.expfam import (
    K_MAX,
    CanonicalParams,
    IsingParams,
    fit_ising,
    moment_from_canonical,
    outcomes,
)
from bincma.poisson_binomial import DiscretePMF

SAMPLERS = ("copula", "exact")


def rng_stream(seed: int, name: str = "sampling") -> np.random.Generator:
    """Independent generator for the named stream of a 64-bit seed.

    The same ``(seed, name)`` pair always yields the same sequence.
    """
    key = zlib.crc32(name.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(key,))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class SearchDistribution:
    """Sampling state of the optimizer.

    Attributes:
        m: real mean vector; ``m[j]`` is read modulo ``dims[j]``.
        sigma: global step size.
        C: symmetric positive semi-definite covariance.
        dims: per-coordinate cardinalities (at least 2).
    """

    m: np.ndarray
    sigma: float
    C: np.ndarray
    dims: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=float).ravel()
        d = m.size
        C = np.array(self.C, dtype=float)
        dims = np.broadcast_to(np.asarray(self.dims, dtype=np.int64), (d,)).copy()
        if np.any(dims < 2):
            raise BadDimension(f"every coordinate needs at least 2 values, got dims={dims.tolist()}")
        if C.shape != (d, d):
            raise ValueError(f"C must be {d} x {d}, got {C.shape}")
        if not np.allclose(C, C.T, rtol=0, atol=1e-12):
            raise ValueError("C must be symmetric")
        if np.any(np.diag(C) < 0):
            raise ValueError("diagonal of C must be non-negative")
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be positive and finite, got {self.sigma}")
        for arr in (m, C, dims):
            arr.setflags(write=False)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def d(self) -> int:
        return self.m.size

    @property
    def trials(self) -> np.ndarray:
        return self.dims - 1

    def variances(self) -> np.ndarray:
        """Per-coordinate binomial variances after clamping to ``n_j / 4``."""
        n = self.trials
        return np.clip(self.sigma**2 * np.diag(self.C), 0.0, n / 4.0)

    def success_probs(self) -> np.ndarray:
        n = self.trials
        return np.array([p_from_variance(int(nj), float(v)) for nj, v in zip(n, self.variances())])

    def correlation(self) -> np.ndarray:
        """Correlation matrix of ``C``; coordinates with zero variance are uncorrelated."""
        s = np.sqrt(np.diag(self.C))
        R = np.eye(self.d)
        live = s > 0
        R[np.ix_(live, live)] = self.C[np.ix_(live, live)] / np.outer(s[live], s[live])
        np.fill_diagonal(R, 1.0)
        return np.clip(R, -1.0, 1.0)


def p_from_variance(n: int, var: float) -> float:
    """Smaller root ``p`` of ``n p (1 - p) = var``.

    Equal to ``(1 - sqrt(1 - 4 var / n)) / 2``, evaluated in the
    cancellation-free form ``2 (var / n) / (1 + sqrt(1 - 4 var / n))``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if var < 0:
        raise ValueError("variance must be non-negative")
    ratio = var / n
    if ratio > 0.25:
        raise VarianceTooLarge(f"variance {var} exceeds the binomial maximum n/4 = {n / 4}")
    return 2.0 * ratio / (1.0 + math.sqrt(1.0 - 4.0 * ratio))


def _wrap(value, dims):
    # half-up rounding; np.rint would round half to even
    return np.mod(np.floor(value + 0.5), dims).astype(np.int64)


def _shift(mu, n, p, b):
    return _wrap(mu + b - n * p, n + 1)


def sample_shifted_binomial(
    mu: float, n: int, p: float, rng: np.random.Generator, size=None
):
    """``round(mu + B - n p) mod (n + 1)`` with ``B ~ Binomial(n, p)``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if not 0 <= p <= 1:
        raise ValueError("p must lie in [0, 1]")
    b = rng.binomial(n, p, size=size)
    out = _shift(mu, n, p, b)
    return int(out) if size is None else out


def shifted_binomial_pmf(mu: float, n: int, p: float, mirror: bool = False) -> DiscretePMF:
    """Exact law of :func:`sample_shifted_binomial` on ``{0..n}``.

    ``mirror=True`` gives the equal mixture with ``round(mu - (B - n p))``,
    the coordinate marginal of mirrored candidate sampling.
    """
    b = np.arange(n + 1)
    weights = pbm.binomial(n, p).probs
    probs = np.bincount(_shift(mu, n, p, b), weights=weights, minlength=n + 1)
    if mirror:
        flipped = _wrap(mu - (b - n * p), n + 1)
        probs = 0.5 * probs + 0.5 * np.bincount(flipped, weights=weights, minlength=n + 1)
    return DiscretePMF(probs / probs.sum())


def _inverse_cdf(u: np.ndarray, n: int, p: float) -> np.ndarray:
    cdf = np.cumsum(pbm.binomial(n, p).probs)
    return np.minimum(np.searchsorted(cdf, u, side="left"), n)


def _copula_binomials(
    sd: SearchDistribution, count: int, rng: np.random.Generator, mirror: bool
) -> np.ndarray:
    R = sd.correlation()
    w, V = np.linalg.eigh(R)
    L = V * np.sqrt(np.clip(w, 0.0, None))
    z = rng.standard_normal((count, sd.d)) @ L.T
    u = ndtr(z)
    n = sd.trials
    p = sd.success_probs()
    b = np.empty((count, sd.d), dtype=float)
    for j in range(sd.d):
        b[:, j] = _inverse_cdf(u[:, j], int(n[j]), p[j]) - n[j] * p[j]
    if mirror:
        # -(B - np) with B read at 1 - u: same law as the mirrored deviation, still increasing in z
        flip = rng.random((count, sd.d)) < 0.5
        for j in range(sd.d):
            alt = -(_inverse_cdf(1.0 - u[:, j], int(n[j]), p[j]) - n[j] * p[j])
            b[:, j] = np.where(flip[:, j], alt, b[:, j])
    return b


def _fit_bernoulli_coupling(p: np.ndarray, R: np.ndarray) -> IsingParams:
    """Ising law with Bernoulli means ``p`` and correlations as close to ``R`` as feasible."""
    v = p * (1 - p)
    s = np.sqrt(v)
    shrink = 1.0
    for _ in range(40):
        cov = shrink * R * np.outer(s, s)
        np.fill_diagonal(cov, v)
        try:
            return fit_ising(p, cov)
        except InfeasibleMoments:
            shrink *= 0.5
    return fit_ising(p, np.diag(v))


def _exact_binomials(
    sd: SearchDistribution, count: int, rng: np.random.Generator, mirror: bool
) -> np.ndarray:
    if sd.d > K_MAX:
        raise DimensionTooLarge(f"exact sampler needs d <= {K_MAX}, got {sd.d}")
    n = sd.trials
    p = sd.success_probs()
    b = np.zeros((count, sd.d), dtype=float)
    live = np.flatnonzero((p > 1e-12) & (p < 1 - 1e-12))
    if live.size:
        R = sd.correlation()[np.ix_(live, live)]
        params = _fit_bernoulli_coupling(p[live], R)
        b[:, live] = exact_joint_sampler(params, n[live], rng, size=count)
    b -= n * p
    if mirror:
        # flipping a whole draw keeps the pairwise covariances
        b *= np.where(rng.random((count, 1)) < 0.5, -1.0, 1.0)
    return b


def sample_candidates(
    sd: SearchDistribution,
    count: int,
    rng: np.random.Generator,
    sampler: str = "copula",
    mirror: bool = False,
) -> np.ndarray:
    """Draw ``count`` integer vectors, one per row, from the search distribution.

    With ``mirror=True`` each binomial deviation ``B - n p`` is negated with
    probability one half. Mean and variance are unchanged, but small-variance
    draws can then step below the rounded mean as well as above it.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    if sampler == "copula":
        dev = _copula_binomials(sd, count, rng, mirror)
    elif sampler == "exact":
        dev = _exact_binomials(sd, count, rng, mirror)
    else:
        raise ValueError(f"unknown sampler {sampler!r}; expected one of {SAMPLERS}")
    return _wrap(sd.m + dev, sd.dims)


def exact_joint_sampler(
    params: CanonicalParams | IsingParams,
    trials: int | Sequence[int],
    rng: np.random.Generator,
    size=None,
) -> np.ndarray:
    """Coordinatewise sums of independent multivariate Bernoulli draws.

    Coordinate ``j`` sums the first ``trials[j]`` of ``max(trials)`` shared
    draws, so each coordinate is binomial and the coupling between
    coordinates comes from the joint table.
    """
    if isinstance(params, IsingParams):
        params = params.to_canonical()
    if params.k > K_MAX:
        raise DimensionTooLarge(f"exact sampler needs k <= {K_MAX}")
    k = params.k
    n = np.broadcast_to(np.asarray(trials, dtype=np.int64), (k,))
    if np.any(n < 0):
        raise ValueError("trial counts must be non-negative")
    table = moment_from_canonical(params)
    cdf = np.cumsum(table.probs)
    x = outcomes(k).astype(np.int64)
    draws = 1 if size is None else int(np.prod(size))
    t_max = int(n.max())
    u = rng.random((draws, t_max))
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), cdf.size - 1)
    bits = x[idx]  # (draws, t_max, k)
    used = np.arange(t_max)[:, None] < n[None, :]
    total = (bits * used[None, :, :]).sum(axis=1)
    if size is None:
        return total[0]
    return total.reshape(tuple(np.atleast_1d(size)) + (k,))
