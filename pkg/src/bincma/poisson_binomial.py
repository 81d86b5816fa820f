"""Binomial, Poisson-binomial and related discrete laws on ``{0..n}``.

Everything here is exact up to floating point: PMFs are tabulated over the
full support so that entropies, moments and distances between laws can be
computed by direct summation. The approximations (normal and Poisson) are
provided as separate functions so tests can measure how fast they converge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaln, xlog1py, xlogy

from bincma.errors import DegenerateP, MeanOutOfRange, OutOfSupport

_SUM_TOL = 1e-12


@dataclass(frozen=True)
class DiscretePMF:
    """Probabilities on the integers ``offset, offset + 1, ...``."""

    probs: np.ndarray
    offset: int = 0

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 1 or probs.size == 0:
            raise ValueError("probs must be a non-empty vector")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise ValueError("probabilities must be finite and non-negative")
        if abs(math.fsum(probs) - 1.0) > _SUM_TOL:
            raise ValueError(f"probabilities sum to {math.fsum(probs)!r}, not 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.offset, self.offset + self.probs.size)

    def mean(self) -> float:
        return math.fsum(self.support * self.probs)

    def variance(self) -> float:
        mu = self.mean()
        return math.fsum((self.support - mu) ** 2 * self.probs)

    def __getitem__(self, k: int) -> float:
        i = k - self.offset
        return float(self.probs[i]) if 0 <= i < self.probs.size else 0.0


@dataclass(frozen=True)
class PoissonBinomial:
    """Sum of independent Bernoulli trials with success probabilities ``p``."""

    p: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=float).ravel()
        if p.size < 1:
            raise ValueError("need at least one trial")
        if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
            raise ValueError("success probabilities must lie in [0, 1]")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    @property
    def n(self) -> int:
        return self.p.size

    def mean(self) -> float:
        return math.fsum(self.p)


def pmf(pb: PoissonBinomial) -> DiscretePMF:
    """Exact PMF, adding one trial at a time (``O(n^2)``)."""
    probs = np.zeros(pb.n + 1)
    probs[0] = 1.0
    for i, q in enumerate(pb.p, start=1):
        # P(S_i = k) = P(S_{i-1} = k) (1 - q) + P(S_{i-1} = k - 1) q
        probs[1 : i + 1] = probs[1 : i + 1] * (1 - q) + probs[:i] * q
        probs[0] *= 1 - q
    return DiscretePMF(probs / math.fsum(probs))


def binomial_logpmf(n: int, p: float, k) -> np.ndarray:
    k = np.asarray(k)
    return (
        gammaln(n + 1)
        - gammaln(k + 1)
        - gammaln(n - k + 1)
        + xlogy(k, p)
        + xlog1py(n - k, -p)
    )


def binomial_pmf(n: int, p: float, k: int) -> float:
    """``C(n, k) p^k (1 - p)^(n - k)`` evaluated through log-gamma."""
    if not 0 <= p <= 1:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if not 0 <= k <= n:
        raise OutOfSupport(f"k={k} outside [0, {n}]")
    return float(np.exp(binomial_logpmf(n, p, k)))


def binomial(n: int, p: float) -> DiscretePMF:
    """Full Binomial(n, p) PMF over ``{0..n}``."""
    if n < 0:
        raise ValueError("n must be non-negative")
    if not 0 <= p <= 1:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    probs = np.exp(binomial_logpmf(n, p, np.arange(n + 1)))
    return DiscretePMF(probs / math.fsum(probs))


def entropy(d: DiscretePMF) -> float:
    """Shannon entropy in nats."""
    p = d.probs[d.probs > 0]
    return -math.fsum(p * np.log(p))


def max_entropy_binomial(n: int, mu: float) -> PoissonBinomial:
    """Maximum-entropy Poisson binomial with ``n`` trials and mean ``mu``: the binomial."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if not 0 <= mu <= n:
        raise MeanOutOfRange(f"mean {mu} outside [0, {n}]")
    return PoissonBinomial(np.full(n, mu / n))


def _geometric_weights(n: int, log_rho: float) -> np.ndarray:
    a = np.arange(n + 1) * log_rho
    w = np.exp(a - a.max())
    return w / math.fsum(w)


def _geometric_mean(n: int, log_rho: float) -> float:
    return math.fsum(np.arange(n + 1) * _geometric_weights(n, log_rho))


def truncated_geometric_ratio(n: int, mu: float) -> float:
    """Ratio ``rho`` of the max-entropy law ``c rho^i`` on ``{0..n}`` with mean ``mu``.

    Root-finds on the strictly increasing map ``log rho -> mean`` rather than
    on the polynomial form of the mean constraint, which always has the
    extra root ``rho = 1``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if not 0 < mu < n:
        raise MeanOutOfRange(f"mean {mu} must lie strictly inside (0, {n})")
    if mu == n / 2:
        return 1.0
    lo, hi = -1.0, 1.0
    while _geometric_mean(n, lo) > mu:
        lo *= 2
    while _geometric_mean(n, hi) < mu:
        hi *= 2
    log_rho = brentq(
        lambda t: _geometric_mean(n, t) - mu, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500
    )
    return math.exp(log_rho)


def truncated_geometric(n: int, mu: float) -> DiscretePMF:
    """Maximum-entropy PMF on ``{0..n}`` with mean ``mu``."""
    rho = truncated_geometric_ratio(n, mu)
    return DiscretePMF(_geometric_weights(n, math.log(rho)))


def truncated_geometric_residual(n: int, mu: float, rho: float) -> float:
    """Residual of ``(1+mu) rho + (mu-(n+1)) rho^(n+1) + (n-mu) rho^(n+2) - mu``."""
    return (1 + mu) * rho + (mu - (n + 1)) * rho ** (n + 1) + (n - mu) * rho ** (n + 2) - mu


def moivre_laplace_approx(n: int, p: float, k) -> float:
    """Normal density approximation to the Binomial(n, p) PMF at ``k``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if p <= 0 or p >= 1:
        raise DegenerateP(f"p={p} gives a degenerate binomial")
    var = n * p * (1 - p)
    return np.exp(-((np.asarray(k) - n * p) ** 2) / (2 * var)) / math.sqrt(2 * math.pi * var)


def poisson_pmf(lam: float, k) -> float:
    """``exp(-lam) lam^k / k!`` evaluated in log space."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    k = np.asarray(k)
    if np.any(k < 0):
        raise OutOfSupport("k must be non-negative")
    out = np.exp(-lam + xlogy(k, lam) - gammaln(k + 1))
    return float(out) if out.ndim == 0 else out


def total_variation(a: DiscretePMF, b: DiscretePMF) -> float:
    """Total variation distance ``sum |a - b| / 2`` over the union of supports."""
    lo = min(a.offset, b.offset)
    hi = max(a.offset + a.probs.size, b.offset + b.probs.size)
    pa = np.zeros(hi - lo)
    pb = np.zeros(hi - lo)
    pa[a.offset - lo : a.offset - lo + a.probs.size] = a.probs
    pb[b.offset - lo : b.offset - lo + b.probs.size] = b.probs
    return 0.5 * math.fsum(np.abs(pa - pb))


def binomial_poisson_tv(n: int, lam: float) -> float:
    """TV distance between Binomial(n, lam/n) and Poisson(lam), Poisson tail included."""
    b = binomial(n, lam / n).probs
    q = poisson_pmf(lam, np.arange(n + 1))
    tail = max(0.0, 1.0 - math.fsum(q))
    return 0.5 * (math.fsum(np.abs(b - q)) + tail)

