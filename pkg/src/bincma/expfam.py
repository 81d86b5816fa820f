"""Multivariate Bernoulli distributions in moment and canonical form.

A ``k``-variate Bernoulli law is stored as a dense table of ``2**k``
probabilities indexed by bitmask: bit ``j`` of the index is set when
coordinate ``j`` (zero based) equals one. For ``k = 2`` the flat order is
``(p00, p10, p01, p11)`` with the first digit referring to coordinate 0.

The canonical form writes the law as ``exp(<theta, T(x)> - A(theta))``
where ``T(x)`` collects every monomial ``prod_{j in S} x_j`` over
non-empty subsets ``S``. Both directions of the conversion are subset
transforms on the bitmask lattice: the natural parameters are the Moebius
transform of the log table, and the log table is the zeta (subset-sum)
transform of the natural parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from bincma.errors import (
    CanonicalOverflow,
    DimensionTooLarge,
    EmptySubset,
    InfeasibleMoments,
    ZeroConditioningEvent,
    ZeroProbability,
)

K_MAX = 16

_SUM_TOL = 1e-12


def _check_k(k: int) -> None:
    if k < 1:
        raise ValueError(f"dimension must be positive, got {k}")
    if k > K_MAX:
        raise DimensionTooLarge(f"k={k} exceeds K_MAX={K_MAX}")


def popcount(masks: np.ndarray) -> np.ndarray:
    """Number of set bits of each entry of an integer array."""
    masks = np.asarray(masks, dtype=np.int64)
    count = np.zeros_like(masks)
    m = masks.copy()
    while np.any(m):
        count += m & 1
        m >>= 1
    return count


def subset_sum(values: np.ndarray, k: int) -> np.ndarray:
    """Zeta transform: ``out[S] = sum_{T subset of S} values[T]``."""
    out = np.array(values, dtype=float, copy=True)
    for j in range(k):
        view = out.reshape(-1, 2, 1 << j)
        view[:, 1, :] += view[:, 0, :]
    return out


def moebius(values: np.ndarray, k: int) -> np.ndarray:
    """Inverse of :func:`subset_sum`: signed sum over subsets."""
    out = np.array(values, dtype=float, copy=True)
    for j in range(k):
        view = out.reshape(-1, 2, 1 << j)
        view[:, 1, :] -= view[:, 0, :]
    return out


def outcomes(k: int) -> np.ndarray:
    """``(2**k, k)`` 0/1 matrix; row ``b`` is the outcome encoded by mask ``b``."""
    masks = np.arange(1 << k)
    return ((masks[:, None] >> np.arange(k)[None, :]) & 1).astype(float)


@dataclass(frozen=True)
class JointTable:
    """Full probability table of a ``k``-variate Bernoulli."""

    k: int
    probs: np.ndarray

    def __post_init__(self):
        _check_k(self.k)
        probs = np.array(self.probs, dtype=float)
        if probs.shape != (1 << self.k,):
            raise ValueError(
                f"expected {1 << self.k} probabilities for k={self.k}, got shape {probs.shape}"
            )
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise ValueError("probabilities must be finite and non-negative")
        if abs(probs.sum() - 1.0) > _SUM_TOL:
            raise ValueError(f"probabilities sum to {probs.sum()!r}, not 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def product(cls, marginals: Sequence[float]) -> "JointTable":
        """Table of independent coordinates with the given success probabilities."""
        q = np.asarray(marginals, dtype=float)
        x = outcomes(len(q))
        probs = np.prod(np.where(x == 1, q, 1 - q), axis=1)
        return cls(len(q), probs / probs.sum())

    @classmethod
    def uniform(cls, k: int) -> "JointTable":
        return cls(k, np.full(1 << k, 1.0 / (1 << k)))

    def means(self) -> np.ndarray:
        return outcomes(self.k).T @ self.probs

    def to_dict(self) -> dict:
        return {"k": self.k, "probs": [float(p) for p in self.probs]}

    @classmethod
    def from_dict(cls, data: dict) -> "JointTable":
        return cls(int(data["k"]), np.asarray(data["probs"], dtype=float))


@dataclass(frozen=True)
class CanonicalParams:
    """Natural parameters indexed by non-empty subset bitmask.

    ``theta[0]`` is unused and always zero; ``theta[S]`` for ``S >= 1`` is
    the coefficient of the monomial over the coordinates in ``S``.
    """

    k: int
    theta: np.ndarray
    logA: float

    def __post_init__(self):
        _check_k(self.k)
        theta = np.array(self.theta, dtype=float)
        if theta.shape != (1 << self.k,):
            raise ValueError(f"expected {1 << self.k} entries for k={self.k}")
        theta[0] = 0.0
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def from_theta(cls, k: int, theta: np.ndarray | dict) -> "CanonicalParams":
        """Build from raw natural parameters, computing the log-partition."""
        _check_k(k)
        dense = np.zeros(1 << k)
        if isinstance(theta, dict):
            for mask, value in theta.items():
                mask = int(mask)
                if not 1 <= mask < (1 << k):
                    raise EmptySubset(f"mask {mask} is not a non-empty subset of k={k}")
                dense[mask] = value
        else:
            dense[:] = theta
        dense[0] = 0.0
        if not np.all(np.isfinite(dense)):
            raise ValueError("natural parameters must be finite")
        log_weights = subset_sum(dense, k)
        return cls(k, dense, float(logsumexp(log_weights)))

    def __getitem__(self, subset: Iterable[int]) -> float:
        """``theta`` for a subset of zero-based coordinates."""
        mask = subset_mask(subset)
        if mask == 0:
            raise EmptySubset("theta is indexed by non-empty subsets only")
        return float(self.theta[mask])

    def to_dict(self) -> dict:
        masks = range(1, 1 << self.k)
        return {
            "k": self.k,
            "masks": list(masks),
            "theta": [float(self.theta[m]) for m in masks],
            "logA": self.logA,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CanonicalParams":
        k = int(data["k"])
        theta = dict(zip(data["masks"], data["theta"]))
        return cls.from_theta(k, theta)


@dataclass(frozen=True)
class IsingParams:
    """Canonical parameters restricted to singleton and pairwise terms."""

    k: int
    h: np.ndarray
    J: np.ndarray

    def __post_init__(self):
        _check_k(self.k)
        h = np.array(self.h, dtype=float)
        J = np.array(self.J, dtype=float)
        if h.shape != (self.k,) or J.shape != (self.k, self.k):
            raise ValueError("h must have length k and J must be k x k")
        if not np.allclose(J, J.T, rtol=0, atol=1e-12):
            raise ValueError("J must be symmetric")
        if np.any(np.diag(J) != 0):
            raise ValueError("J must have a zero diagonal")
        h.setflags(write=False)
        J.setflags(write=False)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "J", J)

    def to_canonical(self) -> CanonicalParams:
        theta = np.zeros(1 << self.k)
        for i in range(self.k):
            theta[1 << i] = self.h[i]
            for j in range(i + 1, self.k):
                theta[(1 << i) | (1 << j)] = self.J[i, j]
        return CanonicalParams.from_theta(self.k, theta)

    @classmethod
    def from_canonical(cls, c: CanonicalParams, tol: float = 0.0) -> "IsingParams":
        """Inverse of :meth:`to_canonical`; rejects non-zero higher-order terms."""
        order = popcount(np.arange(1 << c.k))
        if np.any(np.abs(c.theta[order >= 3]) > tol):
            raise ValueError("canonical parameters have terms of order three or more")
        h = np.array([c.theta[1 << i] for i in range(c.k)])
        J = np.zeros((c.k, c.k))
        for i in range(c.k):
            for j in range(i + 1, c.k):
                J[i, j] = J[j, i] = c.theta[(1 << i) | (1 << j)]
        return cls(c.k, h, J)


def subset_mask(subset: Iterable[int]) -> int:
    mask = 0
    for j in subset:
        mask |= 1 << int(j)
    return mask


def canonical_from_moment(t: JointTable) -> CanonicalParams:
    """Natural parameters of a strictly positive probability table.

    Each ``theta_S`` is the log of the ratio between the product of
    probabilities obtained by zeroing an even number of the coordinates in
    ``S`` (all others zero) and the product obtained by zeroing an odd
    number of them.
    """
    if np.any(t.probs <= 0):
        raise ZeroProbability(
            "canonical form needs strictly positive probabilities; "
            "the table lies on the boundary of the simplex"
        )
    log_p = np.log(t.probs)
    theta = moebius(log_p, t.k)
    return CanonicalParams(t.k, theta, float(-log_p[0]))


def _log_weights(c: CanonicalParams) -> np.ndarray:
    if not np.all(np.isfinite(c.theta)):
        raise ValueError("natural parameters must be finite")
    s = subset_sum(c.theta, c.k)
    if not np.all(np.isfinite(s)):
        raise CanonicalOverflow("subset sums of theta overflow")
    return s


def moment_from_canonical(c: CanonicalParams) -> JointTable:
    s = _log_weights(c)
    shifted = s - s.max()
    w = np.exp(shifted)
    if not np.all(np.isfinite(w)) or w.sum() == 0:
        raise CanonicalOverflow("exponentials of subset sums are not representable")
    return JointTable(c.k, w / w.sum())


def marginal(t: JointTable, keep: int | Iterable[int]) -> JointTable:
    """Marginal over the coordinates in ``keep`` (bitmask or iterable of indices).

    Kept coordinates are renumbered in increasing order.
    """
    mask = keep if isinstance(keep, (int, np.integer)) else subset_mask(keep)
    mask = int(mask)
    if mask == 0:
        raise EmptySubset("cannot marginalize onto the empty set")
    if mask >= (1 << t.k) or mask < 0:
        raise ValueError(f"mask {mask} refers to coordinates beyond k={t.k}")
    kept = [j for j in range(t.k) if mask >> j & 1]
    x = outcomes(t.k).astype(np.int64)
    sub_index = x[:, kept] @ (1 << np.arange(len(kept)))
    probs = np.bincount(sub_index, weights=t.probs, minlength=1 << len(kept))
    return JointTable(len(kept), probs / probs.sum())


def conditional(
    t: JointTable, target: int, given: Sequence[tuple[int, int]]
) -> JointTable:
    """Law of coordinate ``target`` given fixed values of other coordinates."""
    fixed = dict(given)
    if target in fixed:
        raise ValueError("target coordinate cannot also be conditioned on")
    if not 0 <= target < t.k or any(not 0 <= j < t.k for j in fixed):
        raise ValueError("coordinate index out of range")
    x = outcomes(t.k)
    event = np.ones(1 << t.k, dtype=bool)
    for j, v in fixed.items():
        event &= x[:, j] == v
    total = t.probs[event].sum()
    if total <= 0:
        raise ZeroConditioningEvent(f"conditioning event {fixed} has probability 0")
    one = t.probs[event & (x[:, target] == 1)].sum() / total
    return JointTable(1, np.array([1.0 - one, one]))


def is_independent(c: CanonicalParams, tol: float = 0.0) -> bool:
    """True iff every interaction term (subsets of size two or more) is within ``tol`` of zero."""
    order = popcount(np.arange(1 << c.k))
    return bool(np.all(np.abs(c.theta[order >= 2]) <= tol))


def covariance_matrix(t: JointTable) -> np.ndarray:
    x = outcomes(t.k)
    mean = x.T @ t.probs
    second = x.T @ (x * t.probs[:, None])
    cov = second - np.outer(mean, mean)
    return (cov + cov.T) / 2


def entropy(t: JointTable) -> float:
    """Shannon entropy in nats, with ``0 log 0 = 0``."""
    p = t.probs[t.probs > 0]
    return float(-np.sum(p * np.log(p)))


def _ising_features(k: int) -> tuple[np.ndarray, list[tuple[int, int]]]:
    x = outcomes(k)
    pairs = [(i, j) for i in range(k) for j in range(i + 1, k)]
    cols = [x] + ([np.stack([x[:, i] * x[:, j] for i, j in pairs], axis=1)] if pairs else [])
    return np.concatenate(cols, axis=1), pairs


def fit_ising(
    means: Sequence[float],
    cov: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 500,
) -> IsingParams:
    """Ising parameters whose expanded table has the requested first two moments.

    Minimizes the convex dual ``A(eta) - <eta, target>`` by Newton's method;
    the Hessian is the exact covariance of the sufficient statistics under
    the current table. A step that fails to decrease the objective is halved.
    """
    m = np.asarray(means, dtype=float)
    cov = np.asarray(cov, dtype=float)
    k = len(m)
    _check_k(k)
    if cov.shape != (k, k):
        raise ValueError("cov must be k x k")
    if not np.allclose(cov, cov.T, atol=1e-12):
        raise ValueError("cov must be symmetric")
    if np.any(m <= 0) or np.any(m >= 1):
        raise InfeasibleMoments("means must lie strictly inside (0, 1)")
    if np.any(np.abs(np.diag(cov) - m * (1 - m)) > 1e-6):
        raise ValueError("diagonal of cov must equal m_i (1 - m_i)")

    F, pairs = _ising_features(k)
    second = np.array([cov[i, j] + m[i] * m[j] for i, j in pairs])
    for (i, j), s in zip(pairs, second):
        lo, hi = max(0.0, m[i] + m[j] - 1.0), min(m[i], m[j])
        if not lo < s < hi:
            raise InfeasibleMoments(
                f"E[X{i} X{j}] = {s:.6g} outside the open interval ({lo:.6g}, {hi:.6g})"
            )
    target = np.concatenate([m, second])

    def objective(eta):
        return logsumexp(F @ eta) - eta @ target

    # independent start: singleton logits
    eta = np.concatenate([np.log(m / (1 - m)), np.zeros(len(pairs))])
    value = objective(eta)
    for _ in range(max_iter):
        s = F @ eta
        p = np.exp(s - logsumexp(s))
        mu = F.T @ p
        grad = mu - target
        if np.max(np.abs(grad)) <= tol:
            break
        hess = F.T @ (F * p[:, None]) - np.outer(mu, mu)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        scale = 1.0
        for _ in range(60):
            candidate = eta - scale * step
            cand_value = objective(candidate)
            slack = 1e-13 * max(1.0, abs(value))
            if cand_value <= value - 1e-4 * scale * (grad @ step) + slack:
                break
            scale *= 0.5
        else:
            raise InfeasibleMoments("Newton iteration stalled; moments not attainable")
        eta, value = candidate, cand_value
    else:
        raise InfeasibleMoments(
            f"no Ising distribution matched the moments within {max_iter} iterations"
        )

    h = eta[:k]
    J = np.zeros((k, k))
    for (i, j), v in zip(pairs, eta[k:]):
        J[i, j] = J[j, i] = v
    return IsingParams(k, h, J)
