"""Ask/tell CMA-ES over bounded integer lattices.

The engine is the usual CMA-ES loop with the Gaussian sampler replaced by
shifted binomials (see :mod:`bincma.sampling`). State is immutable:
:func:`ask` never mutates and :func:`tell` returns a new
:class:`OptimizerState`, so a run is fully determined by its configuration
and seed.

Example:

    .. code::

        import numpy as np
        from bincma.optimizer import OptimizerConfig, optimize

        config = OptimizerConfig(d=5, dims=16, seed=1)
        result = optimize(lambda x: float(np.sum((x - 7) ** 2)), config)
        print(result.best_x, result.best_f)
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional, Sequence

import numpy as np

from bincma.errors import ConfigInvalid, LengthMismatch, NonFiniteFitness
from bincma.sampling import SAMPLERS, SearchDistribution, rng_stream, sample_candidates

_EIG_FLOOR = 1e-12
_SIGMA_MAX = 1e32
_SIGMA_RENORM = 1e-8

HISTORY_COLUMNS = ("generation", "evaluations", "best_f", "mean_f", "sigma", "mean_step")


@dataclass(frozen=True)
class StrategyConstants:
    lam: int
    mu: int
    weights: np.ndarray
    mu_eff: float
    c_sigma: float
    d_sigma: float
    c_c: float
    c_1: float
    c_mu: float
    chi_n: float
    eps: float = 0.0
    max_iterations: int = 1000
    use_hsig: bool = True
    p_min: float = 0.0

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if not 1 <= self.mu <= self.lam:
            raise ValueError(f"need 1 <= mu <= lambda, got mu={self.mu}, lambda={self.lam}")
        if w.shape != (self.mu,) or np.any(w <= 0) or np.any(np.diff(w) > 0):
            raise ValueError("weights must be mu positive non-increasing values")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        for name in ("c_sigma", "c_c", "c_1"):
            if not 0 < getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")
        if not 0 <= self.c_mu <= 1:
            raise ValueError("c_mu must lie in [0, 1]")
        if self.c_1 + self.c_mu > 1 + 1e-12:
            raise ValueError("c_1 + c_mu must not exceed 1")
        if self.d_sigma <= 0:
            raise ValueError("d_sigma must be positive")
        if not 0 <= self.p_min < 0.5:
            raise ValueError("p_min must lie in [0, 0.5)")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def default(
        cls,
        d: int,
        lam: Optional[int] = None,
        mu: Optional[int] = None,
        **overrides: Any,
    ) -> "StrategyConstants":
        """Standard CMA-ES settings for dimension ``d``; any field may be overridden."""
        if d < 1:
            raise ValueError("d must be positive")
        lam = lam if lam is not None else 4 + int(math.floor(3 * math.log(d)))
        mu = mu if mu is not None else lam // 2
        raw = np.array([math.log(mu + 0.5) - math.log(i + 1) for i in range(mu)])
        if mu == 1:
            raw = np.ones(1)
        weights = raw / raw.sum()
        mu_eff = 1.0 / float(np.sum(weights**2))

        c_sigma = (mu_eff + 2) / (d + mu_eff + 5)
        d_sigma = 1 + 2 * max(0.0, math.sqrt((mu_eff - 1) / (d + 1)) - 1) + c_sigma
        c_c = (4 + mu_eff / d) / (d + 4 + 2 * mu_eff / d)
        c_1 = 2 / ((d + 1.3) ** 2 + mu_eff)
        c_mu = min(1 - c_1, 2 * (mu_eff - 2 + 1 / mu_eff) / ((d + 2) ** 2 + mu_eff))
        chi_n = math.sqrt(d) * (1 - 1 / (4 * d) + 1 / (21 * d * d))
        values = dict(
            lam=lam,
            mu=mu,
            weights=weights,
            mu_eff=mu_eff,
            c_sigma=c_sigma,
            d_sigma=d_sigma,
            c_c=c_c,
            c_1=c_1,
            c_mu=c_mu,
            chi_n=chi_n,
            p_min=1.0 / (d * lam),
        )
        unknown = set(overrides) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown strategy constants: {sorted(unknown)}")
        values.update(overrides)
        return cls(**values)


@dataclass(frozen=True)
class Candidate:
    x: np.ndarray
    fitness: float
    index: int


@dataclass(frozen=True)
class OptimizerState:
    sd: SearchDistribution
    p_sigma: np.ndarray
    p_c: np.ndarray
    generation: int
    constants: StrategyConstants
    sampler: str = "copula"
    mirror: bool = True
    best_x: Optional[np.ndarray] = None
    best_f: float = math.inf
    evaluations: int = 0

    @classmethod
    def initial(
        cls,
        dims: Sequence[int] | int,
        d: Optional[int] = None,
        mean: Optional[Sequence[float]] = None,
        sigma: Optional[float] = None,
        constants: Optional[StrategyConstants] = None,
        sampler: str = "copula",
        mirror: bool = True,
    ) -> "OptimizerState":
        """Fresh state: ``C = I``, zero evolution paths.

        By default the mean sits at the box centre and ``sigma`` is chosen so
        every coordinate starts at maximal binomial variance.
        """
        if d is None:
            d = len(dims)  # type: ignore[arg-type]
        dims_arr = np.broadcast_to(np.asarray(dims, dtype=np.int64), (d,)).copy()
        n = dims_arr - 1
        m = (n / 2.0) if mean is None else np.asarray(mean, dtype=float)
        if sigma is None:
            sigma = 0.5 * math.sqrt(float(n.max()))
        if constants is None:
            constants = StrategyConstants.default(d)
        if sampler not in SAMPLERS:
            raise ValueError(f"unknown sampler {sampler!r}")
        sd = SearchDistribution(m, sigma, np.eye(d), dims_arr)
        return cls(sd, np.zeros(d), np.zeros(d), 0, constants, sampler, mirror)


def ask(state: OptimizerState, rng: np.random.Generator) -> np.ndarray:
    """Sample ``lambda`` candidates (rows) without touching ``state``."""
    return sample_candidates(
        state.sd, state.constants.lam, rng, sampler=state.sampler, mirror=state.mirror
    )


def rank(candidates: Sequence[Candidate]) -> list[Candidate]:
    """Sort by fitness, ascending; equal fitness keeps sampling order."""
    for c in candidates:
        if not math.isfinite(c.fitness):
            raise NonFiniteFitness(f"candidate {c.index} has fitness {c.fitness}")
    return sorted(candidates, key=lambda c: (c.fitness, c.index))


def _inv_sqrt(C: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(C)
    return (V / np.sqrt(np.maximum(w, _EIG_FLOOR))) @ V.T


def _repair(C: np.ndarray) -> np.ndarray:
    C = (C + C.T) / 2
    w, V = np.linalg.eigh(C)
    C = (V * np.maximum(w, _EIG_FLOOR)) @ V.T
    return (C + C.T) / 2


def variance_floor(dims: np.ndarray, p_min: float) -> np.ndarray:
    """Smallest binomial variance per coordinate at which ``P(B != 0) >= p_min``."""
    n = np.asarray(dims, dtype=float) - 1
    q = -np.expm1(np.log1p(-p_min) / n)
    return n * q * (1 - q)


def _apply_floor(sigma: float, C: np.ndarray, dims: np.ndarray, p_min: float) -> np.ndarray:
    # rescale rows/columns of C so sigma^2 C_jj reaches the floor; keeps correlations
    if p_min <= 0:
        return C
    floor = variance_floor(dims, p_min)
    var = sigma**2 * np.diag(C)
    scale = np.where(var < floor, np.sqrt(floor / np.maximum(var, 1e-300)), 1.0)
    if np.all(scale == 1.0):
        return C
    C = C * np.outer(scale, scale)
    return (C + C.T) / 2


def tell(state: OptimizerState, ranked: Sequence[Candidate]) -> OptimizerState:
    """One CMA-ES update from candidates sorted best first."""
    k = state.constants
    if len(ranked) != k.lam:
        raise LengthMismatch(f"expected {k.lam} ranked candidates, got {len(ranked)}")
    sd = state.sd
    d = sd.d
    sigma = sd.sigma
    m_old = sd.m
    x = np.array([c.x for c in ranked[: k.mu]], dtype=float)

    m = k.weights @ x
    y = (x - m_old) / sigma
    step = (m - m_old) / sigma

    p_sigma = (1 - k.c_sigma) * state.p_sigma + math.sqrt(
        k.c_sigma * (2 - k.c_sigma) * k.mu_eff
    ) * (_inv_sqrt(sd.C) @ step)
    ps_norm = float(np.linalg.norm(p_sigma))

    hsig = 1.0
    if k.use_hsig:
        decay = math.sqrt(1 - (1 - k.c_sigma) ** (2 * (state.generation + 1)))
        hsig = float(ps_norm / decay < (1.4 + 2 / (d + 1)) * k.chi_n)

    p_c = (1 - k.c_c) * state.p_c + hsig * math.sqrt(k.c_c * (2 - k.c_c) * k.mu_eff) * step

    rank_mu = (y * k.weights[:, None]).T @ y
    stall = (1 - hsig) * k.c_1 * k.c_c * (2 - k.c_c)
    C = (1 - k.c_1 - k.c_mu + stall) * sd.C + k.c_1 * np.outer(p_c, p_c) + k.c_mu * rank_mu
    C = _repair(C)

    sigma = sigma * math.exp((k.c_sigma / k.d_sigma) * (ps_norm / k.chi_n - 1))
    sigma = min(sigma, _SIGMA_MAX)
    if sigma < _SIGMA_RENORM:
        # (sigma, C, p_c) -> (sigma s, C / s^2, p_c / s) leaves sampling and updates unchanged
        s = 1.0 / sigma
        sigma, C, p_c = 1.0, C / s**2, p_c / s
    C = _apply_floor(sigma, C, sd.dims, k.p_min)

    best_x, best_f = state.best_x, state.best_f
    top = min(ranked, key=lambda c: (c.fitness, c.index))
    if top.fitness < best_f:
        best_x, best_f = np.array(top.x, dtype=np.int64), float(top.fitness)

    return dataclasses.replace(
        state,
        sd=SearchDistribution(m, sigma, C, sd.dims),
        p_sigma=p_sigma,
        p_c=p_c,
        generation=state.generation + 1,
        best_x=best_x,
        best_f=best_f,
        evaluations=state.evaluations + len(ranked),
    )


def terminated(state: OptimizerState, m_prev: np.ndarray) -> bool:
    """Iteration budget spent, or the mean moved less than ``eps`` in the last update.

    The movement test only applies once at least one update has happened.
    """
    k = state.constants
    if state.generation >= k.max_iterations:
        return True
    if state.generation == 0:
        return False
    return float(np.linalg.norm(state.sd.m - np.asarray(m_prev))) < k.eps


@dataclass(frozen=True)
class OptimizerConfig:
    """Everything needed to reproduce a run.

    ``constants`` holds overrides for :class:`StrategyConstants` fields
    (``c_sigma``, ``d_sigma``, ``c_c``, ``c_1``, ``c_mu``). ``target`` stops
    the run as soon as a fitness at or below it has been evaluated.
    """

    d: int
    dims: int | tuple[int, ...] = 2
    lam: Optional[int] = None
    mu: Optional[int] = None
    seed: int = 0
    max_iterations: int = 1000
    eps: float = 0.0
    sampler: str = "copula"
    mirror: bool = True
    sigma0: Optional[float] = None
    mean0: Optional[tuple[float, ...]] = None
    target: Optional[float] = None
    use_hsig: bool = True
    p_min: Optional[float] = None
    constants: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.d, (int, np.integer)) or self.d < 1:
            raise ConfigInvalid("d", f"must be a positive integer, got {self.d!r}")
        dims = self.dims
        if isinstance(dims, (list, tuple, np.ndarray)):
            dims = tuple(int(v) for v in dims)
            if len(dims) != self.d:
                raise ConfigInvalid("dims", f"has {len(dims)} entries, expected d={self.d}")
            if min(dims) < 2:
                raise ConfigInvalid("dims", "every entry must be at least 2")
        else:
            dims = int(dims)
            if dims < 2:
                raise ConfigInvalid("dims", "must be at least 2")
        object.__setattr__(self, "dims", dims)
        if self.lam is not None and self.lam < 2:
            raise ConfigInvalid("lam", "population size must be at least 2")
        if self.mu is not None and (self.mu < 1 or (self.lam is not None and self.mu > self.lam)):
            raise ConfigInvalid("mu", "must satisfy 1 <= mu <= lambda")
        if self.max_iterations < 0:
            raise ConfigInvalid("max_iterations", "must be non-negative")
        if self.eps < 0:
            raise ConfigInvalid("eps", "must be non-negative")
        if self.sampler not in SAMPLERS:
            raise ConfigInvalid("sampler", f"must be one of {SAMPLERS}")
        if self.p_min is not None and not 0 <= self.p_min < 0.5:
            raise ConfigInvalid("p_min", "must lie in [0, 0.5)")
        if self.sigma0 is not None and not self.sigma0 > 0:
            raise ConfigInvalid("sigma0", "must be positive")
        if self.mean0 is not None:
            mean0 = tuple(float(v) for v in self.mean0)
            if len(mean0) != self.d:
                raise ConfigInvalid("mean0", f"has {len(mean0)} entries, expected d={self.d}")
            object.__setattr__(self, "mean0", mean0)
        allowed = {"c_sigma", "d_sigma", "c_c", "c_1", "c_mu"}
        unknown = set(self.constants) - allowed
        if unknown:
            raise ConfigInvalid("constants", f"unknown keys {sorted(unknown)}")
        object.__setattr__(self, "constants", dict(self.constants))
        if not 0 <= self.seed < 2**64:
            raise ConfigInvalid("seed", "must be a 64-bit unsigned integer")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "OptimizerConfig":
        data = dict(data)
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigInvalid(sorted(unknown)[0], "unknown configuration key")
        if "d" not in data:
            raise ConfigInvalid("d", "is required")
        try:
            return cls(**data)
        except ConfigInvalid:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid("config", str(exc)) from exc

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["constants"] = dict(self.constants)
        return out

    def strategy_constants(self) -> StrategyConstants:
        extra = dict(self.constants)
        if self.p_min is not None:
            extra["p_min"] = self.p_min
        try:
            return StrategyConstants.default(
                self.d,
                lam=self.lam,
                mu=self.mu,
                eps=self.eps,
                max_iterations=self.max_iterations,
                use_hsig=self.use_hsig,
                **extra,
            )
        except ValueError as exc:
            raise ConfigInvalid("constants", str(exc)) from exc

    def initial_state(self) -> OptimizerState:
        return OptimizerState.initial(
            self.dims,
            d=self.d,
            mean=self.mean0,
            sigma=self.sigma0,
            constants=self.strategy_constants(),
            sampler=self.sampler,
            mirror=self.mirror,
        )


@dataclass(frozen=True)
class OptimizeResult:
    best_x: np.ndarray
    best_f: float
    evaluations: int
    history: list[dict]
    state: OptimizerState


def optimize(
    objective: Callable[[np.ndarray], float],
    config: OptimizerConfig,
    rng: Optional[np.random.Generator] = None,
) -> OptimizeResult:
    """Run ask / evaluate / rank / tell until :func:`terminated` (or ``target``).

    Returns the best point actually evaluated, never the (real-valued) mean.
    """
    if rng is None:
        rng = rng_stream(config.seed, "sampling")
    state = config.initial_state()
    history = []
    while True:
        xs = ask(state, rng)
        fitness = [float(objective(x)) for x in xs]
        ranked = rank([Candidate(x, f, i) for i, (x, f) in enumerate(zip(xs, fitness))])
        m_prev = state.sd.m
        state = tell(state, ranked)
        history.append(
            {
                "generation": state.generation,
                "evaluations": state.evaluations,
                "best_f": state.best_f,
                "mean_f": math.fsum(fitness) / len(fitness),
                "sigma": state.sd.sigma,
                "mean_step": float(np.linalg.norm(state.sd.m - m_prev)),
            }
        )
        if config.target is not None and state.best_f <= config.target:
            break
        if terminated(state, m_prev):
            break
    return OptimizeResult(state.best_x, state.best_f, state.evaluations, history, state)
