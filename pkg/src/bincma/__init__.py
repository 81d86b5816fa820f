"""Discrete CMA-ES over integer lattices using shifted, correlated binomials."""

from bincma.expfam import (
    CanonicalParams,
    IsingParams,
    JointTable,
    canonical_from_moment,
    moment_from_canonical,
)
from bincma.optimizer import (
    OptimizerConfig,
    OptimizerState,
    OptimizeResult,
    StrategyConstants,
    optimize,
)
from bincma.poisson_binomial import DiscretePMF, PoissonBinomial
from bincma.sampling import SearchDistribution, rng_stream

__version__ = "0.1.0"

__all__ = [
    "CanonicalParams",
    "DiscretePMF",
    "IsingParams",
    "JointTable",
    "OptimizeResult",
    "OptimizerConfig",
    "OptimizerState",
    "PoissonBinomial",
    "SearchDistribution",
    "StrategyConstants",
    "canonical_from_moment",
    "moment_from_canonical",
    "optimize",
    "rng_stream",
]
