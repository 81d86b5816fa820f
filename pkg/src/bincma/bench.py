"""Benchmark problems, seeded experiment runs and their CSV records.

Per-run CSV columns (one row per generation):

=============== ==========================================================
problem         problem name
seed            seed of the run (drives the ``sampling`` stream)
config_digest   16 hex digits identifying (problem, config, seed)
target          fitness counted as solved; empty when unknown
budget          ``max_iterations * lambda``; evaluations charged to a
                run that never reaches the target
generation      generation number, starting at 1
evaluations     objective evaluations so far
best_f          best fitness evaluated so far
mean_f          mean fitness of this generation
sigma           step size after the update
mean_step       Euclidean length of the mean update
best_x          best point so far, space-separated integers
=============== ==========================================================

Summary CSV columns: ``problem, config_digest, runs, solved, censored,
median_evaluations, iqr_low, iqr_high, budget, target``. The quartiles are
taken over evaluations-to-target, with unsolved runs counted at the budget.
Floats are written with ``repr`` so every value reads back exactly.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from bincma.errors import ConfigInvalid
from bincma.expfam import outcomes
from bincma.optimizer import OptimizerConfig, optimize
from bincma.sampling import rng_stream

RUN_COLUMNS = (
    "problem",
    "seed",
    "config_digest",
    "target",
    "budget",
    "generation",
    "evaluations",
    "best_f",
    "mean_f",
    "sigma",
    "mean_step",
    "best_x",
)
SUMMARY_COLUMNS = (
    "problem",
    "config_digest",
    "runs",
    "solved",
    "censored",
    "median_evaluations",
    "iqr_low",
    "iqr_high",
    "budget",
    "target",
)
SUITES = ("quick", "full")


@dataclass(frozen=True)
class Problem:
    """A minimisation problem on the box ``prod_j {0 .. dims[j] - 1}``.

    ``params`` records the constructor arguments; it feeds the config
    digest so that differently parameterised problems never collide.
    """

    name: str
    d: int
    dims: tuple[int, ...]
    objective: Callable[[np.ndarray], float]
    known_optimum: Optional[tuple[tuple[int, ...], float]] = None
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        dims = np.broadcast_to(np.asarray(self.dims, dtype=np.int64), (self.d,))
        if np.any(dims < 2):
            raise ConfigInvalid("dims", "every entry must be at least 2")
        object.__setattr__(self, "dims", tuple(int(v) for v in dims))
        if self.known_optimum is not None:
            x, value = self.known_optimum
            x = tuple(int(v) for v in x)
            if len(x) != self.d or any(not 0 <= v < n for v, n in zip(x, self.dims)):
                raise ConfigInvalid("known_optimum", f"{x} lies outside the box")
            got = self(np.array(x))
            if not math.isclose(got, value, rel_tol=1e-12, abs_tol=1e-12):
                raise ConfigInvalid("known_optimum", f"objective is {got} at {x}, not {value}")
            object.__setattr__(self, "known_optimum", (x, float(value)))

    def __call__(self, x: np.ndarray) -> float:
        return float(self.objective(np.asarray(x)))

    @property
    def target(self) -> Optional[float]:
        return None if self.known_optimum is None else self.known_optimum[1]


def onemax(d: int) -> Problem:
    """Number of zeros in a bit string."""
    return Problem(
        f"onemax-d{d}",
        d,
        (2,) * d,
        lambda x: float(d - np.sum(x)),
        ((1,) * d, 0.0),
        {"kind": "onemax", "d": d},
    )


def leading_ones(d: int) -> Problem:
    """``d`` minus the length of the leading run of ones."""

    def f(x):
        zeros = np.flatnonzero(x != 1)
        return float(d - (zeros[0] if zeros.size else d))

    return Problem(f"leading_ones-d{d}", d, (2,) * d, f, ((1,) * d, 0.0), {"kind": "leading_ones", "d": d})


def integer_sphere(d: int, dims: int | Sequence[int], center: Optional[Sequence[int]] = None) -> Problem:
    """Squared Euclidean distance to an integer ``center`` (default: the box middle)."""
    n = np.broadcast_to(np.asarray(dims, dtype=np.int64), (d,))
    c = n // 2 if center is None else np.asarray(center, dtype=np.int64)
    if c.shape != (d,):
        raise ConfigInvalid("center", f"needs {d} entries")
    return Problem(
        f"integer_sphere-d{d}",
        d,
        tuple(n.tolist()),
        lambda x: float(np.sum((x - c) ** 2)),
        (tuple(c.tolist()), 0.0),
        {"kind": "integer_sphere", "d": d, "dims": n.tolist(), "center": c.tolist()},
    )


def rastrigin(d: int, dims: int | Sequence[int]) -> Problem:
    """Rastrigin on ``[-5.12, 5.12]^d`` sampled at ``dims[j]`` evenly spaced points.

    The continuous optimum ``u = 0`` is a grid point only when every
    ``dims[j]`` is odd; otherwise no optimum is declared.
    """
    n = np.broadcast_to(np.asarray(dims, dtype=np.int64), (d,))
    step = 10.24 / (n - 1)

    def f(x):
        u = -5.12 + step * x
        return float(10.0 * d + np.sum(u**2 - 10.0 * np.cos(2 * np.pi * u)))

    optimum = None
    if np.all(n % 2 == 1):
        optimum = (tuple(((n - 1) // 2).tolist()), 0.0)
    return Problem(
        f"rastrigin-d{d}", d, tuple(n.tolist()), f, optimum, {"kind": "rastrigin", "d": d, "dims": n.tolist()}
    )


def random_ising(d: int, seed: int = 0) -> Problem:
    """Energy ``-s'Js/2 - h's`` of spins ``s = 2x - 1`` with Gaussian ``h`` and ``J``.

    Couplings come from the ``problem`` stream of ``seed``. For ``d <= 16``
    the ground state is found by enumeration.
    """
    rng = rng_stream(seed, "problem")
    h = rng.standard_normal(d)
    J = np.triu(rng.standard_normal((d, d)), 1)
    J = J + J.T

    def f(x):
        s = 2.0 * x - 1.0
        return float(-0.5 * s @ J @ s - h @ s)

    optimum = None
    if d <= 16:
        S = 2.0 * outcomes(d) - 1.0
        energy = -0.5 * np.einsum("ij,jk,ik->i", S, J, S) - S @ h
        x = outcomes(d)[int(np.argmin(energy))]
        optimum = (tuple(int(v) for v in x), f(x))
    return Problem(f"random_ising-d{d}-s{seed}", d, (2,) * d, f, optimum, {"kind": "random_ising", "d": d, "seed": seed})


PROBLEMS: dict[str, Callable[..., Problem]] = {
    "onemax": onemax,
    "leading_ones": leading_ones,
    "integer_sphere": integer_sphere,
    "rastrigin": rastrigin,
    "random_ising": random_ising,
}


def builtin_problems(d: int = 10, seed: int = 0) -> list[Problem]:
    """One instance of every problem family at dimension ``d``."""
    return [onemax(d), leading_ones(d), integer_sphere(d, 16), rastrigin(d, 21), random_ising(d, seed)]


def make_problem(entry: Mapping[str, Any]) -> Problem:
    """Build a problem from a mapping such as ``{"name": "onemax", "d": 20}``."""
    entry = dict(entry)
    name = entry.pop("name", None)
    if name not in PROBLEMS:
        raise ConfigInvalid("problem.name", f"must be one of {sorted(PROBLEMS)}, got {name!r}")
    try:
        return PROBLEMS[name](**entry)
    except TypeError as exc:
        raise ConfigInvalid("problem", str(exc)) from exc


@dataclass(frozen=True)
class HistoryRow:
    generation: int
    evaluations: int
    best_f: float
    mean_f: float
    sigma: float
    mean_step: float
    best_x: tuple[int, ...]


@dataclass(frozen=True)
class RunRecord:
    """Everything a single seeded run leaves behind.

    ``wall_time`` is informational and deliberately excluded from the CSV
    and from equality, so records stay reproducible byte for byte.
    """

    problem: str
    seed: int
    config_digest: str
    target: Optional[float]
    budget: int
    history: tuple[HistoryRow, ...]
    wall_time: float = field(default=0.0, compare=False)

    @property
    def evaluations(self) -> int:
        return self.history[-1].evaluations

    @property
    def best_x(self) -> tuple[int, ...]:
        return self.history[-1].best_x

    @property
    def best_f(self) -> float:
        return self.history[-1].best_f

    def evaluations_to_target(self) -> tuple[int, bool]:
        """``(evaluations, censored)``; unsolved runs report the budget."""
        if self.target is not None:
            for row in self.history:
                if row.best_f <= self.target:
                    return row.evaluations, False
        return self.budget, True

    def rows(self) -> list[dict]:
        head = {
            "problem": self.problem,
            "seed": str(self.seed),
            "config_digest": self.config_digest,
            "target": "" if self.target is None else repr(self.target),
            "budget": str(self.budget),
        }
        return [
            {
                **head,
                "generation": str(r.generation),
                "evaluations": str(r.evaluations),
                "best_f": repr(r.best_f),
                "mean_f": repr(r.mean_f),
                "sigma": repr(r.sigma),
                "mean_step": repr(r.mean_step),
                "best_x": " ".join(str(v) for v in r.best_x),
            }
            for r in self.history
        ]

    def write_csv(self, path: str | Path) -> None:
        _write_csv(path, RUN_COLUMNS, self.rows())

    @classmethod
    def from_rows(cls, rows: Sequence[Mapping[str, str]]) -> "RunRecord":
        if not rows:
            raise ValueError("a run record needs at least one history row")
        first = rows[0]
        history = tuple(
            HistoryRow(
                int(r["generation"]),
                int(r["evaluations"]),
                float(r["best_f"]),
                float(r["mean_f"]),
                float(r["sigma"]),
                float(r["mean_step"]),
                tuple(int(v) for v in r["best_x"].split()),
            )
            for r in rows
        )
        return cls(
            first["problem"],
            int(first["seed"]),
            first["config_digest"],
            float(first["target"]) if first["target"] else None,
            int(first["budget"]),
            history,
        )

    @classmethod
    def from_csv(cls, path: str | Path) -> "RunRecord":
        with open(path, newline="") as fh:
            return cls.from_rows(list(csv.DictReader(fh)))


@dataclass(frozen=True)
class Summary:
    problem: str
    config_digest: str
    runs: int
    solved: int
    censored: int
    median_evaluations: float
    iqr_low: float
    iqr_high: float
    budget: int
    target: Optional[float]

    def row(self) -> dict:
        out = {k: v for k, v in dataclasses.asdict(self).items()}
        for k in ("median_evaluations", "iqr_low", "iqr_high"):
            out[k] = repr(float(out[k]))
        out["target"] = "" if self.target is None else repr(self.target)
        return {k: str(v) for k, v in out.items()}

    @classmethod
    def from_row(cls, row: Mapping[str, str]) -> "Summary":
        return cls(
            row["problem"],
            row["config_digest"],
            int(row["runs"]),
            int(row["solved"]),
            int(row["censored"]),
            float(row["median_evaluations"]),
            float(row["iqr_low"]),
            float(row["iqr_high"]),
            int(row["budget"]),
            float(row["target"]) if row["target"] else None,
        )


def summarize(records: Sequence[RunRecord]) -> Summary:
    """Median and interquartile range of evaluations-to-target over runs."""
    if not records:
        raise ValueError("nothing to summarise")
    hits = [r.evaluations_to_target() for r in records]
    evals = np.array([e for e, _ in hits], dtype=float)
    censored = sum(c for _, c in hits)
    q25, q50, q75 = np.percentile(evals, [25, 50, 75])
    first = records[0]
    # the digest of a suite entry: problem plus config, seed left out
    digest = _digest({"problem": first.problem, "runs": sorted(r.config_digest for r in records)})
    return Summary(
        first.problem,
        digest,
        len(records),
        len(records) - censored,
        censored,
        float(q50),
        float(q25),
        float(q75),
        first.budget,
        first.target,
    )


def write_summary(path: str | Path, summaries: Iterable[Summary]) -> None:
    _write_csv(path, SUMMARY_COLUMNS, [s.row() for s in summaries])


def read_summary(path: str | Path) -> list[Summary]:
    with open(path, newline="") as fh:
        return [Summary.from_row(r) for r in csv.DictReader(fh)]


def _write_csv(path, columns, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def _digest(payload: Mapping[str, Any]) -> str:
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def config_digest(problem: Problem, config: OptimizerConfig) -> str:
    """Stable identifier of (problem, config, seed)."""
    return _digest({"problem": problem.name, "params": dict(problem.params), "config": config.to_dict()})


def configure(problem: Problem, config: Optional[OptimizerConfig] = None, **overrides) -> OptimizerConfig:
    """Fit ``config`` to ``problem``: dimension, cardinalities and target."""
    base = {} if config is None else config.to_dict()
    base.update(overrides)
    if "d" in base and base["d"] != problem.d:
        raise ConfigInvalid("d", f"config has d={base['d']} but {problem.name} has d={problem.d}")
    base["d"] = problem.d
    base["dims"] = problem.dims
    if base.get("target") is None:
        base["target"] = problem.target
    return OptimizerConfig.from_dict(base)


def run_once(problem: Problem, config: OptimizerConfig) -> RunRecord:
    """One seeded run; the seed is ``config.seed``."""
    config = configure(problem, config)
    best: list = []  # running best after each evaluation: (f, x)

    def tracked(x):
        f = problem(x)
        if not best or f < best[-1][0]:
            best.append((f, tuple(int(v) for v in x)))
        else:
            best.append(best[-1])
        return f

    start = time.perf_counter()
    result = optimize(tracked, config)
    wall = time.perf_counter() - start
    history = tuple(
        HistoryRow(
            h["generation"],
            h["evaluations"],
            h["best_f"],
            h["mean_f"],
            h["sigma"],
            h["mean_step"],
            best[h["evaluations"] - 1][1],
        )
        for h in result.history
    )
    return RunRecord(
        problem.name,
        config.seed,
        config_digest(problem, config),
        config.target,
        config.max_iterations * result.state.constants.lam,
        history,
        wall,
    )


def run_experiment(
    problem: Problem,
    config: OptimizerConfig,
    seeds: Sequence[int],
    out_dir: Optional[str | Path] = None,
) -> list[RunRecord]:
    """Run ``problem`` once per seed.

    With ``out_dir`` set, writes ``<out_dir>/<problem>/seed-<seed>.csv`` per
    run and ``<out_dir>/<problem>/summary.csv``. Seeds are independent, so
    runs could be farmed out; they are executed in order here.
    """
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ConfigInvalid("seeds", "need at least one seed")
    if len(set(seeds)) != len(seeds):
        raise ConfigInvalid("seeds", "seeds must be distinct")
    config = configure(problem, config)
    records = [run_once(problem, dataclasses.replace(config, seed=s)) for s in seeds]
    if out_dir is not None:
        folder = Path(out_dir) / problem.name
        for rec in records:
            rec.write_csv(folder / f"seed-{rec.seed}.csv")
        write_summary(folder / "summary.csv", [summarize(records)])
    return records


def summary_from_csv(folder: str | Path) -> Summary:
    """Recompute a problem's summary from its per-run CSVs."""
    paths = sorted(Path(folder).glob("seed-*.csv"), key=lambda p: int(p.stem.split("-", 1)[1]))
    return summarize([RunRecord.from_csv(p) for p in paths])


def suite(name: str, seed: int = 0) -> list[tuple[Problem, OptimizerConfig, list[int]]]:
    """Problems, configs and seeds of a named benchmark suite.

    Run seeds are ``seed, seed + 1, ...``; the random Ising instance is
    drawn from the ``problem`` stream of ``seed`` itself.
    """
    if name == "quick":
        entries = [
            (onemax(10), 200),
            (leading_ones(8), 200),
            (integer_sphere(3, 8), 200),
            (rastrigin(3, 11), 200),
            (random_ising(8, seed), 200),
        ]
        runs = 3
    elif name == "full":
        entries = [
            (onemax(20), 1000),
            (leading_ones(20), 2000),
            (integer_sphere(5, 16, (3, 12, 7, 0, 15)), 1000),
            (rastrigin(5, 21), 1000),
            (random_ising(12, seed), 1000),
        ]
        runs = 20
    else:
        raise ConfigInvalid("suite", f"must be one of {SUITES}, got {name!r}")
    seeds = [seed + i for i in range(runs)]
    return [(p, configure(p, max_iterations=it), seeds) for p, it in entries]


def run_suite(name: str, seed: int, out_dir: str | Path) -> list[Summary]:
    """Run a suite and write per-problem CSVs plus ``<out_dir>/summary.csv``."""
    summaries = []
    for problem, config, seeds in suite(name, seed):
        summaries.append(summarize(run_experiment(problem, config, seeds, out_dir)))
    write_summary(Path(out_dir) / "summary.csv", summaries)
    return summaries
