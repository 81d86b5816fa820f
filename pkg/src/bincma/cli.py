"""Command-line front end: ``bincma {optimize,bench,dist,expfam}``.

Exit status is 0 on success, 2 for configuration or usage errors and 1
for failures while running.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from bincma import bench
from bincma import poisson_binomial as pbm
from bincma.errors import BincmaError, ConfigInvalid
from bincma.expfam import CanonicalParams, JointTable, canonical_from_moment, moment_from_canonical
from bincma.optimizer import HISTORY_COLUMNS

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
_POISSON_TAIL = 1e-15


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigInvalid("arguments", message)


def load_config(path: str | Path) -> dict[str, Any]:
    """Read a TOML (``.toml``) or JSON config file into a dict."""
    path = Path(path)
    if not path.is_file():
        raise ConfigInvalid("config", f"no such file: {path}")
    try:
        if path.suffix == ".json":
            with open(path) as fh:
                data = json.load(fh)
        else:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigInvalid("config", f"cannot parse {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigInvalid("config", "top level must be a table")
    return data


def problem_and_config(data: dict[str, Any], seed: Optional[int] = None):
    """Split a config mapping into its ``[problem]`` and ``[optimizer]`` tables."""
    unknown = set(data) - {"problem", "optimizer"}
    if unknown:
        raise ConfigInvalid(sorted(unknown)[0], "unknown section")
    if "problem" not in data:
        raise ConfigInvalid("problem", "section is required")
    problem = bench.make_problem(data["problem"])
    opts = dict(data.get("optimizer", {}))
    if seed is not None:
        opts["seed"] = seed
    return problem, bench.configure(problem, **opts)


def _fmt(p: float) -> str:
    # 15 significant digits hide last-bit noise from the log-gamma evaluation
    return f"{p:.15g}"


def _write_pmf(out, probs: np.ndarray, offset: int = 0) -> None:
    out.write("k,probability\n")
    for i, p in enumerate(probs):
        out.write(f"{i + offset},{_fmt(float(p))}\n")


def _cmd_dist(args, out) -> int:
    if args.binomial is not None:
        n, p = args.binomial
        d = pbm.binomial(_int(n, "--binomial"), float(p))
    elif args.poisson_binomial is not None:
        d = pbm.pmf(pbm.PoissonBinomial(args.poisson_binomial))
    elif args.truncated_geometric is not None:
        n, mu = args.truncated_geometric
        d = pbm.truncated_geometric(_int(n, "--truncated-geometric"), float(mu))
    else:
        lam = args.poisson
        if args.max is not None:
            k_max = args.max
        else:
            k_max = int(math.ceil(lam))
            while pbm.poisson_pmf(lam, k_max) > _POISSON_TAIL or k_max < lam:
                k_max += 1
        _write_pmf(out, np.atleast_1d(pbm.poisson_pmf(lam, np.arange(k_max + 1))))
        return EXIT_OK
    _write_pmf(out, d.probs, d.offset)
    return EXIT_OK


def _int(text: str, flag: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigInvalid(flag, f"expected an integer, got {text!r}") from None


def _cmd_expfam(args, out) -> int:
    path = Path(args.input)
    if not path.is_file():
        raise ConfigInvalid("input", f"no such file: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigInvalid("input", f"not valid JSON: {exc}") from exc
    try:
        if args.to == "canonical":
            result = canonical_from_moment(JointTable.from_dict(data)).to_dict()
        else:
            result = moment_from_canonical(CanonicalParams.from_dict(data)).to_dict()
    except (KeyError, TypeError) as exc:
        raise ConfigInvalid("input", f"malformed document: {exc}") from exc
    text = json.dumps(result, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        out.write(text)
    return EXIT_OK


def _cmd_optimize(args, out) -> int:
    problem, config = problem_and_config(load_config(args.config), args.seed)
    record = bench.run_once(problem, config)
    if args.out:
        path = Path(args.out)
        if path.suffix != ".csv":
            path = path / f"{problem.name}-seed-{config.seed}.csv"
        record.write_csv(path)
        out.write(f"{path}\n")
    else:
        writer = csv.DictWriter(out, fieldnames=HISTORY_COLUMNS, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        writer.writerows(record.rows())
    x = " ".join(str(v) for v in record.best_x)
    print(f"best_f={record.best_f!r} best_x={x} evaluations={record.evaluations}", file=sys.stderr)
    return EXIT_OK


def _cmd_bench(args, out) -> int:
    out_dir = Path(args.out or "bench-out")
    for s in bench.run_suite(args.suite, args.seed, out_dir):
        out.write(
            f"{s.problem}: solved {s.solved}/{s.runs}, median evaluations {s.median_evaluations:g} "
            f"(IQR {s.iqr_low:g}-{s.iqr_high:g})\n"
        )
    out.write(f"wrote {out_dir / 'summary.csv'}\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bincma", description="Discrete CMA-ES with binomial sampling.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("optimize", help="run one problem from a TOML or JSON config")
    p.add_argument("--config", required=True, help="config file with [problem] and [optimizer] tables")
    p.add_argument("--seed", type=int, help="override optimizer.seed")
    p.add_argument("--out", help="CSV file or directory for the run record (default: history to stdout)")
    p.set_defaults(func=_cmd_optimize)

    p = sub.add_parser("bench", help="run a benchmark suite")
    p.add_argument("--suite", choices=bench.SUITES, default="quick")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory (default: bench-out)")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("dist", help="print a PMF as CSV")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--binomial", nargs=2, metavar=("N", "P"))
    g.add_argument("--poisson-binomial", nargs="+", type=float, metavar="P")
    g.add_argument("--truncated-geometric", nargs=2, metavar=("N", "MU"))
    g.add_argument("--poisson", type=float, metavar="LAM")
    p.add_argument("--max", type=int, help="largest k printed for --poisson")
    p.set_defaults(func=_cmd_dist)

    p = sub.add_parser("expfam", help="convert between moment and canonical parameters")
    p.add_argument("--input", required=True, help="JSON table or canonical parameters")
    p.add_argument("--to", choices=("canonical", "moment"), required=True)
    p.add_argument("--out", help="output file (default: stdout)")
    p.set_defaults(func=_cmd_expfam)
    return parser


def main(argv: Optional[Sequence[str]] = None, out=None) -> int:
    out = sys.stdout if out is None else out
    try:
        args = build_parser().parse_args(argv)
        return args.func(args, out)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BincmaError, ValueError, OverflowError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
