"""
Command line entry point.

Exit codes: 0 success, 1 infeasible, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from . import __version__
from .exceptions import MobileClinicError, UsageError
from .experiments import (
    cluster_sweep,
    default_percentiles,
    generate_line_instance,
    generate_synthetic,
    kernel_table,
    percentile_table,
    tradeoff_sweep,
)
from .io import (
    load_groups,
    load_instance,
    solution_payload,
    write_instance,
    write_records,
    write_solution,
    write_table,
)
from .solvers import ALGORITHMS, SolveParams, solve

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INFEASIBLE = 1
EXIT_USAGE = 2

COMMANDS = ("solve", "sweep", "kernel", "cluster", "curve", "generate")
DEFAULT_CLUSTER_RADII = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6)


def _floats(text):
    return tuple(float(x) for x in text.split(",") if x.strip())


def _names(text):
    return tuple(x.strip() for x in text.split(",") if x.strip())


@dataclass(frozen=True)
class RunConfig:
    """Everything one CLI invocation needs."""

    command: str
    params: SolveParams
    locations: Optional[Path] = None
    visits: Optional[Path] = None
    matrix: Optional[Path] = None
    groups: Optional[Path] = None
    allow_residential_sites: bool = False
    algorithm: str = "clientcover"
    algorithms: tuple = tuple(ALGORITHMS)
    k_min: int = 1
    k_max: int = 10
    qs: tuple = (1.0,)
    ps: Optional[tuple] = None
    radii: tuple = DEFAULT_CLUSTER_RADII
    out: Optional[Path] = None
    seed: int = 0
    generator: dict = field(default_factory=dict)

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        get = lambda name, default=None: getattr(args, name, default)  # noqa: E731
        params = SolveParams(
            k=get("k") if get("k") is not None else 1,
            q=get("q", 1.0),
            capacity=get("capacity"),
            u=get("u", 15),
            cover_solver=get("cover_solver", "exact"),
            supplier=get("supplier", "hs"),
            multi_copy=get("multi_copy", False),
            node_budget=get("node_budget", 10 ** 6),
        )
        generator = {}
        if args.command == "generate":
            generator = {
                "line": args.line, "gamma": args.gamma, "line_k": args.line_k,
                "clients": args.clients, "activity": args.activity,
                "residential": args.residential,
                "visits": (args.min_visits, args.max_visits),
            }
        return cls(
            command=args.command,
            params=params,
            locations=get("locations"),
            visits=get("visits"),
            matrix=get("matrix"),
            groups=get("groups"),
            allow_residential_sites=get("allow_residential_sites", False),
            algorithm=get("algorithm", "clientcover"),
            algorithms=get("algorithms") or tuple(ALGORITHMS),
            k_min=get("k_min", 1),
            k_max=get("k_max", 10),
            qs=get("qs") or (1.0,),
            ps=get("ps"),
            radii=get("radii") or DEFAULT_CLUSTER_RADII,
            out=get("out"),
            seed=get("seed", 0),
            generator=generator,
        )


def _instance(config):
    if config.locations is None or config.visits is None:
        raise UsageError("--locations and --visits are required")
    return load_instance(config.locations, config.visits, config.matrix,
                         config.allow_residential_sites)


def _params(config):
    if config.groups is None:
        return config.params
    return replace(config.params, groups=load_groups(config.groups))


def _emit_table(rows, out, writer):
    if out is None:
        out = sys.stdout
    writer(rows, out)


def _run_solve(config):
    instance = _instance(config)
    solution = solve(instance, config.algorithm, _params(config))
    if config.out is not None:
        write_solution(solution, config.out)
    else:
        print(json.dumps(solution_payload(solution), sort_keys=True, indent=2))
    return EXIT_OK if solution.feasible else EXIT_INFEASIBLE


def _run_sweep(config):
    instance = _instance(config)
    records = tradeoff_sweep(instance, config.algorithms, range(config.k_min, config.k_max + 1),
                             config.qs, _params(config))
    _emit_table(records, config.out, write_records)
    return EXIT_OK


def _run_kernel(config):
    instance = _instance(config)
    records = tradeoff_sweep(instance, config.algorithms, range(config.k_min, config.k_max + 1),
                             config.qs, _params(config))
    _emit_table(kernel_table(records), config.out, write_table)
    return EXIT_OK


def _run_cluster(config):
    instance = _instance(config)
    records = cluster_sweep(instance, config.radii, _params(config), config.algorithm)
    _emit_table(records, config.out, write_table)
    return EXIT_OK if all(r.feasible for r in records) else EXIT_INFEASIBLE


def _run_curve(config):
    instance = _instance(config)
    params = _params(config)
    solutions = {name: solve(instance, name, params) for name in config.algorithms}
    table = percentile_table(instance, solutions, config.ps or default_percentiles())
    _emit_table(table, config.out, write_table)
    return EXIT_OK if all(s.feasible for s in solutions.values()) else EXIT_INFEASIBLE


def _run_generate(config):
    gen = config.generator
    if config.out is None:
        raise UsageError("generate needs --out DIR")
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    if gen["line"]:
        instance = generate_line_instance(config.seed, gen["gamma"], gen["line_k"])
        write_instance(instance, out / "locations.csv", out / "visits.csv", out / "matrix.csv")
    else:
        instance = generate_synthetic(config.seed, gen["clients"], gen["activity"],
                                      gen["residential"], gen["visits"])
        write_instance(instance, out / "locations.csv", out / "visits.csv")
    print(f"wrote {instance!r} to {out}")
    return EXIT_OK


_DISPATCH = {
    "solve": _run_solve,
    "sweep": _run_sweep,
    "kernel": _run_kernel,
    "cluster": _run_cluster,
    "curve": _run_curve,
    "generate": _run_generate,
}


def run(config: RunConfig) -> int:
    """Execute one command and map the outcome to an exit code."""
    try:
        return _DISPATCH[config.command](config)
    except MobileClinicError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def _add_input(parser):
    parser.add_argument("--locations", type=Path, help="locations CSV")
    parser.add_argument("--visits", type=Path, help="visits CSV")
    parser.add_argument("--matrix", type=Path, help="distance matrix CSV (index-based locations)")
    parser.add_argument("--allow-residential-sites", action="store_true",
                        help="let residential locations host facilities")


def _add_params(parser, need_k=True):
    if need_k:
        parser.add_argument("--k", type=int, required=True, help="facility budget")
    parser.add_argument("--q", type=float, default=1.0, help="fraction of clients to serve")
    parser.add_argument("--capacity", type=int, help="clients per facility")
    parser.add_argument("--groups", type=Path, help="group requirements CSV")
    parser.add_argument("--u", type=int, default=15, help="FPT public locations")
    parser.add_argument("--cover-solver", choices=["exact", "greedy"], default="exact")
    parser.add_argument("--supplier", choices=["hs", "exact"], default="hs",
                        help="k-supplier routine inside FPT")
    parser.add_argument("--multi-copy", action="store_true",
                        help="allow a site to be opened more than once under capacities")
    parser.add_argument("--node-budget", type=int, default=10 ** 6,
                        help="branch-and-bound nodes per cover probe")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mobileclinic",
        description="Place mobile clinics so every client passes near one.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="more logging (repeat for debug)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="place facilities for one budget")
    _add_input(p)
    _add_params(p)
    p.add_argument("--algorithm", choices=sorted(ALGORITHMS), default="clientcover")
    p.add_argument("--out", type=Path, help="solution JSON (stdout if omitted)")

    for name, help_text in (("sweep", "budget/radius tradeoff CSV"),
                            ("kernel", "displacement between consecutive budgets")):
        p = sub.add_parser(name, help=help_text)
        _add_input(p)
        _add_params(p, need_k=False)
        p.add_argument("--algorithms", type=_names, default=tuple(ALGORITHMS))
        p.add_argument("--k-min", type=int, default=1)
        p.add_argument("--k-max", type=int, default=10)
        p.add_argument("--qs", type=_floats, default=(1.0,), help="comma separated q values")
        p.add_argument("--out", type=Path, help="CSV (stdout if omitted)")

    p = sub.add_parser("cluster", help="objective after clustering locations")
    _add_input(p)
    _add_params(p)
    p.add_argument("--algorithm", choices=sorted(ALGORITHMS), default="clientcover")
    p.add_argument("--radii", type=_floats, default=DEFAULT_CLUSTER_RADII,
                   help="comma separated cluster radii in km")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("curve", help="radius needed per served fraction")
    _add_input(p)
    _add_params(p)
    p.add_argument("--algorithms", type=_names, default=tuple(ALGORITHMS))
    p.add_argument("--ps", type=_floats, help="comma separated fractions (default 0.80..1.00)")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("generate", help="write a synthetic instance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clients", type=int, default=33156)
    p.add_argument("--activity", type=int, default=5660)
    p.add_argument("--residential", type=int, default=10038)
    p.add_argument("--min-visits", type=int, default=1)
    p.add_argument("--max-visits", type=int, default=5)
    p.add_argument("--line", action="store_true", help="colored line instance instead")
    p.add_argument("--gamma", type=int, default=4, help="colors of the line instance")
    p.add_argument("--line-k", type=int, default=2, help="blocks of the line instance")
    p.add_argument("--out", type=Path, help="output directory")
    return parser


def _log_level(verbose):
    if verbose >= 2:
        return logging.DEBUG
    if verbose == 1:
        return logging.INFO
    env = os.environ.get("MOBILECLINIC_LOG_LEVEL", "WARNING").upper()
    return getattr(logging, env, logging.WARNING)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=_log_level(args.verbose),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    return run(RunConfig.from_args(args))


if __name__ == "__main__":
    sys.exit(main())
