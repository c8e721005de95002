"""Command-line entry point.

Exit codes: 0 success, 1 failed check, 2 usage error, 3 instance too large.
"""

import argparse
import csv
import json
import logging
import os
import sys

from .algorithms import ALGORITHMS
from .algorithms import RESULT_FIELDS
from .algorithms import run_algorithm
from .consensus import CommGraph
from .consensus import ConsensusTrace
from .core import PartitionMatroid
from .core import check_matroid_axioms
from .core import sample_monotonicity
from .core import sample_submodularity
from .errors import ConfigurationError
from .errors import DomainError
from .errors import SizeError
from .experiments import PAPER_GRID
from .experiments import CampaignConfig
from .experiments import check_campaign
from .experiments import default_output_dir
from .experiments import read_config
from .experiments import run_campaign
from .experiments import sweep_p
from .experiments import verify_guarantee
from .utility import MODES
from .utility import MonotoneUtility
from .utility import NonMonotoneUtility
from .utility import generate_scenario
from .utility import load_scenario
from .utility import save_scenario


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK = 1
EXIT_USAGE = 2
EXIT_SIZE = 3


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dsta", description="Sample-greedy task allocation experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    subparsers = parser.add_subparsers(dest="command", required=True)

    gen = subparsers.add_parser("gen", help="generate a scenario file")
    gen.add_argument("--tasks", type=int, required=True)
    gen.add_argument("--agents", type=int, required=True)
    gen.add_argument("--mode", choices=MODES, default="monotone")
    gen.add_argument("--world-km", type=float, default=10.0)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--matched-weight", choices=("fitness", "value"), default="fitness")
    gen.add_argument("--out", type=str, default=None)

    run = subparsers.add_parser("run", help="run one algorithm on a scenario file")
    run.add_argument("--scenario", type=str, required=True)
    run.add_argument("--algo", choices=ALGORITHMS, default="dsta")
    run.add_argument("--p", type=float, default=None)
    run.add_argument("--graph", choices=("complete", "ring", "line", "file", "geometric"), default="complete")
    run.add_argument("--graph-file", type=str, default=None)
    run.add_argument("--radius", type=float, default=None, help="communication radius [km] for --graph geometric")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--trace", type=str, default=None)
    run.add_argument("--header", action="store_true")
    run.add_argument("--timing", action="store_true")

    campaign = subparsers.add_parser("campaign", help="run a Monte Carlo campaign")
    campaign.add_argument("--config", type=str, default=None)
    campaign.add_argument("--paper-scale", action="store_true")
    campaign.add_argument("--mode", choices=MODES, default=None)
    campaign.add_argument("--seed", type=int, default=None, dest="master_seed")
    campaign.add_argument("--trials", type=int, default=None)
    campaign.add_argument("--jobs", type=int, default=None)
    campaign.add_argument("--output", type=str, default=None)
    campaign.add_argument("--timing", action="store_true", default=None)
    campaign.add_argument("--sweep", action="store_true", help="check value and calls trends in p")
    campaign.add_argument("--no-progress", action="store_true")

    verify = subparsers.add_parser("verify", help="check the approximation guarantee")
    verify.add_argument("--mode", choices=MODES, default="monotone")
    verify.add_argument("--p", type=float, default=0.5)
    verify.add_argument("--tasks", type=int, default=5)
    verify.add_argument("--agents", type=int, default=3)
    verify.add_argument("--instances", type=int, default=30)
    verify.add_argument("--seeds", type=int, default=500)
    verify.add_argument("--seed", type=int, default=0)
    verify.add_argument("--slack", type=float, default=0.02)

    props = subparsers.add_parser("props", help="property-test suites")
    props.add_argument("--suite", choices=("submodular", "monotone", "matroid"), required=True)
    props.add_argument("--mode", choices=MODES, default=None)
    props.add_argument("--tasks", type=int, default=None)
    props.add_argument("--agents", type=int, default=3)
    props.add_argument("--trials", type=int, default=1000)
    props.add_argument("--seed", type=int, default=0)
    return parser


def configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=(logging.DEBUG if verbose else logging.WARNING),
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )


def cmd_gen(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    if args.tasks < 1 or args.agents < 1:
        parser.error("--tasks and --agents must be >= 1")
    try:
        scenario = generate_scenario(
            args.tasks,
            args.agents,
            mode=args.mode,
            world_size=args.world_km,
            seed=args.seed,
            matched_weight=args.matched_weight,
        )
    except ConfigurationError as exception:
        parser.error(str(exception))
    path = args.out
    if path is None:
        os.makedirs(default_output_dir(), exist_ok=True)
        path = os.path.join(default_output_dir(), "scenario.json")
    try:
        digest = save_scenario(scenario, path)
    except OSError as exception:
        parser.error(f"cannot write scenario: {exception}")
    print(digest)
    return EXIT_OK


def make_graph(args: argparse.Namespace, scenario) -> CommGraph:
    if args.graph == "geometric":
        if args.radius is None:
            raise ConfigurationError("--graph geometric needs --radius")
        return CommGraph.geometric(scenario.agent_positions, args.radius)
    return CommGraph.from_name(args.graph, scenario.n_agents, path=args.graph_file)


def cmd_run(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    p = args.p
    if args.algo in ("greedy", "brute"):
        if p is not None:
            logger.warning("--p is ignored by --algo %s (no sampling)", args.algo)
        p = 1.0
    elif p is None:
        p = 0.5

    try:
        scenario = load_scenario(args.scenario)
    except (OSError, ValueError) as exception:
        parser.error(f"cannot read scenario {args.scenario}: {exception!r}")

    try:
        kws = {}
        trace = None
        if args.algo == "dsta":
            kws["graph"] = make_graph(args, scenario)
            if args.trace is not None:
                trace = ConsensusTrace()
                kws["trace"] = trace
        result = run_algorithm(args.algo, scenario, p=p, seed=args.seed, **kws)
    except SizeError:
        raise
    except (OSError, ConfigurationError, DomainError) as exception:
        parser.error(str(exception))

    if trace is not None:
        trace.write(args.trace)
    writer = csv.DictWriter(sys.stdout, fieldnames=RESULT_FIELDS, lineterminator="\n")
    if args.header:
        writer.writeheader()
    writer.writerow(result.row(timing=args.timing))
    return EXIT_OK


def cmd_campaign(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    overrides = {
        "mode": args.mode,
        "master_seed": args.master_seed,
        "trials": args.trials,
        "jobs": args.jobs,
        "output": args.output,
        "timing": args.timing,
    }
    overrides = {key: value for key, value in overrides.items() if value is not None}
    try:
        data = read_config(args.config) if args.config is not None else {}
        if args.paper_scale:
            data.update(PAPER_GRID)
        data.update(overrides)
        config = CampaignConfig.from_dict(data)
    except (OSError, ValueError) as exception:
        parser.error(str(exception))

    run = sweep_p if args.sweep else run_campaign
    try:
        result = run(config, progress=not args.no_progress)
    except OSError as exception:
        parser.error(f"cannot write campaign output: {exception}")
    failures = result.failures + check_campaign(result)
    summary = {
        "rows": len(result.rows),
        "cells": len(result.summaries),
        "paths": result.paths,
        "failures": failures,
    }
    print(json.dumps(summary, indent=1, sort_keys=True))
    if failures:
        print(f"check failed: {failures[0]}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_verify(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    if min(args.tasks, args.agents, args.instances, args.seeds) < 1:
        parser.error("--tasks, --agents, --instances and --seeds must be >= 1")
    try:
        report = verify_guarantee(
            args.mode,
            args.p,
            n_tasks=args.tasks,
            n_agents=args.agents,
            n_instances=args.instances,
            n_seeds=args.seeds,
            master_seed=args.seed,
            slack=args.slack,
        )
    except ConfigurationError as exception:
        parser.error(str(exception))
    print(json.dumps(report.as_dict(), indent=1, sort_keys=True))
    if not report.passes:
        print(f"check failed: margin {report.margin:.4f} < -{report.slack}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_props(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    if args.trials < 1 or args.agents < 1 or (args.tasks is not None and args.tasks < 1):
        parser.error("--trials, --agents and --tasks must be >= 1")
    if args.suite == "matroid":
        n_tasks = 4 if args.tasks is None else args.tasks
        try:
            failures = check_matroid_axioms(PartitionMatroid(n_tasks, args.agents))
        except ValueError as exception:
            parser.error(str(exception))
        print(json.dumps({"suite": "matroid", "n_tasks": n_tasks, "n_agents": args.agents, "failed": failures}, sort_keys=True))
        if failures:
            print(f"check failed: matroid axiom '{failures[0]}'", file=sys.stderr)
            return EXIT_CHECK
        return EXIT_OK

    n_tasks = 8 if args.tasks is None else args.tasks
    if args.suite == "submodular":
        mode = args.mode or "nonmonotone"
    else:
        mode = args.mode or "monotone"
    try:
        scenario = generate_scenario(n_tasks, args.agents, mode=mode, seed=args.seed)
    except ConfigurationError as exception:
        parser.error(str(exception))
    if mode == "nonmonotone":
        oracle = NonMonotoneUtility(scenario, clamp=False)
    else:
        oracle = MonotoneUtility(scenario)
    sampler = sample_submodularity if args.suite == "submodular" else sample_monotonicity

    reports = {}
    for agent in range(scenario.n_agents):
        reports[agent] = sampler(oracle, range(n_tasks), args.trials, seed=args.seed + agent, agent=agent)
    violations = sum(report.violations for report in reports.values())
    output = {
        "suite": args.suite,
        "mode": mode,
        "n_tasks": n_tasks,
        "n_agents": scenario.n_agents,
        "trials": args.trials,
        "violations": violations,
        "worst_gap": max(report.worst_gap for report in reports.values()),
    }
    print(json.dumps(output, sort_keys=True))
    if violations:
        agent = min(a for a, report in reports.items() if report.violations)
        print(f"check failed: {args.suite} property violated for agent {agent}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "run": cmd_run,
    "campaign": cmd_campaign,
    "verify": cmd_verify,
    "props": cmd_props,
}


def main(argv: list[str] = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)
    try:
        return COMMANDS[args.command](args, parser)
    except SizeError as exception:
        print(f"size error: {exception}", file=sys.stderr)
        return EXIT_SIZE
    except OSError as exception:
        print(f"dsta: error: {exception}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
