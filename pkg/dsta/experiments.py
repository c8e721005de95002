"""Monte Carlo campaigns, summaries and guarantee verification."""

import csv
import logging
import math
import os
import tomllib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from dataclasses import field
from dataclasses import fields

import numpy as np
import scipy.stats
from tqdm import tqdm

from .algorithms import ALGORITHMS
from .algorithms import RESULT_FIELDS
from .algorithms import SAMPLING_ALGORITHMS
from .algorithms import as_oracle
from .algorithms import brute_force_optimal
from .algorithms import centralized_dsta
from .algorithms import guarantee_bound
from .algorithms import run_algorithm
from .core import ValueOracle
from .errors import ConfigurationError
from .utility import NONMONOTONE
from .utility import Scenario
from .utility import generate_scenario
from .utility import normalize_mode
from .utils import check_probability
from .utils import derive_seed
from .utils import mean_std


logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "DSTA_OUTPUT_DIR"
CAMPAIGN_GRAPHS = ("complete", "ring", "line")

SUMMARY_FIELDS = [
    "algorithm",
    "mode",
    "n_tasks",
    "n_agents",
    "p",
    "trials",
    "value_mean",
    "value_std",
    "calls_mean",
    "calls_std",
    "wall_time_mean",
    "wall_time_std",
]


def default_output_dir() -> str:
    return os.environ.get(OUTPUT_DIR_ENV, "outputs")


# Configuration
# --------------------------------------------------------------------------------------


@dataclass
class CampaignConfig:
    """Grid of (n_tasks, n_agents, p) cells, each run for `trials` scenarios."""

    mode: str = "monotone"
    n_tasks: list[int] = field(default_factory=lambda: [60])
    n_agents: list[int] = field(default_factory=lambda: [10, 15])
    p: list[float] = field(default_factory=lambda: [0.5])
    trials: int = 10
    master_seed: int = 0
    algorithms: list[str] = field(default_factory=lambda: ["dsta-central", "greedy"])
    output: str = None
    world_size: float = 10.0
    graph: str = "complete"
    jobs: int = 1
    timing: bool = False

    def __post_init__(self) -> None:
        self.mode = normalize_mode(self.mode)
        self.n_tasks = [int(n) for n in self.n_tasks]
        self.n_agents = [int(n) for n in self.n_agents]
        self.p = [check_probability(p) for p in self.p]
        if self.output is None:
            self.output = default_output_dir()
        if self.trials < 1:
            raise ConfigurationError(f"trials must be >= 1, got {self.trials}")
        if self.jobs < 1:
            raise ConfigurationError(f"jobs must be >= 1, got {self.jobs}")
        if not self.n_tasks or not self.n_agents or not self.p:
            raise ConfigurationError("Campaign grid is empty.")
        for name in self.algorithms:
            if name not in ALGORITHMS:
                raise ConfigurationError(f"Invalid algorithm '{name}'")
        if self.graph not in CAMPAIGN_GRAPHS:
            raise ConfigurationError(f"Invalid campaign graph '{self.graph}'")
        for n_tasks, n_agents in self.cells():
            if not (1 <= n_agents <= n_tasks):
                raise ConfigurationError(f"Invalid cell: {n_agents} agents, {n_tasks} tasks")

    def cells(self) -> list[tuple[int, int]]:
        return [(n_tasks, n_agents) for n_tasks in self.n_tasks for n_agents in self.n_agents]

    @classmethod
    def from_dict(cls, data: dict) -> "CampaignConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigurationError(f"Unknown campaign keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_toml(cls, path: str, **overrides) -> "CampaignConfig":
        data = read_config(path)
        data.update({key: value for key, value in overrides.items() if value is not None})
        return cls.from_dict(data)

    @classmethod
    def desk(cls, **kws) -> "CampaignConfig":
        return cls(**kws)

    @classmethod
    def paper_scale(cls, **kws) -> "CampaignConfig":
        return cls(**(PAPER_GRID | kws))


PAPER_GRID = {"n_tasks": [200, 300], "n_agents": [10, 20, 30, 40, 50], "trials": 10}


def read_config(path: str) -> dict:
    """Campaign keys from a TOML file, either top-level or under [campaign]."""
    with open(path, "rb") as file:
        data = tomllib.load(file)
    return dict(data.get("campaign", data))


# Running
# --------------------------------------------------------------------------------------


def trial_seed(config: CampaignConfig, n_tasks: int, n_agents: int, trial: int) -> int:
    """Seed for both scenario generation and sampling in one trial."""
    return derive_seed(config.master_seed, n_tasks, n_agents, trial)


def run_one(
    config: CampaignConfig, name: str, scenario: Scenario, p: float, seed: int
):
    kws = {}
    if name == "dsta":
        from .consensus import CommGraph

        kws["graph"] = CommGraph.from_name(config.graph, scenario.n_agents)
    return run_algorithm(name, scenario, p=p, seed=seed, **kws)


def run_trial(args: tuple[CampaignConfig, int, int, int]) -> list[dict]:
    """All configured algorithms on one scenario; returns CSV rows in canonical order."""
    config, n_tasks, n_agents, trial = args
    seed = trial_seed(config, n_tasks, n_agents, trial)
    scenario = generate_scenario(
        n_tasks, n_agents, mode=config.mode, world_size=config.world_size, seed=seed
    )
    rows = []
    for name in config.algorithms:
        # Greedy and brute force do not sample.
        p_values = config.p if name in SAMPLING_ALGORITHMS else [1.0]
        for p in p_values:
            result = run_one(config, name, scenario, p, seed)
            rows.append(result.row(timing=config.timing))
    return rows


def check_output_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise PermissionError(f"Output directory is not writable: {path}")
    return path


def write_csv(path: str, fieldnames: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as file:
        writer = csv.DictWriter(file, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


@dataclass
class CellSummary:
    algorithm: str
    mode: str
    n_tasks: int
    n_agents: int
    p: float
    trials: int
    value_mean: float
    value_std: float
    calls_mean: float
    calls_std: float
    wall_time_mean: float
    wall_time_std: float

    def row(self) -> dict:
        row = {}
        for name in SUMMARY_FIELDS:
            value = getattr(self, name)
            row[name] = repr(float(value)) if isinstance(value, float) else value
        return row


def summarize(rows: list[dict]) -> list[CellSummary]:
    """One summary per (algorithm, n_tasks, n_agents, p), in first-seen row order."""
    groups = {}
    for row in rows:
        key = (row["algorithm"], row["mode"], int(row["n_tasks"]), int(row["n_agents"]), float(row["p"]))
        groups.setdefault(key, []).append(row)

    summaries = []
    for (algorithm, mode, n_tasks, n_agents, p), group in groups.items():
        value_mean, value_std = mean_std([float(row["total_value"]) for row in group])
        calls_mean, calls_std = mean_std([float(row["oracle_calls"]) for row in group])
        time_mean, time_std = mean_std([float(row["wall_time_ms"]) for row in group])
        summaries.append(
            CellSummary(
                algorithm=algorithm,
                mode=mode,
                n_tasks=n_tasks,
                n_agents=n_agents,
                p=p,
                trials=len(group),
                value_mean=value_mean,
                value_std=value_std,
                calls_mean=calls_mean,
                calls_std=calls_std,
                wall_time_mean=time_mean,
                wall_time_std=time_std,
            )
        )
    return summaries


def plot_tables(summaries: list[CellSummary]) -> dict[str, tuple[list[str], list[dict]]]:
    """Plot data: value and oracle calls vs number of agents, value vs p."""
    value_vs_agents = []
    calls_vs_agents = []
    value_vs_p = []
    for s in summaries:
        base = {"algorithm": s.algorithm, "n_tasks": s.n_tasks, "n_agents": s.n_agents, "p": repr(s.p)}
        value_vs_agents.append(base | {"value_mean": repr(s.value_mean), "value_std": repr(s.value_std)})
        calls_vs_agents.append(base | {"calls_mean": repr(s.calls_mean), "calls_std": repr(s.calls_std)})
        if s.algorithm in SAMPLING_ALGORITHMS:
            value_vs_p.append(base | {"value_mean": repr(s.value_mean), "calls_mean": repr(s.calls_mean)})
    base_fields = ["algorithm", "n_tasks", "n_agents", "p"]
    return {
        "value_vs_agents.csv": (base_fields + ["value_mean", "value_std"], value_vs_agents),
        "calls_vs_agents.csv": (base_fields + ["calls_mean", "calls_std"], calls_vs_agents),
        "value_vs_p.csv": (base_fields + ["value_mean", "calls_mean"], value_vs_p),
    }


@dataclass
class CampaignResult:
    config: CampaignConfig
    rows: list[dict]
    summaries: list[CellSummary]
    paths: dict[str, str] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)

    def summary(self, algorithm: str, n_tasks: int, n_agents: int, p: float = None) -> CellSummary:
        for s in self.summaries:
            if (s.algorithm, s.n_tasks, s.n_agents) == (algorithm, n_tasks, n_agents):
                if p is None or s.p == p:
                    return s
        raise KeyError((algorithm, n_tasks, n_agents, p))


def run_campaign(config: CampaignConfig, progress: bool = True) -> CampaignResult:
    """Run every (cell, trial) and write results, summary and plot-data CSVs.

    Rows are ordered by cell, trial, algorithm and p whatever the number of jobs.
    """
    output = check_output_dir(config.output)
    jobs = [(config, n_tasks, n_agents, trial) for n_tasks, n_agents in config.cells() for trial in range(config.trials)]
    logger.info("Running %d trials (%d cells) with %d job(s)", len(jobs), len(config.cells()), config.jobs)

    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as executor:
            results = list(tqdm(executor.map(run_trial, jobs), total=len(jobs), disable=not progress))
    else:
        results = [run_trial(job) for job in tqdm(jobs, disable=not progress)]

    rows = [row for trial_rows in results for row in trial_rows]
    summaries = summarize(rows)

    paths = {
        "results": os.path.join(output, "results.csv"),
        "summary": os.path.join(output, "summary.csv"),
    }
    write_csv(paths["results"], RESULT_FIELDS, rows)
    write_csv(paths["summary"], SUMMARY_FIELDS, [s.row() for s in summaries])
    for filename, (fieldnames, table) in plot_tables(summaries).items():
        paths[filename] = os.path.join(output, filename)
        write_csv(paths[filename], fieldnames, table)
    logger.info("Wrote %d rows to %s", len(rows), paths["results"])
    return CampaignResult(config=config, rows=rows, summaries=summaries, paths=paths)


# Checks
# --------------------------------------------------------------------------------------


def replay_row(config: CampaignConfig, row: dict) -> float:
    """Recompute the total value of a results row from its seed."""
    seed = int(row["seed"])
    scenario = generate_scenario(
        int(row["n_tasks"]), int(row["n_agents"]), mode=row["mode"],
        world_size=config.world_size, seed=seed,
    )
    return run_one(config, row["algorithm"], scenario, float(row["p"]), seed).total_value


def check_campaign(result: CampaignResult, n_replay: int = 5, seed: int = 0) -> list[str]:
    """Return descriptions of failed campaign checks (empty if all pass)."""
    failures = []
    rows = result.rows

    rng = np.random.default_rng(seed)
    for index in sorted(rng.choice(len(rows), size=min(n_replay, len(rows)), replace=False)):
        row = rows[index]
        value = replay_row(result.config, row)
        if repr(float(value)) != row["total_value"]:
            failures.append(f"replay: row {index} gave {value!r}, recorded {row['total_value']}")

    for s in result.summaries:
        values = [
            float(row["total_value"]) for row in rows
            if (row["algorithm"], int(row["n_tasks"]), int(row["n_agents"]), float(row["p"]))
            == (s.algorithm, s.n_tasks, s.n_agents, s.p)
        ]
        mean = math.fsum(values) / len(values)
        if abs(mean - s.value_mean) > 1.0e-12 * max(1.0, abs(mean)):
            failures.append(f"summary: mean mismatch for {s.algorithm} at {s.n_tasks}x{s.n_agents}, p={s.p}")

    config = result.config
    if config.mode == NONMONOTONE and "greedy" in config.algorithms and 0.5 in config.p:
        for name in ("dsta", "dsta-central"):
            if name not in config.algorithms:
                continue
            for n_tasks, n_agents in config.cells():
                dsta_mean = result.summary(name, n_tasks, n_agents, 0.5).value_mean
                greedy_mean = result.summary("greedy", n_tasks, n_agents).value_mean
                if dsta_mean < greedy_mean:
                    failures.append(
                        f"dominance: {name} mean {dsta_mean:.6g} < greedy mean {greedy_mean:.6g} "
                        f"at {n_tasks} tasks, {n_agents} agents"
                    )
    return failures


def count_inversions(values: list[float]) -> int:
    """Number of adjacent decreases."""
    return sum(1 for a, b in zip(values[:-1], values[1:]) if b < a)


def sweep_p(config: CampaignConfig, progress: bool = True, max_inversions: int = 1) -> CampaignResult:
    """Campaign over the p axis plus a non-decreasing trend check of value and calls in p."""
    result = run_campaign(config, progress=progress)
    for name in config.algorithms:
        if name not in SAMPLING_ALGORITHMS:
            continue
        for n_tasks, n_agents in config.cells():
            curve = sorted(
                (s for s in result.summaries if (s.algorithm, s.n_tasks, s.n_agents) == (name, n_tasks, n_agents)),
                key=lambda s: s.p,
            )
            for label in ("value_mean", "calls_mean"):
                inversions = count_inversions([getattr(s, label) for s in curve])
                if inversions > max_inversions:
                    result.failures.append(
                        f"trend: {name} {label} has {inversions} inversions in p "
                        f"at {n_tasks} tasks, {n_agents} agents"
                    )
    return result


# Guarantee verification
# --------------------------------------------------------------------------------------


@dataclass
class GuaranteeReport:
    mode: str
    p: float
    bound: float
    slack: float
    ratios: list[float]
    errors: list[float]
    margin: float

    @property
    def passes(self) -> bool:
        return self.margin >= -self.slack

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "p": self.p,
            "bound": self.bound,
            "slack": self.slack,
            "instances": len(self.ratios),
            "min_ratio": min(self.ratios),
            "mean_ratio": float(np.mean(self.ratios)),
            "max_sem": max(self.errors),
            "margin": self.margin,
            "passes": self.passes,
        }


def instance_ratio(
    problem: Scenario | ValueOracle, p: float, n_seeds: int, master_seed: int = 0
) -> tuple[float, float]:
    """Estimated E[f(S)] / OPT and its standard error for one instance.

    A zero optimum counts as ratio 1.
    """
    oracle = as_oracle(problem)
    opt = brute_force_optimal(oracle).total_value
    values = [
        centralized_dsta(oracle, p=p, seed=derive_seed(master_seed, k)).total_value
        for k in range(n_seeds)
    ]
    if opt <= 0.0:
        return (1.0, 0.0)
    sem = float(scipy.stats.sem(values)) if n_seeds > 1 else 0.0
    return (float(np.mean(values)) / opt, sem / opt)


def verify_guarantee(
    mode: str,
    p: float,
    n_tasks: int = 5,
    n_agents: int = 3,
    n_instances: int = 30,
    n_seeds: int = 500,
    master_seed: int = 0,
    slack: float = 0.02,
    progress: bool = False,
) -> GuaranteeReport:
    """Check the expected approximation ratio against brute-force optima.

    Parameters
    ----------
    mode : {"monotone", "nonmonotone"}
        Utility model of the random instances.
    p : float
        Sampling probability.
    n_tasks, n_agents : int
        Instance size (must be small enough for `brute_force_optimal`).
    n_instances, n_seeds : int
        Number of random instances and of sampling seeds per instance.
    master_seed : int
        Root of all instance and sampling seeds.
    slack : float
        Allowed relative shortfall against the bound (Monte Carlo error).

    Returns
    -------
    GuaranteeReport
        `margin` is the smallest relative excess (ratio - bound) / bound over
        instances; the check passes iff margin >= -slack.
    """
    mode = normalize_mode(mode)
    p = check_probability(p)
    bound = guarantee_bound(p, monotone=(mode != NONMONOTONE)).ratio
    ratios = []
    errors = []
    for i in tqdm(range(n_instances), disable=not progress):
        scenario = generate_scenario(n_tasks, n_agents, mode=mode, seed=derive_seed(master_seed, i))
        ratio, error = instance_ratio(scenario, p, n_seeds, master_seed=derive_seed(master_seed, i, 1))
        ratios.append(ratio)
        errors.append(error)
        logger.debug("Instance %d: ratio %.4f (sem %.4f), bound %.4f", i, ratio, error, bound)
    margin = min((ratio - bound) / bound for ratio in ratios)
    report = GuaranteeReport(mode=mode, p=p, bound=bound, slack=slack, ratios=ratios, errors=errors, margin=margin)
    logger.info("Guarantee check %s p=%g: margin %.4f", mode, p, margin)
    return report
