"""Centralized allocation algorithms and approximation guarantees.

All greedy variants share the same conventions:

- A candidate is admitted only if its marginal gain is strictly positive.
- Ties are broken by largest gain, then smallest agent id, then smallest task id.
- Sampling uses one keyed draw per (task, agent) pair (see `utils.sample_mask`).
- An agent with no positive-gain candidate is not evaluated again. Its bundle
  can no longer change, so its gains stay non-positive.
"""

import itertools
import logging
import math
import time
from dataclasses import dataclass
from dataclasses import field

import numpy as np

from .core import AgentId
from .core import Allocation
from .core import PartitionMatroid
from .core import TaskId
from .core import ValueOracle
from .errors import SizeError
from .utils import check_probability
from .utils import sample_mask
from .utility import Scenario
from .utility import get_utility


logger = logging.getLogger(__name__)


RESULT_FIELDS = [
    "seed",
    "p",
    "mode",
    "n_tasks",
    "n_agents",
    "algorithm",
    "total_value",
    "oracle_calls",
    "rounds",
    "wall_time_ms",
]


@dataclass
class RunResult:
    allocation: Allocation
    total_value: float
    oracle_calls: int
    rounds: int
    seed: int
    p: float
    algorithm: str = ""
    mode: str = ""
    n_tasks: int = 0
    n_agents: int = 0
    wall_time_ms: float = math.nan
    history: list[float] = field(default_factory=list)
    messages: dict[AgentId, int] = None
    consensus_rounds: int = 0

    def row(self, timing: bool = True) -> dict:
        """CSV row with fields `RESULT_FIELDS`; floats are written with `repr`."""
        return {
            "seed": self.seed,
            "p": repr(float(self.p)),
            "mode": self.mode,
            "n_tasks": self.n_tasks,
            "n_agents": self.n_agents,
            "algorithm": self.algorithm,
            "total_value": repr(float(self.total_value)),
            "oracle_calls": self.oracle_calls,
            "rounds": self.rounds,
            "wall_time_ms": repr(float(self.wall_time_ms)) if timing else "nan",
        }


@dataclass(frozen=True)
class GuaranteeBound:
    p: float
    monotone: bool
    ratio: float


def guarantee_bound(p: float, monotone: bool) -> GuaranteeBound:
    """Expected approximation ratio of sample greedy under a partition matroid.

    p / (p + P_max) for monotone objectives and p (1 - p) / (p + P_max) for
    non-monotone ones, with P_max = max(p, 1 - p).
    """
    p = check_probability(p)
    p_max = max(p, 1.0 - p)
    if monotone:
        ratio = p / (p + p_max)
    else:
        ratio = p * (1.0 - p) / (p + p_max)
    return GuaranteeBound(p=p, monotone=bool(monotone), ratio=ratio)


def as_oracle(problem: Scenario | ValueOracle, **kws) -> ValueOracle:
    if isinstance(problem, ValueOracle):
        return problem
    if isinstance(problem, Scenario):
        return get_utility(problem, **kws)
    raise TypeError(f"Expected Scenario or ValueOracle, got {type(problem).__name__}")


def oracle_mode(oracle: ValueOracle) -> str:
    scenario = getattr(oracle, "scenario", None)
    if scenario is not None:
        return scenario.mode
    return "monotone" if oracle.monotone else "nonmonotone"


def _finish(
    oracle: ValueOracle,
    bundles: dict[AgentId, list[TaskId]],
    start_calls: int,
    start_time: float,
    rounds: int,
    seed: int,
    p: float,
    algorithm: str,
    history: list[float],
) -> RunResult:
    allocation = Allocation(oracle.n_agents, bundles)
    return RunResult(
        allocation=allocation,
        total_value=oracle.total(allocation),
        oracle_calls=oracle.calls - start_calls,
        rounds=rounds,
        seed=seed,
        p=p,
        algorithm=algorithm,
        mode=oracle_mode(oracle),
        n_tasks=oracle.n_tasks,
        n_agents=oracle.n_agents,
        wall_time_ms=1000.0 * (time.perf_counter() - start_time),
        history=history,
    )


def bid_key(gain: float, agent: AgentId, task: TaskId) -> tuple[float, int, int]:
    """Sort key under which the best bid is the smallest."""
    return (-gain, agent, task)


def sample_greedy(
    problem: Scenario | ValueOracle,
    matroid: PartitionMatroid = None,
    p: float = 0.5,
    seed: int = 0,
    mask: np.ndarray = None,
    algorithm: str = "sample-greedy",
) -> RunResult:
    """Sample greedy over the task-agent pair ground set.

    Each pair enters the sample independently with probability `p`. The loop
    then repeatedly adds the sampled pair of largest positive marginal gain
    that keeps the solution independent in the partition matroid.

    Parameters
    ----------
    problem : Scenario or ValueOracle
        The objective F(S) = sum_a f_a(S_a).
    matroid : PartitionMatroid
        Independence structure. Defaults to one partition per task.
    p : float
        Sampling probability in (0, 1]. With p = 1 the result is the plain greedy.
    seed : int
        Key for the per-pair sampling draws.
    mask : ndarray, shape (n_tasks, n_agents)
        Explicit sampling outcomes; overrides `p`/`seed` draws.

    Returns
    -------
    RunResult
    """
    start_time = time.perf_counter()
    oracle = as_oracle(problem)
    if matroid is None:
        matroid = oracle.matroid()
    p = check_probability(p)
    if mask is None:
        mask = sample_mask(seed, matroid.n_tasks, matroid.n_agents, p)

    sampled = [pair for pair in matroid.ground_set() if mask[pair.task, pair.agent]]
    start_calls = oracle.calls
    bundles = {agent: [] for agent in range(matroid.n_agents)}
    values = {agent: 0.0 for agent in range(matroid.n_agents)}
    solution = []
    taken = set()
    retired = set()
    history = []
    total = 0.0

    while True:
        best = None
        best_key = None
        evaluated = set()
        improving = set()
        for pair in sampled:
            if pair.agent in retired:
                continue
            # S + {pair} is independent iff the task is still free.
            if pair.task in taken:
                continue
            evaluated.add(pair.agent)
            value, new_bundle = oracle.extend(pair.agent, bundles[pair.agent], pair.task)
            gain = value - values[pair.agent]
            if gain > 0.0:
                improving.add(pair.agent)
                key = bid_key(gain, pair.agent, pair.task)
                if best_key is None or key < best_key:
                    best_key = key
                    best = (pair, gain, value, new_bundle)
        retired |= evaluated - improving
        if best is None:
            break
        pair, gain, value, new_bundle = best
        solution.append(pair)
        taken.add(pair.task)
        bundles[pair.agent] = new_bundle
        values[pair.agent] = value
        total += gain
        history.append(total)
        logger.debug("Selected pair %s with gain %g", pair, gain)

    assert matroid.is_independent(solution)

    return _finish(
        oracle, bundles, start_calls, start_time, len(solution), seed, p, algorithm, history
    )


def centralized_dsta(
    problem: Scenario | ValueOracle,
    p: float = 0.5,
    seed: int = 0,
    mask: np.ndarray = None,
) -> RunResult:
    """Centralized DSTA: per-agent samples, per-agent best bids, global winner.

    Each round every agent proposes its best positive-gain sampled task; the
    best bid wins, the winner adds the task to its bundle, and every agent drops
    the task from its sample. The loop ends when no agent can bid.
    """
    start_time = time.perf_counter()
    oracle = as_oracle(problem)
    p = check_probability(p)
    n_tasks = oracle.n_tasks
    n_agents = oracle.n_agents
    if mask is None:
        mask = sample_mask(seed, n_tasks, n_agents, p)

    samples = {
        agent: {task for task in range(n_tasks) if mask[task, agent]}
        for agent in range(n_agents)
    }
    start_calls = oracle.calls
    bundles = {agent: [] for agent in range(n_agents)}
    values = {agent: 0.0 for agent in range(n_agents)}
    retired = set()
    history = []
    total = 0.0
    rounds = 0

    while True:
        bids = []
        for agent in range(n_agents):
            if agent in retired or not samples[agent]:
                continue
            best = None
            for task in sorted(samples[agent]):
                value, new_bundle = oracle.extend(agent, bundles[agent], task)
                gain = value - values[agent]
                if best is None or (-gain, task) < (-best[0], best[1]):
                    best = (gain, task, value, new_bundle)
            if best[0] > 0.0:
                bids.append((agent,) + best)
            else:
                retired.add(agent)
        if not bids:
            break
        winner, gain, task, value, new_bundle = min(
            bids, key=lambda bid: bid_key(bid[1], bid[0], bid[2])
        )
        bundles[winner] = new_bundle
        values[winner] = value
        for agent in range(n_agents):
            samples[agent].discard(task)
        total += gain
        history.append(total)
        rounds += 1
        logger.debug("Round %d: agent %d wins task %d (gain %g)", rounds, winner, task, gain)

    return _finish(
        oracle, bundles, start_calls, start_time, rounds, seed, p, "dsta-central", history
    )


def sequential_greedy(problem: Scenario | ValueOracle) -> RunResult:
    """Deterministic greedy over all pairs (sample greedy with p = 1)."""
    return sample_greedy(problem, p=1.0, seed=0, algorithm="greedy")


def brute_force_optimal(
    problem: Scenario | ValueOracle,
    max_ground: int = 24,
    max_order: int = 6,
) -> RunResult:
    """Exact optimum over all conflict-free allocations by enumeration.

    Each task goes to one of the agents or stays unassigned, so there are
    (n_agents + 1)^n_tasks assignments. For order-sensitive objectives each
    bundle is additionally maximized over all visiting orders.

    Parameters
    ----------
    problem : Scenario or ValueOracle
        The objective.
    max_ground : int
        Refuse instances with (n_agents + 1)^n_tasks > 2^max_ground.
    max_order : int
        Largest bundle whose orders are enumerated (order-sensitive objectives only).

    Returns
    -------
    RunResult
    """
    start_time = time.perf_counter()
    oracle = as_oracle(problem)
    n_tasks = oracle.n_tasks
    n_agents = oracle.n_agents
    log_size = n_tasks * math.log2(n_agents + 1)
    if log_size > max_ground:
        raise SizeError(
            f"Instance too large for brute force: (n_agents + 1)^n_tasks = "
            f"{n_agents + 1}^{n_tasks} > 2^{max_ground}"
        )
    if oracle.order_sensitive and n_tasks > max_order and n_agents >= 1:
        raise SizeError(
            f"Bundles of up to {n_tasks} tasks exceed the order-enumeration limit {max_order}"
        )

    start_calls = oracle.calls
    best_bundle = {}

    def bundle_value(agent: AgentId, tasks: tuple[TaskId, ...]) -> tuple[float, list[TaskId]]:
        key = (agent, tasks)
        if key not in best_bundle:
            if len(tasks) == 0:
                best_bundle[key] = (0.0, [])
            elif oracle.order_sensitive:
                best = (-math.inf, None)
                for order in itertools.permutations(tasks):
                    value = oracle(agent, list(order))
                    if value > best[0]:
                        best = (value, list(order))
                best_bundle[key] = best
            else:
                best_bundle[key] = (oracle(agent, list(tasks)), list(tasks))
        return best_bundle[key]

    best_total = -math.inf
    best_bundles = None
    for assignment in itertools.product(range(-1, n_agents), repeat=n_tasks):
        groups = {agent: [] for agent in range(n_agents)}
        for task, agent in enumerate(assignment):
            if agent >= 0:
                groups[agent].append(task)
        total = 0.0
        bundles = {}
        for agent in range(n_agents):
            value, order = bundle_value(agent, tuple(groups[agent]))
            total += value
            bundles[agent] = order
        if total > best_total:
            best_total = total
            best_bundles = bundles

    return _finish(
        oracle, best_bundles, start_calls, start_time, 0, 0, 1.0, "brute", [best_total]
    )


def run_algorithm(
    name: str,
    problem: Scenario | ValueOracle,
    p: float = 0.5,
    seed: int = 0,
    **kws,
) -> RunResult:
    """Dispatch by algorithm name.

    Names: "dsta" (decentralized, needs `graph` in `kws` or uses a complete graph),
    "dsta-central", "sample-greedy", "greedy", "brute".
    """
    if name == "dsta":
        from .consensus import CommGraph
        from .consensus import decentralized_dsta

        oracle = as_oracle(problem)
        graph = kws.pop("graph", None)
        if graph is None:
            graph = CommGraph.complete(oracle.n_agents)
        return decentralized_dsta(oracle, graph, p=p, master_seed=seed, **kws)
    if name == "dsta-central":
        return centralized_dsta(problem, p=p, seed=seed)
    if name == "sample-greedy":
        return sample_greedy(problem, p=p, seed=seed)
    if name == "greedy":
        result = sequential_greedy(problem)
        result.seed = seed
        return result
    if name == "brute":
        result = brute_force_optimal(problem, **kws)
        result.seed = seed
        return result
    raise ValueError(f"Invalid algorithm '{name}'")


ALGORITHMS = ("dsta", "dsta-central", "sample-greedy", "greedy", "brute")
SAMPLING_ALGORITHMS = ("dsta", "dsta-central", "sample-greedy")
