"""Surveillance scenarios and their utility functions.

Two objectives are provided. The monotone path utility discounts the static
score of each task by its arrival distance along the agent's path. The
non-monotone surveillance utility weighs the expected mission value by the
survival probability of the agent and subtracts pairwise penalties between
tasks in the same bundle.
"""

import json
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.spatial.distance

from .core import AgentId
from .core import TaskId
from .core import ValueOracle
from .errors import ConfigurationError
from .errors import PreconditionError
from .utils import file_digest


logger = logging.getLogger(__name__)

MONOTONE = "monotone"
NONMONOTONE = "nonmonotone"
MODES = (MONOTONE, NONMONOTONE)

SCENARIO_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Task:
    id: TaskId
    position: tuple[float, float]
    sigma: float = 1.0
    b: float = 1.0
    discount: float = 0.95


@dataclass(frozen=True)
class Agent:
    id: AgentId
    position: tuple[float, float]
    P0: float
    alpha: float = 1.0
    lambda_scale: float = 0.01
    fitness: tuple[float, ...] = ()


def normalize_mode(mode: str) -> str:
    mode = mode.replace("-", "").replace("_", "").lower()
    if mode not in MODES:
        raise ConfigurationError(f"Invalid mode '{mode}'; expected one of {MODES}")
    return mode


@dataclass(frozen=True, eq=False)
class Scenario:
    """Tasks and agents placed on a W x W world (km)."""

    tasks: tuple[Task, ...]
    agents: tuple[Agent, ...]
    mode: str
    world_size: float = 10.0
    seed: int = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", normalize_mode(self.mode))
        for i, task in enumerate(self.tasks):
            if task.id != i:
                raise ConfigurationError("Task ids must be dense from 0.")
            if task.sigma <= 0.0 or not (0.0 < task.discount < 1.0):
                raise ConfigurationError(f"Invalid parameters for task {task.id}")
        for i, agent in enumerate(self.agents):
            if agent.id != i:
                raise ConfigurationError("Agent ids must be dense from 0.")
            if len(agent.fitness) != len(self.tasks):
                raise ConfigurationError(f"Fitness row of agent {i} has wrong length.")
            if any(m < 0.0 for m in agent.fitness):
                raise ConfigurationError(f"Negative fitness for agent {i}")

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @cached_property
    def task_positions(self) -> np.ndarray:
        return np.array([task.position for task in self.tasks], dtype=float).reshape(-1, 2)

    @cached_property
    def agent_positions(self) -> np.ndarray:
        return np.array([agent.position for agent in self.agents], dtype=float).reshape(-1, 2)

    @cached_property
    def task_distances(self) -> np.ndarray:
        """Euclidean task-task distances, shape (n_tasks, n_tasks)."""
        return scipy.spatial.distance.cdist(self.task_positions, self.task_positions)

    @cached_property
    def agent_distances(self) -> np.ndarray:
        """Euclidean agent-task distances, shape (n_agents, n_tasks)."""
        return scipy.spatial.distance.cdist(self.agent_positions, self.task_positions)

    @cached_property
    def distance_rows(self) -> tuple[list[list[float]], list[list[float]]]:
        """Agent-task and task-task distances as nested lists, for scalar lookups."""
        return (self.agent_distances.tolist(), self.task_distances.tolist())

    @cached_property
    def sigma(self) -> np.ndarray:
        return np.array([task.sigma for task in self.tasks], dtype=float)

    @cached_property
    def penalties(self) -> np.ndarray:
        """Inter-task penalty matrix d_ij = exp(sigma_i * sigma_j)."""
        return np.exp(np.outer(self.sigma, self.sigma))

    @cached_property
    def fitness(self) -> np.ndarray:
        """Task-agent fitness m_aj, shape (n_agents, n_tasks)."""
        return np.array([agent.fitness for agent in self.agents], dtype=float).reshape(
            self.n_agents, self.n_tasks
        )

    def oracle(self, **kws) -> ValueOracle:
        return get_utility(self, **kws)


def _check_bundle(bundle: Sequence[TaskId]) -> None:
    if len(set(bundle)) != len(bundle):
        raise PreconditionError(f"Duplicate task in bundle {list(bundle)}")


# Monotone path utility
# --------------------------------------------------------------------------------------


def _path_value(
    d_agent: list[float],
    d_task: list[list[float]],
    tasks: Sequence[Task],
    bundle: Sequence[TaskId],
) -> float:
    value = 0.0
    tau = 0.0
    previous = None
    for task in bundle:
        if previous is None:
            tau += d_agent[task]
        else:
            tau += d_task[previous][task]
        value += tasks[task].discount**tau * tasks[task].b
        previous = task
    return value


def arrival_distances(scenario: Scenario, agent: AgentId, bundle: Sequence[TaskId]) -> list[float]:
    """Cumulative path length from the agent's start to each task, in bundle order."""
    d_agent, d_task = scenario.distance_rows
    taus = []
    tau = 0.0
    previous = None
    for task in bundle:
        tau += d_agent[agent][task] if previous is None else d_task[previous][task]
        taus.append(tau)
        previous = task
    return taus


def monotone_value(scenario: Scenario, agent: AgentId, bundle: Sequence[TaskId]) -> float:
    """Return sum_j lambda_j^tau_j * b_j with tau_j the arrival distance of task j."""
    _check_bundle(bundle)
    d_agent, d_task = scenario.distance_rows
    return _path_value(d_agent[agent], d_task, scenario.tasks, bundle)


def cheapest_insertion_gain(
    scenario: Scenario, agent: AgentId, bundle: Sequence[TaskId], task: TaskId
) -> tuple[float, int]:
    """Best value increase from inserting `task` into the path, and its position.

    Every slot 0..len(bundle) is evaluated; ties go to the smallest index.
    """
    if task in bundle:
        raise PreconditionError(f"Task {task} is already in the bundle {list(bundle)}")
    base = monotone_value(scenario, agent, bundle)
    best_value = -math.inf
    best_position = 0
    for position in range(len(bundle) + 1):
        candidate = list(bundle[:position]) + [task] + list(bundle[position:])
        value = monotone_value(scenario, agent, candidate)
        if value > best_value:
            best_value = value
            best_position = position
    return (best_value - base, best_position)


# Non-monotone surveillance utility
# --------------------------------------------------------------------------------------


def detection_probabilities(agent: Agent, n_max: int) -> np.ndarray:
    """Detection probabilities P_D(0), ..., P_D(n_max).

    P_D(0) = P0 and
    P_D(n) = P_D(n-1) + (1 - P_D(n-1)) * P0 / (1 - alpha (n-1) P0).
    """
    if n_max < 0:
        raise ValueError("Number of tasks must be non-negative.")
    P0 = agent.P0
    alpha = agent.alpha
    if not (0.0 < P0 < 1.0):
        raise ConfigurationError(f"P0 must be in (0, 1), got {P0}")
    values = np.zeros(n_max + 1)
    values[0] = P0
    for n in range(1, n_max + 1):
        denominator = 1.0 - alpha * (n - 1) * P0
        if denominator <= 0.0:
            raise ConfigurationError(
                f"Detection model of agent {agent.id} is invalid at n={n}: "
                f"1 - alpha (n - 1) P0 = {denominator} <= 0"
            )
        step = P0 / denominator
        if step >= 1.0:
            raise ConfigurationError(
                f"Detection model of agent {agent.id} reaches certainty at n={n}."
            )
        values[n] = values[n - 1] + (1.0 - values[n - 1]) * step
    return values


def detection_probability(agent: Agent, n: int) -> float:
    return float(detection_probabilities(agent, n)[n])


def survival_probability(agent: Agent, bundle_size: int) -> float:
    return 1.0 - detection_probability(agent, bundle_size)


def penalty(scenario: Scenario, agent: AgentId, bundle: Sequence[TaskId]) -> float:
    """Sum of d_ij over ordered pairs i != j in the bundle (each unordered pair twice).

    The sum is exactly rounded (`math.fsum`), so it does not depend on bundle order.
    """
    if len(bundle) <= 1:
        return 0.0
    index = np.asarray(bundle, dtype=int)
    block = scenario.penalties[np.ix_(index, index)]
    off_diagonal = block[~np.eye(len(index), dtype=bool)]
    return math.fsum(off_diagonal.tolist())


def nonmonotone_value(
    scenario: Scenario,
    agent: AgentId,
    bundle: Sequence[TaskId],
    clamp: bool = True,
    survival: np.ndarray = None,
) -> float:
    """Return P_S(|T_a|) * sum_j sigma_j m_aj - lambda_a * penalty(T_a).

    Parameters
    ----------
    scenario : Scenario
        The scenario.
    agent : int
        Agent id.
    bundle : sequence[int]
        Task set (order is ignored).
    clamp : bool
        If True, negative values are clamped to zero.
    survival : ndarray
        Precomputed survival probabilities P_S(0..n_tasks) for this agent.
    """
    _check_bundle(bundle)
    if len(bundle) == 0:
        return 0.0
    params = scenario.agents[agent]
    if survival is None:
        p_survive = survival_probability(params, len(bundle))
    else:
        p_survive = survival[len(bundle)]
    weights = scenario.sigma[list(bundle)] * scenario.fitness[agent, list(bundle)]
    value = p_survive * math.fsum(weights.tolist())
    value = value - params.lambda_scale * penalty(scenario, agent, bundle)
    if clamp and value < 0.0:
        return 0.0
    return float(value)


# Oracles
# --------------------------------------------------------------------------------------


class MonotoneUtility(ValueOracle):
    """Path-discounted utility; tasks are inserted at the cheapest path position."""

    monotone = True
    order_sensitive = True

    def __init__(self, scenario: Scenario, check: bool = True) -> None:
        super().__init__(scenario.n_tasks, scenario.n_agents, check=check)
        self.scenario = scenario

    def value(self, agent: AgentId, bundle: Sequence[TaskId]) -> float:
        d_agent, d_task = self.scenario.distance_rows
        return _path_value(d_agent[agent], d_task, self.scenario.tasks, bundle)

    def extend(
        self, agent: AgentId, bundle: Sequence[TaskId], task: TaskId
    ) -> tuple[float, list[TaskId]]:
        best_value = -math.inf
        best_bundle = None
        for position in range(len(bundle) + 1):
            candidate = list(bundle[:position]) + [task] + list(bundle[position:])
            value = self(agent, candidate)
            if value > best_value:
                best_value = value
                best_bundle = candidate
        return (best_value, best_bundle)


class NonMonotoneUtility(ValueOracle):
    """Surveillance utility; negative values are clamped to zero by default."""

    monotone = False

    def __init__(self, scenario: Scenario, clamp: bool = True, check: bool = None) -> None:
        if check is None:
            check = clamp
        super().__init__(scenario.n_tasks, scenario.n_agents, check=check)
        self.scenario = scenario
        self.clamp = clamp
        self.clamped = 0
        self._survival = [
            1.0 - detection_probabilities(agent, scenario.n_tasks)
            for agent in scenario.agents
        ]

    def value(self, agent: AgentId, bundle: Sequence[TaskId]) -> float:
        value = nonmonotone_value(
            self.scenario, agent, bundle, clamp=False, survival=self._survival[agent]
        )
        if self.clamp and value < 0.0:
            self.clamped += 1
            logger.debug("Clamped f_%d(%s) = %g to zero", agent, list(bundle), value)
            return 0.0
        return value

    def gain(self, agent: AgentId, bundle: Sequence[TaskId], task: TaskId) -> float:
        """Unclamped f(bundle + [task]) - f(bundle), expanded term by term.

        With n = |bundle| and W the summed weights of the bundle, the gain is
        P_S(n+1) w_u + (P_S(n+1) - P_S(n)) W - 2 lambda_a sum_j d_uj, so the
        penalties of the bundle itself never enter. Clamped oracles difference
        the clamped values instead.
        """
        if self.clamp:
            return super().gain(agent, bundle, task)
        _check_bundle(list(bundle) + [task])
        survival = self._survival[agent]
        n = len(bundle)
        index = list(bundle)
        weight = self.scenario.sigma[task] * self.scenario.fitness[agent, task]
        weights = self.scenario.sigma[index] * self.scenario.fitness[agent, index]
        coupling = math.fsum(self.scenario.penalties[task, index].tolist())
        gain = survival[n + 1] * weight + (survival[n + 1] - survival[n]) * math.fsum(weights.tolist())
        return float(gain - 2.0 * self.scenario.agents[agent].lambda_scale * coupling)


def get_utility(scenario: Scenario, **kwargs) -> ValueOracle:
    constructors = {
        MONOTONE: MonotoneUtility,
        NONMONOTONE: NonMonotoneUtility,
    }
    constructor = constructors[scenario.mode]
    return constructor(scenario, **kwargs)


# Scenario generation
# --------------------------------------------------------------------------------------


def generate_scenario(
    n_tasks: int,
    n_agents: int,
    mode: str = MONOTONE,
    world_size: float = 10.0,
    seed: int = None,
    alpha: float = 1.0,
    lambda_scale: float = 0.01,
    discount: float = 0.95,
    score: float = 1.0,
    matched_weight: str = "fitness",
) -> Scenario:
    """Generate a random scenario.

    The PCG64 stream is consumed in a fixed order: task positions, agent
    positions, importance factors, then fitness factors.

    Parameters
    ----------
    n_tasks, n_agents : int
        Number of tasks and agents (n_tasks >= n_agents >= 1).
    mode : {"monotone", "nonmonotone"}
        Utility model.
    world_size : float
        Side W of the square world [km].
    seed : int
        Generator seed.
    alpha, lambda_scale : float
        Detection growth rate and penalty scale for every agent.
    discount, score : float
        Discount factor lambda_j and static score b_j for every task.
    matched_weight : {"fitness", "value"}
        How the 0.3 / 0.1 weights of important tasks are read: as fitness m_aj
        ("fitness"), or as the value w_aj = sigma_j m_aj itself ("value").

    Returns
    -------
    Scenario
    """
    mode = normalize_mode(mode)
    if n_agents < 1 or n_tasks < 1:
        raise ConfigurationError("Need at least one task and one agent.")
    if n_agents > n_tasks:
        raise ConfigurationError(f"n_agents ({n_agents}) > n_tasks ({n_tasks})")
    if world_size <= 0.0:
        raise ConfigurationError("World size must be positive.")
    if matched_weight not in ("fitness", "value"):
        raise ConfigurationError(f"Invalid matched_weight '{matched_weight}'")

    rng = np.random.default_rng(seed)
    task_xy = rng.uniform(0.0, world_size, size=(n_tasks, 2))
    agent_xy = rng.uniform(0.0, world_size, size=(n_agents, 2))

    sigma = np.ones(n_tasks)
    fitness = np.ones((n_agents, n_tasks))
    if mode == NONMONOTONE:
        # Tasks 0..n_agents-1 are the important ones; task k suits agent k.
        n_important = n_agents
        sigma[:n_important] = rng.uniform(5.0, 7.0, size=n_important)
        sigma[n_important:] = rng.uniform(0.5, 1.5, size=n_tasks - n_important)
        fitness[:, :n_important] = 0.1
        fitness[np.arange(n_important), np.arange(n_important)] = 0.3
        fitness[:, n_important:] = rng.uniform(0.1, 1.0, size=(n_agents, n_tasks - n_important))
        if matched_weight == "value":
            fitness[:, :n_important] = fitness[:, :n_important] / sigma[None, :n_important]

    P0 = 1.0 / (1.0 + alpha * n_tasks)

    tasks = tuple(
        Task(
            id=j,
            position=(float(task_xy[j, 0]), float(task_xy[j, 1])),
            sigma=float(sigma[j]),
            b=float(score),
            discount=float(discount),
        )
        for j in range(n_tasks)
    )
    agents = tuple(
        Agent(
            id=a,
            position=(float(agent_xy[a, 0]), float(agent_xy[a, 1])),
            P0=P0,
            alpha=float(alpha),
            lambda_scale=float(lambda_scale),
            fitness=tuple(float(m) for m in fitness[a]),
        )
        for a in range(n_agents)
    )
    return Scenario(tasks=tasks, agents=agents, mode=mode, world_size=float(world_size), seed=seed)


# Scenario files
# --------------------------------------------------------------------------------------


def scenario_to_dict(scenario: Scenario) -> dict:
    return {
        "version": SCENARIO_FORMAT_VERSION,
        "mode": scenario.mode,
        "world": scenario.world_size,
        "seed": scenario.seed,
        "tasks": [
            {
                "id": task.id,
                "x": task.position[0],
                "y": task.position[1],
                "sigma": task.sigma,
                "b": task.b,
                "lambda": task.discount,
            }
            for task in scenario.tasks
        ],
        "agents": [
            {
                "id": agent.id,
                "x": agent.position[0],
                "y": agent.position[1],
                "P0": agent.P0,
                "alpha": agent.alpha,
                "lambda_scale": agent.lambda_scale,
                "fitness": list(agent.fitness),
            }
            for agent in scenario.agents
        ],
    }


def scenario_from_dict(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise ConfigurationError(f"Scenario must be a JSON object, got {type(data).__name__}")
    version = data.get("version")
    if version != SCENARIO_FORMAT_VERSION:
        raise ConfigurationError(f"Unsupported scenario format version {version}")
    try:
        tasks = tuple(
            Task(
                id=int(item["id"]),
                position=(float(item["x"]), float(item["y"])),
                sigma=float(item["sigma"]),
                b=float(item["b"]),
                discount=float(item["lambda"]),
            )
            for item in data["tasks"]
        )
        agents = tuple(
            Agent(
                id=int(item["id"]),
                position=(float(item["x"]), float(item["y"])),
                P0=float(item["P0"]),
                alpha=float(item["alpha"]),
                lambda_scale=float(item["lambda_scale"]),
                fitness=tuple(float(m) for m in item["fitness"]),
            )
            for item in data["agents"]
        )
        return Scenario(
            tasks=tasks,
            agents=agents,
            mode=data["mode"],
            world_size=float(data["world"]),
            seed=data.get("seed"),
        )
    except (KeyError, TypeError, ValueError) as exception:
        raise ConfigurationError(f"Malformed scenario: {exception!r}") from exception


def format_float(value: float) -> str:
    """Format a finite float with 17 significant digits."""
    if not math.isfinite(value):
        raise ConfigurationError(f"Scenario values must be finite, got {value}")
    text = format(value, ".17g")
    if not any(char in text for char in ".e"):
        text += ".0"
    return text


def dumps_scenario(data, indent: int = 0) -> str:
    """JSON text with sorted keys and one-space indentation; floats via `format_float`."""
    pad = " " * (indent + 1)
    if isinstance(data, dict):
        if not data:
            return "{}"
        items = [
            f"{pad}{json.dumps(str(key))}: {dumps_scenario(data[key], indent + 1)}"
            for key in sorted(data)
        ]
        return "{\n" + ",\n".join(items) + "\n" + " " * indent + "}"
    if isinstance(data, (list, tuple)):
        if not data:
            return "[]"
        items = [f"{pad}{dumps_scenario(item, indent + 1)}" for item in data]
        return "[\n" + ",\n".join(items) + "\n" + " " * indent + "]"
    if isinstance(data, float):
        return format_float(data)
    return json.dumps(data)


def save_scenario(scenario: Scenario, path: str) -> str:
    """Write the scenario as JSON and return the SHA-256 digest of the file.

    Floats are written with 17 significant digits, which round-trips every double.
    """
    text = dumps_scenario(scenario_to_dict(scenario))
    with open(path, "w") as file:
        file.write(text + "\n")
    return file_digest(path)


def load_scenario(path: str) -> Scenario:
    with open(path, "r") as file:
        data = json.load(file)
    return scenario_from_dict(data)


def scenario_digest(path: str) -> str:
    return file_digest(path)
