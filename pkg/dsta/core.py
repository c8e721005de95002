"""Ground set, partition matroid, allocations and value oracles."""

import itertools
import logging
from dataclasses import dataclass
from typing import Callable
from typing import Iterable
from typing import Sequence

import numpy as np

from .errors import DomainError
from .errors import OracleError
from .errors import PreconditionError
from .utils import tolerance


logger = logging.getLogger(__name__)


TaskId = int
AgentId = int


@dataclass(frozen=True, order=True)
class TaskAgentPair:
    task: TaskId
    agent: AgentId


class PartitionMatroid:
    """Partition matroid over task-agent pairs with one partition per task.

    A set of pairs is independent iff no two pairs share a task (capacity 1).
    """

    def __init__(self, n_tasks: int, n_agents: int) -> None:
        if n_tasks < 0 or n_agents < 0:
            raise DomainError("Number of tasks and agents must be non-negative.")
        self.n_tasks = n_tasks
        self.n_agents = n_agents
        self.size = n_tasks * n_agents

    def ground_set(self) -> list[TaskAgentPair]:
        """All pairs in ascending (task, agent) order."""
        return [
            TaskAgentPair(task, agent)
            for task in range(self.n_tasks)
            for agent in range(self.n_agents)
        ]

    def partition(self, task: TaskId) -> list[TaskAgentPair]:
        self.check_task(task)
        return [TaskAgentPair(task, agent) for agent in range(self.n_agents)]

    def check_task(self, task: TaskId) -> None:
        if not (0 <= task < self.n_tasks):
            raise DomainError(f"Unknown task {task}")

    def contains(self, pair: TaskAgentPair) -> bool:
        return (0 <= pair.task < self.n_tasks) and (0 <= pair.agent < self.n_agents)

    def is_independent(self, pairs: Iterable[TaskAgentPair]) -> bool:
        seen = set()
        independent = True
        for pair in pairs:
            if not self.contains(pair):
                raise DomainError(f"Pair {pair} is not in the ground set")
            if pair.task in seen:
                independent = False
            seen.add(pair.task)
        return independent

    def __repr__(self) -> str:
        return f"PartitionMatroid(n_tasks={self.n_tasks}, n_agents={self.n_agents})"


def is_independent(matroid: PartitionMatroid, pairs: Iterable[TaskAgentPair]) -> bool:
    return matroid.is_independent(pairs)


class Allocation:
    """Conflict-free mapping from agents to ordered task sequences."""

    def __init__(self, n_agents: int, bundles: dict[AgentId, Sequence[TaskId]] = None) -> None:
        self.n_agents = n_agents
        self.bundles = {agent: [] for agent in range(n_agents)}
        self._owner = {}
        if bundles is not None:
            for agent, bundle in bundles.items():
                for task in bundle:
                    self.add(agent, task)

    def add(self, agent: AgentId, task: TaskId, position: int = None) -> None:
        if not (0 <= agent < self.n_agents):
            raise DomainError(f"Unknown agent {agent}")
        if task in self._owner:
            raise PreconditionError(
                f"Task {task} already allocated to agent {self._owner[task]}"
            )
        if position is None:
            self.bundles[agent].append(task)
        else:
            self.bundles[agent].insert(position, task)
        self._owner[task] = agent

    def set_bundle(self, agent: AgentId, bundle: Sequence[TaskId]) -> None:
        """Replace an agent's bundle with `bundle`, releasing the tasks it held."""
        for task in self.bundles[agent]:
            del self._owner[task]
        self.bundles[agent] = []
        for task in bundle:
            self.add(agent, task)

    def owner(self, task: TaskId) -> AgentId | None:
        return self._owner.get(task)

    def tasks(self) -> set[TaskId]:
        return set(self._owner)

    def pairs(self) -> list[TaskAgentPair]:
        return sorted(TaskAgentPair(task, agent) for task, agent in self._owner.items())

    def copy(self) -> "Allocation":
        return Allocation(self.n_agents, self.bundles)

    def as_dict(self) -> dict[AgentId, list[TaskId]]:
        return {agent: list(bundle) for agent, bundle in self.bundles.items()}

    def __len__(self) -> int:
        return len(self._owner)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Allocation):
            return NotImplemented
        return self.as_dict() == other.as_dict()

    def __repr__(self) -> str:
        return f"Allocation({self.as_dict()})"


class EvalCounter:
    """Monotone counter of value-oracle calls."""

    def __init__(self) -> None:
        self.count = 0

    def increment(self, k: int = 1) -> None:
        if k < 0:
            raise ValueError("Counter increments must be non-negative.")
        self.count += k

    def __repr__(self) -> str:
        return f"EvalCounter(count={self.count})"


class ValueOracle:
    """Per-agent set-function oracle f_a(S) with call counting.

    Subclasses implement `value`. Calling the oracle counts one evaluation and
    checks normalization (f(∅) = 0) and, unless `check=False`, non-negativity.
    """

    monotone = False
    order_sensitive = False

    def __init__(self, n_tasks: int, n_agents: int, check: bool = True) -> None:
        self.n_tasks = n_tasks
        self.n_agents = n_agents
        self.check = check
        self.counter = EvalCounter()

    @property
    def calls(self) -> int:
        return self.counter.count

    def value(self, agent: AgentId, bundle: Sequence[TaskId]) -> float:
        raise NotImplementedError

    def __call__(self, agent: AgentId, bundle: Sequence[TaskId]) -> float:
        self.counter.increment()
        value = self.value(agent, bundle)
        if len(bundle) == 0 and value != 0.0:
            raise OracleError(f"Oracle is not normalized: f(∅) = {value} for agent {agent}")
        if self.check and value < 0.0:
            raise OracleError(f"Oracle returned negative value {value} for agent {agent}")
        return value

    def extend(
        self, agent: AgentId, bundle: Sequence[TaskId], task: TaskId
    ) -> tuple[float, list[TaskId]]:
        """Return (f(bundle + task), new bundle). Appends by default."""
        new_bundle = list(bundle) + [task]
        return (self(agent, new_bundle), new_bundle)

    def gain(self, agent: AgentId, bundle: Sequence[TaskId], task: TaskId) -> float:
        """Uncounted f(bundle + [task]) - f(bundle), with `task` appended."""
        return self.value(agent, list(bundle) + [task]) - self.value(agent, bundle)

    def total(self, allocation: Allocation) -> float:
        """Global objective F(S) = sum_a f_a(S_a), uncounted."""
        return float(
            sum(self.value(agent, bundle) for agent, bundle in allocation.bundles.items())
        )

    def matroid(self) -> PartitionMatroid:
        return PartitionMatroid(self.n_tasks, self.n_agents)


class ModularOracle(ValueOracle):
    """f_a(S) = sum of weights[j, a] over j in S."""

    monotone = True

    def __init__(self, weights: np.ndarray, check: bool = True) -> None:
        weights = np.asarray(weights, dtype=float)
        if weights.ndim != 2:
            raise DomainError("Weights must have shape (n_tasks, n_agents).")
        super().__init__(weights.shape[0], weights.shape[1], check=check)
        self.weights = weights
        self._weights = weights.tolist()

    def value(self, agent: AgentId, bundle: Sequence[TaskId]) -> float:
        return float(sum(self._weights[task][agent] for task in bundle))


class SetFunctionOracle(ValueOracle):
    """Wrap a plain function `func(agent, bundle) -> float`."""

    def __init__(
        self,
        func: Callable[[AgentId, Sequence[TaskId]], float],
        n_tasks: int,
        n_agents: int,
        monotone: bool = False,
        check: bool = True,
    ) -> None:
        super().__init__(n_tasks, n_agents, check=check)
        self.func = func
        self.monotone = monotone

    def value(self, agent: AgentId, bundle: Sequence[TaskId]) -> float:
        return float(self.func(agent, bundle))


def marginal_gain(
    oracle: ValueOracle,
    agent: AgentId,
    task: TaskId,
    bundle: Sequence[TaskId],
    base_value: float = None,
) -> float:
    """Return Δf_a(task | bundle) = f_a(bundle ∪ {task}) - f_a(bundle).

    Parameters
    ----------
    oracle : ValueOracle
        The value oracle.
    agent, task : int
        The element (task, agent) whose gain is computed.
    bundle : sequence[int]
        The agent's current bundle.
    base_value : float
        Cached f_a(bundle). If None, it is evaluated (one extra counted call).

    Returns
    -------
    float
        The marginal gain. For order-sensitive oracles the extended bundle is the
        one chosen by `oracle.extend`.
    """
    if task in bundle:
        raise PreconditionError(f"Task {task} is already in the bundle {list(bundle)}")
    if base_value is None:
        base_value = oracle(agent, bundle)
    value, _ = oracle.extend(agent, bundle, task)
    return value - base_value


# Property samplers
# --------------------------------------------------------------------------------------


@dataclass
class PropertyReport:
    trials: int
    violations: int
    worst_gap: float

    @property
    def passed(self) -> bool:
        return self.violations == 0


def _draw_nested(
    rng: np.random.Generator, ground: list[TaskId]
) -> tuple[list[TaskId], list[TaskId], TaskId]:
    """Draw ordered A ⊆ B and u ∉ B from the ground set.

    A is a prefix of B, and u is appended at the end, so objectives that depend
    on bundle order are compared under end-appends.
    """
    order = [ground[i] for i in rng.permutation(len(ground))]
    u = order[0]
    rest = order[1:]
    size_b = int(rng.integers(0, len(rest) + 1))
    size_a = int(rng.integers(0, size_b + 1))
    B = rest[:size_b]
    A = B[:size_a]
    return (A, B, u)


def sample_submodularity(
    oracle: ValueOracle,
    ground: Sequence[TaskId],
    trials: int,
    seed: int = None,
    agent: AgentId = 0,
) -> PropertyReport:
    """Check diminishing returns Δf(u|A) >= Δf(u|B) on random A ⊆ B, u ∉ B.

    `worst_gap` is the largest observed Δf(u|B) - Δf(u|A); a positive value
    beyond `tolerance(Δf(u|A), Δf(u|B))` is a violation. Gains come from
    `oracle.gain`, which subclasses may compute without differencing totals.
    """
    if trials < 1:
        raise ValueError("Number of trials must be >= 1.")
    ground = list(ground)
    rng = np.random.default_rng(seed)
    violations = 0
    worst_gap = -np.inf
    if len(ground) == 0:
        return PropertyReport(trials=trials, violations=0, worst_gap=0.0)
    for _ in range(trials):
        A, B, u = _draw_nested(rng, ground)
        gain_A = oracle.gain(agent, A, u)
        gain_B = oracle.gain(agent, B, u)
        gap = gain_B - gain_A
        worst_gap = max(worst_gap, gap)
        if gap > tolerance(gain_A, gain_B):
            violations += 1
            logger.debug("Submodularity violated: A=%s B=%s u=%s gap=%g", A, B, u, gap)
    return PropertyReport(trials=trials, violations=violations, worst_gap=float(worst_gap))


def sample_monotonicity(
    oracle: ValueOracle,
    ground: Sequence[TaskId],
    trials: int,
    seed: int = None,
    agent: AgentId = 0,
) -> PropertyReport:
    """Check f(A) <= f(B) on random A ⊆ B (A a prefix of B).

    `worst_gap` is the largest observed f(A) - f(B).
    """
    if trials < 1:
        raise ValueError("Number of trials must be >= 1.")
    ground = list(ground)
    rng = np.random.default_rng(seed)
    violations = 0
    worst_gap = -np.inf
    if len(ground) == 0:
        return PropertyReport(trials=trials, violations=0, worst_gap=0.0)
    for _ in range(trials):
        A, B, u = _draw_nested(rng, ground)
        B = B + [u]
        value_A = oracle.value(agent, A)
        value_B = oracle.value(agent, B)
        gap = value_A - value_B
        worst_gap = max(worst_gap, gap)
        if gap > tolerance(value_A, value_B):
            violations += 1
            logger.debug("Monotonicity violated: A=%s B=%s gap=%g", A, B, gap)
    return PropertyReport(trials=trials, violations=violations, worst_gap=float(worst_gap))


def check_matroid_axioms(matroid: PartitionMatroid) -> list[str]:
    """Exhaustively check the matroid axioms; return the names of failed axioms.

    Enumerates all 2^n subsets of the ground set, so only for small matroids.
    """
    ground = matroid.ground_set()
    if len(ground) > 16:
        raise ValueError("Ground set too large for exhaustive enumeration.")
    independent = []
    for mask in range(2 ** len(ground)):
        subset = frozenset(ground[i] for i in range(len(ground)) if mask >> i & 1)
        if matroid.is_independent(subset):
            independent.append(subset)
    family = set(independent)

    failures = []
    if frozenset() not in family:
        failures.append("empty")
    for B in independent:
        for k in range(len(B)):
            if any(frozenset(A) not in family for A in itertools.combinations(B, k)):
                failures.append("downward-closed")
                break
        else:
            continue
        break
    for A in independent:
        for B in independent:
            if len(A) < len(B) and not any((A | {b}) in family for b in B - A):
                failures.append("exchange")
                return failures
    return failures
