"""Decentralized DSTA over a simulated synchronous network.

Each agent holds only its own sample, bundle and inbox and evaluates only its
own utility. Agents agree on the round winner by max-consensus: for
diameter(graph) synchronous rounds, every agent whose best-known bid changed
forwards it to its neighbours. After that many rounds every agent holds the
global best bid.
"""

import json
import logging
import time
from dataclasses import dataclass
from dataclasses import field
from typing import Iterable

import networkx as nx
import numpy as np

from .algorithms import RunResult
from .algorithms import as_oracle
from .algorithms import bid_key
from .algorithms import oracle_mode
from .core import AgentId
from .core import Allocation
from .core import TaskId
from .core import ValueOracle
from .errors import ConfigurationError
from .utility import Scenario
from .utils import check_probability
from .utils import pair_uniform


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BidMessage:
    agent: AgentId
    task: TaskId
    gain: float

    def __post_init__(self) -> None:
        if not self.gain > 0.0:
            raise ValueError(f"Bids must have positive gain, got {self.gain}")

    def key(self) -> tuple[float, int, int]:
        return bid_key(self.gain, self.agent, self.task)


def better_bid(a: BidMessage | None, b: BidMessage | None) -> BidMessage | None:
    """Best of two bids: larger gain, then smaller agent id, then smaller task id."""
    if a is None:
        return b
    if b is None:
        return a
    return a if a.key() <= b.key() else b


@dataclass
class AgentState:
    id: AgentId
    samples: set[TaskId] = field(default_factory=set)
    bundle: list[TaskId] = field(default_factory=list)
    value: float = 0.0
    current_bid: BidMessage | None = None
    held: BidMessage | None = None
    inbox: list[BidMessage] = field(default_factory=list)
    outbox: list[tuple[AgentId, BidMessage]] = field(default_factory=list)
    bidding: bool = True
    changed: bool = False
    sent: int = 0
    pending: tuple[float, list[TaskId]] = None


class CommGraph:
    """Undirected, connected communication graph over agents 0..n-1."""

    def __init__(self, graph: nx.Graph) -> None:
        n = graph.number_of_nodes()
        if n == 0:
            raise ConfigurationError("Communication graph has no agents.")
        if set(graph.nodes) != set(range(n)):
            raise ConfigurationError("Graph nodes must be agents 0..n-1.")
        if not nx.is_connected(graph):
            raise ConfigurationError("Communication graph is not connected.")
        self.graph = graph
        self.n_agents = n
        self.diameter = nx.diameter(graph) if n > 1 else 0
        self.n_edges = graph.number_of_edges()
        self._neighbors = {node: sorted(graph.neighbors(node)) for node in graph.nodes}

    def neighbors(self, agent: AgentId) -> list[AgentId]:
        return self._neighbors[agent]

    @classmethod
    def complete(cls, n: int) -> "CommGraph":
        return cls(nx.complete_graph(n))

    @classmethod
    def line(cls, n: int) -> "CommGraph":
        return cls(nx.path_graph(n))

    @classmethod
    def ring(cls, n: int) -> "CommGraph":
        if n < 3:
            return cls.line(n)
        return cls(nx.cycle_graph(n))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]]) -> "CommGraph":
        graph = nx.Graph()
        graph.add_nodes_from(range(n))
        graph.add_edges_from(edges)
        return cls(graph)

    @classmethod
    def from_file(cls, path: str, n: int) -> "CommGraph":
        """Read a whitespace-separated edge list ("i j" per line, '#' comments)."""
        graph = nx.read_edgelist(path, nodetype=int, comments="#", data=False)
        graph.add_nodes_from(range(n))
        return cls(graph)

    @classmethod
    def geometric(cls, positions: np.ndarray, radius: float) -> "CommGraph":
        """Connect agents closer than `radius` (same units as `positions`)."""
        pos = {i: tuple(positions[i]) for i in range(len(positions))}
        return cls(nx.random_geometric_graph(len(positions), radius, pos=pos))

    @classmethod
    def from_name(cls, name: str, n: int, path: str = None, **kws) -> "CommGraph":
        constructors = {
            "complete": cls.complete,
            "ring": cls.ring,
            "line": cls.line,
        }
        if name == "file":
            if path is None:
                raise ConfigurationError("Graph type 'file' needs an edge-list path.")
            return cls.from_file(path, n)
        if name == "geometric":
            return cls.geometric(kws["positions"], kws["radius"])
        if name not in constructors:
            raise ConfigurationError(f"Invalid graph type '{name}'")
        return constructors[name](n)

    def __repr__(self) -> str:
        return f"CommGraph(n_agents={self.n_agents}, n_edges={self.n_edges}, diameter={self.diameter})"


class ConsensusTrace:
    """Line-delimited run trace: round, agent, event, payload."""

    EVENTS = ("sample", "bid", "forward", "win", "drop")

    def __init__(self) -> None:
        self.records = []

    def log(self, round: int, agent: AgentId, event: str, **payload) -> None:
        if event not in self.EVENTS:
            raise ValueError(f"Invalid trace event '{event}'")
        self.records.append({"round": round, "agent": agent, "event": event, "payload": payload})

    def events(self, event: str) -> list[dict]:
        return [record for record in self.records if record["event"] == event]

    def lines(self) -> list[str]:
        return [json.dumps(record, sort_keys=True) for record in self.records]

    def write(self, path: str) -> None:
        with open(path, "w") as file:
            for line in self.lines():
                file.write(line + "\n")


def local_sample(agent: AgentId, tasks: Iterable[TaskId], p: float, master_seed: int) -> set[TaskId]:
    """Tasks sampled by one agent; the same keyed draws as the centralized runs."""
    p = check_probability(p)
    if p >= 1.0:
        return set(tasks)
    return {task for task in tasks if pair_uniform(master_seed, task, agent) < p}


def local_best(state: AgentState, oracle: ValueOracle) -> BidMessage | None:
    """Best positive-gain sampled task for this agent, or None.

    Ties go to the smaller task id. The extended bundle of the best task is kept
    in `state.pending` so the agent can commit it if it wins.
    """
    best = None
    for task in sorted(state.samples):
        value, new_bundle = oracle.extend(state.id, state.bundle, task)
        gain = value - state.value
        if best is None or (-gain, task) < (-best[0], best[1]):
            best = (gain, task, value, new_bundle)
    if best is None or not best[0] > 0.0:
        state.current_bid = None
        state.pending = None
        return None
    gain, task, value, new_bundle = best
    state.current_bid = BidMessage(agent=state.id, task=task, gain=gain)
    state.pending = (value, new_bundle)
    return state.current_bid


def max_consensus(
    states: list[AgentState],
    graph: CommGraph,
    bids: dict[AgentId, BidMessage | None],
    trace: ConsensusTrace = None,
    round: int = 0,
) -> BidMessage | None:
    """Flood the best bid for diameter(graph) synchronous rounds.

    Returns the agreed winning bid, or None if nobody bid (global termination).
    """
    for state in states:
        state.held = bids.get(state.id)
        state.changed = state.held is not None
        state.inbox = []

    # One message per direction of an edge per step at most.
    max_messages = 2 * graph.n_edges * graph.diameter
    messages = 0
    for step in range(graph.diameter):
        for state in states:
            state.outbox = []
            if not state.changed:
                continue
            for neighbor in graph.neighbors(state.id):
                state.outbox.append((neighbor, state.held))
                state.sent += 1
            messages += len(state.outbox)
            if trace is not None:
                trace.log(round, state.id, "forward", step=step, agent_bid=state.held.agent,
                          task=state.held.task, gain=state.held.gain)
        for state in states:
            for neighbor, message in state.outbox:
                states[neighbor].inbox.append(message)
            state.outbox = []
        for state in states:
            best = state.held
            for message in state.inbox:
                best = better_bid(best, message)
            state.changed = best != state.held
            state.held = best
            state.inbox = []

    if messages > max_messages:
        raise RuntimeError(f"Max-consensus sent {messages} messages, bound is {max_messages}")
    winners = {state.held for state in states}
    if len(winners) != 1:
        raise RuntimeError(f"Max-consensus did not converge: {winners}")
    return winners.pop()


def decentralized_dsta(
    problem: Scenario | ValueOracle,
    graph: CommGraph,
    p: float = 0.5,
    master_seed: int = 0,
    trace: ConsensusTrace = None,
) -> RunResult:
    """Run DSTA agent by agent with max-consensus negotiation.

    Parameters
    ----------
    problem : Scenario or ValueOracle
        The per-agent utilities.
    graph : CommGraph
        Connected communication graph over the agents.
    p : float
        Sampling probability in (0, 1].
    master_seed : int
        Key for the per-pair sampling draws (shared with the centralized runs).
    trace : ConsensusTrace
        Optional event recorder.

    Returns
    -------
    RunResult
        Includes per-agent message counts (`messages`) and the number of
        synchronous consensus rounds (`consensus_rounds`).
    """
    start_time = time.perf_counter()
    oracle = as_oracle(problem)
    p = check_probability(p)
    if graph.n_agents != oracle.n_agents:
        raise ConfigurationError(
            f"Graph has {graph.n_agents} agents but the problem has {oracle.n_agents}"
        )

    tasks = range(oracle.n_tasks)
    states = [
        AgentState(id=agent, samples=local_sample(agent, tasks, p, master_seed))
        for agent in range(oracle.n_agents)
    ]
    if trace is not None:
        for state in states:
            trace.log(0, state.id, "sample", tasks=sorted(state.samples))

    start_calls = oracle.calls
    history = []
    total = 0.0
    rounds = 0
    consensus_rounds = 0

    while True:
        bids = {}
        for state in states:
            if not state.bidding:
                continue
            if not state.samples:
                continue
            bid = local_best(state, oracle)
            if bid is None:
                # Bundle is frozen from now on; the agent only relays.
                state.bidding = False
                continue
            bids[state.id] = bid
            if trace is not None:
                trace.log(rounds, state.id, "bid", task=bid.task, gain=bid.gain)

        winner = max_consensus(states, graph, bids, trace=trace, round=rounds)
        consensus_rounds += graph.diameter
        if winner is None:
            break

        for state in states:
            if state.id == winner.agent:
                value, new_bundle = state.pending
                state.bundle = new_bundle
                state.value = value
                state.samples.discard(winner.task)
                if trace is not None:
                    trace.log(rounds, state.id, "win", task=winner.task, gain=winner.gain)
            elif winner.task in state.samples:
                state.samples.discard(winner.task)
                if trace is not None:
                    trace.log(rounds, state.id, "drop", task=winner.task)
            else:
                logger.debug("Agent %d: winning task %d not sampled, no action", state.id, winner.task)

        # Conflict-freedom and sample hygiene after every negotiation.
        Allocation(oracle.n_agents, {state.id: state.bundle for state in states})
        assert all(winner.task not in state.samples for state in states)

        total += winner.gain
        history.append(total)
        rounds += 1
        logger.debug("Round %d: agent %d wins task %d", rounds, winner.agent, winner.task)

    allocation = Allocation(oracle.n_agents, {state.id: state.bundle for state in states})
    return RunResult(
        allocation=allocation,
        total_value=oracle.total(allocation),
        oracle_calls=oracle.calls - start_calls,
        rounds=rounds,
        seed=master_seed,
        p=p,
        algorithm="dsta",
        mode=oracle_mode(oracle),
        n_tasks=oracle.n_tasks,
        n_agents=oracle.n_agents,
        wall_time_ms=1000.0 * (time.perf_counter() - start_time),
        history=history,
        messages={state.id: state.sent for state in states},
        consensus_rounds=consensus_rounds,
    )
