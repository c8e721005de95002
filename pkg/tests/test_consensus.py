import json

import numpy as np
import pytest

import dsta
from dsta.consensus import AgentState
from dsta.consensus import BidMessage
from dsta.consensus import CommGraph
from dsta.consensus import ConsensusTrace
from dsta.consensus import decentralized_dsta
from dsta.consensus import local_best
from dsta.consensus import local_sample
from dsta.consensus import max_consensus


def test_comm_graph():
    assert CommGraph.complete(5).diameter == 1
    assert CommGraph.line(5).diameter == 4
    assert CommGraph.ring(6).diameter == 3
    assert CommGraph.complete(1).diameter == 0
    assert CommGraph.complete(4).n_edges == 6
    assert CommGraph.line(3).neighbors(1) == [0, 2]

    with pytest.raises(dsta.ConfigurationError):
        CommGraph.from_edges(4, [(0, 1), (2, 3)])
    with pytest.raises(dsta.ConfigurationError):
        CommGraph.from_name("star", 4)


def test_comm_graph_from_file(tmp_path):
    path = tmp_path / "edges.txt"
    path.write_text("# ring\n0 1\n1 2\n2 3\n3 0\n")
    graph = CommGraph.from_file(str(path), 4)
    assert graph.n_edges == 4
    assert graph.diameter == 2
    assert CommGraph.from_name("file", 4, path=str(path)).n_edges == 4


def test_comm_graph_geometric():
    positions = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    graph = CommGraph.geometric(positions, radius=1.5)
    assert graph.n_edges == 2
    assert graph.diameter == 2
    with pytest.raises(dsta.ConfigurationError):
        CommGraph.geometric(positions, radius=0.5)


def test_bid_message():
    with pytest.raises(ValueError):
        BidMessage(agent=0, task=1, gain=0.0)
    a = BidMessage(agent=2, task=1, gain=1.0)
    b = BidMessage(agent=5, task=0, gain=1.0)
    assert dsta.consensus.better_bid(a, b) == a
    assert dsta.consensus.better_bid(None, b) == b
    assert dsta.consensus.better_bid(BidMessage(agent=5, task=0, gain=2.0), a).agent == 5


def test_local_sample():
    tasks = range(30)
    assert local_sample(3, tasks, 1.0, master_seed=9) == set(tasks)
    with pytest.raises(dsta.ConfigurationError):
        local_sample(3, tasks, 0.0, master_seed=9)
    sample = local_sample(3, tasks, 0.4, master_seed=9)
    assert sample == local_sample(3, tasks, 0.4, master_seed=9)
    mask = dsta.utils.sample_mask(9, 30, 5, 0.4)
    assert sample == set(np.flatnonzero(mask[:, 3]).tolist())


def test_local_best():
    weights = np.zeros((8, 1))
    weights[3, 0] = 0.2
    weights[7, 0] = 0.9
    oracle = dsta.ModularOracle(weights)

    state = AgentState(id=0, samples={3, 7})
    bid = local_best(state, oracle)
    assert (bid.task, bid.gain) == (7, 0.9)
    assert state.pending == (0.9, [7])

    assert local_best(AgentState(id=0), oracle) is None
    assert local_best(AgentState(id=0, samples={0, 1}), oracle) is None

    oracle = dsta.ModularOracle(np.ones((8, 1)))
    assert local_best(AgentState(id=0, samples={6, 2, 4}), oracle).task == 2


def test_max_consensus_line():
    graph = CommGraph.line(5)
    states = [AgentState(id=a) for a in range(5)]
    bid = BidMessage(agent=4, task=2, gain=0.5)
    winner = max_consensus(states, graph, {4: bid})
    assert winner == bid
    assert all(state.held == bid for state in states)
    # Agents 4, 3, 2 and 1 each forward once, to every neighbour.
    assert sum(state.sent for state in states) == 7


def test_max_consensus_tie():
    graph = CommGraph.complete(6)
    states = [AgentState(id=a) for a in range(6)]
    bids = {
        5: BidMessage(agent=5, task=0, gain=1.0),
        2: BidMessage(agent=2, task=4, gain=1.0),
        1: BidMessage(agent=1, task=3, gain=0.5),
    }
    winner = max_consensus(states, graph, bids)
    assert winner.agent == 2
    assert all(state.held.agent == 2 for state in states)


def test_max_consensus_no_bids():
    graph = CommGraph.ring(4)
    states = [AgentState(id=a) for a in range(4)]
    assert max_consensus(states, graph, {}) is None
    assert sum(state.sent for state in states) == 0


@pytest.mark.parametrize("graph", [CommGraph.complete(5), CommGraph.ring(6), CommGraph.line(5)])
def test_max_consensus_message_bound(graph):
    states = [AgentState(id=a) for a in range(graph.n_agents)]
    bids = {a: BidMessage(agent=a, task=a, gain=1.0 + a) for a in range(graph.n_agents)}
    winner = max_consensus(states, graph, bids)
    assert winner.agent == graph.n_agents - 1
    sent = sum(state.sent for state in states)
    # Every agent forwards to every neighbour in the first step.
    assert sent >= 2 * graph.n_edges
    assert sent <= 2 * graph.n_edges * graph.diameter
    if graph.diameter == 1:
        assert sent == 2 * graph.n_edges


@pytest.mark.parametrize("mode", ["monotone", "nonmonotone"])
def test_decentralized_equals_centralized(mode):
    for seed in range(4):
        scenario = dsta.generate_scenario(15, 5, mode=mode, seed=seed)
        for p in [0.1, 0.3, 0.5]:
            central = dsta.centralized_dsta(scenario, p=p, seed=seed)
            for graph in [CommGraph.complete(5), CommGraph.ring(5), CommGraph.line(5)]:
                result = decentralized_dsta(scenario, graph, p=p, master_seed=seed)
                assert result.allocation == central.allocation
                assert result.total_value == central.total_value
                assert result.oracle_calls == central.oracle_calls
                assert result.rounds == central.rounds


def test_decentralized_topology():
    scenario = dsta.generate_scenario(20, 6, mode="nonmonotone", seed=3)
    complete = decentralized_dsta(scenario, CommGraph.complete(6), p=0.5, master_seed=3)
    ring = decentralized_dsta(scenario, CommGraph.ring(6), p=0.5, master_seed=3)
    assert ring.allocation == complete.allocation
    assert ring.consensus_rounds > complete.consensus_rounds
    assert ring.consensus_rounds == 3 * (ring.rounds + 1)
    assert set(ring.messages) == set(range(6))


def test_decentralized_single_agent():
    scenario = dsta.generate_scenario(8, 1, seed=4)
    result = decentralized_dsta(scenario, CommGraph.complete(1), p=0.5, master_seed=4)
    central = dsta.centralized_dsta(scenario, p=0.5, seed=4)
    assert result.allocation == central.allocation
    assert result.consensus_rounds == 0
    assert result.messages == {0: 0}


def test_decentralized_graph_mismatch():
    scenario = dsta.generate_scenario(8, 3, seed=4)
    with pytest.raises(dsta.ConfigurationError):
        decentralized_dsta(scenario, CommGraph.complete(4), p=0.5)


def test_trace(tmp_path):
    scenario = dsta.generate_scenario(10, 3, seed=5)
    trace = ConsensusTrace()
    result = decentralized_dsta(scenario, CommGraph.line(3), p=0.5, master_seed=5, trace=trace)
    assert len(trace.events("sample")) == 3
    assert len(trace.events("win")) == result.rounds
    assert [record["round"] for record in trace.events("win")] == list(range(result.rounds))
    won = {record["payload"]["task"] for record in trace.events("win")}
    assert won == result.allocation.tasks()
    dropped = {record["payload"]["task"] for record in trace.events("drop")}
    assert dropped <= won

    path = tmp_path / "trace.jsonl"
    trace.write(path)
    lines = path.read_text().splitlines()
    assert len(lines) == len(trace.records)
    record = json.loads(lines[0])
    assert set(record) == {"round", "agent", "event", "payload"}

    with pytest.raises(ValueError):
        trace.log(0, 0, "lose")


@pytest.mark.slow
def test_equivalence_ensemble():
    rng = np.random.default_rng(0)
    for k in range(100):
        n_agents = int(rng.integers(2, 11))
        n_tasks = int(rng.integers(n_agents, 61))
        mode = ["monotone", "nonmonotone"][k % 2]
        p = [0.1, 0.3, 0.5][k % 3]
        scenario = dsta.generate_scenario(n_tasks, n_agents, mode=mode, seed=k)
        expected = dsta.sample_greedy(scenario, p=p, seed=k)
        assert dsta.centralized_dsta(scenario, p=p, seed=k).allocation == expected.allocation
        for graph in [CommGraph.complete(n_agents), CommGraph.ring(n_agents), CommGraph.line(n_agents)]:
            result = decentralized_dsta(scenario, graph, p=p, master_seed=k)
            assert result.allocation == expected.allocation
