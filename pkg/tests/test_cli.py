import csv
import io
import json
import logging

import pytest

from dsta import RESULT_FIELDS
from dsta.cli import main


def gen(tmp_path, capsys, name="scenario.json", tasks=12, agents=4, mode="nonmonotone", seed=7):
    path = tmp_path / name
    code = main(["gen", "--tasks", str(tasks), "--agents", str(agents), "--mode", mode, "--seed", str(seed), "--out", str(path)])
    assert code == 0
    return path, capsys.readouterr().out.strip()


def run(capsys, *args):
    code = main(["run", *args])
    out = capsys.readouterr().out
    rows = list(csv.DictReader(io.StringIO(out), fieldnames=RESULT_FIELDS))
    return code, rows


def test_gen(tmp_path, capsys):
    _, digest_a = gen(tmp_path, capsys, "a.json")
    _, digest_b = gen(tmp_path, capsys, "b.json")
    assert len(digest_a) == 64
    assert digest_a == digest_b
    _, digest_c = gen(tmp_path, capsys, "c.json", seed=8)
    assert digest_c != digest_a


def test_gen_invalid(tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        main(["gen", "--tasks", "10", "--agents", "0", "--out", str(tmp_path / "x.json")])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        main(["gen", "--tasks", "3", "--agents", "5", "--out", str(tmp_path / "x.json")])
    assert info.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_gen_unwritable(tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        main(["gen", "--tasks", "6", "--agents", "2", "--out", str(tmp_path / "missing" / "s.json")])
    assert info.value.code == 2
    assert "cannot write scenario" in capsys.readouterr().err


def test_run_equivalence(tmp_path, capsys):
    path, _ = gen(tmp_path, capsys)
    code, ring = run(capsys, "--scenario", str(path), "--algo", "dsta", "--p", "0.5", "--graph", "ring", "--seed", "3")
    assert code == 0
    code, central = run(capsys, "--scenario", str(path), "--algo", "dsta-central", "--p", "0.5", "--seed", "3")
    assert code == 0
    assert len(ring) == 1
    assert ring[0]["total_value"] == central[0]["total_value"]
    assert ring[0]["algorithm"] == "dsta"
    assert ring[0]["wall_time_ms"] == "nan"


def test_run_header(tmp_path, capsys):
    path, _ = gen(tmp_path, capsys)
    main(["run", "--scenario", str(path), "--algo", "greedy", "--header"])
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == ",".join(RESULT_FIELDS)
    assert len(lines) == 2


def test_run_greedy_ignores_p(tmp_path, capsys, caplog):
    path, _ = gen(tmp_path, capsys)
    with caplog.at_level(logging.WARNING):
        code, rows = run(capsys, "--scenario", str(path), "--algo", "greedy", "--p", "0.3")
    assert code == 0
    assert rows[0]["p"] == "1.0"
    assert "ignored" in caplog.text


def test_run_brute_dominates(tmp_path, capsys):
    path, _ = gen(tmp_path, capsys, tasks=4, agents=2, mode="monotone")
    code, brute = run(capsys, "--scenario", str(path), "--algo", "brute")
    assert code == 0
    for algo in ["dsta", "dsta-central", "sample-greedy", "greedy"]:
        _, rows = run(capsys, "--scenario", str(path), "--algo", algo, "--p", "0.5")
        assert float(brute[0]["total_value"]) >= float(rows[0]["total_value"])


def test_run_brute_too_large(tmp_path, capsys):
    path, _ = gen(tmp_path, capsys, tasks=12, agents=5)
    code = main(["run", "--scenario", str(path), "--algo", "brute"])
    assert code == 3
    assert "size error" in capsys.readouterr().err


def test_run_missing_scenario(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["run", "--scenario", str(tmp_path / "missing.json")])
    assert info.value.code == 2


@pytest.mark.parametrize("text", ["{}", '{"version": 1}', "[]", "not json", '{"version": 1, "mode": "monotone", "world": "x"}'])
def test_run_malformed_scenario(tmp_path, capsys, text):
    path = tmp_path / "broken.json"
    path.write_text(text)
    with pytest.raises(SystemExit) as info:
        main(["run", "--scenario", str(path)])
    assert info.value.code == 2
    assert "cannot read scenario" in capsys.readouterr().err


def test_run_trace(tmp_path, capsys):
    path, _ = gen(tmp_path, capsys)
    trace = tmp_path / "trace.jsonl"
    code, _ = run(capsys, "--scenario", str(path), "--algo", "dsta", "--graph", "line", "--trace", str(trace))
    assert code == 0
    records = [json.loads(line) for line in trace.read_text().splitlines()]
    assert {record["event"] for record in records} >= {"sample", "bid", "forward", "win"}


def test_run_trace_unwritable(tmp_path, capsys):
    path, _ = gen(tmp_path, capsys)
    code = main(["run", "--scenario", str(path), "--trace", str(tmp_path / "missing" / "trace.jsonl")])
    assert code == 2
    assert "dsta: error" in capsys.readouterr().err


def test_run_graph_file(tmp_path, capsys):
    path, _ = gen(tmp_path, capsys)
    edges = tmp_path / "edges.txt"
    edges.write_text("0 1\n1 2\n2 3\n")
    code, rows = run(capsys, "--scenario", str(path), "--graph", "file", "--graph-file", str(edges))
    assert code == 0
    _, central = run(capsys, "--scenario", str(path), "--algo", "dsta-central")
    assert rows[0]["total_value"] == central[0]["total_value"]

    edges.write_text("0 1\n2 3\n")
    with pytest.raises(SystemExit) as info:
        main(["run", "--scenario", str(path), "--graph", "file", "--graph-file", str(edges)])
    assert info.value.code == 2


@pytest.mark.parametrize("suite", ["submodular", "monotone", "matroid"])
def test_props(capsys, suite):
    code = main(["props", "--suite", suite])
    output = json.loads(capsys.readouterr().out)
    assert code == 0
    assert output["suite"] == suite
    if suite == "matroid":
        assert output["failed"] == []
    else:
        assert output["violations"] == 0


def test_verify(capsys):
    code = main(["verify", "--mode", "monotone", "--p", "0.5", "--instances", "2", "--seeds", "40"])
    output = json.loads(capsys.readouterr().out)
    assert code == 0
    assert output["passes"]
    assert output["margin"] >= -0.02


def test_campaign(tmp_path, capsys):
    config = tmp_path / "campaign.toml"
    config.write_text('[campaign]\nmode = "monotone"\nn_tasks = [10]\nn_agents = [2, 3]\ntrials = 2\n')
    outputs = []
    for jobs in ["1", "2"]:
        output = tmp_path / f"out{jobs}"
        code = main(["campaign", "--config", str(config), "--output", str(output), "--jobs", jobs, "--no-progress"])
        summary = json.loads(capsys.readouterr().out)
        assert code == 0
        assert summary["failures"] == []
        assert summary["rows"] == 8
        outputs.append((output / "results.csv").read_bytes())
    assert outputs[0] == outputs[1]


def write_config(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text("n_tasks = [6]\nn_agents = [2]\n")
    return path


def test_campaign_env_output(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("DSTA_OUTPUT_DIR", str(tmp_path / "env"))
    code = main(["campaign", "--trials", "1", "--mode", "monotone", "--no-progress",
                 "--config", str(write_config(tmp_path))])
    assert code == 0
    assert (tmp_path / "env" / "summary.csv").exists()
    capsys.readouterr()


def test_campaign_bad_config(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("trials = 0\n")
    with pytest.raises(SystemExit) as info:
        main(["campaign", "--config", str(path)])
    assert info.value.code == 2


def test_campaign_output_under_file(tmp_path, capsys):
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    with pytest.raises(SystemExit) as info:
        main(["campaign", "--trials", "1", "--mode", "monotone", "--no-progress",
              "--config", str(write_config(tmp_path)), "--output", str(blocker / "out")])
    assert info.value.code == 2
    assert "cannot write campaign output" in capsys.readouterr().err


@pytest.mark.parametrize("flag", ["--instances", "--seeds", "--tasks", "--agents"])
def test_verify_invalid_counts(capsys, flag):
    with pytest.raises(SystemExit) as info:
        main(["verify", flag, "0"])
    assert info.value.code == 2
    assert "must be >= 1" in capsys.readouterr().err


@pytest.mark.parametrize("suite", ["submodular", "monotone", "matroid"])
@pytest.mark.parametrize("flag", ["--trials", "--agents", "--tasks"])
def test_props_invalid_counts(capsys, suite, flag):
    with pytest.raises(SystemExit) as info:
        main(["props", "--suite", suite, flag, "0"])
    assert info.value.code == 2
    assert "must be >= 1" in capsys.readouterr().err
