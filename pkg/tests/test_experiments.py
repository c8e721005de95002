import csv

import numpy as np
import pytest

import dsta
from dsta.experiments import CampaignConfig
from dsta.experiments import check_campaign
from dsta.experiments import count_inversions
from dsta.experiments import instance_ratio
from dsta.experiments import run_campaign
from dsta.experiments import sweep_p
from dsta.experiments import verify_guarantee


def small_config(tmp_path, **kws):
    kws.setdefault("n_tasks", [12])
    kws.setdefault("n_agents", [3, 4])
    kws.setdefault("trials", 2)
    kws.setdefault("master_seed", 7)
    return CampaignConfig(output=str(tmp_path), **kws)


def read_rows(path):
    with open(path, newline="") as file:
        return list(csv.DictReader(file))


def test_config_validation(tmp_path):
    with pytest.raises(dsta.ConfigurationError):
        small_config(tmp_path, trials=0)
    with pytest.raises(dsta.ConfigurationError):
        small_config(tmp_path, p=[0.5, 1.5])
    with pytest.raises(dsta.ConfigurationError):
        small_config(tmp_path, algorithms=["cbba"])
    with pytest.raises(dsta.ConfigurationError):
        small_config(tmp_path, n_tasks=[2], n_agents=[3])
    with pytest.raises(dsta.ConfigurationError):
        CampaignConfig.from_dict({"trials": 2, "n_robots": [3]})


def test_config_defaults(monkeypatch):
    monkeypatch.setenv("DSTA_OUTPUT_DIR", "/tmp/dsta-results")
    config = CampaignConfig.desk()
    assert config.output == "/tmp/dsta-results"
    assert config.n_tasks == [60]
    assert config.n_agents == [10, 15]
    assert config.trials == 10

    config = CampaignConfig.paper_scale(p=[0.5])
    assert config.n_tasks == [200, 300]
    assert config.n_agents == [10, 20, 30, 40, 50]


def test_config_from_toml(tmp_path):
    path = tmp_path / "campaign.toml"
    path.write_text('[campaign]\nmode = "nonmonotone"\nn_tasks = [20]\nn_agents = [4]\ntrials = 3\n')
    config = CampaignConfig.from_toml(path, trials=5, output=str(tmp_path))
    assert config.mode == "nonmonotone"
    assert config.n_tasks == [20]
    assert config.trials == 5


def test_run_campaign(tmp_path):
    config = small_config(tmp_path, trials=1, n_agents=[3])
    result = run_campaign(config, progress=False)
    assert len(result.rows) == 2
    assert [row["algorithm"] for row in result.rows] == ["dsta-central", "greedy"]
    assert result.rows[1]["p"] == "1.0"

    rows = read_rows(result.paths["results"])
    assert list(rows[0]) == dsta.RESULT_FIELDS
    assert rows == [{key: str(value) for key, value in row.items()} for row in result.rows]
    assert len(read_rows(result.paths["summary"])) == 2
    for name in ["value_vs_agents.csv", "calls_vs_agents.csv", "value_vs_p.csv"]:
        assert len(read_rows(result.paths[name])) > 0


def test_run_campaign_rows(tmp_path):
    config = small_config(tmp_path, p=[0.2, 0.5], algorithms=["dsta", "sample-greedy", "greedy"])
    result = run_campaign(config, progress=False)
    # Per trial: 2 p values for each sampling algorithm, one greedy run.
    assert len(result.rows) == 2 * 2 * 5
    assert [int(row["n_agents"]) for row in result.rows] == [3] * 10 + [4] * 10
    for row in result.rows:
        if row["algorithm"] == "dsta":
            twin = next(
                other for other in result.rows
                if other["algorithm"] == "sample-greedy"
                and (other["seed"], other["p"], other["n_agents"]) == (row["seed"], row["p"], row["n_agents"])
            )
            assert row["total_value"] == twin["total_value"]


def test_campaign_determinism(tmp_path):
    a = run_campaign(small_config(tmp_path / "a"), progress=False)
    b = run_campaign(small_config(tmp_path / "b", jobs=2), progress=False)
    for name in ["results", "summary", "value_vs_agents.csv"]:
        with open(a.paths[name], "rb") as file_a, open(b.paths[name], "rb") as file_b:
            assert file_a.read() == file_b.read()


def test_summary(tmp_path):
    result = run_campaign(small_config(tmp_path, trials=3), progress=False)
    summary = result.summary("dsta-central", 12, 4, 0.5)
    values = [
        float(row["total_value"]) for row in result.rows
        if row["algorithm"] == "dsta-central" and row["n_agents"] == 4
    ]
    assert summary.trials == 3
    assert np.isclose(summary.value_mean, np.mean(values), rtol=1.0e-12)
    assert np.isclose(summary.value_std, np.std(values, ddof=1))
    assert summary.value_std >= 0.0
    assert np.isnan(summary.wall_time_mean)


def test_check_campaign(tmp_path):
    result = run_campaign(small_config(tmp_path), progress=False)
    assert check_campaign(result) == []

    result.rows[0]["total_value"] = repr(float(result.rows[0]["total_value"]) + 1.0)
    failures = check_campaign(result, n_replay=len(result.rows))
    assert any(failure.startswith("replay") for failure in failures)
    assert any(failure.startswith("summary") for failure in failures)


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        run_campaign(small_config(blocker / "out"), progress=False)


def test_count_inversions():
    assert count_inversions([1.0]) == 0
    assert count_inversions([1.0, 2.0, 3.0]) == 0
    assert count_inversions([1.0, 3.0, 2.0, 4.0]) == 1
    assert count_inversions([3.0, 2.0, 1.0]) == 2


def test_sweep_p(tmp_path):
    config = small_config(tmp_path, n_tasks=[20], n_agents=[4], trials=4, p=[0.1, 0.2, 0.5])
    result = sweep_p(config, progress=False)
    assert result.failures == []
    rows = read_rows(result.paths["value_vs_p.csv"])
    assert [float(row["p"]) for row in rows] == [0.1, 0.2, 0.5]


def test_instance_ratio_modular():
    weights = np.random.uniform(0.1, 1.0, size=(4, 2))
    ratio, error = instance_ratio(dsta.ModularOracle(weights), p=1.0, n_seeds=5)
    assert np.isclose(ratio, 1.0)
    assert error < 1.0e-12


def test_verify_guarantee_small():
    report = verify_guarantee("monotone", 0.5, n_instances=3, n_seeds=50, master_seed=1)
    assert report.bound == 0.5
    assert len(report.ratios) == 3
    assert report.passes
    assert report.as_dict()["passes"]


@pytest.mark.slow
@pytest.mark.parametrize("mode, p", [("monotone", 0.5), ("monotone", 0.25), ("nonmonotone", 0.5)])
def test_verify_guarantee(mode, p):
    report = verify_guarantee(mode, p, n_tasks=5, n_agents=3, n_instances=30, n_seeds=500)
    assert report.passes
    assert min(report.ratios) >= report.bound * 0.98


@pytest.mark.slow
@pytest.mark.parametrize("mode", ["monotone", "nonmonotone"])
def test_desk_scale(tmp_path, mode):
    config = CampaignConfig.desk(mode=mode, output=str(tmp_path))
    result = run_campaign(config, progress=False)
    for n_tasks, n_agents in config.cells():
        dsta_mean = result.summary("dsta-central", n_tasks, n_agents, 0.5).value_mean
        greedy_mean = result.summary("greedy", n_tasks, n_agents).value_mean
        if mode == "monotone":
            assert dsta_mean >= 0.9 * greedy_mean
        else:
            assert dsta_mean >= greedy_mean
    assert check_campaign(result) == []


@pytest.mark.slow
def test_monotone_ratio_grows_with_agents(tmp_path):
    # With p = 0.5 each task has n_agents / 2 expected samplers, so few agents
    # leave tasks to distant samplers or to nobody.
    config = CampaignConfig.desk(mode="monotone", n_agents=[5, 10, 15], output=str(tmp_path))
    result = run_campaign(config, progress=False)
    ratios = [
        result.summary("dsta-central", 60, n_agents, 0.5).value_mean / result.summary("greedy", 60, n_agents).value_mean
        for n_agents in config.n_agents
    ]
    assert ratios[0] < ratios[1] < ratios[2] <= 1.0
    assert ratios[1] >= 0.9
