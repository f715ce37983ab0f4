import json

import pytest

from otpl.cli import main, parse_densities
from otpl.evaluation import read_report
from otpl.highway_sim import Road, Scenario, Vehicle, load_scenario, save_scenario


def run(tmp_path, *argv):
    return main(["--workdir", str(tmp_path), *argv])


def test_parse_densities():
    assert parse_densities("10..80") == [10, 20, 30, 40, 50, 60, 70, 80]
    assert parse_densities("10..30:5") == [10, 15, 20, 25, 30]
    assert parse_densities("20,50") == [20, 50]


def test_scenario_gen_default_count(tmp_path):
    assert run(tmp_path, "scenario", "gen", "--out", "s") == 0
    files = sorted((tmp_path / "s").glob("*.json"))
    assert len(files) == 80
    doc = json.loads(files[0].read_text())
    assert doc["run"]["version"] and doc["run"]["params"]["per_density"] == 10
    sc = load_scenario(files[-1])
    assert sc.n_veh == 80


def test_scenario_critical(tmp_path):
    assert run(tmp_path, "scenario", "critical", "--kind", "cutin", "--out", "c.json") == 0
    assert load_scenario(tmp_path / "c.json").script


def test_eval_idm_empty_road(tmp_path):
    sc = Scenario(Road(), Vehicle(0, 1, 0.0, 3.5, 25.0), (), name="empty")
    save_scenario(sc, tmp_path / "empty.json")
    assert run(tmp_path, "eval", "--agent", "idm", "--scenarios", "empty.json", "--out", "r.csv") == 0
    (row,) = read_report(tmp_path / "r.csv")
    assert row["completed"] == 1 and abs(row["avg_velocity"] - 30.0) <= 0.5
    assert json.loads((tmp_path / "r.csv.run.json").read_text())["params"]["agent"] == "idm"


def test_usage_errors(tmp_path, capsys):
    assert run(tmp_path, "bogus") == 1
    assert "usage" in capsys.readouterr().err
    assert run(tmp_path) == 1
    assert run(tmp_path, "collect") == 1
    assert run(tmp_path, "eval", "--agent", "otpl", "--scenarios", "x", "--out", "r.csv") == 1


def test_validation_errors(tmp_path):
    assert run(tmp_path, "train", "--data", "missing.jsonl", "--out", "ck") == 2
    (tmp_path / "bad.jsonl").write_text('{"format": "nope"}\n')
    assert run(tmp_path, "train", "--data", "bad.jsonl", "--out", "ck") == 2
    (tmp_path / "cfg.json").write_text('{"collect": {"nonsense": 1}}')
    assert run(tmp_path, "--config", "cfg.json", "collect", "--out", "d.jsonl") == 2
    assert run(tmp_path, "collect", "--samples", "10", "--terminal-fraction", "2", "--out", "d.jsonl") == 2


def test_config_then_flags(tmp_path):
    (tmp_path / "cfg.json").write_text(json.dumps({"collect": {"samples": 40, "seed": 3}}))
    assert run(tmp_path, "--config", "cfg.json", "collect", "--seed", "4", "--out", "d.jsonl") == 0
    header = json.loads((tmp_path / "d.jsonl").read_text().splitlines()[0])
    assert header["metadata"]["n_samples"] == 40
    assert header["run"]["params"]["seed"] == 4 and header["metadata"]["seed"] == 4


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """The same small collect/train/eval/plot pipeline run twice in separate directories."""
    outs = []
    for k in range(2):
        d = tmp_path_factory.mktemp(f"run{k}")
        assert run(d, "scenario", "gen", "--densities", "10..20", "--per-density", "1", "--out", "s") == 0
        assert run(d, "collect", "--samples", "200", "--seed", "5", "--terminal-fraction", "0.3",
                   "--out", "d.jsonl", "--stats", "stats.json") == 0
        assert run(d, "train", "--data", "d.jsonl", "--seed", "2", "--iters", "20",
                   "--checkpoint-every", "10", "--batch", "16", "--out", "ck") == 0
        assert run(d, "eval", "--agent", "otpl", "--checkpoint", "ck", "--scenarios", "s",
                   "--out", "r.csv") == 0
        assert run(d, "eval", "--agent", "greedy", "--scenarios", "s", "--out", "g.csv") == 0
        assert run(d, "plot", "--report", "r.csv", "--report", "g.csv", "--out", "p/fig") == 0
        outs.append(d)
    return outs


ARTIFACTS = ["d.jsonl", "stats.json", "stats_histograms.csv", "ck/agent.json", "ck/agent_0000010.json",
             "ck/train_log.csv", "r.csv", "r.csv.run.json", "g.csv", "p/fig_velocity.svg",
             "p/fig_terminal.svg", "p/fig_by_density.csv", "p/fig_by_agent.csv"]


@pytest.mark.parametrize("name", ARTIFACTS)
def test_artifacts_byte_identical(pipeline, name):
    a, b = (d / name for d in pipeline)
    assert a.read_bytes() == b.read_bytes()


def test_artifacts_embed_run_config(pipeline):
    d = pipeline[0]
    ck = json.loads((d / "ck/agent.json").read_text())
    assert ck["run"]["command"] == "train" and ck["run"]["params"]["hyper"]["tau"] == 1e-4
    header = json.loads((d / "d.jsonl").read_text().splitlines()[0])
    assert header["run"]["params"]["terminal_fraction"] == 0.3
    assert header["metadata"]["terminal_fraction"] == pytest.approx(0.3, abs=0.01)
    svg = (d / "p/fig_velocity.svg").read_text()
    assert '"command": "plot"' in svg.replace("&quot;", '"') and "<dc:date>" not in svg
    rows = read_report(d / "r.csv")
    assert [r["scenario_id"] for r in rows] == ["n10_00", "n20_00"]
