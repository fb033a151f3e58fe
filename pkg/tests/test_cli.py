import json
import subprocess
import sys

import pytest

from resilsim.cli import EXIT_ASSERTION, EXIT_INVALID, EXIT_OK, main
from resilsim.scenario import ScenarioError, load_scenario, replay, run_scenario, to_config, write_trace_dir

GOOD = """contract C1_timing {
  inputs: pulse : boolean
  guarantee: timing every 150 ms within 10 ms
}
"""


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestCheck:
    def test_valid(self, tmp_path, capsys):
        assert main(["check", "--contract", write(tmp_path, "c.txt", GOOD)]) == EXIT_OK
        assert capsys.readouterr().out == "C1_timing: ok\n"

    def test_verbose_prints_canonical_form(self, tmp_path, capsys):
        main(["check", "-v", "--contract", write(tmp_path, "c.txt", GOOD)])
        assert "timing every 150 ms within 10 ms" in capsys.readouterr().out

    def test_syntax_error_has_position(self, tmp_path, capsys):
        path = write(tmp_path, "c.txt", "contract X {\n  guarantee: wobble\n}\n")
        assert main(["check", "--contract", path]) == EXIT_INVALID
        assert f"{path}:2:14: syntax error" in capsys.readouterr().err

    def test_semantic_error(self, tmp_path, capsys):
        path = write(tmp_path, "c.txt", "contract X {\n  guarantee: bound q in [2, 1]\n}\n")
        assert main(["check", "--contract", path]) == EXIT_INVALID
        assert "undeclared port 'q'" in capsys.readouterr().err

    def test_missing_or_empty_file(self, tmp_path):
        assert main(["check", "--contract", str(tmp_path / "nope")]) == EXIT_INVALID
        assert main(["check", "--contract", write(tmp_path, "e.txt", "# nothing\n")]) == EXIT_INVALID


class TestRun:
    def test_exp2_reports_recovery(self, capsys):
        assert main(["run", "--scenario", "exp2"]) == EXIT_OK
        out = json.loads(capsys.readouterr().out)
        assert out["recovery"][0]["recovered_at"] == 75000
        assert out["experiment"]["passed"]

    def test_failed_assertion_exit_code(self, tmp_path, capsys):
        path = write(tmp_path, "s.json", json.dumps({"preset": "exp1", "experiment": "exp1", "comm_ms": 150}))
        assert main(["run", "--scenario", path]) == EXIT_ASSERTION
        assert "assertion failed" in capsys.readouterr().err

    def test_stochastic_scenario_needs_seed(self, tmp_path, capsys):
        path = write(tmp_path, "s.json", json.dumps({"preset": "exp1", "links": {"jitter_ms": 0.5}}))
        assert main(["run", "--scenario", path]) == EXIT_INVALID
        assert "seed is required" in capsys.readouterr().err
        assert main(["run", "--scenario", path, "--seed", "4"]) == EXIT_OK

    @pytest.mark.parametrize(
        "data",
        [
            {"colour": "red"},
            {"links": {"drop_prob": 3}},
            {"pieces": [{"colour": "green", "arrival_ms": 0}]},
            {"faults": [{"target": "N1", "kind": "transient"}]},
            {"faults": [{"target": "N9"}]},
        ],
    )
    def test_invalid_scenarios(self, tmp_path, data):
        path = write(tmp_path, "s.json", json.dumps(data))
        assert main(["run", "--scenario", path]) == EXIT_INVALID

    def test_bad_json(self, tmp_path):
        with pytest.raises(ScenarioError):
            load_scenario(write(tmp_path, "s.json", "{"))

    def test_same_seed_same_logs(self, tmp_path):
        for name in ("a", "b"):
            main(["run", "--scenario", "exp2", "--seed", "3", "--trace-dir", str(tmp_path / name)])
        for f in (tmp_path / "a").iterdir():
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()

    def test_metrics_file(self, tmp_path):
        out = tmp_path / "m.json"
        main(["run", "--scenario", "exp1", "--metrics", str(out), "--until", "6000"])
        assert json.loads(out.read_text())["resilience"] == 1.0

    def test_module_entry_point(self):
        proc = subprocess.run(
            [sys.executable, "-m", "resilsim", "run", "--scenario", "exp1"], capture_output=True, text=True
        )
        assert proc.returncode == 0 and '"passed": true' in proc.stdout


class TestReplay:
    def test_replay_reproduces_report(self, tmp_path, capsys):
        trace = tmp_path / "t"
        main(["run", "--scenario", "exp2", "--trace-dir", str(trace)])
        capsys.readouterr()
        assert main(["replay", "--trace", str(trace)]) == EXIT_OK
        assert capsys.readouterr().out == (trace / "report.json").read_text()

    def test_replay_of_resilience_fixture(self, tmp_path):
        trace = tmp_path / "fx"
        trace.mkdir()
        (trace / "availability.trace").write_text("0,100,2/3\n")
        (trace / "demand.trace").write_text("0,100,1\n")
        (trace / "verdicts.csv").write_text("tick,component,contract,event,kind\n")
        (trace / "faults.csv").write_text("tick,fault_id,target,event,effect\n")
        report = replay(trace)
        assert report.resilience == pytest.approx(2 / 3, abs=1e-12)
        out = tmp_path / "r.json"
        assert main(["replay", "--trace", str(trace), "--metrics", str(out)]) == EXIT_OK
        assert json.loads(out.read_text())["perf"] == [[0, 100, "2/3"]]

    def test_empty_or_missing_trace(self, tmp_path):
        assert main(["replay", "--trace", str(tmp_path / "none")]) == EXIT_INVALID
        trace = tmp_path / "empty"
        trace.mkdir()
        for name in ("availability.trace", "demand.trace", "verdicts.csv", "faults.csv"):
            (trace / name).write_text("")
        assert main(["replay", "--trace", str(trace)]) == EXIT_INVALID


class TestScenarioApi:
    def test_overrides(self):
        cfg = to_config({"preset": "exp2", "exec_ms": {"C1/Beh2": 3.0}, "period_ms": 160, "observer_h_ms": 0.5})
        assert cfg.exec_ms[("C1", "Beh2")] == 3.0
        assert cfg.c1_period_ms == 160 and cfg.observer_h_ms == 0.5

    def test_colour_outlier_index_checked(self):
        with pytest.raises(ScenarioError):
            to_config({"random_pieces": {"count": 2}, "colour_outliers": {"pieces": [5]}})

    def test_trace_files(self, tmp_path):
        result = run_scenario(load_scenario("exp1"))
        names = {p.name for p in write_trace_dir(result, tmp_path)}
        assert {"dispatch.log", "plant.csv", "report.json", "experiment.json"} <= names
