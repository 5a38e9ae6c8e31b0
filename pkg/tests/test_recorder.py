import csv
import time

import pytest

from fabsim import Event
from fabsim.attachments import MetricsRecorder, WallClock
from fabsim.diagnostics import MetricsRow


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


class TestMetricsRecorder:
    def test_rows(self, runner, tmp_path):
        @runner.on(Event.EVALUATION)
        def on_evaluation(state):
            state["metrics"] = MetricsRow(k=state["n_iters"], rel_err=1 / state["n_iters"])

        recorder = MetricsRecorder(tmp_path / "m.csv")
        recorder.attach_on(runner)
        runner.run(10, every=4)

        assert [r.k for r in recorder.rows] == [4, 8, 10]
        lines = read_rows(tmp_path / "m.csv")
        assert lines[0] == MetricsRow.columns()
        assert [line[0] for line in lines[1:]] == ["4", "8", "10"]
        assert lines[1][lines[0].index("rel_err")] == "0.25"

    def test_initial_row(self, runner):
        runner.state["metrics"] = MetricsRow(k=0)
        recorder = MetricsRecorder()
        recorder.attach_on(runner)
        runner.run(3)
        assert [r.k for r in recorder.rows] == [0, 0, 0, 0]

    def test_timing_blank(self, runner, tmp_path):
        @runner.on(Event.EVALUATION)
        def on_evaluation(state):
            state["metrics"] = MetricsRow(k=state["n_iters"], wall_time_s=1.5)

        MetricsRecorder(tmp_path / "m.csv").attach_on(runner)
        runner.run(2)
        header, *rows = read_rows(tmp_path / "m.csv")
        col = header.index("wall_time_s")
        assert all(row[col] == "" for row in rows)

    def test_timing_filled(self, runner, tmp_path):
        @runner.on(Event.EVALUATION)
        def on_evaluation(state):
            state["metrics"] = MetricsRow(k=state["n_iters"], wall_time_s=1.5)

        MetricsRecorder(tmp_path / "m.csv", timing=True).attach_on(runner)
        runner.run(2)
        header, *rows = read_rows(tmp_path / "m.csv")
        assert rows[0][header.index("wall_time_s")] == "1.5"


class TestWallClock:
    def test_run(self, runner):
        @runner.on(Event.ITERATION)
        def on_iteration(state):
            time.sleep(0.01)

        WallClock().attach_on(runner)
        runner.run(3)
        assert runner.state["wall_time_s"] >= 0.03
        assert "_wall_clock_start" not in runner.state

    def test_elapsed_while_running(self, runner):
        seen = []

        @runner.on(Event.EVALUATION)
        def on_evaluation(state):
            seen.append(WallClock.elapsed(state))

        WallClock().attach_on(runner)
        runner.run(3)
        assert seen == sorted(seen)
        assert seen[-1] <= runner.state["wall_time_s"]

    def test_accumulates_over_resume(self, runner):
        @runner.on(Event.ITERATION)
        def on_iteration(state):
            time.sleep(0.01)
            if state["n_iters"] == 2:
                state["running"] = False

        WallClock().attach_on(runner)
        runner.run(4)
        first = runner.state["wall_time_s"]
        runner.resume()
        assert runner.state["wall_time_s"] >= first + 0.01

    def test_logs(self, runner, caplog):
        WallClock().attach_on(runner)
        with caplog.at_level("INFO", logger="fabsim.attachments.wall_clock"):
            runner.run(2)
        assert "Starting run of at most 2 iterations" in caplog.text
        assert "Stopped after 2 iterations" in caplog.text


def test_row_finite():
    assert MetricsRow(k=1, rel_err=0.5).finite()
    assert not MetricsRow(k=1, V_D=float("nan")).finite()


@pytest.mark.parametrize("timing,expected", [(True, "2.0"), (False, "")])
def test_row_csv_fields(timing, expected):
    fields = MetricsRow(k=3, wall_time_s=2.0, comm_cost_floats=6).csv_fields(timing)
    columns = MetricsRow.columns()
    assert fields[0] == "3"
    assert fields[columns.index("wall_time_s")] == expected
    assert fields[columns.index("comm_cost_floats")] == "6"
    assert fields[columns.index("rel_err")] == ""
