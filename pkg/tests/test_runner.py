from unittest.mock import Mock
import pickle

import pytest

from fabsim import Event, Runner
from fabsim.exceptions import ConfigError


def test_init():
    r = Runner()
    assert len(r.state) == 0


def test_run(runner):
    runner.run(10, every=3)
    state = runner.state

    assert state["max_iter"] == 10
    assert state["every"] == 3
    assert state["n_iters"] == 10
    assert not state["running"]


@pytest.mark.parametrize("max_iter,every", [(0, 1), (5, 0), (-1, 2)])
def test_invalid_budget(runner, max_iter, every):
    with pytest.raises(ConfigError):
        runner.run(max_iter, every=every)


class TestOn:
    def test_started(self, runner):
        def on_started(state):
            assert state["max_iter"] == 7
            assert state["n_iters"] == 0
            assert state["running"]

        mock = Mock(side_effect=on_started)
        runner.on(Event.STARTED, mock)
        runner.run(7)
        assert mock.call_count == 1

    def test_iteration(self, runner):
        n_calls = 0

        @runner.on(Event.ITERATION)
        def on_iteration(state):
            nonlocal n_calls
            n_calls += 1
            assert state["n_iters"] == n_calls
            assert state["running"]

        runner.run(12)
        assert n_calls == 12

    def test_evaluation(self, runner):
        seen = []
        runner.on(Event.EVALUATION, lambda state: seen.append(state["n_iters"]))
        runner.run(10, every=4)
        assert seen == [4, 8, 10]

    def test_evaluation_every_iteration(self, runner):
        seen = []
        runner.on(Event.EVALUATION, lambda state: seen.append(state["n_iters"]))
        runner.run(3)
        assert seen == [1, 2, 3]

    def test_finished(self, runner):
        def on_finished(state):
            assert state["n_iters"] == 5
            assert state["running"]

        mock = Mock(side_effect=on_finished)
        runner.on(Event.FINISHED, mock)
        runner.run(5)
        assert mock.call_count == 1

    def test_as_decorator(self, runner):
        n_calls = 0

        @runner.on(Event.EVALUATION)
        def increment(state):
            nonlocal n_calls
            n_calls += 1

        runner.run(20, every=5)
        assert n_calls == 4

    def test_multiple_callbacks(self, runner):
        mock1, mock2 = Mock(), Mock()
        runner.on(Event.ITERATION, [mock1, mock2])
        runner.run(6)

        assert mock1.call_count == 6
        assert mock2.call_count == 6


class TestStop:
    def test_on_iteration(self, runner):
        mock_evaluation, mock_finished = Mock(), Mock()
        n_calls = 0

        def on_iteration(state):
            nonlocal n_calls
            n_calls += 1
            if state["n_iters"] == 3:
                state["running"] = False

        runner.on(Event.ITERATION, on_iteration)
        runner.on(Event.EVALUATION, mock_evaluation)
        runner.on(Event.FINISHED, mock_finished)
        runner.run(10)

        assert n_calls == 3
        assert mock_evaluation.call_count == 2
        assert mock_finished.call_count == 1
        assert runner.state["n_iters"] == 3

    def test_skips_remaining_callbacks(self, runner):
        mock = Mock()

        def stop(state):
            state["running"] = False

        runner.on(Event.EVALUATION, [stop, mock])
        runner.run(10)
        assert not mock.called

    def test_on_started(self, runner):
        mock_iteration, mock_finished = Mock(), Mock()

        def on_started(state):
            state["running"] = False

        runner.on(Event.STARTED, on_started)
        runner.on(Event.ITERATION, mock_iteration)
        runner.on(Event.FINISHED, mock_finished)
        runner.run(10)

        assert not mock_iteration.called
        assert mock_finished.call_count == 1


class TestResume:
    def test_after_stop(self, tmp_path):
        from fabsim.attachments import ProgressBar, SumReducer

        n_calls = 0

        def on_iteration(state):
            nonlocal n_calls
            n_calls += 1
            state["output"] = state["n_iters"]

        def on_evaluation(state):
            if state["stage"] == "first" and state["n_iters"] == 4:
                state["running"] = False

        def make_runner():
            runner = Runner()
            ProgressBar(disable=True).attach_on(runner)
            SumReducer("total").attach_on(runner)
            runner.on(Event.ITERATION, on_iteration)
            runner.on(Event.EVALUATION, on_evaluation)
            return runner

        runner = make_runner()
        runner.state["stage"] = "first"
        runner.run(10)
        assert runner.state["total"] == sum(range(1, 5))
        with open(tmp_path / "ckpt.pkl", "wb") as f:
            pickle.dump(runner.state, f)

        with open(tmp_path / "ckpt.pkl", "rb") as f:
            ckpt = pickle.load(f)
        runner = make_runner()
        runner.state.update(ckpt)
        runner.state["stage"] = "second"
        runner.resume()

        assert n_calls == 10
        assert runner.state["n_iters"] == 10
        assert runner.state["total"] == sum(range(1, 11))

    def test_larger_budget(self, runner):
        mock = Mock()
        runner.on(Event.ITERATION, mock)
        runner.run(5)
        runner.resume(8)

        assert mock.call_count == 8
        assert runner.state["max_iter"] == 8

    def test_budget_below_done(self, runner):
        runner.run(5)
        with pytest.raises(ConfigError):
            runner.resume(3)
