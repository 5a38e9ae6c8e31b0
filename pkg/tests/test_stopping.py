from types import SimpleNamespace

import pytest

from fabsim import Event
from fabsim.callbacks import stop_below, stop_on_divergence
from fabsim.diagnostics import MetricsRow
from fabsim.exceptions import ConfigError


def test_stop_below():
    callback = stop_below(0.1)
    state = {"running": True, "n_iters": 5, "metrics": SimpleNamespace(rel_err=0.5)}
    callback(state)
    assert state["running"]
    assert "stopped_at" not in state

    state.update(n_iters=10, metrics=SimpleNamespace(rel_err=0.05))
    callback(state)
    assert not state["running"]
    assert state["stopped_at"] == 10


def test_stop_below_missing_metric():
    callback = stop_below(0.1)
    state = {"running": True, "n_iters": 5, "metrics": MetricsRow(k=5)}
    callback(state)
    assert state["running"]


def test_stop_below_custom_keys():
    callback = stop_below(1.0, metric="V_D", source="row", record="hit")
    state = {"running": True, "n_iters": 3, "row": MetricsRow(k=3, V_D=0.5)}
    callback(state)
    assert state["hit"] == 3


@pytest.mark.parametrize("threshold", [0.0, -1.0])
def test_stop_below_invalid_threshold(threshold):
    with pytest.raises(ConfigError):
        stop_below(threshold)


def test_stop_below_in_runner(runner):
    @runner.on(Event.EVALUATION)
    def evaluate(state):
        state["metrics"] = MetricsRow(k=state["n_iters"], rel_err=1.0 / state["n_iters"])

    runner.on(Event.EVALUATION, stop_below(0.05))
    runner.run(1000, every=5)

    assert runner.state["stopped_at"] == 25
    assert runner.state["n_iters"] == 25


def test_stop_on_divergence():
    callback = stop_on_divergence()
    state = {"running": True, "n_iters": 1, "metrics": MetricsRow(k=1, V_D=1.0)}
    callback(state)
    assert state["running"]
    assert "diverged" not in state

    state["metrics"] = MetricsRow(k=2, V_D=float("nan"))
    callback(state)
    assert not state["running"]
    assert state["diverged"]


def test_stop_on_divergence_bound():
    callback = stop_on_divergence(bound=1e6)
    state = {"running": True, "n_iters": 20, "metrics": MetricsRow(k=20, rel_err=3.0)}
    callback(state)
    assert state["running"]

    state["metrics"] = MetricsRow(k=40, rel_err=3e49)
    callback(state)
    assert not state["running"]
    assert state["diverged"]


def test_stop_on_divergence_bound_without_metric():
    callback = stop_on_divergence(bound=1.0)
    state = {"running": True, "n_iters": 5, "metrics": MetricsRow(k=5, V_D=2.0)}
    callback(state)
    assert state["running"]


def test_stop_on_divergence_invalid_bound():
    with pytest.raises(ConfigError):
        stop_on_divergence(bound=0.0)
