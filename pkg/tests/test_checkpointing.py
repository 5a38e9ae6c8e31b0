from unittest.mock import Mock, call

import numpy as np

from fabsim import Event
from fabsim.callbacks import checkpoint


def test_ok(tmp_path):
    n_saves, max_saved = 5, 2
    callback = checkpoint("x", under=tmp_path, at_most=max_saved)
    state = {}
    for i in range(1, n_saves + 1):
        state.update({"x": np.full(3, float(i)), "n_iters": 10 * i})
        callback(state)

    assert len(list(tmp_path.glob("*x.npz"))) == max_saved
    for i in (4, 5):
        path = tmp_path / f"{10 * i}_x.npz"
        with np.load(path) as data:
            assert np.array_equal(data["arr_0"], np.full(3, float(i)))


def test_conditional(tmp_path):
    callback = checkpoint("x", under=tmp_path, at_most=2, when="better")
    better = {1, 3, 5}
    state = {}
    for i in range(1, 6):
        state.update({"x": np.arange(i), "n_iters": i, "better": i in better})
        callback(state)

    assert {p.name for p in tmp_path.glob("*x.npz")} == {"3_x.npz", "5_x.npz"}


def test_to_dict(tmp_path):
    class Snapshot:
        def to_dict(self):
            return {"a": np.zeros(2), "b": np.ones(3)}

    callback = checkpoint("snap", under=tmp_path)
    callback({"snap": Snapshot(), "n_iters": 7})

    with np.load(tmp_path / "7_snap.npz") as data:
        assert sorted(data.files) == ["a", "b"]
        assert np.array_equal(data["b"], np.ones(3))


def test_obj_and_using(tmp_path):
    obj, mock_using = object(), Mock()
    callback = checkpoint("thing", obj, under=tmp_path, at_most=3, using=mock_using, ext="bin")
    for i in range(1, 4):
        callback({"n_iters": i})

    assert mock_using.mock_calls == [call(obj, tmp_path / f"{i}_thing.bin") for i in (1, 2, 3)]


def test_prefix_fmt(tmp_path):
    callback = checkpoint("x", under=tmp_path, prefix_fmt="{name}_{n_iters}_")
    callback({"x": np.zeros(1), "n_iters": 4, "name": "run"})

    assert (tmp_path / "run_4_x.npz").exists()


def test_in_runner(runner, tmp_path):
    @runner.on(Event.EVALUATION)
    def store(state):
        state["x"] = np.full(2, float(state["n_iters"]))

    runner.on(Event.EVALUATION, checkpoint("x", under=tmp_path, at_most=2))
    runner.run(50, every=20)

    assert sorted(p.name for p in tmp_path.glob("*.npz")) == ["40_x.npz", "50_x.npz"]
