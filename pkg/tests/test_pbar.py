from unittest.mock import MagicMock, call

from tqdm import tqdm

from fabsim import Event
from fabsim.attachments import ProgressBar


def test_ok(runner):
    mock_tqdm_cls = MagicMock(spec=tqdm)

    ProgressBar(tqdm_cls=mock_tqdm_cls).attach_on(runner)
    runner.run(10)

    mock_tqdm_cls.assert_called_once_with(total=10, initial=0)
    assert not mock_tqdm_cls.return_value.set_postfix.called
    assert mock_tqdm_cls.return_value.update.mock_calls == [call(1) for _ in range(10)]
    mock_tqdm_cls.return_value.close.assert_called_once_with()


def test_stats(runner):
    mock_tqdm_cls = MagicMock(spec=tqdm)

    @runner.on(Event.ITERATION)
    def on_iteration(state):
        state["stats"] = {"rel_err": 1.0 / state["n_iters"]}

    pbar = ProgressBar(tqdm_cls=mock_tqdm_cls, stats="stats")
    pbar.attach_on(runner)
    runner.run(4)

    assert mock_tqdm_cls.return_value.set_postfix.mock_calls == [
        call(rel_err=1.0 / k) for k in range(1, 5)
    ]


def test_with_kwargs(runner):
    mock_tqdm_cls = MagicMock(spec=tqdm)
    kwargs = {"foo": "bar", "baz": "quux"}

    ProgressBar(tqdm_cls=mock_tqdm_cls, **kwargs).attach_on(runner)
    runner.run(10)

    mock_tqdm_cls.assert_called_once_with(total=10, initial=0, **kwargs)


def test_closed_when_stopped(runner):
    mock_tqdm_cls = MagicMock(spec=tqdm)

    @runner.on(Event.ITERATION)
    def on_iteration(state):
        if state["n_iters"] == 2:
            state["running"] = False

    ProgressBar(tqdm_cls=mock_tqdm_cls).attach_on(runner)
    runner.run(10)

    assert mock_tqdm_cls.return_value.update.call_count == 1
    mock_tqdm_cls.return_value.close.assert_called_once_with()
