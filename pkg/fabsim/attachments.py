# Copyright 2026 The fabsim Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

from datetime import timedelta
from pathlib import Path
from typing import IO, Any, Callable, List, Optional, Type
from warnings import warn
import abc
import csv
import logging
import time

from tqdm import tqdm

from .diagnostics import MetricsRow
from .event import Event
from .runner import Runner


class Attachment(abc.ABC):
    """An abstract base class for an attachment."""

    @abc.abstractmethod
    def attach_on(self, runner: Runner) -> None:
        """Attach to a runner.

        Args:
            runner: Runner to attach to.
        """
        pass


class WallClock(Attachment):
    """An attachment to time a run.

    The cumulative wall time over `~Runner.run` and `~Runner.resume` calls is stored in
    ``state['wall_time_s']``. Start and end are logged with log level of INFO.
    """

    logger = logging.getLogger(f"{__name__}.wall_clock")
    _start_time = "_wall_clock_start"
    key = "wall_time_s"

    def attach_on(self, runner: Runner) -> None:
        runner.on(Event._TIMER_STARTED, self._start)
        runner.on(Event._TIMER_FINISHED, self._finish)

    @classmethod
    def elapsed(cls, state: dict) -> float:
        """Wall time so far, including the part of the run still in progress."""
        total = state.get(cls.key, 0.0)
        if cls._start_time in state:
            total += time.perf_counter() - state[cls._start_time]
        return total

    def _start(self, state: dict) -> None:
        if state["n_iters"]:
            self.logger.info("Resuming at iteration %d/%d", state["n_iters"], state["max_iter"])
        else:
            self.logger.info("Starting run of at most %d iterations", state["max_iter"])
            state[self.key] = 0.0
        state[self._start_time] = time.perf_counter()

    def _finish(self, state: dict) -> None:
        state[self.key] = self.elapsed(state)
        state.pop(self._start_time)
        self.logger.info(
            "Stopped after %d iterations in %s",
            state["n_iters"],
            timedelta(seconds=state[self.key]),
        )


class ProgressBar(Attachment):
    """An attachment to display a progress bar over iterations.

    The progress bar is implemented using `tqdm`_.

    Example:

        >>> from fabsim import Runner
        >>> from fabsim.attachments import ProgressBar
        >>> runner = Runner()
        >>> ProgressBar(disable=True).attach_on(runner)
        >>> runner.run(100)

    Args:
        stats: Get the statistics from ``state[stats]`` and display them along with the
            progress bar. The statistics dictionary has the names of the statistics as keys
            and the statistics as values.
        **kwargs: Keyword arguments to be passed to `tqdm`_ class.


    .. _tqdm: https://github.com/tqdm/tqdm
    """

    def __init__(
        self, *, stats: Optional[str] = None, tqdm_cls: Optional[Type[tqdm]] = None, **kwargs
    ) -> None:
        if tqdm_cls is None:  # pragma: no cover
            tqdm_cls = tqdm

        self._tqdm_cls = tqdm_cls
        self._stats = stats
        self._kwargs = kwargs

        self._pbar: tqdm

    def attach_on(self, runner: Runner) -> None:
        runner.on(Event._PBAR_CREATED, self._create)
        runner.on(Event._PBAR_UPDATED, self._update)
        runner.on(Event._PBAR_CLOSED, self._close)

    def _create(self, state: dict) -> None:
        self._pbar = self._tqdm_cls(
            total=state["max_iter"], initial=state["n_iters"], **self._kwargs
        )

    def _update(self, state: dict) -> None:
        if self._stats is not None and self._stats in state:
            self._pbar.set_postfix(**state[self._stats])
        self._pbar.update(1)

    def _close(self, state: dict) -> None:
        self._pbar.close()


class LambdaReducer(Attachment):
    """An attachment to compute a reduction over iterations.

    This attachment gets the value of each iteration and computes a reduction over them
    at the end of the run. A resumed run keeps reducing from where it stopped.

    Example:

        >>> from fabsim import Event, Runner
        >>> from fabsim.attachments import LambdaReducer
        >>> runner = Runner()
        >>> LambdaReducer('product', lambda x, y: x * y).attach_on(runner)
        >>> @runner.on(Event.ITERATION)
        ... def on_iteration(state):
        ...     state['output'] = state['n_iters']
        ...
        >>> runner.run(4)
        >>> runner.state['product']
        24

    Args:
        name: Name of this attachment to be used as the key in the runner's
            state dict to store the reduction result.
        reduce_fn: Reduction function. It should accept two iteration values and
            return their reduction result.
        value: Get the value of an iteration from ``state[value]``.
    """

    _names = "_reducer_names"

    def __init__(
        self, name: str, reduce_fn: Callable[[Any, Any], Any], *, value: str = "output"
    ) -> None:
        self.name = name
        self._reduce_fn = reduce_fn
        self._value = value

    def attach_on(self, runner: Runner) -> None:
        names = runner.state.setdefault(self._names, set())
        if self.name in names:
            warn(
                f"You may have multiple reducers with name={self.name!r}, so one will "
                "overwrite the other."
            )
        names.add(self.name)
        runner.on(Event._REDUCER_RESET, self._reset)
        runner.on(Event._REDUCER_UPDATED, self._update)
        runner.on(Event._REDUCER_COMPUTED, self._compute)

    @property
    def _result(self) -> str:
        return f"_{self.name}_reducer_result"

    def _reset(self, state: dict) -> None:
        state[self._result] = None

    def _update(self, state: dict) -> None:
        if state[self._result] is None:
            state[self._result] = state[self._value]
        else:
            state[self._result] = self._reduce_fn(state[self._result], state[self._value])

    def _compute(self, state: dict) -> None:
        state[self.name] = state[self._result]


class SumReducer(LambdaReducer):
    """An attachment to compute a sum over iteration values, e.g. communication cost.

    Args:
        name: Name of this attachment to be used as the key in the runner's state
            dict to store the sum.
        value: Get the value of an iteration from ``state[value]``.
    """

    def __init__(self, name: str, *, value: str = "output") -> None:
        super().__init__(name, lambda x, y: x + y, value=value)


class MetricsRecorder(Attachment):
    """An attachment to collect the `MetricsRow` of every evaluation.

    Rows are read from ``state[key]`` at the start of the run (when present) and on every
    `Event.EVALUATION`, kept in `rows` and, if ``path`` is given, streamed to a CSV file
    whose header is written once.

    Args:
        path: CSV file to write.
        timing: Fill the ``wall_time_s`` column. Left empty otherwise, so that runs with the
            same seed give identical files.
        key: Get the current row from ``state[key]``.
    """

    logger = logging.getLogger(f"{__name__}.metrics")

    def __init__(
        self, path: Optional[Path] = None, *, timing: bool = False, key: str = "metrics"
    ) -> None:
        self.path = Path(path) if path is not None else None
        self.timing = timing
        self.key = key
        self.rows: List[MetricsRow] = []
        self._file: Optional[IO[str]] = None

    def attach_on(self, runner: Runner) -> None:
        runner.on(Event.STARTED, self._start)
        runner.on(Event.EVALUATION, self._record)
        runner.on(Event.FINISHED, self._close)

    def _start(self, state: dict) -> None:
        self.rows = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._file = open(self.path, "w", newline="")
            csv.writer(self._file).writerow(MetricsRow.columns())
            self.logger.debug("Writing metrics to %s", self.path)
        if state.get(self.key) is not None:
            self._record(state)

    def _record(self, state: dict) -> None:
        row = state[self.key]
        self.rows.append(row)
        if self.path is None:
            return
        if self._file is None:
            self._file = open(self.path, "a", newline="")
        csv.writer(self._file).writerow(row.csv_fields(self.timing))

    def _close(self, state: dict) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None
