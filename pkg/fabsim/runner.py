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

from collections import defaultdict
from typing import Callable, Dict, List, Optional

from .event import Event
from .exceptions import ConfigError

Callback = Callable[[dict], None]

_FINALIZERS = (
    Event._PBAR_CLOSED,
    Event._REDUCER_COMPUTED,
    Event.FINISHED,
    Event._TIMER_FINISHED,
)


class Runner:
    """A simulation runner.

    A runner drives an iteration loop up to a budget and emits events along the way; the
    work of an iteration (one algorithm step, say) is done by callbacks. To listen to an
    event, call `Runner.on` and provide a callback which will be called when the event is
    emitted. An event callback is a callable that accepts a `dict` and returns nothing.
    The `dict` is the state of the run. By default, the state contains:

    * ``max_iter`` - Iteration budget. A run never goes beyond it.
    * ``every`` - Evaluation cadence.
    * ``n_iters`` - Number of iterations done so far.
    * ``running`` - A boolean which equals ``True`` if the runner is still running. Can
      be set to ``False`` to stop the runner earlier.

    Attributes:
        state (dict): Runner's state that is passed to event callbacks.

    Note:
        Callbacks for an event are called in the order they are passed to `~Runner.on`.
        Once ``state['running']`` is ``False``, the remaining callbacks of an event are
        skipped, except for those of `Event.FINISHED` and the attachments' closing events.

    Example:

        >>> from fabsim import Event, Runner
        >>> runner = Runner()
        >>> @runner.on(Event.EVALUATION)
        ... def show(state):
        ...     print('evaluated at', state['n_iters'])
        ...
        >>> runner.run(5, every=2)
        evaluated at 2
        evaluated at 4
        evaluated at 5
    """

    def __init__(self) -> None:
        self.state: dict = {}
        self._callbacks: Dict[Event, List[Callback]] = defaultdict(list)

    def on(self, event: Event, callbacks=None):
        """Add single/multiple callback(s) to listen to an event.

        If ``callbacks`` is ``None``, this method returns a decorator which accepts
        a single callback for the event. If ``callbacks`` is a sequence of callbacks,
        they will all be added as listeners to the event *in order*.

        Args:
            event: Event to listen.
            callbacks: Callback(s) for the event.

        Returns:
            A decorator which accepts a callback, if ``callbacks`` is ``None``.
        """
        if callbacks is not None:
            cblist = self._callbacks[event]
            try:
                cblist.extend(callbacks)
            except TypeError:  # must be a single callback
                cblist.append(callbacks)
            return

        def decorator(cb: Callback) -> Callback:
            self._callbacks[event].append(cb)
            return cb

        return decorator

    def run(self, max_iter: int, every: int = 1) -> None:
        """Run up to ``max_iter`` iterations.

        Args:
            max_iter: Iteration budget.
            every: Emit `Event.EVALUATION` after every this many iterations.

        Raises:
            ConfigError: If ``max_iter`` or ``every`` is less than 1.
        """
        if max_iter < 1:
            raise ConfigError(f"max_iter must be at least 1, got {max_iter}")
        if every < 1:
            raise ConfigError(f"every must be at least 1, got {every}")

        state = self.state
        state.update({"max_iter": max_iter, "every": every, "n_iters": 0, "running": True})

        self._emit(Event._TIMER_STARTED, state)
        self._emit(Event.STARTED, state)
        self._emit(Event._REDUCER_RESET, state)
        self._emit(Event._PBAR_CREATED, state)
        self._loop()
        self._finish()

    def resume(self, max_iter: Optional[int] = None) -> None:
        """Resume runner starting from the current state.

        Args:
            max_iter: New iteration budget. Defaults to the previous one.

        Raises:
            ConfigError: If the new budget is below the iterations already done.
        """
        state = self.state
        if max_iter is not None:
            if max_iter < state["n_iters"]:
                raise ConfigError(
                    f"cannot resume with max_iter={max_iter} "
                    f"after {state['n_iters']} iterations"
                )
            state["max_iter"] = max_iter
        state["running"] = True

        self._emit(Event._TIMER_STARTED, state)
        self._emit(Event._PBAR_CREATED, state)
        self._loop()
        self._finish()

    def _loop(self) -> None:
        state = self.state
        while state["running"] and state["n_iters"] < state["max_iter"]:
            state["n_iters"] += 1
            self._emit(Event.ITERATION, state)
            self._emit(Event._REDUCER_UPDATED, state)
            self._emit(Event._PBAR_UPDATED, state)
            n = state["n_iters"]
            if n % state["every"] == 0 or n == state["max_iter"]:
                self._emit(Event.EVALUATION, state)

    def _finish(self) -> None:
        for event in _FINALIZERS:
            self._emit(event, self.state, force=True)
        self.state["running"] = False

    def _emit(self, event: Event, state: dict, force: bool = False) -> None:
        for callback in self._callbacks[event]:
            if not (force or state["running"]):
                break
            callback(state)
