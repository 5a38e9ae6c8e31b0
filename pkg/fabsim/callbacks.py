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

from collections import deque
from typing import Any, Callable, Optional
from pathlib import Path
import logging

import numpy as np

from .exceptions import ConfigError


def stop_below(
    threshold: float,
    *,
    metric: str = "rel_err",
    source: str = "metrics",
    record: str = "stopped_at",
):
    """A callback factory for threshold stopping.

    The returned callback reads the attribute ``metric`` of ``state[source]``. The first time
    it is below ``threshold``, the callback stores the current iteration in
    ``state[record]`` and stops the runner by setting ``state['running'] = False``.

    Example:

        >>> from types import SimpleNamespace
        >>> from fabsim import Event, Runner
        >>> from fabsim.callbacks import stop_below
        >>> runner = Runner()
        >>> @runner.on(Event.EVALUATION)
        ... def evaluate(state):
        ...     state['metrics'] = SimpleNamespace(rel_err=1.0 / state['n_iters'])
        ...
        >>> runner.on(Event.EVALUATION, stop_below(0.3))
        >>> runner.run(10)
        >>> runner.state['stopped_at']
        4

    Args:
        threshold: Stop when the metric drops below this value.
        metric: Name of the metric attribute.
        source: Get the metrics object from ``state[source]``.
        record: Store the stopping iteration in ``state[record]``.

    Returns:
        Callback that does threshold stopping.
    """
    if not threshold > 0:
        raise ConfigError(f"threshold must be positive, got {threshold}")
    logger = logging.getLogger(f"{__name__}.stopping")

    def callback(state):
        value = getattr(state[source], metric, None)
        if value is not None and value < threshold:
            logger.info(
                "%s=%.3e below %g at iteration %d, stopping",
                metric,
                value,
                threshold,
                state["n_iters"],
            )
            state[record] = state["n_iters"]
            state["running"] = False

    return callback


def stop_on_divergence(
    *,
    source: str = "metrics",
    flag: str = "diverged",
    metric: str = "rel_err",
    bound: Optional[float] = None,
):
    """A callback factory guarding against blown-up metrics.

    The returned callback stops the runner and sets ``state[flag] = True`` when
    ``state[source].finite()`` is ``False``, or when the attribute ``metric`` exceeds
    ``bound`` if one is given.

    Example:

        >>> from types import SimpleNamespace
        >>> from fabsim import Event, Runner
        >>> from fabsim.callbacks import stop_on_divergence
        >>> runner = Runner()
        >>> @runner.on(Event.EVALUATION)
        ... def evaluate(state):
        ...     value = 10.0 ** state['n_iters']
        ...     state['metrics'] = SimpleNamespace(rel_err=value, finite=lambda: True)
        ...
        >>> runner.on(Event.EVALUATION, stop_on_divergence(bound=1e3))
        >>> runner.run(10)
        >>> runner.state['n_iters'], runner.state['diverged']
        (4, True)

    Args:
        source: Get the `~fabsim.diagnostics.MetricsRow` from ``state[source]``.
        flag: Mark the divergence in ``state[flag]``.
        metric: Name of the metric attribute compared against ``bound``.
        bound: Largest tolerated value of the metric.

    Returns:
        Callback that stops diverged runs.
    """
    if bound is not None and not bound > 0:
        raise ConfigError(f"bound must be positive, got {bound}")
    logger = logging.getLogger(f"{__name__}.stopping")

    def callback(state):
        row = state[source]
        if not row.finite():
            logger.warning("Non-finite metrics at iteration %d, stopping", state["n_iters"])
        elif bound is not None and (getattr(row, metric, None) or 0.0) > bound:
            logger.warning(
                "%s above %g at iteration %d, stopping", metric, bound, state["n_iters"]
            )
        else:
            return
        state[flag] = True
        state["running"] = False

    return callback


def checkpoint(
    what: str,
    obj: Optional[Any] = None,
    *,
    under: Optional[Path] = None,
    at_most: int = 1,
    when: Optional[str] = None,
    using: Optional[Callable[[Any, Path], None]] = None,
    ext: str = "npz",
    prefix_fmt: str = "{n_iters}_",
    queue_fmt: str = "_saved_{what}",
):
    """A callback factory for checkpointing.

    Checkpointing means saving ``obj`` (or ``state[what]`` if ``obj`` is ``None``) during a
    run under ``under`` directory with ``{prefix_fmt}{what}.{ext}`` as the filename.

    Example:

        >>> import tempfile
        >>> from pathlib import Path
        >>> import numpy as np
        >>> from fabsim import Event, Runner
        >>> from fabsim.callbacks import checkpoint
        >>>
        >>> tmp_dir = Path(tempfile.mkdtemp())
        >>> runner = Runner()
        >>> @runner.on(Event.EVALUATION)
        ... def store_iterate(state):
        ...     state['x'] = np.full(3, float(state['n_iters']))
        ...
        >>> runner.on(Event.EVALUATION, checkpoint('x', under=tmp_dir, at_most=2))
        >>> runner.run(100, every=25)
        >>> sorted(p.name for p in tmp_dir.glob('*.npz'))
        ['100_x.npz', '75_x.npz']

    Args:
        what: Name of the object to save.
        obj: Object to save. If ``None``, will be obtained from ``state[what]``.
        under: Save the object under this directory. Defaults to the current working directory
            if not given.
        at_most: Maximum number of files saved. When the number of files exceeds this number,
            older files will be deleted.
        when: If given, only save the object when ``state[when]`` is ``True``.
        using: Function to invoke to save the object. If given, this must be a callable
            accepting two arguments: an object to save and a `Path` to save it to. The default
            is `numpy.savez`, of ``obj.to_dict()`` when the object has it.
        ext: Extension for the filename.
        prefix_fmt: Format for the filename prefix. Any string keys in ``state`` can be used
            as replacement fields.
        queue_fmt: Keeps track of the saved files for the object with a queue stored in
            ``state[queue_fmt.format(what=what)]``.

    Returns:
        Callback that does checkpointing.
    """
    if under is None:  # pragma: no cover
        under = Path.cwd()
    if using is None:
        using = _save_with_numpy
    qkey = queue_fmt.format(what=what)
    logger = logging.getLogger(f"{__name__}.checkpointing")

    def callback(state):
        q = state.get(qkey, deque())
        if when is None or state[when]:
            fmt = f"{prefix_fmt}{what}.{ext}"
            path = under / fmt.format(**state)
            logger.info("Saving to %s", path)
            using(state[what] if obj is None else obj, path)
            q.append(path)
        while len(q) > at_most:
            p = q.popleft()
            if p.exists():
                p.unlink()
        state[qkey] = q

    return callback


def _save_with_numpy(obj: Any, path: Path) -> None:
    if hasattr(obj, "to_dict"):
        np.savez(path, **obj.to_dict())
    else:
        np.savez(path, obj)
