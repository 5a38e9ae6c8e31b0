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

from enum import Enum, auto


class Event(Enum):
    """An enumeration of simulation events.

    Attributes:
        STARTED: Emitted once at the start of a run.
        ITERATION: Emitted on every iteration.
        EVALUATION: Emitted every ``every`` iterations and on the last one.
        FINISHED: Emitted once at the end of a run, also when it was stopped early.
    """

    STARTED = auto()
    ITERATION = auto()
    EVALUATION = auto()
    FINISHED = auto()

    # Events for WallClock attachment
    _TIMER_STARTED = auto()
    _TIMER_FINISHED = auto()

    # Events for ProgressBar attachment
    _PBAR_CREATED = auto()
    _PBAR_UPDATED = auto()
    _PBAR_CLOSED = auto()

    # Events for LambdaReducer attachment
    _REDUCER_RESET = auto()
    _REDUCER_UPDATED = auto()
    _REDUCER_COMPUTED = auto()
