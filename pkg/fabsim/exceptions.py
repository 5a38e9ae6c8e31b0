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

from typing import Optional


class FabsimError(Exception):
    """Base class of all errors raised by fabsim."""


class ConfigError(FabsimError, ValueError):
    """An invalid configuration, detected before any compute."""


class DomainError(FabsimError, ValueError):
    """An argument outside the mathematical domain of an operation."""


class UnsupportedOperation(FabsimError, NotImplementedError):
    """The problem does not provide the oracle an operation needs."""


class InternalError(FabsimError, RuntimeError):
    """An analytic invariant was violated."""


class NumericalDivergence(FabsimError, ArithmeticError):
    """A non-finite value appeared during an iteration.

    Args:
        iteration: Iteration index at which the value appeared.
        agent: Index of the first offending agent, if known.
        variable: Name of the offending variable, if known.
    """

    def __init__(
        self, iteration: int, agent: Optional[int] = None, variable: Optional[str] = None
    ) -> None:
        self.iteration = iteration
        self.agent = agent
        self.variable = variable
        where = f" at agent {agent}" if agent is not None else ""
        what = f" in {variable}" if variable is not None else ""
        super().__init__(f"non-finite value{what}{where} at iteration {iteration}")
