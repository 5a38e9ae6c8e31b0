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
import abc

from scipy.linalg import solve
import numpy as np

from ..exceptions import ConfigError, UnsupportedOperation
from .base import BilevelProblem, Pair


class SingleLevelProblem(abc.ABC):
    """An agent-partitioned problem ``min_x (1/n) sum_i f_i(x)``.

    Like `BilevelProblem`, subclasses implement stacked oracles where row ``r`` of ``X``
    belongs to agent ``agents[r]``.
    """

    n: int
    dx: int
    noise_std: float = 0.0

    @abc.abstractmethod
    def grads(self, agents: np.ndarray, X: np.ndarray) -> np.ndarray:
        pass

    @abc.abstractmethod
    def values(self, agents: np.ndarray, X: np.ndarray) -> np.ndarray:
        pass

    @property
    def agents(self) -> np.ndarray:
        return np.arange(self.n)

    def grad(self, i: int, x: np.ndarray) -> np.ndarray:
        return self.grads(np.array([i]), np.asarray(x, dtype=float)[None])[0]

    def value(self, i: int, x: np.ndarray) -> float:
        return float(self.values(np.array([i]), np.asarray(x, dtype=float)[None])[0])

    def global_grad(self, x: np.ndarray) -> np.ndarray:
        return self.grads(self.agents, np.tile(x, (self.n, 1))).mean(axis=0)

    def global_value(self, x: np.ndarray) -> float:
        return float(self.values(self.agents, np.tile(x, (self.n, 1))).mean())

    def optimal_x(self) -> np.ndarray:
        raise UnsupportedOperation(f"{type(self).__name__} has no closed-form optimum")


class LeastSquaresProblem(SingleLevelProblem):
    """Ridge least squares ``f_i(x) = |M_i x - b_i|^2 / (2m) + reg |x|^2 / 2``."""

    def __init__(
        self, M: np.ndarray, b: np.ndarray, reg: float, noise_std: float = 0.0
    ) -> None:
        self.n, self.m, self.dx = M.shape
        self.M, self.b, self.reg = M, b, reg
        self.noise_std = noise_std

    def grads(self, agents: np.ndarray, X: np.ndarray) -> np.ndarray:
        M = self.M[agents]
        res = np.einsum("rmd,rd->rm", M, X) - self.b[agents]
        return np.einsum("rmd,rm->rd", M, res) / self.m + self.reg * X

    def values(self, agents: np.ndarray, X: np.ndarray) -> np.ndarray:
        res = np.einsum("rmd,rd->rm", self.M[agents], X) - self.b[agents]
        return (res ** 2).sum(axis=1) / (2 * self.m) + self.reg / 2 * (X ** 2).sum(axis=1)

    def optimal_x(self) -> np.ndarray:
        lhs = np.einsum("imd,ime->de", self.M, self.M) / (self.n * self.m)
        rhs = np.einsum("imd,im->d", self.M, self.b) / (self.n * self.m)
        return solve(lhs + self.reg * np.eye(self.dx), rhs, assume_a="pos")


class CosineRidgeProblem(SingleLevelProblem):
    """Smooth nonconvex ``f_i(x) = |x|^2 + a_i^T x + c * sum_j cos(x_j)``."""

    def __init__(self, a: np.ndarray, c: float, noise_std: float = 0.0) -> None:
        self.n, self.dx = a.shape
        self.a, self.c = a, c
        self.noise_std = noise_std

    def grads(self, agents: np.ndarray, X: np.ndarray) -> np.ndarray:
        return 2 * X + self.a[agents] - self.c * np.sin(X)

    def values(self, agents: np.ndarray, X: np.ndarray) -> np.ndarray:
        return (X ** 2).sum(axis=1) + (self.a[agents] * X).sum(axis=1) + self.c * np.cos(
            X
        ).sum(axis=1)


def build_least_squares_problem(
    n: int = 10,
    dx: int = 5,
    samples: int = 20,
    reg: float = 0.1,
    seed: int = 0,
    noise: float = 0.0,
) -> LeastSquaresProblem:
    """Draw a strongly convex least-squares instance with Gaussian data.

    Raises:
        ConfigError: On invalid sizes or a negative ``reg``.
    """
    if min(n, dx, samples) < 1:
        raise ConfigError("n, dx and samples must be at least 1")
    if reg < 0:
        raise ConfigError(f"reg must be nonnegative, got {reg}")
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((n, samples, dx))
    b = rng.standard_normal((n, samples)) + M @ rng.standard_normal(dx)
    return LeastSquaresProblem(M, b, reg, noise_std=noise)


def build_nonconvex_problem(
    n: int = 10, dx: int = 5, c: float = 3.0, seed: int = 0, noise: float = 0.0
) -> CosineRidgeProblem:
    if min(n, dx) < 1:
        raise ConfigError("n and dx must be at least 1")
    rng = np.random.default_rng(seed)
    return CosineRidgeProblem(rng.standard_normal((n, dx)), c, noise_std=noise)


class BilevelFromSingle(BilevelProblem):
    """View a single-level problem as a bilevel one with a trivial lower level.

    Agent ``i`` gets ``f_i(x, y) = h_i(x)`` and ``g_i(x, y) = mu |y|^2 / 2``, so every
    penalty term vanishes from the ``x`` direction and ``y* = 0``.

    Args:
        problem: The single-level problem ``h``.
        mu: Strong-convexity modulus of the lower level.
        dy: Dimension of the dummy lower variable.
    """

    has_second_order = True
    quadratic_in_y = True

    def __init__(self, problem: SingleLevelProblem, mu: float = 1.0, dy: int = 1) -> None:
        if not mu > 0:
            raise ConfigError(f"mu must be positive, got {mu}")
        self.problem = problem
        self.mu = mu
        self.n, self.dx, self.dy = problem.n, problem.dx, dy
        self.noise_std = problem.noise_std

    def grads_f(self, agents: np.ndarray, X: np.ndarray, Y: np.ndarray) -> Pair:
        return self.problem.grads(agents, X), np.zeros_like(Y)

    def grads_g(self, agents: np.ndarray, X: np.ndarray, Y: np.ndarray) -> Pair:
        return np.zeros_like(X), self.mu * Y

    def values_f(self, agents: np.ndarray, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        return self.problem.values(agents, X)

    def values_g(self, agents: np.ndarray, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        return self.mu / 2 * (Y ** 2).sum(axis=1)

    def hess_g_yy(self, i: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.mu * np.eye(self.dy)

    def hess_g_xy(self, i: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.zeros((self.dx, self.dy))

    def hess_f_yy(self, i: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.zeros((self.dy, self.dy))

    def lower_solution(self, x: np.ndarray) -> np.ndarray:
        return np.zeros(self.dy)

    def optimal_x(self) -> np.ndarray:
        return self.problem.optimal_x()


def as_single_level(problem: object) -> Optional[SingleLevelProblem]:
    """Return the single-level problem behind ``problem``, if any."""
    if isinstance(problem, SingleLevelProblem):
        return problem
    if isinstance(problem, BilevelFromSingle):
        return problem.problem
    return None
