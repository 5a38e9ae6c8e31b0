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

from dataclasses import dataclass
from typing import Callable, Optional, Tuple
from warnings import warn
import abc
import logging

from scipy.linalg import LinAlgError, cho_factor, cho_solve
import numpy as np

from ..digraph import derive_seed
from ..exceptions import ConfigError, DomainError, UnsupportedOperation

Pair = Tuple[np.ndarray, np.ndarray]
Triple = Tuple[np.ndarray, np.ndarray, np.ndarray]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SmoothnessConstants:
    """Analytically known smoothness data of a problem; unknown entries are ``None``."""

    mu: float
    L_f1: float
    L_g1: float
    L_f0: Optional[float] = None
    L_f2: Optional[float] = None
    L_g2: Optional[float] = None

    @property
    def penalty_threshold(self) -> float:
        """Smallest penalty for which the penalized lower level stays strongly convex."""
        return 2 * self.L_f1 / self.mu


@dataclass(frozen=True)
class PenaltyConfig:
    """The penalty parameter, checked against the problem's constants when known.

    Raises:
        ConfigError: If ``lam`` is not positive.
    """

    lam: float
    constants: Optional[SmoothnessConstants] = None

    def __post_init__(self) -> None:
        if not self.lam > 0:
            raise ConfigError(f"penalty parameter must be positive, got {self.lam}")
        if self.constants is not None and self.lam < self.constants.penalty_threshold:
            warn(
                f"lam={self.lam} is below 2*L_f1/mu={self.constants.penalty_threshold:.4g}; "
                "the penalized lower level may not be strongly convex"
            )


@dataclass(frozen=True)
class NoiseStream:
    """Additive Gaussian gradient noise, reproducible per (agent, iteration, variable)."""

    seed: int
    std: float

    def draw(self, agent: int, k: int, tag: int, size: int) -> np.ndarray:
        rng = np.random.default_rng(derive_seed(self.seed, agent, k, tag))
        return rng.normal(0.0, self.std, size)


class BilevelProblem(abc.ABC):
    """An agent-partitioned bilevel problem.

    Agent ``i`` holds an upper objective ``f_i(x, y)`` and a lower objective ``g_i(x, y)``;
    the global objectives ``F`` and ``G`` are their averages over agents. Subclasses implement
    the stacked oracles, which evaluate row ``r`` of ``X``/``Y`` for agent ``agents[r]``.
    The per-agent oracles are thin wrappers around them.

    Attributes:
        n: Number of agents.
        dx: Dimension of the upper variable.
        dy: Dimension of the lower variable (shared by the auxiliary variable ``z``).
        noise_std: Standard deviation of additive gradient noise.
        constants: Smoothness constants, when analytically known.
        has_second_order: Whether Hessian(-vector) oracles are available.
        quadratic_in_y: Whether ``f_i`` and ``g_i`` are quadratic in ``y``.
    """

    n: int
    dx: int
    dy: int
    noise_std: float = 0.0
    constants: Optional[SmoothnessConstants] = None
    has_second_order = False
    quadratic_in_y = False

    @abc.abstractmethod
    def grads_f(self, agents: np.ndarray, X: np.ndarray, Y: np.ndarray) -> Pair:
        """Return ``(grad_x f, grad_y f)`` stacked over rows."""

    @abc.abstractmethod
    def grads_g(self, agents: np.ndarray, X: np.ndarray, Y: np.ndarray) -> Pair:
        """Return ``(grad_x g, grad_y g)`` stacked over rows."""

    @abc.abstractmethod
    def values_f(self, agents: np.ndarray, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        pass

    @abc.abstractmethod
    def values_g(self, agents: np.ndarray, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        pass

    def hess_g_yy(self, i: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise UnsupportedOperation(f"{type(self).__name__} has no second-order oracles")

    def hess_g_xy(self, i: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Mixed Hessian of ``g_i`` with shape ``(dx, dy)``."""
        raise UnsupportedOperation(f"{type(self).__name__} has no second-order oracles")

    def hess_f_yy(self, i: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise UnsupportedOperation(f"{type(self).__name__} has no second-order oracles")

    def hvp_g_yy(self, i: int, x: np.ndarray, y: np.ndarray, v: np.ndarray) -> np.ndarray:
        return self.hess_g_yy(i, x, y) @ v

    def jvp_g_xy(self, i: int, x: np.ndarray, y: np.ndarray, v: np.ndarray) -> np.ndarray:
        return self.hess_g_xy(i, x, y) @ v

    def lower_solution(self, x: np.ndarray) -> np.ndarray:
        """Exact minimizer ``y*(x)`` of ``G(x, .)``."""
        raise UnsupportedOperation(f"{type(self).__name__} has no exact lower solution")

    def optimal_x(self) -> np.ndarray:
        """Exact minimizer of ``F(x, y*(x))``."""
        raise UnsupportedOperation(f"{type(self).__name__} has no closed-form optimum")

    @property
    def agents(self) -> np.ndarray:
        return np.arange(self.n)

    def _one(self, i: int, x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, ...]:
        return np.array([i]), np.asarray(x, dtype=float)[None], np.asarray(y, dtype=float)[None]

    def grad_f_x(self, i: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.grads_f(*self._one(i, x, y))[0][0]

    def grad_f_y(self, i: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.grads_f(*self._one(i, x, y))[1][0]

    def grad_g_x(self, i: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.grads_g(*self._one(i, x, y))[0][0]

    def grad_g_y(self, i: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.grads_g(*self._one(i, x, y))[1][0]

    def f_value(self, i: int, x: np.ndarray, y: np.ndarray) -> float:
        return float(self.values_f(*self._one(i, x, y))[0])

    def g_value(self, i: int, x: np.ndarray, y: np.ndarray) -> float:
        return float(self.values_g(*self._one(i, x, y))[0])

    def _tiled(self, x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, ...]:
        return self.agents, np.tile(x, (self.n, 1)), np.tile(y, (self.n, 1))

    def upper_value(self, x: np.ndarray, y: np.ndarray) -> float:
        return float(self.values_f(*self._tiled(x, y)).mean())

    def lower_value(self, x: np.ndarray, y: np.ndarray) -> float:
        return float(self.values_g(*self._tiled(x, y)).mean())

    def upper_grads(self, x: np.ndarray, y: np.ndarray) -> Pair:
        gx, gy = self.grads_f(*self._tiled(x, y))
        return gx.mean(axis=0), gy.mean(axis=0)

    def lower_grads(self, x: np.ndarray, y: np.ndarray) -> Pair:
        gx, gy = self.grads_g(*self._tiled(x, y))
        return gx.mean(axis=0), gy.mean(axis=0)

    def _mean_over_agents(self, oracle: Callable, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return sum(oracle(i, x, y) for i in range(self.n)) / self.n

    def hess_G_yy(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self._mean_over_agents(self.hess_g_yy, x, y)

    def hess_G_xy(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self._mean_over_agents(self.hess_g_xy, x, y)

    def hess_F_yy(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self._mean_over_agents(self.hess_f_yy, x, y)


def _check_rows(P: BilevelProblem, X: np.ndarray, Y: np.ndarray, Z: np.ndarray) -> None:
    if X.ndim != 2 or X.shape[1] != P.dx:
        raise DomainError(f"x has shape {X.shape}, expected (*, {P.dx})")
    for name, M in (("y", Y), ("z", Z)):
        if M.shape != (X.shape[0], P.dy):
            raise DomainError(f"{name} has shape {M.shape}, expected {(X.shape[0], P.dy)}")


def penalty_gradients(
    P: BilevelProblem,
    X: np.ndarray,
    Y: np.ndarray,
    Z: np.ndarray,
    lam: float,
    *,
    agents: Optional[np.ndarray] = None,
    noise: Optional[NoiseStream] = None,
    k: int = 0,
) -> Triple:
    """Stacked version of `local_penalty_gradients`; row ``r`` belongs to ``agents[r]``."""
    if agents is None:
        agents = P.agents
    _check_rows(P, X, Y, Z)
    gfx, gfy = P.grads_f(agents, X, Y)
    ggx_y, ggy_y = P.grads_g(agents, X, Y)
    ggx_z, ggy_z = P.grads_g(agents, X, Z)

    DZ = lam * ggy_z
    DY = gfy + lam * ggy_y
    DX = gfx + lam * (ggx_y - ggx_z)

    if noise is not None and noise.std > 0:
        for r, i in enumerate(agents):
            DX[r] += noise.draw(int(i), k, 0, P.dx)
            DY[r] += noise.draw(int(i), k, 1, P.dy)
            DZ[r] += noise.draw(int(i), k, 2, P.dy)
    return DX, DY, DZ


def local_penalty_gradients(
    P: BilevelProblem,
    i: int,
    x: np.ndarray,
    y: np.ndarray,
    z: np.ndarray,
    lam: float,
    noise: Optional[NoiseStream] = None,
    k: int = 0,
) -> Triple:
    """Descent directions of agent ``i`` on its penalty function.

    The penalty function is ``f_i(x, y) + lam * (g_i(x, y) - g_i(x, z))``. The returned
    ``d_z`` is ``lam * grad_y g_i(x, z)``, the negated z-gradient, so all three directions
    are used in a descent step.

    Example:

        >>> import numpy as np
        >>> from fabsim.problems.quadratic import QuadraticBilevelProblem
        >>> P = QuadraticBilevelProblem.toy()
        >>> local_penalty_gradients(P, 0, np.zeros(1), np.ones(1), np.full(1, 3.0), 2.0)
        (array([4.]), array([3.]), array([6.]))

    Raises:
        DomainError: On a dimension mismatch.
    """
    DX, DY, DZ = penalty_gradients(
        P,
        np.asarray(x, dtype=float)[None],
        np.asarray(y, dtype=float)[None],
        np.asarray(z, dtype=float)[None],
        lam,
        agents=np.array([i]),
        noise=noise,
        k=k,
    )
    return DX[0], DY[0], DZ[0]


def penalty_value(
    P: BilevelProblem, x: np.ndarray, y: np.ndarray, z: np.ndarray, lam: float
) -> float:
    """Global penalty function ``F(x, y) + lam * (G(x, y) - G(x, z))``."""
    return P.upper_value(x, y) + lam * (P.lower_value(x, y) - P.lower_value(x, z))


def spd_factor(H: np.ndarray):
    try:
        return cho_factor(H)
    except LinAlgError as e:
        raise DomainError("lower-level Hessian is not positive definite") from e


def hypergradient(P: BilevelProblem, x: np.ndarray) -> np.ndarray:
    """Total gradient of ``F(x, y*(x))``.

    Computed as ``grad_x F - H_xy H_yy^{-1} grad_y F`` at ``y*(x)``, with a Cholesky solve.

    Raises:
        UnsupportedOperation: If the problem lacks second-order or exact lower oracles.
        DomainError: If the lower-level Hessian is not positive definite.
    """
    if not P.has_second_order:
        raise UnsupportedOperation(f"{type(P).__name__} has no second-order oracles")
    y = P.lower_solution(x)
    gx, gy = P.upper_grads(x, y)
    v = cho_solve(spd_factor(P.hess_G_yy(x, y)), gy)
    return gx - P.hess_G_xy(x, y) @ v


def soba_directions(
    P: BilevelProblem, i: int, x: np.ndarray, y: np.ndarray, v: np.ndarray
) -> Triple:
    """Local directions of the second-order baseline.

    ``d_y = grad_y g_i``, ``d_v = H_yy g_i v - grad_y f_i`` and
    ``d_x = grad_x f_i - H_xy g_i v``.

    Raises:
        UnsupportedOperation: If the problem lacks second-order oracles.
    """
    if not P.has_second_order:
        raise UnsupportedOperation(f"{type(P).__name__} has no second-order oracles")
    d_y = P.grad_g_y(i, x, y)
    d_v = P.hvp_g_yy(i, x, y, v) - P.grad_f_y(i, x, y)
    d_x = P.grad_f_x(i, x, y) - P.jvp_g_xy(i, x, y, v)
    return d_x, d_y, d_v


def minimize_lower(
    grad: Callable[[np.ndarray], np.ndarray],
    y0: np.ndarray,
    step: float,
    tol: float = 1e-10,
    max_steps: int = 100_000,
) -> np.ndarray:
    """Damped gradient descent until the gradient norm drops below ``tol``."""
    y = np.array(y0, dtype=float)
    for _ in range(max_steps):
        g = grad(y)
        if np.linalg.norm(g) <= tol:
            break
        y -= step * g
    else:
        logger.debug("Inner solve stopped at the step cap with |grad|=%.3e", np.linalg.norm(g))
    return y


def penalty_lower_solution(P: BilevelProblem, x: np.ndarray, lam: float) -> np.ndarray:
    """Minimizer ``y*_lam(x)`` of ``F(x, .) + lam * G(x, .)``.

    Solved in closed form when both levels are quadratic in ``y``, and by damped gradient
    descent otherwise.

    Raises:
        UnsupportedOperation: If neither route is available.
    """
    y0 = np.zeros(P.dy)
    if P.quadratic_in_y and P.has_second_order:
        H = P.hess_F_yy(x, y0) + lam * P.hess_G_yy(x, y0)
        rhs = P.upper_grads(x, y0)[1] + lam * P.lower_grads(x, y0)[1]
        return -cho_solve(spd_factor(H), rhs)
    if P.constants is None:
        raise UnsupportedOperation(f"no step size known to solve {type(P).__name__}")
    step = 1.0 / (P.constants.L_f1 + lam * P.constants.L_g1)
    return minimize_lower(
        lambda y: P.upper_grads(x, y)[1] + lam * P.lower_grads(x, y)[1], y0, step
    )
