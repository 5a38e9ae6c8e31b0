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

from scipy.linalg import solve
import numpy as np

from ..exceptions import ConfigError
from .base import BilevelProblem, Pair, SmoothnessConstants


class PolicyEvaluationProblem(BilevelProblem):
    """Multi-agent policy evaluation with linear value features.

    ``y`` holds one value per state and is pinned by the lower level to the Bellman fixed
    point of the linear model ``x``; the upper level fits ``phi x`` to ``y``. Agents differ
    only in their expected rewards. The fit term is summed over states, or averaged with
    ``fit="mean"``.

    Args:
        phi: State features, shape ``(S, d)``.
        transitions: Row-stochastic transition matrix, shape ``(S, S)``.
        rewards: Expected reward per agent and state, shape ``(n, S)``.
        gamma: Discount factor.
        tau: Ridge coefficient of the upper level.
        noise_std: Gradient noise level.
        fit: ``"sum"`` or ``"mean"`` reduction of the fit term over states.
    """

    has_second_order = True
    quadratic_in_y = True

    def __init__(
        self,
        phi: np.ndarray,
        transitions: np.ndarray,
        rewards: np.ndarray,
        gamma: float,
        tau: float,
        noise_std: float = 0.0,
        fit: str = "sum",
    ) -> None:
        if fit not in ("sum", "mean"):
            raise ConfigError(f"fit must be 'sum' or 'mean', got {fit!r}")
        self.phi = phi
        self.psi = transitions @ phi
        self.rewards = rewards
        self.gamma = gamma
        self.tau = tau
        self.noise_std = noise_std
        self.n, self.S = rewards.shape
        self.fit = fit
        self.c = 1.0 if fit == "sum" else 1.0 / self.S
        c = self.c
        self.dx, self.dy = phi.shape[1], self.S

        f_hess = np.block(
            [
                [c * phi.T @ phi + tau * np.eye(self.dx), -c * phi.T],
                [-c * phi, c * np.eye(self.S)],
            ]
        )
        g_hess = 2 * np.block(
            [
                [gamma ** 2 * self.psi.T @ self.psi, -gamma * self.psi.T],
                [-gamma * self.psi, np.eye(self.S)],
            ]
        )
        self.constants = SmoothnessConstants(
            mu=2.0,
            L_f1=float(np.linalg.eigvalsh(f_hess)[-1]),
            L_g1=float(np.linalg.eigvalsh(g_hess)[-1]),
            L_f2=0.0,
            L_g2=0.0,
        )

    def _fit_residual(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        return X @ self.phi.T - Y

    def _bellman_residual(self, agents: np.ndarray, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        return Y - self.rewards[agents] - self.gamma * X @ self.psi.T

    def grads_f(self, agents: np.ndarray, X: np.ndarray, Y: np.ndarray) -> Pair:
        res = self._fit_residual(X, Y)
        return self.c * res @ self.phi + self.tau * X, -self.c * res

    def grads_g(self, agents: np.ndarray, X: np.ndarray, Y: np.ndarray) -> Pair:
        e = self._bellman_residual(agents, X, Y)
        return -2 * self.gamma * e @ self.psi, 2 * e

    def values_f(self, agents: np.ndarray, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        res = self._fit_residual(X, Y)
        return self.c / 2 * (res ** 2).sum(axis=1) + self.tau / 2 * (X ** 2).sum(axis=1)

    def values_g(self, agents: np.ndarray, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        return (self._bellman_residual(agents, X, Y) ** 2).sum(axis=1)

    def hess_g_yy(self, i: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return 2 * np.eye(self.S)

    def hess_g_xy(self, i: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return -2 * self.gamma * self.psi.T

    def hess_f_yy(self, i: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.c * np.eye(self.S)

    def hvp_g_yy(self, i: int, x: np.ndarray, y: np.ndarray, v: np.ndarray) -> np.ndarray:
        return 2 * v

    def jvp_g_xy(self, i: int, x: np.ndarray, y: np.ndarray, v: np.ndarray) -> np.ndarray:
        return -2 * self.gamma * self.psi.T @ v

    def lower_solution(self, x: np.ndarray) -> np.ndarray:
        return self.rewards.mean(axis=0) + self.gamma * self.psi @ x

    @property
    def reduced_features(self) -> np.ndarray:
        return self.phi - self.gamma * self.psi

    def single_level_value(self, x: np.ndarray) -> float:
        """The regularized least-squares objective left after eliminating ``y``."""
        res = self.reduced_features @ x - self.rewards.mean(axis=0)
        return float(self.c / 2 * res @ res + self.tau / 2 * x @ x)

    def optimal_x(self) -> np.ndarray:
        Phi = self.reduced_features
        lhs = self.c * Phi.T @ Phi + self.tau * np.eye(self.dx)
        return solve(lhs, self.c * Phi.T @ self.rewards.mean(axis=0), assume_a="pos")


def build_rl_problem(
    n: int = 10,
    S: int = 20,
    d: int = 5,
    gamma: float = 0.9,
    tau: float = 0.1,
    noise: float = 0.0,
    seed: int = 0,
    fit: str = "sum",
) -> PolicyEvaluationProblem:
    """Draw a random policy-evaluation instance.

    Features, transition weights and the expected rewards ``r_i(s)`` of every agent are
    uniform on [0, 1]; transitions are row-normalized.

    Example:

        >>> P = build_rl_problem(seed=0)
        >>> P.n, P.dx, P.dy
        (10, 5, 20)

    Raises:
        ConfigError: On ``S <= d``, a discount outside (0, 1), a nonpositive ``tau`` or an
            unknown ``fit``.
    """
    if not S > d >= 1:
        raise ConfigError(f"need S > d >= 1, got S={S}, d={d}")
    if not 0 < gamma < 1:
        raise ConfigError(f"gamma must be in (0, 1), got {gamma}")
    if not tau > 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    if n < 1:
        raise ConfigError(f"need at least one agent, got n={n}")

    rng = np.random.default_rng(seed)
    phi = rng.uniform(size=(S, d))
    transitions = rng.uniform(size=(S, S))
    transitions /= transitions.sum(axis=1, keepdims=True)
    rewards = rng.uniform(size=(n, S))
    return PolicyEvaluationProblem(
        phi, transitions, rewards, gamma, tau, noise_std=noise, fit=fit
    )
