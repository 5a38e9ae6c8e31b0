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

from scipy.linalg import cho_factor, cho_solve
import numpy as np

from ..exceptions import ConfigError, DomainError
from .base import BilevelProblem, Pair, SmoothnessConstants, spd_factor


class QuadraticBilevelProblem(BilevelProblem):
    """Quadratic upper and lower levels with closed-form oracles.

    With ``u = (x, y)``, agent ``i`` has ``f_i = u^T H_i u / 2 + c_i^T u`` and
    ``g_i = y^T Q_i y / 2 + y^T R_i x + s_i^T y``.

    Args:
        H: Upper Hessians, shape ``(n, dx + dy, dx + dy)``.
        c: Upper linear terms, shape ``(n, dx + dy)``.
        Q: Lower Hessians in ``y``, shape ``(n, dy, dy)``.
        R: Lower coupling, shape ``(n, dy, dx)``.
        s: Lower linear terms, shape ``(n, dy)``.
        noise_std: Gradient noise level.

    Raises:
        DomainError: If the shapes disagree or the average ``Q`` is not positive definite.
    """

    has_second_order = True
    quadratic_in_y = True

    def __init__(
        self,
        H: np.ndarray,
        c: np.ndarray,
        Q: np.ndarray,
        R: np.ndarray,
        s: np.ndarray,
        noise_std: float = 0.0,
    ) -> None:
        self.n, self.dy, self.dx = R.shape
        D = self.dx + self.dy
        expected = {
            "H": (self.n, D, D),
            "c": (self.n, D),
            "Q": (self.n, self.dy, self.dy),
            "s": (self.n, self.dy),
        }
        for name, arr in zip(expected, (H, c, Q, s)):
            if arr.shape != expected[name]:
                raise DomainError(f"{name} has shape {arr.shape}, expected {expected[name]}")
        self.H, self.c, self.Q, self.R, self.s = H, c, Q, R, s
        self.noise_std = noise_std

        self._Q_factor = spd_factor(Q.mean(axis=0))
        self.constants = SmoothnessConstants(
            mu=float(min(np.linalg.eigvalsh(Qi)[0] for Qi in Q)),
            L_f1=float(max(np.linalg.norm(Hi, 2) for Hi in H)),
            L_g1=float(max(np.linalg.norm(self._joint_g_hessian(i), 2) for i in range(self.n))),
            L_f2=0.0,
            L_g2=0.0,
        )
        self._x_star: Optional[np.ndarray] = None

    @classmethod
    def toy(cls) -> "QuadraticBilevelProblem":
        """One agent with ``f = y^2 / 2`` and ``g = (y - x)^2 / 2`` (up to a term in ``x``)."""
        return cls(
            H=np.array([[[0.0, 0.0], [0.0, 1.0]]]),
            c=np.zeros((1, 2)),
            Q=np.ones((1, 1, 1)),
            R=-np.ones((1, 1, 1)),
            s=np.zeros((1, 1)),
        )

    def _joint_g_hessian(self, i: int) -> np.ndarray:
        top = np.hstack([np.zeros((self.dx, self.dx)), self.R[i].T])
        bottom = np.hstack([self.R[i], self.Q[i]])
        return np.vstack([top, bottom])

    def grads_f(self, agents: np.ndarray, X: np.ndarray, Y: np.ndarray) -> Pair:
        U = np.hstack([X, Y])
        G = np.einsum("mij,mj->mi", self.H[agents], U) + self.c[agents]
        return G[:, : self.dx], G[:, self.dx :]

    def grads_g(self, agents: np.ndarray, X: np.ndarray, Y: np.ndarray) -> Pair:
        R = self.R[agents]
        gy = np.einsum("mij,mj->mi", self.Q[agents], Y) + np.einsum("mij,mj->mi", R, X)
        gx = np.einsum("mji,mj->mi", R, Y)
        return gx, gy + self.s[agents]

    def values_f(self, agents: np.ndarray, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        U = np.hstack([X, Y])
        HU = np.einsum("mij,mj->mi", self.H[agents], U)
        return 0.5 * np.einsum("mi,mi->m", U, HU) + np.einsum("mi,mi->m", self.c[agents], U)

    def values_g(self, agents: np.ndarray, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        QY = np.einsum("mij,mj->mi", self.Q[agents], Y)
        RX = np.einsum("mij,mj->mi", self.R[agents], X)
        return np.einsum("mi,mi->m", Y, 0.5 * QY + RX + self.s[agents])

    def hess_g_yy(self, i: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.Q[i]

    def hess_g_xy(self, i: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.R[i].T

    def hess_f_yy(self, i: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.H[i][self.dx :, self.dx :]

    def lower_solution(self, x: np.ndarray) -> np.ndarray:
        return -cho_solve(self._Q_factor, self.R.mean(axis=0) @ x + self.s.mean(axis=0))

    def optimal_x(self) -> np.ndarray:
        if self._x_star is None:
            # y*(x) = J x + j0 is affine, so F(x, y*(x)) is a quadratic in x
            J = -cho_solve(self._Q_factor, self.R.mean(axis=0))
            j0 = -cho_solve(self._Q_factor, self.s.mean(axis=0))
            Pm = np.vstack([np.eye(self.dx), J])
            p0 = np.concatenate([np.zeros(self.dx), j0])
            H, c = self.H.mean(axis=0), self.c.mean(axis=0)
            M = Pm.T @ H @ Pm
            try:
                self._x_star = cho_solve(cho_factor(M), -Pm.T @ (H @ p0 + c))
            except np.linalg.LinAlgError as e:
                raise DomainError("the reduced upper objective is not strongly convex") from e
        return self._x_star


def _spd(rng: np.random.Generator, dim: int, floor: float) -> np.ndarray:
    M = rng.standard_normal((dim, dim))
    return M @ M.T / dim + floor * np.eye(dim)


def _centered_symmetric(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    E = rng.standard_normal((n, dim, dim))
    E = (E + E.transpose(0, 2, 1)) / 2
    return E - E.mean(axis=0)


def _scaled_to(E: np.ndarray, bound: float) -> np.ndarray:
    norms = np.linalg.norm(E, ord=2, axis=(1, 2))
    top = norms.max() if norms.size else 0.0
    return E * (bound / top) if top > 0 else E


def build_quadratic_problem(
    n: int,
    dx: int,
    dy: int,
    seed: int = 0,
    conditioning: float = 1.0,
    heterogeneity: float = 0.5,
    convex: bool = True,
    noise: float = 0.0,
) -> QuadraticBilevelProblem:
    """Build a heterogeneous quadratic bilevel instance.

    Per-agent blocks are drawn around shared means and re-centered so the means are exact.
    Every ``Q_i`` has eigenvalues of at least ``conditioning / 2``. With ``convex`` unset,
    individual ``H_i`` may be indefinite while their mean stays positive definite.

    Args:
        n: Number of agents.
        dx: Dimension of ``x``.
        dy: Dimension of ``y``.
        seed: Seed of the instance.
        conditioning: Eigenvalue floor of the mean lower Hessian.
        heterogeneity: Spread of the per-agent blocks, in [0, 1].
        convex: Keep every ``H_i`` positive semidefinite.
        noise: Gradient noise level.

    Raises:
        ConfigError: On a nonpositive floor or invalid dimensions.
    """
    if conditioning <= 0:
        raise ConfigError(f"conditioning floor must be positive, got {conditioning}")
    if min(n, dx, dy) < 1:
        raise ConfigError("n, dx and dy must be at least 1")
    if not 0 <= heterogeneity <= 1:
        raise ConfigError(f"heterogeneity must be in [0, 1], got {heterogeneity}")

    rng = np.random.default_rng(seed)
    D = dx + dy

    Q = _spd(rng, dy, conditioning) + _scaled_to(
        _centered_symmetric(rng, n, dy), heterogeneity * conditioning / 2
    )
    R_mean = rng.standard_normal((dy, dx)) / np.sqrt(dx)
    R_noise = rng.standard_normal((n, dy, dx))
    R = R_mean + heterogeneity * (R_noise - R_noise.mean(axis=0)) / np.sqrt(dx)
    s = rng.standard_normal((n, dy))

    H_mean = _spd(rng, D, 1.0)
    if convex:
        bound = heterogeneity * np.linalg.eigvalsh(H_mean)[0] / 2
    else:
        bound = 2 * heterogeneity * np.linalg.eigvalsh(H_mean)[-1]
    H = H_mean + _scaled_to(_centered_symmetric(rng, n, D), bound)
    c = rng.standard_normal((n, D))
    return QuadraticBilevelProblem(H, c, Q, R, s, noise_std=noise)
