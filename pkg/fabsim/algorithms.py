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
"""One-iteration state transitions of the simulated algorithms.

Every iteration function takes a `SwarmState` at iteration ``k`` and returns a new state at
``k + 1`` without touching its input. Row ``i`` of each stacked array belongs to agent
``i``; mixing is a matrix product, so ``(A @ X)[i] = sum_j A[i, j] X[j]``.
"""

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional, Tuple, Union
import logging

import numpy as np

from .digraph import Digraph
from .exceptions import ConfigError, NumericalDivergence
from .mixing import MixingPair, restrict_pair
from .problems.base import BilevelProblem, NoiseStream, penalty_gradients, soba_directions
from .problems.single import SingleLevelProblem

ARRAY_FIELDS = ("x", "y", "z", "t_x", "t_y", "t_z", "d_x", "d_y", "d_z", "w", "v", "t_v", "d_v")
MIN_WEIGHT = 1e-12

logger = logging.getLogger(__name__)


@dataclass
class SwarmState:
    """Per-agent variables, trackers and cached directions.

    Unused variables are zero-width, e.g. ``y`` and ``z`` of single-level algorithms.
    ``tracks`` names the variables whose tracker ``t_<name>`` follows ``d_<name>``.

    Attributes:
        x: Upper variables, shape ``(n, dx)``.
        y: Lower variables, shape ``(n, dy)``.
        z: Auxiliary lower variables, shape ``(n, dy)``.
        k: Iteration counter.
        w: Push-sum weights, when the algorithm uses them.
        v: Auxiliary linear-system variable of the second-order baseline.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    t_x: np.ndarray
    t_y: np.ndarray
    t_z: np.ndarray
    d_x: np.ndarray
    d_y: np.ndarray
    d_z: np.ndarray
    k: int = 0
    w: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    t_v: Optional[np.ndarray] = None
    d_v: Optional[np.ndarray] = None
    tracks: Tuple[str, ...] = field(default=("x", "y", "z"))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def points(self, name: str) -> np.ndarray:
        """Stack of variable ``name`` as the agents use it (de-biased under push-sum)."""
        X = getattr(self, name)
        return X / self.w[:, None] if self.w is not None else X

    def arrays(self) -> Dict[str, np.ndarray]:
        out = {}
        for name in ARRAY_FIELDS:
            arr = getattr(self, name)
            if arr is not None:
                out[name] = arr
        return out

    @property
    def nbytes(self) -> int:
        return sum(arr.nbytes for arr in self.arrays().values())

    def to_dict(self) -> Dict[str, np.ndarray]:
        """Arrays plus counter and tracked names, ready for `numpy.savez`."""
        out = dict(self.arrays())
        out["k"] = np.array(self.k)
        out["tracks"] = np.array(self.tracks, dtype=str)
        return out

    @classmethod
    def from_npz(cls, path: Union[str, Path]) -> "SwarmState":
        with np.load(path) as data:
            kwargs = {name: data[name] for name in ARRAY_FIELDS if name in data.files}
            return cls(
                **kwargs, k=int(data["k"]), tracks=tuple(str(s) for s in data["tracks"])
            )


@dataclass(frozen=True)
class StepSizes:
    """Step sizes of ``x``, ``y`` and ``z`` (``v`` for the second-order baseline).

    Args:
        eta_x: Base step of ``x``.
        eta_y: Base step of ``y``.
        eta_z: Base step of ``z``.
        decay: Inverse-time decay rate; step ``k`` is ``eta / (1 + decay * k)``.
        penalty_scaled: Divide every step by the penalty parameter.

    Raises:
        ConfigError: If a step is not positive or ``decay`` is negative.
    """

    eta_x: float
    eta_y: float
    eta_z: float
    decay: Optional[float] = None
    penalty_scaled: bool = False

    def __post_init__(self) -> None:
        for name in ("eta_x", "eta_y", "eta_z"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.decay is not None and self.decay < 0:
            raise ConfigError(f"decay must be nonnegative, got {self.decay}")

    @classmethod
    def uniform(cls, eta: float, **kwargs) -> "StepSizes":
        return cls(eta, eta, eta, **kwargs)

    def at(self, k: int, lam: float = 1.0) -> Tuple[float, float, float]:
        """Steps of iteration ``k``.

        Example:

            >>> StepSizes(0.1, 0.2, 0.3).at(5)
            (0.1, 0.2, 0.3)
            >>> StepSizes.uniform(0.1, decay=1.0).at(1)
            (0.05, 0.05, 0.05)
        """
        etas = (self.eta_x, self.eta_y, self.eta_z)
        if self.decay is not None:
            etas = tuple(eta / (1 + self.decay * k) for eta in etas)
        if self.penalty_scaled:
            etas = tuple(eta / lam for eta in etas)
        return etas  # type: ignore[return-value]


def theory_regime(K: int, eta0: float, lam0: float) -> Tuple[float, float]:
    """Steps and penalty ``(eta0 * K^(-1/3), lam0 * K^(1/3))`` for a budget of ``K``.

    Example:

        >>> theory_regime(1000, 1.0, 1.0)
        (0.1, 10.0)
    """
    if K < 1:
        raise ConfigError(f"budget must be positive, got {K}")
    root = round(K ** (1 / 3), 12)
    return eta0 / root, lam0 * root


def _empty(n: int) -> np.ndarray:
    return np.zeros((n, 0))


def _rows(x0: Optional[np.ndarray], n: int, d: int) -> np.ndarray:
    if x0 is None:
        return np.zeros((n, d))
    return np.array(np.broadcast_to(x0, (n, d)), dtype=float)


def _add_noise(
    G: np.ndarray, noise: Optional[NoiseStream], k: int, tag: int, agents: np.ndarray
) -> np.ndarray:
    if noise is None or noise.std == 0:
        return G
    for r, i in enumerate(agents):
        G[r] += noise.draw(int(i), k, tag, G.shape[1])
    return G


def _check_finite(st: SwarmState) -> SwarmState:
    for name, arr in st.arrays().items():
        bad = ~np.isfinite(arr)
        if bad.any():
            raise NumericalDivergence(st.k, agent=int(np.argwhere(bad)[0][0]), variable=name)
    return st


def _pull(A: np.ndarray, X: np.ndarray, eta: float, T: np.ndarray) -> np.ndarray:
    return A @ X - eta * T


def _push(B: np.ndarray, T: np.ndarray, D_old: np.ndarray, D_new: np.ndarray) -> np.ndarray:
    return (B @ T - D_old) + D_new


def warm_start(
    P: BilevelProblem, X: np.ndarray, Y: np.ndarray, steps: int, eta: float
) -> np.ndarray:
    """Run ``steps`` local descent steps on every agent's lower level, without communication."""
    Y = Y.copy()
    for _ in range(steps):
        Y -= eta * P.grads_g(P.agents, X, Y)[1]
    logger.debug("Warm-started y with %d local lower-level steps", steps)
    return Y


def _warm_eta(P: BilevelProblem) -> float:
    if P.constants is not None and P.constants.L_g1 > 0:
        return 1.0 / P.constants.L_g1
    return 0.01


def init_state(
    P: BilevelProblem,
    lam: float,
    x0: Optional[np.ndarray] = None,
    noise: Optional[NoiseStream] = None,
    warm_start_steps: int = 0,
    push_sum: bool = False,
) -> SwarmState:
    """Initial state of the penalty algorithms with trackers equal to the first directions.

    Args:
        P: The problem.
        lam: Penalty parameter.
        x0: Common initial ``x``; zeros by default.
        noise: Gradient noise stream.
        warm_start_steps: Local lower-level descent steps applied to ``y`` and ``z``.
        push_sum: Attach unit push-sum weights.
    """
    X = _rows(x0, P.n, P.dx)
    Y = np.zeros((P.n, P.dy))
    if warm_start_steps:
        Y = warm_start(P, X, Y, warm_start_steps, _warm_eta(P))
    Z = Y.copy()
    DX, DY, DZ = penalty_gradients(P, X, Y, Z, lam, noise=noise, k=0)
    return SwarmState(
        X,
        Y,
        Z,
        DX.copy(),
        DY.copy(),
        DZ.copy(),
        DX,
        DY,
        DZ,
        w=np.ones(P.n) if push_sum else None,
    )


def init_single_state(
    P: SingleLevelProblem,
    x0: Optional[np.ndarray] = None,
    noise: Optional[NoiseStream] = None,
    push_sum: bool = False,
) -> SwarmState:
    """Initial state of the single-level algorithms.

    Push-sum runs carry no trackers; otherwise ``t_x`` starts at the first gradients.
    """
    X = _rows(x0, P.n, P.dx)
    E = _empty(P.n)
    if push_sum:
        return SwarmState(X, E, E, E, E, E, E, E, E, w=np.ones(P.n), tracks=())
    G = _add_noise(P.grads(P.agents, X), noise, 0, 0, P.agents)
    return SwarmState(X, E, E, G.copy(), E, E, G, E, E, tracks=("x",))


def _soba_stack(
    P: BilevelProblem,
    X: np.ndarray,
    Y: np.ndarray,
    V: np.ndarray,
    noise: Optional[NoiseStream],
    k: int,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    DX, DY, DV = np.empty_like(X), np.empty_like(Y), np.empty_like(V)
    for i in range(P.n):
        DX[i], DY[i], DV[i] = soba_directions(P, i, X[i], Y[i], V[i])
    for tag, D in enumerate((DX, DY, DV)):
        _add_noise(D, noise, k, tag, P.agents)
    return DX, DY, DV


def init_soba_state(
    P: BilevelProblem,
    x0: Optional[np.ndarray] = None,
    noise: Optional[NoiseStream] = None,
    warm_start_steps: int = 0,
) -> SwarmState:
    X = _rows(x0, P.n, P.dx)
    Y = np.zeros((P.n, P.dy))
    if warm_start_steps:
        Y = warm_start(P, X, Y, warm_start_steps, _warm_eta(P))
    V = np.zeros((P.n, P.dy))
    DX, DY, DV = _soba_stack(P, X, Y, V, noise, 0)
    E = _empty(P.n)
    return SwarmState(
        X,
        Y,
        E,
        DX.copy(),
        DY.copy(),
        E,
        DX,
        DY,
        E,
        v=V,
        t_v=DV.copy(),
        d_v=DV,
        tracks=("x", "y", "v"),
    )


def _mean_penalty_directions(
    P: BilevelProblem,
    x: np.ndarray,
    y: np.ndarray,
    z: np.ndarray,
    lam: float,
    noise: Optional[NoiseStream],
    k: int,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    tiled = (np.repeat(a, P.n, axis=0) for a in (x, y, z))
    D = penalty_gradients(P, *tiled, lam, noise=noise, k=k)
    return tuple(Di.mean(axis=0, keepdims=True) for Di in D)  # type: ignore[return-value]


def init_centralized_state(
    P: BilevelProblem,
    lam: float,
    x0: Optional[np.ndarray] = None,
    noise: Optional[NoiseStream] = None,
    warm_start_steps: int = 0,
) -> SwarmState:
    """Single-point state of the centralized method; ``d`` holds the global directions."""
    x = _rows(x0, 1, P.dx)
    y = np.zeros((1, P.dy))
    if warm_start_steps:
        eta = _warm_eta(P)
        for _ in range(warm_start_steps):
            y = y - eta * P.lower_grads(x[0], y[0])[1][None]
    z = y.copy()
    dx, dy, dz = _mean_penalty_directions(P, x, y, z, lam, noise, 0)
    return SwarmState(x, y, z, _empty(1), _empty(1), _empty(1), dx, dy, dz, tracks=())


def _fab_step(
    st: SwarmState,
    P: BilevelProblem,
    A: np.ndarray,
    B: np.ndarray,
    steps: StepSizes,
    lam: float,
    noise: Optional[NoiseStream],
) -> SwarmState:
    eta_x, eta_y, eta_z = steps.at(st.k, lam)
    X = _pull(A, st.x, eta_x, st.t_x)
    Y = _pull(A, st.y, eta_y, st.t_y)
    Z = _pull(A, st.z, eta_z, st.t_z)
    DX, DY, DZ = penalty_gradients(P, X, Y, Z, lam, noise=noise, k=st.k + 1)
    return _check_finite(
        replace(
            st,
            x=X,
            y=Y,
            z=Z,
            t_x=_push(B, st.t_x, st.d_x, DX),
            t_y=_push(B, st.t_y, st.d_y, DY),
            t_z=_push(B, st.t_z, st.d_z, DZ),
            d_x=DX,
            d_y=DY,
            d_z=DZ,
            k=st.k + 1,
        )
    )


def fab(
    st: SwarmState,
    P: BilevelProblem,
    mix: MixingPair,
    steps: StepSizes,
    lam: float,
    noise: Optional[NoiseStream] = None,
) -> SwarmState:
    """One push-pull iteration on the penalty function.

    Every agent pulls ``x``, ``y`` and ``z`` through ``A`` and steps along its tracker,
    re-evaluates its local penalty directions at the new point, then pushes its trackers
    through ``B`` with the change of directions added. All reads use the iteration-``k``
    snapshot.

    Raises:
        NumericalDivergence: If any value becomes non-finite.
    """
    return _fab_step(st, P, mix.A, mix.B, steps, lam, noise)


def static_fab(
    st: SwarmState,
    P: BilevelProblem,
    frozen: MixingPair,
    graph: Digraph,
    steps: StepSizes,
    lam: float,
    noise: Optional[NoiseStream] = None,
    repair: bool = False,
) -> SwarmState:
    """`fab` with the first iteration's weights, used on whichever of their links ``graph`` has.

    Agents keep the weights they computed at the start. A message over a link that is gone
    contributes nothing and its weight is lost, so tracking mass leaks. With ``repair`` the
    weight stays with the agent instead (see `~fabsim.mixing.restrict_pair`); the matrices
    then remain stochastic but no longer fit the current graph.
    """
    return fab(st, P, restrict_pair(frozen, graph, keep_weight=repair), steps, lam, noise)


def pushsum_fab(
    st: SwarmState,
    P: BilevelProblem,
    mix: MixingPair,
    steps: StepSizes,
    lam: float,
    noise: Optional[NoiseStream] = None,
) -> SwarmState:
    """Penalty iteration mixing everything through ``B`` with push-sum de-biasing.

    Agents push ``xi - eta * t`` and their weight, and evaluate directions at the ratios
    ``xi / w``. One weight vector serves ``x``, ``y`` and ``z``.

    Raises:
        NumericalDivergence: On a non-finite value or a weight below ``1e-12``.
    """
    assert st.w is not None
    B = mix.B
    eta_x, eta_y, eta_z = steps.at(st.k, lam)
    X = B @ (st.x - eta_x * st.t_x)
    Y = B @ (st.y - eta_y * st.t_y)
    Z = B @ (st.z - eta_z * st.t_z)
    w = B @ st.w
    _check_weights(w, st.k + 1)
    s = w[:, None]
    DX, DY, DZ = penalty_gradients(P, X / s, Y / s, Z / s, lam, noise=noise, k=st.k + 1)
    return _check_finite(
        replace(
            st,
            x=X,
            y=Y,
            z=Z,
            w=w,
            t_x=_push(B, st.t_x, st.d_x, DX),
            t_y=_push(B, st.t_y, st.d_y, DY),
            t_z=_push(B, st.t_z, st.d_z, DZ),
            d_x=DX,
            d_y=DY,
            d_z=DZ,
            k=st.k + 1,
        )
    )


def _check_weights(w: np.ndarray, k: int) -> None:
    small = np.flatnonzero(~(w >= MIN_WEIGHT))
    if small.size:
        raise NumericalDivergence(k, agent=int(small[0]), variable="w")


def pushpull_soba(
    st: SwarmState,
    P: BilevelProblem,
    mix: MixingPair,
    steps: StepSizes,
    noise: Optional[NoiseStream] = None,
) -> SwarmState:
    """Push-pull iteration of the second-order baseline on ``(x, y, v)``.

    ``eta_z`` is the step of ``v``.

    Raises:
        UnsupportedOperation: If the problem has no second-order oracles.
        NumericalDivergence: If any value becomes non-finite.
    """
    assert st.v is not None and st.t_v is not None and st.d_v is not None
    eta_x, eta_y, eta_v = steps.at(st.k)
    X = _pull(mix.A, st.x, eta_x, st.t_x)
    Y = _pull(mix.A, st.y, eta_y, st.t_y)
    V = _pull(mix.A, st.v, eta_v, st.t_v)
    DX, DY, DV = _soba_stack(P, X, Y, V, noise, st.k + 1)
    return _check_finite(
        replace(
            st,
            x=X,
            y=Y,
            v=V,
            t_x=_push(mix.B, st.t_x, st.d_x, DX),
            t_y=_push(mix.B, st.t_y, st.d_y, DY),
            t_v=_push(mix.B, st.t_v, st.d_v, DV),
            d_x=DX,
            d_y=DY,
            d_v=DV,
            k=st.k + 1,
        )
    )


def pushpull_single(
    st: SwarmState,
    P: SingleLevelProblem,
    mix: MixingPair,
    steps: StepSizes,
    noise: Optional[NoiseStream] = None,
) -> SwarmState:
    """Single-level push-pull gradient tracking with step ``eta_x``.

    Example:

        >>> import numpy as np
        >>> from fabsim.problems.single import LeastSquaresProblem
        >>> P = LeastSquaresProblem(np.ones((1, 1, 1)), np.zeros((1, 1)), 0.0)
        >>> st = init_single_state(P, x0=np.ones(1))
        >>> pushpull_single(st, P, MixingPair.from_matrices(np.eye(1), np.eye(1)),
        ...                 StepSizes.uniform(0.1)).x
        array([[0.9]])
    """
    eta_x = steps.at(st.k)[0]
    X = _pull(mix.A, st.x, eta_x, st.t_x)
    G = _add_noise(P.grads(P.agents, X), noise, st.k + 1, 0, P.agents)
    return _check_finite(
        replace(st, x=X, t_x=_push(mix.B, st.t_x, st.d_x, G), d_x=G, k=st.k + 1)
    )


def push_sgd(
    st: SwarmState,
    P: SingleLevelProblem,
    mix: MixingPair,
    steps: StepSizes,
    noise: Optional[NoiseStream] = None,
) -> SwarmState:
    """Subgradient-push: ``x <- B (x - eta grad f(x / w))`` and ``w <- B w``, no tracking."""
    assert st.w is not None
    eta_x = steps.at(st.k)[0]
    G = _add_noise(P.grads(P.agents, st.points("x")), noise, st.k, 0, P.agents)
    X = mix.B @ (st.x - eta_x * G)
    w = mix.B @ st.w
    _check_weights(w, st.k + 1)
    return _check_finite(replace(st, x=X, w=w, k=st.k + 1))


def centralized_f2sa(
    st: SwarmState,
    P: BilevelProblem,
    steps: StepSizes,
    lam: float,
    noise: Optional[NoiseStream] = None,
) -> SwarmState:
    """Single-point gradient descent on the global penalty function.

    The directions are averages of every agent's penalty directions at the same point;
    with one agent this is the trajectory `fab` follows.
    """
    eta_x, eta_y, eta_z = steps.at(st.k, lam)
    x = st.x - eta_x * st.d_x
    y = st.y - eta_y * st.d_y
    z = st.z - eta_z * st.d_z
    dx, dy, dz = _mean_penalty_directions(P, x, y, z, lam, noise, st.k + 1)
    return _check_finite(replace(st, x=x, y=y, z=z, d_x=dx, d_y=dy, d_z=dz, k=st.k + 1))
