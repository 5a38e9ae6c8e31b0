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
"""Consensus, tracking and convergence measures of a swarm."""

from dataclasses import astuple, dataclass, fields
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union
import math

import numpy as np

from .algorithms import SwarmState
from .digraph import Digraph
from .exceptions import ConfigError, DomainError, UnsupportedOperation
from .mixing import WeightVectors
from .problems.base import BilevelProblem, hypergradient, penalty_lower_solution, penalty_value
from .problems.single import SingleLevelProblem, as_single_level

Problem = Union[BilevelProblem, SingleLevelProblem]

STOCHASTIC_TOL = 1e-9


@dataclass
class MetricsRow:
    """Diagnostics of one iteration; absent measures are ``None``.

    Columns ending in ``_hat`` and the ``D_*``/``S_*`` measures use the weighted averages;
    ``consensus_*`` and ``rel_err`` use uniform means. The third variable column holds
    ``z`` for the penalty algorithms and ``v`` for the second-order baseline.
    """

    k: int
    hypergrad_norm_sq: Optional[float] = None
    grad_norm_sq_single: Optional[float] = None
    consensus_x: Optional[float] = None
    consensus_y: Optional[float] = None
    consensus_z: Optional[float] = None
    D_x: Optional[float] = None
    D_y: Optional[float] = None
    D_z: Optional[float] = None
    S_x: Optional[float] = None
    S_y: Optional[float] = None
    S_z: Optional[float] = None
    V_D: Optional[float] = None
    V_S: Optional[float] = None
    rel_err: Optional[float] = None
    rel_err_hat: Optional[float] = None
    avg_dyn_residual: Optional[float] = None
    val_loss: Optional[float] = None
    test_acc: Optional[float] = None
    wall_time_s: Optional[float] = None
    comm_cost_floats: Optional[float] = None

    @classmethod
    def columns(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    def csv_fields(self, timing: bool = True) -> List[str]:
        """Cell strings in column order; floats keep their shortest exact repr."""
        out = []
        for name, value in zip(self.columns(), astuple(self)):
            if value is None or (name == "wall_time_s" and not timing):
                out.append("")
            else:
                out.append(repr(value) if isinstance(value, float) else str(value))
        return out

    def finite(self) -> bool:
        return all(
            math.isfinite(v) for v in astuple(self)[1:] if isinstance(v, (int, float))
        )


@dataclass(frozen=True)
class LyapunovWeights:
    C_b1: float = 1.0
    C_b2: float = 1.0
    C_b3: float = 1.0
    C_b4: float = 1.0

    def __post_init__(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigError(f"{f.name} must be nonnegative, got {getattr(self, f.name)}")


class Transition(NamedTuple):
    """The state an iteration started from, with the steps and the weights ``alpha`` it used."""

    state: SwarmState
    etas: Tuple[float, float, float]
    alpha: np.ndarray


def _stochastic(name: str, w: np.ndarray, n: int) -> None:
    if w.shape != (n,):
        raise DomainError(f"{name} has length {w.shape[0]}, expected {n}")
    if (w < 0).any() or abs(w.sum() - 1) > STOCHASTIC_TOL:
        raise DomainError(f"{name} is not a stochastic vector")


def dispersion(points: np.ndarray, weights: np.ndarray) -> float:
    """Weighted spread ``sum_i w_i |p_i - p_hat|^2`` around ``p_hat = sum_i w_i p_i``.

    Example:

        >>> import numpy as np
        >>> dispersion(np.array([[0.0], [2.0]]), np.array([0.5, 0.5]))
        1.0

    Raises:
        DomainError: On a length mismatch or non-stochastic weights.
    """
    _stochastic("weights", weights, points.shape[0])
    dev = points - weights @ points
    return float(weights @ (dev ** 2).sum(axis=1))


def tracking_dispersion(T: np.ndarray, beta: np.ndarray) -> float:
    """Spread ``sum_j beta_j |t_j / beta_j - sum_l t_l|^2`` of rescaled trackers.

    Raises:
        DomainError: On a length mismatch or a nonpositive ``beta`` entry.
    """
    if beta.shape != (T.shape[0],):
        raise DomainError(f"beta has length {beta.shape[0]}, expected {T.shape[0]}")
    if (beta <= 0).any():
        raise DomainError("tracking dispersion needs strictly positive beta")
    dev = T / beta[:, None] - T.sum(axis=0)
    return float(beta @ (dev ** 2).sum(axis=1))


def _third(st: SwarmState) -> str:
    return "v" if st.v is not None else "z"


def _relative(err: np.ndarray, ref: np.ndarray) -> float:
    scale = np.linalg.norm(ref)
    return float(np.linalg.norm(err) / (scale if scale > 0 else 1.0))


def avg_dyn_residual(prev: Transition, st: SwarmState, alpha_next: np.ndarray) -> float:
    """Largest deviation of the weighted averages from their one-step dynamics.

    Weights advance as ``alpha'^T = alpha^T A`` and pulled variables as
    ``x' = A x - eta t``, so ``alpha^T x' = alpha'^T x - eta alpha^T t`` holds exactly.
    ``alpha`` comes from ``prev`` and ``alpha_next`` from the caller; a weight update under
    any other convention leaves a residual.
    """
    alpha = prev.alpha
    worst = 0.0
    for name, eta in zip(("x", "y", _third(st)), prev.etas):
        before, after = getattr(prev.state, name), getattr(st, name)
        if before.shape[1] == 0:
            continue
        tracker = getattr(prev.state, f"t_{name}")
        expected = alpha_next @ before - eta * (alpha @ tracker)
        worst = max(worst, float(np.linalg.norm(alpha @ after - expected)))
    return worst


def metrics_for(
    st: SwarmState,
    P: Problem,
    wv: WeightVectors,
    x_star: Optional[np.ndarray] = None,
    prev: Optional[Transition] = None,
    comm_cost: Optional[float] = None,
) -> MetricsRow:
    """Fill every measure the problem and state support.

    Raises:
        DomainError: If the weight vectors do not match the number of agents.
    """
    for name, w in (("alpha", wv.alpha), ("beta", wv.beta)):
        if w.shape != (st.n,):
            raise DomainError(f"{name} has length {w.shape[0]}, expected {st.n} agents")
    row = MetricsRow(k=st.k, comm_cost_floats=comm_cost)
    X = st.points("x")
    x_bar = X.mean(axis=0)
    x_hat = wv.alpha @ X

    uniform = np.full(st.n, 1.0 / st.n)
    D, S = [], []
    for name, column in zip(("x", "y", _third(st)), ("x", "y", "z")):
        pts = st.points(name)
        if pts.shape[1] == 0:
            continue
        setattr(row, f"consensus_{column}", dispersion(pts, uniform))
        d = dispersion(pts, wv.alpha)
        D.append(d)
        setattr(row, f"D_{column}", d)
        if name in st.tracks:
            s = tracking_dispersion(getattr(st, f"t_{name}"), wv.beta)
            S.append(s)
            setattr(row, f"S_{column}", s)
    row.V_D = float(sum(D))
    row.V_S = float(sum(S)) if S else None

    if x_star is not None:
        row.rel_err = _relative(x_bar - x_star, x_star)
        row.rel_err_hat = _relative(x_hat - x_star, x_star)

    if isinstance(P, BilevelProblem) and P.has_second_order:
        try:
            row.hypergrad_norm_sq = float(np.sum(hypergradient(P, x_bar) ** 2))
        except UnsupportedOperation:
            pass
    single = as_single_level(P)
    if single is not None:
        row.grad_norm_sq_single = float(np.sum(single.global_grad(x_bar) ** 2))

    evaluate = getattr(P, "evaluate", None)
    if evaluate is not None:
        weights = st.points("y").mean(axis=0) if isinstance(P, BilevelProblem) else x_bar
        row.val_loss, row.test_acc = evaluate(weights)

    if prev is not None:
        row.avg_dyn_residual = avg_dyn_residual(prev, st, wv.alpha)
    return row


def lyapunov_value(
    st: SwarmState,
    P: BilevelProblem,
    wv: WeightVectors,
    lam: float,
    weights: LyapunovWeights = LyapunovWeights(),
    a_min: Optional[float] = None,
) -> float:
    """Penalty descent potential at the weighted averages.

    Sums the optimal penalty value at ``x_hat``, the distances of ``z_hat`` to ``y*`` and of
    ``y_hat`` to the penalized lower solution, the consensus error scaled by
    ``n / alpha_min`` and the tracking error. ``alpha_min`` is ``a_min ** n`` when given
    and the smallest entry of ``alpha`` otherwise.

    Raises:
        UnsupportedOperation: If the problem has no exact lower solution.
    """
    x_hat, y_hat, z_hat = (wv.alpha @ st.points(name) for name in ("x", "y", "z"))
    y_star = P.lower_solution(x_hat)
    y_lam = penalty_lower_solution(P, x_hat, lam)
    value = penalty_value(P, x_hat, y_lam, y_star, lam)
    value += weights.C_b1 * float(np.sum((z_hat - y_star) ** 2))
    value += weights.C_b2 * float(np.sum((y_hat - y_lam) ** 2))

    alpha_min = a_min ** st.n if a_min is not None else float(wv.alpha.min())
    V_D = sum(dispersion(st.points(name), wv.alpha) for name in ("x", "y", "z"))
    V_S = sum(tracking_dispersion(getattr(st, f"t_{name}"), wv.beta) for name in st.tracks)
    return value + weights.C_b3 * st.n / alpha_min * V_D + weights.C_b4 * V_S


PER_EDGE = {
    "fab": lambda dx, dy: 2 * (dx + 2 * dy),
    "static_fab": lambda dx, dy: 2 * (dx + 2 * dy),
    "pushpull_soba": lambda dx, dy: 2 * (dx + 2 * dy),
    "pushsum_fab": lambda dx, dy: 2 * (dx + 2 * dy) + 1,
    "pushpull": lambda dx, dy: 2 * dx,
    "push_sgd": lambda dx, dy: dx + 1,
    "centralized_f2sa": lambda dx, dy: 0,
}


def comm_cost_floats(algorithm: str, graph: Digraph, dx: int, dy: int) -> int:
    """Scalars sent over the edges of ``graph`` in one iteration.

    Example:

        >>> comm_cost_floats("fab", Digraph(3, {(0, 1), (1, 2), (2, 0)}), 5, 20)
        270
    """
    try:
        per_edge = PER_EDGE[algorithm]
    except KeyError:
        raise ConfigError(f"unknown algorithm {algorithm!r}") from None
    return len(graph.edges) * per_edge(dx, dy)


def _values(rows: Sequence[MetricsRow], column: str, since: int) -> List[float]:
    return [getattr(r, column) for r in rows if r.k >= since and getattr(r, column) is not None]


def min_over(rows: Sequence[MetricsRow], column: str, since: int = 1) -> Optional[float]:
    """Smallest non-missing value of ``column`` from iteration ``since`` on.

    The initial row is skipped by default; agents starting from one point have no
    disagreement there.
    """
    values = _values(rows, column, since)
    return min(values) if values else None


def mean_over(rows: Sequence[MetricsRow], column: str, since: int = 1) -> Optional[float]:
    """Mean of the non-missing values of ``column`` from iteration ``since`` on."""
    values = _values(rows, column, since)
    return float(np.mean(values)) if values else None
