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
"""Row- and column-stochastic mixing matrices compatible with a digraph."""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Tuple
import math

import numpy as np

from .digraph import Digraph, TopologySchedule, graph_at, is_strongly_connected
from .exceptions import ConfigError, DomainError, InternalError

SCHEME_KINDS = ("uniform", "self_weighted", "alternating")
SUM_TOL = 1e-12
DRIFT_TOL = 1e-9


@dataclass(frozen=True)
class WeightScheme:
    """How an agent splits weight between itself and its neighbors.

    Args:
        kind: ``uniform`` gives every member of the neighborhood (self included) the same
            weight. ``self_weighted`` gives ``w_self`` to the agent and splits the rest
            evenly. ``alternating`` is for rings only: even-indexed agents put ``epsilon``
            on their edge, odd-indexed agents put 0.5.
        w_self: Self weight of ``self_weighted``, in (0, 1).
        epsilon: Edge weight of even agents under ``alternating``, in (0, 1).
    """

    kind: str = "uniform"
    w_self: float = 0.5
    epsilon: float = 0.2

    def __post_init__(self) -> None:
        if self.kind not in SCHEME_KINDS:
            raise ConfigError(f"unknown weighting scheme {self.kind!r}")
        if self.kind == "self_weighted" and not 0 < self.w_self < 1:
            raise ConfigError(f"w_self must be in (0, 1), got {self.w_self}")
        if self.kind == "alternating" and not 0 < self.epsilon < 1:
            raise ConfigError(f"epsilon must be in (0, 1), got {self.epsilon}")


@dataclass(frozen=True)
class MixingPair:
    """Mixing matrices of one iteration.

    Attributes:
        A: Row-stochastic matrix mixing decision variables.
        B: Column-stochastic matrix mixing tracking variables.
        a_min: Smallest positive entry of ``A``.
        b_min: Smallest positive entry of ``B``.
    """

    A: np.ndarray
    B: np.ndarray
    a_min: float
    b_min: float

    @classmethod
    def from_matrices(cls, A: np.ndarray, B: np.ndarray) -> "MixingPair":
        return cls(A, B, _min_positive(A), _min_positive(B))

    @property
    def n(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class WeightVectors:
    """The stochastic vectors ``alpha`` (left-advanced by A) and ``beta`` (advanced by B)."""

    alpha: np.ndarray
    beta: np.ndarray

    @classmethod
    def uniform(cls, n: int) -> "WeightVectors":
        return cls(np.full(n, 1.0 / n), np.full(n, 1.0 / n))


class Violation(NamedTuple):
    matrix: str
    row: int
    col: int
    problem: str


@dataclass
class ValidationReport:
    """Outcome of `validate_pair`."""

    row_sum_deviation: float
    col_sum_deviation: float
    violations: List[Violation]
    a_min: float
    b_min: float
    tol: float = SUM_TOL

    @property
    def passed(self) -> bool:
        return (
            self.row_sum_deviation <= self.tol
            and self.col_sum_deviation <= self.tol
            and not self.violations
        )

    def lines(self) -> List[str]:
        out = [
            f"max |row sum of A - 1| = {self.row_sum_deviation:.3e}",
            f"max |col sum of B - 1| = {self.col_sum_deviation:.3e}",
            f"min nonzero entry: A {self.a_min:.6g}, B {self.b_min:.6g}",
            f"compatibility violations: {len(self.violations)}",
        ]
        out.extend(f"  {v.matrix}[{v.row}][{v.col}]: {v.problem}" for v in self.violations)
        return out


def _min_positive(M: np.ndarray) -> float:
    pos = M[M > 0]
    return float(pos.min()) if pos.size else 0.0


def _repair(weights: np.ndarray) -> np.ndarray:
    # the largest entry absorbs the rounding residual
    weights[np.argmax(weights)] += 1.0 - weights.sum()
    return weights


def _is_ring(g: Digraph) -> bool:
    if g.n < 2:
        return False
    if any(len(g.in_neighbors(i)) != 1 or len(g.out_neighbors(i)) != 1 for i in range(g.n)):
        return False
    return is_strongly_connected(g)


def _local_weights(center: int, n_nbrs: int, scheme: WeightScheme) -> Tuple[float, float]:
    """Return (self weight, weight per neighbor)."""
    if n_nbrs == 0:
        return 1.0, 0.0
    if scheme.kind == "uniform":
        w = 1.0 / (n_nbrs + 1)
        return w, w
    if scheme.kind == "self_weighted":
        return scheme.w_self, (1.0 - scheme.w_self) / n_nbrs
    edge = scheme.epsilon if center % 2 == 0 else 0.5
    return 1.0 - edge, edge


def _check_graph(g: Digraph, scheme: WeightScheme) -> None:
    if not is_strongly_connected(g):
        raise DomainError("mixing matrices need a strongly connected graph")
    if scheme.kind == "alternating" and g.n > 1 and not _is_ring(g):
        raise ConfigError("the alternating scheme is only defined on ring topologies")


def row_stochastic_from(g: Digraph, scheme: WeightScheme = WeightScheme()) -> np.ndarray:
    """Build the row-stochastic matrix A pulling from in-neighbors.

    Example:

        >>> from fabsim.digraph import Digraph
        >>> row_stochastic_from(Digraph(2, {(0, 1), (1, 0)}))
        array([[0.5, 0.5],
               [0.5, 0.5]])
    """
    _check_graph(g, scheme)
    A = np.zeros((g.n, g.n))
    for r in range(g.n):
        nbrs = list(g.in_neighbors(r))
        w_self, w_nbr = _local_weights(r, len(nbrs), scheme)
        row = np.array([w_self] + [w_nbr] * len(nbrs))
        _repair(row)
        A[r, r] = row[0]
        A[r, nbrs] = row[1:]
    return A


def column_stochastic_from(g: Digraph, scheme: WeightScheme = WeightScheme()) -> np.ndarray:
    """Build the column-stochastic matrix B pushing to out-neighbors."""
    _check_graph(g, scheme)
    B = np.zeros((g.n, g.n))
    for c in range(g.n):
        nbrs = list(g.out_neighbors(c))
        w_self, w_nbr = _local_weights(c, len(nbrs), scheme)
        col = np.array([w_self] + [w_nbr] * len(nbrs))
        _repair(col)
        B[c, c] = col[0]
        B[nbrs, c] = col[1:]
    return B


def mixing_pair(g: Digraph, scheme: WeightScheme = WeightScheme()) -> MixingPair:
    A = row_stochastic_from(g, scheme)
    return MixingPair.from_matrices(A, column_stochastic_from(g, scheme))


def restrict_pair(p: MixingPair, g: Digraph, keep_weight: bool = True) -> MixingPair:
    """Keep the weights of ``p`` on the links of ``g``.

    With ``keep_weight`` a receiver missing a pull falls back on its own value and a sender
    whose push has no link keeps that share, so rows of ``A`` and columns of ``B`` still
    sum to one. Without it the weight of a missing link is simply lost.

    Example:

        >>> ring = Digraph(3, {(0, 1), (1, 2), (2, 0)})
        >>> p = mixing_pair(Digraph(3, {(1, 0), (2, 1), (0, 2)}))
        >>> restrict_pair(p, ring).A
        array([[1., 0., 0.],
               [0., 1., 0.],
               [0., 0., 1.]])

    Raises:
        DomainError: If the matrix dimensions do not match the graph.
    """
    if p.n != g.n:
        raise DomainError(f"pair has {p.n} agents, graph has {g.n}")
    mask = g.compatibility_mask()
    A, B = p.A * mask, p.B * mask
    if keep_weight:
        diag = np.arange(g.n)
        A[diag, diag] += (p.A * ~mask).sum(axis=1)
        B[diag, diag] += (p.B * ~mask).sum(axis=0)
    return MixingPair.from_matrices(A, B)


def validate_pair(p: MixingPair, g: Digraph, tol: float = SUM_TOL) -> ValidationReport:
    """Check stochasticity and compatibility of a mixing pair with a graph.

    Raises:
        DomainError: If the matrix dimensions do not match the graph.
    """
    for name, M in (("A", p.A), ("B", p.B)):
        if M.shape != (g.n, g.n):
            raise DomainError(f"{name} has shape {M.shape}, expected {(g.n, g.n)}")

    violations = []
    mask = g.compatibility_mask()
    for name, M in (("A", p.A), ("B", p.B)):
        for r, c in zip(*np.nonzero((M > 0) & ~mask)):
            violations.append(Violation(name, int(r), int(c), "positive without edge"))
        for r, c in zip(*np.nonzero((M <= 0) & mask)):
            violations.append(Violation(name, int(r), int(c), "zero on edge"))
        for r, c in zip(*np.nonzero(M < 0)):
            violations.append(Violation(name, int(r), int(c), "negative entry"))

    return ValidationReport(
        row_sum_deviation=float(np.abs(p.A.sum(axis=1) - 1).max()),
        col_sum_deviation=float(np.abs(p.B.sum(axis=0) - 1).max()),
        violations=violations,
        a_min=_min_positive(p.A),
        b_min=_min_positive(p.B),
        tol=tol,
    )


def _check_stochastic(name: str, v: np.ndarray) -> None:
    if (v < 0).any() or abs(v.sum() - 1) > DRIFT_TOL:
        raise DomainError(f"{name} is not a stochastic vector (sum {v.sum()!r})")


def advance_weights(w: WeightVectors, p: MixingPair) -> WeightVectors:
    """Advance ``alpha' = alpha^T A`` and ``beta' = B beta``.

    Example:

        >>> import numpy as np
        >>> A = np.array([[1.0, 0.0], [0.5, 0.5]])
        >>> w = advance_weights(WeightVectors.uniform(2), MixingPair.from_matrices(A, A.T))
        >>> w.alpha
        array([0.75, 0.25])

    Raises:
        DomainError: If either input vector is not stochastic.
        InternalError: If the outputs drift from stochasticity.
    """
    _check_stochastic("alpha", w.alpha)
    _check_stochastic("beta", w.beta)
    alpha, beta = w.alpha @ p.A, p.B @ w.beta
    for name, v in (("alpha", alpha), ("beta", beta)):
        if abs(v.sum() - 1) > DRIFT_TOL:
            raise InternalError(f"{name} drifted from stochasticity (sum {v.sum()!r})")
    return WeightVectors(alpha, beta)


class MixingSchedule:
    """Mixing pairs along a topology schedule.

    Pairs of phases whose graph does not change from cycle to cycle are cached. The smallest
    positive entries seen so far are kept in `a_min` and `b_min`.

    Args:
        topology: The topology schedule.
        scheme: Weighting scheme used for both matrices.
    """

    def __init__(
        self, topology: TopologySchedule, scheme: WeightScheme = WeightScheme()
    ) -> None:
        self.topology = topology
        self.scheme = scheme
        self.a_min = math.inf
        self.b_min = math.inf
        self._cache: Dict[int, Tuple[Digraph, MixingPair]] = {}

    @property
    def n(self) -> int:
        return self.topology.n

    def _cache_key(self, k: int) -> Optional[int]:
        topo = self.topology
        spec = topo.phases[topo.phase_index(k)]
        if spec.kind == "augmented_er" and topo.regenerate_er_each_step and topo.n > 1:
            return None
        return k % topo.period

    def at(self, k: int) -> Tuple[Digraph, MixingPair]:
        key = self._cache_key(k)
        if key is not None and key in self._cache:
            g, p = self._cache[key]
        else:
            g = graph_at(self.topology, k)
            p = mixing_pair(g, self.scheme)
            if key is not None:
                self._cache[key] = (g, p)
        self.a_min = min(self.a_min, p.a_min)
        self.b_min = min(self.b_min, p.b_min)
        return g, p

    def graph_at(self, k: int) -> Digraph:
        return self.at(k)[0]

    def pair_at(self, k: int) -> MixingPair:
        return self.at(k)[1]


def export_csv(M: np.ndarray, path: Path) -> None:
    """Write a matrix as dense CSV."""
    np.savetxt(path, M, delimiter=",", fmt="%.17g")
