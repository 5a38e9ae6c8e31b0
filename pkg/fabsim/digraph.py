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
"""Time-varying directed communication graphs."""

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple, Union
import logging

import networkx as nx
import numpy as np

from .exceptions import ConfigError, DomainError

Edge = Tuple[int, int]

PHASE_KINDS = (
    "augmented_er",
    "directed_ring",
    "reversed_ring",
    "static",
    "fully_connected",
    "alternating_ring",
)
ER_KINDS = ("augmented_er", "static")
MAX_ATTEMPTS = 1000

_MASK64 = (1 << 64) - 1

logger = logging.getLogger(__name__)


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(*keys: int) -> int:
    """Derive a 64-bit sub-seed from integer keys.

    The keys are folded one by one through a SplitMix64 finalizer, so the result depends
    on their order and is identical on every platform.

    Example:

        >>> derive_seed(7, 0) == derive_seed(7, 0)
        True
        >>> derive_seed(7, 0) == derive_seed(0, 7)
        False
    """
    h = 0
    for key in keys:
        h = _splitmix64(h ^ (int(key) & _MASK64))
    return h


@dataclass(frozen=True)
class Digraph:
    """A directed graph at one iteration.

    An edge ``(j, i)`` means agent ``j`` sends to agent ``i``. Self-loops are never stored;
    the mixing matrices add them.

    Example:

        >>> g = Digraph(3, {(0, 1), (1, 2), (2, 0)})
        >>> g.in_neighbors(0), g.out_neighbors(0)
        ((2,), (1,))
    """

    n: int
    edges: FrozenSet[Edge]

    def __post_init__(self) -> None:
        if self.n < 1:
            raise DomainError(f"a digraph needs at least one node, got n={self.n}")
        edges = frozenset((int(j), int(i)) for j, i in self.edges)
        for j, i in edges:
            if j == i:
                raise DomainError(f"self-loop {j}->{i} must not be stored")
            if not (0 <= j < self.n and 0 <= i < self.n):
                raise DomainError(f"edge {j}->{i} has an endpoint outside [0, {self.n})")
        object.__setattr__(self, "edges", edges)

    @cached_property
    def _in(self) -> Dict[int, Tuple[int, ...]]:
        ins: Dict[int, List[int]] = {i: [] for i in range(self.n)}
        for j, i in self.edges:
            ins[i].append(j)
        return {i: tuple(sorted(js)) for i, js in ins.items()}

    @cached_property
    def _out(self) -> Dict[int, Tuple[int, ...]]:
        outs: Dict[int, List[int]] = {j: [] for j in range(self.n)}
        for j, i in self.edges:
            outs[j].append(i)
        return {j: tuple(sorted(is_)) for j, is_ in outs.items()}

    def in_neighbors(self, i: int) -> Tuple[int, ...]:
        return self._in[i]

    def out_neighbors(self, i: int) -> Tuple[int, ...]:
        return self._out[i]

    def compatibility_mask(self) -> np.ndarray:
        """Boolean ``n x n`` mask with ``mask[r, c]`` set iff ``c -> r`` or ``r == c``."""
        mask = np.eye(self.n, dtype=bool)
        for j, i in self.edges:
            mask[i, j] = True
        return mask

    def to_networkx(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(range(self.n))
        g.add_edges_from(sorted(self.edges))
        return g


@dataclass(frozen=True)
class PhaseSpec:
    """One phase of a topology schedule.

    Args:
        kind: One of ``augmented_er``, ``directed_ring``, ``reversed_ring``, ``static``,
            ``fully_connected``, ``alternating_ring``.
        length: Number of iterations the phase lasts.
        nu: Edge probability, required by the ER kinds (``augmented_er``, ``static``).
    """

    kind: str
    length: int
    nu: Optional[float] = None

    def __post_init__(self) -> None:
        if self.kind not in PHASE_KINDS:
            raise ConfigError(f"unknown phase kind {self.kind!r}")
        if self.length < 1:
            raise ConfigError(f"phase length must be positive, got {self.length}")
        if self.kind in ER_KINDS:
            if self.nu is None or not 0 < self.nu <= 1:
                raise ConfigError(f"phase {self.kind!r} needs nu in (0, 1], got {self.nu}")


def default_phases(nu: float = 0.3) -> Tuple[PhaseSpec, ...]:
    """The three-phase cycle: augmented ER, directed ring, reversed ring, 10 steps each."""
    return (
        PhaseSpec("augmented_er", 10, nu),
        PhaseSpec("directed_ring", 10),
        PhaseSpec("reversed_ring", 10),
    )


@dataclass(frozen=True)
class TopologySchedule:
    """A periodic sequence of communication graphs.

    Args:
        n: Number of agents.
        period: Iterations per cycle. Must equal the sum of phase lengths.
        phases: Phases in cycle order; phase boundaries are half-open.
        seed: Seed of the topology stream.
        regenerate_er_each_step: Re-sample ``augmented_er`` graphs at every iteration
            instead of once per phase.
    """

    n: int
    period: int = 30
    phases: Tuple[PhaseSpec, ...] = field(default_factory=default_phases)
    seed: int = 0
    regenerate_er_each_step: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "phases", tuple(self.phases))
        if self.n < 1:
            raise ConfigError(f"need at least one agent, got n={self.n}")
        if not self.phases:
            raise ConfigError("a schedule needs at least one phase")
        total = sum(p.length for p in self.phases)
        if total != self.period:
            raise ConfigError(f"phase lengths sum to {total} but period is {self.period}")

    def phase_index(self, k: int) -> int:
        offset = k % self.period
        for idx, phase in enumerate(self.phases):
            if offset < phase.length:
                return idx
            offset -= phase.length
        raise AssertionError("unreachable: phase lengths sum to the period")


def _ring_edges(n: int) -> FrozenSet[Edge]:
    return frozenset((i, (i + 1) % n) for i in range(n))


def phase_graph(n: int, spec: PhaseSpec, rng: np.random.Generator) -> Digraph:
    """Build the graph of one phase.

    ``augmented_er`` is the directed cycle ``0 -> 1 -> ... -> n-1 -> 0`` plus every other
    ordered pair independently with probability ``nu``. ``static`` is a plain ER graph,
    redrawn until strongly connected. ``alternating_ring`` is the directed ring.

    Example:

        >>> import numpy as np
        >>> g = phase_graph(3, PhaseSpec("reversed_ring", 1), np.random.default_rng(0))
        >>> sorted(g.edges)
        [(0, 2), (1, 0), (2, 1)]

    Raises:
        ConfigError: If ``n < 2`` or no strongly connected graph was drawn within the
            attempt limit.
    """
    if n < 2:
        raise ConfigError(f"phase graphs need n >= 2, got n={n}")

    if spec.kind in ("directed_ring", "alternating_ring"):
        return Digraph(n, _ring_edges(n))
    if spec.kind == "reversed_ring":
        return Digraph(n, frozenset((i, j) for j, i in _ring_edges(n)))
    if spec.kind == "fully_connected":
        return Digraph(n, frozenset((j, i) for j in range(n) for i in range(n) if i != j))

    assert spec.nu is not None
    base = _ring_edges(n) if spec.kind == "augmented_er" else frozenset()
    pairs = [(j, i) for j in range(n) for i in range(n) if i != j and (j, i) not in base]
    for attempt in range(MAX_ATTEMPTS):
        keep = rng.random(len(pairs)) < spec.nu
        g = Digraph(n, base | frozenset(p for p, k in zip(pairs, keep) if k))
        if is_strongly_connected(g):
            if attempt:
                logger.debug(
                    "Drew a strongly connected %s graph after %d tries", spec.kind, attempt + 1
                )
            return g
    raise ConfigError(
        f"no strongly connected {spec.kind} graph with nu={spec.nu} in {MAX_ATTEMPTS} attempts"
    )


def graph_at(schedule: TopologySchedule, k: int) -> Digraph:
    """Return the communication graph at iteration ``k``.

    The result is a pure function of ``(schedule, k)``. ER phases draw from a sub-seed
    derived from ``(seed, k)`` when ``regenerate_er_each_step`` is set, and from
    ``(seed, phase index)`` otherwise, so ``k`` and ``k + period`` then agree.

    Example:

        >>> sched = TopologySchedule(5)
        >>> sorted(graph_at(sched, 45).edges) == sorted(graph_at(sched, 15).edges)
        True
    """
    if k < 0:
        raise DomainError(f"iteration must be nonnegative, got {k}")
    if schedule.n == 1:
        return Digraph(1, frozenset())

    idx = schedule.phase_index(k)
    spec = schedule.phases[idx]
    if spec.kind == "augmented_er" and schedule.regenerate_er_each_step:
        sub_seed = derive_seed(schedule.seed, k)
    else:
        sub_seed = derive_seed(schedule.seed, schedule.period, idx)
    return phase_graph(schedule.n, spec, np.random.default_rng(sub_seed))


def is_strongly_connected(g: Digraph) -> bool:
    """Check that every node reaches every other node along edge directions.

    Example:

        >>> is_strongly_connected(Digraph(3, {(0, 1), (0, 2)}))
        False
    """
    if g.n == 1:
        return True
    return nx.is_strongly_connected(g.to_networkx())


def diameter(g: Digraph) -> int:
    """Longest shortest directed path over ordered pairs of distinct nodes.

    Example:

        >>> diameter(Digraph(5, {(i, (i + 1) % 5) for i in range(5)}))
        4

    Raises:
        DomainError: If the graph is not strongly connected.
    """
    if g.n == 1:
        return 0
    if not is_strongly_connected(g):
        raise DomainError("diameter is only defined for strongly connected graphs")
    return int(nx.diameter(g.to_networkx()))


def format_edgelist(g: Digraph) -> str:
    """Serialize as a ``n <count>`` header followed by one ``j i`` line per edge."""
    lines = [f"n {g.n}"]
    lines.extend(f"{j} {i}" for j, i in sorted(g.edges))
    return "\n".join(lines) + "\n"


def parse_edgelist(text: Union[str, Iterable[str]]) -> Digraph:
    """Parse the edge-list text written by `format_edgelist`.

    Raises:
        DomainError: On a missing header or malformed line.
    """
    lines = text.splitlines() if isinstance(text, str) else list(text)
    lines = [ln.strip() for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines or not lines[0].startswith("n "):
        raise DomainError("edge list must start with an 'n <count>' header")
    try:
        n = int(lines[0].split()[1])
        edges = []
        for ln in lines[1:]:
            j, i = ln.split()
            edges.append((int(j), int(i)))
    except ValueError as e:
        raise DomainError(f"malformed edge list: {e}") from e
    return Digraph(n, frozenset(edges))


def write_edgelist(g: Digraph, path: Path) -> None:
    Path(path).write_text(format_edgelist(g))


def read_edgelist(path: Path) -> Digraph:
    return parse_edgelist(Path(path).read_text())

