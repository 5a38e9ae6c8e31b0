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
"""Experiment files: YAML documents validated by pydantic models.

A file holds the run itself at the top level and one section per concern::

    name: rl-default
    seed: 0
    iterations: 20000
    algorithm: fab
    lam: 60
    cadence: 20
    problem: {kind: rl, n: 10, params: {S: 20, d: 5, gamma: 0.9, tau: 0.1}}
    topology: {period: 1, phases: [{kind: directed_ring, length: 1}],
               scheme: self_weighted, w_self: 0.8}
    steps: {eta_x: 0.1, eta_y: 0.1, eta_z: 0.1, penalty_scaled: true}
    stop: {rel_err_threshold: 0.01, max_budget: 20000}

Sweep files add a ``sweep`` section with ``axes``, ``repeats`` and ``workers``.
"""

from itertools import product
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Optional, Tuple, Union
import copy
import logging
import os
import re

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
import yaml

from .algorithms import StepSizes
from .digraph import PhaseSpec, TopologySchedule, default_phases, derive_seed
from .exceptions import ConfigError
from .mixing import WeightScheme

ALGORITHMS = (
    "fab",
    "pushpull",
    "pushsum_fab",
    "pushpull_soba",
    "static_fab",
    "push_sgd",
    "centralized_f2sa",
)
WORKERS_ENV = "FABSIM_WORKERS"

# sub-seed tags of the random streams derived from the run seed
TOPOLOGY_STREAM = 1
NOISE_STREAM = 2
INIT_STREAM = 3

logger = logging.getLogger(__name__)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ProblemConfig(_Section):
    """Benchmark problem; ``params`` go to the builder of ``kind`` as keyword arguments."""

    kind: Literal["quadratic", "rl", "hypercleaning", "hpo", "least_squares", "nonconvex"] = (
        "rl"
    )
    n: int = Field(10, ge=1, description="Number of agents")
    noise: float = Field(0.0, ge=0, description="Gradient noise standard deviation")
    seed: Optional[int] = Field(None, description="Instance seed; the run seed if unset")
    lower_mu: float = Field(
        1.0, gt=0, description="Lower-level modulus when a single-level problem is lifted"
    )
    params: Dict[str, Any] = Field(default_factory=dict)


class PhaseConfig(_Section):
    kind: str
    length: int = Field(..., ge=1)
    nu: Optional[float] = None

    def to_spec(self) -> PhaseSpec:
        return PhaseSpec(self.kind, self.length, self.nu)


class TopologyConfig(_Section):
    """Topology schedule and weighting scheme.

    Without ``phases`` the three-phase cycle (augmented ER with ``nu``, directed ring,
    reversed ring) is used and ``period`` must be its length.
    """

    period: int = Field(30, ge=1)
    phases: Optional[List[PhaseConfig]] = None
    nu: float = Field(0.3, gt=0, le=1)
    seed: Optional[int] = None
    regenerate_er_each_step: bool = True
    scheme: Literal["uniform", "self_weighted", "alternating"] = "uniform"
    w_self: float = 0.5
    epsilon: float = 0.2
    a_min: Optional[float] = Field(None, gt=0, description="Target floor of A entries")
    b_min: Optional[float] = Field(None, gt=0, description="Target floor of B entries")

    def phase_specs(self) -> Tuple[PhaseSpec, ...]:
        if self.phases is None:
            return default_phases(self.nu)
        return tuple(p.to_spec() for p in self.phases)

    def schedule(self, n: int, seed: int) -> TopologySchedule:
        return TopologySchedule(
            n,
            period=self.period,
            phases=self.phase_specs(),
            seed=self.seed if self.seed is not None else derive_seed(seed, TOPOLOGY_STREAM),
            regenerate_er_each_step=self.regenerate_er_each_step,
        )

    def weight_scheme(self) -> WeightScheme:
        return WeightScheme(self.scheme, w_self=self.w_self, epsilon=self.epsilon)


class StepsConfig(_Section):
    eta_x: float = Field(0.1, gt=0)
    eta_y: float = Field(0.1, gt=0)
    eta_z: float = Field(0.1, gt=0)
    decay: Optional[float] = Field(None, ge=0)
    penalty_scaled: bool = False

    def to_step_sizes(self) -> StepSizes:
        return StepSizes(
            self.eta_x,
            self.eta_y,
            self.eta_z,
            decay=self.decay,
            penalty_scaled=self.penalty_scaled,
        )


class StopConfig(_Section):
    rel_err_threshold: Optional[float] = Field(
        1e-2, gt=0, description="Stop once the relative error drops below this"
    )
    max_budget: int = Field(20000, ge=1)
    divergence_factor: Optional[float] = Field(
        1e6, gt=1, description="Mark a run diverged once rel_err grows this far past its start"
    )


class ExperimentConfig(_Section):
    """One simulation run."""

    name: str = "experiment"
    seed: int = 0
    iterations: int = Field(1000, ge=1)
    algorithm: Literal[
        "fab",
        "pushpull",
        "pushsum_fab",
        "pushpull_soba",
        "static_fab",
        "push_sgd",
        "centralized_f2sa",
    ] = "fab"
    lam: float = Field(10.0, gt=0)
    cadence: int = Field(20, ge=1)
    output: Optional[Path] = None
    timing: bool = Field(False, description="Write wall time into the metrics CSV")
    warm_start_steps: int = Field(0, ge=0)
    init_spread: float = Field(
        0.0, ge=0, description="Standard deviation of the agents' initial x around zero"
    )
    static_repair: bool = Field(
        False, description="static_fab returns the weight of missing links to the diagonal"
    )
    snapshot_every: Optional[int] = Field(
        None, ge=1, description="Save the swarm state every this many iterations"
    )
    snapshots_kept: int = Field(1, ge=1)
    problem: ProblemConfig = Field(default_factory=ProblemConfig)
    topology: TopologyConfig = Field(default_factory=TopologyConfig)
    steps: StepsConfig = Field(default_factory=StepsConfig)
    stop: StopConfig = Field(default_factory=StopConfig)

    @property
    def budget(self) -> int:
        return min(self.iterations, self.stop.max_budget)

    @property
    def problem_seed(self) -> int:
        return self.problem.seed if self.problem.seed is not None else self.seed


class SweepConfig(_Section):
    """Grid of a sweep.

    Keys of ``axes`` are dotted paths into the experiment file. A key listing several
    comma-separated paths sets all of them to each value, e.g.
    ``"steps.eta_y,steps.eta_z": [0.06, 0.08]``.
    """

    axes: Dict[str, List[Any]]
    repeats: int = Field(1, ge=1)
    workers: Optional[int] = Field(None, ge=1)

    @field_validator("axes")
    @classmethod
    def _non_empty(cls, axes: Dict[str, List[Any]]) -> Dict[str, List[Any]]:
        if not axes:
            raise ValueError("a sweep needs at least one axis")
        for key, values in axes.items():
            if not values:
                raise ValueError(f"axis {key!r} has no values")
        return axes


class SweepSpec(BaseModel):
    """A base experiment and the grid to vary it over."""

    base: ExperimentConfig
    sweep: SweepConfig

    def cells(self) -> List[Tuple[Dict[str, Any], List[ExperimentConfig]]]:
        """Cells in axis order, each with one config per repeat.

        The seed of repeat ``r`` is derived from the base seed and ``r`` only, so a cell's
        runs do not depend on which other cells the grid holds.
        """
        keys = list(self.sweep.axes)
        base = self.base.model_dump()
        out = []
        for values in product(*(self.sweep.axes[key] for key in keys)):
            params = dict(zip(keys, values))
            data = copy.deepcopy(base)
            for key, value in params.items():
                for path in key.split(","):
                    _set_path(data, path.strip(), value)
            name = "_".join(f"{_short(key)}={value}" for key, value in params.items())
            runs = []
            for r in range(self.sweep.repeats):
                data["seed"] = derive_seed(self.base.seed, r)
                data["name"] = f"{self.base.name}[{name}]#{r}"
                runs.append(_validate(ExperimentConfig, data))
            out.append((params, runs))
        return out


def _short(key: str) -> str:
    return ",".join(path.strip().rsplit(".", 1)[-1] for path in key.split(","))


def _set_path(data: Dict[str, Any], path: str, value: Any) -> None:
    keys = path.split(".")
    node = data
    for key in keys[:-1]:
        child = node.get(key)
        if child is None:
            child = node[key] = {}
        if not isinstance(child, dict):
            raise ConfigError(f"cannot set {path!r}: {key!r} is not a section")
        node = child
    node[keys[-1]] = value


_FLOAT = re.compile(r"[-+]?(\.[0-9]+|[0-9]+(\.[0-9]*)?)([eE][-+]?[0-9]+)?")


def _scalar(text: str) -> Any:
    value = yaml.safe_load(text)
    # YAML 1.1 wants a dot in floats, so 2e-2 comes back as a string
    if isinstance(value, str) and _FLOAT.fullmatch(value.strip()):
        return float(value)
    return value


def apply_overrides(data: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    """Apply ``section.key=value`` overrides; values are parsed as YAML scalars.

    Example:

        >>> apply_overrides({}, ["steps.eta_x=5e-2", "name=demo"])
        {'steps': {'eta_x': 0.05}, 'name': 'demo'}

    Raises:
        ConfigError: On an override without ``=``.
    """
    for item in overrides:
        path, sep, text = item.partition("=")
        if not sep or not path.strip():
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        try:
            value = _scalar(text)
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse value of override {item!r}: {e}") from None
        _set_path(data, path.strip(), value)
    return data


def _validate(model, data: Dict[str, Any]):
    try:
        return model.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration:\n{e}") from None


def read_yaml(path: Union[str, Path]) -> Dict[str, Any]:
    """Read a YAML mapping.

    Raises:
        ConfigError: If the file is missing, malformed or not a mapping.
    """
    try:
        with open(path) as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"malformed YAML in {path}: {e}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a mapping at the top level")
    logger.debug("Read configuration from %s", path)
    return data


def load_config(
    path: Optional[Union[str, Path]] = None, overrides: Iterable[str] = ()
) -> ExperimentConfig:
    """Load an experiment file, ignoring any ``sweep`` section.

    Raises:
        ConfigError: If the file or an override is invalid.
    """
    data = read_yaml(path) if path is not None else {}
    data.pop("sweep", None)
    return _validate(ExperimentConfig, apply_overrides(data, overrides))


def load_sweep(path: Union[str, Path], overrides: Iterable[str] = ()) -> SweepSpec:
    """Load a sweep file: an experiment file with a ``sweep`` section.

    Overrides under ``sweep.`` change the grid; the others change the base experiment.

    Raises:
        ConfigError: If the file has no ``sweep`` section or is invalid.
    """
    data = read_yaml(path)
    sweep = data.pop("sweep", None)
    if sweep is None:
        raise ConfigError(f"{path} has no sweep section")
    wrapped = apply_overrides({"base": data, "sweep": sweep}, _route(overrides))
    return _validate(SweepSpec, wrapped)


def _route(overrides: Iterable[str]) -> List[str]:
    return [o if o.startswith("sweep.") else f"base.{o}" for o in overrides]


def dump_config(cfg: BaseModel) -> str:
    """The configuration as a YAML document that `load_config` reads back."""
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)


def workers_from_env(default: Optional[int] = None) -> Optional[int]:
    """Worker count from ``FABSIM_WORKERS``, falling back to ``default``.

    Raises:
        ConfigError: If the variable is set but not a positive integer.
    """
    text = os.environ.get(WORKERS_ENV)
    if text is None or not text.strip():
        return default
    try:
        workers = int(text)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {text!r}") from None
    if workers < 1:
        raise ConfigError(f"{WORKERS_ENV} must be positive, got {workers}")
    return workers
