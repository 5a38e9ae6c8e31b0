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
"""Config-driven runs, sweeps and their outputs."""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union
import csv
import logging
import math
import re

import numpy as np

from .algorithms import (
    StepSizes,
    SwarmState,
    centralized_f2sa,
    fab,
    init_centralized_state,
    init_single_state,
    init_soba_state,
    init_state,
    push_sgd,
    pushpull_single,
    pushpull_soba,
    pushsum_fab,
    static_fab,
)
from .attachments import MetricsRecorder, ProgressBar, SumReducer, WallClock
from .callbacks import checkpoint, stop_below, stop_on_divergence
from .config import (
    INIT_STREAM,
    NOISE_STREAM,
    ExperimentConfig,
    ProblemConfig,
    SweepSpec,
    TopologyConfig,
    workers_from_env,
)
from .diagnostics import MetricsRow, Transition, comm_cost_floats, metrics_for, min_over
from .digraph import Digraph, derive_seed, diameter, is_strongly_connected
from .event import Event
from .exceptions import ConfigError, DomainError, FabsimError, NumericalDivergence
from .exceptions import UnsupportedOperation
from .mixing import MixingSchedule, WeightVectors, advance_weights, restrict_pair, validate_pair
from .problems import (
    BilevelFromSingle,
    BilevelProblem,
    ClassificationProblem,
    NoiseStream,
    SingleLevelProblem,
    build_hpo_problem,
    build_hypercleaning_problem,
    build_least_squares_problem,
    build_nonconvex_problem,
    build_quadratic_problem,
    build_rl_problem,
    load_idx_dataset,
)
from .runner import Runner

Problem = Union[BilevelProblem, SingleLevelProblem]

BUILDERS = {
    "quadratic": build_quadratic_problem,
    "rl": build_rl_problem,
    "hypercleaning": build_hypercleaning_problem,
    "hpo": build_hpo_problem,
    "least_squares": build_least_squares_problem,
    "nonconvex": build_nonconvex_problem,
}
SINGLE_LEVEL_ALGORITHMS = ("pushpull", "push_sgd")
EXCEEDED = ">Max"

logger = logging.getLogger(__name__)


def build_problem(spec: ProblemConfig, seed: int) -> Problem:
    """Build the benchmark problem of a config section.

    Raises:
        ConfigError: On unknown or invalid builder parameters.
    """
    params = dict(spec.params)
    if "images" in params or "labels" in params:
        if spec.kind not in ("hypercleaning", "hpo"):
            raise ConfigError(f"problem {spec.kind!r} does not read image files")
        try:
            images, labels = params.pop("images"), params.pop("labels")
        except KeyError:
            raise ConfigError("image data needs both 'images' and 'labels'") from None
        params["data"] = load_idx_dataset(images, labels, limit=params.pop("limit", None))
    if spec.kind == "quadratic":
        params.setdefault("dx", 5)
        params.setdefault("dy", 5)
    try:
        return BUILDERS[spec.kind](n=spec.n, seed=seed, noise=spec.noise, **params)
    except TypeError as e:
        raise ConfigError(f"invalid parameters for problem {spec.kind!r}: {e}") from None


def resolve_problem(algorithm: str, problem: Problem, lower_mu: float = 1.0) -> Problem:
    """Adapt a problem to what the algorithm iterates on.

    Single-level algorithms take classification problems as their merged regularized
    logistic regression. Bilevel algorithms lift single-level problems with a trivial
    strongly convex lower level.

    Raises:
        ConfigError: If no adaptation exists.
    """
    if algorithm in SINGLE_LEVEL_ALGORITHMS:
        if isinstance(problem, SingleLevelProblem):
            return problem
        if isinstance(problem, ClassificationProblem):
            return problem.single_level()
        raise ConfigError(f"{algorithm} needs a single-level or classification problem")
    if isinstance(problem, SingleLevelProblem):
        return BilevelFromSingle(problem, mu=lower_mu)
    return problem


def build_schedule(spec: TopologyConfig, n: int, seed: int) -> MixingSchedule:
    return MixingSchedule(spec.schedule(n, seed), spec.weight_scheme())


def optimum(problem: Problem) -> Optional[np.ndarray]:
    try:
        return problem.optimal_x()
    except UnsupportedOperation:
        return None


class Simulation:
    """An algorithm advanced one iteration at a time along a mixing schedule.

    Besides the swarm state it keeps the weight vectors ``alpha``/``beta`` of the schedule
    and the last `Transition` for the weighted-average diagnostics.

    Args:
        algorithm: Name of the algorithm.
        problem: Problem in the form the algorithm iterates on.
        schedule: Mixing schedule; unused by ``centralized_f2sa``.
        steps: Step sizes.
        lam: Penalty parameter of the penalty algorithms.
        noise: Gradient noise stream.
        warm_start_steps: Local lower-level steps before the first iteration.
        x0: Initial ``x`` of every agent, one row each; zeros by default.
        repair_static: Let ``static_fab`` keep the weight of missing links.
    """

    def __init__(
        self,
        algorithm: str,
        problem: Problem,
        schedule: MixingSchedule,
        steps: StepSizes,
        lam: float = 1.0,
        noise: Optional[NoiseStream] = None,
        warm_start_steps: int = 0,
        x0: Optional[np.ndarray] = None,
        repair_static: bool = False,
    ) -> None:
        self.algorithm = algorithm
        self.x0 = x0
        self.repair_static = repair_static
        self.problem = problem
        self.schedule = schedule
        self.steps = steps
        self.lam = lam
        self.noise = noise
        self.state = self._initial_state(warm_start_steps)
        self.weights = WeightVectors.uniform(self.state.n)
        self.transition: Optional[Transition] = None
        self.x_star = optimum(problem)
        self.peak_bytes = self.state.nbytes
        self._frozen = schedule.pair_at(0) if algorithm == "static_fab" else None

    @property
    def _dy(self) -> int:
        return self.problem.dy if isinstance(self.problem, BilevelProblem) else 0

    def _initial_state(self, warm: int) -> SwarmState:
        P, alg = self.problem, self.algorithm
        if alg in SINGLE_LEVEL_ALGORITHMS:
            assert isinstance(P, SingleLevelProblem)
            return init_single_state(P, self.x0, noise=self.noise, push_sum=alg == "push_sgd")
        assert isinstance(P, BilevelProblem)
        if alg == "pushpull_soba":
            return init_soba_state(P, self.x0, noise=self.noise, warm_start_steps=warm)
        if alg == "centralized_f2sa":
            x0 = None if self.x0 is None else self.x0.mean(axis=0)
            return init_centralized_state(
                P, self.lam, x0, noise=self.noise, warm_start_steps=warm
            )
        return init_state(
            P,
            self.lam,
            self.x0,
            noise=self.noise,
            warm_start_steps=warm,
            push_sum=alg == "pushsum_fab",
        )

    def step(self) -> int:
        """Advance one iteration and return the number of scalars communicated.

        Raises:
            NumericalDivergence: If the iteration produced a non-finite value.
        """
        prev, k, P, alg = self.state, self.state.k, self.problem, self.algorithm
        if alg == "centralized_f2sa":
            self.state = centralized_f2sa(prev, P, self.steps, self.lam, self.noise)
            self.peak_bytes = max(self.peak_bytes, self.state.nbytes)
            return 0

        graph, pair = self.schedule.at(k)
        pulls = True
        etas = self.steps.at(k, self.lam)
        if alg == "fab":
            self.state = fab(prev, P, pair, self.steps, self.lam, self.noise)
        elif alg == "static_fab":
            assert self._frozen is not None
            repair = self.repair_static
            self.state = static_fab(
                prev, P, self._frozen, graph, self.steps, self.lam, self.noise, repair=repair
            )
            if repair:
                # weights follow the matrices the agents actually mixed with
                pair = restrict_pair(self._frozen, graph)
            else:
                pulls = False
        elif alg == "pushsum_fab":
            self.state = pushsum_fab(prev, P, pair, self.steps, self.lam, self.noise)
            pulls = False
        elif alg == "pushpull_soba":
            self.state = pushpull_soba(prev, P, pair, self.steps, self.noise)
            etas = self.steps.at(k)
        elif alg == "pushpull":
            self.state = pushpull_single(prev, P, pair, self.steps, self.noise)
            etas = self.steps.at(k)
        elif alg == "push_sgd":
            self.state = push_sgd(prev, P, pair, self.steps, self.noise)
            pulls = False
        else:
            raise ConfigError(f"unknown algorithm {alg!r}")

        alpha = self.weights.alpha
        self.weights = advance_weights(self.weights, pair)
        self.transition = Transition(prev, etas, alpha) if pulls else None
        self.peak_bytes = max(self.peak_bytes, self.state.nbytes)
        return comm_cost_floats(alg, graph, P.dx, self._dy)

    def metrics(self, comm_cost: Optional[float] = None) -> MetricsRow:
        return metrics_for(
            self.state, self.problem, self.weights, self.x_star, self.transition, comm_cost
        )


def build_simulation(cfg: ExperimentConfig) -> Simulation:
    """Build everything a run needs; every configuration error surfaces here.

    Raises:
        ConfigError: On an invalid problem, topology, step or algorithm setting.
    """
    problem = resolve_problem(
        cfg.algorithm, build_problem(cfg.problem, cfg.problem_seed), cfg.problem.lower_mu
    )
    steps = cfg.steps.to_step_sizes()
    schedule = build_schedule(cfg.topology, problem.n, cfg.seed)
    noise = None
    if problem.noise_std > 0:
        noise = NoiseStream(derive_seed(cfg.seed, NOISE_STREAM), problem.noise_std)
    x0 = None
    if cfg.init_spread > 0:
        rng = np.random.default_rng(derive_seed(cfg.seed, INIT_STREAM))
        x0 = rng.normal(0.0, cfg.init_spread, (problem.n, problem.dx))
    return Simulation(
        cfg.algorithm,
        problem,
        schedule,
        steps,
        lam=cfg.lam,
        noise=noise,
        warm_start_steps=cfg.warm_start_steps,
        x0=x0,
        repair_static=cfg.static_repair,
    )


@dataclass
class RunSummary:
    """Outcome of one run.

    ``exceeded`` is set when a threshold was configured and not reached within the budget,
    or when the run diverged or failed.
    """

    name: str
    algorithm: str
    iterations_run: int = 0
    iterations_to_threshold: Optional[int] = None
    exceeded: bool = False
    diverged_at: Optional[int] = None
    final_rel_err: Optional[float] = None
    min_consensus: Optional[float] = None
    wall_time_s: float = 0.0
    peak_memory_bytes: int = 0
    comm_cost_total: int = 0
    a_min: Optional[float] = None
    b_min: Optional[float] = None
    error: Optional[str] = None

    @property
    def iterations_label(self) -> str:
        if self.exceeded:
            return EXCEEDED
        if self.iterations_to_threshold is None:
            return "-"
        return str(self.iterations_to_threshold)

    @classmethod
    def failed(cls, cfg: ExperimentConfig, error: Exception) -> "RunSummary":
        return cls(cfg.name, cfg.algorithm, exceeded=True, error=str(error))


@dataclass
class RunResult:
    summary: RunSummary
    rows: List[MetricsRow] = field(default_factory=list)
    state: Optional[SwarmState] = None


def slug(name: str) -> str:
    """A file name stem for an experiment name.

    Example:

        >>> slug("rl[lam=60]#0")
        'rl_lam=60_0'
    """
    return re.sub(r"[^\w.=,+-]+", "_", name).strip("_")


def _last_finite(rows: Sequence[MetricsRow], column: str) -> Optional[float]:
    for row in reversed(rows):
        value = getattr(row, column)
        if value is not None and math.isfinite(value):
            return value
    return None


def run_experiment(cfg: ExperimentConfig, *, progress: bool = False) -> RunResult:
    """Run one configured simulation.

    Metrics are recorded every ``cfg.cadence`` iterations, plus the initial state and the
    last iteration. With ``cfg.output`` set they are written to ``<output>/<name>.csv``.
    The run stops at the relative-error threshold, when the budget is spent or on
    divergence: non-finite metrics, or a relative error ``cfg.stop.divergence_factor``
    times its initial value.

    Raises:
        ConfigError: Before any compute, if the configuration is invalid.
    """
    sim = build_simulation(cfg)
    threshold = cfg.stop.rel_err_threshold
    if threshold is not None and sim.x_star is None:
        logger.info(
            "Problem %r has no closed-form optimum, ignoring threshold", cfg.problem.kind
        )
        threshold = None

    path = cfg.output / f"{slug(cfg.name)}.csv" if cfg.output is not None else None
    recorder = MetricsRecorder(path, timing=cfg.timing)
    runner = Runner()
    runner.state.update({"metrics": sim.metrics(), "comm_cost": 0, "swarm": sim.state})

    @runner.on(Event.ITERATION)
    def iterate(state):
        try:
            state["comm_cost"] = sim.step()
        except NumericalDivergence as e:
            logger.warning("Run %s diverged: %s", cfg.name, e)
            state["diverged_at"] = e.iteration
            state["running"] = False

    @runner.on(Event.EVALUATION)
    def evaluate(state):
        row = sim.metrics(comm_cost=state["comm_cost"])
        row.wall_time_s = WallClock.elapsed(state)
        state["metrics"] = row
        state["swarm"] = sim.state
        if cfg.snapshot_every is not None:
            state["snapshot_due"] = state["n_iters"] % cfg.snapshot_every == 0
        if row.rel_err is not None:
            state["stats"] = {"rel_err": f"{row.rel_err:.3e}"}

    recorder.attach_on(runner)
    bound = None
    start_err = runner.state["metrics"].rel_err
    if cfg.stop.divergence_factor is not None and start_err:
        bound = cfg.stop.divergence_factor * start_err
    runner.on(Event.EVALUATION, stop_on_divergence(bound=bound))
    if threshold is not None:
        runner.on(Event.EVALUATION, stop_below(threshold))
    if cfg.snapshot_every is not None and cfg.output is not None:
        runner.on(
            Event.EVALUATION,
            checkpoint(
                "swarm",
                under=cfg.output,
                at_most=cfg.snapshots_kept,
                when="snapshot_due",
                prefix_fmt=f"{slug(cfg.name)}_{{n_iters}}_",
            ),
        )
    SumReducer("comm_total", value="comm_cost").attach_on(runner)
    WallClock().attach_on(runner)
    if progress:
        ProgressBar(stats="stats", desc=cfg.name, leave=False).attach_on(runner)

    logger.info("Running %s: %s for at most %d iterations", cfg.name, cfg.algorithm, cfg.budget)
    runner.run(cfg.budget, every=cfg.cadence)

    state, rows = runner.state, recorder.rows
    diverged_at = state.get("diverged_at")
    if diverged_at is None and state.get("diverged"):
        diverged_at = rows[-1].k
    stopped_at = state.get("stopped_at")
    n = sim.state.n
    summary = RunSummary(
        cfg.name,
        cfg.algorithm,
        iterations_run=sim.state.k,
        iterations_to_threshold=stopped_at,
        exceeded=diverged_at is not None or (threshold is not None and stopped_at is None),
        diverged_at=diverged_at,
        final_rel_err=_last_finite(rows, "rel_err"),
        min_consensus=min_over(rows, "consensus_x"),
        wall_time_s=state["wall_time_s"],
        peak_memory_bytes=sim.peak_bytes + 2 * n * n * 8,
        comm_cost_total=int(state["comm_total"] or 0),
        a_min=_finite_or_none(sim.schedule.a_min),
        b_min=_finite_or_none(sim.schedule.b_min),
    )
    logger.info(
        "Finished %s after %d iterations: iterations to threshold %s, rel_err %s",
        cfg.name,
        summary.iterations_run,
        summary.iterations_label,
        summary.final_rel_err,
    )
    return RunResult(summary, rows, sim.state)


def _finite_or_none(value: float) -> Optional[float]:
    return value if math.isfinite(value) else None


def _run_quietly(cfg: ExperimentConfig) -> RunResult:
    try:
        result = run_experiment(cfg)
    except FabsimError as e:
        logging.getLogger(f"{__name__}.sweep").warning("Run %s failed: %s", cfg.name, e)
        return RunResult(RunSummary.failed(cfg, e))
    # final states stay in the worker
    result.state = None
    return result


def run_all(configs: Sequence[ExperimentConfig], workers: int = 1) -> List[RunResult]:
    """Run configurations in order, in a process pool when ``workers > 1``.

    A failing run is recorded with the exceeded marker and its error; the others go on.
    """
    if workers <= 1 or len(configs) <= 1:
        return [_run_quietly(cfg) for cfg in configs]
    with ProcessPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(_run_quietly, configs))


def _mean_std(values: Sequence[float]) -> Tuple[Optional[float], Optional[float]]:
    if not values:
        return None, None
    return float(np.mean(values)), float(np.std(values))


@dataclass
class SweepCell:
    """Runs of one grid cell, one per repeat."""

    params: Dict[str, Any]
    runs: List[RunResult]

    @property
    def exceeded(self) -> int:
        return sum(r.summary.exceeded for r in self.runs)

    def iterations(self) -> Tuple[Optional[float], Optional[float]]:
        if self.exceeded:
            return None, None
        values = [r.summary.iterations_to_threshold for r in self.runs]
        return _mean_std([v for v in values if v is not None])

    def rel_err(self) -> Tuple[Optional[float], Optional[float]]:
        values = [r.summary.final_rel_err for r in self.runs]
        return _mean_std([v for v in values if v is not None])


def resolve_workers(spec: Optional[SweepSpec] = None, workers: Optional[int] = None) -> int:
    """Worker count: the argument, then ``FABSIM_WORKERS``, then the sweep file, then 1."""
    if workers is not None:
        if workers < 1:
            raise ConfigError(f"workers must be positive, got {workers}")
        return workers
    default = spec.sweep.workers if spec is not None else None
    return workers_from_env(default) or 1


def run_sweep(spec: SweepSpec, workers: Optional[int] = None) -> List[SweepCell]:
    """Run every cell of a sweep over its repeats.

    Cells keep the axis order of the file. Every cell's runs can go to different workers;
    each writes its own metrics file.
    """
    cells = spec.cells()
    configs = [cfg for _, runs in cells for cfg in runs]
    n_workers = resolve_workers(spec, workers)
    logging.getLogger(f"{__name__}.sweep").info(
        "Sweeping %d cells x %d repeats on %d workers",
        len(cells),
        spec.sweep.repeats,
        n_workers,
    )
    results = iter(run_all(configs, n_workers))
    return [SweepCell(params, [next(results) for _ in runs]) for params, runs in cells]


def _cell(value: Optional[float]) -> str:
    return "" if value is None else repr(value)


def write_sweep_csv(cells: Sequence[SweepCell], path: Path) -> None:
    """Write one row per cell: axis values, iterations and relative error statistics."""
    if not cells:
        raise DomainError("no sweep cells to write")
    keys = list(cells[0].params)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            keys
            + ["repeats", "exceeded", "iterations_mean", "iterations_std"]
            + ["rel_err_mean", "rel_err_std"]
        )
        for cell in cells:
            it_mean, it_std = cell.iterations()
            err_mean, err_std = cell.rel_err()
            writer.writerow(
                [cell.params[key] for key in keys]
                + [len(cell.runs), cell.exceeded, _cell(it_mean), _cell(it_std)]
                + [_cell(err_mean), _cell(err_std)]
            )


def emit_plotdata(
    runs: Mapping[str, Sequence[RunResult]],
    metrics: Sequence[str],
    out_dir: Path,
    log_scale: bool = False,
) -> List[Path]:
    """Write one column file per (experiment, metric).

    A single run gives ``k value`` columns; repeats give ``k mean std`` over the runs that
    recorded the iteration. Comment lines at the top name the experiment, the metric, the
    log-scale hint and the columns.

    Raises:
        DomainError: If there are no runs, or an experiment has none.
        ConfigError: On an unknown metric.
    """
    if not runs:
        raise DomainError("no runs to emit")
    for metric in metrics:
        if metric == "k" or metric not in MetricsRow.columns():
            raise ConfigError(f"unknown metric {metric!r}")

    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, results in runs.items():
        if not results:
            raise DomainError(f"experiment {name!r} has no runs")
        for metric in metrics:
            by_k: Dict[int, List[float]] = {}
            for result in results:
                for row in result.rows:
                    value = getattr(row, metric)
                    if value is not None:
                        by_k.setdefault(row.k, []).append(value)
            columns = "k value" if len(results) == 1 else "k mean std"
            lines = [
                f"# experiment: {name}",
                f"# metric: {metric}",
                f"# log_scale: {str(log_scale).lower()}",
                f"# columns: {columns}",
            ]
            for k in sorted(by_k):
                values = by_k[k]
                if len(results) == 1:
                    lines.append(f"{k} {values[0]!r}")
                else:
                    lines.append(f"{k} {float(np.mean(values))!r} {float(np.std(values))!r}")
            path = out_dir / f"{slug(name)}.{metric}.dat"
            path.write_text("\n".join(lines) + "\n")
            paths.append(path)
    return paths


@dataclass
class TopologyReport:
    """Outcome of validating every mixing pair of a schedule over some iterations."""

    iterations: int
    all_strongly_connected: bool
    max_diameter: int
    row_sum_deviation: float
    col_sum_deviation: float
    violations: int
    a_min: float
    b_min: float
    a_target: Optional[float] = None
    b_target: Optional[float] = None

    @property
    def passed(self) -> bool:
        ok = self.all_strongly_connected and self.violations == 0
        ok = ok and max(self.row_sum_deviation, self.col_sum_deviation) <= 1e-12
        if self.a_target is not None:
            ok = ok and self.a_min >= self.a_target
        if self.b_target is not None:
            ok = ok and self.b_min >= self.b_target
        return ok

    def lines(self) -> List[str]:
        out = [
            f"iterations checked: {self.iterations}",
            f"all strongly connected: {self.all_strongly_connected}",
            f"max diameter: {self.max_diameter}",
            f"max |row sum of A - 1| = {self.row_sum_deviation:.3e}",
            f"max |col sum of B - 1| = {self.col_sum_deviation:.3e}",
            f"compatibility violations: {self.violations}",
            f"min nonzero entry: A {self.a_min:.6g}, B {self.b_min:.6g}",
        ]
        if self.a_target is not None or self.b_target is not None:
            out.append(f"targets: A >= {self.a_target}, B >= {self.b_target}")
        return out


def validate_topology(
    cfg: ExperimentConfig, iterations: Optional[int] = None
) -> Tuple[TopologyReport, Digraph, MixingSchedule]:
    """Validate the mixing pairs of the first ``iterations`` steps (one period by default).

    Returns the report, the graph at iteration 0 and the schedule.

    Raises:
        ConfigError: If the topology section is invalid.
    """
    schedule = build_schedule(cfg.topology, cfg.problem.n, cfg.seed)
    steps = iterations if iterations is not None else cfg.topology.period
    if steps < 1:
        raise ConfigError(f"iterations must be positive, got {steps}")
    connected, worst_diam, rows, cols, violations = True, 0, 0.0, 0.0, 0
    for k in range(steps):
        g, p = schedule.at(k)
        report = validate_pair(p, g)
        strong = is_strongly_connected(g)
        connected = connected and strong
        if strong and g.n > 1:
            worst_diam = max(worst_diam, diameter(g))
        rows = max(rows, report.row_sum_deviation)
        cols = max(cols, report.col_sum_deviation)
        violations += len(report.violations)
    result = TopologyReport(
        steps,
        connected,
        worst_diam,
        rows,
        cols,
        violations,
        schedule.a_min,
        schedule.b_min,
        cfg.topology.a_min,
        cfg.topology.b_min,
    )
    return result, schedule.graph_at(0), schedule


class Table1Entry(NamedTuple):
    group: str
    lam: float
    eta_x: float
    eta_y: float
    eta_z: float
    published: Optional[int]


def _entries() -> Tuple[Table1Entry, ...]:
    lam_group = [(60, 3200), (80, 4060), (100, 4860), (120, 5740), (140, 6620)]
    out = [Table1Entry("lam", lam, 0.1, 0.1, 0.1, it) for lam, it in lam_group]
    for eta, it in [(0.06, 5080), (0.08, 4060), (0.12, 2800), (0.14, 2440)]:
        out.append(Table1Entry("eta_x", 60, eta, 0.1, 0.1, it))
    for eta, it in [(0.06, None), (0.08, 10760), (0.12, None), (0.14, None)]:
        out.append(Table1Entry("eta_y", 60, 0.1, eta, 0.1, it))
    for eta, it in [(0.06, None), (0.08, None), (0.12, 9020), (0.14, 14920)]:
        out.append(Table1Entry("eta_z", 60, 0.1, 0.1, eta, it))
    for eta, it in [(0.06, 3280), (0.08, 3240), (0.12, 3600), (0.14, 4060)]:
        out.append(Table1Entry("balanced", 60, 0.1, eta, eta, it))
    return tuple(out)


# Published iterations to 1% relative error; None marks a spent budget.
TABLE1 = _entries()
TABLE1_GROUPS = ("lam", "eta_x", "eta_y", "eta_z", "balanced")


def table1_base_config(budget: int = 20000, seed: int = 0) -> ExperimentConfig:
    """Policy evaluation on the default time-varying schedule with edge probability 0.3."""
    return ExperimentConfig.model_validate(
        {
            "name": "table1",
            "seed": seed,
            "iterations": budget,
            "algorithm": "fab",
            "lam": 60.0,
            "cadence": 20,
            "problem": {
                "kind": "rl",
                "n": 10,
                "params": {"S": 20, "d": 5, "gamma": 0.9, "tau": 0.1, "fit": "sum"},
            },
            "topology": {"nu": 0.3, "scheme": "uniform"},
            "steps": {"penalty_scaled": True},
            "stop": {"rel_err_threshold": 1e-2, "max_budget": budget},
        }
    )


def table1_configs(
    groups: Optional[Sequence[str]] = None, budget: int = 20000, seed: int = 0
) -> List[Tuple[Table1Entry, ExperimentConfig]]:
    """Configurations of the sensitivity table, optionally restricted to some groups.

    Raises:
        ConfigError: On an unknown group.
    """
    for g in groups or ():
        if g not in TABLE1_GROUPS:
            raise ConfigError(f"unknown table group {g!r}, expected one of {TABLE1_GROUPS}")
    base = table1_base_config(budget, seed)
    out = []
    for e in TABLE1:
        if groups and e.group not in groups:
            continue
        cfg = base.model_copy(
            update={
                "name": f"table1[{e.group}:lam={e.lam},eta={e.eta_x},{e.eta_y},{e.eta_z}]",
                "lam": float(e.lam),
                "steps": base.steps.model_copy(
                    update={"eta_x": e.eta_x, "eta_y": e.eta_y, "eta_z": e.eta_z}
                ),
            }
        )
        out.append((e, cfg))
    return out


class Table1Row(NamedTuple):
    entry: Table1Entry
    summary: RunSummary


def run_table1(
    groups: Optional[Sequence[str]] = None,
    workers: Optional[int] = None,
    budget: int = 20000,
    seed: int = 0,
) -> List[Table1Row]:
    pairs = table1_configs(groups, budget, seed)
    results = run_all([cfg for _, cfg in pairs], resolve_workers(workers=workers))
    return [Table1Row(e, r.summary) for (e, _), r in zip(pairs, results)]


def table1_markdown(rows: Sequence[Table1Row]) -> str:
    """The rows as a Markdown table with the published iterations alongside."""
    lines = [
        "| λ | η_x | η_y | η_z | Iter(<1%) | Rel. Err. | Published |",
        "|---|---|---|---|---|---|---|",
    ]
    for e, s in rows:
        err = "" if s.final_rel_err is None else f"{s.final_rel_err:.2e}"
        published = EXCEEDED if e.published is None else str(e.published)
        lines.append(
            f"| {e.lam:g} | {e.eta_x:g} | {e.eta_y:g} | {e.eta_z:g} "
            f"| {s.iterations_label} | {err} | {published} |"
        )
    return "\n".join(lines)


def _find(rows: Sequence[Table1Row], **values: float) -> Optional[Table1Row]:
    for row in rows:
        if all(math.isclose(getattr(row.entry, k), v) for k, v in values.items()):
            return row
    return None


def check_table1(rows: Sequence[Table1Row], tolerance: float = 0.5) -> List[str]:
    """Compare reproduced rows against the published trends; returns the failures.

    Checked when the rows are present: iterations at λ = 60, 100, 140 within ``tolerance``
    of the published counts and strictly increasing in λ; η_y = 0.12 with η_z = 0.10 spends
    the budget; balanced η_y = η_z = 0.12 converges.
    """
    failures = []
    lam_rows = [_find(rows, lam=lam, eta_x=0.1, eta_y=0.1, eta_z=0.1) for lam in (60, 100, 140)]
    found = [r for r in lam_rows if r is not None]
    for e, s in found:
        assert e.published is not None
        it = s.iterations_to_threshold
        if s.exceeded or it is None:
            failures.append(f"lam={e.lam:g}: budget exceeded, published {e.published}")
        elif abs(it - e.published) > tolerance * e.published:
            failures.append(f"lam={e.lam:g}: {it} iterations, published {e.published}")
    counts = [s.iterations_to_threshold for _, s in found]
    if len(counts) > 1 and None not in counts:
        if any(a >= b for a, b in zip(counts, counts[1:])):  # type: ignore[operator]
            failures.append(f"iterations not strictly increasing in lam: {counts}")

    row = _find(rows, lam=60, eta_x=0.1, eta_y=0.12, eta_z=0.1)
    if row is not None and not row.summary.exceeded:
        failures.append("eta_y=0.12, eta_z=0.1 converged but should spend the budget")
    row = _find(rows, lam=60, eta_x=0.1, eta_y=0.12, eta_z=0.12)
    if row is not None and row.summary.exceeded:
        failures.append("balanced eta_y=eta_z=0.12 did not converge")
    return failures
