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
"""Invariant checks of the simulator and empirical rate studies.

Every check returns whether it passed and a one-line detail. Checks marked slow run the
long acceptance studies and are skipped unless asked for.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple
import logging
import time

import numpy as np

from .algorithms import (
    StepSizes,
    centralized_f2sa,
    fab,
    init_centralized_state,
    init_state,
    theory_regime,
)
from .config import ExperimentConfig
from .diagnostics import MetricsRow, avg_dyn_residual, mean_over
from .digraph import TopologySchedule
from .exceptions import ConfigError, FabsimError
from .experiment import Simulation, run_experiment
from .mixing import SUM_TOL, MixingPair, MixingSchedule, WeightVectors, advance_weights
from .mixing import validate_pair
from .problems import (
    BilevelProblem,
    build_nonconvex_problem,
    build_quadratic_problem,
    build_rl_problem,
    hypergradient,
)

CheckFn = Callable[[bool], Tuple[bool, str]]

logger = logging.getLogger(__name__)


class _Check(NamedTuple):
    name: str
    fn: CheckFn
    slow: bool


_CHECKS: List[_Check] = []


def check(name: str, slow: bool = False) -> Callable[[CheckFn], CheckFn]:
    """Register a check; it receives ``quick`` and returns ``(passed, detail)``."""

    def decorator(fn: CheckFn) -> CheckFn:
        _CHECKS.append(_Check(name, fn, slow))
        return fn

    return decorator


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def check_names(slow: bool = False) -> List[str]:
    return [c.name for c in _CHECKS if slow or not c.slow]


def run_selftest(
    names: Optional[Sequence[str]] = None, slow: bool = False, quick: bool = False
) -> List[CheckResult]:
    """Run the registered checks in order.

    Args:
        names: Only run these checks.
        slow: Include the slow acceptance studies.
        quick: Shorten the long loops of the fast checks.

    Raises:
        ConfigError: On an unknown check name.
    """
    known = {c.name for c in _CHECKS}
    for name in names or ():
        if name not in known:
            raise ConfigError(f"unknown check {name!r}, expected one of {sorted(known)}")
    results = []
    for c in _CHECKS:
        if names and c.name not in names:
            continue
        if not names and c.slow and not slow:
            continue
        start = time.perf_counter()
        try:
            passed, detail = c.fn(quick)
        except FabsimError as e:
            passed, detail = False, f"{type(e).__name__}: {e}"
        result = CheckResult(c.name, passed, detail, time.perf_counter() - start)
        logger.info("%s %s: %s", "PASS" if passed else "FAIL", c.name, detail)
        results.append(result)
    return results


@check("mixing")
def mixing_validity(quick: bool) -> Tuple[bool, str]:
    steps = 1000 if quick else 10000
    schedule = MixingSchedule(TopologySchedule(10, seed=7))
    worst, violations = 0.0, 0
    for k in range(steps):
        g, p = schedule.at(k)
        report = validate_pair(p, g)
        worst = max(worst, report.row_sum_deviation, report.col_sum_deviation)
        violations += len(report.violations)
    passed = worst <= SUM_TOL and violations == 0 and schedule.a_min > 0 and schedule.b_min > 0
    return passed, (
        f"{steps} steps, max sum deviation {worst:.1e}, {violations} violations, "
        f"a_min {schedule.a_min:.3g}, b_min {schedule.b_min:.3g}"
    )


@check("weight_bounds")
def weight_bounds(quick: bool) -> Tuple[bool, str]:
    steps = 200 if quick else 1000
    details = []
    for n in (3, 10):
        schedule = MixingSchedule(TopologySchedule(n, seed=n))
        pairs = [schedule.pair_at(k) for k in range(steps)]
        a, b = schedule.a_min, schedule.b_min
        w = WeightVectors.uniform(n)
        for k, p in enumerate(pairs):
            w = advance_weights(w, p)
            if w.alpha.min() < a ** n / n or w.beta.min() < b ** n / n:
                return False, f"n={n}: weight below the floor at step {k}"
        details.append(f"n={n}: alpha >= {a ** n / n:.2e}, beta >= {b ** n / n:.2e}")
    return True, "; ".join(details)


def _quadratic_simulation() -> Simulation:
    P = build_quadratic_problem(10, 5, 5, seed=0)
    schedule = MixingSchedule(TopologySchedule(10, seed=1))
    steps = StepSizes.uniform(0.05, penalty_scaled=True)
    return Simulation("fab", P, schedule, steps, lam=10.0)


@check("tracking_conservation")
def tracking_conservation(quick: bool) -> Tuple[bool, str]:
    steps = 1000 if quick else 10000
    sim = _quadratic_simulation()
    worst = 0.0
    for _ in range(steps):
        sim.step()
        st = sim.state
        for name in st.tracks:
            T, D = getattr(st, f"t_{name}"), getattr(st, f"d_{name}")
            worst = max(worst, float(np.abs(T.sum(axis=0) - D.sum(axis=0)).max()))
    return worst <= 1e-8, f"{steps} steps, max |sum t - sum d| {worst:.1e}"


@check("avg_dynamics")
def avg_dynamics(quick: bool) -> Tuple[bool, str]:
    steps = 500 if quick else 2000
    sims = {
        "fab": _quadratic_simulation(),
        "pushpull": Simulation(
            "pushpull",
            build_nonconvex_problem(10, 5, seed=0),
            MixingSchedule(TopologySchedule(10, seed=3)),
            StepSizes.uniform(0.05),
        ),
    }
    worst: Dict[str, float] = {}
    for name, sim in sims.items():
        worst[name] = 0.0
        for _ in range(steps):
            sim.step()
            assert sim.transition is not None
            residual = avg_dyn_residual(sim.transition, sim.state, sim.weights.alpha)
            scale = max(1.0, float(np.abs(sim.state.x).max()))
            worst[name] = max(worst[name], residual / scale)
    passed = all(v <= 1e-9 for v in worst.values())
    return passed, ", ".join(f"{k} max residual {v:.1e}" for k, v in worst.items())


def _fd_error(P: BilevelProblem, x: np.ndarray, h: float = 1e-5) -> float:
    def value(u: np.ndarray) -> float:
        return P.upper_value(u, P.lower_solution(u))

    eye = np.eye(P.dx)
    fd = np.array([(value(x + h * e) - value(x - h * e)) / (2 * h) for e in eye])
    err = np.linalg.norm(hypergradient(P, x) - fd)
    return float(err / max(np.linalg.norm(fd), 1e-12))


@check("hypergradient")
def hypergradient_oracle(quick: bool) -> Tuple[bool, str]:
    points = 5 if quick else 20
    rng = np.random.default_rng(0)
    problems = {
        "quadratic": build_quadratic_problem(10, 5, 5, seed=0),
        "rl": build_rl_problem(seed=0),
    }
    parts, passed = [], True
    for name, P in problems.items():
        worst = max(_fd_error(P, rng.standard_normal(P.dx)) for _ in range(points))
        at_opt = float(np.linalg.norm(hypergradient(P, P.optimal_x())))
        passed = passed and worst <= 1e-4 and at_opt <= 1e-7
        parts.append(f"{name}: FD rel err {worst:.1e}, |grad at x*| {at_opt:.1e}")
    return passed, "; ".join(parts)


@check("centralized_reduction")
def centralized_reduction(quick: bool) -> Tuple[bool, str]:
    steps = 200 if quick else 1000
    P = build_quadratic_problem(1, 3, 3, seed=0)
    lam, sizes = 10.0, StepSizes.uniform(0.05, penalty_scaled=True)
    one = MixingPair.from_matrices(np.eye(1), np.eye(1))
    st, ref = init_state(P, lam), init_centralized_state(P, lam)
    for k in range(steps):
        st = fab(st, P, one, sizes, lam)
        ref = centralized_f2sa(ref, P, sizes, lam)
        for name in ("x", "y", "z"):
            if not np.array_equal(getattr(st, name), getattr(ref, name)):
                return False, f"{name} differs at iteration {k + 1}"
    return True, f"{steps} iterations bitwise equal"


@dataclass
class RateStudy:
    """Minimum of metrics over runs of growing budgets."""

    budgets: List[int]
    minima: Dict[str, List[Optional[float]]] = field(default_factory=dict)

    def ratios(self, metric: str) -> List[Optional[float]]:
        """Decrease factors between consecutive budgets."""
        values = self.minima[metric]
        return [
            a / b if a is not None and b else None for a, b in zip(values, values[1:])
        ]


def rate_study(
    make_config: Callable[[int], ExperimentConfig],
    metrics: Sequence[str],
    budgets: Sequence[int] = (2000, 4000, 8000),
    repeats: int = 1,
) -> RateStudy:
    """Run ``make_config(K)`` for every budget ``K`` and keep each metric's minimum.

    With several ``repeats`` the runs differ only in their seed, and the minimum is taken
    over the per-iteration means of the repeats.
    """
    if repeats < 1:
        raise ConfigError(f"repeats must be positive, got {repeats}")
    study = RateStudy(list(budgets), {m: [] for m in metrics})
    for K in budgets:
        base = make_config(K)
        runs = [
            run_experiment(base.model_copy(update={"seed": base.seed + r})).rows
            for r in range(repeats)
        ]
        for m in metrics:
            study.minima[m].append(min(_mean_curve(runs, m).values(), default=None))
        logger.debug("Budget %d: %s", K, {m: study.minima[m][-1] for m in metrics})
    return study


def _mean_curve(runs: Sequence[Sequence[MetricsRow]], metric: str) -> Dict[int, float]:
    # iterations every repeat recorded, past the initial row
    values: Dict[int, List[float]] = {}
    for rows in runs:
        for row in rows:
            v = getattr(row, metric)
            if row.k >= 1 and v is not None:
                values.setdefault(row.k, []).append(v)
    return {k: float(np.mean(v)) for k, v in values.items() if len(v) == len(runs)}


def _experiment(**data) -> ExperimentConfig:
    return ExperimentConfig.model_validate(data)


def _within(ratios: Sequence[Optional[float]], lo: float, hi: float = float("inf")) -> bool:
    return all(r is not None and lo <= r <= hi for r in ratios)


def _fmt(ratios: Sequence[Optional[float]]) -> str:
    return "[" + ", ".join("-" if r is None else f"{r:.2f}" for r in ratios) + "]"


def nonconvex_rate_config(K: int) -> ExperimentConfig:
    """Push-pull on the nonconvex benchmark from scattered points, steps as ``K^(-2/3)``."""
    eta = 0.05 * (K / 2000) ** (-2 / 3)
    return _experiment(
        name=f"nonconvex-rate-{K}",
        iterations=K,
        algorithm="pushpull",
        cadence=5,
        init_spread=1.0,
        problem={"kind": "nonconvex", "n": 10, "noise": 1.0, "seed": 0},
        steps={"eta_x": eta, "eta_y": eta, "eta_z": eta},
        stop={"rel_err_threshold": None, "max_budget": K},
    )


@check("nonconvex_rate", slow=True)
def nonconvex_rate(quick: bool) -> Tuple[bool, str]:
    """Minima over the mean of eight seeds, an estimate of the expected squared gradient."""
    study = rate_study(nonconvex_rate_config, ("grad_norm_sq_single", "consensus_x"), repeats=8)
    grad, cons = study.ratios("grad_norm_sq_single"), study.ratios("consensus_x")
    passed = _within(grad, 1.5, 3.0) and _within(cons, 1.5, 3.0)
    return passed, f"gradient ratios {_fmt(grad)}, consensus ratios {_fmt(cons)}"


def consensus_rate_config(K: int) -> ExperimentConfig:
    """FAB on the quadratic benchmark with the theory step and penalty scaling.

    Steps are divided by the penalty, so the lower-level steps stay below ``1 / L_g``
    while ``lam`` grows.
    """
    eta, lam = theory_regime(K, 0.5, 1.0)
    return _experiment(
        name=f"consensus-rate-{K}",
        iterations=K,
        algorithm="fab",
        lam=lam,
        cadence=5,
        problem={"kind": "quadratic", "n": 10, "noise": 0.1},
        steps={"eta_x": eta, "eta_y": eta, "eta_z": eta, "penalty_scaled": True},
        stop={"rel_err_threshold": None, "max_budget": K},
    )


@check("consensus_rate", slow=True)
def consensus_rate(quick: bool) -> Tuple[bool, str]:
    metrics = ("consensus_x", "consensus_y", "consensus_z")
    study = rate_study(consensus_rate_config, metrics)
    ratios = {m: study.ratios(m) for m in metrics}
    passed = all(_within(r, 1.3) for r in ratios.values())
    return passed, ", ".join(f"{m} {_fmt(r)}" for m, r in ratios.items())


ABLATION_SETTINGS: Dict[str, Tuple[float, float]] = {
    "fab": (0.15, 60.0),
    "pushsum_fab": (0.001, 30.0),
    "static_fab": (0.15, 60.0),
    "pushpull_soba": (0.002, 1.0),
}


def ablation_config(algorithm: str, budget: int = 3000, seed: int = 0) -> ExperimentConfig:
    """Noisy policy evaluation on a graph redrawn every step, at each variant's own steps.

    Raises:
        ConfigError: On an algorithm without ablation settings.
    """
    if algorithm not in ABLATION_SETTINGS:
        raise ConfigError(f"no ablation settings for {algorithm!r}")
    eta, lam = ABLATION_SETTINGS[algorithm]
    return _experiment(
        name=f"ablation-{algorithm}",
        seed=seed,
        iterations=budget,
        algorithm=algorithm,
        lam=lam,
        problem={"kind": "rl", "n": 10, "noise": 1.0, "params": {"fit": "sum"}},
        topology={"period": 1, "phases": [{"kind": "augmented_er", "length": 1, "nu": 0.3}]},
        steps={
            "eta_x": eta,
            "eta_y": eta,
            "eta_z": eta,
            "penalty_scaled": algorithm != "pushpull_soba",
        },
        stop={"rel_err_threshold": None, "max_budget": budget, "divergence_factor": None},
    )


def ablation_errors(budget: int = 3000, seed: int = 0) -> Dict[str, Optional[float]]:
    """Mean ``rel_err`` of every variant over the second half of its run."""
    out: Dict[str, Optional[float]] = {}
    for a in ABLATION_SETTINGS:
        rows = run_experiment(ablation_config(a, budget, seed)).rows
        out[a] = mean_over(rows, "rel_err", since=budget // 2)
    return out


@check("ablations", slow=True)
def ablation_orderings(quick: bool) -> Tuple[bool, str]:
    """FAB against its variants on the noisy policy-evaluation task."""
    err = ablation_errors(600 if quick else 3000)
    if any(e is None for e in err.values()):
        return False, "a run did not report its errors"
    # second-order steps only separate from FAB over the long horizon
    others = [a for a in ABLATION_SETTINGS if a != "fab"]
    if quick:
        others.remove("pushpull_soba")
    passed = all(err["fab"] <= err[a] for a in others)  # type: ignore[operator]
    return passed, ", ".join(f"{a} rel_err {e:.2e}" for a, e in err.items())
