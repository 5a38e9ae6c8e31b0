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
"""Bilevel and single-level benchmark problems with analytic oracles."""

from .base import (
    BilevelProblem,
    NoiseStream,
    PenaltyConfig,
    SmoothnessConstants,
    hypergradient,
    local_penalty_gradients,
    penalty_gradients,
    penalty_lower_solution,
    penalty_value,
    soba_directions,
)
from .classification import (
    ClassificationProblem,
    Dataset,
    HypercleaningProblem,
    RegularizationTuningProblem,
    build_hpo_problem,
    build_hypercleaning_problem,
)
from .idx import load_idx_dataset, read_idx
from .quadratic import QuadraticBilevelProblem, build_quadratic_problem
from .rl import PolicyEvaluationProblem, build_rl_problem
from .single import (
    BilevelFromSingle,
    SingleLevelProblem,
    build_least_squares_problem,
    build_nonconvex_problem,
)

__all__ = [
    "BilevelFromSingle",
    "BilevelProblem",
    "ClassificationProblem",
    "Dataset",
    "HypercleaningProblem",
    "NoiseStream",
    "PenaltyConfig",
    "PolicyEvaluationProblem",
    "QuadraticBilevelProblem",
    "RegularizationTuningProblem",
    "SingleLevelProblem",
    "SmoothnessConstants",
    "build_hpo_problem",
    "build_hypercleaning_problem",
    "build_least_squares_problem",
    "build_nonconvex_problem",
    "build_quadratic_problem",
    "build_rl_problem",
    "hypergradient",
    "load_idx_dataset",
    "local_penalty_gradients",
    "penalty_gradients",
    "penalty_lower_solution",
    "penalty_value",
    "read_idx",
    "soba_directions",
]
