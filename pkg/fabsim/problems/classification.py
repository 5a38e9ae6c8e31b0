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
"""Label-noise classification benchmarks: data hyper-cleaning and regularization tuning."""

from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple
import logging

from scipy.special import expit, logsumexp, softmax
import numpy as np

from ..exceptions import ConfigError, DomainError
from .base import BilevelProblem, Pair
from .single import SingleLevelProblem

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Dataset:
    """Feature rows with integer class labels."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise DomainError(
                f"features {self.features.shape} and labels {self.labels.shape} do not match"
            )

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self) else 0

    def take(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx])

    def with_bias(self) -> "Dataset":
        return Dataset(np.hstack([self.features, np.ones((len(self), 1))]), self.labels)


class Scores(NamedTuple):
    val_loss: float
    test_acc: float


def make_clusters(
    m: int, dim: int, classes: int, rng: np.random.Generator, separation: float = 3.0
) -> Dataset:
    """Draw ``m`` balanced samples from unit-variance Gaussian clusters.

    Cluster centers are Gaussian with norm around ``separation``.
    """
    centers = rng.standard_normal((classes, dim)) * separation / np.sqrt(dim)
    labels = rng.permutation(np.arange(m) % classes)
    return Dataset(centers[labels] + rng.standard_normal((m, dim)), labels)


def corrupt_labels(
    labels: np.ndarray, rate: float, classes: int, rng: np.random.Generator
) -> np.ndarray:
    """Replace each label with probability ``rate`` by a uniformly drawn different class.

    Example:

        >>> import numpy as np
        >>> corrupt_labels(np.arange(4), 0.0, 4, np.random.default_rng(0))
        array([0, 1, 2, 3])
    """
    flip = rng.random(labels.shape) < rate
    shift = rng.integers(1, classes, size=labels.shape)
    return np.where(flip, (labels + shift) % classes, labels)


def _losses(X: np.ndarray, labels: np.ndarray, W: np.ndarray) -> np.ndarray:
    logits = X @ W
    return logsumexp(logits, axis=1) - logits[np.arange(len(labels)), labels]


def _logit_residual(X: np.ndarray, labels: np.ndarray, W: np.ndarray) -> np.ndarray:
    R = softmax(X @ W, axis=1)
    R[np.arange(len(labels)), labels] -= 1.0
    return R


class ClassificationProblem(BilevelProblem):
    """Shared data and upper level of the classification benchmarks.

    Each agent holds a label-corrupted training split and a clean validation split. ``y``
    is the flattened ``(features, classes)`` weight matrix of a multinomial logistic
    model, and the upper level ``f_i`` is the validation cross-entropy of agent ``i``.

    Args:
        X_train: Training features, shape ``(n, m_train, p)``.
        y_train: Corrupted training labels, shape ``(n, m_train)``.
        X_val: Validation features, shape ``(n, m_val, p)``.
        y_val: Clean validation labels, shape ``(n, m_val)``.
        test: Clean held-out data for accuracy reports.
        classes: Number of classes.
        noise_std: Gradient noise level.
    """

    def __init__(
        self,
        X_train: np.ndarray,
        y_train: np.ndarray,
        X_val: np.ndarray,
        y_val: np.ndarray,
        test: Dataset,
        classes: int,
        noise_std: float = 0.0,
    ) -> None:
        self.X_train, self.y_train = X_train, y_train
        self.X_val, self.y_val = X_val, y_val
        self.test = test
        self.classes = classes
        self.noise_std = noise_std
        self.n, self.m_train, self.p = X_train.shape
        self.m_val = X_val.shape[1]
        self.dy = self.p * classes

    def _W(self, y: np.ndarray) -> np.ndarray:
        return y.reshape(self.p, self.classes)

    def values_f(self, agents: np.ndarray, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        return np.array(
            [
                _losses(self.X_val[i], self.y_val[i], self._W(y)).mean()
                for i, y in zip(agents, Y)
            ]
        )

    def grads_f(self, agents: np.ndarray, X: np.ndarray, Y: np.ndarray) -> Pair:
        gy = np.empty_like(Y)
        for r, (i, y) in enumerate(zip(agents, Y)):
            R = _logit_residual(self.X_val[i], self.y_val[i], self._W(y))
            gy[r] = (self.X_val[i].T @ R).ravel() / self.m_val
        return np.zeros_like(X), gy

    def evaluate(self, y: np.ndarray) -> Scores:
        """Mean validation loss over agents and clean test accuracy of weights ``y``."""
        W = self._W(y)
        val_loss = np.mean(
            [_losses(Xv, yv, W).mean() for Xv, yv in zip(self.X_val, self.y_val)]
        )
        predicted = np.argmax(self.test.features @ W, axis=1)
        return Scores(float(val_loss), float(np.mean(predicted == self.test.labels)))

    def single_level(self, reg: float = 1e-2) -> "LogisticRegressionProblem":
        """Plain ridge-regularized training on the corrupted splits, without cleaning."""
        return LogisticRegressionProblem(self, reg)


class HypercleaningProblem(ClassificationProblem):
    """Learn per-sample weights ``sigmoid(psi_j)`` that down-weight corrupted samples.

    ``x`` concatenates every agent's ``psi`` block, so ``dx = n * m_train`` and agent
    ``i``'s lower level only depends on block ``i``:
    ``g_i = mean_j sigmoid(psi_ij) * loss_j(w) + tau / 2 * |w|^2``.
    """

    def __init__(self, *args, tau: float = 1e-2, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        self.tau = tau
        self.dx = self.n * self.m_train

    def _block(self, i: int) -> slice:
        return slice(i * self.m_train, (i + 1) * self.m_train)

    def grads_g(self, agents: np.ndarray, X: np.ndarray, Y: np.ndarray) -> Pair:
        gx, gy = np.zeros_like(X), np.empty_like(Y)
        for r, (i, x, y) in enumerate(zip(agents, X, Y)):
            W = self._W(y)
            s = expit(x[self._block(i)])
            Xt, yt = self.X_train[i], self.y_train[i]
            gx[r, self._block(i)] = s * (1 - s) * _losses(Xt, yt, W) / self.m_train
            R = _logit_residual(Xt, yt, W) * s[:, None]
            gy[r] = (Xt.T @ R).ravel() / self.m_train + self.tau * y
        return gx, gy

    def values_g(self, agents: np.ndarray, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        out = np.empty(len(agents))
        for r, (i, x, y) in enumerate(zip(agents, X, Y)):
            s = expit(x[self._block(i)])
            loss = _losses(self.X_train[i], self.y_train[i], self._W(y))
            out[r] = (s * loss).mean() + self.tau / 2 * y @ y
        return out


class RegularizationTuningProblem(ClassificationProblem):
    """Tune a ridge coefficient ``tau = exp(x)``, with ``g_i = loss + tau * |w|^2``.

    The log parametrization keeps ``tau`` positive for every ``x``, so each lower level stays
    strongly convex.
    """

    def __init__(self, *args, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        self.dx = 1

    def grads_g(self, agents: np.ndarray, X: np.ndarray, Y: np.ndarray) -> Pair:
        gx, gy = np.empty_like(X), np.empty_like(Y)
        for r, (i, x, y) in enumerate(zip(agents, X, Y)):
            Xt, yt = self.X_train[i], self.y_train[i]
            R = _logit_residual(Xt, yt, self._W(y))
            tau = np.exp(x[0])
            gx[r] = tau * (y @ y)
            gy[r] = (Xt.T @ R).ravel() / self.m_train + 2 * tau * y
        return gx, gy

    def values_g(self, agents: np.ndarray, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        return np.array(
            [
                _losses(self.X_train[i], self.y_train[i], self._W(y)).mean()
                + np.exp(x[0]) * (y @ y)
                for i, x, y in zip(agents, X, Y)
            ]
        )


class LogisticRegressionProblem(SingleLevelProblem):
    """Single-level training ``f_i(w) = mean loss on agent i's split + reg / 2 * |w|^2``."""

    def __init__(self, source: ClassificationProblem, reg: float) -> None:
        self.source = source
        self.reg = reg
        self.n, self.dx = source.n, source.dy
        self.noise_std = source.noise_std

    def grads(self, agents: np.ndarray, X: np.ndarray) -> np.ndarray:
        src = self.source
        out = np.empty_like(X)
        for r, (i, w) in enumerate(zip(agents, X)):
            R = _logit_residual(src.X_train[i], src.y_train[i], src._W(w))
            out[r] = (src.X_train[i].T @ R).ravel() / src.m_train + self.reg * w
        return out

    def values(self, agents: np.ndarray, X: np.ndarray) -> np.ndarray:
        src = self.source
        return np.array(
            [
                _losses(src.X_train[i], src.y_train[i], src._W(w)).mean() + self.reg / 2 * w @ w
                for i, w in zip(agents, X)
            ]
        )

    def evaluate(self, w: np.ndarray) -> Scores:
        return self.source.evaluate(w)


def _split_agents(
    n: int,
    samples_per_agent: int,
    dim: int,
    classes: int,
    corruption_rate: float,
    seed: int,
    data: Optional[Dataset],
    test_samples: int,
) -> Tuple[tuple, int]:
    if n < 1:
        raise ConfigError(f"need at least one agent, got n={n}")
    if classes < 2:
        raise ConfigError(f"need at least two classes, got {classes}")
    if not 0 <= corruption_rate < 1:
        raise ConfigError(f"corruption_rate must be in [0, 1), got {corruption_rate}")
    if samples_per_agent < 10:
        raise ConfigError(f"need at least 10 samples per agent, got {samples_per_agent}")
    if test_samples < 1:
        raise ConfigError(f"need at least one test sample, got {test_samples}")

    rng = np.random.default_rng(seed)
    m = n * samples_per_agent
    if data is None:
        pool = make_clusters(m + test_samples, dim, classes, rng)
    else:
        if len(data) < m + test_samples:
            raise ConfigError(f"dataset has {len(data)} samples, need {m + test_samples}")
        classes = data.classes
        pool = data.take(rng.permutation(len(data))[: m + test_samples])
    pool = pool.with_bias()

    counts = np.bincount(pool.labels[:m], minlength=classes)
    if (counts == 0).any():
        raise ConfigError(f"class counts {counts.tolist()} leave a class without samples")

    m_val = samples_per_agent // 10
    m_train = samples_per_agent - m_val
    feats = pool.features[:m].reshape(n, samples_per_agent, -1)
    labels = pool.labels[:m].reshape(n, samples_per_agent)
    y_train = corrupt_labels(labels[:, :m_train], corruption_rate, classes, rng)
    logger.debug(
        "Split %d samples over %d agents with %d flipped train labels",
        m,
        n,
        int((y_train != labels[:, :m_train]).sum()),
    )
    test = pool.take(np.arange(m, m + test_samples))
    return (feats[:, :m_train], y_train, feats[:, m_train:], labels[:, m_train:], test), classes


def build_hypercleaning_problem(
    n: int = 10,
    samples_per_agent: int = 100,
    dim: int = 10,
    classes: int = 3,
    corruption_rate: float = 0.3,
    seed: int = 0,
    tau: float = 1e-2,
    noise: float = 0.0,
    data: Optional[Dataset] = None,
    test_samples: int = 1000,
) -> HypercleaningProblem:
    """Build a data hyper-cleaning instance.

    Samples are split 9:1 into training and validation per agent; only the training labels
    are corrupted. With ``data`` set, samples are drawn from it instead of synthetic
    clusters and ``dim``/``classes`` follow the data.

    Raises:
        ConfigError: On fewer than two classes, a corruption rate outside [0, 1) or a class
            left without samples.
    """
    splits, classes = _split_agents(
        n, samples_per_agent, dim, classes, corruption_rate, seed, data, test_samples
    )
    return HypercleaningProblem(*splits, classes, noise_std=noise, tau=tau)


def build_hpo_problem(
    n: int = 10,
    samples_per_agent: int = 100,
    dim: int = 10,
    classes: int = 3,
    corruption_rate: float = 0.3,
    seed: int = 0,
    noise: float = 0.0,
    data: Optional[Dataset] = None,
    test_samples: int = 1000,
) -> RegularizationTuningProblem:
    """Build a regularization-tuning instance; arguments as in `build_hypercleaning_problem`."""
    splits, classes = _split_agents(
        n, samples_per_agent, dim, classes, corruption_rate, seed, data, test_samples
    )
    return RegularizationTuningProblem(*splits, classes, noise_std=noise)
