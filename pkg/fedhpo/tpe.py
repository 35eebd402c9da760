"""
Tree-structured Parzen Estimator: sequential model-based minimisation of a validation
loss over a `SearchSpace`.

Observed trials are split into a "good" and a "bad" group by objective. Each group is
modelled per dimension by a Parzen density (truncated Gaussian kernels in log10 learning
rate space, smoothed frequencies for categoricals), and candidates drawn from the good
density are ranked by the ratio l(x) / g(x).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm, truncnorm

from fedhpo.search_space import Configuration, SearchSpace, sample_prior

logger = logging.getLogger(__name__)

Objective = Callable[[Configuration], Tuple[float, float]]
TrialCallback = Callable[[int, "Trial"], None]


class InsufficientObservationsError(ValueError):
    pass


@dataclass(frozen=True)
class TpeSettings:
    gamma: float = 0.25
    n_startup: int = 10
    n_candidates: int = 24
    prior_weight: float = 1.0
    min_bandwidth_fraction: float = 0.01

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must be in (0, 1), got {self.gamma}")
        if self.n_startup < 0:
            raise ValueError(f"n_startup must be >= 0, got {self.n_startup}")
        if self.n_candidates < 1:
            raise ValueError(f"n_candidates must be >= 1, got {self.n_candidates}")
        if self.prior_weight <= 0:
            raise ValueError(f"prior_weight must be positive, got {self.prior_weight}")
        if not 0 < self.min_bandwidth_fraction <= 1:
            raise ValueError(
                "min_bandwidth_fraction must be in (0, 1], "
                f"got {self.min_bandwidth_fraction}"
            )


@dataclass(frozen=True)
class Trial:
    """
    One evaluated configuration. `objective` is the validation loss (lower is better)
    and is `+inf` for trials whose training diverged.
    """

    config: Configuration
    objective: float
    val_f1: float

    def __post_init__(self):
        if math.isnan(self.objective) or self.objective == -math.inf:
            raise ValueError(f"objective must be finite or +inf, got {self.objective}")
        if not 0.0 <= self.val_f1 <= 1.0:
            raise ValueError(f"val_f1 must be in [0, 1], got {self.val_f1}")

    @property
    def is_finite(self) -> bool:
        return math.isfinite(self.objective)


@dataclass(frozen=True)
class HpoResult:
    best: Trial
    history: Tuple[Trial, ...] = field(default_factory=tuple)


def split_observations(
    history: Sequence[Trial], gamma: float
) -> Tuple[List[Trial], List[Trial]]:
    """
    Partition `history` into the `max(1, ceil(gamma * n))` lowest-objective trials and
    the rest. Ties on objective go to the earlier trial. Trials with an infinite
    objective never enter the good group, so it can be empty when every trial failed.

    Example::

        >>> objectives = [0.5, 0.1, 0.9, 0.3]
        >>> good, bad = split_observations(trials_with(objectives), gamma=0.25)
        >>> [t.objective for t in good], [t.objective for t in bad]
        ([0.1], [0.5, 0.9, 0.3])

    Args:
        history: Evaluated trials, in evaluation order.
        gamma: Fraction of trials considered good, in (0, 1).

    Returns:
        `(good, bad)`, each in the order the trials appear in `history`.
    """

    if len(history) == 0:
        raise InsufficientObservationsError("cannot split an empty trial history")
    if not 0 < gamma < 1:
        raise ValueError(f"gamma must be in (0, 1), got {gamma}")

    n_good = max(1, math.ceil(gamma * len(history)))
    ranked = sorted(range(len(history)), key=lambda i: (history[i].objective, i))
    good_indices = {i for i in ranked[:n_good] if history[i].is_finite}

    good = [t for i, t in enumerate(history) if i in good_indices]
    bad = [t for i, t in enumerate(history) if i not in good_indices]
    return good, bad


class ParzenEstimator:
    """
    Mixture of truncated Gaussian kernels, one per observation, plus one uniform
    component over `bounds`. All kernels and the prior are truncated to `bounds`, so the
    mixture integrates to one over them.

    Bandwidth of each kernel is the larger gap to its sorted neighbours (the bounds act
    as the outermost neighbours), clipped to `[min_bandwidth_fraction * width, width]`.
    """

    def __init__(
        self,
        values: Sequence[float],
        bounds: Tuple[float, float],
        prior_weight: float = 1.0,
        min_bandwidth_fraction: float = 0.01,
    ):
        low, high = float(bounds[0]), float(bounds[1])
        if not low < high:
            raise ValueError(f"bounds must satisfy low < high, got {bounds}")

        self.low, self.high = low, high
        self.width = high - low
        self.prior_weight = float(prior_weight)

        self.mus = np.clip(np.sort(np.asarray(values, dtype=float)), low, high)
        if len(self.mus) > 0:
            padded = np.concatenate([[low], self.mus, [high]])
            gaps = np.maximum(self.mus - padded[:-2], padded[2:] - self.mus)
            self.sigmas = np.clip(gaps, min_bandwidth_fraction * self.width, self.width)
        else:
            self.sigmas = np.zeros(0)

        self._a = (low - self.mus) / np.where(self.sigmas > 0, self.sigmas, 1.0)
        self._b = (high - self.mus) / np.where(self.sigmas > 0, self.sigmas, 1.0)
        self._mass = norm.cdf(self._b) - norm.cdf(self._a)

    @property
    def n_kernels(self) -> int:
        return len(self.mus)

    def pdf(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        total = np.full(x.shape, self.prior_weight / self.width)

        if self.n_kernels > 0:
            z = (x[:, None] - self.mus[None, :]) / self.sigmas[None, :]
            kernels = norm.pdf(z) / (self.sigmas[None, :] * self._mass[None, :])
            total = total + kernels.sum(axis=1)

        density = total / (self.n_kernels + self.prior_weight)
        inside = (x >= self.low) & (x <= self.high)
        return np.where(inside, density, 0.0)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        weights = np.append(np.ones(self.n_kernels), self.prior_weight)
        components = rng.choice(
            self.n_kernels + 1, size=size, p=weights / weights.sum()
        )

        samples = np.empty(size)
        from_prior = components == self.n_kernels
        samples[from_prior] = rng.uniform(
            self.low, self.high, size=int(from_prior.sum())
        )

        chosen = components[~from_prior]
        if len(chosen) > 0:
            samples[~from_prior] = truncnorm.rvs(
                self._a[chosen],
                self._b[chosen],
                loc=self.mus[chosen],
                scale=self.sigmas[chosen],
                size=len(chosen),
                random_state=rng,
            )

        return np.clip(samples, self.low, self.high)


def density_continuous(
    values: Sequence[float],
    query: float,
    bounds: Tuple[float, float],
    prior_weight: float = 1.0,
    min_bandwidth_fraction: float = 0.01,
) -> float:
    """
    Parzen density of `query` given observed `values`, all in the same (log10 learning
    rate) coordinates as `bounds`. With no observations this is the uniform density
    `1 / (high - low)`. Queries outside `bounds` have density zero.
    """

    estimator = ParzenEstimator(values, bounds, prior_weight, min_bandwidth_fraction)
    return float(estimator.pdf(np.array([query]))[0])


def categorical_weights(values: Sequence, candidates: Sequence) -> np.ndarray:
    """
    Smoothed frequencies `(count(c) + 1) / (len(values) + len(candidates))` for each
    candidate `c`, in candidate order.
    """

    unknown = [v for v in values if v not in candidates]
    if unknown:
        raise ValueError(
            f"values {unknown} are not among candidates {list(candidates)}"
        )

    counts = np.array(
        [sum(1 for v in values if v == c) for c in candidates], dtype=float
    )
    return (counts + 1.0) / (len(values) + len(candidates))


def density_categorical(values: Sequence, candidates: Sequence, query) -> float:
    if query not in candidates:
        raise ValueError(f"{query!r} is not among candidates {list(candidates)}")
    weights = categorical_weights(values, candidates)
    return float(weights[list(candidates).index(query)])


def suggest(
    history: Sequence[Trial],
    space: SearchSpace,
    rng: np.random.Generator,
    n_candidates: Optional[int] = None,
    settings: Optional[TpeSettings] = None,
) -> Configuration:
    """
    Propose the next configuration to evaluate.

    During the first `settings.n_startup` trials, or while no trial has a finite
    objective, the proposal is a prior sample. Afterwards `n_candidates` candidates are
    drawn dimension by dimension from the good densities and the one maximising the
    product over dimensions of l(x) / g(x) is returned (first candidate on ties).

    Args:
        history: Trials evaluated so far.
        space: Search space; every proposal lies inside it.
        rng: Random generator.
        n_candidates: Candidates drawn per proposal. Defaults to
            `settings.n_candidates`.
        settings: TPE knobs. Defaults to `TpeSettings()`.

    Returns:
        Proposed configuration.
    """

    settings = settings or TpeSettings()
    n_candidates = settings.n_candidates if n_candidates is None else n_candidates
    if n_candidates < 1:
        raise ValueError(f"n_candidates must be >= 1, got {n_candidates}")

    if len(history) < settings.n_startup:
        return sample_prior(space, rng)

    good, bad = split_observations(history, settings.gamma)
    if not good:
        return sample_prior(space, rng)

    log_ratio = np.zeros(n_candidates)

    if space.is_degenerate:
        learning_rates = np.full(n_candidates, space.lr_low)
    else:
        bounds = space.log_bounds
        below = ParzenEstimator(
            [math.log10(t.config.learning_rate) for t in good],
            bounds,
            settings.prior_weight,
            settings.min_bandwidth_fraction,
        )
        above = ParzenEstimator(
            [math.log10(t.config.learning_rate) for t in bad],
            bounds,
            settings.prior_weight,
            settings.min_bandwidth_fraction,
        )
        xs = below.sample(rng, n_candidates)
        log_ratio += np.log(below.pdf(xs)) - np.log(above.pdf(xs))
        learning_rates = np.clip(10.0**xs, space.lr_low, space.lr_high)

    optimizer_index, optimizer_ratio = _sample_categorical(
        [t.config.optimizer for t in good],
        [t.config.optimizer for t in bad],
        space.optimizer_candidates,
        rng,
        n_candidates,
    )
    batch_index, batch_ratio = _sample_categorical(
        [t.config.batch_size for t in good],
        [t.config.batch_size for t in bad],
        space.batch_candidates,
        rng,
        n_candidates,
    )
    log_ratio += optimizer_ratio + batch_ratio

    best = int(np.argmax(log_ratio))
    return Configuration(
        learning_rate=float(learning_rates[best]),
        optimizer=space.optimizer_candidates[optimizer_index[best]],
        batch_size=space.batch_candidates[batch_index[best]],
    )


def run_hpo(
    objective: Objective,
    space: SearchSpace,
    budget: int,
    rng: np.random.Generator,
    settings: Optional[TpeSettings] = None,
    on_trial: Optional[TrialCallback] = None,
) -> HpoResult:
    """
    Minimise `objective` over `space` with exactly `budget` sequential TPE trials.

    `objective` maps a configuration to `(validation loss, validation F1)`. A trial
    whose loss is not finite, or whose objective raises `FloatingPointError` (training
    diverged), is recorded with a `+inf` objective and F1 0 and the run continues.

    Args:
        objective: Function to minimise.
        space: Search space.
        budget: Number of trials, at least 1.
        rng: Random generator driving all proposals.
        settings: TPE knobs.
        on_trial: Called with `(trial index, trial)` after every evaluation.

    Returns:
        `HpoResult` with the full history and the best trial (lowest objective, earliest
        on ties).
    """

    return _optimize(
        lambda history: suggest(history, space, rng, settings=settings),
        objective,
        budget,
        on_trial,
    )


def random_search(
    objective: Objective,
    space: SearchSpace,
    budget: int,
    rng: np.random.Generator,
    on_trial: Optional[TrialCallback] = None,
) -> HpoResult:
    """
    Baseline: evaluate `budget` prior samples. Shares its first draws with `run_hpo`
    under the same seed, since TPE also samples the prior during startup.
    """

    return _optimize(
        lambda history: sample_prior(space, rng), objective, budget, on_trial
    )


def _optimize(
    propose: Callable[[Sequence[Trial]], Configuration],
    objective: Objective,
    budget: int,
    on_trial: Optional[TrialCallback],
) -> HpoResult:
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")

    history: List[Trial] = []
    for index in range(budget):
        trial = _evaluate(objective, propose(history), index)
        history.append(trial)
        if on_trial is not None:
            on_trial(index, trial)

    best_index = min(range(len(history)), key=lambda i: (history[i].objective, i))
    return HpoResult(best=history[best_index], history=tuple(history))


def _evaluate(objective: Objective, config: Configuration, index: int) -> Trial:
    try:
        loss, f1 = objective(config)
    except FloatingPointError as e:
        logger.warning("trial %d diverged with %s: %s", index, config, e)
        return Trial(config, math.inf, 0.0)

    loss, f1 = float(loss), float(f1)
    if not math.isfinite(loss):
        logger.warning("trial %d returned loss %s with %s", index, loss, config)
        loss = math.inf
    if not math.isfinite(f1):
        f1 = 0.0

    logger.debug("trial %d: %s loss=%.6g f1=%.4f", index, config, loss, f1)
    return Trial(config, loss, min(max(f1, 0.0), 1.0))


def _sample_categorical(
    good_values: Sequence,
    bad_values: Sequence,
    candidates: Sequence,
    rng: np.random.Generator,
    size: int,
) -> Tuple[np.ndarray, np.ndarray]:
    below = categorical_weights(good_values, candidates)
    above = categorical_weights(bad_values, candidates)
    index = rng.choice(len(candidates), size=size, p=below)
    return index, np.log(below[index]) - np.log(above[index])
