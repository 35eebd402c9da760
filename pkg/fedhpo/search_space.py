"""
Hyperparameter domain: learning rate, optimizer and batch size.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Sequence, Tuple

import numpy as np


class OptimizerKind(str, Enum):
    ADAM = "adam"
    SGD = "sgd"

    @classmethod
    def parse(cls, value: Any) -> "OptimizerKind":
        if isinstance(value, OptimizerKind):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown optimizer {value!r}") from None


@dataclass(frozen=True)
class Configuration:
    """
    One point of the search space: learning rate, optimizer and batch size.
    """

    learning_rate: float
    optimizer: OptimizerKind
    batch_size: int

    def __post_init__(self):
        if not (math.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ValueError(
                f"learning_rate must be positive, got {self.learning_rate}"
            )
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ValueError(
                f"batch_size must be an integer >= 1, got {self.batch_size}"
            )
        object.__setattr__(self, "learning_rate", float(self.learning_rate))
        object.__setattr__(self, "optimizer", OptimizerKind.parse(self.optimizer))
        object.__setattr__(self, "batch_size", int(self.batch_size))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "lr": self.learning_rate,
            "optimizer": self.optimizer.value,
            "batch": self.batch_size,
        }


@dataclass(frozen=True)
class SearchSpace:
    """
    Product of a log-uniform learning rate interval and two ordered candidate sets.

    A degenerate interval (`lr_low == lr_high`) is accepted and pins the learning rate.
    """

    lr_low: float
    lr_high: float
    batch_candidates: Tuple[int, ...]
    optimizer_candidates: Tuple[OptimizerKind, ...]

    def __post_init__(self):
        object.__setattr__(
            self, "batch_candidates", tuple(int(b) for b in self.batch_candidates)
        )
        object.__setattr__(
            self,
            "optimizer_candidates",
            tuple(OptimizerKind.parse(o) for o in self.optimizer_candidates),
        )

        if not (0 < self.lr_low <= self.lr_high) or not math.isfinite(self.lr_high):
            raise ValueError(
                f"learning rate bounds must satisfy 0 < low <= high, "
                f"got ({self.lr_low}, {self.lr_high})"
            )
        _check_candidates("batch_candidates", self.batch_candidates)
        _check_candidates("optimizer_candidates", self.optimizer_candidates)
        if min(self.batch_candidates) < 1:
            raise ValueError(
                f"batch candidates must be >= 1, got {self.batch_candidates}"
            )

    @classmethod
    def default(cls) -> "SearchSpace":
        return cls(
            lr_low=1e-5,
            lr_high=1e-3,
            batch_candidates=(16, 32, 64),
            optimizer_candidates=(OptimizerKind.ADAM, OptimizerKind.SGD),
        )

    @classmethod
    def from_dict(cls, config: Dict[str, Any]) -> "SearchSpace":
        return cls(
            lr_low=float(config["lr_low"]),
            lr_high=float(config["lr_high"]),
            batch_candidates=tuple(config["batch_candidates"]),
            optimizer_candidates=tuple(config["optimizer_candidates"]),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "lr_low": self.lr_low,
            "lr_high": self.lr_high,
            "batch_candidates": list(self.batch_candidates),
            "optimizer_candidates": [o.value for o in self.optimizer_candidates],
        }

    @property
    def log_bounds(self) -> Tuple[float, float]:
        """Learning rate bounds in log10 coordinates."""
        return math.log10(self.lr_low), math.log10(self.lr_high)

    @property
    def is_degenerate(self) -> bool:
        return self.lr_low == self.lr_high


def sample_prior(space: SearchSpace, rng: np.random.Generator) -> Configuration:
    """
    Draw one configuration from the prior of `space`: the learning rate log-uniformly on
    `[lr_low, lr_high]`, batch size and optimizer uniformly from their candidates.

    Draws happen in a fixed order (learning rate, optimizer, batch size) so equal seeds
    give identical configurations.

    Args:
        space: Search space to sample from.
        rng: Random generator, consumed by three draws.

    Returns:
        Configuration for which `validate(space, config)` holds.
    """

    u = rng.random()
    optimizer_index = int(rng.integers(len(space.optimizer_candidates)))
    batch_index = int(rng.integers(len(space.batch_candidates)))

    return Configuration(
        learning_rate=log_uniform(space, u),
        optimizer=space.optimizer_candidates[optimizer_index],
        batch_size=space.batch_candidates[batch_index],
    )


def log_uniform(space: SearchSpace, u: float) -> float:
    """
    Map `u` in [0, 1) to a learning rate, `exp(u * (ln high - ln low) + ln low)`,
    clipped to the bounds against rounding.
    """

    if space.is_degenerate:
        return space.lr_low
    log_low, log_high = math.log(space.lr_low), math.log(space.lr_high)
    value = math.exp(u * (log_high - log_low) + log_low)
    return min(max(value, space.lr_low), space.lr_high)


def validate(space: SearchSpace, config: Configuration) -> bool:
    """
    Check whether `config` lies inside `space`.
    """

    return (
        space.lr_low <= config.learning_rate <= space.lr_high
        and config.batch_size in space.batch_candidates
        and config.optimizer in space.optimizer_candidates
    )


def _check_candidates(name: str, candidates: Sequence[Any]) -> None:
    if len(candidates) == 0:
        raise ValueError(f"{name} must not be empty")
    if len(set(candidates)) != len(candidates):
        raise ValueError(f"{name} must not contain duplicates, got {candidates}")
