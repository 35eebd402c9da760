"""
Combine dataset-specific optima into one configuration: mean learning rate, modal
optimizer and batch size, ties broken by validation F1.
"""

from collections import Counter
from dataclasses import dataclass
from typing import Any, Callable, Dict, Sequence

from fedhpo.search_space import Configuration

SCHEME_A = "a-optimized"
SCHEME_B = "b-optimized"
SCHEME_COMBINED = "combined"
SCHEMES = (SCHEME_A, SCHEME_B, SCHEME_COMBINED)


@dataclass(frozen=True)
class ScoredOptimum:
    config: Configuration
    val_loss: float
    val_f1: float
    dataset_name: str

    def __post_init__(self):
        if not 0.0 <= self.val_f1 <= 1.0:
            raise ValueError(f"val_f1 must be in [0, 1], got {self.val_f1}")


def combine(a: ScoredOptimum, b: ScoredOptimum, *more: ScoredOptimum) -> Configuration:
    """
    Build the combined configuration from two (or more) optima.

    The learning rate is the arithmetic mean in linear space. Optimizer and batch size
    are the modal values; on a tie the value belonging to the optimum with the highest
    validation F1 wins, and on equal F1 the value that appears first in the argument
    list wins. With two differing inputs every categorical is a tie, so the F1 rule
    decides.

    Example::

        >>> a = ScoredOptimum(Configuration(1e-4, "adam", 16), 0.2, 0.90, "a")
        >>> b = ScoredOptimum(Configuration(3e-4, "sgd", 64), 0.3, 0.95, "b")
        >>> combined = combine(a, b)
        >>> combined.optimizer.value, combined.batch_size
        ('sgd', 64)

    Returns:
        Combined configuration.
    """

    optima = (a, b) + more
    learning_rate = sum(o.config.learning_rate for o in optima) / len(optima)

    return Configuration(
        learning_rate=learning_rate,
        optimizer=_mode(optima, lambda o: o.config.optimizer),
        batch_size=_mode(optima, lambda o: o.config.batch_size),
    )


def build_schemes(
    opt_a: ScoredOptimum, opt_b: ScoredOptimum
) -> Dict[str, Configuration]:
    """
    The three hyperparameter schemes compared in the federated phase.
    """

    return {
        SCHEME_A: opt_a.config,
        SCHEME_B: opt_b.config,
        SCHEME_COMBINED: combine(opt_a, opt_b),
    }


def _mode(optima: Sequence[ScoredOptimum], key: Callable[[ScoredOptimum], Any]) -> Any:
    counts = Counter(key(o) for o in optima)
    top = max(counts.values())

    tied = [i for i, o in enumerate(optima) if counts[key(o)] == top]
    winner = max(tied, key=lambda i: (optima[i].val_f1, -i))
    return key(optima[winner])
