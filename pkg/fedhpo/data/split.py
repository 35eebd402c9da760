"""
Stratified train/validation/test splitting and non-IID client partitioning.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from fedhpo import util
from fedhpo.data.synthetic import Dataset

logger = logging.getLogger(__name__)


class SplitError(ValueError):
    pass


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    val_fraction_of_train: float = 0.2
    seed: int = 0

    def __post_init__(self):
        for name in ("train_fraction", "val_fraction_of_train"):
            value = getattr(self, name)
            if not 0 < value < 1:
                raise ValueError(f"{name} must be in (0, 1), got {value}")


@dataclass(frozen=True, eq=False)
class ClientPartition:
    """
    Disjoint, sorted index sets into a training set, one per client, together with each
    client's empirical label distribution `label_histograms[k] = [p_k(0), p_k(1)]`.
    """

    assignments: Tuple[np.ndarray, ...]
    label_histograms: np.ndarray

    @classmethod
    def from_assignments(
        cls, assignments: Sequence[Sequence[int]], labels: np.ndarray
    ) -> "ClientPartition":
        labels = np.asarray(labels)
        index_sets = []
        for indices in assignments:
            indices = np.sort(np.asarray(indices, dtype=np.int64))
            indices.setflags(write=False)
            index_sets.append(indices)

        covered = (
            np.concatenate(index_sets) if index_sets else np.zeros(0, dtype=np.int64)
        )
        if len(np.unique(covered)) != len(covered):
            raise PartitionError("client index sets overlap")
        if len(covered) != len(labels) or not np.array_equal(
            np.sort(covered), np.arange(len(labels))
        ):
            raise PartitionError("client index sets do not cover the training set")
        if any(len(indices) == 0 for indices in index_sets):
            raise PartitionError("every client needs at least one sample")

        histograms = np.array(
            [np.bincount(labels[i], minlength=2)[:2] / len(i) for i in index_sets]
        ).reshape(len(index_sets), 2)
        return cls(tuple(index_sets), histograms)

    @property
    def n_clients(self) -> int:
        return len(self.assignments)

    @property
    def sizes(self) -> List[int]:
        return [len(indices) for indices in self.assignments]

    def client_datasets(self, train: Dataset) -> List[Dataset]:
        return [
            train.subset(indices, name=f"{train.name}/client-{k}")
            for k, indices in enumerate(self.assignments)
        ]

    def fingerprint(self) -> str:
        return util.array_fingerprint(*self.assignments)


def stratified_split(
    d: Dataset, spec: SplitSpec, rng: Optional[np.random.Generator] = None
) -> Tuple[Dataset, Dataset, Dataset]:
    """
    Split `d` into train, validation and test sets, class by class.

    Each class contributes `round((1 - train_fraction) * n_c)` samples to the test set
    and `round(val_fraction_of_train * remaining)` to the validation set; the rest go to
    train. Every split keeps the parent's row order.

    Args:
        d: Dataset to split.
        spec: Split fractions. `spec.seed` seeds the shuffle when `rng` is not given.
        rng: Random generator for the per-class shuffle.

    Returns:
        `(train, val, test)`.
    """

    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    parts: Tuple[List[np.ndarray], List[np.ndarray], List[np.ndarray]] = ([], [], [])

    for label in (0, 1):
        members = np.flatnonzero(d.labels == label)
        n_class = len(members)
        if n_class < 3:
            raise SplitError(
                f"class {label} has {n_class} samples, at least 3 are needed"
            )

        n_test = int(round((1 - spec.train_fraction) * n_class))
        n_val = int(round(spec.val_fraction_of_train * (n_class - n_test)))
        n_train = n_class - n_test - n_val
        if min(n_train, n_val, n_test) < 1:
            raise SplitError(
                f"class {label} with {n_class} samples cannot populate all three "
                f"splits (train {n_train}, val {n_val}, test {n_test})"
            )

        shuffled = rng.permutation(members)
        parts[2].append(shuffled[:n_test])
        parts[1].append(shuffled[n_test : n_test + n_val])
        parts[0].append(shuffled[n_test + n_val :])

    train, val, test = (np.sort(np.concatenate(p)) for p in parts)
    return d.subset(train), d.subset(val), d.subset(test)


def partition_non_iid(
    train: Dataset,
    k: int,
    alpha: float,
    min_per_client: int,
    rng: np.random.Generator,
) -> ClientPartition:
    """
    Split `train` across `k` clients with Dirichlet label skew.

    For each class the shuffled indices are cut according to proportions drawn from a
    symmetric Dirichlet(`alpha`). Small `alpha` concentrates each class on a few
    clients, large `alpha` approaches an IID split. Clients left below `min_per_client`
    receive samples moved one at a time from the currently largest client.

    Args:
        train: Training set to partition.
        k: Number of clients, >= 1.
        alpha: Dirichlet concentration, > 0.
        min_per_client: Minimum samples per client, >= 1.
        rng: Random generator.

    Returns:
        Partition covering every training index exactly once.
    """

    if k < 1:
        raise PartitionError(f"k must be >= 1, got {k}")
    if not alpha > 0:
        raise PartitionError(f"alpha must be positive, got {alpha}")
    if min_per_client < 1:
        raise PartitionError(f"min_per_client must be >= 1, got {min_per_client}")
    if k * min_per_client > len(train):
        raise PartitionError(
            f"{k} clients x {min_per_client} samples exceeds "
            f"{len(train)} training samples"
        )

    clients: List[List[int]] = [[] for _ in range(k)]
    for label in (0, 1):
        members = rng.permutation(np.flatnonzero(train.labels == label))
        proportions = _dirichlet(rng, alpha, k)
        cuts = (np.cumsum(proportions) * len(members)).astype(int)[:-1]
        for client, indices in enumerate(np.split(members, cuts)):
            clients[client].extend(int(i) for i in indices)

    moved = 0
    while min(len(c) for c in clients) < min_per_client:
        smallest = min(range(k), key=lambda c: (len(clients[c]), c))
        largest = max(range(k), key=lambda c: (len(clients[c]), -c))
        clients[smallest].append(clients[largest].pop())
        moved += 1
    if moved:
        logger.warning("moved %d samples to reach %d per client", moved, min_per_client)

    return ClientPartition.from_assignments(clients, train.labels)


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))


def max_client_skew(partition: ClientPartition, train: Dataset) -> float:
    """
    Largest total-variation distance between a client's label distribution and the
    label distribution of the whole training set.
    """

    reference = train.label_histogram()
    return max(total_variation(h, reference) for h in partition.label_histograms)


def _dirichlet(rng: np.random.Generator, alpha: float, k: int) -> np.ndarray:
    # small alpha can underflow every gamma draw to zero
    while True:
        proportions = rng.dirichlet(np.full(k, alpha))
        if np.all(np.isfinite(proportions)) and proportions.sum() > 0:
            return proportions
