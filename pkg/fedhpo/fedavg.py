"""
Federated averaging over in-process clients.

Each round the server broadcasts the global parameters, every participating client
trains locally for a fixed number of epochs, and the server replaces the global
parameters by the sample-weighted mean of the client parameters.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from fedhpo import util
from fedhpo.data.split import ClientPartition
from fedhpo.data.synthetic import Dataset
from fedhpo.models import (
    LayoutMismatchError,
    MetricsReport,
    ModelKind,
    ParameterVector,
    evaluate,
    init_model,
    mean_loss,
    train_epochs,
)
from fedhpo.search_space import Configuration

logger = logging.getLogger(__name__)

WEIGHT_SUM_TOLERANCE = 1e-12


@dataclass(frozen=True)
class FederatedConfig:
    config: Configuration
    model_kind: ModelKind
    rounds: int = 3
    local_epochs: int = 50
    participation: float = 1.0

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError(f"rounds must be >= 1, got {self.rounds}")
        if self.local_epochs < 1:
            raise ValueError(f"local_epochs must be >= 1, got {self.local_epochs}")
        if not 0 < self.participation <= 1:
            raise ValueError(
                f"participation must be in (0, 1], got {self.participation}"
            )


@dataclass(frozen=True, eq=False)
class ClientUpdate:
    client_id: int
    params: ParameterVector
    n_k: int
    train_loss: float = float("nan")

    def __post_init__(self):
        if self.n_k < 1:
            raise ValueError(f"client {self.client_id} reported n_k = {self.n_k}")


@dataclass(frozen=True, eq=False)
class RoundLog:
    round: int
    metrics: MetricsReport
    client_losses: Tuple[float, ...]
    task_metrics: Dict[str, MetricsReport] = field(default_factory=dict)
    broadcast_fingerprint: str = ""
    partition_fingerprint: str = ""
    stream_seed: int = -1

    @property
    def mean_client_loss(self) -> float:
        return float(np.mean(self.client_losses))


RoundCallback = Callable[[RoundLog], None]


def stream_seed(rng: np.random.Generator) -> int:
    """
    Draw the base seed from which every client stream of a federated run is derived.
    """

    return int(rng.integers(0, 2**63 - 1))


def client_rng(base_seed: int, round_index: int, client_id: int) -> np.random.Generator:
    return util.derive_rng(base_seed, "client", round_index, client_id)


def local_update(
    global_params: ParameterVector,
    client_data: Dataset,
    fc: FederatedConfig,
    rng: np.random.Generator,
    client_id: int = 0,
    epochs: Optional[int] = None,
) -> ClientUpdate:
    """
    Train a copy of `global_params` on `client_data` for `fc.local_epochs` epochs (or
    `epochs`, if given) with a fresh optimizer state.

    Returns:
        Update carrying the trained parameters, `n_k = len(client_data)` and the local
        training loss after training.
    """

    if len(client_data) == 0:
        raise ValueError(f"client {client_id} has no data")

    epochs = fc.local_epochs if epochs is None else epochs
    params = train_epochs(
        global_params, fc.model_kind, client_data, fc.config, epochs, rng
    )
    loss = mean_loss(params, fc.model_kind, client_data)

    logger.debug("client %d: n=%d loss=%.6g", client_id, len(client_data), loss)
    return ClientUpdate(client_id, params, len(client_data), loss)


def aggregate(updates: Sequence[ClientUpdate]) -> ParameterVector:
    """
    Sample-weighted mean of client parameters, `sum_k (n_k / sum_j n_j) * theta_k`.

    Updates are ordered by `client_id` first, so the result does not depend on the order
    of `updates`. The mean is accumulated as `theta_0 + sum_k w_k (theta_k - theta_0)`,
    which returns a single update, or any number of identical updates, unchanged.

    Args:
        updates: Client updates with identical layouts and distinct client ids.

    Returns:
        Aggregated parameters.
    """

    if len(updates) == 0:
        raise ValueError("cannot aggregate zero updates")

    ordered = sorted(updates, key=lambda u: u.client_id)
    ids = [u.client_id for u in ordered]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate client ids in updates: {ids}")

    layout = ordered[0].params.layout
    for update in ordered[1:]:
        if update.params.layout != layout:
            raise LayoutMismatchError(
                f"client {update.client_id} layout differs from client "
                f"{ordered[0].client_id}"
            )

    total = sum(u.n_k for u in ordered)
    weights = [u.n_k / total for u in ordered]
    assert abs(sum(weights) - 1.0) < WEIGHT_SUM_TOLERANCE, weights

    base = ordered[0].params.values
    result = base.copy()
    for weight, update in zip(weights, ordered):
        result += weight * (update.params.values - base)

    return ParameterVector(result, layout)


def run_federated(
    partition: ClientPartition,
    train: Dataset,
    test: Dataset,
    fc: FederatedConfig,
    rng: np.random.Generator,
    initial_params: Optional[ParameterVector] = None,
    task_tests: Optional[Dict[str, Dataset]] = None,
    on_round: Optional[RoundCallback] = None,
    n_jobs: int = 1,
) -> Tuple[ParameterVector, List[RoundLog]]:
    """
    Run `fc.rounds` rounds of FedAvg over the clients of `partition`.

    `rng` is consumed in a fixed order: the stream seed first, then the initial
    parameters (unless `initial_params` is given). Client `k` in round `t` trains with
    `client_rng(seed, t, k)`, so results are identical for any `n_jobs`.

    Args:
        partition: Client index sets into `train`.
        train: Pooled training set.
        test: Test set the global model is scored on after every round.
        fc: Federated configuration.
        rng: Random generator.
        initial_params: Starting global parameters. Drawn with `init_model` when absent.
        task_tests: Optional named test sets scored alongside `test`.
        on_round: Called with every `RoundLog` as soon as the round completes.
        n_jobs: joblib workers for client updates within one round.

    Returns:
        Final global parameters and one log per round. Each log carries the
        fingerprints of the parameters broadcast that round and of the partition, and
        the client stream seed, so callers can confirm what a run started from.
    """

    covered = sum(partition.sizes)
    if covered != len(train):
        raise ValueError(
            f"partition covers {covered} samples, training set has {len(train)}"
        )

    base_seed = stream_seed(rng)
    params = initial_params
    if params is None:
        params = init_model(fc.model_kind, train.feature_dim, rng)

    client_data = partition.client_datasets(train)
    partition_hash = partition.fingerprint()
    logs: List[RoundLog] = []

    for t in range(1, fc.rounds + 1):
        participants = _participants(
            base_seed, t, partition.n_clients, fc.participation
        )
        broadcast = params
        updates = Parallel(n_jobs=n_jobs)(
            delayed(local_update)(
                broadcast, client_data[k], fc, client_rng(base_seed, t, k), client_id=k
            )
            for k in participants
        )
        params = aggregate(updates)

        log = RoundLog(
            round=t,
            metrics=evaluate(params, fc.model_kind, test),
            client_losses=tuple(
                u.train_loss for u in sorted(updates, key=lambda u: u.client_id)
            ),
            task_metrics={
                name: evaluate(params, fc.model_kind, data)
                for name, data in (task_tests or {}).items()
            },
            broadcast_fingerprint=broadcast.fingerprint(),
            partition_fingerprint=partition_hash,
            stream_seed=base_seed,
        )
        logger.info(
            "round %d/%d: f1=%.4f acc=%.4f mean client loss=%.4g",
            t,
            fc.rounds,
            log.metrics.f1,
            log.metrics.accuracy,
            log.mean_client_loss,
        )
        logs.append(log)
        if on_round is not None:
            on_round(log)

    return params, logs


def _participants(
    base_seed: int, round_index: int, n_clients: int, fraction: float
) -> List[int]:
    if fraction >= 1.0:
        return list(range(n_clients))
    count = max(1, int(round(fraction * n_clients)))
    rng = util.derive_rng(base_seed, "participation", round_index)
    return sorted(int(k) for k in rng.choice(n_clients, size=count, replace=False))
