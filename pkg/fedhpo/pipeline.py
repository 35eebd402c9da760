"""
End-to-end experiment: per-task TPE search (phase 1), then FedAvg over the pooled,
label-skewed training data with each of the three hyperparameter schemes (phase 2).

Every random stream is derived from the experiment seed with `util.derive_rng`, so
phases can be re-run independently and produce the same bytes.
"""

import logging
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd

from fedhpo import util
from fedhpo.config import ExperimentConfig
from fedhpo.data.split import (
    ClientPartition,
    max_client_skew,
    partition_non_iid,
    stratified_split,
)
from fedhpo.data.synthetic import Dataset, gen_task
from fedhpo.fedavg import FederatedConfig, RoundLog, run_federated
from fedhpo.heuristic import SCHEME_COMBINED, ScoredOptimum, build_schemes
from fedhpo.models import ModelKind, evaluate, init_model, mean_loss, train_epochs
from fedhpo.report import (
    SchemeReport,
    emit_report,
    learning_rate_frame,
    optima_frame,
    parse_report_csv,
)
from fedhpo.search_space import Configuration
from fedhpo.tpe import Objective, Trial, run_hpo

logger = logging.getLogger(__name__)

HPO_TRIALS = "hpo_trials"
OPTIMA = "optima"
LEARNING_RATES = "learning_rates"
FED_ROUNDS = "fed_rounds"
FED_TASK_ROUNDS = "fed_task_rounds"
REPORT = "report"

HPO_COLUMNS = [
    "task",
    "model",
    "trial",
    "lr",
    "optimizer",
    "batch",
    "val_loss",
    "val_f1",
]
ROUND_COLUMNS = [
    "model",
    "scheme",
    "round",
    "accuracy",
    "precision",
    "recall",
    "f1",
    "mean_client_loss",
]
TASK_ROUND_COLUMNS = [
    "model",
    "scheme",
    "round",
    "task",
    "accuracy",
    "precision",
    "recall",
    "f1",
]

COMBINED_F1_TOLERANCE = 0.02


class ComparabilityError(RuntimeError):
    pass


class CsvLedger:
    """
    Append-only CSV file. Created (or truncated) with a header row on construction;
    every `append` writes one row straight to disk.
    """

    def __init__(self, path: Union[str, Path], columns: Sequence[str]):
        self.path = Path(path)
        self.columns = list(columns)
        self._lock = threading.Lock()

        self.path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(columns=self.columns).to_csv(self.path, index=False)

    def append(self, row: Dict[str, object]) -> None:
        frame = pd.DataFrame([row], columns=self.columns)
        with self._lock:
            frame.to_csv(self.path, mode="a", header=False, index=False)


@dataclass(frozen=True, eq=False)
class TaskData:
    name: str
    train: Dataset
    val: Dataset
    test: Dataset


def prepare_tasks(cfg: ExperimentConfig) -> List[TaskData]:
    """
    Generate every task of `cfg` and split it into train, validation and test sets.
    """

    tasks = []
    for name, spec in cfg.tasks:
        data = gen_task(spec, util.derive_rng(cfg.seed, "task", name), name=name)
        split_rng = util.derive_rng(cfg.seed, "split", name)
        train, val, test = stratified_split(data, cfg.split, split_rng)
        logger.info(
            "task %s: %d samples (train %d, val %d, test %d)",
            name,
            len(data),
            len(train),
            len(val),
            len(test),
        )
        tasks.append(TaskData(name, train, val, test))
    return tasks


def make_objective(
    task: TaskData, kind: ModelKind, epochs: int, seed: int
) -> Objective:
    """
    Objective for one (task, model) search: train from a fixed initialisation with a
    fixed shuffle stream, then score on the validation set.

    Returns:
        Function mapping a configuration to `(validation loss, validation F1)`.
    """

    init_rng = util.derive_rng(seed, "hpo-init", task.name, kind.label)
    initial = init_model(kind, task.train.feature_dim, init_rng)

    def objective(config: Configuration) -> Tuple[float, float]:
        rng = util.derive_rng(seed, "hpo-shuffle", task.name, kind.label)
        params = train_epochs(initial, kind, task.train, config, epochs, rng)
        return mean_loss(params, kind, task.val), evaluate(params, kind, task.val).f1

    return objective


def run_phase1(
    cfg: ExperimentConfig,
    tasks: Optional[Sequence[TaskData]] = None,
    ledger: Optional[CsvLedger] = None,
) -> Dict[Tuple[str, str], ScoredOptimum]:
    """
    Tune every model kind on every task independently with TPE.

    Args:
        cfg: Experiment configuration.
        tasks: Prepared tasks; generated from `cfg` when absent.
        ledger: Receives one row per trial as it completes.

    Returns:
        Best trial per `(task name, model label)`.
    """

    tasks = prepare_tasks(cfg) if tasks is None else tasks
    optima = {}

    for task in tasks:
        for kind in cfg.models:

            def record(index: int, trial: Trial, task=task, kind=kind) -> None:
                if ledger is not None:
                    ledger.append(_trial_row(task.name, kind.label, index, trial))

            result = run_hpo(
                make_objective(task, kind, cfg.hpo.epochs, cfg.seed),
                cfg.search_space,
                cfg.hpo.budget,
                util.derive_rng(cfg.seed, "hpo", task.name, kind.label),
                settings=cfg.hpo.tpe,
                on_trial=record,
            )
            best = result.best
            optima[(task.name, kind.label)] = ScoredOptimum(
                best.config, best.objective, best.val_f1, task.name
            )
            logger.info(
                "%s/%s optimum: %s val_loss=%.6g val_f1=%.4f",
                task.name,
                kind.label,
                best.config.to_dict(),
                best.objective,
                best.val_f1,
            )

    return optima


def load_optima(out_dir: Union[str, Path]) -> Dict[Tuple[str, str], ScoredOptimum]:
    """
    Recover phase 1 optima from the trial ledger in `out_dir`: per (task, model), the
    lowest validation loss, earliest trial on ties.
    """

    frame = util.load_csv(Path(out_dir) / f"{HPO_TRIALS}.csv")
    if frame.empty:
        raise ValueError(f"no trials recorded in {out_dir}")

    optima = {}
    for (task, model), group in frame.groupby(["task", "model"], sort=False):
        best = group.sort_values(["val_loss", "trial"], kind="mergesort").iloc[0]
        optima[(str(task), str(model))] = ScoredOptimum(
            Configuration(
                float(best["lr"]), str(best["optimizer"]), int(best["batch"])
            ),
            float(best["val_loss"]),
            float(best["val_f1"]),
            str(task),
        )
    return optima


def run_phase2(
    cfg: ExperimentConfig,
    optima: Dict[Tuple[str, str], ScoredOptimum],
    tasks: Optional[Sequence[TaskData]] = None,
    round_ledger: Optional[CsvLedger] = None,
    task_round_ledger: Optional[CsvLedger] = None,
) -> SchemeReport:
    """
    Federated comparison of the three schemes for every model kind.

    The pooled training set is partitioned once. For a given model every scheme starts
    from the same initial parameters and uses the same client streams, so the schemes
    differ only in their hyperparameters.

    Returns:
        Final-round metrics on the pooled test set per (model, scheme).
    """

    tasks = prepare_tasks(cfg) if tasks is None else tasks
    task_a, task_b = cfg.task_names
    for kind in cfg.models:
        for task in (task_a, task_b):
            if (task, kind.label) not in optima:
                raise ValueError(
                    f"no phase 1 optimum for task {task!r}, model {kind.label!r}"
                )

    train = Dataset.concat([t.train for t in tasks], name="pooled-train")
    test = Dataset.concat([t.test for t in tasks], name="pooled-test")
    task_tests = {t.name: t.test for t in tasks}

    fed = cfg.federated
    partition = partition_non_iid(
        train,
        fed.clients,
        fed.alpha,
        fed.min_per_client,
        util.derive_rng(cfg.seed, "partition"),
    )
    logger.info(
        "partitioned %d samples over %d clients: sizes %s, max label skew %.3f",
        len(train),
        partition.n_clients,
        partition.sizes,
        max_client_skew(partition, train),
    )

    references: Dict[str, RoundLog] = {}
    rows = {}
    for kind in cfg.models:
        schemes = build_schemes(
            optima[(task_a, kind.label)], optima[(task_b, kind.label)]
        )
        initial = init_model(
            kind, train.feature_dim, util.derive_rng(cfg.seed, "fed-init", kind.label)
        )
        for scheme, config in schemes.items():
            logger.info("federated %s/%s with %s", kind.label, scheme, config.to_dict())
            fc = FederatedConfig(
                config, kind, fed.rounds, fed.local_epochs, fed.participation
            )

            def record(log: RoundLog, kind=kind, scheme=scheme) -> None:
                if round_ledger is not None:
                    round_ledger.append(_round_row(kind.label, scheme, log))
                if task_round_ledger is not None:
                    for task_name, metrics in log.task_metrics.items():
                        row = {
                            "model": kind.label,
                            "scheme": scheme,
                            "round": log.round,
                            "task": task_name,
                        }
                        row.update(metrics.as_dict())
                        task_round_ledger.append(row)

            _, logs = run_federated(
                partition,
                train,
                test,
                fc,
                util.derive_rng(cfg.seed, "federated", kind.label),
                initial_params=initial,
                task_tests=task_tests,
                on_round=record,
                n_jobs=cfg.n_jobs,
            )
            _check_comparability(kind.label, scheme, logs[0], references, partition)
            rows[(kind.label, scheme)] = logs[-1].metrics

    report = SchemeReport(rows)
    check_combined(report)
    return report


def check_combined(
    report: SchemeReport, tolerance: float = COMBINED_F1_TOLERANCE
) -> bool:
    """
    Whether the combined scheme's mean F1 is within `tolerance` of the best
    single-task scheme's. Logged, never raised.
    """

    means = report.mean_f1
    if SCHEME_COMBINED not in means:
        return True
    singles = [v for scheme, v in means.items() if scheme != SCHEME_COMBINED]
    best_single = max(singles) if singles else means[SCHEME_COMBINED]
    gap = best_single - means[SCHEME_COMBINED]

    ok = gap <= tolerance
    log = logger.info if ok else logger.warning
    log(
        "combined mean F1 %.4f vs best single-task mean F1 %.4f "
        "(gap %.4f, tolerance %.2f)",
        means[SCHEME_COMBINED],
        best_single,
        gap,
        tolerance,
    )
    return ok


def execute_phase1(cfg: ExperimentConfig) -> Dict[Tuple[str, str], ScoredOptimum]:
    """
    Phase 1 with its outputs written to `cfg.output_dir`: the trial ledger, the optima
    table and the learning rate table.
    """

    out_dir = Path(cfg.output_dir)
    ledger = CsvLedger(out_dir / f"{HPO_TRIALS}.csv", HPO_COLUMNS)
    optima = run_phase1(cfg, ledger=ledger)
    _write_optima(cfg, optima)
    return optima


def execute_phase2(
    cfg: ExperimentConfig,
    optima: Optional[Dict[Tuple[str, str], ScoredOptimum]] = None,
) -> SchemeReport:
    """
    Phase 2 with its outputs written to `cfg.output_dir`. Optima are reloaded from the
    phase 1 ledger when not given.
    """

    out_dir = Path(cfg.output_dir)
    optima = load_optima(out_dir) if optima is None else optima
    report = run_phase2(
        cfg,
        optima,
        round_ledger=CsvLedger(out_dir / f"{FED_ROUNDS}.csv", ROUND_COLUMNS),
        task_round_ledger=CsvLedger(
            out_dir / f"{FED_TASK_ROUNDS}.csv", TASK_ROUND_COLUMNS
        ),
    )
    util.write_text(emit_report(report, "csv"), out_dir, f"{REPORT}.csv")
    util.write_text(emit_report(report, "markdown"), out_dir, f"{REPORT}.md")
    return report


def execute_full(cfg: ExperimentConfig) -> SchemeReport:
    optima = execute_phase1(cfg)
    return execute_phase2(cfg, optima)


def execute_report(out_dir: Union[str, Path], fmt: str = "markdown") -> str:
    """
    Re-render the report saved in `out_dir` without re-running anything.
    """

    report = parse_report_csv(Path(out_dir) / f"{REPORT}.csv")
    return emit_report(report, fmt)


def _write_optima(
    cfg: ExperimentConfig, optima: Dict[Tuple[str, str], ScoredOptimum]
) -> None:
    out_dir = Path(cfg.output_dir)
    util.write_csv(optima_frame(optima), out_dir, OPTIMA, index=False)
    rates = learning_rate_frame(optima, cfg.task_names, [m.label for m in cfg.models])
    util.write_csv(rates, out_dir, LEARNING_RATES, index=False)


def _trial_row(task: str, model: str, index: int, trial: Trial) -> Dict[str, object]:
    return {
        "task": task,
        "model": model,
        "trial": index,
        "lr": trial.config.learning_rate,
        "optimizer": trial.config.optimizer.value,
        "batch": trial.config.batch_size,
        "val_loss": trial.objective,
        "val_f1": trial.val_f1,
    }


def _round_row(model: str, scheme: str, log: RoundLog) -> Dict[str, object]:
    row: Dict[str, object] = {"model": model, "scheme": scheme, "round": log.round}
    row.update(log.metrics.as_dict())
    row["mean_client_loss"] = log.mean_client_loss
    return row


def _check_comparability(
    model: str,
    scheme: str,
    first: RoundLog,
    references: Dict[str, RoundLog],
    partition: ClientPartition,
) -> None:
    """
    Compare the first round of `model`/`scheme` against the first scheme run for the
    same model: initial parameters, partition and client streams must all agree.
    """

    if first.partition_fingerprint != partition.fingerprint():
        raise ComparabilityError(f"{model}/{scheme} trained on a different partition")

    reference = references.setdefault(model, first)
    if first.broadcast_fingerprint != reference.broadcast_fingerprint:
        raise ComparabilityError(f"{model}/{scheme} started from different parameters")
    if first.stream_seed != reference.stream_seed:
        raise ComparabilityError(f"{model}/{scheme} used a different client stream")
