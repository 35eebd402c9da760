"""
Scheme comparison reports: per-model, per-scheme federated metrics, mean F1 per scheme
and best-scheme flags, rendered as CSV or markdown. Also the tables of phase 1 optima.
"""

import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import pandas as pd

from fedhpo import util
from fedhpo.heuristic import ScoredOptimum, combine
from fedhpo.models import MetricsReport

REPORT_COLUMNS = ["model", "scheme", "accuracy", "precision", "recall", "f1", "is_best"]
METRIC_COLUMNS = ["accuracy", "precision", "recall", "f1"]
METRIC_HEADERS = ["Acc", "Prec", "Rec", "F1"]
SCHEMES_PER_MODEL = 3


@dataclass(frozen=True, eq=False)
class SchemeReport:
    """
    Final federated metrics keyed by `(model, scheme)`. Every model carries exactly
    three schemes. Models and schemes keep their first-seen order.
    """

    rows: Dict[Tuple[str, str], MetricsReport]

    def __post_init__(self):
        rows = dict(self.rows)
        per_model: Dict[str, List[str]] = {}
        for model, scheme in rows:
            per_model.setdefault(model, []).append(scheme)
        for model, schemes in per_model.items():
            if len(schemes) != SCHEMES_PER_MODEL:
                raise ValueError(
                    f"model {model!r} has {len(schemes)} schemes, "
                    f"expected {SCHEMES_PER_MODEL}"
                )
        object.__setattr__(self, "rows", rows)

    @property
    def models(self) -> List[str]:
        return list(dict.fromkeys(model for model, _ in self.rows))

    @property
    def schemes(self) -> List[str]:
        return list(dict.fromkeys(scheme for _, scheme in self.rows))

    def metrics(self, model: str, scheme: str) -> MetricsReport:
        return self.rows[(model, scheme)]

    @property
    def mean_f1(self) -> Dict[str, float]:
        """
        Arithmetic mean over models of each scheme's F1.
        """

        means = {}
        for scheme in self.schemes:
            values = [m.f1 for (_, s), m in self.rows.items() if s == scheme]
            means[scheme] = math.fsum(values) / len(values)
        return means

    def best_schemes(self, model: str) -> List[str]:
        """
        Schemes reaching the highest F1 for `model`; all of them on a tie.
        """

        scores = {s: m.f1 for (mod, s), m in self.rows.items() if mod == model}
        top = max(scores.values())
        return [s for s, f1 in scores.items() if f1 == top]

    def is_best(self, model: str, scheme: str) -> bool:
        return scheme in self.best_schemes(model)

    def to_frame(self) -> pd.DataFrame:
        records = []
        for model in self.models:
            best = self.best_schemes(model)
            for (mod, scheme), metrics in self.rows.items():
                if mod != model:
                    continue
                record = {"model": model, "scheme": scheme}
                record.update(metrics.as_dict())
                record["is_best"] = scheme in best
                records.append(record)
        return pd.DataFrame(records, columns=REPORT_COLUMNS)


def emit_report(report: SchemeReport, fmt: str = "csv") -> str:
    """
    Render `report` as text.

    Args:
        report: Report to render.
        fmt: `"csv"` for one row per (model, scheme) with columns `REPORT_COLUMNS`, or
            `"markdown"` for one row per model with the best scheme's cells in bold,
            followed by the mean F1 per scheme.

    Returns:
        Rendered document. Numbers carry 3 decimals, rounded half to even.
    """

    if fmt == "csv":
        return _emit_csv(report)
    if fmt in ("markdown", "md"):
        return _emit_markdown(report)
    raise ValueError(f"unknown report format {fmt!r}")


def parse_report_csv(source: Union[str, Path]) -> SchemeReport:
    """
    Rebuild a report from CSV text or a CSV file written by `emit_report`. The
    `is_best` column is derived data and is recomputed rather than read.
    """

    if isinstance(source, Path) or "\n" not in str(source):
        frame = util.load_csv(source)
    else:
        frame = pd.read_csv(io.StringIO(str(source)), float_precision="round_trip")

    rows = {}
    for record in frame.to_dict("records"):
        rows[(str(record["model"]), str(record["scheme"]))] = MetricsReport(
            **{column: float(record[column]) for column in METRIC_COLUMNS}
        )
    return SchemeReport(rows)


def optima_frame(optima: Dict[Tuple[str, str], ScoredOptimum]) -> pd.DataFrame:
    """
    Best configuration and validation scores per (task, model).
    """

    records = [
        {
            "task": task,
            "model": model,
            "lr": optimum.config.learning_rate,
            "optimizer": optimum.config.optimizer.value,
            "batch": optimum.config.batch_size,
            "val_loss": optimum.val_loss,
            "val_f1": optimum.val_f1,
        }
        for (task, model), optimum in optima.items()
    ]
    return pd.DataFrame(
        records,
        columns=["task", "model", "lr", "optimizer", "batch", "val_loss", "val_f1"],
    )


def learning_rate_frame(
    optima: Dict[Tuple[str, str], ScoredOptimum],
    task_names: Tuple[str, str],
    models: Sequence[str],
) -> pd.DataFrame:
    """
    Per model: the two task-specific learning rates and the combined one.
    """

    task_a, task_b = task_names
    records = []
    for model in models:
        opt_a, opt_b = optima[(task_a, model)], optima[(task_b, model)]
        records.append(
            {
                "model": model,
                "lr_a": opt_a.config.learning_rate,
                "lr_b": opt_b.config.learning_rate,
                "lr_combined": combine(opt_a, opt_b).learning_rate,
            }
        )
    return pd.DataFrame(records, columns=["model", "lr_a", "lr_b", "lr_combined"])


def _emit_csv(report: SchemeReport) -> str:
    frame = report.to_frame()
    for column in METRIC_COLUMNS:
        frame[column] = frame[column].map(util.format_float)
    return frame.to_csv(index=False, lineterminator="\n")


def _emit_markdown(report: SchemeReport) -> str:
    schemes = report.schemes
    header = ["Model"] + [f"{s} {h}" for s in schemes for h in METRIC_HEADERS]
    lines = [_md_row(header), _md_row(["---"] * len(header))]

    for model in report.models:
        best = report.best_schemes(model)
        cells = [model]
        for scheme in schemes:
            metrics = report.metrics(model, scheme).as_dict()
            for column in METRIC_COLUMNS:
                text = util.format_float(metrics[column])
                cells.append(f"**{text}**" if scheme in best else text)
        lines.append(_md_row(cells))

    lines += ["", _md_row(["Scheme", "Mean F1"]), _md_row(["---", "---"])]
    for scheme, value in report.mean_f1.items():
        lines.append(_md_row([scheme, util.format_float(value)]))

    return "\n".join(lines) + "\n"


def _md_row(cells: Sequence[str]) -> str:
    return "| " + " | ".join(cells) + " |"
