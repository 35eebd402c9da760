from pathlib import Path

import pytest

from fedhpo import util
from fedhpo.heuristic import ScoredOptimum
from fedhpo.models import MetricsReport
from fedhpo.report import (
    REPORT_COLUMNS,
    SchemeReport,
    emit_report,
    learning_rate_frame,
    optima_frame,
    parse_report_csv,
)
from fedhpo.search_space import Configuration

REFERENCE = util.load_json(Path(__file__).parent / "fixtures" / "reference_tables.json")


def published_report():
    return SchemeReport(
        {
            (row["model"], row["scheme"]): MetricsReport(
                row["accuracy"], row["precision"], row["recall"], row["f1"]
            )
            for row in REFERENCE["federated"]
        }
    )


def test_published_mean_f1():
    means = published_report().mean_f1
    for scheme, published in REFERENCE["mean_f1"].items():
        # published means were rounded half up from exact ties
        assert abs(means[scheme] - published) <= 0.0005 + 1e-9


def test_mean_f1_is_the_column_mean():
    report = published_report()
    for scheme, mean in report.mean_f1.items():
        column = [report.metrics(model, scheme).f1 for model in report.models]
        assert mean == pytest.approx(sum(column) / len(column), abs=1e-15)


def test_combined_scheme_has_highest_published_mean():
    means = published_report().mean_f1
    assert max(means, key=means.get) == "combined"


def test_best_schemes_flag_every_tie():
    report = published_report()
    for model, best in REFERENCE["best_schemes"].items():
        assert report.best_schemes(model) == best
    assert report.is_best("AlexNet", "colon-optimized")
    assert report.is_best("AlexNet", "combined")
    assert not report.is_best("AlexNet", "ovary-optimized")


def test_report_requires_three_schemes_per_model():
    with pytest.raises(ValueError):
        SchemeReport({("m", "a"): MetricsReport(1.0, 1.0, 1.0, 1.0)})


def test_empty_report_emits_header_only_csv():
    text = emit_report(SchemeReport({}), "csv")
    assert text == ",".join(REPORT_COLUMNS) + "\n"


def test_csv_round_trip_to_printed_precision():
    report = published_report()
    text = emit_report(report, "csv")
    lines = text.splitlines()
    assert lines[0] == ",".join(REPORT_COLUMNS)
    assert len(lines) == 1 + 18
    assert lines[1] == "AlexNet,colon-optimized,0.905,0.906,0.905,0.896,True"

    parsed = parse_report_csv(text)
    assert parsed.models == report.models
    assert parsed.schemes == report.schemes
    for key, metrics in report.rows.items():
        assert parsed.rows[key].as_dict() == pytest.approx(metrics.as_dict(), abs=5e-4)
        assert parsed.is_best(*key) == report.is_best(*key)


def test_csv_rounds_half_to_even():
    report = SchemeReport(
        {
            ("m", s): MetricsReport(0.0625, 0.5, 0.0625, f1)
            for s, f1 in [("a", 0.1), ("b", 0.2), ("c", 0.3)]
        }
    )
    row = emit_report(report, "csv").splitlines()[1]
    assert row.startswith("m,a,0.062,0.500,0.062,0.100")


def test_parse_report_from_file(tmp_path):
    text = emit_report(published_report(), "csv")
    path = util.write_text(text, tmp_path, "report.csv")
    assert parse_report_csv(path).models == published_report().models


def test_markdown_marks_best_cells():
    text = emit_report(published_report(), "markdown")
    lines = text.splitlines()
    assert lines[0].startswith("| Model | colon-optimized Acc |")

    resnet18 = next(line for line in lines if line.startswith("| ResNet-18 "))
    cells = [c.strip() for c in resnet18.strip("|").split("|")]
    assert cells[1:5] == ["0.890", "0.897", "0.890", "0.875"]
    assert cells[9:13] == ["**0.920**", "**0.921**", "**0.920**", "**0.914**"]

    alexnet = next(line for line in lines if line.startswith("| AlexNet "))
    assert alexnet.count("**") == 2 * 8

    assert "| combined | 0.908 |" in text or "| combined | 0.909 |" in text


def test_unknown_format_is_rejected():
    with pytest.raises(ValueError):
        emit_report(published_report(), "html")


def test_optima_and_learning_rate_tables():
    optima = {
        ("colon", "m"): ScoredOptimum(
            Configuration(1.28e-4, "adam", 16), 3.71e-4, 0.99, "colon"
        ),
        ("ovary", "m"): ScoredOptimum(
            Configuration(9.06e-5, "adam", 64), 2.0e-1, 0.9, "ovary"
        ),
    }
    table = optima_frame(optima)
    assert table.columns.tolist() == [
        "task",
        "model",
        "lr",
        "optimizer",
        "batch",
        "val_loss",
        "val_f1",
    ]
    assert table["batch"].tolist() == [16, 64]

    rates = learning_rate_frame(optima, ("colon", "ovary"), ["m"])
    assert rates.iloc[0]["lr_a"] == 1.28e-4
    assert rates.iloc[0]["lr_combined"] == pytest.approx(1.093e-4)
