import json

import numpy as np
import pytest

from fedhpo import cli, pipeline, util
from fedhpo.config import ExperimentConfig
from fedhpo.fedavg import run_federated
from fedhpo.heuristic import SCHEMES, ScoredOptimum
from fedhpo.models import MetricsReport, init_model
from fedhpo.report import SchemeReport
from fedhpo.search_space import Configuration


def tiny_config(out_dir, **changes):
    config = {
        "seed": 3,
        "tasks": {
            "ovary-like": {"n_samples": 60, "difficulty": "rings"},
            "colon-like": {"n_samples": 60, "difficulty": "linear"},
        },
        "hpo": {"budget": 4, "epochs": 2, "n_startup": 2, "n_candidates": 8},
        "models": ["logistic", "mlp-3"],
        "federated": {
            "clients": 2,
            "min_per_client": 5,
            "rounds": 2,
            "local_epochs": 2,
        },
        "output_dir": str(out_dir),
    }
    config.update(changes)
    return config


def write_config(tmp_path, **changes):
    config = tiny_config(tmp_path / "out", **changes)
    return util.write_text(json.dumps(config), tmp_path, "experiment.json")


def test_prepare_tasks_splits_both_tasks(tmp_path):
    cfg = ExperimentConfig.from_dict(tiny_config(tmp_path))
    tasks = pipeline.prepare_tasks(cfg)
    assert [t.name for t in tasks] == ["ovary-like", "colon-like"]
    for task in tasks:
        assert len(task.train) + len(task.val) + len(task.test) == 60


def test_phase1_budget_one(tmp_path):
    cfg = ExperimentConfig.from_dict(
        tiny_config(tmp_path, hpo={"budget": 1, "epochs": 1}, models=["logistic"])
    )
    ledger = pipeline.CsvLedger(tmp_path / "trials.csv", pipeline.HPO_COLUMNS)
    optima = pipeline.run_phase1(cfg, ledger=ledger)

    assert list(optima) == [("ovary-like", "logistic"), ("colon-like", "logistic")]
    trials = util.load_csv(ledger.path)
    assert len(trials) == 2
    for (task, model), optimum in optima.items():
        row = trials[(trials["task"] == task) & (trials["model"] == model)].iloc[0]
        assert optimum.config == Configuration(
            row["lr"], row["optimizer"], int(row["batch"])
        )
        assert optimum.val_loss == row["val_loss"]


def test_phase1_is_deterministic(tmp_path):
    cfg = ExperimentConfig.from_dict(tiny_config(tmp_path))
    a = pipeline.run_phase1(cfg)
    b = pipeline.run_phase1(cfg)
    assert len(a) == 4
    assert {k: v.config for k, v in a.items()} == {k: v.config for k, v in b.items()}


def test_identical_optima_give_identical_scheme_rows(tmp_path):
    cfg = ExperimentConfig.from_dict(tiny_config(tmp_path, models=["logistic"]))
    same = Configuration(5e-4, "adam", 16)
    optima = {
        (task, "logistic"): ScoredOptimum(same, 0.3, 0.8, task)
        for task in cfg.task_names
    }
    report = pipeline.run_phase2(cfg, optima)

    assert len(report.rows) == 3
    assert report.schemes == list(SCHEMES)
    first = report.metrics("logistic", SCHEMES[0]).as_dict()
    for scheme in SCHEMES[1:]:
        assert report.metrics("logistic", scheme).as_dict() == first
    assert report.best_schemes("logistic") == list(SCHEMES)


def test_phase2_requires_every_optimum(tmp_path):
    cfg = ExperimentConfig.from_dict(tiny_config(tmp_path, models=["logistic"]))
    optimum = ScoredOptimum(Configuration(5e-4, "adam", 16), 0.3, 0.8, "ovary-like")
    with pytest.raises(ValueError):
        pipeline.run_phase2(cfg, {("ovary-like", "logistic"): optimum})


def test_full_run_writes_every_output(tmp_path):
    cfg = ExperimentConfig.from_dict(tiny_config(tmp_path / "out"))
    report = pipeline.execute_full(cfg)

    out = tmp_path / "out"
    for name in [
        "hpo_trials.csv",
        "optima.csv",
        "learning_rates.csv",
        "fed_rounds.csv",
        "fed_task_rounds.csv",
        "report.csv",
        "report.md",
    ]:
        assert (out / name).exists(), name

    trials = util.load_csv(out / "hpo_trials.csv")
    assert trials.columns.tolist() == pipeline.HPO_COLUMNS
    assert len(trials) == 2 * 2 * 4

    rounds = util.load_csv(out / "fed_rounds.csv")
    assert rounds.columns.tolist() == pipeline.ROUND_COLUMNS
    assert len(rounds) == 2 * 3 * 2
    assert rounds[["model", "scheme", "round"]].values.tolist()[:3] == [
        ["logistic", SCHEMES[0], 1],
        ["logistic", SCHEMES[0], 2],
        ["logistic", SCHEMES[1], 1],
    ]

    task_rounds = util.load_csv(out / "fed_task_rounds.csv")
    assert len(task_rounds) == 2 * len(rounds)

    rates = util.load_csv(out / "learning_rates.csv")
    assert rates["model"].tolist() == ["logistic", "mlp-3"]
    assert np.allclose(rates["lr_combined"], (rates["lr_a"] + rates["lr_b"]) / 2)

    assert len(report.rows) == 6
    rendered = pipeline.execute_report(out, "csv").splitlines()
    saved = (out / "report.csv").read_text().splitlines()
    assert rendered[0] == saved[0]
    assert [line.split(",")[:6] for line in rendered] == [
        line.split(",")[:6] for line in saved
    ]


def test_full_run_is_byte_identical(tmp_path):
    first = ExperimentConfig.from_dict(tiny_config(tmp_path / "first"))
    second = first.with_overrides(output_dir=tmp_path / "second")
    pipeline.execute_full(first)
    pipeline.execute_full(second)

    for name in ["report.csv", "hpo_trials.csv", "fed_rounds.csv"]:
        first_bytes = (tmp_path / "first" / name).read_bytes()
        assert first_bytes == (tmp_path / "second" / name).read_bytes()


def test_phases_run_separately_match_full_run(tmp_path):
    full = ExperimentConfig.from_dict(tiny_config(tmp_path / "full"))
    split = full.with_overrides(output_dir=tmp_path / "split")
    pipeline.execute_full(full)
    pipeline.execute_phase1(split)
    pipeline.execute_phase2(split)

    full_bytes = (tmp_path / "full" / "report.csv").read_bytes()
    assert full_bytes == (tmp_path / "split" / "report.csv").read_bytes()


def test_load_optima_picks_lowest_loss(tmp_path):
    ledger = pipeline.CsvLedger(tmp_path / "hpo_trials.csv", pipeline.HPO_COLUMNS)
    rows = [
        ("a", "logistic", 0, 1e-4, "adam", 16, 0.5, 0.7),
        ("a", "logistic", 1, 2e-4, "sgd", 32, 0.2, 0.8),
        ("a", "logistic", 2, 3e-4, "sgd", 64, 0.2, 0.9),
        ("b", "logistic", 0, 4e-4, "adam", 64, float("inf"), 0.0),
        ("b", "logistic", 1, 5e-4, "adam", 16, 0.4, 0.6),
    ]
    for row in rows:
        ledger.append(dict(zip(pipeline.HPO_COLUMNS, row)))

    optima = pipeline.load_optima(tmp_path)
    assert optima[("a", "logistic")].config == Configuration(2e-4, "sgd", 32)
    assert optima[("b", "logistic")].config == Configuration(5e-4, "adam", 16)


def test_check_combined_is_logged_not_raised(caplog):
    def metrics(f1):
        return MetricsReport(0.5, 0.5, 0.5, f1)

    report = SchemeReport(
        {
            ("m", "a"): metrics(0.9),
            ("m", "b"): metrics(0.5),
            ("m", "combined"): metrics(0.6),
        }
    )
    with caplog.at_level("WARNING"):
        assert not pipeline.check_combined(report)
    assert "combined mean F1" in caplog.text

    close = SchemeReport(
        {
            ("m", "a"): metrics(0.9),
            ("m", "b"): metrics(0.5),
            ("m", "combined"): metrics(0.89),
        }
    )
    assert pipeline.check_combined(close)


def test_cli_full_and_report(tmp_path, capsys):
    config_path = write_config(tmp_path)
    assert cli.main(["full", "--config", str(config_path)]) == cli.EXIT_OK
    assert (tmp_path / "out" / "report.md").exists()

    assert cli.main(["report", "--config", str(config_path)]) == cli.EXIT_OK
    assert "| Model |" in capsys.readouterr().out


def test_cli_overrides_output_directory(tmp_path):
    config_path = write_config(tmp_path, models=["logistic"])
    other = tmp_path / "other"
    argv = ["phase1", "--config", str(config_path), "--out", str(other), "--seed", "5"]
    assert cli.main(argv) == 0
    assert (other / "hpo_trials.csv").exists()
    assert not (tmp_path / "out").exists()


def test_cli_exit_codes(tmp_path):
    missing = tmp_path / "missing.json"
    assert cli.main(["full", "--config", str(missing)]) == cli.EXIT_CONFIG

    bad = util.write_text(json.dumps({"seed": 1}), tmp_path, "bad.json")
    assert cli.main(["phase1", "--config", str(bad)]) == cli.EXIT_CONFIG

    # phase 2 without a phase 1 ledger
    config_path = write_config(tmp_path)
    assert cli.main(["phase2", "--config", str(config_path)]) == cli.EXIT_FAILURE


def test_phase2_rejects_schemes_with_different_starting_points(tmp_path, monkeypatch):
    cfg = ExperimentConfig.from_dict(tiny_config(tmp_path, models=["logistic"]))
    same = Configuration(5e-4, "adam", 16)
    optima = {
        (task, "logistic"): ScoredOptimum(same, 0.3, 0.8, task)
        for task in cfg.task_names
    }
    calls = []

    def reinitialised(partition, train, test, fc, rng, initial_params=None, **kwargs):
        calls.append(fc)
        if len(calls) > 1:
            initial_params = init_model(
                fc.model_kind, train.feature_dim, np.random.default_rng(len(calls))
            )
        return run_federated(
            partition, train, test, fc, rng, initial_params=initial_params, **kwargs
        )

    monkeypatch.setattr(pipeline, "run_federated", reinitialised)
    with pytest.raises(pipeline.ComparabilityError):
        pipeline.run_phase2(cfg, optima)
    assert len(calls) == 2
