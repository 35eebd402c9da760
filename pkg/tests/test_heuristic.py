import math
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedhpo import util
from fedhpo.heuristic import (
    SCHEMES,
    SCHEME_COMBINED,
    ScoredOptimum,
    build_schemes,
    combine,
)
from fedhpo.search_space import Configuration, OptimizerKind

REFERENCE = util.load_json(Path(__file__).parent / "fixtures" / "reference_tables.json")


def optimum(lr, optimizer="adam", batch=32, f1=0.9, name="task"):
    return ScoredOptimum(Configuration(lr, optimizer, batch), 0.1, f1, name)


def three_significant_digits(value, published):
    unit = 10.0 ** (math.floor(math.log10(abs(published))) - 2)
    return abs(value - published) <= 0.5 * unit * (1 + 1e-9)


@pytest.mark.parametrize("row", REFERENCE["learning_rates"], ids=lambda r: r["model"])
def test_combined_learning_rates_match_published_values(row):
    colon = optimum(row["lr_colon"], name="colon")
    ovary = optimum(row["lr_ovary"], name="ovary")
    combined = combine(colon, ovary).learning_rate
    assert three_significant_digits(combined, row["lr_combined"])


def test_alexnet_example():
    combined = combine(optimum(1.28e-4), optimum(9.06e-5))
    assert combined.learning_rate == pytest.approx(1.093e-4)


def test_categorical_tie_goes_to_higher_f1():
    a = optimum(1e-4, "adam", 16, f1=0.90)
    b = optimum(3e-4, "sgd", 64, f1=0.95)
    combined = combine(a, b)
    assert combined.learning_rate == pytest.approx(2e-4)
    assert combined.optimizer is OptimizerKind.SGD
    assert combined.batch_size == 64


def test_equal_f1_tie_falls_back_to_first_input():
    a = optimum(1e-4, "adam", 16, f1=0.9)
    b = optimum(3e-4, "sgd", 64, f1=0.9)
    assert combine(a, b).optimizer is OptimizerKind.ADAM
    assert combine(b, a).optimizer is OptimizerKind.SGD


def test_identical_optima_combine_to_themselves():
    a = optimum(1.234e-4, "sgd", 16)
    assert combine(a, a) == a.config
    schemes = build_schemes(a, a)
    assert len(set(schemes.values())) == 1


def test_more_than_two_optima_use_the_mode():
    optima = [
        optimum(1e-4, "sgd", 16, f1=0.99),
        optimum(2e-4, "adam", 32, f1=0.5),
        optimum(3e-4, "adam", 32, f1=0.5),
    ]
    combined = combine(*optima)
    assert combined.learning_rate == pytest.approx(2e-4)
    assert combined.optimizer is OptimizerKind.ADAM
    assert combined.batch_size == 32


def test_build_schemes_has_three_named_entries():
    a, b = optimum(1.28e-4, name="a"), optimum(9.06e-5, name="b")
    schemes = build_schemes(a, b)
    assert tuple(schemes) == SCHEMES
    assert three_significant_digits(schemes[SCHEME_COMBINED].learning_rate, 1.09e-4)


def test_published_optima_combine_within_inputs():
    configs = {(r["dataset"], r["model"]): r for r in REFERENCE["best_configs"]}
    for row in REFERENCE["learning_rates"]:
        colon_row = configs[("colon", row["model"])]
        ovary_row = configs[("ovary", row["model"])]
        colon = optimum(
            row["lr_colon"], colon_row["optimizer"], colon_row["batch"], name="colon"
        )
        ovary = optimum(
            row["lr_ovary"], ovary_row["optimizer"], ovary_row["batch"], name="ovary"
        )

        combined = combine(colon, ovary)
        assert combined.optimizer in (colon.config.optimizer, ovary.config.optimizer)
        assert combined.batch_size in (colon.config.batch_size, ovary.config.batch_size)


lrs = st.floats(min_value=1e-6, max_value=1e-2, allow_nan=False)
f1s = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)
optimizers = st.sampled_from(["adam", "sgd"])


@given(lrs, lrs, optimizers, optimizers, f1s, f1s)
def test_combined_values_come_from_inputs(lr_a, lr_b, opt_a, opt_b, f1_a, f1_b):
    a = optimum(lr_a, opt_a, 16, f1=f1_a)
    b = optimum(lr_b, opt_b, 64, f1=f1_b)
    combined = combine(a, b)

    low, high = min(lr_a, lr_b) * (1 - 1e-12), max(lr_a, lr_b) * (1 + 1e-12)
    assert low <= combined.learning_rate <= high
    assert combined.optimizer in (a.config.optimizer, b.config.optimizer)
    assert combined.batch_size in (16, 64)
    if f1_a != f1_b:
        assert combine(b, a) == combined
