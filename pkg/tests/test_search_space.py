import math

import numpy as np
import pytest
from scipy import stats

from fedhpo.search_space import (
    Configuration,
    OptimizerKind,
    SearchSpace,
    log_uniform,
    sample_prior,
    validate,
)


def test_configuration_coerces_and_validates():
    config = Configuration(1e-4, "adam", 32)
    assert config.optimizer is OptimizerKind.ADAM
    assert config.to_dict() == {"lr": 1e-4, "optimizer": "adam", "batch": 32}

    with pytest.raises(ValueError):
        Configuration(0.0, OptimizerKind.SGD, 32)
    with pytest.raises(ValueError):
        Configuration(1e-4, OptimizerKind.SGD, 0)
    with pytest.raises(ValueError):
        Configuration(1e-4, "rmsprop", 32)


def test_search_space_rejects_invalid_bounds_and_candidates():
    with pytest.raises(ValueError):
        SearchSpace(1e-3, 1e-5, (16,), (OptimizerKind.ADAM,))
    with pytest.raises(ValueError):
        SearchSpace(1e-5, 1e-3, (), (OptimizerKind.ADAM,))
    with pytest.raises(ValueError):
        SearchSpace(1e-5, 1e-3, (16, 16), (OptimizerKind.ADAM,))


def test_search_space_dict_round_trip():
    space = SearchSpace.default()
    assert SearchSpace.from_dict(space.to_dict()) == space
    assert space.log_bounds == (-5.0, -3.0)


def test_degenerate_space_always_returns_the_single_point():
    space = SearchSpace(1e-4, 1e-4, (32,), (OptimizerKind.ADAM,))
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert sample_prior(space, rng) == Configuration(1e-4, OptimizerKind.ADAM, 32)


@pytest.mark.parametrize("seed", range(10))
def test_default_space_samples_lie_inside(seed):
    space = SearchSpace.default()
    rng = np.random.default_rng(seed)
    for _ in range(50):
        config = sample_prior(space, rng)
        assert 1e-5 <= config.learning_rate <= 1e-3
        assert config.batch_size in (16, 32, 64)
        assert validate(space, config)


def test_sample_prior_is_deterministic():
    space = SearchSpace.default()
    a = [sample_prior(space, np.random.default_rng(5)) for _ in range(3)]
    b = [sample_prior(space, np.random.default_rng(5)) for _ in range(3)]
    assert a == b


def test_log_learning_rate_is_uniform():
    space = SearchSpace.default()
    rng = np.random.default_rng(1234)
    logs = np.array(
        [math.log10(sample_prior(space, rng).learning_rate) for _ in range(10_000)]
    )

    result = stats.kstest(logs, stats.uniform(loc=-5, scale=2).cdf)
    assert result.statistic < 0.02


def test_log_uniform_endpoints():
    space = SearchSpace.default()
    assert log_uniform(space, 0.0) == pytest.approx(1e-5)
    assert log_uniform(space, 0.5) == pytest.approx(1e-4)
    assert log_uniform(space, 1.0 - 1e-16) <= 1e-3


def test_validate_examples():
    space = SearchSpace.default()
    assert validate(space, Configuration(1e-4, OptimizerKind.ADAM, 32))
    assert not validate(space, Configuration(1e-2, OptimizerKind.ADAM, 32))
    assert not validate(space, Configuration(1e-4, OptimizerKind.ADAM, 48))

    adam_only = SearchSpace(1e-5, 1e-3, (16, 32, 64), (OptimizerKind.ADAM,))
    assert not validate(adam_only, Configuration(1e-4, OptimizerKind.SGD, 32))
