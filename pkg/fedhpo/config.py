"""
Experiment configuration loaded from a JSON document. See README.md for the schema;
keys without a published value carry desk-scale defaults.
"""

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

from fedhpo import util
from fedhpo.data.split import SplitSpec
from fedhpo.data.synthetic import Difficulty, TaskSpec
from fedhpo.models import ModelKind
from fedhpo.search_space import SearchSpace
from fedhpo.tpe import TpeSettings

TOP_LEVEL_KEYS = {
    "seed",
    "tasks",
    "split",
    "search_space",
    "hpo",
    "models",
    "federated",
    "output_dir",
    "n_jobs",
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FederatedSettings:
    clients: int = 4
    alpha: float = 0.5
    min_per_client: int = 10
    rounds: int = 3
    local_epochs: int = 50
    participation: float = 1.0


@dataclass(frozen=True)
class HpoSettings:
    budget: int
    epochs: int = 20
    tpe: TpeSettings = field(default_factory=TpeSettings)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    tasks: Tuple[Tuple[str, TaskSpec], ...]
    split: SplitSpec
    search_space: SearchSpace
    hpo: HpoSettings
    models: Tuple[ModelKind, ...]
    federated: FederatedSettings
    output_dir: Path = Path("out")
    n_jobs: int = 1

    def __post_init__(self):
        if len(self.tasks) != 2:
            raise ConfigError(f"exactly two tasks are required, got {len(self.tasks)}")
        if len({name for name, _ in self.tasks}) != 2:
            raise ConfigError("task names must differ")
        if not self.models:
            raise ConfigError("at least one model kind is required")
        if len(set(self.models)) != len(self.models):
            raise ConfigError("model kinds must not repeat")
        if self.hpo.budget < 1:
            raise ConfigError(f"hpo.budget must be >= 1, got {self.hpo.budget}")
        if self.hpo.epochs < 1:
            raise ConfigError(f"hpo.epochs must be >= 1, got {self.hpo.epochs}")
        dims = {spec.feature_dim for _, spec in self.tasks}
        if len(dims) != 1:
            raise ConfigError(
                f"tasks must share feature_dim to be pooled, got {sorted(dims)}"
            )

    @property
    def task_names(self) -> Tuple[str, str]:
        return self.tasks[0][0], self.tasks[1][0]

    def with_overrides(
        self, seed: Optional[int] = None, output_dir: Optional[Union[str, Path]] = None
    ) -> "ExperimentConfig":
        changes: Dict[str, Any] = {}
        if seed is not None:
            changes["seed"] = int(seed)
            changes["split"] = replace(self.split, seed=int(seed))
        if output_dir is not None:
            changes["output_dir"] = Path(output_dir)
        return replace(self, **changes)

    @classmethod
    def from_dict(cls, config: Dict[str, Any]) -> "ExperimentConfig":
        """
        Build and validate a configuration from parsed JSON.

        Raises:
            ConfigError: Unknown or missing keys, wrong types, or violated invariants.
        """

        unknown = set(config) - TOP_LEVEL_KEYS
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")

        try:
            seed = int(_required(config, "seed"))
            tasks = tuple(
                (str(name), TaskSpec.from_dict(spec))
                for name, spec in _required(config, "tasks").items()
            )
            split_config = config.get("split", {})
            split = SplitSpec(
                train_fraction=float(split_config.get("train_fraction", 0.8)),
                val_fraction_of_train=float(
                    split_config.get("val_fraction_of_train", 0.2)
                ),
                seed=seed,
            )
            space = (
                SearchSpace.from_dict(config["search_space"])
                if "search_space" in config
                else SearchSpace.default()
            )
            hpo_config = _required(config, "hpo")
            hpo = HpoSettings(
                budget=int(_required(hpo_config, "budget", "hpo.")),
                epochs=int(hpo_config.get("epochs", 20)),
                tpe=TpeSettings(
                    gamma=float(hpo_config.get("gamma", 0.25)),
                    n_startup=int(hpo_config.get("n_startup", 10)),
                    n_candidates=int(hpo_config.get("n_candidates", 24)),
                ),
            )
            models = tuple(
                ModelKind.parse(m) for m in config.get("models", ["logistic", "mlp-8"])
            )
            fed_config = config.get("federated", {})
            federated = FederatedSettings(
                clients=int(fed_config.get("clients", 4)),
                alpha=float(fed_config.get("alpha", 0.5)),
                min_per_client=int(fed_config.get("min_per_client", 10)),
                rounds=int(fed_config.get("rounds", 3)),
                local_epochs=int(fed_config.get("local_epochs", 50)),
                participation=float(fed_config.get("participation", 1.0)),
            )
            _check_federated(federated)
            return cls(
                seed=seed,
                tasks=tasks,
                split=split,
                search_space=space,
                hpo=hpo,
                models=models,
                federated=federated,
                output_dir=Path(config.get("output_dir", "out")),
                n_jobs=int(config.get("n_jobs", 1)),
            )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise ConfigError(f"invalid configuration: {e}") from e

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "tasks": {
                name: {
                    "n_samples": spec.n_samples,
                    "positive_fraction": spec.positive_fraction,
                    "difficulty": Difficulty(spec.difficulty).value,
                    "feature_dim": spec.feature_dim,
                    "noise_scale": spec.noise_scale,
                }
                for name, spec in self.tasks
            },
            "split": {
                "train_fraction": self.split.train_fraction,
                "val_fraction_of_train": self.split.val_fraction_of_train,
            },
            "search_space": self.search_space.to_dict(),
            "hpo": {
                "budget": self.hpo.budget,
                "epochs": self.hpo.epochs,
                "gamma": self.hpo.tpe.gamma,
                "n_startup": self.hpo.tpe.n_startup,
                "n_candidates": self.hpo.tpe.n_candidates,
            },
            "models": [m.label for m in self.models],
            "federated": {
                "clients": self.federated.clients,
                "alpha": self.federated.alpha,
                "min_per_client": self.federated.min_per_client,
                "rounds": self.federated.rounds,
                "local_epochs": self.federated.local_epochs,
                "participation": self.federated.participation,
            },
            "output_dir": str(self.output_dir),
            "n_jobs": self.n_jobs,
        }


def load_experiment_config(file_path: Union[str, Path]) -> ExperimentConfig:
    """
    Load and validate an experiment configuration from a JSON file.

    Raises:
        ConfigError: The file is missing, is not valid JSON, or fails validation.
    """

    try:
        raw = util.load_json(file_path)
    except (OSError, ValueError) as e:
        raise ConfigError(f"cannot read configuration {file_path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"configuration {file_path} must be a JSON object")
    return ExperimentConfig.from_dict(raw)


def _required(config: Dict[str, Any], key: str, prefix: str = "") -> Any:
    if key not in config:
        raise ConfigError(f"missing required key {prefix}{key}")
    return config[key]


def _check_federated(settings: FederatedSettings) -> None:
    if settings.clients < 1:
        raise ConfigError(f"federated.clients must be >= 1, got {settings.clients}")
    if not settings.alpha > 0:
        raise ConfigError(f"federated.alpha must be positive, got {settings.alpha}")
    if settings.min_per_client < 1:
        raise ConfigError(
            f"federated.min_per_client must be >= 1, got {settings.min_per_client}"
        )
    if settings.rounds < 1 or settings.local_epochs < 1:
        raise ConfigError("federated.rounds and federated.local_epochs must be >= 1")
    if not 0 < settings.participation <= 1:
        raise ConfigError(
            f"federated.participation must be in (0, 1], got {settings.participation}"
        )
