"""
Synthetic binary classification tasks standing in for the two histopathology datasets.
"""

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np
import pandas as pd

from fedhpo import util

# blob centres at +-50: a few hundred SGD steps at lr >= 1e-4 can turn a
# unit-scale initial weight vector to face the right way
LINEAR_SEPARATION = 100.0
RING_RADII = {0: (0.0, 1.0), 1: (2.0, 3.0)}


class Difficulty(str, Enum):
    LINEAR = "linear"
    RINGS = "rings"


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Feature matrix, binary labels and a name. Arrays are stored read-only.
    """

    features: np.ndarray
    labels: np.ndarray
    name: str = "dataset"

    def __post_init__(self):
        features = np.array(self.features, dtype=float)
        labels = np.array(self.labels).astype(np.int64).ravel()

        if features.ndim == 1:
            features = features.reshape(-1, 1)
        if features.ndim != 2 or features.shape[0] != len(labels):
            raise ValueError(
                f"features {features.shape} and labels {labels.shape} disagree on rows"
            )
        if not np.all(np.isin(labels, (0, 1))):
            raise ValueError("labels must be 0 or 1")

        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: Sequence[int], name: Optional[str] = None) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[indices], self.labels[indices], name or self.name)

    def label_histogram(self) -> np.ndarray:
        """
        Class proportions `[p(y=0), p(y=1)]`; zeros for an empty dataset.
        """

        counts = np.bincount(self.labels, minlength=2).astype(float)
        return counts / counts.sum() if counts.sum() else counts

    def to_frame(self) -> pd.DataFrame:
        columns = [f"f{i}" for i in range(self.feature_dim)]
        frame = pd.DataFrame(self.features, columns=columns)
        frame["label"] = self.labels
        return frame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, name: str = "dataset") -> "Dataset":
        feature_columns = [c for c in frame.columns if c != "label"]
        return cls(frame[feature_columns].to_numpy(), frame["label"].to_numpy(), name)

    @classmethod
    def concat(cls, datasets: Sequence["Dataset"], name: str = "pooled") -> "Dataset":
        """
        Stack datasets row-wise, in order, e.g. to pool the training data of two tasks.
        """

        if not datasets:
            raise ValueError("nothing to concatenate")
        return cls(
            np.concatenate([d.features for d in datasets], axis=0),
            np.concatenate([d.labels for d in datasets]),
            name,
        )


@dataclass(frozen=True)
class TaskSpec:
    n_samples: int = 498
    positive_fraction: float = 0.5
    difficulty: Difficulty = Difficulty.LINEAR
    feature_dim: int = 2
    noise_scale: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "difficulty", Difficulty(self.difficulty))
        if self.n_samples < 10:
            raise ValueError(f"n_samples must be >= 10, got {self.n_samples}")
        if not 0 < self.positive_fraction < 1:
            raise ValueError(
                f"positive_fraction must be in (0, 1), got {self.positive_fraction}"
            )
        minimum_dim = 2 if self.difficulty is Difficulty.RINGS else 1
        if self.feature_dim < minimum_dim:
            raise ValueError(
                f"{self.difficulty.value} tasks need feature_dim >= {minimum_dim}, "
                f"got {self.feature_dim}"
            )
        if not (math.isfinite(self.noise_scale) and self.noise_scale >= 0):
            raise ValueError(f"noise_scale must be >= 0, got {self.noise_scale}")

    @classmethod
    def from_dict(cls, config: Dict[str, Any]) -> "TaskSpec":
        return cls(
            n_samples=int(config.get("n_samples", 498)),
            positive_fraction=float(config.get("positive_fraction", 0.5)),
            difficulty=Difficulty(config.get("difficulty", Difficulty.LINEAR.value)),
            feature_dim=int(config.get("feature_dim", 2)),
            noise_scale=float(config.get("noise_scale", 0.5)),
        )

    @property
    def n_positive(self) -> int:
        return int(round(self.positive_fraction * self.n_samples))


def gen_task(spec: TaskSpec, rng: np.random.Generator, name: str = "task") -> Dataset:
    """
    Generate a labelled dataset with exactly `round(positive_fraction * n_samples)`
    positives, positives first.

    LINEAR: two Gaussian blobs centred at `+-LINEAR_SEPARATION / 2` along a random
    unit direction. RINGS: negatives fill a disc, positives an outer annulus, in the
    first two features; remaining features carry only noise. Both add isotropic
    Gaussian noise with standard deviation `noise_scale`.

    Args:
        spec: Task description.
        rng: Random generator.
        name: Name for the returned dataset.

    Returns:
        Generated dataset.
    """

    n_pos = spec.n_positive
    labels = np.concatenate(
        [np.ones(n_pos, dtype=int), np.zeros(spec.n_samples - n_pos, dtype=int)]
    )

    if spec.difficulty is Difficulty.LINEAR:
        direction = rng.normal(size=spec.feature_dim)
        direction /= np.linalg.norm(direction)
        signs = np.where(labels == 1, 0.5, -0.5)
        centres = np.outer(signs * LINEAR_SEPARATION, direction)
    else:
        centres = np.zeros((spec.n_samples, spec.feature_dim))
        radii = np.empty(spec.n_samples)
        for label, (inner, outer) in RING_RADII.items():
            mask = labels == label
            # uniform over the annulus area
            radii[mask] = np.sqrt(rng.uniform(inner**2, outer**2, size=int(mask.sum())))
        angles = rng.uniform(0.0, 2 * np.pi, size=spec.n_samples)
        centres[:, 0] = radii * np.cos(angles)
        centres[:, 1] = radii * np.sin(angles)

    noise = rng.normal(0.0, 1.0, size=centres.shape) * spec.noise_scale
    return Dataset(centres + noise, labels, name)


def write_dataset_csv(
    data: Dataset, out_dir: Union[str, Path], basename: Optional[str] = None
) -> Path:
    """
    Write `data` as CSV with columns `f0..f{d-1}, label`.
    """

    return util.write_csv(data.to_frame(), out_dir, basename or data.name, index=False)


def read_dataset_csv(
    file_path: Union[str, Path], name: Optional[str] = None
) -> Dataset:
    return Dataset.from_frame(util.load_csv(file_path), name or Path(file_path).stem)
