"""
Desk-scale binary classifiers with hand-written gradients: logistic regression and a
one-hidden-layer tanh MLP. Parameters travel as one flat vector so that clients and
the server can exchange and average them directly.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Dict, Optional, Tuple

import numpy as np
from scipy.special import expit
from sklearn.metrics import confusion_matrix

from fedhpo import util
from fedhpo.search_space import Configuration, OptimizerKind

if TYPE_CHECKING:
    from fedhpo.data.synthetic import Dataset

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8

Layout = Tuple[Tuple[str, Tuple[int, ...]], ...]


class NonFiniteError(FloatingPointError):
    """
    Training produced a non-finite value. `magnitude` is the largest absolute parameter
    value at the time, which is usually what blew up.
    """

    def __init__(self, message: str, magnitude: float):
        super().__init__(f"{message} (max |param| = {magnitude:.6g})")
        self.magnitude = magnitude


class LayoutMismatchError(ValueError):
    pass


class ModelFamily(str, Enum):
    LOGISTIC = "logistic"
    MLP = "mlp"


@dataclass(frozen=True)
class ModelKind:
    family: ModelFamily
    hidden_units: int = 0

    def __post_init__(self):
        object.__setattr__(self, "family", ModelFamily(self.family))
        if self.family is ModelFamily.MLP and self.hidden_units < 1:
            raise ValueError(f"MLP needs hidden_units >= 1, got {self.hidden_units}")
        if self.family is ModelFamily.LOGISTIC and self.hidden_units != 0:
            raise ValueError("logistic regression has no hidden units")

    @classmethod
    def logistic(cls) -> "ModelKind":
        return cls(ModelFamily.LOGISTIC)

    @classmethod
    def mlp(cls, hidden_units: int) -> "ModelKind":
        return cls(ModelFamily.MLP, hidden_units)

    @classmethod
    def parse(cls, label: str) -> "ModelKind":
        """
        Parse `"logistic"` or `"mlp-<hidden units>"`, e.g. `"mlp-8"`.
        """

        text = label.strip().lower()
        if text == ModelFamily.LOGISTIC.value:
            return cls.logistic()
        family, _, hidden = text.partition("-")
        if family == ModelFamily.MLP.value and hidden.isdigit():
            return cls.mlp(int(hidden))
        raise ValueError(f"unknown model kind {label!r}")

    @property
    def label(self) -> str:
        if self.family is ModelFamily.MLP:
            return f"mlp-{self.hidden_units}"
        return self.family.value

    def layout(self, input_dim: int) -> Layout:
        if input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {input_dim}")
        if self.family is ModelFamily.LOGISTIC:
            return (("w", (input_dim,)), ("b", ()))
        h = self.hidden_units
        return (("w1", (input_dim, h)), ("b1", (h,)), ("w2", (h,)), ("b2", ()))


@dataclass(frozen=True, eq=False)
class ParameterVector:
    """
    Flat, read-only parameter array plus the layout describing how it splits into
    weight matrices and biases.
    """

    values: np.ndarray
    layout: Layout

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        expected = sum(int(np.prod(shape)) for _, shape in self.layout)
        if len(values) != expected:
            raise LayoutMismatchError(
                f"parameter vector has {len(values)} entries, layout needs {expected}"
            )
        if not np.all(np.isfinite(values)):
            finite = values[np.isfinite(values)]
            raise NonFiniteError(
                "parameters contain non-finite entries",
                float(np.max(np.abs(finite))) if len(finite) else math.inf,
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)

    def unpack(self) -> Dict[str, np.ndarray]:
        arrays, offset = {}, 0
        for name, shape in self.layout:
            size = int(np.prod(shape))
            arrays[name] = self.values[offset : offset + size].reshape(shape)
            offset += size
        return arrays

    def with_values(self, values: np.ndarray) -> "ParameterVector":
        return ParameterVector(values, self.layout)

    def fingerprint(self) -> str:
        return util.array_fingerprint(self.values)


@dataclass(frozen=True, eq=False)
class OptimizerState:
    kind: OptimizerKind
    step_count: int = 0
    first_moment: Optional[np.ndarray] = None
    second_moment: Optional[np.ndarray] = None

    @classmethod
    def fresh(cls, kind: OptimizerKind, size: int) -> "OptimizerState":
        if kind is OptimizerKind.ADAM:
            return cls(kind, 0, np.zeros(size), np.zeros(size))
        return cls(kind)


@dataclass(frozen=True, eq=False)
class MetricsReport:
    """
    Accuracy plus support-weighted precision, recall and F1. `confusion` is indexed
    `[true label, predicted label]` and may be absent for reports loaded from files.
    """

    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("accuracy", "precision", "recall", "f1"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")

    def as_dict(self) -> Dict[str, float]:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }


def init_model(
    kind: ModelKind, input_dim: int, rng: np.random.Generator
) -> ParameterVector:
    """
    Initialise parameters for `kind`: weights ~ N(0, 1 / fan_in), biases zero.
    """

    layout = kind.layout(input_dim)
    chunks = []
    for name, shape in layout:
        if name.startswith("b"):
            chunks.append(np.zeros(shape).ravel())
        else:
            fan_in = shape[0]
            chunks.append(rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shape).ravel())
    return ParameterVector(np.concatenate(chunks), layout)


def loss_and_gradient(
    params: ParameterVector,
    kind: ModelKind,
    features: np.ndarray,
    labels: np.ndarray,
) -> Tuple[float, ParameterVector]:
    """
    Mean binary cross-entropy with logits over a batch, and its gradient.

    Args:
        params: Current parameters.
        kind: Model kind matching `params.layout`.
        features: Batch features, shape (n, input_dim), n >= 1.
        labels: Batch labels in {0, 1}, shape (n,).

    Returns:
        `(loss, gradient)`, the gradient sharing the layout of `params`.
    """

    x, y = _check_batch(features, labels)
    p = params.unpack()

    if kind.family is ModelFamily.LOGISTIC:
        z = x @ p["w"] + p["b"]
        _check_finite(z, params)
        dz = (expit(z) - y) / len(y)
        grad = np.concatenate([x.T @ dz, [dz.sum()]])
    else:
        hidden = np.tanh(x @ p["w1"] + p["b1"])
        z = hidden @ p["w2"] + p["b2"]
        _check_finite(z, params)
        dz = (expit(z) - y) / len(y)
        da = np.outer(dz, p["w2"]) * (1.0 - hidden**2)
        grad = np.concatenate(
            [(x.T @ da).ravel(), da.sum(axis=0), hidden.T @ dz, [dz.sum()]]
        )

    return _bce_with_logits(z, y), params.with_values(grad)


def mean_loss(params: ParameterVector, kind: ModelKind, data: "Dataset") -> float:
    """
    Mean binary cross-entropy of `params` over all of `data`.
    """

    x, y = _check_batch(data.features, data.labels)
    z = _logits(params, kind, x)
    _check_finite(z, params)
    return _bce_with_logits(z, y)


def optimizer_step(
    params: ParameterVector,
    grad: ParameterVector,
    state: OptimizerState,
    lr: float,
) -> Tuple[ParameterVector, OptimizerState]:
    """
    Apply one update. SGD: `theta - lr * g`. Adam: bias-corrected moment estimates with
    beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    """

    if grad.layout != params.layout:
        raise LayoutMismatchError("gradient layout does not match parameter layout")

    step = state.step_count + 1
    g = grad.values

    if state.kind is OptimizerKind.SGD:
        updated = params.with_values(params.values - lr * g)
        return updated, OptimizerState(state.kind, step)

    m = state.first_moment if state.first_moment is not None else np.zeros(len(g))
    v = state.second_moment if state.second_moment is not None else np.zeros(len(g))
    if len(m) != len(g) or len(v) != len(g):
        raise LayoutMismatchError("optimizer moments do not match parameter layout")

    m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
    v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g**2
    m_hat = m / (1.0 - ADAM_BETA1**step)
    v_hat = v / (1.0 - ADAM_BETA2**step)
    updated = params.values - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPSILON)

    return params.with_values(updated), OptimizerState(state.kind, step, m, v)


def train_epochs(
    params: ParameterVector,
    kind: ModelKind,
    data: "Dataset",
    config: Configuration,
    epochs: int,
    rng: np.random.Generator,
) -> ParameterVector:
    """
    Mini-batch training with the optimizer, learning rate and batch size of `config`.

    Every epoch shuffles the sample order with `rng` and walks it in batches of
    `config.batch_size` (the last batch may be smaller). Optimizer state starts fresh on
    every call.

    Args:
        params: Starting parameters, left untouched.
        kind: Model kind.
        data: Training samples.
        config: Hyperparameters.
        epochs: Number of passes over `data`, >= 0.
        rng: Random generator for shuffling.

    Returns:
        Trained parameters.
    """

    if epochs < 0:
        raise ValueError(f"epochs must be >= 0, got {epochs}")

    state = OptimizerState.fresh(config.optimizer, len(params))
    n = len(data)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            _, grad = loss_and_gradient(
                params, kind, data.features[batch], data.labels[batch]
            )
            params, state = optimizer_step(params, grad, state, config.learning_rate)

    return params


def predict_proba(
    params: ParameterVector, kind: ModelKind, features: np.ndarray
) -> np.ndarray:
    return expit(_logits(params, kind, np.asarray(features, dtype=float)))


def evaluate(
    params: ParameterVector, kind: ModelKind, data: "Dataset"
) -> MetricsReport:
    """
    Threshold predicted probabilities at 0.5 and score them against `data.labels`.
    """

    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")

    predictions = (predict_proba(params, kind, data.features) >= 0.5).astype(int)
    confusion = confusion_matrix(data.labels, predictions, labels=[0, 1])
    return metrics_from_confusion(confusion)


def metrics_from_confusion(confusion: np.ndarray) -> MetricsReport:
    """
    Accuracy and support-weighted precision, recall and F1 from a confusion matrix
    indexed `[true, predicted]`. Per-class terms with a zero denominator count as 0.

    Weighted recall is `sum_c (n_c / N) * (TP_c / n_c)`, which reduces to
    `sum_c TP_c / N` and is computed in that form, so it equals accuracy exactly.
    """

    confusion = np.asarray(confusion, dtype=np.int64)
    if confusion.ndim != 2 or confusion.shape[0] != confusion.shape[1]:
        raise ValueError(
            f"confusion matrix must be square, got shape {confusion.shape}"
        )
    if np.any(confusion < 0):
        raise ValueError("confusion matrix entries must be non-negative")

    total = int(confusion.sum())
    if total == 0:
        raise ValueError("confusion matrix is empty")

    true_positive = np.diag(confusion).astype(float)
    support = confusion.sum(axis=1).astype(float)
    predicted = confusion.sum(axis=0).astype(float)

    precision = _safe_divide(true_positive, predicted)
    recall = _safe_divide(true_positive, support)
    f1 = _safe_divide(2 * precision * recall, precision + recall)
    weights = support / total

    accuracy = float(true_positive.sum() / total)
    return MetricsReport(
        accuracy=accuracy,
        precision=_unit(np.sum(weights * precision)),
        recall=accuracy,
        f1=_unit(np.sum(weights * f1)),
        confusion=confusion,
    )


def _logits(params: ParameterVector, kind: ModelKind, x: np.ndarray) -> np.ndarray:
    p = params.unpack()
    if kind.family is ModelFamily.LOGISTIC:
        return x @ p["w"] + p["b"]
    return np.tanh(x @ p["w1"] + p["b1"]) @ p["w2"] + p["b2"]


def _bce_with_logits(z: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(y * np.logaddexp(0.0, -z) + (1.0 - y) * np.logaddexp(0.0, z)))


def _check_batch(
    features: np.ndarray, labels: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float)
    if x.ndim != 2 or len(x) == 0 or len(x) != len(y):
        raise ValueError(
            f"batch must be non-empty with matching rows, got {x.shape}, {y.shape}"
        )
    return x, y


def _check_finite(z: np.ndarray, params: ParameterVector) -> None:
    if not np.all(np.isfinite(z)):
        magnitude = float(np.max(np.abs(params.values)))
        raise NonFiniteError("non-finite activations", magnitude)


def _safe_divide(numerator: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    out = np.zeros_like(numerator, dtype=float)
    np.divide(numerator, denominator, out=out, where=denominator != 0)
    return out


def _unit(value: float) -> float:
    # guards against 1 + ulp from summation
    return float(min(max(value, 0.0), 1.0))
