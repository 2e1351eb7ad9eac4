"""Parametric binary predictors with analytic gradients.

Two architectures are supported: logistic regression and a two-layer network
(ReLU hidden layer, sigmoid output). Parameters are one flat vector θ; the
layouts are

* logistic: ``[w (d), b (1)]``
* mlp: ``[W1 (H×d, row-major), b1 (H), w2 (H), b2 (1)]``

Every gradient in the package goes through :meth:`Model.backward`, a
vector-Jacobian product ``Σ_i c_i ∇θ hθ(x_i)`` over a batch.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, replace
from enum import Enum
from os import PathLike
from pathlib import Path

import numpy as np
from scipy.special import expit

from ._runtime import Stream, rng_for
from .data import TabularDataset
from .errors import CheckpointError, DataValidationError, DimensionMismatchError

logger = logging.getLogger(__name__)

LOSS_CLAMP = 1e-7
DEFAULT_HIDDEN_UNITS = 16


class Architecture(str, Enum):
    LOGISTIC = "logistic"
    MLP = "mlp"


def param_count(architecture: Architecture, input_dim: int, hidden_units: int = DEFAULT_HIDDEN_UNITS) -> int:
    if architecture is Architecture.LOGISTIC:
        return input_dim + 1
    return input_dim * hidden_units + hidden_units + hidden_units + 1


@dataclass(frozen=True, eq=False)
class Model:
    """Immutable predictor ``hθ(x) ∈ (0, 1)``."""

    architecture: Architecture
    input_dim: int
    params: np.ndarray
    hidden_units: int = 0

    def __post_init__(self) -> None:
        arch = Architecture(self.architecture)
        object.__setattr__(self, "architecture", arch)
        if self.input_dim < 1:
            raise DimensionMismatchError(f"input_dim must be at least 1; got {self.input_dim}")
        if arch is Architecture.MLP and self.hidden_units < 1:
            raise DimensionMismatchError("mlp needs at least one hidden unit")
        if arch is Architecture.LOGISTIC and self.hidden_units != 0:
            object.__setattr__(self, "hidden_units", 0)
        params = np.array(self.params, dtype=np.float64, copy=True).reshape(-1)
        expected = param_count(arch, self.input_dim, self.hidden_units)
        if params.size != expected:
            raise DimensionMismatchError(
                f"{arch.value} with d={self.input_dim} expects {expected} params; got {params.size}"
            )
        params.setflags(write=False)
        object.__setattr__(self, "params", params)

    @property
    def n_params(self) -> int:
        return int(self.params.size)

    def with_params(self, params: np.ndarray) -> Model:
        return replace(self, params=params)

    def _unpack_mlp(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
        d, h = self.input_dim, self.hidden_units
        w1 = self.params[: d * h].reshape(h, d)
        b1 = self.params[d * h : d * h + h]
        w2 = self.params[d * h + h : d * h + 2 * h]
        return w1, b1, w2, float(self.params[-1])

    def _check_batch(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise DimensionMismatchError(
                f"expected inputs with {self.input_dim} features; got shape {np.shape(features)}"
            )
        return x

    def predict_batch(self, features: np.ndarray) -> np.ndarray:
        x = self._check_batch(features)
        if self.architecture is Architecture.LOGISTIC:
            return expit(x @ self.params[:-1] + self.params[-1])
        w1, b1, w2, b2 = self._unpack_mlp()
        hidden = np.maximum(x @ w1.T + b1, 0.0)
        return expit(hidden @ w2 + b2)

    def predict(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.input_dim,):
            raise DimensionMismatchError(f"expected a vector of {self.input_dim} features; got shape {x.shape}")
        return float(self.predict_batch(x)[0])

    def backward(self, features: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
        """Return ``Σ_i cotangent[i] · ∇θ hθ(features[i])``."""
        x = self._check_batch(features)
        c = np.asarray(cotangent, dtype=np.float64).reshape(-1)
        if c.shape[0] != x.shape[0]:
            raise DimensionMismatchError(f"cotangent has {c.shape[0]} entries for {x.shape[0]} rows")
        if self.architecture is Architecture.LOGISTIC:
            p = expit(x @ self.params[:-1] + self.params[-1])
            g_out = c * p * (1.0 - p)
            return np.concatenate([x.T @ g_out, [g_out.sum()]])

        w1, b1, w2, b2 = self._unpack_mlp()
        pre = x @ w1.T + b1
        hidden = np.maximum(pre, 0.0)
        p = expit(hidden @ w2 + b2)
        g_out = c * p * (1.0 - p)
        # ReLU'(0) is taken as 0.
        g_pre = np.outer(g_out, w2) * (pre > 0.0)
        return np.concatenate([(g_pre.T @ x).reshape(-1), g_pre.sum(axis=0), hidden.T @ g_out, [g_out.sum()]])


def init_model(
    architecture: Architecture | str,
    input_dim: int,
    hidden_units: int = DEFAULT_HIDDEN_UNITS,
    seed: int = 0,
) -> Model:
    """Weights i.i.d. uniform on ``±1/sqrt(fan_in)``, biases zero."""
    arch = Architecture(architecture)
    rng = rng_for(seed, Stream.INIT)
    bound_in = 1.0 / np.sqrt(input_dim)
    if arch is Architecture.LOGISTIC:
        params = np.concatenate([rng.uniform(-bound_in, bound_in, input_dim), [0.0]])
        return Model(architecture=arch, input_dim=input_dim, params=params)
    w1 = rng.uniform(-bound_in, bound_in, hidden_units * input_dim)
    bound_out = 1.0 / np.sqrt(hidden_units)
    w2 = rng.uniform(-bound_out, bound_out, hidden_units)
    params = np.concatenate([w1, np.zeros(hidden_units), w2, [0.0]])
    return Model(architecture=arch, input_dim=input_dim, params=params, hidden_units=hidden_units)


def predict(model: Model, x: np.ndarray) -> float:
    return model.predict(x)


def grad_prediction(model: Model, x: np.ndarray) -> np.ndarray:
    """Exact ``∂hθ(x)/∂θ`` for one input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.input_dim,):
        raise DimensionMismatchError(f"expected a vector of {model.input_dim} features; got shape {x.shape}")
    return model.backward(x.reshape(1, -1), np.ones(1))


def per_sample_loss(predictions: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Binary cross-entropy with predictions clamped to ``[1e-7, 1 - 1e-7]``."""
    p = np.clip(predictions, LOSS_CLAMP, 1.0 - LOSS_CLAMP)
    return -(labels * np.log(p) + (1 - labels) * np.log1p(-p))


def loss_derivative(predictions: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """``∂L(ŷ, y)/∂ŷ``; zero where the clamp is active."""
    inside = (predictions > LOSS_CLAMP) & (predictions < 1.0 - LOSS_CLAMP)
    p = np.clip(predictions, LOSS_CLAMP, 1.0 - LOSS_CLAMP)
    return np.where(inside, (1 - labels) / (1.0 - p) - labels / p, 0.0)


def task_loss(model: Model, batch: TabularDataset, sample_weights: np.ndarray | None = None) -> float:
    losses = per_sample_loss(model.predict_batch(batch.features), batch.labels)
    if sample_weights is None:
        return float(losses.mean())
    return float(np.dot(sample_weights, losses) / sample_weights.sum())


def grad_task_loss(model: Model, batch: TabularDataset) -> np.ndarray:
    """Mean over the batch of ``∇θ L(hθ(x), y)``."""
    if batch.n_samples == 0:
        raise DataValidationError("cannot take the loss gradient of an empty batch")
    predictions = model.predict_batch(batch.features)
    return model.backward(batch.features, loss_derivative(predictions, batch.labels) / batch.n_samples)


def accuracy(model: Model, dataset: TabularDataset, sample_weights: np.ndarray | None = None) -> float:
    correct = ((model.predict_batch(dataset.features) >= 0.5).astype(np.int64) == dataset.labels).astype(np.float64)
    if sample_weights is None:
        return float(correct.mean())
    return float(np.dot(sample_weights, correct) / sample_weights.sum())


# --- Checkpoints ----------------------------------------------------------

_MAGIC = b"FTMD"
_VERSION = 1
_HEADER = struct.Struct("<4sBBIII")
_ARCH_TAGS = {Architecture.LOGISTIC: 0, Architecture.MLP: 1}
_TAG_ARCHS = {v: k for k, v in _ARCH_TAGS.items()}


def model_to_bytes(model: Model) -> bytes:
    """Header (magic, version, architecture, dims) then little-endian float64 parameters."""
    header = _HEADER.pack(
        _MAGIC, _VERSION, _ARCH_TAGS[model.architecture], model.input_dim, model.hidden_units, model.n_params
    )
    return header + model.params.astype("<f8").tobytes()


def model_from_bytes(blob: bytes) -> Model:
    if len(blob) < _HEADER.size:
        raise CheckpointError("checkpoint is shorter than its header")
    magic, version, tag, input_dim, hidden, n_params = _HEADER.unpack_from(blob)
    if magic != _MAGIC:
        raise CheckpointError(f"bad checkpoint magic {magic!r}")
    if version != _VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if tag not in _TAG_ARCHS:
        raise CheckpointError(f"unknown architecture tag {tag}")
    body = blob[_HEADER.size :]
    if len(body) != 8 * n_params:
        raise CheckpointError(f"expected {n_params} parameters; body holds {len(body)} bytes")
    params = np.frombuffer(body, dtype="<f8").astype(np.float64)
    try:
        return Model(architecture=_TAG_ARCHS[tag], input_dim=input_dim, params=params, hidden_units=hidden)
    except DimensionMismatchError as exc:
        raise CheckpointError(str(exc)) from exc


def save_checkpoint(model: Model, path: str | PathLike[str]) -> Path:
    out = Path(path)
    out.write_bytes(model_to_bytes(model))
    logger.debug("path=<%s>, n_params=<%d> | wrote checkpoint", out, model.n_params)
    return out


def load_checkpoint(path: str | PathLike[str]) -> Model:
    return model_from_bytes(Path(path).read_bytes())
