"""Scalar kernels for the MMD regularizer.

Scores are one-dimensional, so every kernel here maps two reals to a real.
Each kernel evaluates full matrices (:meth:`Kernel.gram`) and the derivative
in its first argument (:meth:`Kernel.grad1_matrix`); the scalar ``eval`` and
``grad1`` are thin wrappers.

:class:`DPKernel` is the base kernel convolved with the privacy noise law,
``κ̃(x, y) = E[κ(x, y + ξ)]``. For a Gaussian base and Gaussian noise it has a
closed form: a wider Gaussian with amplitude ``γ / sqrt(γ² + σ²)``.
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from collections.abc import Callable
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ._runtime import Stream, rng_for
from .errors import ConfigurationError, UnsupportedKernelError

logger = logging.getLogger(__name__)

_MC_CHUNK = 256


class KernelKind(str, Enum):
    GAUSSIAN = "gaussian"
    LAPLACIAN = "laplacian"
    DISTANCE_INDUCED = "distance_induced"


class NoiseKind(str, Enum):
    GAUSSIAN = "gaussian"
    LAPLACIAN = "laplacian"


def _pairwise_diff(x: np.ndarray | float, y: np.ndarray | float) -> np.ndarray:
    xs = np.atleast_1d(np.asarray(x, dtype=np.float64))
    ys = np.atleast_1d(np.asarray(y, dtype=np.float64))
    return xs[:, None] - ys[None, :]


class Kernel(ABC):
    """Symmetric kernel on scalars."""

    kind: KernelKind
    shift_invariant: bool = True
    bounded: bool = True

    @abstractmethod
    def gram(self, x: np.ndarray | float, y: np.ndarray | float) -> np.ndarray:
        """Matrix ``K[i, j] = κ(x_i, y_j)``."""

    @abstractmethod
    def grad1_matrix(self, x: np.ndarray | float, y: np.ndarray | float) -> np.ndarray:
        """Matrix ``G[i, j] = ∂κ(x_i, y_j)/∂x_i``."""

    def eval(self, x: float, y: float) -> float:
        return float(self.gram(x, y)[0, 0])

    def grad1(self, x: float, y: float) -> float:
        return float(self.grad1_matrix(x, y)[0, 0])


class ShiftInvariantKernel(Kernel):
    """Kernel of the form ``κ(x, y) = v(x - y)`` with even ``v``."""

    @abstractmethod
    def profile(self, delta: np.ndarray) -> np.ndarray:
        """``v(delta)``."""

    @abstractmethod
    def profile_derivative(self, delta: np.ndarray) -> np.ndarray:
        """``v'(delta)``; zero at kinks."""

    def gram(self, x: np.ndarray | float, y: np.ndarray | float) -> np.ndarray:
        return self.profile(_pairwise_diff(x, y))

    def grad1_matrix(self, x: np.ndarray | float, y: np.ndarray | float) -> np.ndarray:
        return self.profile_derivative(_pairwise_diff(x, y))


@dataclass(frozen=True)
class GaussianKernel(ShiftInvariantKernel):
    bandwidth: float = 1.0
    kind: KernelKind = field(default=KernelKind.GAUSSIAN, init=False)

    def __post_init__(self) -> None:
        if not self.bandwidth > 0:
            raise ConfigurationError("gaussian bandwidth must be positive", field="bandwidth")

    def profile(self, delta: np.ndarray) -> np.ndarray:
        return np.exp(-(delta * delta) / (2.0 * self.bandwidth**2))

    def profile_derivative(self, delta: np.ndarray) -> np.ndarray:
        return -(delta / self.bandwidth**2) * self.profile(delta)


@dataclass(frozen=True)
class LaplacianKernel(ShiftInvariantKernel):
    scale: float = 1.0
    kind: KernelKind = field(default=KernelKind.LAPLACIAN, init=False)

    def __post_init__(self) -> None:
        if not self.scale > 0:
            raise ConfigurationError("laplacian scale must be positive", field="scale")

    def profile(self, delta: np.ndarray) -> np.ndarray:
        return np.exp(-np.abs(delta) / self.scale)

    def profile_derivative(self, delta: np.ndarray) -> np.ndarray:
        return -(np.sign(delta) / self.scale) * self.profile(delta)


@dataclass(frozen=True)
class DistanceKernel(ShiftInvariantKernel):
    """``κ(x, y) = -|x - y|``; MMD² under it is the energy distance.

    Only conditionally positive definite and unbounded.
    """

    kind: KernelKind = field(default=KernelKind.DISTANCE_INDUCED, init=False)
    bounded: bool = field(default=False, init=False)

    def profile(self, delta: np.ndarray) -> np.ndarray:
        return -np.abs(delta)

    def profile_derivative(self, delta: np.ndarray) -> np.ndarray:
        return -np.sign(delta)


def make_kernel(kind: KernelKind | str, *, bandwidth: float = 1.0, scale: float = 1.0) -> Kernel:
    match KernelKind(kind):
        case KernelKind.GAUSSIAN:
            return GaussianKernel(bandwidth=bandwidth)
        case KernelKind.LAPLACIAN:
            return LaplacianKernel(scale=scale)
        case KernelKind.DISTANCE_INDUCED:
            return DistanceKernel()


@dataclass(frozen=True)
class NoiseSpec:
    """Law of the additive privacy noise ξ: centred Gaussian (std) or Laplace (scale)."""

    kind: NoiseKind
    scale: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if self.scale < 0:
            raise ConfigurationError("noise scale must be non-negative", field="scale")

    def sample(self, rng: np.random.Generator, size: int | tuple[int, ...]) -> np.ndarray:
        if self.kind is NoiseKind.GAUSSIAN:
            return rng.normal(0.0, self.scale, size)
        return rng.laplace(0.0, self.scale, size)


class EvalMode(str, Enum):
    CLOSED_FORM = "closed_form"
    MONTE_CARLO = "monte_carlo"


@dataclass(frozen=True, eq=False)
class DPKernel(Kernel):
    """Base kernel convolved with the noise law.

    In Monte Carlo mode one fixed noise sample is drawn at construction and
    reused for every evaluation, and each draw contributes
    ``½[κ(x, y + ξ) + κ(y, x + ξ)]``, so values are deterministic and exactly
    symmetric.
    """

    base: ShiftInvariantKernel
    noise: NoiseSpec
    mode: EvalMode = EvalMode.CLOSED_FORM
    n_mc: int = 4096
    seed: int = 0
    kind: KernelKind = field(init=False)
    _draws: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", EvalMode(self.mode))
        object.__setattr__(self, "kind", self.base.kind)
        if self.mode is EvalMode.CLOSED_FORM and not self._has_closed_form():
            raise UnsupportedKernelError("closed form exists only for a gaussian base with gaussian noise")
        if self.n_mc < 1:
            raise ConfigurationError("n_mc must be at least 1", field="n_mc")
        draws = np.empty(0)
        if self.mode is EvalMode.MONTE_CARLO:
            draws = self.noise.sample(rng_for(self.seed, Stream.DP_NOISE), self.n_mc)
            draws.setflags(write=False)
        object.__setattr__(self, "_draws", draws)

    def _has_closed_form(self) -> bool:
        return isinstance(self.base, GaussianKernel) and self.noise.kind is NoiseKind.GAUSSIAN

    def equivalent_gaussian(self) -> tuple[float, float]:
        """``(amplitude, bandwidth)`` of the closed form; gaussian/gaussian only."""
        if not self._has_closed_form():
            raise UnsupportedKernelError("no closed form for this base/noise pair")
        assert isinstance(self.base, GaussianKernel)
        var = self.base.bandwidth**2 + self.noise.scale**2
        return self.base.bandwidth / np.sqrt(var), float(np.sqrt(var))

    def _mc_average(self, delta: np.ndarray, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        total = np.zeros_like(delta)
        for start in range(0, self._draws.size, _MC_CHUNK):
            xi = self._draws[start : start + _MC_CHUNK]
            shifted = delta[..., None]
            total += 0.5 * (fn(shifted - xi) + fn(shifted + xi)).sum(axis=-1)
        return total / self._draws.size

    def gram(self, x: np.ndarray | float, y: np.ndarray | float) -> np.ndarray:
        delta = _pairwise_diff(x, y)
        if self.mode is EvalMode.CLOSED_FORM:
            amplitude, width = self.equivalent_gaussian()
            return amplitude * np.exp(-(delta * delta) / (2.0 * width**2))
        return self._mc_average(delta, self.base.profile)

    def grad1_matrix(self, x: np.ndarray | float, y: np.ndarray | float) -> np.ndarray:
        delta = _pairwise_diff(x, y)
        if self.mode is EvalMode.CLOSED_FORM:
            amplitude, width = self.equivalent_gaussian()
            return -(delta / width**2) * amplitude * np.exp(-(delta * delta) / (2.0 * width**2))
        return self._mc_average(delta, self.base.profile_derivative)


def dp_convolve(
    base: Kernel,
    noise: NoiseSpec,
    *,
    mode: EvalMode | str | None = None,
    n_mc: int = 4096,
    seed: int = 0,
) -> DPKernel:
    """Build ``κ̃ = κ * μ_DP``.

    The base must be shift-invariant and bounded; the distance-induced kernel
    is rejected. ``mode=None`` picks the closed form when one exists.
    """
    if not isinstance(base, ShiftInvariantKernel) or not base.bounded:
        raise UnsupportedKernelError(
            f"kind=<{base.kind.value}> | dp convolution needs a bounded shift-invariant kernel"
        )
    if mode is None:
        closed = isinstance(base, GaussianKernel) and noise.kind is NoiseKind.GAUSSIAN
        mode = EvalMode.CLOSED_FORM if closed else EvalMode.MONTE_CARLO
    return DPKernel(base=base, noise=noise, mode=EvalMode(mode), n_mc=n_mc, seed=seed)
