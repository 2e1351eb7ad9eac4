"""Additive noise mechanisms for the shared prediction sets.

Clients never see raw scores of other clients: every broadcast score is
clipped to ``clip_range`` and perturbed, ``Ỹ = clip(Ŷ) + ξ``. In expectation
over the noise, ``C`` evaluated on protected sets under the base kernel equals
``C`` on the clipped sets under the convolved kernel ``κ̃`` (see
:func:`dp_expected_c`). Calibrating the noise scale to a privacy budget is
left to the caller.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ._runtime import Stream, rng_for
from .errors import ConfigurationError
from .fairness import PredictionSets, c_function
from .kernels import DPKernel, Kernel, NoiseKind, NoiseSpec, dp_convolve

logger = logging.getLogger(__name__)


class MechanismKind(str, Enum):
    NONE = "none"
    GAUSSIAN = "gaussian"
    LAPLACIAN = "laplacian"


@dataclass(frozen=True)
class DPMechanism:
    """Noise mechanism: ``scale`` is σ_DP for gaussian and b_DP for laplacian."""

    kind: MechanismKind = MechanismKind.NONE
    scale: float = 0.0
    clip_range: tuple[float, float] = (0.0, 1.0)
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", MechanismKind(self.kind))
        object.__setattr__(self, "clip_range", (float(self.clip_range[0]), float(self.clip_range[1])))
        lo, hi = self.clip_range
        if not lo < hi:
            raise ConfigurationError(f"clip_range must satisfy lo < hi; got {self.clip_range}", field="clip_range")
        if self.active and not self.scale > 0:
            raise ConfigurationError(f"{self.kind.value} mechanism needs a positive scale", field="scale")

    @property
    def active(self) -> bool:
        return self.kind is not MechanismKind.NONE

    def noise(self) -> NoiseSpec:
        if not self.active:
            raise ConfigurationError("inactive mechanism has no noise law", field="kind")
        return NoiseSpec(kind=NoiseKind(self.kind.value), scale=self.scale)

    def clip(self, scores: np.ndarray) -> np.ndarray:
        return np.clip(scores, *self.clip_range)

    def analysis_kernel(self, base: Kernel, *, n_mc: int = 4096) -> Kernel | DPKernel:
        """The kernel whose MMD the protected sets track: ``κ̃`` when active, else ``base``."""
        if not self.active:
            return base
        return dp_convolve(base, self.noise(), n_mc=n_mc, seed=self.seed)


NO_PRIVACY = DPMechanism()


def protect(sets: PredictionSets, mech: DPMechanism) -> PredictionSets:
    """Clip every score and add independent noise.

    Noise comes from the stream of ``(mech.seed, sets.round)``; sets are
    visited in ``(a, j)`` order, so the output depends only on those keys.
    Set sizes are preserved.
    """
    if not mech.active:
        return sets
    rng = rng_for(mech.seed, Stream.DP_NOISE, sets.round)
    noise = mech.noise()
    protected = {key: mech.clip(sets.sets[key]) + noise.sample(rng, sets.sets[key].size) for key in sorted(sets.sets)}
    logger.debug(
        "round=<%d>, kind=<%s>, scale=<%s> | protected prediction sets", sets.round, mech.kind.value, mech.scale
    )
    return PredictionSets(sets=protected, n_sets=sets.n_sets, round=sets.round, excluded=sets.excluded)


def dp_expected_c(
    z: float,
    set0: np.ndarray | Sequence[float],
    set1: np.ndarray | Sequence[float],
    mech: DPMechanism,
    base: Kernel,
    *,
    n_mc: int = 4096,
) -> float:
    """``E[C(z; Ỹ₀, Ỹ₁) | 𝒴₀, 𝒴₁]``: ``C`` under ``κ̃`` on the clipped, unnoised sets."""
    if not mech.active:
        return c_function(z, set0, set1, base)
    kernel = mech.analysis_kernel(base, n_mc=n_mc)
    y0 = mech.clip(np.asarray(set0, dtype=np.float64))
    y1 = mech.clip(np.asarray(set1, dtype=np.float64))
    return c_function(z, y0, y1, kernel)
