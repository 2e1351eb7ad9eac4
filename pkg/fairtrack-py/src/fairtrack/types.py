"""Messages exchanged between the server and the clients.

Every value that crosses the client/server boundary is one of the models
below. They carry model parameters, scalar scores and group counts only; raw
features and labels have no representation here. Messages are immutable and
reject unknown fields, and each one serializes to JSON with
``model_dump_json()``.
"""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field

Group = Literal[0, 1]


class _Message(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class GroupCountsReport(_Message):
    """Client → server: ``n_{k,a,j}`` for every group ``a`` and conditioning set ``j``."""

    client_id: int = Field(ge=0)
    n_samples: int = Field(ge=1)
    counts: tuple[tuple[int, ...], tuple[int, ...]]


class ScoreRequest(_Message):
    """Server → client: draw ``n_draws`` scores from rows in ``{A=group, 𝒞_set_index}``.

    With ``exhaustive`` set the client returns every matching score instead.
    """

    round: int = Field(ge=0)
    client_id: int = Field(ge=0)
    group: Group
    set_index: int = Field(ge=0)
    n_draws: int = Field(ge=0)
    exhaustive: bool = False


class ScoreReport(_Message):
    round: int = Field(ge=0)
    client_id: int = Field(ge=0)
    group: Group
    set_index: int = Field(ge=0)
    scores: tuple[float, ...]


class ScoreSet(_Message):
    group: Group
    set_index: int = Field(ge=0)
    scores: tuple[float, ...]


class RoundBroadcast(_Message):
    """Server → clients at the start of a round: ``θᵗ`` and the prediction sets."""

    round: int = Field(ge=0)
    params: tuple[float, ...]
    n_sets: int = Field(ge=1)
    sets: tuple[ScoreSet, ...] = ()
    excluded: tuple[int, ...] = ()


class ModelUpdate(_Message):
    """Client → server: local parameters after the round's local steps."""

    round: int = Field(ge=0)
    client_id: int = Field(ge=0)
    params: tuple[float, ...]
    empty_group_batches: int = Field(default=0, ge=0)


__all__ = [
    "GroupCountsReport",
    "ModelUpdate",
    "RoundBroadcast",
    "ScoreReport",
    "ScoreRequest",
    "ScoreSet",
]
