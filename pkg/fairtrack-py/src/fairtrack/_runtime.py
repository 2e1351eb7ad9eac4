"""Execution runtime shared by the federated trainers.

Implementation detail of :mod:`fairtrack.federation` and
:mod:`fairtrack.baselines`. This module owns:

* derivation of every random stream from ``(seed, purpose, round, client)``
  so a run is a pure function of its inputs, whatever the execution order
* the bounded worker pool (:class:`ClientPool`) that runs client local updates
  of one round on worker threads and hands results back in client-id order

Nothing here knows about fairness or models; callers pass plain callables.
"""

from __future__ import annotations

import logging
import threading
from collections.abc import Callable, Sequence
from concurrent.futures import Future, ThreadPoolExecutor
from enum import IntEnum
from typing import TypeVar

import numpy as np

logger = logging.getLogger(__name__)

_T = TypeVar("_T")
_R = TypeVar("_R")


class Stream(IntEnum):
    """Purpose tags mixed into the seed of each random stream."""

    PREDICTION_SETS = 1
    DP_NOISE = 2
    CLIENT_SAMPLING = 3
    LOCAL_SGD = 4
    INIT = 5
    SPLIT = 6
    SYNTHETIC = 7


def rng_for(seed: int, purpose: Stream, *keys: int) -> np.random.Generator:
    """Return the generator for ``(seed, purpose, *keys)``.

    Streams for different key tuples are statistically independent; the same
    tuple always yields the same stream. The key count is part of the entropy,
    since ``SeedSequence`` zero-pads and ``(7,)`` would otherwise equal ``(7, 0)``.
    """
    if seed < 0 or any(k < 0 for k in keys):
        raise ValueError(f"seed=<{seed}>, keys=<{keys}> | stream keys must be non-negative")
    return np.random.default_rng(np.random.SeedSequence([seed, int(purpose), len(keys), *keys]))


class ClientPool:
    """Bounded worker pool for the client updates of one round.

    ``workers=1`` runs everything inline on the calling thread, which keeps
    stack traces simple when debugging. Results always come back in the order
    of the submitted items, so downstream reductions are order-fixed.
    """

    def __init__(self, workers: int = 1) -> None:
        if workers < 1:
            raise ValueError(f"workers=<{workers}> | must be at least 1")
        self._workers = workers
        self._executor: ThreadPoolExecutor | None = None
        self._lock = threading.Lock()

    @property
    def workers(self) -> int:
        return self._workers

    def _get_executor(self) -> ThreadPoolExecutor:
        with self._lock:
            if self._executor is None:
                self._executor = ThreadPoolExecutor(max_workers=self._workers, thread_name_prefix="fairtrack-client")
            return self._executor

    def map_ordered(self, fn: Callable[[_T], _R], items: Sequence[_T]) -> list[_R]:
        if self._workers == 1 or len(items) <= 1:
            return [fn(item) for item in items]
        executor = self._get_executor()
        futures: list[Future[_R]] = [executor.submit(fn, item) for item in items]
        return [f.result() for f in futures]

    def close(self) -> None:
        with self._lock:
            executor = self._executor
            self._executor = None
        if executor is not None:
            executor.shutdown(wait=True)

    def __enter__(self) -> ClientPool:
        return self

    def __exit__(self, *_exc: object) -> None:
        self.close()
