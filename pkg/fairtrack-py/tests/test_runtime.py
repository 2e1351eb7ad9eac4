from __future__ import annotations

import threading

import numpy as np
import pytest

from fairtrack._runtime import ClientPool, Stream, rng_for


def test_rng_for_same_keys_same_stream():
    a = rng_for(3, Stream.LOCAL_SGD, 1, 2).random(5)
    b = rng_for(3, Stream.LOCAL_SGD, 1, 2).random(5)
    np.testing.assert_array_equal(a, b)


def test_rng_for_differs_by_purpose_and_keys():
    base = rng_for(3, Stream.LOCAL_SGD, 1, 2).random(5)
    assert not np.array_equal(base, rng_for(3, Stream.CLIENT_SAMPLING, 1, 2).random(5))
    assert not np.array_equal(base, rng_for(3, Stream.LOCAL_SGD, 2, 1).random(5))
    assert not np.array_equal(base, rng_for(4, Stream.LOCAL_SGD, 1, 2).random(5))


def test_rng_for_trailing_zero_key_is_a_new_stream():
    assert not np.array_equal(rng_for(3, Stream.DP_NOISE).random(5), rng_for(3, Stream.DP_NOISE, 0).random(5))
    assert not np.array_equal(rng_for(3, Stream.SYNTHETIC, 0).random(5), rng_for(3, Stream.SYNTHETIC, 0, 0).random(5))


def test_rng_for_rejects_negative_keys():
    with pytest.raises(ValueError):
        rng_for(0, Stream.INIT, -1)


def test_client_pool_inline_preserves_order():
    with ClientPool(workers=1) as pool:
        assert pool.map_ordered(lambda k: k * k, [3, 1, 2]) == [9, 1, 4]


def test_client_pool_threads_return_results_in_submission_order():
    seen = set()

    def work(k: int) -> int:
        seen.add(threading.current_thread().name)
        return k + 100

    with ClientPool(workers=4) as pool:
        assert pool.map_ordered(work, list(range(20))) == [k + 100 for k in range(20)]
    assert any(name.startswith("fairtrack-client") for name in seen)


def test_client_pool_rejects_zero_workers():
    with pytest.raises(ValueError):
        ClientPool(workers=0)
