import numpy as np
from hypothesis import given, strategies as st

from esdp import rng


@given(st.integers(0, 2**32 - 1), st.integers(1, 20), st.integers(0, 20))
def test_draws_do_not_depend_on_batching(seed, n, split):
    split = min(split, n)
    whole = rng.noise_batch(seed, rng.STREAM_TRAIN, n, 5)
    head = rng.noise_batch(seed, rng.STREAM_TRAIN, split, 5)
    tail = rng.noise_batch(seed, rng.STREAM_TRAIN, n - split, 5, first_path=split)
    assert np.array_equal(whole, np.concatenate([head, tail]))


def test_path_generator_matches_batch():
    batch = rng.normal_paths(7, rng.STREAM_EVAL, 3, (4, 3))
    for k in range(3):
        assert np.array_equal(batch[k], rng.path_generator(7, rng.STREAM_EVAL, k)
                              .standard_normal((4, 3)))


def test_streams_and_seeds_are_distinct():
    a = rng.noise_batch(0, rng.STREAM_TRAIN, 4, 5)
    assert not np.array_equal(a, rng.noise_batch(0, rng.STREAM_HELDOUT, 4, 5))
    assert not np.array_equal(a, rng.noise_batch(1, rng.STREAM_TRAIN, 4, 5))
    assert not np.array_equal(a[0], a[1])


def test_draws_look_standard_normal():
    z = rng.noise_batch(3, rng.STREAM_SCENARIO, 4000, 5).ravel()
    assert abs(z.mean()) < 0.02
    assert abs(z.std() - 1.0) < 0.02
