"""Counter-based random streams.

Every path gets its own Philox generator whose key comes from the master
seed and a stream label, and whose counter encodes the path index.  Draws
for path ``k`` therefore never depend on how paths are batched or which
thread produced them.
"""

from __future__ import annotations

import numpy as np

# stream labels; keep stable, outputs depend on them
STREAM_TRAIN = 1
STREAM_HELDOUT = 2
STREAM_PILOT = 3
STREAM_EVAL = 4
STREAM_INIT = 5
STREAM_SCENARIO = 6
STREAM_VALIDATION = 7


def _key(seed: int, stream: int) -> np.ndarray:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream),))
    return ss.generate_state(2, dtype=np.uint64)


def path_generator(seed: int, stream: int, path: int) -> np.random.Generator:
    bitgen = np.random.Philox(key=_key(seed, stream),
                              counter=np.array([0, 0, path, 0], dtype=np.uint64))
    return np.random.Generator(bitgen)


def normal_paths(seed: int, stream: int, n_paths: int, shape, first_path: int = 0) -> np.ndarray:
    """Standard normal draws of ``shape`` for paths ``first_path ...``.

    Returns an array of shape ``(n_paths, *shape)``.
    """
    shape = tuple(np.atleast_1d(shape))
    out = np.empty((n_paths,) + shape)
    key = _key(seed, stream)
    counter = np.zeros(4, dtype=np.uint64)
    for k in range(n_paths):
        counter[2] = first_path + k
        gen = np.random.Generator(np.random.Philox(key=key, counter=counter))
        out[k] = gen.standard_normal(shape)
    return out


def noise_batch(seed: int, stream: int, n_paths: int, horizon: int, first_path: int = 0
                ) -> np.ndarray:
    """Noise paths ``(n_paths, horizon, 3)`` ordered (z_beta, z_gamma, z_delta)."""
    return normal_paths(seed, stream, n_paths, (horizon, 3), first_path)


def generator(seed: int, stream: int) -> np.random.Generator:
    return path_generator(seed, stream, 0)
