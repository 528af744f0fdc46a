"""Counter-based Brownian increments.

Each path draws from its own Philox stream keyed by ``(seed, path_index)``;
the volatility and price drivers use disjoint counter blocks. A path's
increments therefore depend only on (seed, path_index, stream), never on how
many other paths were drawn before it or on which worker drew them.
"""

import numpy as np

from .errors import InvalidArgumentError

_U64 = (1 << 64) - 1

VOL_STREAM = 0
PRICE_STREAM = 1


def check_seed(seed) -> int:
    if isinstance(seed, bool) or int(seed) != seed or not 0 <= int(seed) <= _U64:
        raise InvalidArgumentError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    return int(seed)


def derive_seed(seed: int, *labels: int) -> int:
    """Sub-seed for a labelled job (e.g. one maturity of a term structure)."""
    ss = np.random.SeedSequence([check_seed(seed), *[int(x) for x in labels]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def path_generator(seed: int, path_index: int, stream: int) -> np.random.Generator:
    if path_index < 0:
        raise InvalidArgumentError(f"path_index must be non-negative, got {path_index}")
    key = np.array([check_seed(seed), path_index], dtype=np.uint64)
    counter = np.array([0, 0, 0, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def standard_normals(seed: int, path_indices, n: int, stream: int) -> np.ndarray:
    """(len(path_indices), n) standard normals; row k belongs to path_indices[k].

    Equivalent to ``path_generator(seed, p, stream).standard_normal(n)`` per
    row; one bit generator is re-keyed per row, which is cheaper than building
    a fresh generator each time.
    """
    seed = check_seed(seed)
    idx = np.atleast_1d(np.asarray(path_indices, dtype=np.int64))
    if idx.size and idx.min() < 0:
        raise InvalidArgumentError("path indices must be non-negative")
    out = np.empty((idx.size, n))
    bitgen = np.random.Philox(0)
    gen = np.random.Generator(bitgen)
    counter = np.array([0, 0, 0, stream], dtype=np.uint64)
    empty = np.zeros(4, dtype=np.uint64)
    for k, p in enumerate(idx):
        bitgen.state = {
            "bit_generator": "Philox",
            "state": {"counter": counter.copy(), "key": np.array([seed, p], dtype=np.uint64)},
            "buffer": empty.copy(),
            "buffer_pos": 4,
            "has_uint32": 0,
            "uinteger": 0,
        }
        out[k] = gen.standard_normal(n)
    return out


def brownian_increments(seed: int, path_indices, n: int, dt: float):
    """Volatility-driver and price-driver increments, each (P, n), scale sqrt(dt)."""
    sq = np.sqrt(dt)
    dB1 = standard_normals(seed, path_indices, n, VOL_STREAM) * sq
    dB2 = standard_normals(seed, path_indices, n, PRICE_STREAM) * sq
    return dB1, dB2
