"""Deterministic synthetic datasets: sorted distinct u64 keys.

Four key distributions, all seeded through numpy's Generator so every
artifact is reproducible from (n, distribution, seed):

    udense     0, 1, ..., n-1 (every prediction is exact)
    usparse    uniform over the full u64 domain
    normal     mean 2^63, sd 2^60, clipped to the domain
    lognormal  heavy tail: exp(N(0, 2)) scaled by 2^48

Continuous draws are deduplicated and topped up until n distinct keys
exist; values equal keys so any tuple can be verified in place.
"""

from __future__ import annotations

import os

import numpy as np

from . import tablestore

DISTRIBUTIONS = ("udense", "usparse", "normal", "lognormal")

_U64_MAX_FLOAT = np.nextafter(2.0**64, 0)  # largest double below 2^64


def _draw(rng: np.random.Generator, distribution: str, size: int):
    if distribution == "usparse":
        return rng.integers(0, 2**64, size=size, dtype=np.uint64)
    if distribution == "normal":
        x = rng.normal(2.0**63, 2.0**60, size=size)
    elif distribution == "lognormal":
        x = rng.lognormal(0.0, 2.0, size=size) * 2.0**48
    else:
        raise ValueError(f"unknown distribution {distribution!r}")
    return np.clip(x, 0.0, _U64_MAX_FLOAT).astype(np.uint64)


def gen_keys(n: int, distribution: str, seed: int) -> np.ndarray:
    """n sorted distinct keys drawn from the named distribution."""
    if n <= 0:
        raise ValueError("n must be positive")
    if distribution not in DISTRIBUTIONS:
        raise ValueError(f"unknown distribution {distribution!r}")
    if distribution == "udense":
        return np.arange(n, dtype=np.uint64)
    rng = np.random.default_rng(seed)
    keys = np.unique(_draw(rng, distribution, n))
    while len(keys) < n:
        # redraw exactly the deficit: no overshoot, so no tail trimming
        extra = _draw(rng, distribution, n - len(keys))
        keys = np.unique(np.concatenate([keys, extra]))
    return keys


def gen_table(path, n: int, distribution: str, seed: int,
              stats: tablestore.IoStats | None = None) -> int:
    """Write a sorted table of n generated tuples (value = key)."""
    keys = gen_keys(n, distribution, seed)
    tablestore.write_table(path, keys, keys, sorted_keys=True, stats=stats)
    return n


def sample_keys(keys: np.ndarray, ratio: float, seed: int) -> np.ndarray:
    """Sorted sample without replacement; ratio 1 returns keys unchanged."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError("ratio must be in (0, 1]")
    if ratio == 1.0:
        return keys
    m = max(1, round(len(keys) * ratio))
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(keys), size=m, replace=False)
    picks.sort()
    return keys[picks]


def sample_table(src, dst, ratio: float, seed: int,
                 stats: tablestore.IoStats | None = None) -> int:
    """Sample a sorted table into a smaller sorted one (value = key kept)."""
    keys, values = tablestore.read_table(src)
    if ratio == 1.0:
        out_k, out_v = keys, values
    else:
        out_k = sample_keys(keys, ratio, seed)
        idx = np.searchsorted(keys, out_k)
        out_v = values[idx]
    tablestore.write_table(dst, out_k, out_v, sorted_keys=True, stats=stats)
    return len(out_k)


def shuffle_table(src, dst, seed: int,
                  stats: tablestore.IoStats | None = None) -> int:
    """Rewrite a table with its tuples in a random order."""
    keys, values = tablestore.read_table(src)
    perm = np.random.default_rng(seed).permutation(len(keys))
    tablestore.write_table(dst, keys[perm], values[perm],
                           sorted_keys=False, stats=stats)
    return len(keys)


def ingest_raw(raw_path, table_path, sort: bool = True,
               stats: tablestore.IoStats | None = None) -> int:
    """Convert packed little-endian (key, value) u64 pairs into a table.

    With sort=True the tuples are ordered by key and duplicate keys are
    rejected; otherwise they are written as-is into an unsorted table.
    """
    nbytes = os.path.getsize(raw_path)
    if nbytes % 16:
        raise ValueError("raw input is not a whole number of 16-byte pairs")
    flat = np.fromfile(raw_path, dtype="<u8")
    keys, values = flat[0::2], flat[1::2]
    if sort:
        order = np.argsort(keys, kind="stable")
        keys, values = keys[order], values[order]
        if len(keys) > 1 and bool(np.any(keys[1:] == keys[:-1])):
            raise ValueError("duplicate keys in raw input")
    tablestore.write_table(table_path, keys, values,
                           sorted_keys=sort, stats=stats)
    return len(keys)


def ingest_keys(raw_path, table_path, sorted_keys: bool = True,
                skip_bytes: int = 0,
                stats: tablestore.IoStats | None = None) -> int:
    """Wrap a packed little-endian u64 key dump into a table (value = key).

    skip_bytes drops a foreign header (such as a leading count word)
    before the keys start. With sorted_keys the dump must already be
    sorted and duplicate-free; the writer rejects it otherwise.
    """
    nbytes = os.path.getsize(raw_path) - skip_bytes
    if nbytes < 0 or nbytes % 8:
        raise ValueError("key dump is not a whole number of u64 keys")
    keys = np.fromfile(raw_path, dtype="<u8", offset=skip_bytes)
    tablestore.write_table(table_path, keys, keys, sorted_keys=sorted_keys,
                           stats=stats)
    return len(keys)
