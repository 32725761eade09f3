"""CDF-guided partitioning with fixed extents and bounded spill.

A small uniform sample of a table's keys, sorted and fitted with an
error-bounded linear model, approximates the table's CDF. A key's partition
comes from two integer compositions of monotone maps (no floats leak into
placement, so equal keys always land together and partition ids are
non-decreasing in key):

    est  = (rp * N) // s        rp: clamped sample-rank prediction
    part = (est * P) // N

The partition data file is laid out in fixed extents: partition p owns
blocks [p * E, (p+1) * E) where E covers 1.5x the average partition, plus
at most one spill extent of 2 * E blocks allocated on demand past the
extent region. A partition outgrowing extent + spill (4.5x average) raises
PartitionOverflowError. Tuples land in arrival order; sorting a partition
is deferred to whoever reads it.

Scattering is chunked: each source chunk is grouped by destination and each
(chunk, partition) group goes out as one pwrite (two when it straddles the
extent/spill boundary), with IoStats counting the blocks each call touches.
"""

from __future__ import annotations

import os
import struct
import time
from dataclasses import dataclass

import numpy as np

from . import pla
from .joins import JoinResult, _check_ascending, _search_comparisons
from .tablestore import (BLOCK_BYTES, TUPLES_PER_BLOCK, IoStats, TableReader,
                         TableWriter, _interleave)

MAGIC = b"PMAP"
VERSION = 1
_HEAD = struct.Struct("<4sIQQQ")
_REC = np.dtype([("offset_block", "<u8"), ("count", "<u8"),
                 ("spill_block", "<u8")])
SPILL_NONE = 0xFFFFFFFFFFFFFFFF


class PartitionOverflowError(RuntimeError):
    """A partition outgrew its extent plus spill extent."""


class CorruptMapError(ValueError):
    """Serialized partition map fails structural validation."""


@dataclass
class SampledModel:
    """Monotone key -> partition map built on a sorted key sample."""

    index: pla.PlaIndex
    n_total: int
    n_parts: int

    def partition_of_batch(self, keys) -> np.ndarray:
        rp, _ = self.index.predict_batch(keys)
        est = (rp * self.n_total) // self.index.n_keys
        return (est * self.n_parts) // self.n_total

    def partition_of(self, key: int) -> int:
        return int(self.partition_of_batch(
            np.array([key], dtype=np.uint64))[0])


def train_sampled_model(table_path, n_parts: int, fraction: float = 0.01,
                        eps_model: int = 16, seed: int = 0,
                        stats: IoStats | None = None) -> SampledModel:
    """One sequential pass extracting a pre-chosen uniform rank sample."""
    if n_parts < 1:
        raise ValueError("need at least one partition")
    if not 0.0 < fraction <= 1.0:
        raise ValueError("sample fraction must be in (0, 1]")
    with TableReader(table_path, stats=stats) as r:
        n = r.tuple_count
        if n < 2:
            raise ValueError("table too small to model")
        s = min(n, max(2, round(n * fraction)))
        rng = np.random.default_rng(seed)
        ranks = np.sort(rng.choice(n, size=s, replace=False))
        sample = np.empty(s, dtype=np.uint64)
        base = 0
        taken = 0
        for keys, _ in r.scan():
            in_chunk = ranks[(ranks >= base) & (ranks < base + len(keys))]
            if len(in_chunk):
                sample[taken:taken + len(in_chunk)] = \
                    keys[in_chunk - base]
                taken += len(in_chunk)
            base += len(keys)
    sample = np.unique(sample[:taken])  # unsorted sources: sort the sample
    if len(sample) < 2:
        raise ValueError("sample collapsed to fewer than 2 distinct keys")
    index = pla.build_pla(sample, eps_model)
    return SampledModel(index, n, n_parts)


@dataclass
class PartitionMap:
    n_parts: int
    n_total: int
    ext_blocks: int
    offsets: np.ndarray       # first extent block per partition
    counts: np.ndarray        # tuples per partition
    spill_blocks: np.ndarray  # spill extent start, SPILL_NONE if unused

    @property
    def ext_capacity(self) -> int:
        return self.ext_blocks * TUPLES_PER_BLOCK

    @property
    def spill_capacity(self) -> int:
        return 2 * self.ext_capacity

    def serialize(self) -> bytes:
        head = _HEAD.pack(MAGIC, VERSION, self.n_parts, self.n_total,
                          self.ext_blocks)
        recs = np.empty(self.n_parts, dtype=_REC)
        recs["offset_block"] = self.offsets
        recs["count"] = self.counts
        recs["spill_block"] = self.spill_blocks
        return head + recs.tobytes()

    def save(self, path) -> int:
        data = self.serialize()
        with open(path, "wb") as f:
            f.write(data)
        return len(data)


def load_map(path) -> PartitionMap:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _HEAD.size:
        raise CorruptMapError("truncated header")
    magic, version, p, n, ext = _HEAD.unpack_from(data, 0)
    if magic != MAGIC:
        raise CorruptMapError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CorruptMapError(f"unsupported version {version}")
    if len(data) != _HEAD.size + p * _REC.itemsize or p < 1:
        raise CorruptMapError("partition count disagrees with payload")
    recs = np.frombuffer(data, dtype=_REC, offset=_HEAD.size)
    pm = PartitionMap(p, n, ext,
                      recs["offset_block"].astype(np.uint64),
                      recs["count"].astype(np.int64),
                      recs["spill_block"].astype(np.uint64))
    if not np.array_equal(pm.offsets,
                          np.arange(p, dtype=np.uint64) * np.uint64(ext)):
        raise CorruptMapError("extent offsets are not the fixed layout")
    if int(pm.counts.sum()) != n:
        raise CorruptMapError("partition counts do not sum to table size")
    needs_spill = pm.counts > pm.ext_capacity
    if not np.array_equal(needs_spill, pm.spill_blocks != SPILL_NONE):
        raise CorruptMapError("spill allocation disagrees with counts")
    return pm


def partition_table(src_path, data_path, model: SampledModel,
                    stats: IoStats | None = None,
                    chunk_blocks: int = 256) -> PartitionMap:
    """Scatter src into the extent file; returns the map (caller saves it)."""
    stats = stats if stats is not None else IoStats()
    P = model.n_parts
    with TableReader(src_path, stats=stats) as r:
        n = r.tuple_count
        if n != model.n_total:
            raise ValueError(
                f"model was trained for {model.n_total} tuples, "
                f"table holds {n}")
        ext_tuples = -(-3 * n // (2 * P))  # ceil(1.5 * N / P)
        ext_blocks = -(-ext_tuples // TUPLES_PER_BLOCK)
        ext_cap = ext_blocks * TUPLES_PER_BLOCK
        spill_cap = 2 * ext_cap
        counts = np.zeros(P, dtype=np.int64)
        spills = np.full(P, SPILL_NONE, dtype=np.uint64)
        next_spill = P * ext_blocks
        fd = os.open(os.fspath(data_path),
                     os.O_RDWR | os.O_CREAT | os.O_TRUNC, 0o644)
        try:
            os.truncate(fd, P * ext_blocks * BLOCK_BYTES)
            for keys, values in r.scan(chunk_blocks):
                parts = model.partition_of_batch(keys)
                order = np.argsort(parts, kind="stable")
                sp = parts[order]
                words = _interleave(keys[order], values[order])
                edges = np.flatnonzero(np.diff(sp)) + 1
                bounds = np.concatenate(([0], edges, [len(sp)]))
                for a, b in zip(bounds[:-1], bounds[1:]):
                    p = int(sp[a])
                    group = words[2 * a:2 * b]
                    tail = int(counts[p])
                    g = b - a
                    if tail + g > ext_cap + spill_cap:
                        raise PartitionOverflowError(
                            f"partition {p} exceeds extent plus spill "
                            f"({tail + g} > {ext_cap + spill_cap} tuples)")
                    done = 0
                    while done < g:
                        if tail < ext_cap:
                            room = ext_cap - tail
                            off = (p * ext_blocks * BLOCK_BYTES
                                   + tail * 16)
                        else:
                            if spills[p] == SPILL_NONE:
                                spills[p] = next_spill
                                next_spill += 2 * ext_blocks
                            room = ext_cap + spill_cap - tail
                            off = (int(spills[p]) * BLOCK_BYTES
                                   + (tail - ext_cap) * 16)
                        take = min(g - done, room)
                        buf = group[2 * done:2 * (done + take)]
                        os.pwrite(fd, buf.tobytes(), off)
                        stats.note_write(off, take * 16)
                        tail += take
                        done += take
                    counts[p] = tail
        finally:
            os.close(fd)
    return PartitionMap(P, n, ext_blocks,
                        np.arange(P, dtype=np.uint64)
                        * np.uint64(ext_blocks),
                        counts, spills)


def _read_part(fd: int, pmap: PartitionMap, p: int, stats: IoStats):
    """Partition p's tuples in arrival order; 1 call per extent touched."""
    count = int(pmap.counts[p])
    if count == 0:
        e = np.empty(0, dtype=np.uint64)
        return e, e
    pieces = []
    in_ext = min(count, pmap.ext_capacity)
    spans = [(int(pmap.offsets[p]), in_ext)]
    if count > in_ext:
        spans.append((int(pmap.spill_blocks[p]), count - in_ext))
    for block, ntuples in spans:
        nbytes = ntuples * 16
        raw = os.pread(fd, -(-nbytes // BLOCK_BYTES) * BLOCK_BYTES,
                       block * BLOCK_BYTES)
        stats.note_read(-(-nbytes // BLOCK_BYTES))
        pieces.append(np.frombuffer(raw, dtype=np.uint64)[:2 * ntuples])
    words = np.concatenate(pieces) if len(pieces) > 1 else pieces[0]
    return words[0::2], words[1::2]


def read_partition(data_path, pmap: PartitionMap, p: int,
                   stats: IoStats | None = None):
    if not 0 <= p < pmap.n_parts:
        raise IndexError(f"partition {p} out of range")
    stats = stats if stats is not None else IoStats()
    fd = os.open(os.fspath(data_path), os.O_RDONLY)
    try:
        return _read_part(fd, pmap, p, stats)
    finally:
        os.close(fd)


def unclustered_join(outer_path, data_path, pmap: PartitionMap,
                     model: SampledModel, out_path) -> JoinResult:
    """Join ascending probes against a partitioned inner table.

    Probe partition ids are non-decreasing, so one cached partition
    (sorted lazily on first touch) serves each run of probes. Comparisons
    charge the in-partition binary search: ceil(log2 count) + 1 per probe.
    """
    so, si, sw = IoStats(), IoStats(), IoStats()
    t0 = time.perf_counter()
    comparisons = 0
    matches = 0
    fd = os.open(os.fspath(data_path), os.O_RDONLY)
    try:
        with TableReader(outer_path, stats=so) as ro, \
                TableWriter(out_path, stats=sw) as w:
            prev_last = None
            cached_p = -1
            ck = cv = None
            for keys, _ in ro.scan():
                if len(keys) == 0:
                    continue
                prev_last = _check_ascending(keys, prev_last)
                parts = model.partition_of_batch(keys)
                edges = np.flatnonzero(np.diff(parts)) + 1
                bounds = np.concatenate(([0], edges, [len(parts)]))
                for a, b in zip(bounds[:-1], bounds[1:]):
                    p = int(parts[a])
                    if p != cached_p:
                        raw_k, raw_v = _read_part(fd, pmap, p, si)
                        order = np.argsort(raw_k, kind="stable")
                        ck, cv = raw_k[order], raw_v[order]
                        cached_p = p
                    qs = keys[a:b]
                    comparisons += (b - a) * int(
                        _search_comparisons(np.array([len(ck)]))[0])
                    if len(ck) == 0:
                        continue
                    at = np.searchsorted(ck, qs, side="left")
                    hit = at < len(ck)
                    eq = np.zeros(b - a, dtype=bool)
                    if hit.any():
                        eq[hit] = ck[at[hit]] == qs[hit]
                    nm = int(np.count_nonzero(eq))
                    if nm:
                        w.append(qs[eq], cv[at[eq]])
                        matches += nm
            n_outer = ro.tuple_count
    finally:
        os.close(fd)
    dt = time.perf_counter() - t0
    return JoinResult("partition_join", n_outer, pmap.n_total, matches,
                      comparisons, dt, so, si, sw, os.fspath(out_path))
