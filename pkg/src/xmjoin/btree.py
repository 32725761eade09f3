"""Block-aligned B-tree indexes over sorted u64 keys.

Two variants share the 4096-byte node discipline:

PivotBtree is the static read path: one pivot per 256-tuple data block
(the block's first key), bulk-loaded bottom-up into implicit level-order
nodes of 256 keys + 256 child slots. A lookup descends height levels,
binary-searching each node (8 comparisons per level), and lands on a
one-block search window. In memory the descent is computed with a flat
searchsorted over the pivot array, which yields the identical window;
route comparisons are accounted as 8 * height per probe.

DynamicBtree is the write path used for update-churn measurements: leaf
blocks hold up to 255 tuples behind an in-memory directory of (min key ->
leaf block), a fixed-size leaf pool with clock eviction, and midpoint
splits. Leaf reads and dirty-leaf writebacks go through real file I/O and
are counted in IoStats; the one-block file header is metadata and is not.
"""

from __future__ import annotations

import bisect
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .pla import SearchWindow
from .tablestore import BLOCK_BYTES, TUPLES_PER_BLOCK, IoStats

FANOUT = 256
NODE_BYTES = BLOCK_BYTES
SENTINEL = np.uint64(0xFFFFFFFFFFFFFFFF)

MAGIC = b"BTPI"
VERSION = 1
_HEAD = struct.Struct("<4sIQQ")


class CorruptIndexError(ValueError):
    """Serialized index fails structural validation."""


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


class PivotBtree:
    """Static block-pivot B-tree: lookups return one-block windows."""

    kind = "btree"

    def __init__(self, pivots: np.ndarray, n_keys: int):
        self.pivots = pivots
        self.n_keys = int(n_keys)
        sizes = [_ceil_div(len(pivots), FANOUT)]
        while sizes[-1] > 1:
            sizes.append(_ceil_div(sizes[-1], FANOUT))
        self._level_sizes = sizes  # bottom-up: leaf pages first
        self.height = len(sizes)
        self.node_count = sum(sizes)

    @property
    def pivot_count(self) -> int:
        return len(self.pivots)

    @property
    def comparisons_per_probe(self) -> int:
        """Binary search inside each of height nodes: 8 per level."""
        return 8 * self.height

    def size_bytes(self) -> int:
        return _HEAD.size + NODE_BYTES * self.node_count

    def lookup(self, q: int) -> SearchWindow:
        b = int(np.searchsorted(self.pivots, np.uint64(q),
                                side="right")) - 1
        if b < 0:
            b = 0
        lo = b * TUPLES_PER_BLOCK
        return SearchWindow(lo, min(self.n_keys, lo + TUPLES_PER_BLOCK))

    def window_batch(self, qs: np.ndarray):
        """Vectorized lookup: (lo, hi) int64 arrays, one block per probe."""
        qs = np.ascontiguousarray(qs, dtype=np.uint64)
        b = np.searchsorted(self.pivots, qs, side="right") - 1
        np.maximum(b, 0, out=b)
        lo = b * np.int64(TUPLES_PER_BLOCK)
        hi = np.minimum(np.int64(self.n_keys), lo + TUPLES_PER_BLOCK)
        return lo, hi


def build_pivot_btree(keys: np.ndarray) -> PivotBtree:
    """Bulk-load from the sorted distinct key column of a table.

    Only the retained pivots (every 256th key) are order-checked; full
    ordering within blocks is already the storage layer's contract.
    """
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    if keys.ndim != 1 or len(keys) == 0:
        raise ValueError("need a non-empty 1-D key array")
    pivots = keys[::TUPLES_PER_BLOCK].copy()
    if len(pivots) > 1 and not bool(np.all(pivots[1:] > pivots[:-1])):
        raise ValueError("keys must be strictly increasing (distinct)")
    return PivotBtree(pivots, len(keys))


def pivot_count_for(n_keys: int) -> int:
    """Pivots a table of n keys produces: one per 256-tuple block."""
    if n_keys < 0:
        raise ValueError("negative key count")
    return _ceil_div(n_keys, TUPLES_PER_BLOCK) if n_keys else 0


def serialize(index: PivotBtree) -> bytes:
    """Header then level-order 4096-byte nodes, root first.

    Node layout: 256 u64 key slots then 256 u64 child slots, unused slots
    holding the all-ones sentinel. Leaf-level children are data block
    numbers; internal children are level-order node ids.
    """
    level_keys = [index.pivots]
    for _ in range(index.height - 1):
        level_keys.append(level_keys[-1][::FANOUT])
    sizes_td = list(reversed(index._level_sizes))
    base = [0]
    for s in sizes_td[:-1]:
        base.append(base[-1] + s)
    out = [_HEAD.pack(MAGIC, VERSION, index.n_keys, index.pivot_count)]
    for depth, keys in enumerate(reversed(level_keys)):
        nodes = _ceil_div(len(keys), FANOUT)
        page_keys = np.full(nodes * FANOUT, SENTINEL, dtype=np.uint64)
        page_keys[:len(keys)] = keys
        children = np.full(nodes * FANOUT, SENTINEL, dtype=np.uint64)
        if depth + 1 < len(sizes_td):
            children[:len(keys)] = base[depth + 1] + np.arange(len(keys))
        else:
            children[:len(keys)] = np.arange(len(keys))  # data blocks
        page_keys = page_keys.reshape(nodes, FANOUT)
        children = children.reshape(nodes, FANOUT)
        for i in range(nodes):
            out.append(page_keys[i].tobytes())
            out.append(children[i].tobytes())
    return b"".join(out)


def deserialize(data: bytes) -> PivotBtree:
    if len(data) < _HEAD.size:
        raise CorruptIndexError("truncated header")
    magic, version, n_keys, pivot_count = _HEAD.unpack_from(data, 0)
    if magic != MAGIC:
        raise CorruptIndexError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CorruptIndexError(f"unsupported version {version}")
    if pivot_count != pivot_count_for(n_keys) or pivot_count == 0:
        raise CorruptIndexError("pivot count disagrees with key count")
    sizes = [_ceil_div(pivot_count, FANOUT)]
    while sizes[-1] > 1:
        sizes.append(_ceil_div(sizes[-1], FANOUT))
    node_count = sum(sizes)
    if len(data) != _HEAD.size + NODE_BYTES * node_count:
        raise CorruptIndexError("node count disagrees with payload length")
    leaf_nodes = sizes[0]
    leaf_off = _HEAD.size + NODE_BYTES * (node_count - leaf_nodes)
    raw = np.frombuffer(data, dtype="<u8", offset=leaf_off)
    pages = raw.reshape(leaf_nodes, 2 * FANOUT)[:, :FANOUT]
    pivots = pages.reshape(-1)[:pivot_count].astype(np.uint64)
    if len(pivots) > 1 and not bool(np.all(pivots[1:] > pivots[:-1])):
        raise CorruptIndexError("pivots out of order")
    return PivotBtree(pivots, n_keys)


def save(index: PivotBtree, path) -> int:
    data = serialize(index)
    with open(path, "wb") as f:
        f.write(data)
    return len(data)


def load(path) -> PivotBtree:
    with open(path, "rb") as f:
        return deserialize(f.read())


# --- dynamic variant ----------------------------------------------------

LEAF_CAPACITY = 255  # u64 count + 255 * 16-byte tuples = 4088 <= 4096
LEAF_MAGIC = b"BTLF"
_LEAF_HEAD = struct.Struct("<4sIQQ")


@dataclass
class _Leaf:
    keys: np.ndarray
    values: np.ndarray
    count: int
    dirty: bool = True
    ref: bool = True


@dataclass
class DynamicStats:
    leaf_reads: int = 0
    leaf_writes: int = 0
    splits: int = 0
    evictions: int = 0


class DynamicBtree:
    """Insert-oriented B-tree over one leaf file with a clock-evicted pool.

    The directory (sorted leaf minimum keys -> leaf block numbers) stays in
    memory; leaves are 4096-byte blocks fetched on demand. Duplicate keys
    are rejected. Block 0 of the file is a metadata header and does not
    count toward I/O; every leaf fetch and dirty writeback does.
    """

    def __init__(self, path, stats: IoStats | None = None,
                 pool_leaves: int = 256):
        if pool_leaves < 2:
            raise ValueError("pool must hold at least 2 leaves")
        self.path = os.fspath(path)
        self.stats = stats if stats is not None else IoStats()
        self.detail = DynamicStats()
        self._pool_cap = pool_leaves
        self._fd = os.open(self.path, os.O_RDWR | os.O_CREAT | os.O_TRUNC,
                           0o644)
        self.tuple_count = 0
        self._next_block = 2  # block 1 = first leaf
        first = _Leaf(np.empty(LEAF_CAPACITY, dtype=np.uint64),
                      np.empty(LEAF_CAPACITY, dtype=np.uint64), 0)
        self._pool: dict[int, _Leaf] = {1: first}
        self._clock: list[int] = [1]
        self._hand = 0
        self._dir_keys: list[int] = [0]
        self._dir_blocks: list[int] = [1]
        self._write_header()

    # --- leaf pool -----------------------------------------------------

    def _write_header(self):
        head = _LEAF_HEAD.pack(LEAF_MAGIC, VERSION, self.tuple_count,
                               self._next_block - 1)
        os.pwrite(self._fd, head.ljust(BLOCK_BYTES, b"\x00"), 0)

    def _write_leaf(self, block: int, leaf: _Leaf):
        buf = np.empty(BLOCK_BYTES // 8, dtype=np.uint64)
        buf[0] = leaf.count
        inter = buf[1:1 + 2 * leaf.count]
        inter[0::2] = leaf.keys[:leaf.count]
        inter[1::2] = leaf.values[:leaf.count]
        buf[1 + 2 * leaf.count:] = 0
        os.pwrite(self._fd, buf.tobytes(), block * BLOCK_BYTES)
        self.stats.note_write(block * BLOCK_BYTES, BLOCK_BYTES)
        self.detail.leaf_writes += 1
        leaf.dirty = False

    def _read_leaf(self, block: int) -> _Leaf:
        raw = os.pread(self._fd, BLOCK_BYTES, block * BLOCK_BYTES)
        if len(raw) != BLOCK_BYTES:
            raise CorruptIndexError(f"short leaf read at block {block}")
        self.stats.note_read(1)
        self.detail.leaf_reads += 1
        buf = np.frombuffer(raw, dtype=np.uint64)
        count = int(buf[0])
        if count > LEAF_CAPACITY:
            raise CorruptIndexError(f"leaf {block} overfull ({count})")
        keys = np.empty(LEAF_CAPACITY, dtype=np.uint64)
        values = np.empty(LEAF_CAPACITY, dtype=np.uint64)
        keys[:count] = buf[1:1 + 2 * count:2]
        values[:count] = buf[2:2 + 2 * count:2]
        return _Leaf(keys, values, count, dirty=False, ref=True)

    def _evict_one(self):
        while True:
            if self._hand >= len(self._clock):
                self._hand = 0
            block = self._clock[self._hand]
            leaf = self._pool[block]
            if leaf.ref:
                leaf.ref = False
                self._hand += 1
                continue
            if leaf.dirty:
                self._write_leaf(block, leaf)
            del self._pool[block]
            del self._clock[self._hand]
            self.detail.evictions += 1
            return

    def _fetch(self, block: int) -> _Leaf:
        leaf = self._pool.get(block)
        if leaf is not None:
            leaf.ref = True
            return leaf
        if len(self._pool) >= self._pool_cap:
            self._evict_one()
        leaf = self._read_leaf(block)
        self._pool[block] = leaf
        self._clock.append(block)
        return leaf

    def _install(self, block: int, leaf: _Leaf):
        if len(self._pool) >= self._pool_cap:
            self._evict_one()
        self._pool[block] = leaf
        self._clock.append(block)

    # --- operations ----------------------------------------------------

    def insert(self, key: int, value: int):
        pos = bisect.bisect_right(self._dir_keys, key) - 1
        block = self._dir_blocks[pos]
        leaf = self._fetch(block)
        if leaf.count == LEAF_CAPACITY:
            leaf = self._split(pos, block, leaf, key)
        i = int(np.searchsorted(leaf.keys[:leaf.count], np.uint64(key)))
        if i < leaf.count and leaf.keys[i] == key:
            raise ValueError(f"duplicate key {key}")
        leaf.keys[i + 1:leaf.count + 1] = leaf.keys[i:leaf.count]
        leaf.values[i + 1:leaf.count + 1] = leaf.values[i:leaf.count]
        leaf.keys[i] = key
        leaf.values[i] = value
        leaf.count += 1
        leaf.dirty = True
        leaf.ref = True
        self.tuple_count += 1

    def _split(self, pos: int, block: int, leaf: _Leaf, key: int) -> _Leaf:
        mid = leaf.count // 2
        right = _Leaf(np.empty(LEAF_CAPACITY, dtype=np.uint64),
                      np.empty(LEAF_CAPACITY, dtype=np.uint64),
                      leaf.count - mid)
        right.keys[:right.count] = leaf.keys[mid:leaf.count]
        right.values[:right.count] = leaf.values[mid:leaf.count]
        leaf.count = mid
        leaf.dirty = True
        right_block = self._next_block
        self._next_block += 1
        self._install(right_block, right)
        split_key = int(right.keys[0])
        self._dir_keys.insert(pos + 1, split_key)
        self._dir_blocks.insert(pos + 1, right_block)
        self.detail.splits += 1
        if key >= split_key:
            return right
        # installing the right leaf may have evicted the left one
        return self._fetch(block)

    def lookup(self, key: int):
        """Value for key, or None. Faults the leaf in like insert does."""
        pos = bisect.bisect_right(self._dir_keys, key) - 1
        leaf = self._fetch(self._dir_blocks[pos])
        i = int(np.searchsorted(leaf.keys[:leaf.count], np.uint64(key)))
        if i < leaf.count and leaf.keys[i] == key:
            return int(leaf.values[i])
        return None

    @property
    def leaf_count(self) -> int:
        return self._next_block - 1

    def flush(self):
        for block, leaf in self._pool.items():
            if leaf.dirty:
                self._write_leaf(block, leaf)
        self._write_header()

    def scan_items(self):
        """(keys, values) over the whole tree in key order."""
        ks, vs = [], []
        for block in self._dir_blocks:
            leaf = self._fetch(block)
            ks.append(leaf.keys[:leaf.count].copy())
            vs.append(leaf.values[:leaf.count].copy())
        if not ks:
            empty = np.empty(0, dtype=np.uint64)
            return empty, empty
        return np.concatenate(ks), np.concatenate(vs)

    def close(self):
        if self._fd is not None:
            self.flush()
            os.close(self._fd)
            self._fd = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
