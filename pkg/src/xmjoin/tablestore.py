"""Block-oriented table files with instrumented I/O.

A table file is a sequence of 4096-byte blocks. Block 0 is the header:
a little-endian u64 tuple count, a u64 tuple size (always 16), and zero
padding. Data blocks follow, 256 tuples per block, each tuple a u64 key
and a u64 value, both little-endian. The final data block is zero-padded,
so the physical file length is 4096 * (1 + ceil(n * 16 / 4096)); the
logical length (header word pair plus payload) is 16 + n * 16.

IoStats counts data-region traffic only. Header maintenance (one metadata
block read at open, written at flush/close) is not I/O in the accounting
sense used by the benchmarks.
"""

from __future__ import annotations

import errno
import os
import struct
from dataclasses import dataclass

import numpy as np

BLOCK_BYTES = 4096
TUPLE_BYTES = 16
TUPLES_PER_BLOCK = BLOCK_BYTES // TUPLE_BYTES  # 256
WORDS_PER_BLOCK = BLOCK_BYTES // 8  # 512
_HEADER = struct.Struct("<QQ")


class FormatError(ValueError):
    """File does not decode as a valid table."""


def logical_size(tuple_count: int) -> int:
    """Header word pair plus payload bytes."""
    return 16 + tuple_count * TUPLE_BYTES


def data_blocks(tuple_count: int) -> int:
    return -(-tuple_count * TUPLE_BYTES // BLOCK_BYTES)


def physical_size(tuple_count: int) -> int:
    return BLOCK_BYTES * (1 + data_blocks(tuple_count))


@dataclass
class IoStats:
    """Counters for data-region I/O.

    blocks_read / blocks_written count 4096-byte blocks touched by each
    physical read/write call; io_calls counts read calls; bytes_written is
    the exact payload byte count. Buffer hits cost nothing.
    """

    blocks_read: int = 0
    io_calls: int = 0
    blocks_written: int = 0
    bytes_written: int = 0

    def note_read(self, nblocks: int) -> None:
        self.blocks_read += nblocks
        self.io_calls += 1

    def note_write(self, offset: int, nbytes: int) -> None:
        if nbytes <= 0:
            return
        first = offset // BLOCK_BYTES
        last = (offset + nbytes - 1) // BLOCK_BYTES
        self.blocks_written += last - first + 1
        self.bytes_written += nbytes

    def add(self, other: "IoStats") -> None:
        self.blocks_read += other.blocks_read
        self.io_calls += other.io_calls
        self.blocks_written += other.blocks_written
        self.bytes_written += other.bytes_written

    def copy(self) -> "IoStats":
        return IoStats(self.blocks_read, self.io_calls,
                       self.blocks_written, self.bytes_written)


def _aligned_bytes(nbytes: int) -> np.ndarray:
    """uint8 array of length nbytes whose data pointer is 4096-aligned."""
    raw = np.zeros(nbytes + BLOCK_BYTES, dtype=np.uint8)
    off = (-raw.ctypes.data) % BLOCK_BYTES
    return raw[off:off + nbytes]


class BlockFile:
    """Raw array of 4096-byte blocks with counted reads and writes.

    Readers may request O_DIRECT (best effort: falls back to cached reads
    on filesystems that reject it, recording the outcome). Writes always go
    through the OS page cache.
    """

    def __init__(self, path, mode: str = "r", stats: IoStats | None = None,
                 direct: bool = False):
        self.path = os.fspath(path)
        self.stats = stats if stats is not None else IoStats()
        self._direct = False
        if mode == "r":
            flags = os.O_RDONLY
        elif mode == "r+":
            flags = os.O_RDWR
        elif mode == "w+":
            flags = os.O_RDWR | os.O_CREAT | os.O_TRUNC
        else:
            raise ValueError(f"unsupported mode {mode!r}")
        if direct and mode == "r" and hasattr(os, "O_DIRECT"):
            try:
                self.fd = os.open(self.path, flags | os.O_DIRECT)
                self._direct = True
            except OSError:
                self.fd = os.open(self.path, flags)
        else:
            self.fd = os.open(self.path, flags)

    @property
    def direct_effective(self) -> bool:
        return self._direct

    def size_bytes(self) -> int:
        return os.fstat(self.fd).st_size

    def read_blocks(self, first_block: int, nblocks: int) -> np.ndarray:
        """Read nblocks whole blocks as one counted call; returns u64 words."""
        if nblocks <= 0:
            return np.empty(0, dtype=np.uint64)
        offset = first_block * BLOCK_BYTES
        nbytes = nblocks * BLOCK_BYTES
        if self._direct:
            buf = _aligned_bytes(nbytes)
            try:
                got = os.preadv(self.fd, [memoryview(buf)], offset)
            except OSError as e:
                if e.errno in (errno.EINVAL, errno.ENOTSUP):
                    # Filesystem refuses O_DIRECT reads; degrade silently.
                    os.close(self.fd)
                    self.fd = os.open(self.path, os.O_RDONLY)
                    self._direct = False
                    return self.read_blocks(first_block, nblocks)
                raise
            if got != nbytes:
                raise FormatError(
                    f"{self.path}: short read ({got} of {nbytes} bytes)")
            self.stats.note_read(nblocks)
            return buf.view("<u8")
        data = os.pread(self.fd, nbytes, offset)
        if len(data) != nbytes:
            raise FormatError(
                f"{self.path}: short read ({len(data)} of {nbytes} bytes)")
        self.stats.note_read(nblocks)
        return np.frombuffer(data, dtype="<u8")

    def write_at(self, offset: int, data) -> None:
        """One counted write call at an arbitrary byte offset."""
        view = memoryview(data)
        nbytes = view.nbytes
        written = os.pwrite(self.fd, view, offset)
        if written != nbytes:
            raise OSError(f"{self.path}: short write")
        self.stats.note_write(offset, nbytes)

    def truncate_bytes(self, nbytes: int) -> None:
        os.ftruncate(self.fd, nbytes)

    def close(self) -> None:
        if self.fd >= 0:
            os.close(self.fd)
            self.fd = -1

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _interleave(keys: np.ndarray, values: np.ndarray) -> np.ndarray:
    out = np.empty(2 * len(keys), dtype=np.uint64)
    out[0::2] = keys
    out[1::2] = values
    return out


class TableWriter:
    """Append-only table writer with an in-memory block buffer.

    Appends accumulate until buffer_blocks worth of tuples are pending, then
    whole blocks are written in one call. flush() forces the partial tail
    block out as well (the next append rewrites that block). close() pads the
    file to a whole-block physical length and finalizes the header count.
    """

    def __init__(self, path, stats: IoStats | None = None,
                 buffer_blocks: int = 256, require_sorted: bool = False):
        self._file = BlockFile(path, "w+", stats=stats)
        # header placeholder (metadata: not counted)
        os.pwrite(self._file.fd, _HEADER.pack(0, TUPLE_BYTES)
                  + b"\x00" * (BLOCK_BYTES - 16), 0)
        self._buffer_tuples = buffer_blocks * TUPLES_PER_BLOCK
        self._pending: list[np.ndarray] = []
        self._pending_count = 0
        self._count = 0  # tuples already written to the data region
        self.require_sorted = require_sorted
        self._last_key: int | None = None
        self._closed = False

    @property
    def stats(self) -> IoStats:
        return self._file.stats

    @property
    def tuple_count(self) -> int:
        return self._count + self._pending_count

    def append(self, keys, values=None) -> None:
        keys = np.ascontiguousarray(keys, dtype=np.uint64)
        if keys.ndim == 0:
            keys = keys.reshape(1)
        if values is None:
            values = keys
        else:
            values = np.ascontiguousarray(values, dtype=np.uint64)
            if values.ndim == 0:
                values = values.reshape(1)
        if len(keys) != len(values):
            raise ValueError("key/value length mismatch")
        if len(keys) == 0:
            return
        if self.require_sorted:
            if len(keys) > 1 and not bool(np.all(keys[1:] > keys[:-1])):
                raise ValueError("keys not strictly increasing")
            if self._last_key is not None and int(keys[0]) <= self._last_key:
                raise ValueError("keys not strictly increasing across appends")
            self._last_key = int(keys[-1])
        self._pending.append(_interleave(keys, values))
        self._pending_count += len(keys)
        if self._pending_count >= self._buffer_tuples:
            self._drain(partial=False)

    def _drain(self, partial: bool) -> None:
        if self._pending_count == 0:
            return
        words = np.concatenate(self._pending) if len(self._pending) > 1 \
            else self._pending[0]
        take = self._pending_count if partial else \
            (self._pending_count // TUPLES_PER_BLOCK) * TUPLES_PER_BLOCK
        if take == 0:
            return
        chunk = words[:take * 2]
        rest = words[take * 2:]
        offset = BLOCK_BYTES + self._count * TUPLE_BYTES
        self._file.write_at(offset, chunk)
        self._count += take
        self._pending = [rest] if len(rest) else []
        self._pending_count = len(rest) // 2

    def _write_header(self) -> None:
        os.pwrite(self._file.fd,
                  _HEADER.pack(self._count, TUPLE_BYTES), 0)

    def flush(self) -> None:
        self._drain(partial=True)
        self._write_header()

    def close(self) -> None:
        if self._closed:
            return
        self.flush()
        self._file.truncate_bytes(physical_size(self._count))
        self._closed = True
        self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class TableReader:
    """Random-window and streaming reads over a table file.

    read_window(lo, hi) makes tuple ranks [lo, hi) available in a single
    contiguous in-memory buffer and returns (keys, values) views. If the
    range is already buffered the call costs no I/O. Otherwise one read call
    is issued:

      * forward miss within readahead_gap blocks of the buffer end: the
        buffer extends contiguously from its end through the window (reading
        through any gap — sequential readahead), at least window_fetch_blocks
        blocks per call, so quasi-sequential probe streams degrade to one
        clean pass with no block read twice;
      * first use near the file start anchors the buffer at block 0;
      * anything else: one fresh read of exactly the covering block run.

    scan()/scan_range() stream the table in large chunks, bypassing the
    window buffer.
    """

    def __init__(self, path, stats: IoStats | None = None,
                 direct: bool = False, window_fetch_blocks: int = 1,
                 readahead_gap_blocks: int = 32):
        self._file = BlockFile(path, "r", stats=stats, direct=direct)
        size = self._file.size_bytes()
        if size < BLOCK_BYTES:
            raise FormatError(f"{self.path}: missing header block")
        with open(self._file.path, "rb") as meta:  # metadata: not counted
            head = meta.read(16)
        count, tsize = _HEADER.unpack(head)
        if tsize != TUPLE_BYTES:
            raise FormatError(f"{self.path}: tuple size {tsize} != 16")
        if size != physical_size(count):
            raise FormatError(
                f"{self.path}: physical size {size} != expected "
                f"{physical_size(count)} for {count} tuples")
        self.tuple_count = count
        self.window_fetch_blocks = max(1, int(window_fetch_blocks))
        self.readahead_gap_blocks = max(0, int(readahead_gap_blocks))
        self._buf = np.empty(0, dtype=np.uint64)
        self._buf_first = 0    # first buffered block
        self._buf_blocks = 0

    @property
    def path(self) -> str:
        return self._file.path

    @property
    def stats(self) -> IoStats:
        return self._file.stats

    @property
    def direct_effective(self) -> bool:
        return self._file.direct_effective

    @property
    def logical_size(self) -> int:
        return logical_size(self.tuple_count)

    @property
    def data_block_count(self) -> int:
        return data_blocks(self.tuple_count)

    def _read_data_blocks(self, first: int, nblocks: int) -> np.ndarray:
        return self._file.read_blocks(1 + first, nblocks)

    def read_window(self, lo: int, hi: int):
        """(keys, values) views for tuple ranks [lo, hi)."""
        if not 0 <= lo <= hi <= self.tuple_count:
            raise IndexError(
                f"window [{lo}, {hi}) out of range for {self.tuple_count} tuples")
        if lo == hi:
            e = np.empty(0, dtype=np.uint64)
            return e, e
        first = lo // TUPLES_PER_BLOCK
        last = (hi - 1) // TUPLES_PER_BLOCK
        self._ensure_blocks(first, last)
        base = (lo - self._buf_first * TUPLES_PER_BLOCK) * 2
        end = (hi - self._buf_first * TUPLES_PER_BLOCK) * 2
        return self._buf[base:end:2], self._buf[base + 1:end + 1:2]

    def _ensure_blocks(self, first: int, last: int) -> None:
        buf_end = self._buf_first + self._buf_blocks
        if self._buf_blocks and first >= self._buf_first and last < buf_end:
            return  # buffer hit
        nblocks = self.data_block_count
        gap = self.readahead_gap_blocks
        if self._buf_blocks == 0:
            start = 0 if first <= gap else first
            data = self._read_data_blocks(start, last + 1 - start)
            keep = (first - start) * WORDS_PER_BLOCK
            self._buf = data[keep:] if keep else data
            self._buf_first = first
            self._buf_blocks = last + 1 - first
            return
        if first >= self._buf_first and last >= buf_end \
                and first <= buf_end + gap:
            # forward extension: never re-reads, fills small gaps
            read_end = min(nblocks, max(last + 1,
                                        buf_end + self.window_fetch_blocks))
            fresh = self._read_data_blocks(buf_end, read_end - buf_end)
            keep = (first - self._buf_first) * WORDS_PER_BLOCK
            old = self._buf[keep:] if keep < len(self._buf) else \
                np.empty(0, dtype=np.uint64)
            drop_lead = 0
            if first > buf_end:  # gap was read through; discard it
                drop_lead = (first - buf_end) * WORDS_PER_BLOCK
                old = np.empty(0, dtype=np.uint64)
            self._buf = np.concatenate([old, fresh[drop_lead:]]) \
                if len(old) else np.ascontiguousarray(fresh[drop_lead:])
            self._buf_first = first
            self._buf_blocks = read_end - first
            return
        # far jump (or backward): fresh covering read
        data = self._read_data_blocks(first, last + 1 - first)
        self._buf = data
        self._buf_first = first
        self._buf_blocks = last + 1 - first

    @property
    def buffered_range(self) -> tuple[int, int]:
        """Buffered tuple ranks [lo, hi) — diagnostic."""
        lo = self._buf_first * TUPLES_PER_BLOCK
        return lo, min(self.tuple_count,
                       lo + self._buf_blocks * TUPLES_PER_BLOCK)

    def buffered_tuples(self):
        """(start_rank, keys, values) views over the buffered region."""
        start, end = self.buffered_range
        count = end - start
        return start, self._buf[:2 * count:2], self._buf[1:2 * count + 1:2]

    def scan_range(self, start: int, stop: int, chunk_blocks: int = 256):
        """Yield (keys, values) chunks covering tuple ranks [start, stop)."""
        if not 0 <= start <= stop <= self.tuple_count:
            raise IndexError("scan range out of bounds")
        rank = start
        while rank < stop:
            first = rank // TUPLES_PER_BLOCK
            last_rank = min(stop, (first + chunk_blocks) * TUPLES_PER_BLOCK)
            last = (last_rank - 1) // TUPLES_PER_BLOCK
            words = self._read_data_blocks(first, last + 1 - first)
            base = (rank - first * TUPLES_PER_BLOCK) * 2
            end = (last_rank - first * TUPLES_PER_BLOCK) * 2
            yield words[base:end:2], words[base + 1:end + 1:2]
            rank = last_rank

    def scan(self, chunk_blocks: int = 256):
        return self.scan_range(0, self.tuple_count, chunk_blocks)

    def read_all(self):
        """Whole table as (keys, values); counted like a full scan."""
        ks, vs = [], []
        for k, v in self.scan():
            ks.append(np.ascontiguousarray(k))
            vs.append(np.ascontiguousarray(v))
        if not ks:
            e = np.empty(0, dtype=np.uint64)
            return e, e
        return np.concatenate(ks), np.concatenate(vs)

    def close(self) -> None:
        self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_table(path, keys, values=None, sorted_keys: bool = True,
                stats: IoStats | None = None) -> int:
    """Write a whole table in one go; returns the tuple count."""
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    with TableWriter(path, stats=stats, require_sorted=sorted_keys) as w:
        if len(keys):
            w.append(keys, values)
        n = w.tuple_count
    return n


def read_table(path):
    """Uninstrumented whole-table load (for oracles and tooling)."""
    with open(path, "rb") as f:
        head = f.read(16)
        if len(head) < 16:
            raise FormatError(f"{path}: missing header")
        count, tsize = _HEADER.unpack(head)
        if tsize != TUPLE_BYTES:
            raise FormatError(f"{path}: tuple size {tsize} != 16")
        f.seek(BLOCK_BYTES)
        words = np.fromfile(f, dtype="<u8", count=2 * count)
    if len(words) != 2 * count:
        raise FormatError(f"{path}: truncated data region")
    return words[0::2].copy(), words[1::2].copy()
