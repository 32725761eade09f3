"""Error-bounded piecewise-linear index over sorted u64 keys.

A greedy single-pass shrinking-cone sweep partitions the key sequence into
maximal segments such that a linear model per segment predicts every training
key's rank within +-epsilon. Predictions are anchored at the segment origin:

    pred(x) = slope * (x - first_key) + start_rank

(u64 keys exceed f64's 53-bit mantissa, so the unanchored slope*x + intercept
form would lose the low bits; within a segment the delta is small enough that
the float error stays orders of magnitude below the 0.5 rounding margin, so
the rounded-prediction bound |round(pred) - rank| <= epsilon holds exactly.)

Sampled builds train on every k-th key (ranks 0, k, 2k, ...) with a training
error epsilon', and lookups map the sample-rank window back to full ranks:

    rp = round(pred) clamped to the segment's training-rank span
    lo = max(0, (rp - eps' - 1)*k + 1)
    hi = min(n, (rp + eps' + 1)*k + 1)

which for k = 1 reduces to [rp - eps', rp + eps' + 2) and in general has
width at most 2*(eps'+1)*k, the index's effective window. The lower-bound
rank of the query (smallest rank whose key is >= the query, or the tuple
count when none) always satisfies lo <= rank <= hi, with rank < hi whenever
the key is present; rank == hi only for absent keys falling just past the
window and at the table tail, where the search over [lo, hi) resolves it.
"""

from __future__ import annotations

import struct
from typing import NamedTuple

import numpy as np

MAGIC = b"PLAI"
VERSION = 1
_HEAD = struct.Struct("<4sIQQQQ")
_SEG_DTYPE = np.dtype([("first_key", "<u8"), ("slope", "<f8"),
                       ("intercept", "<f8"), ("start_rank", "<u8")])


class SearchWindow(NamedTuple):
    lo: int
    hi: int


class Segment(NamedTuple):
    first_key: int
    slope: float
    intercept: float
    start_rank: int


class CorruptIndexError(ValueError):
    """Serialized index fails structural validation."""


def _cone_segments(keys: np.ndarray, eps: int, chunk: int = 1 << 16):
    """Greedy shrinking-cone segmentation of sorted distinct keys.

    Returns (first_keys u64, slopes f64, start_ranks i64). Tracks the
    feasible slope interval from each segment's origin and closes the
    segment at the first key that empties it.
    """
    m = len(keys)
    firsts, slopes, starts = [], [], []
    origin = 0
    while origin < m:
        x0 = keys[origin]
        lo, hi = -np.inf, np.inf
        end = origin + 1
        # the scan window grows geometrically so short segments cost
        # O(their length), not a full chunk; the carried (lo, hi) makes
        # the running cone identical regardless of window boundaries
        step = 512
        seg_end = None
        while end < m:
            stop = min(m, end + step)
            step = min(step * 4, chunk)
            dx = (keys[end:stop] - x0).astype(np.float64)
            dy = np.arange(end - origin, stop - origin, dtype=np.float64)
            run_hi = np.minimum(np.minimum.accumulate((dy + eps) / dx), hi)
            run_lo = np.maximum(np.maximum.accumulate((dy - eps) / dx), lo)
            bad = run_lo > run_hi
            if bad.any():
                j = int(np.argmax(bad))
                if j > 0:
                    lo, hi = float(run_lo[j - 1]), float(run_hi[j - 1])
                seg_end = end + j
                break
            lo, hi = float(run_lo[-1]), float(run_hi[-1])
            end = stop
        if seg_end is None:
            seg_end = m
        if not np.isfinite(lo):  # single-key segment
            slope = 0.0
        else:
            slope = 0.5 * (lo + hi)
            # keep predictions monotone: slope >= 0 is always feasible here
            slope = min(max(slope, lo, 0.0), hi)
        firsts.append(int(x0))
        slopes.append(slope)
        starts.append(origin)
        origin = seg_end
    return (np.array(firsts, dtype=np.uint64),
            np.array(slopes, dtype=np.float64),
            np.array(starts, dtype=np.int64))


def _validate_keys(keys: np.ndarray) -> np.ndarray:
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    if keys.ndim != 1 or len(keys) == 0:
        raise ValueError("need a non-empty 1-D key array")
    if len(keys) > 1 and not bool(np.all(keys[1:] > keys[:-1])):
        raise ValueError("keys must be strictly increasing (distinct)")
    return keys


class PlaIndex:
    """Piecewise-linear rank approximation with bounded search windows."""

    def __init__(self, first_keys, slopes, start_ranks, n_keys: int,
                 k: int, epsilon: int):
        self.first_keys = first_keys
        self.slopes = slopes
        self.start_ranks = start_ranks
        self.n_keys = int(n_keys)
        self.k = int(k)
        self.epsilon = int(epsilon)
        m = -(-self.n_keys // self.k)  # training keys: every k-th
        self._train_count = m
        self._seg_ends = np.append(start_ranks[1:], np.int64(m))

    # --- introspection -------------------------------------------------

    @property
    def kind(self) -> str:
        return "pla" if self.k == 1 else "pla_sampled"

    @property
    def segment_count(self) -> int:
        return len(self.first_keys)

    @property
    def n_train(self) -> int:
        return self._train_count

    @property
    def effective_window(self) -> int:
        """Worst-case window width in tuples: 2 * (epsilon + 1) * k."""
        return 2 * (self.epsilon + 1) * self.k

    @property
    def segments(self) -> list[Segment]:
        return [Segment(int(f), float(s), float(r), int(r))
                for f, s, r in zip(self.first_keys, self.slopes,
                                   self.start_ranks)]

    def size_bytes(self) -> int:
        """Serialized footprint: fixed header + 32 bytes per segment."""
        return _HEAD.size + _SEG_DTYPE.itemsize * self.segment_count

    # --- lookups -------------------------------------------------------

    def _predict_clamped(self, j: int, q: int) -> int:
        fk = int(self.first_keys[j])
        if q <= fk:
            pred = float(self.start_ranks[j])
        else:
            pred = self.slopes[j] * float(q - fk) + float(self.start_ranks[j])
        rp = int(np.rint(pred))
        lo_r = int(self.start_ranks[j])
        hi_r = int(self._seg_ends[j]) - 1
        return min(max(rp, lo_r), hi_r)

    def _window_from_rp(self, rp: int) -> SearchWindow:
        e1 = self.epsilon + 1
        lo = (rp - e1) * self.k + 1
        hi = (rp + e1) * self.k + 1
        return SearchWindow(max(0, lo), min(self.n_keys, hi))

    def lookup(self, q: int) -> SearchWindow:
        """Search window whose [lo, hi) run contains the lower bound of q."""
        j = int(np.searchsorted(self.first_keys, np.uint64(q),
                                side="right")) - 1
        if j < 0:
            j = 0
        return self._window_from_rp(self._predict_clamped(j, int(q)))

    def predict_batch(self, qs: np.ndarray):
        """Clamped rounded training-rank predictions: (rp, segment_id)."""
        qs = np.ascontiguousarray(qs, dtype=np.uint64)
        j = np.searchsorted(self.first_keys, qs, side="right") - 1
        np.maximum(j, 0, out=j)
        fk = self.first_keys[j]
        above = qs > fk
        dx = np.where(above, qs - fk, 0).astype(np.float64)
        pred = self.slopes[j] * dx + self.start_ranks[j].astype(np.float64)
        rp = np.rint(pred)
        starts = self.start_ranks[j].astype(np.float64)
        ends = (self._seg_ends[j] - 1).astype(np.float64)
        np.clip(rp, starts, ends, out=rp)
        return rp.astype(np.int64), j

    def window_batch(self, qs: np.ndarray):
        """Vectorized lookup: returns (lo, hi, segment_id) int64 arrays."""
        rp, j = self.predict_batch(qs)
        e1 = np.int64(self.epsilon + 1)
        k = np.int64(self.k)
        lo = np.maximum(np.int64(0), (rp - e1) * k + 1)
        hi = np.minimum(np.int64(self.n_keys), (rp + e1) * k + 1)
        return lo, hi, j

    def cursor(self) -> "SegmentCursor":
        return SegmentCursor(self)


class SegmentCursor:
    """Monotone segment iterator for ascending probe streams.

    advance_to(q) walks segments forward (never restarting the segment
    search from the root) and returns the same window lookup() would.
    Queries must be non-decreasing.
    """

    def __init__(self, index: PlaIndex):
        self._index = index
        self._i = 0
        self._last_q: int | None = None
        self.advances = 0

    @property
    def segment_id(self) -> int:
        return self._i

    def advance_to(self, q: int) -> SearchWindow:
        if self._last_q is not None and q < self._last_q:
            raise ValueError("cursor queries must be non-decreasing")
        self._last_q = q
        idx = self._index
        fk = idx.first_keys
        nseg = len(fk)
        while self._i + 1 < nseg and int(fk[self._i + 1]) <= q:
            self._i += 1
            self.advances += 1
        return idx._window_from_rp(idx._predict_clamped(self._i, int(q)))


def build_pla(keys, epsilon: int) -> PlaIndex:
    """Index every key with training error epsilon (>= 0)."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    keys = _validate_keys(keys)
    firsts, slopes, starts = _cone_segments(keys, int(epsilon))
    return PlaIndex(firsts, slopes, starts, len(keys), 1, int(epsilon))


def build_sampled(keys, every_kth: int, epsilon: int) -> PlaIndex:
    """Index every k-th key; windows widen by k to stay containing.

    Tables with fewer than 2 keys are rejected; a stride too large to yield
    two samples is reduced to n-1 so the sample is {first key, last key}.
    Only the retained sample is order-checked: the build touches O(n/k)
    keys, and full ordering is already the storage layer's contract.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    if every_kth < 1:
        raise ValueError("sample stride must be >= 1")
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    if keys.ndim != 1:
        raise ValueError("need a non-empty 1-D key array")
    n = len(keys)
    if n < 2:
        raise ValueError("sampled build needs at least 2 keys")
    k = int(every_kth)
    if -(-n // k) < 2:
        k = n - 1
    sample = _validate_keys(np.ascontiguousarray(keys[::k]))
    firsts, slopes, starts = _cone_segments(sample, int(epsilon))
    return PlaIndex(firsts, slopes, starts, n, k, int(epsilon))


def serialize(index: PlaIndex) -> bytes:
    """Header (magic, version, full key count, k, epsilon, segment count)
    followed by 32-byte little-endian segment records."""
    segs = np.empty(index.segment_count, dtype=_SEG_DTYPE)
    segs["first_key"] = index.first_keys
    segs["slope"] = index.slopes
    segs["intercept"] = index.start_ranks.astype(np.float64)
    segs["start_rank"] = index.start_ranks.astype(np.uint64)
    head = _HEAD.pack(MAGIC, VERSION, index.n_keys, index.k,
                      index.epsilon, index.segment_count)
    return head + segs.tobytes()


def deserialize(data: bytes) -> PlaIndex:
    if len(data) < _HEAD.size:
        raise CorruptIndexError("truncated header")
    magic, version, n_keys, k, eps, nseg = _HEAD.unpack_from(data, 0)
    if magic != MAGIC:
        raise CorruptIndexError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CorruptIndexError(f"unsupported version {version}")
    if len(data) != _HEAD.size + nseg * _SEG_DTYPE.itemsize:
        raise CorruptIndexError(
            f"segment count {nseg} disagrees with payload length")
    segs = np.frombuffer(data, dtype=_SEG_DTYPE, offset=_HEAD.size)
    first_keys = segs["first_key"].astype(np.uint64)
    start_ranks = segs["start_rank"].astype(np.int64)
    if nseg == 0 or start_ranks[0] != 0:
        raise CorruptIndexError("segment ranks must start at 0")
    if nseg > 1 and not (bool(np.all(first_keys[1:] > first_keys[:-1]))
                         and bool(np.all(start_ranks[1:] > start_ranks[:-1]))):
        raise CorruptIndexError("segments out of order")
    m = -(-n_keys // k) if k else 0
    if k < 1 or int(start_ranks[-1]) >= max(m, 1):
        raise CorruptIndexError("segment ranks exceed training range")
    return PlaIndex(first_keys, segs["slope"].astype(np.float64),
                    start_ranks, n_keys, k, eps)


def save(index: PlaIndex, path) -> int:
    data = serialize(index)
    with open(path, "wb") as f:
        f.write(data)
    return len(data)


def load(path) -> PlaIndex:
    with open(path, "rb") as f:
        return deserialize(f.read())
