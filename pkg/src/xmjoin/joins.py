"""Join methods over sorted block tables.

All methods compute the same inner join: for every outer tuple whose key
exists in the inner table, emit (key, inner value). Outputs come out in
ascending key order for every method, so result files are byte-comparable
across methods and thread counts.

inlj is the instrumented index nested loop join. The outer side streams in
rank order; each probe asks the index for a search window, the inner reader
turns window misses into real block I/O (counted in IoStats), and the
lower bound inside the buffered window is resolved by a bounded binary
search whose comparison count is data-independent: ceil(log2 w) + 1 for a
width-w window. Two optimizations apply to ascending probes:

    1. segment routing advances a cursor instead of re-descending, costing
       one comparison per probe plus one per segment advanced;
    2. the window's low edge is clamped to the previous probe's lower
       bound (learned indexes only), shrinking both the search width and
       the blocks a miss has to fetch.

The batched implementation preserves the exact per-probe I/O event order
and counter values of the scalar loop: runs of probes whose windows are
already buffered are resolved with one vectorized search, which provably
returns the same lower bounds the per-probe search would.

sort_join streams both sorted tables once with two-pointer comparison
accounting; hash_join builds a hash set on the outer keys and probes the
inner side, with one membership probe per inner tuple in the comparison
column. parallel inlj splits the outer rank range into contiguous slices,
joins each with private readers and a private part file, then concatenates
parts tuple-wise; the merged output is byte-identical to the single-thread
run and per-slice counters are kept for scaling analysis.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .tablestore import IoStats, TableReader, TableWriter

_POW2 = np.left_shift(np.int64(1), np.arange(63, dtype=np.int64))


@dataclass
class JoinResult:
    method: str
    n_outer: int
    n_inner: int
    output_tuples: int
    comparisons: int
    join_seconds: float
    stats_outer: IoStats
    stats_inner: IoStats
    stats_out: IoStats
    output_path: str
    hash_build_seconds: float = 0.0
    thread_stats: list[dict] = field(default_factory=list)
    cache_bypass_effective: bool = False


def last_mile_search(keys, lo: int, hi: int, q) -> tuple[int, int]:
    """Lower bound of q in keys[lo:hi] with a fixed comparison schedule.

    Returns (index, comparisons). The loop always halves the full width,
    so the count depends only on w = hi - lo: ceil(log2 w) + 1 for w >= 1,
    0 for an empty range. The index is in [lo, hi]; hi means every key in
    the range is below q.
    """
    base = lo
    n = hi - lo
    cmp = 0
    while n > 1:
        half = n >> 1
        cmp += 1
        if keys[base + half - 1] < q:
            base += half
        n -= half
    if n == 1:
        cmp += 1
        if keys[base] < q:
            base += 1
    return base, cmp


def _search_comparisons(widths: np.ndarray) -> np.ndarray:
    """Vectorized ceil(log2 w) + 1, matching last_mile_search exactly."""
    c = np.searchsorted(_POW2, widths, side="left") + 1
    return np.where(widths > 0, c, 0)


def _check_ascending(keys: np.ndarray, prev_last) -> int:
    if len(keys) > 1 and not bool(np.all(keys[1:] > keys[:-1])):
        raise ValueError("outer keys must be strictly ascending")
    if prev_last is not None and int(keys[0]) <= prev_last:
        raise ValueError("outer keys must be strictly ascending")
    return int(keys[-1])


def _inlj_stream(outer: TableReader, inner: TableReader, index, writer,
                 rank_lo: int, rank_hi: int, opt2: bool) -> tuple[int, int]:
    """Probe outer ranks [rank_lo, rank_hi); returns (matches, comparisons)."""
    learned = index.kind != "btree"
    out_count = 0
    comparisons = 0
    carry_lb = 0     # lower bound of the previous probe
    carry_seg = 0    # cursor position for segment routing
    prev_last = None
    for r_keys, _ in outer.scan_range(rank_lo, rank_hi):
        if len(r_keys) == 0:
            continue
        prev_last = _check_ascending(r_keys, prev_last)
        if learned:
            lo_w, hi_w, seg = index.window_batch(r_keys)
        else:
            lo_w, hi_w = index.window_batch(r_keys)
        i, m = 0, len(r_keys)
        while i < m:
            bs, bk, bv = inner.buffered_tuples()
            be = bs + len(bk)
            if hi_w[i] > be:
                eff = max(int(lo_w[i]), carry_lb) if (opt2 and learned) \
                    else int(lo_w[i])
                inner.read_window(eff, int(hi_w[i]))
                bs, bk, bv = inner.buffered_tuples()
                be = bs + len(bk)
            # maximal run of probes whose windows the buffer already covers
            j = int(np.searchsorted(hi_w, be, side="right"))
            if j <= i:
                j = i + 1
            qs = r_keys[i:j]
            lb_local = np.searchsorted(bk, qs, side="left")
            lb = bs + lb_local
            hi_b = hi_w[i:j]
            wm = np.empty(j - i, dtype=np.int64)
            wm[0] = carry_lb
            wm[1:] = lb[:-1]
            if opt2 and learned:
                eff_lo = np.maximum(lo_w[i:j], wm)
            else:
                eff_lo = lo_w[i:j]
            comparisons += int(_search_comparisons(hi_b - eff_lo).sum())
            if learned:
                comparisons += (j - i) + int(seg[j - 1]) - carry_seg
                carry_seg = int(seg[j - 1])
            else:
                comparisons += (j - i) * index.comparisons_per_probe
            hit = lb < hi_b
            eq = np.zeros(j - i, dtype=bool)
            if hit.any():
                at = lb_local[hit]
                eq[hit] = bk[at] == qs[hit]
            nm = int(np.count_nonzero(eq))
            if nm:
                writer.append(qs[eq], bv[lb_local[eq]])
                out_count += nm
            carry_lb = int(lb[-1])
            i = j
    return out_count, comparisons


def inlj(outer_path, inner_path, index, out_path, *, opt2: bool = True,
         threads: int = 1, window_fetch_blocks: int = 1,
         readahead_gap_blocks: int = 32, direct: bool = False) -> JoinResult:
    """Index nested loop join of sorted outer against indexed inner."""
    if threads < 1:
        raise ValueError("threads must be >= 1")
    method = "inlj_learned" if index.kind != "btree" else "inlj_btree"

    def open_pair(so: IoStats, si: IoStats):
        o = TableReader(outer_path, stats=so)
        s = TableReader(inner_path, stats=si, direct=direct,
                        window_fetch_blocks=window_fetch_blocks,
                        readahead_gap_blocks=readahead_gap_blocks)
        if index.n_keys != s.tuple_count:
            o.close()
            s.close()
            raise ValueError(
                f"index covers {index.n_keys} keys but inner table "
                f"holds {s.tuple_count}")
        return o, s

    t0 = time.perf_counter()
    if threads == 1:
        so, si, sw = IoStats(), IoStats(), IoStats()
        outer, inner = open_pair(so, si)
        try:
            with TableWriter(out_path, stats=sw) as w:
                out_count, comparisons = _inlj_stream(
                    outer, inner, index, w, 0, outer.tuple_count, opt2)
            n_outer = outer.tuple_count
            bypass = inner.direct_effective
        finally:
            outer.close()
            inner.close()
        dt = time.perf_counter() - t0
        return JoinResult(method, n_outer, index.n_keys, out_count,
                          comparisons, dt, so, si, sw, os.fspath(out_path),
                          cache_bypass_effective=bypass)

    # parallel: contiguous outer slices, private readers and part files
    with TableReader(outer_path) as probe:
        n_outer = probe.tuple_count
    bounds = [n_outer * t // threads for t in range(threads + 1)]
    parts = [f"{os.fspath(out_path)}.part{t}" for t in range(threads)]

    def run_slice(t: int) -> dict:
        so, si, sp = IoStats(), IoStats(), IoStats()
        outer, inner = open_pair(so, si)
        t1 = time.perf_counter()
        try:
            with TableWriter(parts[t], stats=sp) as w:
                nm, cmp = _inlj_stream(outer, inner, index, w,
                                       bounds[t], bounds[t + 1], opt2)
        finally:
            bypass = inner.direct_effective
            outer.close()
            inner.close()
        return {"thread": t, "output_tuples": nm, "comparisons": cmp,
                "cache_bypass": bypass,
                "seconds": time.perf_counter() - t1,
                "blocks_read_outer": so.blocks_read,
                "blocks_read_inner": si.blocks_read,
                "io_calls_inner": si.io_calls,
                "blocks_written": sp.blocks_written,
                "stats_outer": so, "stats_inner": si}

    with ThreadPoolExecutor(max_workers=threads) as pool:
        details = list(pool.map(run_slice, range(threads)))
    so_all, si_all, sw = IoStats(), IoStats(), IoStats()
    for d in details:
        so_all.add(d.pop("stats_outer"))
        si_all.add(d.pop("stats_inner"))
    out_count = sum(d["output_tuples"] for d in details)
    comparisons = sum(d["comparisons"] for d in details)
    bypass = all(d.pop("cache_bypass") for d in details)
    with TableWriter(out_path, stats=sw) as w:
        for p in parts:
            with TableReader(p) as r:  # part boundaries are not
                for k, v in r.scan():  # block-aligned: concat tuple-wise
                    w.append(k, v)
            os.unlink(p)
    dt = time.perf_counter() - t0
    return JoinResult(method, n_outer, index.n_keys, out_count, comparisons,
                      dt, so_all, si_all, sw, os.fspath(out_path),
                      thread_stats=details, cache_bypass_effective=bypass)


def sort_join(outer_path, inner_path, out_path,
              chunk_blocks: int = 256, direct: bool = False) -> JoinResult:
    """Merge two sorted tables with two-pointer comparison accounting.

    Comparisons are the steps the classic merge loop would take: each step
    compares the current pair and advances one side (both on a match), and
    the loop stops as soon as either side is exhausted. That equals
    i_final + j_final - matches, where i/j_final are the consumed ranks at
    termination.
    """
    so, si, sw = IoStats(), IoStats(), IoStats()
    t0 = time.perf_counter()
    with TableReader(outer_path, stats=so) as ro, \
            TableReader(inner_path, stats=si, direct=direct) as rs, \
            TableWriter(out_path, stats=sw) as w:
        n_r, n_s = ro.tuple_count, rs.tuple_count
        bypass = rs.direct_effective
        r_iter = ro.scan_range(0, n_r, chunk_blocks)
        s_iter = rs.scan_range(0, n_s, chunk_blocks)
        rk = next(r_iter, (None, None))[0]
        sk, sv = next(s_iter, (None, None))
        r_done = s_done = 0  # tuples in fully consumed chunks
        r_last = s_last = None
        matches = 0
        while rk is not None and sk is not None:
            common, _, s_at = np.intersect1d(rk, sk, assume_unique=True,
                                             return_indices=True)
            if len(common):
                w.append(common, sv[s_at])
                matches += len(common)
            r_max, s_max = int(rk[-1]), int(sk[-1])
            if r_max <= s_max:
                r_done += len(rk)
                r_last = r_max
                rk = next(r_iter, (None, None))[0]
            if s_max <= r_max:
                s_done += len(sk)
                s_last = s_max
                sk, sv = next(s_iter, (None, None))
        if rk is None and sk is None:
            i_f, j_f = n_r, n_s
        elif rk is None:  # outer exhausted; inner pointer stopped at r_last
            i_f = n_r
            at = int(np.searchsorted(sk, np.uint64(r_last), side="left"))
            hit = at < len(sk) and int(sk[at]) == r_last
            j_f = s_done + at + (1 if hit else 0)
        else:
            j_f = n_s
            at = int(np.searchsorted(rk, np.uint64(s_last), side="left"))
            hit = at < len(rk) and int(rk[at]) == s_last
            i_f = r_done + at + (1 if hit else 0)
        comparisons = i_f + j_f - matches
    dt = time.perf_counter() - t0
    return JoinResult("sort_join", n_r, n_s, matches, comparisons, dt,
                      so, si, sw, os.fspath(out_path),
                      cache_bypass_effective=bypass)


def hash_join(outer_path, inner_path, out_path,
              chunk_blocks: int = 256, direct: bool = False) -> JoinResult:
    """Build a hash set on outer keys, probe every inner tuple against it.

    The comparison column records one membership probe per inner tuple;
    hash bucket collisions inside the set are not modeled.
    """
    so, si, sw = IoStats(), IoStats(), IoStats()
    t0 = time.perf_counter()
    with TableReader(outer_path, stats=so) as ro, \
            TableReader(inner_path, stats=si, direct=direct) as rs, \
            TableWriter(out_path, stats=sw) as w:
        n_r, n_s = ro.tuple_count, rs.tuple_count
        bypass = rs.direct_effective
        tb = time.perf_counter()
        keys: set[int] = set()
        for k, _ in ro.scan_range(0, n_r, chunk_blocks):
            keys.update(k.tolist())
        hash_build = time.perf_counter() - tb
        matches = 0
        for sk, sv in rs.scan_range(0, n_s, chunk_blocks):
            mask = np.fromiter((k in keys for k in sk.tolist()),
                               dtype=bool, count=len(sk))
            nm = int(np.count_nonzero(mask))
            if nm:
                w.append(sk[mask], sv[mask])
                matches += nm
    dt = time.perf_counter() - t0
    return JoinResult("hash_join", n_r, n_s, matches, n_s, dt,
                      so, si, sw, os.fspath(out_path),
                      hash_build_seconds=hash_build,
                      cache_bypass_effective=bypass)
