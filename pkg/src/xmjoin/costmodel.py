"""Affine I/O cost model for indexed lookups versus sequential scans.

The device is modeled as charging 1 + alpha * b abstract time units for a
read call of b blocks: a fixed per-call overhead plus a per-block transfer
term. Under that model an indexed join of outer R (scanned once) against
inner S probed through an index with search windows of epsilon units is

    cost = |R| / B  +  min(|R|, |S| / epsilon) * (1 + alpha * epsilon / B)

All quantities are dimensionless counts; |R|, |S|, and epsilon just have to
share a unit and B is the block size in that unit (512 words of 8 bytes per
4096-byte block, equivalently 256 tuples with B=256). The min term is the
number of window reads the inner side actually issues: one per probe, but
never more than |S|/epsilon because consecutive probes landing in the same
window region share the fetch.

calibrate_alpha fits alpha from measured latencies of random reads at a few
call sizes; probe_device collects those latencies from a scratch file.
"""

from __future__ import annotations

import os
import time
import warnings
from dataclasses import dataclass

import numpy as np

from .tablestore import BLOCK_BYTES, _aligned_bytes

WORDS_PER_BLOCK = 512
DEFAULT_PROBE_BLOCKS = (1, 16, 256)
MIN_PROBE_FILE_BYTES = 256 << 20


@dataclass(frozen=True)
class CostParams:
    alpha: float = 0.01
    block: int = WORDS_PER_BLOCK


@dataclass(frozen=True)
class CostBreakdown:
    outer_scan: float
    inner_lookups: float
    per_lookup: float
    total: float


def predict_cost(n_outer: float, n_inner: float, epsilon: float,
                 params: CostParams = CostParams()) -> CostBreakdown:
    if min(n_outer, n_inner) < 0 or epsilon <= 0:
        raise ValueError("sizes must be >= 0 and epsilon > 0")
    outer = n_outer / params.block
    lookups = min(n_outer, n_inner / epsilon)
    per = 1.0 + params.alpha * epsilon / params.block
    return CostBreakdown(outer, lookups, per, outer + lookups * per)


def predict_io_calls(n_outer: float, n_inner: float, epsilon: float,
                     params: CostParams = CostParams()) -> float:
    """Call-count skeleton of the same plan: no alpha weighting."""
    if min(n_outer, n_inner) < 0 or epsilon <= 0:
        raise ValueError("sizes must be >= 0 and epsilon > 0")
    return n_outer / params.block + min(n_outer, n_inner / epsilon)


def sequential_cost(n_outer: float, n_inner: float,
                    params: CostParams = CostParams()) -> float:
    """Scan both sides once (merge on sorted data)."""
    return (n_outer + n_inner) / params.block


def choose_regime(n_outer: float, n_inner: float, epsilon: float,
                  params: CostParams = CostParams()) -> str:
    """Cheaper plan under the model; ties go to the sequential scan."""
    indexed = predict_cost(n_outer, n_inner, epsilon, params).total
    if sequential_cost(n_outer, n_inner, params) <= indexed:
        return "sequential_scan"
    return "indexed_lookup"


def calibrate_alpha(latencies) -> tuple[float, float]:
    """Fit latency(b) = c * (1 + alpha * b); returns (alpha, c).

    latencies maps call size in blocks -> seconds. Degenerate inputs fall
    back rather than fail: a non-monotone profile is refit through its two
    largest call sizes, and a negative alpha is clamped to 0. Both paths
    warn.
    """
    if len(latencies) < 2:
        raise ValueError("need latencies for at least 2 call sizes")
    sizes = np.array(sorted(latencies), dtype=np.float64)
    t = np.array([latencies[int(b)] for b in sizes], dtype=np.float64)
    if bool(np.any(t <= 0)):
        raise ValueError("latencies must be positive")

    def two_point() -> tuple[float, float]:
        b1, b2 = sizes[-2], sizes[-1]
        t1, t2 = t[-2], t[-1]
        denom = t1 * b2 - t2 * b1
        if denom <= 0 or t2 <= t1:
            warnings.warn("profile has no positive transfer slope; alpha=0")
            return 0.0, float(t.mean())
        alpha = (t2 - t1) / denom
        return float(alpha), float(t1 / (1 + alpha * b1))

    if bool(np.any(np.diff(t) <= 0)):
        warnings.warn("latency profile is not increasing in call size; "
                      "refitting through the two largest sizes")
        return two_point()
    # least squares on t = c + (c*alpha) * b
    slope, intercept = np.polyfit(sizes, t, 1)
    if intercept <= 0:
        warnings.warn("non-positive fitted overhead; "
                      "refitting through the two largest sizes")
        return two_point()
    alpha = slope / intercept
    if alpha < 0:
        warnings.warn("fitted alpha below 0; clamping to 0")
        return 0.0, float(t.mean())
    return float(alpha), float(intercept)


def probe_device(scratch_path, file_bytes: int = MIN_PROBE_FILE_BYTES,
                 sizes_blocks=DEFAULT_PROBE_BLOCKS, repeats: int = 32,
                 seed: int = 0) -> dict[int, float]:
    """Median random-read latency per call size, on a fresh scratch file.

    The file must be large enough that offsets do not all sit in cache
    (>= 256 MiB); reads try O_DIRECT first to bypass the page cache.
    """
    if file_bytes < MIN_PROBE_FILE_BYTES:
        raise ValueError("probe file must be at least 256 MiB")
    path = os.fspath(scratch_path)
    rng = np.random.default_rng(seed)
    nblocks = file_bytes // BLOCK_BYTES
    chunk = rng.integers(0, 2**64, size=BLOCK_BYTES * 1024 // 8,
                         dtype=np.uint64).tobytes()
    with open(path, "wb") as f:
        written = 0
        while written < nblocks * BLOCK_BYTES:
            f.write(chunk)
            written += len(chunk)
        f.truncate(nblocks * BLOCK_BYTES)
        f.flush()
        os.fsync(f.fileno())
    fd, use_direct = _open_probe(path)
    try:
        max_bytes = max(sizes_blocks) * BLOCK_BYTES
        mv = memoryview(_aligned_bytes(max_bytes))
        results: dict[int, float] = {}
        for b in sizes_blocks:
            if b > nblocks:
                raise ValueError(f"call size {b} exceeds probe file")
            offs = rng.integers(0, nblocks - b + 1, size=repeats)
            want = b * BLOCK_BYTES
            samples = []
            for off in offs.tolist():
                t0 = time.perf_counter()
                if use_direct:
                    got = os.preadv(fd, [mv[:want]], off * BLOCK_BYTES)
                else:
                    got = len(os.pread(fd, want, off * BLOCK_BYTES))
                dt = time.perf_counter() - t0
                if got != want:
                    raise OSError("short probe read")
                samples.append(dt)
            results[int(b)] = float(np.median(samples))
        return results
    finally:
        os.close(fd)
        os.unlink(path)


def _open_probe(path: str) -> tuple[int, bool]:
    """Open for reading with O_DIRECT when the filesystem supports it."""
    direct = getattr(os, "O_DIRECT", 0)
    if direct:
        try:
            fd = os.open(path, os.O_RDONLY | direct)
            try:
                os.preadv(fd, [memoryview(_aligned_bytes(BLOCK_BYTES))], 0)
                return fd, True
            except OSError:
                os.close(fd)
        except OSError:
            pass
    return os.open(path, os.O_RDONLY), False
