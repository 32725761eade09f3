"""Benchmark orchestration: timed runs, result rows, CSV files, sweeps.

Every numeric column in a result row comes from an IoStats counter or a
direct measurement, never an estimate. Timings are reported for context
but carry no correctness weight; the counters do.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from . import btree, costmodel, datagen, joins, partition, pla
from .tablestore import (TUPLES_PER_BLOCK, IoStats, TableReader,
                         read_table, write_table)

CSV_VERSION_LINE = "# xmjoin-csv v1"

FIELDS = ("method", "dataset", "n_outer", "n_inner", "ratio", "threads",
          "epsilon", "index_kind", "index_bytes", "build_seconds",
          "join_seconds", "hash_build_seconds", "blocks_read_outer",
          "blocks_read_inner", "io_calls_inner", "blocks_written",
          "comparisons", "output_tuples", "cache_bypass_effective", "seed")

_INTS = {"n_outer", "n_inner", "ratio", "threads", "epsilon", "index_bytes",
         "blocks_read_outer", "blocks_read_inner", "io_calls_inner",
         "blocks_written", "comparisons", "output_tuples", "seed"}
_FLOATS = {"build_seconds", "join_seconds"}

INDEX_KINDS = ("pla", "pla_sampled", "btree_pivot", "btree_dynamic")
JOIN_METHODS = ("inlj_learned", "inlj_btree", "sort_join", "hash_join",
                "partition_join")


class SchemaError(ValueError):
    """Result CSV does not match the versioned schema."""


@dataclass
class BenchResult:
    method: str
    dataset: str
    n_outer: int
    n_inner: int
    ratio: int
    threads: int
    epsilon: int
    index_kind: str
    index_bytes: int
    build_seconds: float
    join_seconds: float
    hash_build_seconds: float | None
    blocks_read_outer: int
    blocks_read_inner: int
    io_calls_inner: int
    blocks_written: int
    comparisons: int
    output_tuples: int
    cache_bypass_effective: bool
    seed: int

    def key(self) -> tuple:
        """Identity of a sweep cell, used to resume interrupted sweeps."""
        return (self.method, self.dataset, self.ratio, self.threads,
                self.epsilon, self.seed)

    def to_row(self) -> list[str]:
        out = []
        for name in FIELDS:
            v = getattr(self, name)
            if name == "hash_build_seconds":
                out.append("" if v is None else repr(float(v)))
            elif name == "cache_bypass_effective":
                out.append("true" if v else "false")
            elif name in _FLOATS:
                out.append(repr(float(v)))
            else:
                out.append(str(v))
        return out

    @classmethod
    def from_row(cls, row: dict) -> "BenchResult":
        kw = {}
        for name in FIELDS:
            raw = row[name]
            if name == "hash_build_seconds":
                kw[name] = None if raw == "" else float(raw)
            elif name == "cache_bypass_effective":
                if raw not in ("true", "false"):
                    raise SchemaError(f"bad flag value {raw!r}")
                kw[name] = raw == "true"
            elif name in _FLOATS:
                kw[name] = float(raw)
            elif name in _INTS:
                kw[name] = int(raw)
            else:
                kw[name] = raw
        return cls(**kw)


def write_csv(path, rows) -> None:
    """Atomically (re)write a results file in the versioned schema."""
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as f:
        f.write(CSV_VERSION_LINE + "\n")
        w = csv.writer(f)
        w.writerow(FIELDS)
        for r in rows:
            w.writerow(r.to_row())
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def read_csv(path) -> list[BenchResult]:
    with open(path, newline="", encoding="utf-8") as f:
        first = f.readline().rstrip("\n")
        if first != CSV_VERSION_LINE:
            raise SchemaError(
                f"expected leading {CSV_VERSION_LINE!r}, got {first!r}")
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != FIELDS:
            raise SchemaError("header does not match the v1 column list")
        return [BenchResult.from_row(row) for row in reader]


def drop_caches(paths) -> bool:
    """Best-effort eviction of the given files from the OS page cache.

    Returns whether per-file eviction was applied to every existing path.
    A system-wide drop is also attempted but usually needs privileges.
    """
    ok = True
    for p in paths:
        if p is None or not os.path.exists(p):
            continue
        fd = os.open(os.fspath(p), os.O_RDONLY)
        try:
            os.fsync(fd)
            os.posix_fadvise(fd, 0, 0, os.POSIX_FADV_DONTNEED)
        except (AttributeError, OSError):
            ok = False
        finally:
            os.close(fd)
    try:
        with open("/proc/sys/vm/drop_caches", "w") as f:
            f.write("1\n")
    except OSError:
        pass
    return ok


def load_index(path):
    """Load a PLAI or BTPI index file, dispatching on the magic bytes."""
    with open(path, "rb") as f:
        magic = f.read(4)
    if magic == b"PLAI":
        return pla.load(path)
    if magic == b"BTPI":
        return btree.load(path)
    raise ValueError(f"not an index file (magic {magic!r})")


def build_index_timed(table_path, kind: str, out_path=None, *,
                      epsilon: int = 256, every_kth: int = 128,
                      pool_leaves: int = 256, dataset: str = "",
                      seed: int = 0):
    """Build an index over a table, returning (index, timing row).

    Static kinds load the keys into memory first; the timed region covers
    construction only, not the key load or the index write-out. The
    dynamic kind is a workload, not a bulk build: every tuple is inserted
    in the order the table stores it, and the timed region includes the
    leaf I/O that workload causes. Its row returns (None, row) since the
    structure lives in its leaf file.
    """
    if kind not in INDEX_KINDS:
        raise ValueError(f"unknown index kind {kind!r}; "
                         f"expected one of {INDEX_KINDS}")
    src = IoStats()

    if kind == "btree_dynamic":
        if out_path is None:
            raise ValueError("btree_dynamic needs an output leaf file")
        st = IoStats()
        n = 0
        t0 = time.perf_counter()
        with TableReader(table_path, stats=src) as r:
            with btree.DynamicBtree(out_path, stats=st,
                                    pool_leaves=pool_leaves) as dyn:
                for keys, values in r.scan():
                    for k, v in zip(keys.tolist(), values.tolist()):
                        dyn.insert(k, v)
                    n += len(keys)
                dyn.flush()
                index_bytes = (dyn.leaf_count + 1) * 4096
        dt = time.perf_counter() - t0
        row = BenchResult(
            method="build", dataset=dataset, n_outer=0, n_inner=n, ratio=1,
            threads=1, epsilon=0, index_kind=kind, index_bytes=index_bytes,
            build_seconds=dt, join_seconds=0.0, hash_build_seconds=None,
            blocks_read_outer=0,
            blocks_read_inner=src.blocks_read + st.blocks_read,
            io_calls_inner=src.io_calls + st.io_calls,
            blocks_written=st.blocks_written, comparisons=0,
            output_tuples=0, cache_bypass_effective=False, seed=seed)
        return None, row

    keys, _ = read_table(table_path)
    t0 = time.perf_counter()
    if kind == "pla":
        index = pla.build_pla(keys, epsilon)
    elif kind == "pla_sampled":
        index = pla.build_sampled(keys, every_kth, epsilon)
    else:
        index = btree.build_pivot_btree(keys)
    dt = time.perf_counter() - t0
    if out_path is not None:
        if kind == "btree_pivot":
            btree.save(index, out_path)
        else:
            pla.save(index, out_path)
    row = BenchResult(
        method="build", dataset=dataset, n_outer=0, n_inner=len(keys),
        ratio=1, threads=1,
        epsilon=index.effective_window if kind != "btree_pivot"
        else TUPLES_PER_BLOCK,
        index_kind=kind, index_bytes=index.size_bytes(),
        build_seconds=dt,
        join_seconds=0.0, hash_build_seconds=None, blocks_read_outer=0,
        blocks_read_inner=0, io_calls_inner=0, blocks_written=0,
        comparisons=0, output_tuples=0, cache_bypass_effective=False,
        seed=seed)
    return index, row


def run_join(method: str, outer_path, inner_path, out_path, *,
             index=None, pmap=None, model=None, threads: int = 1,
             opt2: bool = True, window_fetch_blocks: int = 1,
             readahead_gap_blocks: int = 32, direct: bool = True,
             drop_cache: bool = True, dataset: str = "", seed: int = 0,
             epsilon: int | None = None,
             build_seconds: float = 0.0) -> BenchResult:
    """Run one join cold and reduce its JoinResult to a result row.

    For partition_join, inner_path is the scattered data file and pmap and
    model are required; index_bytes then counts the model plus the map.
    epsilon defaults to the index's effective window width (one block for
    the B-tree, 0 when there is no windowed index).
    """
    if method not in JOIN_METHODS:
        raise ValueError(f"unknown method {method!r}; "
                         f"expected one of {JOIN_METHODS}")
    if drop_cache:
        drop_caches([outer_path, inner_path])

    index_kind = ""
    index_bytes = 0
    if method in ("inlj_learned", "inlj_btree"):
        if index is None:
            raise ValueError(f"{method} needs a built index")
        jr = joins.inlj(outer_path, inner_path, index, out_path,
                        opt2=opt2, threads=threads,
                        window_fetch_blocks=window_fetch_blocks,
                        readahead_gap_blocks=readahead_gap_blocks,
                        direct=direct)
        if jr.method != method:
            raise ValueError(
                f"index kind {index.kind!r} drives {jr.method}, "
                f"not {method}")
        index_kind = index.kind
        index_bytes = index.size_bytes()
        if epsilon is None:
            epsilon = (index.effective_window
                       if index.kind != "btree" else TUPLES_PER_BLOCK)
    elif method == "sort_join":
        jr = joins.sort_join(outer_path, inner_path, out_path,
                             direct=direct)
    elif method == "hash_join":
        jr = joins.hash_join(outer_path, inner_path, out_path,
                             direct=direct)
    else:
        if pmap is None or model is None:
            raise ValueError("partition_join needs a partition map "
                             "and a trained model")
        jr = partition.unclustered_join(outer_path, inner_path, pmap,
                                        model, out_path)
        index_kind = model.index.kind
        index_bytes = model.index.size_bytes() + len(pmap.serialize())
        if epsilon is None:
            epsilon = model.index.effective_window

    ratio = round(jr.n_inner / jr.n_outer) if jr.n_outer else 0
    return BenchResult(
        method=jr.method, dataset=dataset, n_outer=jr.n_outer,
        n_inner=jr.n_inner, ratio=ratio, threads=threads,
        epsilon=0 if epsilon is None else int(epsilon),
        index_kind=index_kind, index_bytes=index_bytes,
        build_seconds=build_seconds, join_seconds=jr.join_seconds,
        hash_build_seconds=(jr.hash_build_seconds
                            if jr.method == "hash_join" else None),
        blocks_read_outer=jr.stats_outer.blocks_read,
        blocks_read_inner=jr.stats_inner.blocks_read,
        io_calls_inner=jr.stats_inner.io_calls,
        blocks_written=jr.stats_out.blocks_written,
        comparisons=jr.comparisons, output_tuples=jr.output_tuples,
        cache_bypass_effective=jr.cache_bypass_effective, seed=seed)


def _window_index(keys, window: int, every_kth: int):
    """Build the learned index whose effective window equals window.

    Sampled when the width is a multiple of 2k (the paper's grid points
    256, 2048, 4096 with k = 128), a full PLA otherwise.
    """
    if window % (2 * every_kth) == 0 and window >= 2 * every_kth:
        return pla.build_sampled(keys, every_kth, window // (2 * every_kth) - 1)
    if window % 2 or window < 2:
        raise ValueError(f"cannot realize a window of {window} tuples")
    return pla.build_pla(keys, window // 2 - 1)


@dataclass
class SweepConfig:
    distribution: str = "usparse"
    n_inner: int = 1_000_000
    methods: tuple = ("inlj_learned", "inlj_btree", "sort_join",
                      "hash_join")
    ratios: tuple = (1, 10, 100)
    threads: tuple = (1, 2, 4, 8)
    epsilons: tuple = (256,)
    every_kth: int = 128
    partition_parts: int = 64
    seed: int = 7
    direct: bool = True
    drop_cache: bool = True
    keep_outputs: bool = False


def sweep(workdir, out_csv, cfg: SweepConfig = SweepConfig(),
          log=None) -> list[BenchResult]:
    """Run the methods x ratios x threads x epsilons grid, resumably.

    Completed cells are identified by (method, dataset, ratio, threads,
    epsilon, seed) in an existing CSV and skipped; after every fresh run
    the whole file is atomically rewritten in canonical grid order, so an
    interrupted sweep resumed later converges to the same bytes.

    Column notes: epsilon records the cell's error window; sort_join and
    hash_join execute single-threaded and without a window regardless of
    the cell's threads and epsilon values, which are recorded as
    requested. Derived seeds (sampling, shuffling) are deterministic
    functions of cfg.seed, which is what the seed column stores.
    """
    workdir = os.fspath(workdir)
    os.makedirs(workdir, exist_ok=True)
    say = log if log is not None else lambda *_: None
    dataset = cfg.distribution

    existing: dict[tuple, BenchResult] = {}
    if os.path.exists(out_csv):
        for r in read_csv(out_csv):
            existing[r.key()] = r

    inner = os.path.join(workdir, f"{dataset}-{cfg.n_inner}.tbl")
    if not os.path.exists(inner):
        say(f"gen {inner}")
        datagen.gen_table(inner, cfg.n_inner, cfg.distribution, cfg.seed)

    outers: dict[int, str] = {}
    for ratio in cfg.ratios:
        p = os.path.join(workdir, f"{dataset}-{cfg.n_inner}-r{ratio}.tbl")
        if not os.path.exists(p):
            say(f"sample ratio {ratio} -> {p}")
            datagen.sample_table(inner, p, 1.0 / ratio,
                                 cfg.seed + 1000 + ratio)
        outers[ratio] = p

    # indexes are built once per sweep invocation; cached rows keep the
    # build timing of the invocation that produced them
    keys = None
    learned: dict[int, tuple] = {}
    btree_idx = None
    btree_build = 0.0
    part_ready = None

    def need_keys():
        nonlocal keys
        if keys is None:
            keys = read_table(inner)[0]
        return keys

    def learned_for(window: int):
        if window not in learned:
            t0 = time.perf_counter()
            idx = _window_index(need_keys(), window, cfg.every_kth)
            learned[window] = (idx, time.perf_counter() - t0)
            say(f"built {idx.kind} window={window} "
                f"({idx.size_bytes()} bytes)")
        return learned[window]

    def btree_for():
        nonlocal btree_idx, btree_build
        if btree_idx is None:
            t0 = time.perf_counter()
            btree_idx = btree.build_pivot_btree(need_keys())
            btree_build = time.perf_counter() - t0
            say(f"built btree_pivot ({btree_idx.size_bytes()} bytes)")
        return btree_idx, btree_build

    def partition_ready():
        nonlocal part_ready
        if part_ready is None:
            shuf = os.path.join(workdir, f"{dataset}-{cfg.n_inner}-shuf.tbl")
            data = os.path.join(workdir, f"{dataset}-{cfg.n_inner}.part")
            if not os.path.exists(shuf):
                datagen.shuffle_table(inner, shuf, cfg.seed + 5)
            t0 = time.perf_counter()
            model = partition.train_sampled_model(
                shuf, cfg.partition_parts, seed=cfg.seed + 6)
            pmap = partition.partition_table(shuf, data, model)
            part_ready = (data, pmap, model, time.perf_counter() - t0)
            say(f"partitioned into {cfg.partition_parts} parts")
        return part_ready

    cells = list(product(cfg.methods, cfg.ratios, cfg.threads,
                         cfg.epsilons))
    rows: list[BenchResult] = []
    done = dict(existing)
    for method, ratio, t, eps in cells:
        key = (method, dataset, ratio, t, eps, cfg.seed)
        if key in done:
            rows.append(done[key])
            continue
        out = os.path.join(workdir,
                           f"out-{method}-r{ratio}-t{t}-e{eps}.tbl")
        kw = dict(threads=t, direct=cfg.direct, drop_cache=cfg.drop_cache,
                  dataset=dataset, seed=cfg.seed, epsilon=eps)
        if method == "inlj_learned":
            idx, bsec = learned_for(eps)
            row = run_join(method, outers[ratio], inner, out, index=idx,
                           window_fetch_blocks=-(-eps // TUPLES_PER_BLOCK),
                           build_seconds=bsec, **kw)
        elif method == "inlj_btree":
            idx, bsec = btree_for()
            row = run_join(method, outers[ratio], inner, out, index=idx,
                           build_seconds=bsec, **kw)
        elif method == "partition_join":
            data, pmap, model, bsec = partition_ready()
            row = run_join(method, outers[ratio], data, out, pmap=pmap,
                           model=model, build_seconds=bsec, **kw)
        else:
            row = run_join(method, outers[ratio], inner, out, **kw)
        if not cfg.keep_outputs:
            os.unlink(out)
        rows.append(row)
        done[key] = row
        say(f"{method} ratio={ratio} threads={t} eps={eps}: "
            f"{row.join_seconds:.3f}s, {row.output_tuples} tuples")
        write_csv(out_csv, [done[k] for k in
                            _cell_keys(cells, dataset, cfg.seed)
                            if k in done])
    # normalize order even when everything was cached
    final = [done[k] for k in _cell_keys(cells, dataset, cfg.seed)
             if k in done]
    write_csv(out_csv, final)
    return final


def _cell_keys(cells, dataset: str, seed: int):
    for method, ratio, t, eps in cells:
        yield (method, dataset, ratio, t, eps, seed)


def first_divergence(path_a, path_b) -> int:
    """Byte offset where two files first differ, -1 if identical."""
    off = 0
    with open(path_a, "rb") as fa, open(path_b, "rb") as fb:
        while True:
            a = fa.read(1 << 20)
            b = fb.read(1 << 20)
            if a == b:
                if not a:
                    return -1
                off += len(a)
                continue
            n = min(len(a), len(b))
            for i in range(n):
                if a[i] != b[i]:
                    return off + i
            return off + n


@dataclass
class MethodCheck:
    method: str
    ok: bool
    first_divergence: int
    output_tuples: int


@dataclass
class VerifyReport:
    dataset: str
    n: int
    ratio: int
    seed: int
    checks: list[MethodCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.ok for c in self.checks)


def verify_run(workdir, distribution: str = "udense", n: int = 10_000,
               ratio: int = 10, seed: int = 0, parts: int = 8,
               epsilon: int = 256) -> VerifyReport:
    """Run every join method against the in-memory intersection oracle.

    The oracle is np.isin over the two key arrays with values taken from
    the inner table, written through the ordinary writer; every method's
    output file must match it byte for byte.
    """
    workdir = os.fspath(workdir)
    os.makedirs(workdir, exist_ok=True)
    inner = os.path.join(workdir, "inner.tbl")
    outer = os.path.join(workdir, "outer.tbl")
    datagen.gen_table(inner, n, distribution, seed)
    datagen.sample_table(inner, outer, 1.0 / ratio, seed + 1)

    ik, iv = read_table(inner)
    rk, _ = read_table(outer)
    mask = np.isin(ik, rk, assume_unique=True)
    oracle = os.path.join(workdir, "oracle.tbl")
    write_table(oracle, ik[mask], iv[mask])

    report = VerifyReport(distribution, n, ratio, seed)

    def check(name: str, jr):
        offset = first_divergence(jr.output_path, oracle)
        report.checks.append(
            MethodCheck(name, offset == -1, offset, jr.output_tuples))

    idx = pla.build_pla(ik, epsilon)
    check("inlj_learned", joins.inlj(
        outer, inner, idx, os.path.join(workdir, "out-learned.tbl")))
    check("inlj_btree", joins.inlj(
        outer, inner, btree.build_pivot_btree(ik),
        os.path.join(workdir, "out-btree.tbl")))
    check("sort_join", joins.sort_join(
        outer, inner, os.path.join(workdir, "out-sort.tbl")))
    check("hash_join", joins.hash_join(
        outer, inner, os.path.join(workdir, "out-hash.tbl")))

    shuf = os.path.join(workdir, "inner-shuf.tbl")
    datagen.shuffle_table(inner, shuf, seed + 2)
    model = partition.train_sampled_model(shuf, parts, seed=seed + 3)
    data = os.path.join(workdir, "inner.part")
    pmap = partition.partition_table(shuf, data, model)
    check("partition_join", partition.unclustered_join(
        outer, data, pmap, model, os.path.join(workdir, "out-part.tbl")))
    return report


PREDICT_FIELDS = ("n_outer", "n_inner", "epsilon", "alpha", "block",
                  "outer_scan", "inner_lookups", "per_lookup", "total",
                  "sequential", "regime", "predicted_io_calls")


def predict_cost_row(n_outer: int, n_inner: int, epsilon: int,
                     alpha: float = 0.01, block: int = 512) -> dict:
    """One CSV-shaped dict with both cost terms, regime, and io calls."""
    params = costmodel.CostParams(alpha=alpha, block=block)
    b = costmodel.predict_cost(n_outer, n_inner, epsilon, params)
    return {
        "n_outer": n_outer, "n_inner": n_inner, "epsilon": epsilon,
        "alpha": alpha, "block": block, "outer_scan": b.outer_scan,
        "inner_lookups": b.inner_lookups, "per_lookup": b.per_lookup,
        "total": b.total,
        "sequential": costmodel.sequential_cost(n_outer, n_inner, params),
        "regime": costmodel.choose_regime(n_outer, n_inner, epsilon,
                                          params),
        "predicted_io_calls": costmodel.predict_io_calls(
            n_outer, n_inner, epsilon, params),
    }
