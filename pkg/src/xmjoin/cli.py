"""Command-line entry points for table prep, index builds, joins, sweeps."""

from __future__ import annotations

import argparse
import csv
import os
import sys

from . import bench, costmodel, datagen, partition, pla
from .datagen import DISTRIBUTIONS


def _append_csv(path, row: bench.BenchResult) -> None:
    rows = bench.read_csv(path) if os.path.exists(path) else []
    rows.append(row)
    bench.write_csv(path, rows)


def _emit_row(args, row: bench.BenchResult) -> None:
    if getattr(args, "csv", None):
        _append_csv(args.csv, row)
    w = csv.writer(sys.stdout)
    w.writerow(bench.FIELDS)
    w.writerow(row.to_row())


def cmd_gen(args) -> int:
    n = datagen.gen_table(args.out, args.n, args.dist, args.seed)
    print(f"wrote {n} tuples ({args.dist}, seed {args.seed}) to {args.out}")
    return 0


def cmd_ingest(args) -> int:
    if args.pairs:
        n = datagen.ingest_raw(args.raw, args.out, sort=not args.unsorted)
    else:
        n = datagen.ingest_keys(args.raw, args.out,
                                sorted_keys=not args.unsorted,
                                skip_bytes=args.skip_bytes)
    print(f"ingested {n} tuples from {args.raw} to {args.out}")
    return 0


def cmd_shuffle(args) -> int:
    n = datagen.shuffle_table(args.table, args.out, args.seed)
    print(f"shuffled {n} tuples to {args.out}")
    return 0


def cmd_sample(args) -> int:
    n = datagen.sample_table(args.table, args.out, args.ratio, args.seed)
    print(f"sampled {n} tuples to {args.out}")
    return 0


def cmd_build_index(args) -> int:
    _, row = bench.build_index_timed(
        args.table, args.kind, args.out, epsilon=args.epsilon,
        every_kth=args.every_kth, pool_leaves=args.pool_leaves,
        dataset=args.dataset, seed=args.seed)
    _emit_row(args, row)
    return 0


def cmd_partition(args) -> int:
    model = partition.train_sampled_model(
        args.table, args.parts, fraction=args.fraction,
        eps_model=args.eps_model, seed=args.seed)
    pmap = partition.partition_table(args.table, args.out, model)
    pmap.save(args.out + ".pmap")
    pla.save(model.index, args.out + ".model")
    spilled = int((pmap.spill_blocks != partition.SPILL_NONE).sum())
    print(f"scattered {pmap.n_total} tuples into {pmap.n_parts} partitions "
          f"({spilled} spilled) at {args.out}")
    return 0


def cmd_join(args) -> int:
    kw = dict(threads=args.threads, direct=not args.no_direct,
              drop_cache=not args.keep_cache, dataset=args.dataset,
              seed=args.seed)
    if args.method in ("inlj_learned", "inlj_btree"):
        if not args.index:
            print("error: INLJ methods need --index", file=sys.stderr)
            return 2
        index = bench.load_index(args.index)
        row = bench.run_join(
            args.method, args.outer, args.inner, args.out, index=index,
            opt2=not args.no_opt2,
            window_fetch_blocks=args.window_fetch_blocks,
            readahead_gap_blocks=args.readahead_gap, **kw)
    elif args.method == "partition_join":
        pmap = partition.load_map(args.inner + ".pmap")
        model = partition.SampledModel(pla.load(args.inner + ".model"),
                                       pmap.n_total, pmap.n_parts)
        row = bench.run_join(args.method, args.outer, args.inner, args.out,
                             pmap=pmap, model=model, **kw)
    else:
        row = bench.run_join(args.method, args.outer, args.inner, args.out,
                             **kw)
    _emit_row(args, row)
    return 0


def cmd_sweep(args) -> int:
    cfg = bench.SweepConfig(
        distribution=args.dist, n_inner=args.n,
        methods=tuple(args.methods.split(",")),
        ratios=tuple(int(x) for x in args.ratios.split(",")),
        threads=tuple(int(x) for x in args.threads.split(",")),
        epsilons=tuple(int(x) for x in args.epsilons.split(",")),
        every_kth=args.every_kth, partition_parts=args.parts,
        seed=args.seed, direct=not args.no_direct,
        drop_cache=not args.keep_cache)
    rows = bench.sweep(args.workdir, args.out, cfg,
                       log=lambda msg: print(msg, file=sys.stderr))
    print(f"{len(rows)} rows in {args.out}")
    return 0


def cmd_verify(args) -> int:
    report = bench.verify_run(args.workdir, args.dist, n=args.n,
                              ratio=args.ratio, seed=args.seed,
                              parts=args.parts)
    for c in report.checks:
        if c.ok:
            print(f"PASS {c.method}: {c.output_tuples} tuples, "
                  f"byte-identical to oracle")
        else:
            print(f"FAIL {c.method}: first divergence at byte "
                  f"{c.first_divergence}")
    return 0 if report.passed else 1


def cmd_predict_cost(args) -> int:
    row = bench.predict_cost_row(args.n_outer, args.n_inner, args.epsilon,
                                 alpha=args.alpha, block=args.block)
    w = csv.writer(sys.stdout)
    w.writerow(bench.PREDICT_FIELDS)
    w.writerow(row[k] for k in bench.PREDICT_FIELDS)
    return 0


def cmd_calibrate_alpha(args) -> int:
    latencies = costmodel.probe_device(
        args.scratch, file_bytes=args.size_mib << 20, repeats=args.repeats,
        seed=args.seed)
    alpha, c = costmodel.calibrate_alpha(latencies)
    for blocks in sorted(latencies):
        print(f"read {blocks:4d} blocks: {latencies[blocks] * 1e6:.1f} us")
    print(f"alpha = {alpha:.6g}, fixed cost c = {c * 1e6:.1f} us")
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="xmjoin",
        description="External-memory join engine and benchmark lab")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.set_defaults(fn=fn)
        return sp

    sp = add("gen", cmd_gen, "generate a sorted synthetic table")
    sp.add_argument("--dist", choices=DISTRIBUTIONS, required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)

    sp = add("ingest", cmd_ingest, "wrap a raw little-endian u64 dump")
    sp.add_argument("--raw", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--pairs", action="store_true",
                    help="input holds (key, value) pairs, not bare keys")
    sp.add_argument("--skip-bytes", type=int, default=0,
                    help="foreign header bytes to drop (keys mode)")
    sp.add_argument("--unsorted", action="store_true",
                    help="keep input order instead of sorting by key")

    sp = add("shuffle", cmd_shuffle, "rewrite a table in random order")
    sp.add_argument("--table", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)

    sp = add("sample", cmd_sample, "sample a sorted table down")
    sp.add_argument("--table", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--ratio", type=float, required=True,
                    help="fraction of tuples to keep, in (0, 1]")
    sp.add_argument("--seed", type=int, default=0)

    sp = add("build-index", cmd_build_index, "build an index over a table")
    sp.add_argument("--table", required=True)
    sp.add_argument("--kind", choices=bench.INDEX_KINDS, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--epsilon", type=int, default=256)
    sp.add_argument("--every-kth", type=int, default=128,
                    help="sampling stride for pla_sampled")
    sp.add_argument("--pool-leaves", type=int, default=256,
                    help="leaf buffer pool size for btree_dynamic")
    sp.add_argument("--dataset", default="")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--csv", help="append the timing row to this file")

    sp = add("partition", cmd_partition, "CDF-partition a table")
    sp.add_argument("--table", required=True)
    sp.add_argument("--parts", type=int, required=True)
    sp.add_argument("--out", required=True,
                    help="data file; .pmap and .model sit beside it")
    sp.add_argument("--fraction", type=float, default=0.01)
    sp.add_argument("--eps-model", type=int, default=16)
    sp.add_argument("--seed", type=int, default=0)

    sp = add("join", cmd_join, "run one join and print its result row")
    sp.add_argument("--method", choices=bench.JOIN_METHODS, required=True)
    sp.add_argument("--outer", required=True)
    sp.add_argument("--inner", required=True,
                    help="inner table, or the partition data file")
    sp.add_argument("--out", required=True)
    sp.add_argument("--index", help="index file for INLJ methods")
    sp.add_argument("--threads", type=int, default=1)
    sp.add_argument("--window-fetch-blocks", type=int, default=1)
    sp.add_argument("--readahead-gap", type=int, default=32)
    sp.add_argument("--no-opt2", action="store_true",
                    help="disable sorted-output window tightening")
    sp.add_argument("--no-direct", action="store_true",
                    help="do not bypass the OS cache on inner reads")
    sp.add_argument("--keep-cache", action="store_true",
                    help="skip the cold-cache eviction step")
    sp.add_argument("--dataset", default="")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--csv", help="append the result row to this file")

    sp = add("sweep", cmd_sweep, "run a benchmark grid, resumably")
    sp.add_argument("--workdir", required=True)
    sp.add_argument("--out", required=True, help="result CSV path")
    sp.add_argument("--dist", choices=DISTRIBUTIONS, default="usparse")
    sp.add_argument("--n", type=int, default=1_000_000,
                    help="inner table tuples")
    sp.add_argument("--methods",
                    default="inlj_learned,inlj_btree,sort_join,hash_join")
    sp.add_argument("--ratios", default="1,10,100")
    sp.add_argument("--threads", default="1,2,4,8")
    sp.add_argument("--epsilons", default="256")
    sp.add_argument("--every-kth", type=int, default=128)
    sp.add_argument("--parts", type=int, default=64)
    sp.add_argument("--seed", type=int, default=7)
    sp.add_argument("--no-direct", action="store_true")
    sp.add_argument("--keep-cache", action="store_true")

    sp = add("verify", cmd_verify, "check every method against the oracle")
    sp.add_argument("--workdir", required=True)
    sp.add_argument("--dist", choices=DISTRIBUTIONS, default="udense")
    sp.add_argument("--n", type=int, default=10_000)
    sp.add_argument("--ratio", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--parts", type=int, default=8)

    sp = add("predict-cost", cmd_predict_cost,
             "evaluate the affine cost model")
    sp.add_argument("--n-outer", type=float, required=True)
    sp.add_argument("--n-inner", type=float, required=True)
    sp.add_argument("--epsilon", type=float, required=True)
    sp.add_argument("--alpha", type=float, default=0.01)
    sp.add_argument("--block", type=int, default=512)

    sp = add("calibrate-alpha", cmd_calibrate_alpha,
             "probe the device and fit alpha")
    sp.add_argument("--scratch", required=True,
                    help="scratch file path on the device to probe")
    sp.add_argument("--size-mib", type=int, default=256)
    sp.add_argument("--repeats", type=int, default=9)
    sp.add_argument("--seed", type=int, default=0)

    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
