"""xmjoin-report: render figures and tables from an xmjoin sweep CSV."""

import argparse
import os
import sys

from . import figures, tables
from .schema import SchemaError, read_rows


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="xmjoin-report",
        description="Render the standard report (three figure families "
                    "as PNG+SVG+JSON, plus a markdown size table) from "
                    "an xmjoin result CSV.")
    p.add_argument("csv", help="result CSV produced by xmjoin")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--metric", default="join_seconds",
                   help="column charted by the bar and scaling figures")
    p.add_argument("--io-metric", default="blocks_read_inner",
                   help="column paired with index size in the "
                        "epsilon figure")
    p.add_argument("--scaling-ratio", type=int, default=None,
                   help="ratio for the thread-scaling figure "
                        "(default: smallest present)")
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        rows = read_rows(args.csv)
        os.makedirs(args.out, exist_ok=True)
        written = []
        for fig in (figures.methods_by_ratio(rows, args.metric),
                    figures.thread_scaling(rows, args.metric,
                                           args.scaling_ratio),
                    figures.epsilon_tradeoff(rows, args.io_metric)):
            written.extend(figures.save_figure(fig, args.out))
        table_path = os.path.join(args.out, "epsilon_sizes.md")
        with open(table_path, "w") as f:
            f.write(tables.epsilon_size_table(rows))
        written.append(table_path)
    except (SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
