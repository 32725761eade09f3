"""Reader for xmjoin result CSVs.

The file contract: a `# xmjoin-csv v1` version line, a header naming
the 20 columns in order, then one row per benchmark cell. Floats are
repr() round-trips, `hash_build_seconds` may be empty, booleans are
true/false. This module revalidates all of it so downstream figures
never chart a malformed cell.
"""

import csv
from dataclasses import dataclass

VERSION_LINE = "# xmjoin-csv v1"

COLUMNS = (
    "method", "dataset", "n_outer", "n_inner", "ratio", "threads",
    "epsilon", "index_kind", "index_bytes", "build_seconds",
    "join_seconds", "hash_build_seconds", "blocks_read_outer",
    "blocks_read_inner", "io_calls_inner", "blocks_written",
    "comparisons", "output_tuples", "cache_bypass_effective", "seed",
)

_INTS = frozenset((
    "n_outer", "n_inner", "ratio", "threads", "epsilon", "index_bytes",
    "blocks_read_outer", "blocks_read_inner", "io_calls_inner",
    "blocks_written", "comparisons", "output_tuples", "seed",
))
_FLOATS = frozenset(("build_seconds", "join_seconds"))

# columns a figure may chart
NUMERIC_COLUMNS = _INTS | _FLOATS | {"hash_build_seconds"}


class SchemaError(ValueError):
    """The CSV is not a valid xmjoin result file."""


@dataclass(frozen=True)
class Row:
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


def _convert(name: str, raw: str, lineno: int):
    try:
        if name == "hash_build_seconds":
            return None if raw == "" else float(raw)
        if name == "cache_bypass_effective":
            if raw not in ("true", "false"):
                raise ValueError(raw)
            return raw == "true"
        if name in _FLOATS:
            return float(raw)
        if name in _INTS:
            return int(raw)
    except ValueError:
        raise SchemaError(
            f"line {lineno}: column {name!r} has bad value {raw!r}") from None
    return raw


def read_rows(path) -> list[Row]:
    """Parse and validate; raises SchemaError on any contract breach."""
    with open(path, newline="") as f:
        version = f.readline().rstrip("\r\n")
        if version != VERSION_LINE:
            raise SchemaError(
                f"expected version line {VERSION_LINE!r}, got {version!r}")
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("missing header line") from None
        if tuple(header) != COLUMNS:
            missing = set(COLUMNS) - set(header)
            extra = set(header) - set(COLUMNS)
            detail = []
            if missing:
                detail.append(f"missing columns {sorted(missing)}")
            if extra:
                detail.append(f"unexpected columns {sorted(extra)}")
            raise SchemaError("bad header: "
                              + ("; ".join(detail) or "wrong column order"))
        rows = []
        for lineno, cells in enumerate(reader, start=3):
            if len(cells) != len(COLUMNS):
                raise SchemaError(
                    f"line {lineno}: {len(cells)} cells, "
                    f"expected {len(COLUMNS)}")
            rows.append(Row(**{n: _convert(n, raw, lineno)
                               for n, raw in zip(COLUMNS, cells)}))
    if not rows:
        raise SchemaError("no data rows")
    return rows
