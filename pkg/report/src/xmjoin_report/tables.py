"""Markdown tables derived from result rows."""

from .schema import Row, SchemaError


def epsilon_size_table(rows: list[Row]) -> str:
    """Index bytes by error window: one row per epsilon, one column per
    index kind. Conflicting sizes for the same cell are a schema breach,
    not something to average away."""
    cells: dict[tuple[int, str], int] = {}
    for r in rows:
        if not r.index_kind:
            continue
        key = (r.epsilon, r.index_kind)
        if key in cells and cells[key] != r.index_bytes:
            raise SchemaError(
                f"index_bytes disagree for epsilon={r.epsilon} "
                f"kind={r.index_kind}: {cells[key]} vs {r.index_bytes}")
        cells[key] = r.index_bytes
    if not cells:
        raise SchemaError("no indexed rows: nothing to tabulate")
    epsilons = sorted({e for e, _ in cells})
    kinds = sorted({k for _, k in cells})
    lines = ["| epsilon | " + " | ".join(kinds) + " |",
             "|---:|" + "---:|" * len(kinds)]
    for e in epsilons:
        row = [str(cells[(e, k)]) if (e, k) in cells else ""
               for k in kinds]
        lines.append(f"| {e} | " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"
