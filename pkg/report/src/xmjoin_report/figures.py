"""Figure builders over validated result rows.

Every figure carries its plotted series verbatim from the CSV; the
save step writes the rendered PNG and SVG next to a JSON sidecar
holding exactly those series, so a chart can always be audited against
its source file cell by cell.
"""

import json
from dataclasses import asdict, dataclass, field

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .schema import NUMERIC_COLUMNS, Row, SchemaError  # noqa: E402

INDEXED_METHODS = ("inlj_learned", "inlj_btree", "partition_join")


def _check_metric(metric: str) -> str:
    if metric not in NUMERIC_COLUMNS:
        raise SchemaError(f"{metric!r} is not a numeric result column")
    return metric


@dataclass
class Series:
    label: str
    x: list
    y: list


@dataclass
class FigureData:
    name: str
    title: str
    x_label: str
    y_label: str
    selection: dict
    series: list[Series] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def select_run(rows: list[Row]) -> tuple[list[Row], dict]:
    """Restrict to one (dataset, seed) combination.

    Mixed files are legal; charts compare cells of a single run, so the
    lexicographically first combination is charted and named in the
    sidecar.
    """
    combos = sorted({(r.dataset, r.seed) for r in rows})
    dataset, seed = combos[0]
    picked = [r for r in rows if (r.dataset, r.seed) == (dataset, seed)]
    return picked, {"dataset": dataset, "seed": seed}


def _unique_cell(rows: list[Row], where: dict) -> Row:
    if len(rows) > 1:
        raise SchemaError(f"ambiguous cells for {where}: {len(rows)} rows")
    return rows[0]


def methods_by_ratio(rows: list[Row],
                     metric: str = "join_seconds") -> FigureData:
    """Grouped bars: one cluster per ratio, one bar per method."""
    _check_metric(metric)
    picked, sel = select_run(rows)
    threads = min(r.threads for r in picked)
    epsilon = min(r.epsilon for r in picked)
    picked = [r for r in picked
              if r.threads == threads and r.epsilon == epsilon]
    sel.update(threads=threads, epsilon=epsilon, metric=metric)
    ratios = sorted({r.ratio for r in picked})
    fig = FigureData("methods_by_ratio", f"{metric} by method and ratio",
                     "inner:outer ratio", metric, sel)
    for method in sorted({r.method for r in picked}):
        xs, ys = [], []
        for ratio in ratios:
            cell = [r for r in picked
                    if r.method == method and r.ratio == ratio]
            if not cell:
                continue
            row = _unique_cell(cell, {"method": method, "ratio": ratio,
                                      **sel})
            xs.append(ratio)
            ys.append(getattr(row, metric))
        fig.series.append(Series(method, xs, ys))
    return fig


def thread_scaling(rows: list[Row], metric: str = "join_seconds",
                   ratio: int | None = None) -> FigureData:
    """One line per method, x = threads, at a single ratio."""
    _check_metric(metric)
    picked, sel = select_run(rows)
    if ratio is None:
        ratio = min(r.ratio for r in picked)
    epsilon = min(r.epsilon for r in picked)
    picked = [r for r in picked
              if r.ratio == ratio and r.epsilon == epsilon]
    if not picked:
        raise SchemaError(f"no rows at ratio {ratio}")
    sel.update(ratio=ratio, epsilon=epsilon, metric=metric)
    fig = FigureData("thread_scaling", f"{metric} vs threads at ratio "
                     f"{ratio}", "threads", metric, sel)
    for method in sorted({r.method for r in picked}):
        cells = sorted((r for r in picked if r.method == method),
                       key=lambda r: r.threads)
        xs, ys = [], []
        for t in sorted({r.threads for r in cells}):
            row = _unique_cell([r for r in cells if r.threads == t],
                               {"method": method, "threads": t, **sel})
            xs.append(t)
            ys.append(getattr(row, metric))
        fig.series.append(Series(method, xs, ys))
    return fig


def epsilon_tradeoff(rows: list[Row],
                     metric: str = "blocks_read_inner") -> FigureData:
    """Index size and an I/O metric against the error window."""
    _check_metric(metric)
    picked, sel = select_run(rows)
    threads = min(r.threads for r in picked)
    ratio = min(r.ratio for r in picked)
    picked = [r for r in picked
              if r.threads == threads and r.ratio == ratio
              and r.method in INDEXED_METHODS and r.index_kind]
    if not picked:
        raise SchemaError("no indexed-method rows to chart")
    sel.update(threads=threads, ratio=ratio, metric=metric)
    fig = FigureData("epsilon_tradeoff",
                     f"index size and {metric} vs error window",
                     "epsilon (window tuples)", f"index_bytes / {metric}",
                     sel)
    for method in sorted({r.method for r in picked}):
        cells = [r for r in picked if r.method == method]
        eps = sorted({r.epsilon for r in cells})
        sizes, ios = [], []
        for e in eps:
            row = _unique_cell([r for r in cells if r.epsilon == e],
                               {"method": method, "epsilon": e, **sel})
            sizes.append(row.index_bytes)
            ios.append(getattr(row, metric))
        fig.series.append(Series(f"{method}:index_bytes", eps, sizes))
        fig.series.append(Series(f"{method}:{metric}", eps, ios))
    return fig


def _render(fig: FigureData, path_base):
    plot, ax = plt.subplots(figsize=(7, 4.5))
    try:
        if fig.name == "methods_by_ratio":
            groups = sorted({x for s in fig.series for x in s.x})
            width = 0.8 / max(1, len(fig.series))
            for i, s in enumerate(fig.series):
                pos = [groups.index(x) + i * width for x in s.x]
                ax.bar(pos, s.y, width=width, label=s.label)
            ax.set_xticks([g + 0.4 - width / 2 for g in range(len(groups))],
                          [str(g) for g in groups])
        elif fig.name == "epsilon_tradeoff":
            # sizes on the left axis, the io metric dashed on the right
            right = ax.twinx()
            for s in fig.series:
                target = ax if s.label.endswith("index_bytes") else right
                style = "-o" if target is ax else "--s"
                target.plot(s.x, s.y, style, label=s.label)
            right.set_ylabel(fig.selection["metric"])
            handles = (ax.get_legend_handles_labels()[0]
                       + right.get_legend_handles_labels()[0])
            labels = (ax.get_legend_handles_labels()[1]
                      + right.get_legend_handles_labels()[1])
            ax.legend(handles, labels, fontsize=8)
        else:
            for s in fig.series:
                ax.plot(s.x, s.y, "-o", label=s.label)
        if fig.name != "epsilon_tradeoff":
            ax.legend(fontsize=8)
        ax.set_title(fig.title)
        ax.set_xlabel(fig.x_label)
        ax.set_ylabel(fig.y_label)
        plot.tight_layout()
        plot.savefig(f"{path_base}.png", dpi=120)
        plot.savefig(f"{path_base}.svg")
    finally:
        plt.close(plot)


def save_figure(fig: FigureData, out_dir) -> list[str]:
    """Write PNG, SVG, and the JSON series sidecar; returns the paths."""
    base = f"{out_dir}/{fig.name}"
    _render(fig, base)
    with open(f"{base}.json", "w") as f:
        f.write(fig.to_json())
        f.write("\n")
    return [f"{base}.png", f"{base}.svg", f"{base}.json"]
