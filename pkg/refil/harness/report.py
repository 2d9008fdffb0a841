# refil/harness/report.py
import csv
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from refil.attacks.metrics import standard_error  # noqa: E402
from refil.errors import DataError  # noqa: E402

logger = logging.getLogger("refil.harness")

RESULTS_CSV = "results.csv"
SUMMARY_CSV = "summary.csv"
PLOT_SVG = "plot.svg"
UTILITY_CSV = "utility.csv"

# Non-metric columns of results.csv
KEY_COLUMNS = ("grid", "inv_dfil", "trial", "example", "status", "request_id")

Row = Dict[str, object]

matplotlib.rcParams["svg.hashsalt"] = "refil"


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def write_csv(path: Union[str, Path], rows: Sequence[Row], fieldnames: Sequence[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(fieldnames), lineterminator="\n", extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(row.get(k)) for k in fieldnames})
    return path


def _parse(value: str):
    if value == "":
        return None
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        return value


def read_results(path: Union[str, Path]) -> Tuple[List[str], List[Row]]:
    path = Path(path)
    if not path.exists():
        raise DataError(str(path), "open", "results file not found")
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        fieldnames = list(reader.fieldnames or [])
        if fieldnames and "inv_dfil" not in fieldnames:
            raise DataError(str(path), "line 1", "missing inv_dfil column")
        rows = []
        for line_number, raw in enumerate(reader, start=2):
            if None in raw or any(v is None for v in raw.values()):
                raise DataError(str(path), f"line {line_number}", "row width does not match the header")
            row = {k: _parse(v) for k, v in raw.items()}
            if not isinstance(row["inv_dfil"], (int, float)):
                raise DataError(str(path), f"line {line_number}", f"inv_dfil '{raw['inv_dfil']}' is not a number")
            rows.append(row)
    return fieldnames, rows


def metric_columns(fieldnames: Sequence[str]) -> List[str]:
    return [name for name in fieldnames if name not in KEY_COLUMNS]


def summarize(rows: Sequence[Row], metrics: Sequence[str]) -> List[Row]:
    """Per grid point mean and standard error of every metric over successful trials."""
    groups: Dict[float, List[Row]] = {}
    for row in rows:
        if row.get("status", "ok") != "ok":
            continue
        groups.setdefault(float(row["inv_dfil"]), []).append(row)
    summary = []
    for inv_dfil in sorted(groups):
        group = groups[inv_dfil]
        out: Row = {"inv_dfil": inv_dfil, "n": len(group)}
        for metric in metrics:
            values = [float(r[metric]) for r in group if isinstance(r.get(metric), (int, float))]
            out[f"{metric}_mean"] = float(np.mean(values)) if values else None
            out[f"{metric}_stderr"] = standard_error(values) if values else None
        summary.append(out)
    return summary


def summary_fieldnames(metrics: Sequence[str]) -> List[str]:
    names = ["inv_dfil", "n"]
    for metric in metrics:
        names += [f"{metric}_mean", f"{metric}_stderr"]
    return names


def format_table(summary: Sequence[Row], metrics: Sequence[str]) -> str:
    header = ["1/dFIL", "n"] + [f"{m} (mean ± se)" for m in metrics]
    lines = [header]
    for row in summary:
        cells = [f"{row['inv_dfil']:g}", str(row["n"])]
        for m in metrics:
            mean, se = row.get(f"{m}_mean"), row.get(f"{m}_stderr")
            cells.append("-" if mean is None else f"{mean:.4g} ± {se:.2g}")
        lines.append(cells)
    widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(line, widths)) for line in lines)


def plottable(summary: Sequence[Row], metrics: Sequence[str]) -> List[str]:
    """Metrics with at least one mean to draw; the bound rides on the MSE panel."""
    return [m for m in metrics if m != "bound" and any(row.get(f"{m}_mean") is not None for row in summary)]


def plot_summary(summary: Sequence[Row], metrics: Sequence[str], path: Union[str, Path],
                 title: Optional[str] = None) -> Path:
    """One log-x panel per metric with standard-error bars; ``bound`` is drawn dashed on the MSE panel."""
    panels = plottable(summary, metrics)
    fig, axes = plt.subplots(len(panels), 1, figsize=(6, 3 * len(panels)), squeeze=False)
    x = [row["inv_dfil"] for row in summary]
    for ax, metric in zip(axes[:, 0], panels):
        y = [np.nan if row.get(f"{metric}_mean") is None else row[f"{metric}_mean"] for row in summary]
        err = [0.0 if row.get(f"{metric}_stderr") is None else row[f"{metric}_stderr"] for row in summary]
        ax.errorbar(x, y, yerr=err, marker="o", capsize=3, label=metric)
        if metric == "mse" and "bound" in metrics:
            ax.plot(x, x, linestyle="--", color="gray", label="1/dFIL bound")
            ax.set_yscale("log")
        ax.set_xscale("log")
        ax.set_xlabel("1/dFIL")
        ax.set_ylabel(metric)
        ax.grid(True, alpha=0.3)
        ax.legend()
    if title:
        axes[0, 0].set_title(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def write_report(results_dir: Union[str, Path], fieldnames: Sequence[str], rows: Sequence[Row],
                 title: Optional[str] = None) -> Tuple[List[Row], Optional[Path]]:
    """summary.csv and plot.svg next to results.csv."""
    results_dir = Path(results_dir)
    metrics = metric_columns(fieldnames)
    summary = summarize(rows, metrics)
    write_csv(results_dir / SUMMARY_CSV, summary, summary_fieldnames(metrics))
    if not summary or not plottable(summary, metrics):
        logger.warning(f"No successful trials in {results_dir}; skipping plot")
        return summary, None
    return summary, plot_summary(summary, metrics, results_dir / PLOT_SVG, title=title)


def report(results_dir: Union[str, Path]) -> str:
    """Recompute the summary from results.csv and return it as a text table."""
    results_dir = Path(results_dir)
    fieldnames, rows = read_results(results_dir / RESULTS_CSV)
    if not rows:
        logger.warning(f"{results_dir / RESULTS_CSV} holds no results")
    summary, _ = write_report(results_dir, fieldnames, rows, title=results_dir.name)
    return format_table(summary, metric_columns(fieldnames))
