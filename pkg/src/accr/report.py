"""Rendering of experiment summaries: text tables, CSV, and bar-chart figures."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import EvalReport  # noqa: E402

_METRIC_COLUMNS = [
    ("accuracy", "accuracy_mean", "accuracy_std", "{:.1f}"),
    ("mse", "mse_mean", None, "{:.4f}"),
    ("feat_dist", "feature_distance_mean", "feature_distance_std", "{:.4g}"),
    ("steps/s", "steps_per_sec_mean", "steps_per_sec_std", "{:.1f}"),
]


def _format_cell(report: EvalReport, mean_field: str, std_field, fmt: str) -> str:
    mean = getattr(report, mean_field)
    if mean is None:
        return "-"
    text = fmt.format(mean)
    if std_field:
        std = getattr(report, std_field)
        if std is not None:
            text += " +/- " + fmt.format(std)
    return text


def _star(report: EvalReport) -> str:
    t = report.t_test
    if t and not t.get("degenerate") and t.get("significant"):
        return "*"
    return ""


def render_table(reports: list[EvalReport], failed: list[str] | None = None) -> str:
    """Deterministic plain-text summary table.

    Mean +/- std per metric, a significance star on rows whose paired
    t-test against the baseline rejects at the configured level, and a
    'degenerate' note where the test was undefined.
    """
    if not reports:
        return "no results\n"
    cols = [
        (label, mf, sf, fmt)
        for label, mf, sf, fmt in _METRIC_COLUMNS
        if any(getattr(r, mf) is not None for r in reports)
    ]
    header = ["model"] + [label for label, *_ in cols] + ["seeds", "t-test"]
    rows = [header]
    for r in reports:
        t_note = ""
        if r.t_test:
            if r.t_test.get("degenerate"):
                t_note = "degenerate"
            else:
                t_note = f"p={r.t_test['p_value']:.4f}{_star(r)}"
        rows.append(
            [r.variant + _star(r)]
            + [_format_cell(r, mf, sf, fmt) for _, mf, sf, fmt in cols]
            + [str(len(r.seeds)), t_note]
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("-" * (sum(widths) + 2 * (len(widths) - 1)))
    if failed:
        lines.append("")
        lines.append("failed cells: " + ", ".join(sorted(failed)))
    lines.append("")
    return "\n".join(lines)


def write_cells_csv(cells: list[dict], path) -> None:
    """Per-cell metrics as delimited output, one row per (variant, seed)."""
    path = Path(path)
    keys = ["variant", "sweep_value", "seed", "accuracy", "mse", "feature_distance"]
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=keys, extrasaction="ignore")
        writer.writeheader()
        for cell in sorted(cells, key=lambda c: (str(c.get("variant")), str(c.get("sweep_value")), c["seed"])):
            writer.writerow({k: cell.get(k, "") for k in keys})


def render_bar_chart(
    reports: list[EvalReport],
    out_base,
    metric: str = "accuracy",
    title: str | None = None,
) -> list[Path]:
    """Bar chart of one metric across variants or sweep values.

    Writes PNG and SVG next to each other and returns the created paths.
    """
    mean_field, std_field = {
        "accuracy": ("accuracy_mean", "accuracy_std"),
        "mse": ("mse_mean", None),
        "feature_distance": ("feature_distance_mean", "feature_distance_std"),
        "steps_per_sec": ("steps_per_sec_mean", "steps_per_sec_std"),
    }[metric]
    reports = [r for r in reports if getattr(r, mean_field) is not None]
    if not reports:
        return []
    labels = [r.variant for r in reports]
    means = [getattr(r, mean_field) for r in reports]
    errs = [getattr(r, std_field) or 0.0 if std_field else 0.0 for r in reports]
    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(labels)), 3.2))
    ax.bar(range(len(labels)), means, yerr=errs, capsize=4, color="#4878cf")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylabel(metric)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    out_base = Path(out_base)
    out_base.parent.mkdir(parents=True, exist_ok=True)
    paths = []
    for suffix in (".png", ".svg"):
        p = out_base.with_suffix(suffix)
        fig.savefig(p)
        paths.append(p)
    plt.close(fig)
    return paths
