"""Report rendering: delimited tables, a structured summary document, and
figures, all derived from one AgreementReport.

The delimited outputs and the summary are deterministic and feed the
report digest; figures are presentation artifacts and stay outside it.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .metrics import (  # noqa: E402
    AgreementReport,
    ConfusionMatrix,
    format_percent,
    improvement_summary,
)

CATEGORY_TABLE_FILE = "report.tsv"
CONFUSION_TABLE_FILE = "confusion.tsv"
SUMMARY_FILE = "summary.json"
FIGURES_DIR = "figures"


def _fmt_kappa(value: Optional[float]) -> str:
    return "UNDEFINED" if value is None else f"{value:.6f}"


def render_category_table(report: AgreementReport) -> str:
    """One TSV row per category: baseline and verified kappa, delta,
    support, and explicit undefined flags."""
    lines = [
        "category\tkappa_baseline\tkappa_verified\tdelta_kappa\tsupport\t"
        "baseline_undefined\tverified_undefined"
    ]
    for cat in report.categories:
        baseline_flag = "true" if (report.baseline and cat.baseline_kappa is None) else "false"
        if report.baseline is None:
            baseline_flag = "n/a"
        lines.append(
            "\t".join(
                [
                    cat.category,
                    _fmt_kappa(cat.baseline_kappa) if report.baseline else "n/a",
                    _fmt_kappa(cat.kappa),
                    _fmt_kappa(cat.delta) if report.baseline else "n/a",
                    str(cat.support),
                    baseline_flag,
                    "true" if cat.kappa is None else "false",
                ]
            )
        )
    return "\n".join(lines) + "\n"


def render_confusion_table(matrix: ConfusionMatrix) -> str:
    """Square TSV: header row/column of labels, rows are gold."""
    lines = ["gold\\predicted\t" + "\t".join(matrix.labels)]
    for label, row in zip(matrix.labels, matrix.counts):
        lines.append(label + "\t" + "\t".join(str(c) for c in row))
    return "\n".join(lines) + "\n"


def format_improvement(mean_verified: float, mean_baseline: float) -> dict:
    """Improvement arithmetic plus rendering.

    The note records a rounding caveat: the relative figure here is
    computed from the two quoted means as given; computing the same
    comparison from unrounded per-category values before aggregation gives
    slightly lower figures (e.g. roughly 58% where this renders 59%).
    """
    absolute, relative = improvement_summary(mean_verified, mean_baseline)
    rendered = (
        f"{mean_verified:.2f} - {mean_baseline:.2f} = {absolute:.2f} absolute; "
        + (
            f"relative improvement {format_percent(relative)}"
            if relative is not None
            else "relative improvement undefined (zero baseline)"
        )
    )
    return {
        "absolute": absolute,
        "relative": relative,
        "rendered": rendered,
        "note": (
            "relative improvement is computed from the quoted means; "
            "aggregating before rounding can shift the headline slightly "
            "(roughly 58% is a common rounding of figures near this one)"
        ),
    }


def render_summary(report: AgreementReport) -> str:
    """Canonical JSON summary; stable bytes for a given report."""
    doc = report.to_dict()
    if report.baseline is not None and (
        report.macro_kappa is not None and report.baseline.macro_kappa is not None
    ):
        doc["improvement"] = format_improvement(
            report.macro_kappa, report.baseline.macro_kappa
        )
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def report_digest(report: AgreementReport) -> str:
    """Digest over the deterministic outputs (tables + summary)."""
    blob = (
        render_category_table(report)
        + "\x00"
        + render_confusion_table(report.confusion)
        + "\x00"
        + render_summary(report)
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def render_report_text(report: AgreementReport) -> str:
    """Human-readable console summary."""
    lines = [
        f"items scored: {report.n}",
        f"percent agreement with gold: {format_percent(report.percent_agreement)}",
        f"overall kappa: {_fmt_kappa(report.overall_kappa)}",
        f"macro kappa: {_fmt_kappa(report.macro_kappa)} "
        f"({report.undefined_count} undefined categor{'y' if report.undefined_count == 1 else 'ies'} excluded)",
        f"weighted kappa: {_fmt_kappa(report.weighted_kappa)}",
        f"unparseable final labels: {report.unparseable_count}",
    ]
    if report.baseline is not None:
        b = report.baseline
        lines += [
            "baseline:",
            f"  percent agreement: {format_percent(b.percent_agreement)}",
            f"  overall kappa: {_fmt_kappa(b.overall_kappa)}",
            f"  macro kappa: {_fmt_kappa(b.macro_kappa)} "
            f"({b.undefined_count} undefined excluded)",
        ]
        if b.macro_improvement is not None:
            rel = (
                format_percent(b.relative_improvement)
                if b.relative_improvement is not None
                else "undefined"
            )
            lines.append(
                f"  macro improvement: {b.macro_improvement:+.4f} (relative {rel})"
            )
    name_width = max((len(c.category) for c in report.categories), default=8)
    lines.append("")
    header = f"{'category'.ljust(name_width)}  {'baseline':>10}  {'verified':>10}  {'delta':>8}  {'support':>7}"
    lines.append(header)
    lines.append("-" * len(header))
    for cat in report.categories:
        baseline = _fmt_kappa(cat.baseline_kappa)[:10] if report.baseline else "n/a"
        delta = (
            f"{cat.delta:+.4f}"
            if cat.delta is not None
            else ("-" if report.baseline else "n/a")
        )
        lines.append(
            f"{cat.category.ljust(name_width)}  {baseline:>10}  "
            f"{_fmt_kappa(cat.kappa)[:10]:>10}  {delta:>8}  {cat.support:>7}"
        )
    return "\n".join(lines)


def _category_axis(report: AgreementReport) -> list[str]:
    return [c.category for c in report.categories]


def render_figures(report: AgreementReport, out_dir: Path) -> list[Path]:
    """Write kappa_by_category.png (+ delta_kappa.png with a baseline, and
    a confusion heat map). Returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    names = _category_axis(report)
    positions = range(len(names))

    fig, ax = plt.subplots(figsize=(9, max(3.0, 0.45 * len(names))))
    verified = [c.kappa if c.kappa is not None else 0.0 for c in report.categories]
    if report.baseline is not None:
        baseline = [
            c.baseline_kappa if c.baseline_kappa is not None else 0.0
            for c in report.categories
        ]
        ax.barh(
            [p + 0.2 for p in positions], baseline, height=0.38,
            label="baseline", color="#b0b0b0",
        )
        ax.barh(
            [p - 0.2 for p in positions], verified, height=0.38,
            label="verified", color="#2a6f97",
        )
        ax.legend(loc="lower right")
    else:
        ax.barh(list(positions), verified, height=0.6, color="#2a6f97")
    ax.set_yticks(list(positions))
    ax.set_yticklabels(names, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel("Cohen's kappa vs gold")
    ax.set_xlim(-1.0, 1.0)
    ax.axvline(0.0, color="black", linewidth=0.8)
    fig.tight_layout()
    path = out_dir / "kappa_by_category.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    if report.baseline is not None:
        fig, ax = plt.subplots(figsize=(9, max(3.0, 0.45 * len(names))))
        deltas = [c.delta for c in report.categories]
        ys = [p for p, d in zip(positions, deltas) if d is not None]
        xs = [d for d in deltas if d is not None]
        ax.scatter(xs, ys, color="#bc4749", zorder=3)
        ax.hlines(ys, 0, xs, color="#bc4749", linewidth=1.5, alpha=0.6)
        ax.set_yticks(list(positions))
        ax.set_yticklabels(names, fontsize=8)
        ax.invert_yaxis()
        ax.axvline(0.0, color="black", linewidth=0.8)
        ax.set_xlabel("delta kappa (verified - baseline)")
        fig.tight_layout()
        path = out_dir / "delta_kappa.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    matrix = report.confusion
    fig, ax = plt.subplots(figsize=(8, 7))
    image = ax.imshow(matrix.counts, cmap="Blues")
    ax.set_xticks(range(len(matrix.labels)))
    ax.set_xticklabels(matrix.labels, rotation=90, fontsize=7)
    ax.set_yticks(range(len(matrix.labels)))
    ax.set_yticklabels(matrix.labels, fontsize=7)
    ax.set_xlabel("predicted")
    ax.set_ylabel("gold")
    fig.colorbar(image, ax=ax, shrink=0.8)
    fig.tight_layout()
    path = out_dir / "confusion_matrix.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    return written


def write_report(
    report: AgreementReport, out_dir: Path, figures: bool = False
) -> dict:
    """Write tables + summary (and optionally figures) under out_dir.
    Returns {"paths": [...], "digest": ...}."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, text in (
        (CATEGORY_TABLE_FILE, render_category_table(report)),
        (CONFUSION_TABLE_FILE, render_confusion_table(report.confusion)),
        (SUMMARY_FILE, render_summary(report)),
    ):
        path = out_dir / name
        path.write_text(text, encoding="utf-8")
        paths.append(path)
    if figures:
        paths.extend(render_figures(report, out_dir / FIGURES_DIR))
    return {"paths": paths, "digest": report_digest(report)}
