"""Report writers: key-value text, line-delimited records, plot-data TSVs,
and the matplotlib figures rendered alongside them."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .diagnostics import LossReport, PeakednessProfile, PlanComparison


def write_kv_text(pairs: dict, path: str | Path) -> None:
    lines = [f"{k} = {v}" for k, v in pairs.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_records(records: Sequence[dict], path: str | Path) -> None:
    """One JSON record per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def write_two_column(
    xs: Sequence[float], ys: Sequence[float], path: str | Path, header: str = ""
) -> None:
    lines = [f"# {header}"] if header else []
    lines += [f"{x}\t{y}" for x, y in zip(xs, ys)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def loss_report_pairs(tag: str, report: LossReport) -> dict:
    pairs = {
        f"{tag}.tau": report.tau,
        f"{tag}.global_loss_total": f"{report.global_total:.12g}",
        f"{tag}.global_loss_mean": f"{report.global_mean:.12g}",
        f"{tag}.batch_loss_total": f"{report.batch_total:.12g}",
        f"{tag}.batch_loss_mean": f"{report.batch_mean:.12g}",
        f"{tag}.gap": f"{report.gap:.12g}",
    }
    for k, rhs in sorted(report.bound.items()):
        pairs[f"{tag}.bound_rhs.K{k}"] = f"{rhs:.12g}"
    return pairs


def comparison_records(cmp: PlanComparison, tags: tuple[str, str]) -> list[dict]:
    out = []
    for tag, rep, qual in (
        (tags[0], cmp.report_a, cmp.quality_a),
        (tags[1], cmp.report_b, cmp.quality_b),
    ):
        out.append(
            {
                "plan": tag,
                "tau": rep.tau,
                "global_loss": rep.global_total,
                "batch_loss": rep.batch_total,
                "gap": rep.gap,
                "bound_rhs": {str(k): v for k, v in rep.bound.items()},
                "co_location_mean": qual.co_location_mean,
                "retained_edge_fraction": qual.retained_edge_fraction,
            }
        )
    out.append(
        {
            "plan": "difference",
            "gap_difference": cmp.gap_difference,
            "co_location_difference": cmp.co_location_difference,
        }
    )
    return out


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render_peakedness_figure(profile: PeakednessProfile, path: str | Path) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(np.arange(1, profile.profile.size + 1), profile.profile, lw=1.5)
    ax.set_xlabel("rank")
    ax.set_ylabel("mean similarity")
    ax.set_title("Mean sorted similarity profile")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_gap_sweep_figure(
    batch_sizes: Sequence[int],
    gaps_by_plan: dict[str, Sequence[float]],
    path: str | Path,
) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, gaps in gaps_by_plan.items():
        ax.plot(batch_sizes, gaps, marker="o", label=label)
    ax.set_xlabel("batch size")
    ax.set_ylabel("loss gap (global - batch)")
    ax.set_xscale("log", base=2)
    ax.set_title("Loss gap vs batch size")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
