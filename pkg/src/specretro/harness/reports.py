"""CSV, JSON and plain-text renderings of benchmark reports."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict
from pathlib import Path

from specretro.harness.bench import MultiStepReport, SingleStepReport

_PANELS = (
    ("A. Decoding wall time, s", lambda r: f"{r.wall_time_mean:.2f}" + (f" ± {r.wall_time_std:.2f}" if r.wall_time_std is not None else "")),
    ("B. Model calls", lambda r: str(r.model_calls)),
    ("C. Average effective batch size", lambda r: f"{r.mean_batch_size:.2f}"),
    ("D. Acceptance rate", lambda r: f"{r.acceptance_rate:.3f}" if r.drafted_tokens else "-"),
)


def _grid(title: str, rows: list[list[str]]) -> str:
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = [title]
    for n, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def render_single(report: SingleStepReport) -> str:
    """Four panels (strategy x batch size) plus an accuracy table."""
    if not report.rows:
        return "no reactions"
    strategies = list(dict.fromkeys(r.strategy for r in report.rows))
    sizes = sorted({r.batch_size for r in report.rows})
    cell = {(r.strategy, r.batch_size): r for r in report.rows}
    blocks = []
    for title, fmt in _PANELS:
        rows = [["strategy"] + [f"B={b}" for b in sizes]]
        for s in strategies:
            rows.append([s] + [fmt(cell[(s, b)]) if (s, b) in cell else "" for b in sizes])
        blocks.append(_grid(title, rows))
    first = {}
    for r in report.rows:
        first.setdefault(r.strategy, r)
    tops = sorted(next(iter(first.values())).top_n_accuracy)
    rows = [["strategy"] + [f"top-{n}" for n in tops] + ["invalid@1"]]
    for s, r in first.items():
        rows.append([s] + [f"{100 * r.top_n_accuracy[n]:.1f}" for n in tops] + [f"{100 * r.invalid_rate[0]:.1f}"])
    blocks.append(_grid("Top-N accuracy, %", rows))
    return "\n\n".join(blocks)


def render_multi(report: MultiStepReport) -> str:
    if not report.rows:
        return "no targets"
    rows = [["configuration", "solved", "solved, %", "total time, s", "time/solved, s", "common", "common time, s", "common iters"]]
    for r in report.rows:
        rows.append(
            [
                r.name,
                str(r.solved),
                f"{r.solved_pct:.1f}",
                f"{r.total_time:.2f}",
                "-" if r.time_per_solved is None else f"{r.time_per_solved:.3f}",
                str(r.common_solved),
                "-" if r.common_time is None else f"{r.common_time:.3f}",
                "-" if r.common_iterations is None else f"{r.common_iterations:.1f}",
            ]
        )
    return _grid("Multi-step planning", rows)


def _flatten(row: dict) -> dict:
    out = {}
    for key, value in row.items():
        if isinstance(value, dict):
            out.update({f"{key}_{k}": v for k, v in value.items()})
        elif isinstance(value, list):
            out.update({f"{key}_{i + 1}": v for i, v in enumerate(value)})
        else:
            out[key] = value
    return out


def write_report(report: SingleStepReport | MultiStepReport, directory: str | Path, stem: str) -> dict[str, Path]:
    """Write ``<stem>.json``, ``<stem>.csv`` and ``<stem>.txt``; returns the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {ext: directory / f"{stem}.{ext}" for ext in ("json", "csv", "txt")}
    paths["json"].write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    flat = [_flatten(asdict(r)) for r in report.rows]
    with paths["csv"].open("w", newline="", encoding="utf-8") as fh:
        if flat:
            writer = csv.DictWriter(fh, fieldnames=list(flat[0]))
            writer.writeheader()
            writer.writerows(flat)
    text = render_single(report) if isinstance(report, SingleStepReport) else render_multi(report)
    paths["txt"].write_text(text + "\n", encoding="utf-8")
    return paths
