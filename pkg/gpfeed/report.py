"""Rendering and writing of evaluation reports and convergence tables."""
from __future__ import annotations

import csv
import io
from collections.abc import Sequence
from pathlib import Path

from gpfeed.pipeline import BASELINE, GP, ConvergenceRow, EvaluationReport
from gpfeed.storage import write_json, write_text

REPORT_COLUMNS = ["reference_id", "controller", "l2_error", "linf_error", "in_training"]
CONVERGENCE_COLUMNS = ["stride", "n_references", "M", "rms_error", "max_abs_u"]


def _references(report: EvaluationReport) -> list[tuple[str, bool]]:
    seen: dict[str, bool] = {}
    for row in report.rows:
        seen.setdefault(row.reference_id, row.in_training)
    return list(seen.items())


def render_table(report: EvaluationReport) -> str:
    """Plain-text table: one line per controller, an (‖e‖₂, ‖e‖∞) pair per reference."""
    refs = _references(report)
    meta = report.metadata
    lines = [
        "Tracking errors with different feedforward signals",
        f"M = {meta.get('M', 0)}, n_theta = {meta.get('n_theta', 0)}, "
        f"sigma_n = {meta.get('sigma_n', 0.0):.4g}",
    ]
    lml = meta.get("lml")
    if lml is not None:
        lines.append(f"log marginal likelihood = {lml:.6g}")
    if refs:
        cell = 24
        heads = [f"{ref} {'∈' if seen else '∉'} training" for ref, seen in refs]
        lines.append("")
        lines.append(f"{'':<12}" + "".join(f"{h:<{cell}}" for h in heads))
        lines.append(f"{'Controller':<12}" + f"{'‖e‖₂':<12}{'‖e‖∞':<12}" * len(refs))
        controllers = [c for c in (BASELINE, GP) if any(r.controller == c for r in report.rows)]
        for controller in controllers:
            cells = []
            for ref, _ in refs:
                row = report.row(ref, controller)
                cells.append(f"{row.l2_error:<12.4g}{row.linf_error:<12.4g}")
            lines.append(f"{controller:<12}" + "".join(cells))
    for warning in meta.get("warnings", []):
        lines.append(f"⚠️ {warning}")
    return "\n".join(lines) + "\n"


def report_csv(report: EvaluationReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for row in report.rows:
        writer.writerow([row.reference_id, row.controller, repr(row.l2_error),
                         repr(row.linf_error), int(row.in_training)])
    return buf.getvalue()


def write_report(out_dir: Path, report: EvaluationReport) -> list[Path]:
    """report.csv, report.txt and report.json; timings go to timings.json."""
    paths = [out_dir / "report.csv", out_dir / "report.txt", out_dir / "report.json"]
    write_text(paths[0], report_csv(report))
    write_text(paths[1], render_table(report))
    write_json(paths[2], report.to_dict())
    write_json(out_dir / "timings.json", report.timings)
    return paths


def write_convergence(path: Path, rows: Sequence[ConvergenceRow]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CONVERGENCE_COLUMNS)
    for r in rows:
        writer.writerow([r.stride, r.n_references, r.M, repr(r.rms_error), repr(r.max_abs_u)])
    write_text(path, buf.getvalue())
