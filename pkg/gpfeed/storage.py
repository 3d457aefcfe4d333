"""File formats: CSV series, JSON documents and the trained-model file.

Every writer goes through a temporary file and an atomic rename so a crashed
run never leaves a half-written artifact. Floats are written with 17
significant digits (CSV) or shortest round-trip repr (JSON), which makes the
files reproducible byte for byte.
"""
from __future__ import annotations

import csv
import io
import json
from collections.abc import Mapping, Sequence
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np

from gpfeed._log import log
from gpfeed._types import ManifestEntry, ModelHeader, TraceRow
from gpfeed.errors import DataFormatError, GpfeedError
from gpfeed.kernels import KernelSpec, spec_from_dict, spec_to_dict
from gpfeed.nfir import Dataset, WindowConfig
from gpfeed.plantsim import ClosedLoopLog
from gpfeed.trajectory import Trajectory, derivative_peaks

if TYPE_CHECKING:
    from gpfeed.gp import TrainedGP

MODEL_FORMAT = "gpfeed-model"
MODEL_VERSION = 1
MANIFEST = "manifest.json"
LOG_COLUMNS = ["t", "r", "y", "u", "e"]
E_TOLERANCE = 1e-9


# ── Atomic writes ────────────────────────────────────────────────────────────


def write_text(path: Path, text: str) -> None:
    """Write ``text`` to ``path`` atomically."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def write_json(path: Path, data: Any) -> None:
    write_text(path, json.dumps(data, indent=2) + "\n")


def read_json(path: Path) -> Any:
    try:
        return json.loads(path.read_text())
    except OSError as e:
        raise DataFormatError(f"{path}: cannot read ({e.strerror})") from e
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}:{e.lineno}: invalid JSON ({e.msg})") from e


# ── CSV ──────────────────────────────────────────────────────────────────────


def write_csv(path: Path, columns: Sequence[str], data: Any) -> None:
    """Numeric table with a header line."""
    table = np.asarray(data, dtype=float)
    if table.ndim == 1:
        table = table[:, None]
    buf = io.StringIO()
    np.savetxt(buf, table, fmt="%.17g", delimiter=",", header=",".join(columns), comments="")
    write_text(path, buf.getvalue())


def read_csv(path: Path, required: Sequence[str]) -> dict[str, np.ndarray]:
    """Columns of a numeric CSV keyed by header name; errors name file and line."""
    try:
        text = path.read_text()
    except OSError as e:
        raise DataFormatError(f"{path}: cannot read ({e.strerror})") from e
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if not header:
        raise DataFormatError(f"{path}:1: missing header")
    header = [h.strip() for h in header]
    missing = [c for c in required if c not in header]
    if missing:
        raise DataFormatError(f"{path}:1: missing column(s) {', '.join(missing)}")
    rows: list[list[float]] = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise DataFormatError(
                f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}",
            )
        try:
            values = [float(cell) for cell in row]
        except ValueError as e:
            raise DataFormatError(f"{path}:{lineno}: {e}") from e
        if not all(np.isfinite(values)):
            raise DataFormatError(f"{path}:{lineno}: non-finite value")
        rows.append(values)
    table = np.asarray(rows, dtype=float).reshape(len(rows), len(header))
    return {name: table[:, k] for k, name in enumerate(header)}


def _sample_time(t: np.ndarray, path: Path) -> float:
    if t.size < 2:
        raise DataFormatError(f"{path}: at least two samples are needed to infer Ts")
    Ts = float(t[1] - t[0])
    if not Ts > 0:
        raise DataFormatError(f"{path}: time column is not increasing")
    return Ts


# ── Trajectories, logs, feedforward ──────────────────────────────────────────


def write_trajectory(path: Path, traj: Trajectory) -> None:
    write_csv(path, ["t", "r"], np.column_stack([traj.time, traj.samples]))


def read_trajectory(path: Path, reference_id: str | None = None) -> Trajectory:
    cols = read_csv(path, ["t", "r"])
    Ts = _sample_time(cols["t"], path)
    trial = Trajectory(cols["r"], Ts, 1.0, 1.0, 1.0)
    v, a, j = derivative_peaks(trial)
    return Trajectory(cols["r"], Ts, v, a, j, reference_id or path.stem)


def write_log(path: Path, entry: ClosedLoopLog) -> None:
    t = np.arange(entry.N) * entry.Ts
    write_csv(path, LOG_COLUMNS, np.column_stack([t, entry.r, entry.y, entry.u, entry.e]))


def read_log(path: Path, *, reference_id: str | None = None, repetition: int = 0,
             seed: int = 0) -> ClosedLoopLog:
    """Load a log CSV and check the invariant e = r - y."""
    cols = read_csv(path, LOG_COLUMNS)
    Ts = _sample_time(cols["t"], path)
    r, y, e = cols["r"], cols["y"], cols["e"]
    scale = max(float(np.max(np.abs(r))), 1.0)
    bad = np.flatnonzero(np.abs(e - (r - y)) > E_TOLERANCE * scale)
    if bad.size:
        raise DataFormatError(f"{path}:{int(bad[0]) + 2}: e != r - y")
    return ClosedLoopLog(r=r, y=y, u=cols["u"], e=e, Ts=Ts, seed=seed,
                         reference_id=reference_id or path.stem, repetition=repetition)


def log_filename(entry: ClosedLoopLog) -> str:
    return f"log_{entry.reference_id}_rep{entry.repetition}.csv"


def write_logs(out_dir: Path, logs: Sequence[ClosedLoopLog],
               scales: Mapping[str, float] | None = None) -> list[ManifestEntry]:
    """One CSV per log plus ``manifest.json`` describing them."""
    manifest: list[ManifestEntry] = []
    for entry in logs:
        name = log_filename(entry)
        write_log(out_dir / name, entry)
        manifest.append({
            "file": name,
            "reference_id": entry.reference_id,
            "scale": float((scales or {}).get(entry.reference_id, 1.0)),
            "repetition": entry.repetition,
            "seed": entry.seed,
        })
    write_json(out_dir / MANIFEST, manifest)
    log(f"Wrote {len(logs)} log(s) to {out_dir}")
    return manifest


def read_logs(log_dir: Path) -> list[ClosedLoopLog]:
    """Logs listed in ``manifest.json``, or every ``log_*.csv`` when there is none."""
    manifest_path = log_dir / MANIFEST
    if manifest_path.exists():
        manifest = read_json(manifest_path)
        if not isinstance(manifest, list):
            raise DataFormatError(f"{manifest_path}: expected a list of log entries")
        logs = []
        for n, item in enumerate(manifest):
            try:
                logs.append(read_log(log_dir / item["file"], reference_id=item["reference_id"],
                                     repetition=int(item["repetition"]),
                                     seed=int(item["seed"])))
            except (KeyError, TypeError) as e:
                raise DataFormatError(f"{manifest_path}: entry {n} is malformed ({e})") from e
        return logs
    paths = sorted(log_dir.glob("log_*.csv"))
    if not paths:
        raise DataFormatError(f"{log_dir}: no manifest.json and no log_*.csv files")
    return [read_log(p) for p in paths]


def write_feedforward(path: Path, Ts: float, u_ff: Any, variance: Any | None = None) -> None:
    u = np.asarray(u_ff, dtype=float).ravel()
    t = np.arange(u.size) * Ts
    if variance is None:
        write_csv(path, ["t", "u_ff"], np.column_stack([t, u]))
    else:
        write_csv(path, ["t", "u_ff", "variance"], np.column_stack([t, u, variance]))


def read_feedforward(path: Path) -> np.ndarray:
    return read_csv(path, ["t", "u_ff"])["u_ff"]


def write_trace(path: Path, kernel: KernelSpec, trace: Sequence[TraceRow]) -> None:
    from gpfeed.hyperopt import trace_columns, trace_table

    columns = trace_columns(kernel)
    rows = trace_table(list(trace))
    write_csv(path, columns, np.asarray(rows, dtype=float).reshape(len(rows), len(columns)))


def write_dataset(path: Path, dataset: Dataset) -> None:
    """Rows of (source log, sample index, u, y window...)."""
    origin = dataset.origin if dataset.origin.size else np.full((dataset.M, 2), -1)
    columns = ["log", "index", "u", *(f"y{k}" for k in range(dataset.n_theta))]
    write_csv(path, columns, np.column_stack([origin, dataset.u, dataset.Y]))


# ── Model file ───────────────────────────────────────────────────────────────


def save_model(path: Path, gp: TrainedGP) -> None:
    """Single JSON document: a header plus the training data."""
    w = gp.dataset.window
    header: ModelHeader = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "kernel": spec_to_dict(gp.kernel),
        "window": {"n_c": w.n_c, "n_ac": w.n_ac, "stride": w.stride},
        "sigma_n": gp.sigma_n,
        "applied_jitter": gp.applied_jitter,
        "M": gp.dataset.M,
        "n_theta": gp.dataset.n_theta,
    }
    payload = {
        "Y": gp.dataset.Y.tolist(),
        "u": gp.dataset.u.tolist(),
        "alpha": gp.alpha.tolist(),
    }
    write_text(path, json.dumps({"header": header, "payload": payload}) + "\n")
    log(f"Saved model (M={gp.dataset.M}) to {path}")


def load_model(path: Path) -> TrainedGP:
    """Rebuild the trained GP by refactoring the stored training data.

    The stored weights must agree with the refit ones.
    """
    from gpfeed.gp import fit

    doc = read_json(path)
    try:
        header = doc["header"]
        payload = doc["payload"]
        if header.get("format") != MODEL_FORMAT:
            raise DataFormatError(f"{path}: not a gpfeed model file")
        if header.get("version") != MODEL_VERSION:
            raise DataFormatError(f"{path}: unsupported model version {header.get('version')}")
        window = WindowConfig(**header["window"])
        kernel = spec_from_dict(header["kernel"])
        dataset = Dataset(Y=np.asarray(payload["Y"], dtype=float).reshape(header["M"], -1),
                          u=np.asarray(payload["u"], dtype=float), window=window)
        if dataset.n_theta != header["n_theta"]:
            raise DataFormatError(f"{path}: n_theta mismatch in header")
        gp = fit(dataset, kernel, float(header["sigma_n"]),
                 jitter=float(header["applied_jitter"]) > 0)
    except DataFormatError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise DataFormatError(f"{path}: malformed model file ({e})") from e
    except GpfeedError as e:
        raise DataFormatError(f"{path}: stored model is inconsistent ({e})") from e
    stored = np.asarray(payload["alpha"], dtype=float)
    if stored.shape != gp.alpha.shape:
        raise DataFormatError(f"{path}: alpha has {stored.size} entries, expected {gp.dataset.M}")
    scale = float(np.max(np.abs(gp.alpha), initial=0.0))
    if not np.allclose(stored, gp.alpha, rtol=1e-9, atol=1e-12 * max(scale, 1.0)):
        worst = float(np.max(np.abs(stored - gp.alpha)))
        raise DataFormatError(f"{path}: stored alpha differs from the refit by {worst:.3g}")
    return gp
