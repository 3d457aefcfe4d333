"""Tests for CSV/JSON file formats and the model file."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from gpfeed.errors import DataFormatError
from gpfeed.gp import Dataset, fit, predict
from gpfeed.kernels import isotropic
from gpfeed.plantsim import ClosedLoopLog
from gpfeed.storage import (
    MANIFEST,
    load_model,
    read_csv,
    read_feedforward,
    read_json,
    read_log,
    read_logs,
    read_trajectory,
    save_model,
    write_csv,
    write_feedforward,
    write_log,
    write_logs,
    write_trace,
    write_trajectory,
)
from gpfeed.trajectory import Trajectory


def make_log(rng: np.random.Generator, ref_id: str, rep: int, n: int = 12) -> ClosedLoopLog:
    r = rng.normal(size=n)
    y = rng.normal(size=n)
    return ClosedLoopLog(r=r, y=y, u=rng.normal(size=n), e=r - y, Ts=1e-3, seed=40 + rep,
                         reference_id=ref_id, repetition=rep)


class TestCsv:
    """Numeric CSV reading and line-numbered errors."""

    def test_values_survive_exactly(self, tmp_path: Path, rng: np.random.Generator) -> None:
        data = rng.normal(size=(6, 2)) * 1e-7
        write_csv(tmp_path / "a.csv", ["x", "z"], data)
        cols = read_csv(tmp_path / "a.csv", ["x", "z"])
        np.testing.assert_array_equal(cols["x"], data[:, 0])
        np.testing.assert_array_equal(cols["z"], data[:, 1])
        assert not (tmp_path / "a.csv.tmp").exists()

    def test_missing_column(self, tmp_path: Path) -> None:
        path = tmp_path / "a.csv"
        path.write_text("t,r\n0,1\n")
        with pytest.raises(DataFormatError, match=r"a\.csv:1: missing column\(s\) y"):
            read_csv(path, ["t", "r", "y"])

    def test_bad_number_names_line(self, tmp_path: Path) -> None:
        path = tmp_path / "a.csv"
        path.write_text("t,r\n0,1\n0.001,oops\n")
        with pytest.raises(DataFormatError, match=r"a\.csv:3:"):
            read_csv(path, ["t", "r"])

    def test_wrong_field_count(self, tmp_path: Path) -> None:
        path = tmp_path / "a.csv"
        path.write_text("t,r\n0,1,2\n")
        with pytest.raises(DataFormatError, match="expected 2 fields, got 3"):
            read_csv(path, ["t"])

    def test_non_finite_value(self, tmp_path: Path) -> None:
        path = tmp_path / "a.csv"
        path.write_text("t,r\n0,nan\n")
        with pytest.raises(DataFormatError, match="non-finite"):
            read_csv(path, ["t"])

    def test_blank_lines_skipped(self, tmp_path: Path) -> None:
        path = tmp_path / "a.csv"
        path.write_text("t,r\n0,1\n\n0.001,2\n")
        assert read_csv(path, ["r"])["r"].tolist() == [1.0, 2.0]

    def test_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(DataFormatError, match="cannot read"):
            read_csv(tmp_path / "absent.csv", ["t"])

    def test_invalid_json_names_line(self, tmp_path: Path) -> None:
        path = tmp_path / "a.json"
        path.write_text('{\n  "a": 1,\n  oops\n}\n')
        with pytest.raises(DataFormatError, match=r"a\.json:3:"):
            read_json(path)


class TestTrajectoryAndLogs:
    """Reference, log and feedforward CSVs."""

    def test_trajectory_file(self, tmp_path: Path, short_reference: Trajectory) -> None:
        path = tmp_path / "reference.csv"
        write_trajectory(path, short_reference)
        traj = read_trajectory(path)
        np.testing.assert_array_equal(traj.samples, short_reference.samples)
        assert traj.Ts == pytest.approx(1e-3, rel=1e-12)
        assert traj.reference_id == "reference"
        assert path.read_text().splitlines()[0] == "t,r"

    def test_log_file(self, tmp_path: Path, rng: np.random.Generator) -> None:
        entry = make_log(rng, "r1", 0)
        write_log(tmp_path / "log.csv", entry)
        loaded = read_log(tmp_path / "log.csv", reference_id="r1")
        np.testing.assert_array_equal(loaded.u, entry.u)
        assert loaded.reference_id == "r1"
        assert (tmp_path / "log.csv").read_text().splitlines()[0] == "t,r,y,u,e"

    def test_log_error_column_checked(self, tmp_path: Path) -> None:
        path = tmp_path / "log.csv"
        path.write_text("t,r,y,u,e\n0,1,1,0,0\n0.001,1,0.5,0,0.4\n")
        with pytest.raises(DataFormatError, match=r"log\.csv:3: e != r - y"):
            read_log(path)

    def test_single_sample_has_no_sample_time(self, tmp_path: Path) -> None:
        path = tmp_path / "log.csv"
        path.write_text("t,r,y,u,e\n0,1,1,0,0\n")
        with pytest.raises(DataFormatError, match="Ts"):
            read_log(path)

    def test_manifest(self, tmp_path: Path, rng: np.random.Generator) -> None:
        logs = [make_log(rng, ref, rep) for ref in ("r1x0.9", "r1x1") for rep in (0, 1)]
        manifest = write_logs(tmp_path, logs, {"r1x0.9": 0.9, "r1x1": 1.0})
        assert [m["file"] for m in manifest] == [
            "log_r1x0.9_rep0.csv", "log_r1x0.9_rep1.csv", "log_r1x1_rep0.csv", "log_r1x1_rep1.csv",
        ]
        assert json.loads((tmp_path / MANIFEST).read_text())[1]["scale"] == 0.9
        loaded = read_logs(tmp_path)
        assert [(g.reference_id, g.repetition, g.seed) for g in loaded] == [
            (g.reference_id, g.repetition, g.seed) for g in logs
        ]
        np.testing.assert_array_equal(loaded[3].y, logs[3].y)

    def test_logs_without_manifest(self, tmp_path: Path, rng: np.random.Generator) -> None:
        write_log(tmp_path / "log_b.csv", make_log(rng, "b", 0))
        write_log(tmp_path / "log_a.csv", make_log(rng, "a", 0))
        assert [g.reference_id for g in read_logs(tmp_path)] == ["log_a", "log_b"]

    def test_empty_log_dir(self, tmp_path: Path) -> None:
        with pytest.raises(DataFormatError, match="no manifest"):
            read_logs(tmp_path)

    def test_malformed_manifest(self, tmp_path: Path) -> None:
        (tmp_path / MANIFEST).write_text('[{"file": "log.csv"}]')
        with pytest.raises(DataFormatError, match="entry 0"):
            read_logs(tmp_path)

    def test_feedforward_variance_column(self, tmp_path: Path) -> None:
        write_feedforward(tmp_path / "ff.csv", 1e-3, [0.5, 0.25], [0.01, 0.02])
        assert (tmp_path / "ff.csv").read_text().splitlines()[0] == "t,u_ff,variance"
        assert read_feedforward(tmp_path / "ff.csv").tolist() == [0.5, 0.25]


class TestModelFile:
    """Saving and reloading a trained GP."""

    def test_reload_predicts_identically(
        self, tmp_path: Path, small_dataset: Dataset, rng: np.random.Generator,
    ) -> None:
        gp = fit(small_dataset, isotropic("matern32", small_dataset.n_theta, 1.3, 0.9), 0.05)
        save_model(tmp_path / "model.json", gp)
        loaded = load_model(tmp_path / "model.json")
        R = rng.normal(size=(5, small_dataset.n_theta))
        np.testing.assert_array_equal(predict(loaded, R).mean, predict(gp, R).mean)
        assert loaded.kernel == gp.kernel
        assert loaded.window == small_dataset.window

    def test_same_model_same_bytes(self, tmp_path: Path, small_dataset: Dataset) -> None:
        k = isotropic("se", small_dataset.n_theta)
        save_model(tmp_path / "a.json", fit(small_dataset, k, 0.1))
        save_model(tmp_path / "b.json", fit(small_dataset, k, 0.1))
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_wrong_format(self, tmp_path: Path) -> None:
        path = tmp_path / "model.json"
        path.write_text(json.dumps({"header": {"format": "other"}, "payload": {}}))
        with pytest.raises(DataFormatError, match="not a gpfeed model"):
            load_model(path)

    def test_truncated_payload(self, tmp_path: Path, small_dataset: Dataset) -> None:
        path = tmp_path / "model.json"
        save_model(path, fit(small_dataset, isotropic("se", small_dataset.n_theta), 0.1))
        doc = json.loads(path.read_text())
        del doc["payload"]["u"]
        path.write_text(json.dumps(doc))
        with pytest.raises(DataFormatError, match="malformed"):
            load_model(path)

    def test_stored_weights_must_match_refit(
        self, tmp_path: Path, small_dataset: Dataset,
    ) -> None:
        path = tmp_path / "model.json"
        gp = fit(small_dataset, isotropic("se", small_dataset.n_theta), 0.1)
        save_model(path, gp)
        np.testing.assert_array_equal(load_model(path).alpha, gp.alpha)
        doc = json.loads(path.read_text())
        doc["payload"]["alpha"][3] += 1e-3 * (1.0 + abs(doc["payload"]["alpha"][3]))
        path.write_text(json.dumps(doc))
        with pytest.raises(DataFormatError, match="alpha differs"):
            load_model(path)

    def test_trace_csv(self, tmp_path: Path) -> None:
        k = isotropic("se", 1)
        write_trace(tmp_path / "trace.csv", k, [
            {"restart": 0, "iteration": 0, "lml": -3.5, "grad_norm": 0.1,
             "params": [0.1, 1.0, 2.0]},
        ])
        lines = (tmp_path / "trace.csv").read_text().splitlines()
        assert lines[0] == "restart,iteration,lml,grad_norm,sigma_n,sigma_f,lengthscale[0]"
        assert lines[1].startswith("0,0,-3.5,")
