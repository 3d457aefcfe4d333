"""End-to-end tests of the command-line surface."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from gpfeed.cli import dispatch
from gpfeed.storage import read_csv
from tests.conftest import small_config_document

REPO_ROOT = Path(__file__).resolve().parent.parent


def run(capsys: pytest.CaptureFixture[str], *argv: str) -> tuple[int, str, str]:
    code = dispatch(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestBasics:
    def test_version(self, capsys: pytest.CaptureFixture[str]) -> None:
        code, out, _ = run(capsys, "version")
        assert code == 0
        assert "gpfeed 1.0.0" in out

    def test_unknown_command_exits(self) -> None:
        with pytest.raises(SystemExit):
            dispatch(["fly"])

    def test_kernel_profile(self, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        code, _, _ = run(capsys, "kernel-profile", "--out", str(tmp_path), "--points", "11")
        assert code == 0
        cols = read_csv(tmp_path / "kernel_profile.csv", ["offset", "se", "matern32", "periodic"])
        assert cols["offset"].size == 11
        assert cols["se"][5] == pytest.approx(1.0)
        assert np.all(cols["matern32"] <= 1.0)
        assert (tmp_path / "gpfeed.log").exists()


class TestWorkflow:
    """gen-ref → simulate → train → predict → evaluate on the small config."""

    def test_gen_ref(
        self, small_config: Path, tmp_path: Path, capsys: pytest.CaptureFixture[str],
    ) -> None:
        out = tmp_path / "out"
        code, stdout, _ = run(capsys, "gen-ref", "--config", str(small_config),
                              "--out", str(out), "--scale", "1.05")
        assert code == 0
        assert "r1x1.05" in stdout
        r = read_csv(out / "reference.csv", ["t", "r"])["r"]
        assert r.size == 821
        assert np.max(r) == pytest.approx(0.021, rel=1e-12)

    def test_config_from_environment(
        self, small_config: Path, tmp_path: Path, monkeypatch: pytest.MonkeyPatch,
        capsys: pytest.CaptureFixture[str],
    ) -> None:
        monkeypatch.setenv("GPFEED_CONFIG", str(small_config))
        code, _, _ = run(capsys, "gen-ref", "--out", str(tmp_path))
        assert code == 0
        assert read_csv(tmp_path / "reference.csv", ["r"])["r"].size == 821

    def test_full_chain(
        self, small_config: Path, tmp_path: Path, capsys: pytest.CaptureFixture[str],
    ) -> None:
        out = tmp_path / "out"
        common = ["--config", str(small_config), "--out", str(out)]
        assert run(capsys, "gen-ref", *common)[0] == 0
        assert run(capsys, "simulate", *common)[0] == 0
        manifest = json.loads((out / "logs" / "manifest.json").read_text())
        assert [m["reference_id"] for m in manifest] == ["r1x0.95", "r1x1", "r1x1.05"]
        assert [m["scale"] for m in manifest] == [0.95, 1.0, 1.05]

        code, stdout, _ = run(capsys, "train", *common)
        assert code == 0
        assert "M=249" in stdout
        for name in ("model.json", "trace.csv", "dataset.csv"):
            assert (out / name).exists()

        code, _, _ = run(capsys, "predict", *common, "--variance")
        assert code == 0
        ff = read_csv(out / "feedforward.csv", ["t", "u_ff", "variance"])
        assert ff["u_ff"].size == 821
        assert np.all(ff["variance"] >= 0.0)

        log_file = out / "logs" / "log_r1x1_rep0.csv"
        code, stdout, _ = run(capsys, "evaluate", str(log_file))
        assert code == 0
        assert "log_r1x1_rep0.csv" in stdout

    def test_train_without_optimizer(
        self, small_config: Path, tmp_path: Path, capsys: pytest.CaptureFixture[str],
    ) -> None:
        common = ["--config", str(small_config), "--out", str(tmp_path)]
        assert run(capsys, "simulate", *common, "--feedforward", "inverse")[0] == 0
        assert run(capsys, "train", *common, "--no-optimize")[0] == 0
        assert (tmp_path / "model.json").exists()
        assert not (tmp_path / "trace.csv").exists()


class TestReproduce:
    """The full procedure and its report files."""

    def test_report_is_byte_identical_across_runs(
        self, small_config: Path, tmp_path: Path, capsys: pytest.CaptureFixture[str],
    ) -> None:
        outs = [tmp_path / "a", tmp_path / "b"]
        for out in outs:
            code, stdout, _ = run(capsys, "reproduce-paper", "--config", str(small_config),
                                  "--out", str(out))
            assert code == 0
            assert "Tracking errors with different feedforward signals" in stdout
        for name in ("report.csv", "report.txt", "report.json"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
        assert (outs[0] / "timings.json").exists()
        assert (outs[0] / "feedforward_r1.csv").exists()
        assert (outs[0] / "feedforward_r1x1.02.csv").exists()

    def test_convergence_study(self, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        doc = small_config_document()
        doc["convergence"] = {"strides": [8, 4]}
        path = tmp_path / "gpfeed.json"
        path.write_text(json.dumps(doc))
        code, _, _ = run(capsys, "convergence-study", "--config", str(path),
                         "--out", str(tmp_path / "out"))
        assert code == 0
        lines = (tmp_path / "out" / "convergence.csv").read_text().splitlines()
        assert lines[0].startswith("stride,")
        assert [line.split(",")[0] for line in lines[1:]] == ["8", "4"]

    def test_convergence_study_on_shipped_config(
        self, tmp_path: Path, capsys: pytest.CaptureFixture[str],
    ) -> None:
        doc = json.loads((REPO_ROOT / "gpfeed.json").read_text())
        doc["trajectory"].update(displacement=0.02, dwell=0.05, lead=0.02, n_samples=None)
        path = tmp_path / "gpfeed.json"
        path.write_text(json.dumps(doc))
        code, stdout, _ = run(capsys, "convergence-study", "--config", str(path),
                              "--out", str(tmp_path / "out"))
        assert code == 0
        rows = (tmp_path / "out" / "convergence.csv").read_text().splitlines()[1:]
        assert [row.split(",")[0] for row in rows] == ["8", "4", "2", "1"]
        assert int(rows[-1].split(",")[2]) == 821
        assert "convergence" in stdout

    def test_convergence_row_cap(
        self, tmp_path: Path, capsys: pytest.CaptureFixture[str],
    ) -> None:
        doc = small_config_document()
        doc["convergence"] = {"strides": [8, 1], "max_rows": 500}
        path = tmp_path / "gpfeed.json"
        path.write_text(json.dumps(doc))
        code, _, err = run(capsys, "convergence-study", "--config", str(path),
                           "--out", str(tmp_path / "out"))
        assert code == 2
        assert "max_rows=500" in err


class TestExitCodes:
    """Error categories map to distinct exit codes with a one-line message."""

    def test_missing_config_file(
        self, tmp_path: Path, capsys: pytest.CaptureFixture[str],
    ) -> None:
        code, _, err = run(capsys, "gen-ref", "--config", str(tmp_path / "absent.json"),
                           "--out", str(tmp_path))
        assert code == 2
        assert "❌ gpfeed gen-ref: [config]" in err

    def test_bad_kernel_flag(
        self, small_config: Path, tmp_path: Path, capsys: pytest.CaptureFixture[str],
    ) -> None:
        code, _, err = run(capsys, "gen-ref", "--config", str(small_config),
                           "--out", str(tmp_path), "--kernel", "rbf")
        assert code == 2
        assert "rbf" in err

    def test_corrupt_log(self, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        path = tmp_path / "log.csv"
        path.write_text("t,r,y,u,e\n0,1,1,0,0\n0.001,x,1,0,0\n")
        code, _, err = run(capsys, "evaluate", str(path))
        assert code == 3
        assert "log.csv:3" in err

    def test_missing_model(self, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        code, _, err = run(capsys, "predict", "--out", str(tmp_path))
        assert code == 3
        assert "[data]" in err
