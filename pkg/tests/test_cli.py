import json

import numpy as np
import pytest

from occamnas import cli
from occamnas.search import TrainerEvaluator

SMALL_SEARCH = ["--format", "idx", "--size", "8", "--epochs", "2", "--batch", "16",
                "--ram", "4096", "--flash", "16384", "--macc", "200000", "--seed", "3"]


def run_search(data, out, *extra):
    return cli.main(["search", "--data", str(data), *SMALL_SEARCH, "--out", str(out), *extra])


def only_run_dir(out):
    (run_dir,) = [p for p in out.iterdir() if p.is_dir()]
    return run_dir


def test_estimate_reference_point(capsys):
    code = cli.main(["estimate", "--k", "4", "--c", "2", "--size", "50", "--channels", "3",
                     "--classes", "2", "--target", "L4"])
    out = capsys.readouterr().out
    assert code == 0
    assert "MACC 574,584" in out
    assert out.rstrip().endswith("feasible")


def test_estimate_json(capsys):
    assert cli.main(["estimate", "--k", "4", "--c", "2", "--size", "50", "--channels", "3",
                     "--target", "L0", "--json"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["report"]["phi_macc"] == 574584
    assert payload["feasible"] is True


def test_estimate_spatially_infeasible(capsys):
    assert cli.main(["estimate", "--k", "4", "--c", "6", "--size", "50", "--channels", "3"]) == 0
    out = capsys.readouterr().out
    assert "spatially infeasible" in out and "max cells for 50px is 5" in out


def test_estimate_without_source_is_usage_error():
    assert cli.main(["estimate"]) == 2


def test_estimate_malformed_arch(tmp_path):
    bad = tmp_path / "arch.json"
    bad.write_text("{not json")
    assert cli.main(["estimate", "--arch", str(bad)]) == 3


def test_unknown_preset(blob_dir, tmp_path, capsys):
    assert cli.main(["search", "--data", str(blob_dir), "--target", "L9", "--out", str(tmp_path)]) == 2
    assert "L9" in capsys.readouterr().err


def test_impossible_budget_is_infeasible_start(blob_dir, tmp_path, monkeypatch):
    monkeypatch.setattr(TrainerEvaluator, "fitness", lambda *a: pytest.fail("trained despite infeasible start"))
    code = cli.main(["search", "--data", str(blob_dir), "--size", "8", "--ram", "1", "--flash", "1",
                     "--macc", "1", "--out", str(tmp_path / "runs")])
    assert code == 2


def test_missing_data_is_exit_3(tmp_path):
    code = cli.main(["search", "--data", str(tmp_path / "nope"), "--target", "L4", "--out", str(tmp_path)])
    assert code == 3


def test_search_writes_artifacts_and_eval_reads_them(blob_dir, tmp_path, capsys):
    out = tmp_path / "runs"
    assert run_search(blob_dir, out) == 0
    run_dir = only_run_dir(out)
    for name in ("manifest.json", "cache.json", "arch.json", "weights.bin", "trace.csv", "trace.json",
                 "report.json"):
        assert (run_dir / name).is_file(), name
    report = json.loads((run_dir / "report.json").read_text())
    assert report["feasible"] is True
    assert report["resources"]["phi_ram"] <= 4096
    assert report["holdout_size"] == 40
    assert report["trainings"] == report["evaluations"]
    printed = capsys.readouterr().out
    assert run_dir.name in printed and "Search Cost" in printed

    code = cli.main(["eval", "--arch", str(run_dir / "arch.json"), "--weights", str(run_dir / "weights.bin"),
                     "--data", str(blob_dir)])
    assert code == 0
    shown = capsys.readouterr().out
    assert f"{100 * report['test_accuracy']:.2f}%" in shown

    blob = (run_dir / "weights.bin").read_bytes()
    truncated = tmp_path / "trunc.bin"
    truncated.write_bytes(blob[: len(blob) // 2])
    assert cli.main(["eval", "--arch", str(run_dir / "arch.json"), "--weights", str(truncated),
                     "--data", str(blob_dir)]) == 3


def test_eval_on_empty_dataset(blob_dir, tmp_path):
    out = tmp_path / "runs"
    assert run_search(blob_dir, out) == 0
    run_dir = only_run_dir(out)
    empty = tmp_path / "empty"
    empty.mkdir()
    (empty / "t10k-images-idx3-ubyte").write_bytes(np.array([0x803, 0, 8, 8], ">u4").tobytes())
    (empty / "t10k-labels-idx1-ubyte").write_bytes(np.array([0x801, 0], ">u4").tobytes())
    code = cli.main(["eval", "--arch", str(run_dir / "arch.json"), "--weights", str(run_dir / "weights.bin"),
                     "--data", str(empty)])
    assert code == 3


def test_resume_never_retrains_cached_points(blob_dir, tmp_path, monkeypatch):
    out = tmp_path / "runs"
    assert run_search(blob_dir, out) == 0
    run_dir = only_run_dir(out)
    first = json.loads((run_dir / "report.json").read_text())
    cache = json.loads((run_dir / "cache.json").read_text())
    # simulate an interruption before the last candidate finished
    dropped = cache["candidates"].pop()
    (run_dir / "cache.json").write_text(json.dumps(cache))

    trained = []
    original = TrainerEvaluator.fitness

    def counting(self, point):
        trained.append((point.k, point.c))
        return original(self, point)

    monkeypatch.setattr(TrainerEvaluator, "fitness", counting)
    assert cli.main(["search", "--resume", run_dir.name, "--out", str(out)]) == 0
    assert trained == [(dropped["k"], dropped["c"])]
    second = json.loads((run_dir / "report.json").read_text())
    assert second["point"] == first["point"]
    assert second["val_accuracy"] == first["val_accuracy"]


def test_resume_unknown_run_is_usage_error(tmp_path):
    assert cli.main(["search", "--resume", "deadbeef", "--out", str(tmp_path)]) == 2


def test_identical_searches_give_identical_traces(blob_dir, tmp_path):
    assert run_search(blob_dir, tmp_path / "a") == 0
    assert run_search(blob_dir, tmp_path / "b") == 0
    a, b = only_run_dir(tmp_path / "a"), only_run_dir(tmp_path / "b")
    assert a.name == b.name
    assert (a / "trace.csv").read_bytes() == (b / "trace.csv").read_bytes()
