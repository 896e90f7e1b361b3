"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is also echoed in the pytest terminal
summary. Criterion 7 trains real networks on the bundled MNIST subset and takes
tens of minutes on a single core; it is marked ``slow`` but is part of the
default run.
"""
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from occamnas import cli
from occamnas.archspace import InputShape, SearchPoint, build_architecture, kernel_schedule
from occamnas.resmodel import SizingConfig, estimate_macc, estimate_peak_ram, resource_report
from occamnas.search import SearchConfig, TableOracleEvaluator, run_search

from .conftest import ACCEPTANCE_LINES, write_blob_dataset
from .oracles import brute_force_macc, brute_force_params, replay_search_guarantees, schedule_literal
from .tables import INPUT16, INPUT50, O1, O2, UNBOUNDED, grid_target, random_table

MNIST_DIR = Path(__file__).parent / "data" / "mnist"
KIB = 1024
GRID_CONFIG = SearchConfig(INPUT16, 2, train_infeasible=False)


def record(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_criterion_1_kernel_schedule_literal():
    started = time.perf_counter()
    mismatches = [(k, c) for k in range(1, 65) for c in range(9)
                  if list(kernel_schedule(k, c)) != schedule_literal(k, c)]
    elapsed = time.perf_counter() - started
    record(1, not mismatches and elapsed < 1.0,
           f"{64 * 9} (k, c) pairs, {len(mismatches)} mismatches, {elapsed:.3f}s")


def test_criterion_2_closed_form_identity():
    worst = 0.0
    for c in range(1, 33):
        series = 2 - sum(2.0 ** -i for i in range(1, c))
        worst = max(worst, abs(series - (1 + 2.0 ** (1 - c))))
    record(2, worst <= 1e-12, f"max |difference| {worst:.2e} over c = 1..32")


def test_criterion_3_search_semantics():
    started = time.perf_counter()
    failures = []
    for name, table, expected in (("O1", O1, (SearchPoint(16, 2), 0.78)), ("O2", O2, (SearchPoint(2, 1), 0.81))):
        best = run_search(SearchConfig(INPUT50, 2), TableOracleEvaluator(table, INPUT50), UNBOUNDED).best
        if (best.point, best.accuracy) != expected:
            failures.append(f"{name} returned {best.point}@{best.accuracy}")
    rng = np.random.default_rng(20240601)
    for trial in range(1000):
        table = random_table(rng)
        target, feasible = grid_target(rng)
        # the table stops at k=16; k=32 probes are over budget and are assessed without training
        result = run_search(GRID_CONFIG, TableOracleEvaluator(table, INPUT16), target)
        problems = replay_search_guarantees(result.trace, table, feasible, 0.005, 4)
        if problems:
            failures.append(f"oracle {trial}: {problems}")
    elapsed = time.perf_counter() - started
    record(3, not failures and elapsed < 10.0,
           f"O1, O2 and 1000 random oracles replayed, {len(failures)} failures, {elapsed:.2f}s"
           + (f"; first: {failures[0]}" if failures else ""))


def test_criterion_4_resource_oracle_equivalence():
    sizing = SizingConfig()
    mismatches, checked = [], 0
    for s in range(1, 17):
        for ch in (1, 3):
            for k in range(1, 9):
                for c in range(4):
                    if s >> c == 0:
                        continue  # not enough resolution for c pooling steps
                    arch = build_architecture(SearchPoint(k, c), InputShape(s, ch), 2)
                    rows = resource_report(arch, sizing).per_layer
                    got = (estimate_macc(arch), sum(r.weights for r in rows), sum(r.biases for r in rows))
                    want = (brute_force_macc(k, c, s, ch, 2), *brute_force_params(k, c, s, ch, 2))
                    checked += 1
                    if got != want:
                        mismatches.append(((k, c, s, ch), got, want))
    record(4, checked > 0 and not mismatches,
           f"{checked} architectures, {len(mismatches)} mismatches")


def test_criterion_5_ram_band():
    values = {c: estimate_peak_ram(build_architecture(SearchPoint(4, c), InputShape(50, 3), 2))
              for c in (1, 2, 3)}
    ok = all(17 * KIB <= v <= 22 * KIB for v in values.values())
    record(5, ok, "peak RAM " + ", ".join(f"c={c}: {v / KIB:.2f} kiB" for c, v in values.items())
           + " (band 17-22 kiB)")


def test_criterion_6_gradient_check():
    from .test_engine import arch, max_rel_error, numeric_grads, random_weights
    from occamnas.engine import backward, forward

    started = time.perf_counter()
    rng = np.random.default_rng(6)
    a = arch(2, 1, 6, 1, 3)
    w = random_weights(a, rng)
    x = rng.uniform(0, 255, (3, 6, 6, 1))
    y = np.array([2, 0, 1])
    _, cache = forward(a, w, x, "train")
    err = max_rel_error(backward(a, w, cache, y), numeric_grads(a, w, x, y))
    elapsed = time.perf_counter() - started
    record(6, err < 1e-3 and elapsed < 30.0, f"max relative error {err:.2e}, {elapsed:.2f}s")


@pytest.mark.slow
def test_criterion_7_mnist_end_to_end(tmp_path, capsys):
    out = tmp_path / "runs"
    started = time.perf_counter()
    code = cli.main(["search", "--data", str(MNIST_DIR), "--format", "idx", "--target", "L4", "--size", "28",
                     "--epochs", "10", "--lr", "1e-3", "--batch", "128", "--seed", "7", "--out", str(out)])
    elapsed = time.perf_counter() - started
    assert code == 0
    (run_dir,) = list(out.iterdir())
    report = json.loads((run_dir / "report.json").read_text())
    ok = (report["feasible"] and report["holdout_size"] == 2000 and report["test_accuracy"] >= 0.90
          and elapsed <= 4 * 3600)
    with capsys.disabled():
        record(7, ok, f"best (k={report['point']['k']}, c={report['point']['c']}), "
                      f"holdout accuracy {report['test_accuracy']:.4f} on {report['holdout_size']} images, "
                      f"feasible={report['feasible']}, {report['evaluations']} candidates, {elapsed / 60:.1f} min")


def test_criterion_8_no_candidate_trained_twice(tmp_path):
    repeats = []
    rng = np.random.default_rng(8)
    for trial in range(200):
        table = random_table(rng)
        target, _ = grid_target(rng)
        evaluator = TableOracleEvaluator(table, INPUT16)
        result = run_search(GRID_CONFIG, evaluator, target)
        run_search(GRID_CONFIG, evaluator, target)  # a second pass must hit the cache only
        if len(evaluator.calls) != len(set(evaluator.calls)) or evaluator.trainings != result.evaluations:
            repeats.append(trial)
    data = write_blob_dataset(tmp_path / "blobs")
    args = ["search", "--data", str(data), "--size", "8", "--epochs", "2", "--batch", "16", "--ram", "4096",
            "--flash", "16384", "--macc", "200000", "--out", str(tmp_path / "runs")]
    assert cli.main(args) == 0
    (run_dir,) = list((tmp_path / "runs").iterdir())
    report = json.loads((run_dir / "report.json").read_text())
    cli_ok = report["trainings"] == report["evaluations"] == len(list((run_dir / "candidates").glob("*.bin")))
    assert cli.main(["search", "--resume", run_dir.name, "--out", str(tmp_path / "runs")]) == 0
    resumed = json.loads((run_dir / "report.json").read_text())
    cli_ok = cli_ok and resumed["trainings"] == 0
    record(8, not repeats and cli_ok,
           f"200 table searches run twice with {len(repeats)} repeated trainings; CLI run trained "
           f"{report['trainings']} distinct candidates and {resumed['trainings']} on resume")


def test_criterion_9_identical_trace_csv(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.THREADS_ENV, "1")
    data = write_blob_dataset(tmp_path / "blobs")
    traces = []
    for name in ("first", "second"):
        out = tmp_path / name
        assert cli.main(["search", "--data", str(data), "--size", "8", "--epochs", "3", "--batch", "16",
                         "--ram", "4096", "--flash", "16384", "--macc", "200000", "--seed", "11",
                         "--out", str(out)]) == 0
        (run_dir,) = list(out.iterdir())
        traces.append((run_dir / "trace.csv").read_bytes())
    record(9, traces[0] == traces[1] and len(traces[0]) > 0,
           f"trace.csv byte-identical across two runs ({len(traces[0])} bytes)")
