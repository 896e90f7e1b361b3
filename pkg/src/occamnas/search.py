"""Derivative-free alternating search over (kernels, cells).

The search walks the cell axis from a starting point until accuracy stops
strictly improving (:func:`explore_num_cells`), then moves the starting point
along the kernel axis (:func:`run_search`): doubling while the best accuracy
improves by more than ``epsilon``, otherwise halving from ``k0`` while
accuracy does not degrade.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .archspace import InputShape, SearchPoint, build_architecture, max_cells
from .engine.training import TrainerConfig, train_and_evaluate
from .exceptions import Exhausted, InfeasibleStart, MissingOracleEntry
from .resmodel import HardwareTarget, ResourceReport, SizingConfig, is_feasible, violations

logger = logging.getLogger(__name__)

ACCEPT = "accept"
REJECT_ACCURACY = "reject-accuracy"
REJECT_FEASIBILITY = "reject-feasibility"

TRACE_COLUMNS = ("phase", "j", "i", "k", "c", "accuracy", "feasible",
                 "phi_ram", "phi_flash", "phi_macc", "decision")


@dataclass(frozen=True)
class SearchConfig:
    input: InputShape
    num_classes: int
    k0: int = 4
    epsilon: float = 0.005
    sizing: SizingConfig = field(default_factory=SizingConfig)
    trainer_config: TrainerConfig = field(default_factory=TrainerConfig)
    # False skips training points already known to violate the target; the
    # search decisions are identical because every loop test requires feasibility
    train_infeasible: bool = True

    def __post_init__(self):
        if self.k0 < 1:
            raise ValueError("k0 must be >= 1")
        if not 0 <= self.epsilon < 1:
            raise ValueError("epsilon must lie in [0, 1)")


@dataclass(frozen=True)
class Candidate:
    point: SearchPoint
    accuracy: float | None
    feasible: bool
    report: ResourceReport

    @property
    def evaluated(self) -> bool:
        return self.accuracy is not None


@dataclass(frozen=True)
class TraceEntry:
    phase: str
    j: int
    i: int
    point: SearchPoint
    accuracy: float | None
    feasible: bool
    decision: str
    report: ResourceReport

    def row(self) -> dict:
        return {
            "phase": self.phase, "j": self.j, "i": self.i,
            "k": self.point.k, "c": self.point.c,
            "accuracy": "" if self.accuracy is None else repr(float(self.accuracy)),
            "feasible": int(self.feasible),
            "phi_ram": self.report.phi_ram, "phi_flash": self.report.phi_flash,
            "phi_macc": self.report.phi_macc, "decision": self.decision,
        }


class SearchTrace:
    def __init__(self):
        self.entries: list[TraceEntry] = []

    def append(self, phase, j, i, candidate: Candidate, decision) -> None:
        self.entries.append(TraceEntry(phase, j, i, candidate.point, candidate.accuracy,
                                       candidate.feasible, decision, candidate.report))

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def points(self, phase: str | None = None) -> list[SearchPoint]:
        return [e.point for e in self.entries if phase is None or e.phase == phase]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=TRACE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for entry in self.entries:
            writer.writerow(entry.row())
        return buf.getvalue()

    def to_json(self, **kwargs) -> str:
        rows = []
        for entry in self.entries:
            row = entry.row()
            row["accuracy"] = entry.accuracy
            row["feasible"] = entry.feasible
            rows.append(row)
        return json.dumps(rows, **kwargs)


@dataclass
class SearchResult:
    best: Candidate
    trace: SearchTrace
    evaluations: int
    wall_time: float


class Evaluator(ABC):
    """Maps a search point to a :class:`Candidate`, training each point at most once.

    Subclasses implement :meth:`fitness`; accuracies are memoized in
    ``self.cache`` keyed by ``(k, c)`` and can be persisted with
    :meth:`save_cache` / :meth:`load_cache` for resumable runs.
    """

    def __init__(self, input_shape: InputShape, num_classes: int, sizing: SizingConfig | None = None):
        self.input_shape = input_shape
        self.num_classes = num_classes
        self.sizing = sizing or SizingConfig()
        self.cache: dict[tuple[int, int], float] = {}
        self.trainings = 0
        self.cache_path: Path | None = None

    @abstractmethod
    def fitness(self, point: SearchPoint) -> float:
        """Maximum validation accuracy of ``point``."""

    def assess(self, point: SearchPoint, target: HardwareTarget) -> Candidate:
        """Resource report and feasibility without training."""
        arch = build_architecture(point, self.input_shape, self.num_classes)
        ok, report = is_feasible(arch, target, self.sizing)
        return Candidate(point, None, ok, report)

    def evaluate(self, point: SearchPoint, target: HardwareTarget) -> Candidate:
        base = self.assess(point, target)
        key = (point.k, point.c)
        if key not in self.cache:
            if not base.feasible:
                logger.warning("training %s although it violates the target (%s)",
                               point, ", ".join(violations(base.report, target)) or "cells")
            self.cache[key] = float(self.fitness(point))
            self.trainings += 1
            if self.cache_path is not None:
                self.save_cache(self.cache_path)
        return Candidate(point, self.cache[key], base.feasible, base.report)

    def save_cache(self, path) -> None:
        rows = [{"k": k, "c": c, "accuracy": acc} for (k, c), acc in self.cache.items()]
        tmp = Path(str(path) + ".tmp")
        tmp.write_text(json.dumps({"candidates": rows}, indent=1))
        tmp.replace(path)

    def load_cache(self, path) -> None:
        data = json.loads(Path(path).read_text())
        for row in data.get("candidates", []):
            self.cache[(int(row["k"]), int(row["c"]))] = float(row["accuracy"])

    def attach_cache(self, path) -> None:
        """Load ``path`` if present and persist every new evaluation to it."""
        path = Path(path)
        if path.exists():
            self.load_cache(path)
        self.cache_path = path


class TableOracleEvaluator(Evaluator):
    """Accuracy looked up in a ``{(k, c): accuracy}`` table."""

    def __init__(self, table: dict, input_shape: InputShape, num_classes: int = 2,
                 sizing: SizingConfig | None = None):
        super().__init__(input_shape, num_classes, sizing)
        self.table = {(int(k), int(c)): float(v) for (k, c), v in table.items()}
        self.calls: list[SearchPoint] = []

    def fitness(self, point: SearchPoint) -> float:
        self.calls.append(point)
        try:
            return self.table[(point.k, point.c)]
        except KeyError:
            raise MissingOracleEntry(f"oracle table has no entry for {point}") from None


def candidate_seed(run_seed: int, point: SearchPoint) -> int:
    """Training seed derived from the run seed and the point, so reruns reproduce."""
    return int(np.random.SeedSequence([run_seed, point.k, point.c]).generate_state(1)[0])


class TrainerEvaluator(Evaluator):
    """Fitness from real training on ``train_set``, validated on ``val_set``.

    With ``weights_dir`` set, each trained point's best weights and history
    are written there as ``k<k>_c<c>.bin`` / ``k<k>_c<c>.csv``.
    """

    def __init__(self, train_set, val_set, input_shape: InputShape, num_classes: int,
                 trainer_config: TrainerConfig | None = None, sizing: SizingConfig | None = None,
                 weights_dir=None):
        super().__init__(input_shape, num_classes, sizing)
        self.train_set = train_set
        self.val_set = val_set
        self.trainer_config = trainer_config or TrainerConfig()
        self.weights_dir = Path(weights_dir) if weights_dir is not None else None
        self.results = {}

    def fitness(self, point: SearchPoint) -> float:
        from .engine.serialize import save_weights

        arch = build_architecture(point, self.input_shape, self.num_classes)
        started = time.perf_counter()
        result = train_and_evaluate(arch, self.train_set, self.val_set, self.trainer_config,
                                    seed=candidate_seed(self.trainer_config.seed, point))
        logger.info("trained %s: max val acc %.4f (epoch %d) in %.1fs", point,
                    result.max_val_accuracy, result.best_epoch, time.perf_counter() - started)
        self.results[(point.k, point.c)] = result
        if self.weights_dir is not None:
            self.weights_dir.mkdir(parents=True, exist_ok=True)
            stem = self.weights_dir / f"k{point.k}_c{point.c}"
            save_weights(stem.with_suffix(".bin"), result.final_weights, arch)
            stem.with_suffix(".csv").write_text(result.history_csv())
        return result.max_val_accuracy


def next_k(j: int, k_prev: int, direction: str) -> int:
    """First-layer kernel count for outer step ``j``."""
    if k_prev < 1 or j < 1:
        raise ValueError("need k_prev >= 1 and j >= 1")
    if direction == "doubling":
        return 2 * k_prev
    if direction == "halving":
        if k_prev // 2 < 1:
            raise Exhausted(f"cannot halve k={k_prev}")
        return k_prev // 2
    raise ValueError(f"unknown direction {direction!r}")


def _improves(new: Candidate, old: Candidate, margin: float = 0.0, allow_tie: bool = False) -> bool:
    if not new.feasible or new.accuracy is None or old.accuracy is None:
        return False
    if allow_tie:
        return new.accuracy >= old.accuracy + margin
    return new.accuracy > old.accuracy + margin


def _probe(point, evaluator, target, config) -> Candidate:
    if config.train_infeasible:
        return evaluator.evaluate(point, target)
    probe = evaluator.assess(point, target)
    return evaluator.evaluate(point, target) if probe.feasible else probe


def explore_num_cells(start: SearchPoint, evaluator: Evaluator, target: HardwareTarget,
                      config: SearchConfig, trace: SearchTrace, j: int = 0) -> Candidate:
    """Add cells to ``start`` while each new cell strictly improves accuracy and fits the target."""
    current = _probe(start, evaluator, target, config)
    trace.append("cells", j, 0, current, ACCEPT if current.feasible else REJECT_FEASIBILITY)
    limit = max_cells(evaluator.input_shape)
    i = 0
    while current.point.c + 1 <= limit:
        nxt = _probe(SearchPoint(start.k, current.point.c + 1), evaluator, target, config)
        i += 1
        if _improves(nxt, current):
            trace.append("cells", j, i, nxt, ACCEPT)
            current = nxt
        else:
            trace.append("cells", j, i, nxt, REJECT_FEASIBILITY if not nxt.feasible else REJECT_ACCURACY)
            break
    return current


def run_search(config: SearchConfig, evaluator: Evaluator, target: HardwareTarget) -> SearchResult:
    """Alternate cell-axis exploration with kernel doubling/halving; return the best feasible net."""
    started = time.perf_counter()
    trace = SearchTrace()
    x0 = SearchPoint(config.k0, 0)
    start = evaluator.assess(x0, target)
    if not start.feasible:
        raise InfeasibleStart(
            f"start point {x0} violates the target ({', '.join(violations(start.report, target))})"
        )
    trained_before = set(evaluator.cache)

    def outer(j, x) -> tuple[Candidate, bool]:
        best_here = explore_num_cells(x, evaluator, target, config, trace, j)
        x_ok = evaluator.assess(x, target).feasible
        return best_here, x_ok

    best0, _ = outer(0, x0)
    trace.append("outer", 0, best0.point.c, best0, ACCEPT)
    j = 1
    x1 = SearchPoint(next_k(1, config.k0, "doubling"), 0)
    best1, x1_ok = outer(1, x1)

    if x1_ok and _improves(best1, best0):
        trace.append("outer", 1, best1.point.c, best1, ACCEPT)
        current, k = best1, x1.k
        while True:
            j += 1
            k_next = next_k(j, k, "doubling")
            cand, x_ok = outer(j, SearchPoint(k_next, 0))
            if x_ok and _improves(cand, current, margin=config.epsilon):
                trace.append("outer", j, cand.point.c, cand, ACCEPT)
                current, k = cand, k_next
            else:
                trace.append("outer", j, cand.point.c, cand,
                             REJECT_ACCURACY if x_ok else REJECT_FEASIBILITY)
                break
    else:
        trace.append("outer", 1, best1.point.c, best1, REJECT_ACCURACY if x1_ok else REJECT_FEASIBILITY)
        # the halving ray restarts from k0 and compares against its result
        current, k = best0, config.k0
        while True:
            j += 1
            try:
                k_next = next_k(j, k, "halving")
            except Exhausted:
                break
            cand, x_ok = outer(j, SearchPoint(k_next, 0))
            if x_ok and _improves(cand, current, allow_tie=True):
                trace.append("outer", j, cand.point.c, cand, ACCEPT)
                current, k = cand, k_next
            else:
                trace.append("outer", j, cand.point.c, cand,
                             REJECT_ACCURACY if x_ok else REJECT_FEASIBILITY)
                break

    distinct = {(e.point.k, e.point.c) for e in trace if e.accuracy is not None}
    new_trainings = len(set(evaluator.cache) - trained_before)
    logger.info("search finished: best %s acc %.4f, %d points evaluated (%d newly trained)",
                current.point, current.accuracy, len(distinct), new_trainings)
    return SearchResult(current, trace, len(distinct), time.perf_counter() - started)
