"""Command-line front end: ``occamnas {search,estimate,eval}``."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from contextlib import nullcontext
from datetime import datetime, timezone
from pathlib import Path


from .archspace import ArchDescriptor, InputShape, SearchPoint, build_architecture, max_cells
from .dataio import Dataset, find_idx_pair, load_idx, load_image_dir, resize, split
from .engine.layers import accuracy
from .engine.serialize import load_weights, save_weights
from .engine.training import TrainerConfig, train_and_evaluate
from .exceptions import (
    DatasetError,
    EmptyDataset,
    InfeasibleStart,
    SpatiallyInfeasible,
    UnknownPreset,
    WeightFormatError,
)
from .resmodel import (
    KIB,
    HardwareTarget,
    SizingConfig,
    format_hhmm,
    format_report_table,
    is_feasible,
    target_preset,
    violations,
)
from .search import SearchConfig, TrainerEvaluator, candidate_seed, run_search

logger = logging.getLogger("occamnas")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_DATA = 3
THREADS_ENV = "OCCAMNAS_THREADS"
MANIFEST_VERSION = 1


class UsageError(Exception):
    pass


def thread_limit():
    """Cap BLAS threads at $OCCAMNAS_THREADS when set."""
    value = os.environ.get(THREADS_ENV)
    if not value:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(value))


def resolve_target(args) -> HardwareTarget:
    explicit = [args.ram, args.flash, args.macc]
    if args.target and any(v is not None for v in explicit):
        raise UsageError("use either --target or --ram/--flash/--macc, not both")
    if args.target:
        return target_preset(args.target)
    if all(v is not None for v in explicit):
        try:
            return HardwareTarget(args.ram, args.flash, args.macc, "custom")
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    if any(v is not None for v in explicit):
        raise UsageError("--ram, --flash and --macc must be given together")
    return None


def _load(path, fmt: str, split_name: str = "train") -> Dataset:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"{path} does not exist")
    if fmt == "idx":
        if path.is_dir():
            pair = find_idx_pair(path, split_name)
            if pair is None:
                raise DatasetError(f"no {split_name} IDX image/label pair found in {path}")
            return load_idx(*pair)
        raise DatasetError("--data for idx format must be a directory holding *-images/*-labels files")
    return load_image_dir(path)


def _prepare(ds: Dataset, size: int, channels: int) -> Dataset:
    if len(ds) == 0:
        raise EmptyDataset("dataset holds no images")
    if ds.uniform and ds.images.shape[-1] == 3 and channels == 1:
        gray = ds.images.mean(axis=-1, keepdims=True)
        ds = Dataset(gray, ds.labels, ds.class_names)
    elif not ds.uniform and channels == 1:
        ds = Dataset([img.mean(axis=-1, keepdims=True) for img in ds.images], ds.labels, ds.class_names)
    return resize(ds, size, replicate_channels=(channels == 3))


def _dataset_channels(ds: Dataset) -> int:
    return int(ds.images.shape[-1]) if ds.uniform else int(ds.images[0].shape[-1])


def _config_snapshot(args, target: HardwareTarget) -> dict:
    return {
        "data": str(Path(args.data).resolve()),
        "format": args.format,
        "test_data": str(Path(args.test_data).resolve()) if args.test_data else None,
        "size": args.size,
        "channels": args.channels,
        "classes": args.classes,
        "target": target.to_dict(),
        "k0": args.k0,
        "epsilon": args.epsilon,
        "skip_infeasible": args.skip_infeasible,
        "holdout_split": args.holdout_split,
        "trainer": {
            "epochs": args.epochs,
            "learning_rate": args.lr,
            "batch_size": args.batch,
            "validation_split": args.val_split,
            "seed": args.seed,
        },
        "sizing": SizingConfig().to_dict(),
    }


def run_id_for(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:12]


def _apply_snapshot(args, config: dict) -> None:
    args.data, args.format, args.test_data = config["data"], config["format"], config["test_data"]
    args.size, args.channels, args.classes = config["size"], config["channels"], config["classes"]
    args.k0, args.epsilon = config["k0"], config["epsilon"]
    args.skip_infeasible, args.holdout_split = config["skip_infeasible"], config["holdout_split"]
    t = config["trainer"]
    args.epochs, args.lr, args.batch = t["epochs"], t["learning_rate"], t["batch_size"]
    args.val_split, args.seed = t["validation_split"], t["seed"]


def cmd_search(args) -> int:
    out = Path(args.out)
    if args.resume:
        run_dir = out / args.resume
        manifest_path = run_dir / "manifest.json"
        if not manifest_path.exists():
            raise UsageError(f"no run manifest at {manifest_path}")
        manifest = json.loads(manifest_path.read_text())
        config = manifest["config"]
        _apply_snapshot(args, config)
        t = config["target"]
        target = HardwareTarget(t["xi_ram"], t["xi_flash"], t["xi_macc"], t["name"])
        run_id = args.resume
    else:
        if args.data is None:
            raise UsageError("--data is required")
        target = resolve_target(args)
        if target is None:
            raise UsageError("a target is required: --target {L0,L1,L4} or --ram/--flash/--macc")
        config = _config_snapshot(args, target)
        run_id = run_id_for(config)
        run_dir = out / run_id
        manifest = {"version": MANIFEST_VERSION, "run_id": run_id, "config": config}

    if args.classes is not None and args.channels is not None:
        _check_start(args, target)

    data = _load(args.data, args.format, "train")
    channels = args.channels or _dataset_channels(data)
    data = _prepare(data, args.size, channels)
    num_classes = len(data.class_names)
    if args.classes is not None and args.classes != num_classes:
        raise DatasetError(f"--classes {args.classes} but the data holds {num_classes} classes")
    holdout = None
    if args.test_data:
        holdout = _load(args.test_data, args.format, "test")
    elif args.format == "idx" and find_idx_pair(args.data, "test") is not None:
        holdout = _load(args.data, "idx", "test")
    if holdout is not None:
        holdout = _prepare(holdout, args.size, channels)
    else:
        data, holdout = split(data, args.holdout_split, seed=args.seed)

    input_shape = InputShape(args.size, channels)
    trainer = TrainerConfig(epochs=args.epochs, learning_rate=args.lr, batch_size=args.batch,
                            validation_split=args.val_split, seed=args.seed)
    sizing = SizingConfig()
    search_config = SearchConfig(input_shape, num_classes, args.k0, args.epsilon, sizing, trainer,
                                 train_infeasible=not args.skip_infeasible)
    train, val = split(data, args.val_split, seed=args.seed)

    run_dir.mkdir(parents=True, exist_ok=True)
    cache_path = run_dir / "cache.json"
    if not args.resume and cache_path.exists():
        cache_path.unlink()
    manifest["created"] = manifest.get("created") or _now()
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))

    evaluator = TrainerEvaluator((train.images, train.labels), (val.images, val.labels), input_shape,
                                 num_classes, trainer, sizing, weights_dir=run_dir / "candidates")
    evaluator.attach_cache(cache_path)
    cached = len(evaluator.cache)
    if cached:
        logger.info("resuming run %s with %d cached candidates", run_id, cached)
    started = time.perf_counter()
    with thread_limit():
        result = run_search(search_config, evaluator, target)
        best = result.best
        arch = build_architecture(best.point, input_shape, num_classes)
        weights = _best_weights(evaluator, arch, best.point, run_dir, trainer, train, val)
        test_acc = accuracy(arch, weights, holdout.images, holdout.labels)
    elapsed = time.perf_counter() - started

    artifacts = {
        "arch": "arch.json", "weights": "weights.bin", "trace_csv": "trace.csv",
        "trace_json": "trace.json", "report": "report.json", "cache": "cache.json",
    }
    (run_dir / "arch.json").write_text(arch.to_json(indent=2))
    save_weights(run_dir / "weights.bin", weights, arch)
    (run_dir / "trace.csv").write_text(result.trace.to_csv())
    (run_dir / "trace.json").write_text(result.trace.to_json(indent=1))
    report = {
        "run_id": run_id,
        "point": {"k": best.point.k, "c": best.point.c},
        "kernel_schedule": list(arch.kernel_schedule),
        "val_accuracy": best.accuracy,
        "test_accuracy": test_acc,
        "holdout_size": len(holdout),
        "feasible": best.feasible,
        "target": target.to_dict(),
        "resources": best.report.to_dict(),
        "evaluations": result.evaluations,
        "trainings": evaluator.trainings,
        "search_seconds": elapsed,
        "search_cost": format_hhmm(elapsed),
    }
    (run_dir / "report.json").write_text(json.dumps(report, indent=2))
    manifest["artifacts"] = artifacts
    manifest["finished"] = _now()
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))

    print(f"run {run_id}: best {best.point} schedule {list(arch.kernel_schedule)} "
          f"({result.evaluations} candidates, {evaluator.trainings} trained this session)")
    print(format_report_table([{
        "name": f"{target.name} k={best.point.k} c={best.point.c}",
        "accuracy": test_acc, "phi_ram": best.report.phi_ram, "phi_flash": best.report.phi_flash,
        "phi_macc": best.report.phi_macc, "search_seconds": elapsed,
    }]))
    print(f"validation accuracy {100 * best.accuracy:.2f}%, holdout accuracy {100 * test_acc:.2f}% "
          f"on {len(holdout)} images; artifacts in {run_dir}")
    return EXIT_OK


def _check_start(args, target):
    input_shape = InputShape(args.size, args.channels)
    arch = build_architecture(SearchPoint(args.k0, 0), input_shape, args.classes)
    ok, report = is_feasible(arch, target, SizingConfig())
    if not ok:
        raise InfeasibleStart(f"start point ({args.k0},0) violates the target "
                              f"({', '.join(violations(report, target))})")


def _best_weights(evaluator, arch, point, run_dir, trainer, train, val):
    result = evaluator.results.get((point.k, point.c))
    if result is not None:
        return result.final_weights
    stored = run_dir / "candidates" / f"k{point.k}_c{point.c}.bin"
    if stored.exists():
        return load_weights(stored, arch)
    logger.info("retraining %s to recover weights missing from the run directory", point)
    return train_and_evaluate(arch, (train.images, train.labels), (val.images, val.labels), trainer,
                              seed=candidate_seed(trainer.seed, point)).final_weights


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def cmd_estimate(args) -> int:
    target = resolve_target(args)
    if args.arch:
        try:
            arch = ArchDescriptor.from_json(Path(args.arch).read_text())
        except (OSError, ValueError) as exc:
            print(f"error: cannot read architecture {args.arch}: {exc}", file=sys.stderr)
            return EXIT_DATA
    else:
        if args.k is None or args.c is None or args.size is None:
            raise UsageError("estimate needs --arch or --k, --c and --size")
        input_shape = InputShape(args.size, args.channels or 3)
        try:
            arch = build_architecture(SearchPoint(args.k, args.c), input_shape, args.classes or 2)
        except SpatiallyInfeasible as exc:
            print(f"verdict: spatially infeasible ({exc}); max cells for {args.size}px is {max_cells(input_shape)}")
            return EXIT_OK
    from .resmodel import resource_report

    report = resource_report(arch, SizingConfig())
    if args.json:
        payload = {"arch": arch.to_dict(), "report": report.to_dict()}
        if target is not None:
            payload["feasible"] = is_feasible(arch, target)[0]
            payload["target"] = target.to_dict()
        print(json.dumps(payload, indent=2))
        return EXIT_OK
    print(f"architecture ({arch.point.k},{arch.point.c}) at {arch.input.s}x{arch.input.s}x{arch.input.channels}, "
          f"kernel schedule {list(arch.kernel_schedule)}")
    print(f"{'#':>3} {'layer':<16} {'act in [B]':>10} {'act out [B]':>11} {'params':>8} {'MACC':>10}")
    for row in report.per_layer:
        print(f"{row.index:>3} {row.kind:<16} {row.act_in_bytes:>10} {row.act_out_bytes:>11} "
              f"{row.params:>8} {row.macc:>10,}")
    print(format_report_table([{"name": f"k={arch.point.k} c={arch.point.c}", "phi_ram": report.phi_ram,
                                "phi_flash": report.phi_flash, "phi_macc": report.phi_macc}]))
    print(f"MACC {report.phi_macc:,}; RAM {report.phi_ram:,} B; Flash {report.phi_flash:,} B")
    if target is not None:
        ok, _ = is_feasible(arch, target)
        bad = violations(report, target)
        verdict = "feasible" if ok else f"infeasible ({', '.join(bad)})"
        print(f"verdict vs {target.name} (RAM {target.xi_ram / KIB:g} kiB, Flash {target.xi_flash / KIB:g} kiB, "
              f"MACC {target.xi_macc:,}): {verdict}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        arch = ArchDescriptor.from_json(Path(args.arch).read_text())
    except (OSError, ValueError) as exc:
        print(f"error: cannot read architecture {args.arch}: {exc}", file=sys.stderr)
        return EXIT_DATA
    weights = load_weights(args.weights, arch)
    split_name = "test" if args.format == "idx" and find_idx_pair(args.data, "test") else "train"
    data = _load(args.data, args.format, split_name)
    data = _prepare(data, arch.input.s, arch.input.channels)
    if data.labels.max() >= arch.num_classes:
        raise DatasetError("dataset labels exceed the model's class count")
    with thread_limit():
        acc = accuracy(arch, weights, data.images, data.labels)
    print(f"test accuracy {100 * acc:.2f}% on {len(data)} images ({args.data})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="occamnas", description="Hardware-aware CNN search for microcontrollers.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_target(p):
        p.add_argument("--target", help="MCU preset: L0, L1 or L4")
        p.add_argument("--ram", type=int, help="RAM budget in bytes")
        p.add_argument("--flash", type=int, help="Flash budget in bytes")
        p.add_argument("--macc", type=int, help="MACC budget")

    s = sub.add_parser("search", help="run the architecture search on a dataset")
    s.add_argument("--data", help="IDX directory or class-per-folder PNG directory")
    s.add_argument("--format", choices=("idx", "dir"), default="idx")
    s.add_argument("--test-data", help="holdout set (defaults to t10k IDX files or a 0.2 split)")
    s.add_argument("--size", type=int, default=50)
    s.add_argument("--channels", type=int, choices=(1, 3), help="default: the data's own channels")
    s.add_argument("--classes", type=int)
    add_target(s)
    s.add_argument("--k0", type=int, default=4)
    s.add_argument("--epsilon", type=float, default=0.005)
    s.add_argument("--epochs", type=int, default=100)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--batch", type=int, default=128)
    s.add_argument("--val-split", type=float, default=0.2)
    s.add_argument("--holdout-split", type=float, default=0.2)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--skip-infeasible", action="store_true",
                   help="do not train probes that already violate the target")
    s.add_argument("--resume", metavar="RUN_ID")
    s.add_argument("--out", default="runs")
    s.set_defaults(func=cmd_search)

    e = sub.add_parser("estimate", help="estimate RAM/Flash/MACC of an architecture")
    e.add_argument("--arch", help="architecture JSON written by search")
    e.add_argument("--k", type=int)
    e.add_argument("--c", type=int)
    e.add_argument("--size", type=int)
    e.add_argument("--channels", type=int, choices=(1, 3))
    e.add_argument("--classes", type=int)
    e.add_argument("--json", action="store_true")
    add_target(e)
    e.set_defaults(func=cmd_estimate)

    v = sub.add_parser("eval", help="evaluate saved weights on a dataset")
    v.add_argument("--arch", required=True)
    v.add_argument("--weights", required=True)
    v.add_argument("--data", required=True)
    v.add_argument("--format", choices=("idx", "dir"), default="idx")
    v.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, UnknownPreset) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleStart as exc:
        print(f"infeasible start: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, WeightFormatError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        logger.exception("internal failure")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
