"""Command-line harness tying data generation, search, training, and
evaluation into reproducible experiments.

Subcommands: ``gen-data``, ``optimize``, ``train``, ``evaluate``, ``report``.
Global flags (before the subcommand): ``--config``, ``--seed``, ``--out``,
``--threads``, ``--verbose``. Exit codes: 0 success, 2 usage/config error,
3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bat import decode_position, optimize
from .config import ExperimentConfig, load_config
from .data import augment, generate_dataset, load_split_samples, save_dataset, split_dataset
from .errors import (
    BatsegError,
    CheckpointError,
    DataError,
    FitnessError,
    FormatError,
    GenerationError,
    InvalidConfigError,
    InvalidInputError,
    InvalidVolumeError,
    NumericError,
    ShapeError,
    UndefinedMetricError,
)
from .fsio import atomic_write_bytes, atomic_write_text
from .metrics import ConfusionCounts, dice_per_sample, roc_auc, threshold_sweep
from .reports import (
    REPORT_HEADER,
    dice_summary_dict,
    format_report_text,
    summary_row,
    write_curves_csv,
    write_dice_csv,
    write_pgm,
    write_roc_csv,
    write_sweep_csv,
)
from .runlog import RunLogWriter, find_event, read_runlog
from .seeding import derive_seed
from .training import Hyperparams, train
from .unet import forward_with_trace, init_model, load_checkpoint, save_checkpoint
from .volume import MaskVolume

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

log = logging.getLogger("batseg")


class UsageError(BatsegError):
    """Command invoked with missing or inconsistent inputs."""


def _dataset_dir(cfg: ExperimentConfig, override: str | None) -> Path:
    d = Path(override) if override else Path(cfg.out_dir) / "dataset"
    if not (d / "manifest.json").exists():
        raise UsageError(f"no dataset at {d}; run `batseg gen-data` first")
    return d


def _augment_fn(cfg: ExperimentConfig):
    return augment if cfg.augment else None


def cmd_gen_data(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    ds_dir = out / "dataset"
    writer = RunLogWriter(out / "gen-data.runlog.jsonl")
    writer.event("config", config=cfg.to_dict())
    samples = generate_dataset(cfg.synth)
    split = split_dataset(
        [s.id for s in samples], ratio=1.0 - cfg.val_ratio, seed=derive_seed(cfg.seed, "split")
    )
    writer.mark("generate")
    save_dataset(ds_dir, samples, cfg.synth, split)
    writer.mark("write")
    writer.artifact("dataset", ds_dir)
    writer.event(
        "dataset",
        num_samples=len(samples),
        target_shape=list(cfg.synth.target_shape),
        train=len(split.train),
        val=len(split.val),
    )
    writer.close()
    shape = "x".join(str(s) for s in cfg.synth.target_shape)
    print(f"wrote {len(samples)} samples ({2 * len(samples)} volumes) of shape {shape} to {ds_dir}")
    print(f"split: {len(split.train)} train / {len(split.val)} val")
    return ds_dir


def _proxy_fitness(cfg: ExperimentConfig, train_samples, val_samples):
    """Fitness = validation loss after a short proxy training run."""

    def fitness(position: np.ndarray, seed: int) -> float:
        hp = decode_position(position, cfg.bat.bounds)
        model = init_model(cfg.unet, derive_seed(seed, "proxy-init"))
        _, logs = train(
            model,
            train_samples,
            val_samples,
            hp,
            epochs=cfg.proxy_epochs,
            seed=derive_seed(seed, "proxy-shuffle"),
            augment_fn=_augment_fn(cfg),
        )
        return logs[-1].val_loss

    return fitness


def cmd_optimize(cfg: ExperimentConfig, dataset: str | None) -> Hyperparams:
    ds_dir = _dataset_dir(cfg, dataset)
    out = Path(cfg.out_dir)
    train_samples, val_samples, _ = load_split_samples(ds_dir)
    writer = RunLogWriter(out / "optimize.runlog.jsonl")
    writer.event("config", config=cfg.to_dict())
    best_hp, history = optimize(cfg.bat, _proxy_fitness(cfg, train_samples, val_samples))
    writer.mark("search")
    for ev in history.evals:
        writer.event(
            "bat_eval",
            iteration=ev.iteration,
            bat=ev.bat,
            position=list(ev.position),
            learning_rate=ev.learning_rate,
            batch_size=ev.batch_size,
            fitness=ev.fitness,
            seed=ev.seed,
            memoized=ev.memoized,
        )
    for it in history.iterations:
        writer.event(
            "bat_iteration",
            iteration=it.iteration,
            best_position=[float(v) for v in it.best_position],
            best_fitness=it.best_fitness,
            eval_count=it.eval_count,
        )
    summary = {
        "learning_rate": best_hp.learning_rate,
        "batch_size": best_hp.batch_size,
        "position": [float(v) for v in history.best_position],
        "fitness": history.best_fitness,
        "eval_count": history.eval_count,
        "stopped_early": history.stopped_early,
    }
    writer.event("summary", **summary)
    best_path = out / "best_hyperparams.json"
    atomic_write_text(best_path, json.dumps(summary, sort_keys=True, indent=1) + "\n")
    writer.artifact("best_hyperparams", best_path)
    writer.close()
    print(
        f"best hyperparameters: learning_rate={best_hp.learning_rate:.6g} "
        f"batch_size={best_hp.batch_size} "
        f"(fitness {history.best_fitness:.6g}, {history.eval_count} evaluations)"
    )
    return best_hp


def _resolve_hyperparams(cfg: ExperimentConfig, lr, batch_size) -> Hyperparams:
    if (lr is None) != (batch_size is None):
        raise UsageError("--lr and --batch-size must be given together")
    if lr is not None:
        return Hyperparams(learning_rate=lr, batch_size=batch_size)
    best_path = Path(cfg.out_dir) / "best_hyperparams.json"
    if not best_path.exists():
        raise UsageError(
            "no hyperparameters: pass --lr/--batch-size or run `batseg optimize` first"
        )
    doc = json.loads(best_path.read_text())
    return Hyperparams(learning_rate=float(doc["learning_rate"]), batch_size=int(doc["batch_size"]))


def cmd_train(cfg: ExperimentConfig, dataset: str | None, hp: Hyperparams) -> Path:
    ds_dir = _dataset_dir(cfg, dataset)
    out = Path(cfg.out_dir)
    train_samples, val_samples, _ = load_split_samples(ds_dir)
    writer = RunLogWriter(out / "train.runlog.jsonl")
    writer.event("config", config=cfg.to_dict())
    writer.event(
        "hyperparams", learning_rate=hp.learning_rate, batch_size=hp.batch_size, epochs=cfg.epochs
    )
    model = init_model(cfg.unet, derive_seed(cfg.seed, "model-init"))
    model, logs = train(
        model,
        train_samples,
        val_samples,
        hp,
        epochs=cfg.epochs,
        seed=derive_seed(cfg.seed, "train-shuffle"),
        augment_fn=_augment_fn(cfg),
    )
    writer.mark("train")
    for el in logs:
        writer.event(
            "epoch",
            epoch=el.epoch,
            train_loss=el.train_loss,
            train_acc=el.train_acc,
            val_loss=el.val_loss,
            val_acc=el.val_acc,
        )
    ckpt_path = out / "unet.ckpt"
    atomic_write_bytes(ckpt_path, save_checkpoint(model))
    curves_path = out / "curves.csv"
    write_curves_csv(curves_path, logs)
    writer.artifact("checkpoint", ckpt_path)
    writer.artifact("curves", curves_path)
    if logs:
        writer.event(
            "summary",
            final_train_loss=logs[-1].train_loss,
            final_val_loss=logs[-1].val_loss,
            final_val_acc=logs[-1].val_acc,
            epochs=cfg.epochs,
        )
    writer.close()
    if logs:
        print(
            f"trained {cfg.epochs} epochs: final val_loss={logs[-1].val_loss:.6g} "
            f"val_acc={logs[-1].val_acc:.6g}"
        )
    else:
        print("trained 0 epochs: model left at initialization")
    print(f"checkpoint: {ckpt_path}")
    return ckpt_path


def select_operating_point(entries):
    """Argmax-F1 sweep entry; ties resolve to the lowest threshold."""
    return max(entries, key=lambda e: (e.metrics.f1, -e.threshold))


def cmd_evaluate(
    cfg: ExperimentConfig,
    dataset: str | None,
    checkpoint: str | None,
    thresholds: list[float] | None = None,
) -> dict:
    ds_dir = _dataset_dir(cfg, dataset)
    out = Path(cfg.out_dir)
    grid = tuple(thresholds) if thresholds else cfg.thresholds
    ckpt_path = Path(checkpoint) if checkpoint else out / "unet.ckpt"
    if not ckpt_path.exists():
        raise UsageError(f"no checkpoint at {ckpt_path}; run `batseg train` first")
    model = load_checkpoint(ckpt_path.read_bytes())
    _, val_samples, _ = load_split_samples(ds_dir)
    sample_shape = val_samples[0].image.shape
    if model.config.input_shape != sample_shape:
        raise CheckpointError(
            f"checkpoint expects input {tuple(model.config.input_shape)} but dataset "
            f"samples are {tuple(sample_shape)}"
        )

    writer = RunLogWriter(out / "evaluate.runlog.jsonl")
    writer.event("config", config=cfg.to_dict())
    probs = []
    for s in val_samples:
        p, _ = forward_with_trace(model, s.image.data)
        probs.append(p[0])
    writer.mark("forward")
    pooled_p = np.concatenate([p.ravel() for p in probs])
    pooled_t = np.concatenate([s.mask.data.ravel() for s in val_samples])

    entries = threshold_sweep(pooled_p, pooled_t, grid)
    best_entry = select_operating_point(entries)
    curve = roc_auc(pooled_p, pooled_t)

    pred_masks = [
        MaskVolume(s.mask.shape, (p >= best_entry.threshold).astype(np.uint8))
        for p, s in zip(probs, val_samples)
    ]
    truth_masks = [s.mask for s in val_samples]
    dice = dice_per_sample(pred_masks, truth_masks)
    writer.mark("metrics")

    write_sweep_csv(out / "sweep.csv", entries)
    write_roc_csv(out / "roc.csv", curve)
    write_dice_csv(out / "dice.csv", [s.id for s in val_samples], dice.dice)
    atomic_write_text(
        out / "dice_summary.json", json.dumps(dice_summary_dict(dice), sort_keys=True, indent=1) + "\n"
    )
    c = best_entry.counts
    confusion_doc = {
        "threshold": best_entry.threshold,
        "tp": c.tp,
        "tn": c.tn,
        "fp": c.fp,
        "fn": c.fn,
        "metrics": best_entry.metrics.to_dict(),
    }
    atomic_write_text(out / "confusion.json", json.dumps(confusion_doc, sort_keys=True, indent=1) + "\n")

    heat_dir = out / "heatmaps"
    for s, p in zip(val_samples, probs):
        mid = s.image.shape.d // 2
        write_pgm(heat_dir / f"{s.id}.input.pgm", s.image.data[0, mid])
        write_pgm(heat_dir / f"{s.id}.prob.pgm", p[mid])
        write_pgm(heat_dir / f"{s.id}.mask.pgm", s.mask.data[mid].astype(np.float64))
    writer.mark("write")

    for name in ("sweep.csv", "roc.csv", "dice.csv", "dice_summary.json", "confusion.json"):
        writer.artifact(name.split(".")[0], out / name)
    writer.artifact("heatmaps", heat_dir)
    summary = {
        "best_threshold": best_entry.threshold,
        "counts": {"tp": c.tp, "tn": c.tn, "fp": c.fp, "fn": c.fn},
        "auc": curve.auc,
        "dice": dice_summary_dict(dice),
        "n_val": len(val_samples),
    }
    writer.event("summary", **summary)
    writer.close()
    print(
        f"evaluated {len(val_samples)} validation samples: best threshold "
        f"{best_entry.threshold:g} (f1 {best_entry.metrics.f1:.4f}), auc {curve.auc:.4f}, "
        f"mean dice {np.mean(dice.dice):.4f}"
    )
    return summary


def cmd_report(cfg: ExperimentConfig, runlog: str | None) -> Path:
    out = Path(cfg.out_dir)
    runlog_path = Path(runlog) if runlog else out / "evaluate.runlog.jsonl"
    if not runlog_path.exists():
        raise UsageError(f"no run log at {runlog_path}; run `batseg evaluate` first")
    events = read_runlog(runlog_path)
    summary = find_event(events, "summary")
    if summary is None or "counts" not in summary or "auc" not in summary:
        raise UsageError(f"run log {runlog_path} has no evaluation summary")
    counts = ConfusionCounts(**{k: int(v) for k, v in summary["counts"].items()})
    m, row = summary_row(counts, float(summary["auc"]))
    report_path = out / "report.csv"
    atomic_write_text(report_path, REPORT_HEADER + "\n" + row + "\n")
    print(format_report_text(m, float(summary["auc"])))
    print(f"report: {report_path}")
    return report_path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="batseg",
        description="3D U-Net segmentation workbench with Bat Algorithm hyperparameter tuning",
    )
    parser.add_argument("--config", metavar="PATH", help="experiment config JSON")
    parser.add_argument("--seed", type=int, metavar="U64", help="master seed (overrides config)")
    parser.add_argument("--out", metavar="DIR", help="output directory (overrides config)")
    parser.add_argument(
        "--threads",
        type=int,
        metavar="N",
        help="worker count; accepted and recorded, current kernels are single-threaded",
    )
    parser.add_argument("--verbose", action="store_true", help="debug logging to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    sub.add_parser("gen-data", help="generate the synthetic dataset and manifest")

    p_opt = sub.add_parser("optimize", help="tune learning rate and batch size")
    p_opt.add_argument("--dataset", metavar="DIR", help="dataset directory")

    p_train = sub.add_parser("train", help="train the final model")
    p_train.add_argument("--dataset", metavar="DIR")
    p_train.add_argument("--lr", type=float, help="learning rate (with --batch-size)")
    p_train.add_argument("--batch-size", type=int, help="batch size (with --lr)")

    p_eval = sub.add_parser("evaluate", help="emit metric tables, curves, heatmaps")
    p_eval.add_argument("--dataset", metavar="DIR")
    p_eval.add_argument("--checkpoint", metavar="PATH")
    p_eval.add_argument("--thresholds", metavar="T", type=float, nargs="+", help="sweep grid override")

    p_rep = sub.add_parser("report", help="one-row summary table from a run log")
    p_rep.add_argument("--runlog", metavar="PATH")
    return parser


def _run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, seed=args.seed, out_dir=args.out, threads=args.threads)
    log.debug("resolved config: %s", cfg.to_dict())
    if args.command == "gen-data":
        cmd_gen_data(cfg)
    elif args.command == "optimize":
        cmd_optimize(cfg, args.dataset)
    elif args.command == "train":
        hp = _resolve_hyperparams(cfg, args.lr, args.batch_size)
        cmd_train(cfg, args.dataset, hp)
    elif args.command == "evaluate":
        cmd_evaluate(cfg, args.dataset, args.checkpoint, args.thresholds)
    elif args.command == "report":
        cmd_report(cfg, args.runlog)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _run(args)
    except (UsageError, InvalidConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (
        DataError,
        FormatError,
        GenerationError,
        InvalidVolumeError,
        CheckpointError,
        InvalidInputError,
        ShapeError,
        OSError,
    ) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FitnessError, UndefinedMetricError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
