"""Command-line surface: synth, pretrain, eval, sweep, augment-preview, report.

Exit codes: 0 success, 1 usage or configuration error, 2 I/O or format
error, 3 numerical failure (collapse or divergence). Commands refuse to
overwrite existing outputs unless --force is given, so a rerun with the
same inputs and seed is idempotent.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .augment import AugmentConfig, make_view_pair
from .config import ConfigError, RunConfig, config_hash, parse_config, resolved_text
from .data import DataFormatError, ValidationError, load_dataset, save_dataset
from .evaluate import (
    extract_features,
    finetune,
    label_efficiency_sweep,
    majority_vote,
    metrics,
    confusion_matrix,
    probe_accuracy,
    raw_features,
    summarize_sweep,
)
from .nn.checkpoint import CheckpointError
from .nn.models import ClassifierHead, EncoderConfig
from .nn.tensor import Tensor, no_grad
from .rng import RngStream
from .synth import generate
from .train import CollapseError, TrainConfig, load_encoder, pretrain

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERIC = 3

SWEEP_ROW_ORDER = ("raw", "jittering", "resizing", "masking", "resampling")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _guard_outputs(paths, force: bool):
    for p in paths:
        if Path(p).exists() and not force:
            raise ConfigError(f"refusing to overwrite {p} (use --force)")


def max_workers() -> int:
    raw = os.environ.get("TSCL_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


# -- synth ---------------------------------------------------------------


def cmd_synth(args) -> int:
    out = Path(args.out)
    paths = {
        "unlabeled": Path(args.unlabeled) if args.unlabeled else out / "unlabeled.tscl",
        "train": Path(args.train) if args.train else out / "train.tscl",
        "val": Path(args.val) if args.val else out / "val.tscl",
        "test": Path(args.test) if args.test else out / "test.tscl",
    }
    if len({str(p) for p in paths.values()}) != 4:
        raise ConfigError(f"output paths overlap: {sorted(str(p) for p in paths.values())}")
    _guard_outputs(paths.values(), args.force)
    rng = RngStream(args.seed)
    counts = {
        "unlabeled": args.unlabeled_per_class,
        "train": args.train_per_class,
        "val": args.val_per_class,
        "test": args.test_per_class,
    }
    offset = 0
    for split in ("unlabeled", "train", "val", "test"):
        ds = generate(
            args.classes, counts[split], args.n_ts, args.t, args.c,
            args.noise, args.dropout, rng,
            split_tag="train" if split == "unlabeled" else split,
            sample_offset=offset,
        )
        offset += counts[split]
        if split == "unlabeled":
            from .data import Dataset

            ds = Dataset(ds.values, None, ds.n_classes, "unlabeled")
        save_dataset(ds, paths[split])
        print(f"wrote {paths[split]} shape={ds.shape}")
    return EXIT_OK


# -- pretrain --------------------------------------------------------------


def _load_run_config(args) -> RunConfig:
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        raise DataFormatError(f"cannot read config: {exc}") from exc
    cfg = parse_config(text)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        cfg.train = TrainConfig(**{**cfg.train.__dict__, "seed": args.seed})
    if getattr(args, "out", None):
        cfg.out = args.out
    return cfg


def cmd_pretrain(args) -> int:
    cfg = _load_run_config(args)
    run_dir = Path(cfg.out)
    _guard_outputs([run_dir / "best.ckpt"], args.force)
    unlabeled = load_dataset(cfg.data["unlabeled"])
    val = load_dataset(cfg.data["val"], split_tag="val")
    encoder_cfg = EncoderConfig(
        in_channels=unlabeled.shape[3],
        block_filters=cfg.block_filters,
        kernel_sizes=cfg.kernel_sizes,
        embedding_dim=cfg.block_filters[-1],
    )
    result = pretrain(
        run_dir,
        unlabeled,
        val,
        cfg.train,
        cfg.augment,
        cfg.ssl_state(),
        encoder_cfg,
        probe_cfg=cfg.probe,
        config_text=resolved_text(cfg),
        log_every=args.log_every,
    )
    print(
        f"pretraining done: best step {result.best_step} "
        f"(val probe {result.best_score:.4f}) -> {result.checkpoint}"
    )
    return EXIT_OK


# -- eval ----------------------------------------------------------------


def cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    encoder, meta = load_encoder(args.checkpoint)
    test = load_dataset(cfg.data["test"], split_tag="test")
    train = load_dataset(cfg.data["train"], split_tag="train")
    enc_channels = encoder.config.in_channels
    if enc_channels != test.shape[3]:
        raise ConfigError(
            f"checkpoint expects {enc_channels} channels but dataset "
            f"{cfg.data['test']} has shape {test.shape}"
        )
    if args.mode == "linear":
        train_feats = extract_features(train, encoder)
        test_feats = extract_features(test, encoder)
        oa, kappa, f1 = probe_accuracy(
            train_feats, train.labels.astype(np.int64),
            test_feats, test.labels.astype(np.int64),
            test.n_classes, cfg.probe,
        )
    else:
        val = load_dataset(cfg.data["val"], split_tag="val")
        head = ClassifierHead(
            encoder.config.embedding_dim, train.n_classes, RngStream(cfg.seed, rngmod.INIT)
        )
        # per-series training keeps the head consistent with the per-series
        # voting used at evaluation time
        result = finetune(train, val, encoder, head, RngStream(cfg.seed), group_size=1)
        print(
            f"finetune phases (head, full) = {result.phase_epochs}, "
            f"best epoch {result.best_epoch} val acc {result.best_val_accuracy:.4f}"
        )
        feats = extract_features(test, encoder)
        n, n_ts, d = feats.shape
        with no_grad():
            logits = head(Tensor(feats.reshape(n * n_ts, d)), training=False).data
        proba = np.exp(logits - logits.max(axis=1, keepdims=True))
        proba /= proba.sum(axis=1, keepdims=True)
        voted = majority_vote(
            logits.argmax(axis=1).reshape(n, n_ts), proba.reshape(n, n_ts, -1)
        )
        oa, kappa, f1 = metrics(
            confusion_matrix(test.labels.astype(np.int64), voted, test.n_classes)
        )
    payload = {
        "oa": oa,
        "kappa": kappa,
        "macro_f1": f1,
        "mode": args.mode,
        "config_hash": config_hash(resolved_text(cfg)),
        "checkpoint": str(args.checkpoint),
    }
    print(json.dumps(payload, indent=2))
    if args.out:
        _guard_outputs([args.out], args.force)
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(payload, indent=2))
    return EXIT_OK


# -- sweep ---------------------------------------------------------------


def cmd_sweep(args) -> int:
    cfg = _load_run_config(args)
    out_dir = Path(args.out or cfg.out)
    csv_path = out_dir / "sweep.csv"
    json_path = out_dir / "sweep_summary.json"
    _guard_outputs([csv_path, json_path], args.force)
    train = load_dataset(cfg.data["train"], split_tag="train")
    test = load_dataset(cfg.data["test"], split_tag="test")

    representations: dict[str, tuple[np.ndarray, np.ndarray]] = {
        "raw": (raw_features(train), raw_features(test))
    }
    for strategy in SWEEP_ROW_ORDER[1:]:
        if strategy not in cfg.sweep_checkpoints:
            continue
        path = cfg.sweep_checkpoints[strategy]
        if not Path(path).exists():
            raise DataFormatError(f"missing checkpoint for strategy {strategy!r}: {path}")
        encoder, _ = load_encoder(path)
        representations[strategy] = (
            extract_features(train, encoder),
            extract_features(test, encoder),
        )
    unknown = set(cfg.sweep_checkpoints) - set(SWEEP_ROW_ORDER)
    if unknown:
        raise ConfigError(f"unknown sweep strategies: {sorted(unknown)}")

    rows = label_efficiency_sweep(
        representations,
        train.labels.astype(np.int64),
        test.labels.astype(np.int64),
        train.n_classes,
        list(cfg.samples_per_class),
        cfg.repeats,
        RngStream(cfg.seed),
        cfg.probe,
        workers=max_workers(),
    )
    order = {s: i for i, s in enumerate(SWEEP_ROW_ORDER)}
    rows.sort(key=lambda r: (order[r["strategy"]], r["k"], r["repeat"]))
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["strategy", "k", "repeat", "oa", "kappa", "f1"])
        writer.writeheader()
        writer.writerows(rows)
    summary = summarize_sweep(rows)
    json_path.write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary, indent=2))
    return EXIT_OK


# -- augment preview ---------------------------------------------------------


def cmd_augment_preview(args) -> int:
    ds = load_dataset(args.data)
    if not 0 <= args.sample < ds.n_samples:
        raise ConfigError(f"sample index {args.sample} outside [0, {ds.n_samples})")
    _guard_outputs([args.out], args.force)
    aug = AugmentConfig(strategy=args.strategy)
    group = ds.values[args.sample]
    v1, v2 = make_view_pair(group, aug, RngStream(args.seed, rngmod.AUGMENT))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["series", "timestep", "channel", "original", "view1", "view2"])
        n_ts, t, c = group.shape
        for s in range(n_ts):
            for ts in range(t):
                for ch in range(c):
                    writer.writerow(
                        [s, ts, ch,
                         repr(float(group[s, ts, ch])),
                         repr(float(v1[s, ts, ch])),
                         repr(float(v2[s, ts, ch]))]
                    )
    print(f"wrote {args.out} ({n_ts * t * c} rows, strategy={args.strategy})")
    return EXIT_OK


# -- report ----------------------------------------------------------------


def cmd_report(args) -> int:
    run_dir = Path(args.run)
    best = run_dir / "best.json"
    losses = run_dir / "losses.csv"
    if not best.exists() or not losses.exists():
        raise DataFormatError(f"{run_dir} is not a completed run directory")
    info = json.loads(best.read_text())
    with open(losses) as fh:
        rows = list(csv.DictReader(fh))
    cfg_file = run_dir / "config.resolved.ini"
    report = {
        "run": str(run_dir),
        "steps": len(rows),
        "final_loss": float(rows[-1]["loss"]) if rows else None,
        "best_step": info["step"],
        "best_val_score": info["score"],
        "best_sha256": info["sha256"],
        "config_hash": config_hash(cfg_file.read_text()) if cfg_file.exists() else None,
    }
    print(json.dumps(report, indent=2))
    return EXIT_OK


# -- entry point ---------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="tscl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic dataset splits")
    p.add_argument("--out", default="data", help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--unlabeled-per-class", type=int, default=200)
    p.add_argument("--train-per-class", type=int, default=60)
    p.add_argument("--val-per-class", type=int, default=10)
    p.add_argument("--test-per-class", type=int, default=20)
    p.add_argument("--n-ts", type=int, default=8)
    p.add_argument("--t", type=int, default=60)
    p.add_argument("--c", type=int, default=12)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--dropout", type=float, default=0.03)
    p.add_argument("--unlabeled")
    p.add_argument("--train")
    p.add_argument("--val")
    p.add_argument("--test")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="self-supervised pretraining")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--force", action="store_true")
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", choices=("linear", "finetune"), required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="label-efficiency sweep over strategies")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("augment-preview", help="dump original and views to CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strategy", default="resampling")
    p.add_argument("--sample", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_augment_preview)

    p = sub.add_parser("report", help="summarize a run directory")
    p.add_argument("--run", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CollapseError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataFormatError, CheckpointError, ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
