"""Self-supervised pretraining loop.

Each step samples a batch from the unlabeled split, selects G series per
sample, builds two augmented views, runs the configured contrastive
framework, and applies one SGD update with momentum, decoupled weight
decay, and a one-cycle learning rate. A linear probe on a held-out
labeled split scores checkpoints at a fixed cadence; the best-scoring
step wins (ties to the earliest).
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import rng as rngmod
from .augment import AugmentConfig, make_view_pair
from .contrastive import (
    SslState,
    byol_loss,
    collapsed,
    momentum_update,
    moco_step,
    nt_xent,
    vicreg_loss,
)
from .data import Dataset, select_group_indices
from .evaluate import ProbeConfig, extract_features, fit_logreg
from .nn.checkpoint import save_checkpoint
from .nn.models import Encoder, EncoderConfig, PredictorHead, ProjectionHead
from .nn.tensor import Tensor, no_grad
from .rng import RngStream


class CollapseError(RuntimeError):
    """Training hit representation collapse or a non-finite loss."""


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 2000
    batch_size: int = 128
    base_lr: float = 2e-3
    peak_lr: float = 5e-2
    final_lr: float = 5e-5
    warmup_frac: float = 0.2
    weight_decay: float = 5e-4
    momentum: float = 0.9
    group_size: int = 4
    eval_every: int = 100
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.warmup_frac < 1:
            raise ValueError("warmup fraction must be in (0, 1)")
        if min(self.base_lr, self.peak_lr, self.final_lr) <= 0:
            raise ValueError("learning rates must be positive")
        if self.total_steps < 1 or self.batch_size < 2:
            raise ValueError("need total_steps >= 1 and batch_size >= 2")


def one_cycle_lr(step: int, cfg: TrainConfig) -> float:
    """Cosine rise base -> peak over the warmup fraction, cosine decay to final."""
    if not 0 <= step < cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps})")
    warm = math.ceil(cfg.warmup_frac * cfg.total_steps)
    if step < warm:
        frac = step / warm
        return cfg.base_lr + (cfg.peak_lr - cfg.base_lr) * 0.5 * (1 - math.cos(math.pi * frac))
    span = cfg.total_steps - 1 - warm
    frac = (step - warm) / span if span else 1.0
    return cfg.final_lr + (cfg.peak_lr - cfg.final_lr) * 0.5 * (1 + math.cos(math.pi * frac))


def decay_excluded(name: str) -> bool:
    """Biases and batch-norm scale/shift take no weight decay."""
    return name.endswith(".bias") or name.endswith(".gamma") or name.endswith(".beta")


class SGD:
    """Momentum SGD with decoupled L2 decay on non-excluded parameters."""

    def __init__(self, params: list[tuple[str, Tensor]], momentum: float = 0.9,
                 weight_decay: float = 0.0):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {name: np.zeros_like(p.data) for name, p in params}

    def step(self, lr: float):
        for name, p in self.params:
            if p.grad is None:
                continue
            v = self.velocity[name]
            v *= self.momentum
            v += p.grad
            p.data -= lr * v
            if self.weight_decay and not decay_excluded(name):
                p.data -= lr * self.weight_decay * p.data

    def zero_grad(self):
        for _, p in self.params:
            p.zero_grad()


def select_checkpoint(history: list[tuple[int, float]]) -> int:
    """Step with the highest validation score; ties go to the earliest step."""
    if not history:
        raise ValueError("empty evaluation history")
    best_step, best_score = history[0]
    for step, score in history[1:]:
        if score > best_score:
            best_step, best_score = step, score
    return best_step


@dataclass
class ModelState:
    """Online networks plus (for BYOL/MoCo) their momentum-updated targets."""

    encoder: Encoder
    projector: ProjectionHead
    predictor: Optional[PredictorHead] = None
    target_encoder: Optional[Encoder] = None
    target_projector: Optional[ProjectionHead] = None

    def online_params(self) -> list[tuple[str, Tensor]]:
        out = self.encoder.named_params() + self.projector.named_params()
        if self.predictor is not None:
            out += self.predictor.named_params()
        return out

    def target_params(self) -> list[tuple[str, Tensor]]:
        out = self.target_encoder.named_params() + self.target_projector.named_params()
        return out

    def checkpoint_blobs(self) -> list[tuple[str, np.ndarray]]:
        blobs = [(name, p.data) for name, p in self.online_params()]
        blobs += [(name, b) for name, b in self.encoder.named_buffers()]
        return blobs


def _copy_network(encoder_cfg: EncoderConfig, src_enc: Encoder, src_proj: ProjectionHead,
                  rng: RngStream) -> tuple[Encoder, ProjectionHead]:
    enc = Encoder(encoder_cfg, rng.child(1))
    proj = ProjectionHead(encoder_cfg.embedding_dim, rng.child(2))
    for (_, dst), (_, src) in zip(enc.named_params() + proj.named_params(),
                                  src_enc.named_params() + src_proj.named_params()):
        dst.data = src.data.copy()
        dst.requires_grad = False
    return enc, proj


def build_model(encoder_cfg: EncoderConfig, ssl_state: SslState, rng: RngStream) -> ModelState:
    encoder = Encoder(encoder_cfg, rng.child(rngmod.INIT, 1))
    projector = ProjectionHead(encoder_cfg.embedding_dim, rng.child(rngmod.INIT, 2))
    model = ModelState(encoder, projector)
    if ssl_state.framework == "byol":
        model.predictor = PredictorHead(projector.out_dim, rng.child(rngmod.INIT, 3))
    if ssl_state.framework in ("byol", "moco"):
        model.target_encoder, model.target_projector = _copy_network(
            encoder_cfg, encoder, projector, rng.child(rngmod.INIT, 4)
        )
    return model


def _target_project(model: ModelState, views: np.ndarray) -> np.ndarray:
    with no_grad():
        _, h = model.target_encoder.encode(views, training=True)
        z = model.target_projector(h)
    return z.data


def framework_loss(model: ModelState, ssl_state: SslState, v1: np.ndarray, v2: np.ndarray) -> Tensor:
    """Forward both views and evaluate the configured contrastive objective."""
    fw = ssl_state.framework
    if fw in ("simclr", "vicreg"):
        _, h1 = model.encoder.encode(v1, training=True)
        _, h2 = model.encoder.encode(v2, training=True)
        z1, z2 = model.projector(h1), model.projector(h2)
        if fw == "simclr":
            return nt_xent(z1, z2, ssl_state.temperature)
        return vicreg_loss(
            z1, z2, ssl_state.vicreg_lambda, ssl_state.vicreg_mu,
            ssl_state.vicreg_nu, ssl_state.vicreg_gamma, ssl_state.vicreg_eps,
        )
    if fw == "byol":
        _, h1 = model.encoder.encode(v1, training=True)
        _, h2 = model.encoder.encode(v2, training=True)
        p1 = model.predictor(model.projector(h1))
        p2 = model.predictor(model.projector(h2))
        t2 = Tensor(_target_project(model, v2))
        t1 = Tensor(_target_project(model, v1))
        return byol_loss(p1, t2, p2, t1)
    # moco
    _, h1 = model.encoder.encode(v1, training=True)
    q = model.projector(h1)
    k = _target_project(model, v2)
    return moco_step(q, k, ssl_state)


def assemble_views(
    ds: Dataset, indices: np.ndarray, epoch: int, cfg: TrainConfig,
    aug: AugmentConfig, root: RngStream,
) -> tuple[np.ndarray, np.ndarray]:
    """Group selection and augmentation for one batch, keyed by sample index."""
    n_ts = ds.shape[1]
    g = min(cfg.group_size, n_ts)
    v1 = np.empty((len(indices), g) + ds.shape[2:], dtype=ds.values.dtype)
    v2 = np.empty_like(v1)
    for row, i in enumerate(indices):
        i = int(i)
        gidx = select_group_indices(n_ts, g, root.child(rngmod.GROUP_SELECT, epoch, i))
        group = ds.values[i, gidx]
        v1[row], v2[row] = make_view_pair(group, aug, root.child(rngmod.AUGMENT, epoch, i))
    return v1, v2


def _val_probe_score(encoder: Encoder, val_ds: Dataset, probe_cfg: ProbeConfig) -> tuple[float, np.ndarray]:
    """Accuracy of a sample-level probe, fit on even / scored on odd halves."""
    feats = extract_features(val_ds, encoder).mean(axis=1)  # (N, D)
    labels = val_ds.labels.astype(np.int64)
    order = np.argsort(labels, kind="stable")
    fit_idx, score_idx = order[0::2], order[1::2]
    model = fit_logreg(feats[fit_idx], labels[fit_idx], probe_cfg)
    acc = float((model.predict(feats[score_idx].astype(np.float64)) == labels[score_idx]).mean())
    return acc, feats


@dataclass
class PretrainResult:
    run_dir: Path
    best_step: int
    best_score: float
    history: list[tuple[int, float]]
    final_loss: float
    checkpoint: Path


def pretrain(
    run_dir,
    unlabeled: Dataset,
    val: Dataset,
    cfg: TrainConfig,
    aug: AugmentConfig,
    ssl_state: SslState,
    encoder_cfg: EncoderConfig,
    probe_cfg: ProbeConfig = ProbeConfig(),
    config_text: Optional[str] = None,
    log_every: int = 0,
) -> PretrainResult:
    """Run the full pretraining protocol and write run artifacts.

    Artifacts: config snapshot, per-step loss CSV, a checkpoint per
    evaluation step, and best.ckpt plus best.json for the selected one.
    """
    run_dir = Path(run_dir)
    (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    if config_text is not None:
        (run_dir / "config.resolved.ini").write_text(config_text)

    root = RngStream(cfg.seed)
    model = build_model(encoder_cfg, ssl_state, root)
    opt = SGD(model.online_params(), momentum=cfg.momentum, weight_decay=cfg.weight_decay)

    n = unlabeled.n_samples
    order = np.empty(0, dtype=np.int64)
    epoch = -1
    cursor = 0
    history: list[tuple[int, float]] = []
    ckpt_meta = {
        "encoder": encoder_cfg.to_dict(),
        "framework": ssl_state.framework,
        "group_size": cfg.group_size,
    }
    loss_rows = []
    final_loss = math.nan
    for step in range(cfg.total_steps):
        if cursor + cfg.batch_size > len(order):
            epoch += 1
            order = root.child(rngmod.DATA_ORDER, epoch).generator().permutation(n)
            cursor = 0
        indices = order[cursor : cursor + cfg.batch_size]
        cursor += cfg.batch_size
        v1, v2 = assemble_views(unlabeled, indices, epoch, cfg, aug, root)
        loss = framework_loss(model, ssl_state, v1, v2)
        value = float(loss.data)
        if not math.isfinite(value):
            raise CollapseError(f"non-finite loss {value} at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step(one_cycle_lr(step, cfg))
        if ssl_state.framework in ("byol", "moco"):
            momentum_update(
                model.encoder.named_params() + model.projector.named_params(),
                model.target_params(),
                ssl_state.momentum,
            )
        loss_rows.append((step, value, one_cycle_lr(step, cfg)))
        final_loss = value
        if log_every and step % log_every == 0:
            print(f"step {step}: loss {value:.4f}", flush=True)

        is_eval = (step + 1) % cfg.eval_every == 0 or step == cfg.total_steps - 1
        if is_eval:
            score, h_val = _val_probe_score(model.encoder, val, probe_cfg)
            if collapsed(h_val, ssl_state.collapse_std):
                _write_losses(run_dir, loss_rows)
                raise CollapseError(
                    f"representation collapse at step {step + 1}: "
                    f"mean per-dimension std of validation embeddings "
                    f"{float(h_val.std(axis=0).mean()):.2e} < {ssl_state.collapse_std:g}"
                )
            if not history or history[-1][0] != step + 1:
                history.append((step + 1, score))
                save_checkpoint(
                    run_dir / "checkpoints" / f"step_{step + 1:06d}.ckpt",
                    ckpt_meta,
                    model.checkpoint_blobs(),
                )

    _write_losses(run_dir, loss_rows)
    best_step = select_checkpoint(history)
    best_score = dict(history)[best_step]
    best_src = run_dir / "checkpoints" / f"step_{best_step:06d}.ckpt"
    best_dst = run_dir / "best.ckpt"
    shutil.copyfile(best_src, best_dst)
    digest = hashlib.sha256(best_dst.read_bytes()).hexdigest()
    (run_dir / "best.json").write_text(
        json.dumps(
            {"step": best_step, "score": best_score,
             "file": best_src.name, "sha256": digest},
            indent=2,
        )
    )
    return PretrainResult(run_dir, best_step, best_score, history, final_loss, best_dst)


def _write_losses(run_dir: Path, rows) -> None:
    with open(run_dir / "losses.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "lr"])
        writer.writerows(rows)


def load_encoder(ckpt_path) -> tuple[Encoder, dict]:
    """Rebuild an eval-ready encoder from a checkpoint file."""
    from .nn.checkpoint import load_checkpoint

    meta, blobs = load_checkpoint(ckpt_path)
    encoder_cfg = EncoderConfig.from_dict(meta["encoder"])
    encoder = Encoder(encoder_cfg, RngStream(0))
    for name, p in encoder.named_params():
        p.data = blobs[name].astype(p.data.dtype)
    for i, block in enumerate(encoder.blocks):
        for lname, layer in block.sublayers():
            for bname, _ in layer.buffers():
                key = f"encoder.block{i + 1}.{lname}.{bname}"
                layer.set_buffer(bname, blobs[key])
    return encoder, meta
