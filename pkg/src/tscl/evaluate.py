"""Downstream evaluation: probes, finetuning, voting, and metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.optimize

from . import rng as rngmod
from .data import Dataset
from .nn.models import ClassifierHead, Encoder
from .nn.tensor import Tensor, no_grad
from .rng import RngStream


@dataclass(frozen=True)
class ProbeConfig:
    c: float = 1.0
    tol: float = 1e-5
    max_iter: int = 2000

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("inverse regularization C must be > 0")


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # (K, K), rows = true class, cols = predicted

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError(f"confusion matrix must be square, got {c.shape}")
        if (c < 0).any():
            raise ValueError("confusion matrix counts must be >= 0")
        object.__setattr__(self, "counts", c)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray, n_classes: int) -> ConfusionMatrix:
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (np.asarray(y_true, dtype=int), np.asarray(y_pred, dtype=int)), 1)
    return ConfusionMatrix(counts)


def metrics(cm: ConfusionMatrix) -> tuple[float, float, float]:
    """Overall accuracy, Cohen's kappa, macro-F1 (no-support classes count 0)."""
    total = cm.total
    if total == 0:
        raise ValueError("empty confusion matrix")
    counts = cm.counts.astype(np.float64)
    oa = np.trace(counts) / total
    row = counts.sum(axis=1)
    col = counts.sum(axis=0)
    p_e = float((row * col).sum()) / total**2
    if p_e == 1.0:  # degenerate single-cell mass; agreement is all-or-nothing
        kappa = 1.0 if oa == 1.0 else 0.0
    else:
        kappa = (oa - p_e) / (1.0 - p_e)
    diag = np.diag(counts)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(col > 0, diag / col, 0.0)
        recall = np.where(row > 0, diag / row, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)
    return float(oa), float(kappa), float(f1.mean())


def majority_vote(
    per_series_preds: np.ndarray, per_series_probs: Optional[np.ndarray] = None
) -> np.ndarray:
    """Plurality class per sample over its series' predictions.

    Ties go to the class with the highest summed predicted probability,
    then to the lowest class index.
    """
    preds = np.asarray(per_series_preds)
    n, n_ts = preds.shape
    n_classes = int(preds.max()) + 1
    if per_series_probs is not None:
        n_classes = max(n_classes, per_series_probs.shape[-1])
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        votes = np.bincount(preds[i], minlength=n_classes)
        top = votes.max()
        tied = np.flatnonzero(votes == top)
        if len(tied) > 1 and per_series_probs is not None:
            summed = per_series_probs[i].sum(axis=0)[tied]
            tied = tied[summed == summed.max()]
        out[i] = tied[0]
    return out


# -- frozen-feature probe --------------------------------------------------


def extract_features(ds: Dataset, encoder: Encoder, batch_series: int = 1024) -> np.ndarray:
    """Embed every series independently -> (N, N_ts, D) float32."""
    n, n_ts, t, c = ds.shape
    flat = ds.values.reshape(n * n_ts, 1, t, c)
    dim = encoder.config.embedding_dim
    out = np.empty((n * n_ts, dim), dtype=np.float32)
    with no_grad():
        for lo in range(0, n * n_ts, batch_series):
            hi = min(lo + batch_series, n * n_ts)
            _, h = encoder.encode(flat[lo:hi], training=False)
            out[lo:hi] = h.data
    return out.reshape(n, n_ts, dim)


@dataclass
class LinearModel:
    weights: np.ndarray  # (D, K)
    bias: np.ndarray  # (K,)
    converged: bool
    n_iter: int

    def logits(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weights + self.bias

    def proba(self, x: np.ndarray) -> np.ndarray:
        z = self.logits(x)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.logits(x).argmax(axis=1)


def fit_logreg(features: np.ndarray, labels: np.ndarray, cfg: ProbeConfig = ProbeConfig()) -> LinearModel:
    """Multinomial softmax regression on frozen features.

    Minimizes mean cross entropy + ||W||^2 / (2 C M) with L-BFGS from a
    zero start; converged when the gradient max-norm reaches cfg.tol.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    m, d = x.shape
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValueError("logistic regression needs at least 2 classes present")
    k = int(classes.max()) + 1
    onehot = np.zeros((m, k))
    onehot[np.arange(m), y] = 1.0
    reg = 1.0 / (2.0 * cfg.c * m)

    def objective(theta: np.ndarray):
        w = theta[: d * k].reshape(d, k)
        b = theta[d * k :]
        z = x @ w + b
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=1, keepdims=True)
        ce = -np.mean(np.log(p[np.arange(m), y] + 1e-300))
        val = ce + reg * (w * w).sum()
        g = (p - onehot) / m
        gw = x.T @ g + 2.0 * reg * w
        gb = g.sum(axis=0)
        return val, np.concatenate([gw.ravel(), gb])

    res = scipy.optimize.minimize(
        objective,
        np.zeros(d * k + k),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": cfg.max_iter, "gtol": cfg.tol, "ftol": 0.0, "maxfun": 10 * cfg.max_iter},
    )
    w = res.x[: d * k].reshape(d, k)
    b = res.x[d * k :]
    return LinearModel(w, b, bool(res.success), int(res.nit))


def probe_accuracy(
    train_feats: np.ndarray,
    train_labels: np.ndarray,
    test_feats: np.ndarray,
    test_labels: np.ndarray,
    n_classes: int,
    cfg: ProbeConfig = ProbeConfig(),
) -> tuple[float, float, float]:
    """Fit per-series probe, vote per sample, return (OA, kappa, macro F1)."""
    n_tr, s_tr, d = train_feats.shape
    model = fit_logreg(
        train_feats.reshape(n_tr * s_tr, d),
        np.repeat(train_labels, s_tr),
        cfg,
    )
    n_te, s_te, _ = test_feats.shape
    proba = model.proba(test_feats.reshape(n_te * s_te, d).astype(np.float64))
    preds = proba.argmax(axis=1).reshape(n_te, s_te)
    voted = majority_vote(preds, proba.reshape(n_te, s_te, -1))
    return metrics(confusion_matrix(test_labels, voted, n_classes))


# -- raw-feature baseline ----------------------------------------------------

RAW_FLAT_LIMIT = 1024


def raw_features(ds: Dataset) -> np.ndarray:
    """Per-series summary features: per-channel (mean, std, min, max),
    plus the flattened series whenever T * C <= 1024."""
    v = ds.values.astype(np.float32)
    parts = [
        v.mean(axis=2),
        v.std(axis=2),
        v.min(axis=2),
        v.max(axis=2),
    ]  # each (N, N_ts, C)
    feats = np.concatenate(parts, axis=2)
    n, n_ts, t, c = v.shape
    if t * c <= RAW_FLAT_LIMIT:
        feats = np.concatenate([feats, v.reshape(n, n_ts, t * c)], axis=2)
    return feats


# -- label-efficiency sweep --------------------------------------------------


def subsample_per_class(
    labels: np.ndarray, k: int, n_classes: int, rng: RngStream
) -> np.ndarray:
    """k indices per class, drawn without replacement."""
    gen = rng.generator()
    picked = []
    for cls in range(n_classes):
        pool = np.flatnonzero(labels == cls)
        if len(pool) < k:
            raise ValueError(f"class {cls} has {len(pool)} samples, needs {k}")
        picked.append(gen.choice(pool, size=k, replace=False))
    return np.concatenate(picked)


def label_efficiency_sweep(
    representations: dict[str, tuple[np.ndarray, np.ndarray]],
    train_labels: np.ndarray,
    test_labels: np.ndarray,
    n_classes: int,
    samples_per_class: list[int],
    repeats: int,
    rng: RngStream,
    probe_cfg: ProbeConfig = ProbeConfig(),
    workers: int = 1,
) -> list[dict]:
    """Probe every (strategy, k, repeat) cell.

    representations maps strategy name to (train_features, test_features)
    with shapes (N, N_ts, D). The k labeled samples per class of a given
    (k, repeat) cell are shared across strategies so cells are paired, and
    each cell depends only on the sweep seed and its own coordinates.
    """
    cells = []
    for k in samples_per_class:
        for rep in range(repeats):
            idx = subsample_per_class(train_labels, k, n_classes, rng.child(rngmod.EVAL, k, rep))
            for strategy in representations:
                cells.append((strategy, k, rep, idx))

    def run_cell(cell):
        strategy, k, rep, idx = cell
        train_feats, test_feats = representations[strategy]
        oa, kappa, f1 = probe_accuracy(
            train_feats[idx], train_labels[idx], test_feats, test_labels,
            n_classes, probe_cfg,
        )
        return {"strategy": strategy, "k": k, "repeat": rep, "oa": oa, "kappa": kappa, "f1": f1}

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run_cell, cells))
    return [run_cell(cell) for cell in cells]


def summarize_sweep(rows: list[dict]) -> dict:
    """Mean/std per (strategy, k) cell, in percent, with std > 1 flagged."""
    cells: dict[tuple[str, int], list[float]] = {}
    for r in rows:
        cells.setdefault((r["strategy"], r["k"]), []).append(r["oa"])
    out = {}
    for (strategy, k), oas in sorted(cells.items()):
        arr = 100.0 * np.asarray(oas)
        out[f"{strategy}/k={k}"] = {
            "mean_oa_pct": float(arr.mean()),
            "std_oa_pct": float(arr.std()),
            "n": len(oas),
            "high_variance": bool(arr.std() > 1.0),
        }
    return out


# -- finetuning ----------------------------------------------------------------


def _cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    from .nn.tensor import logsumexp

    b, k = logits.shape
    onehot = np.zeros((b, k), dtype=logits.data.dtype)
    onehot[np.arange(b), labels] = 1
    pos = (logits * Tensor(onehot)).sum(axis=1)
    return (logsumexp(logits, axis=1) - pos).mean()


def _accuracy(encoder, head, ds: Dataset) -> float:
    feats = extract_features(ds, encoder)
    n, n_ts, d = feats.shape
    with no_grad():
        logits = head(Tensor(feats.reshape(n * n_ts, d)), training=False).data
    preds = logits.argmax(axis=1).reshape(n, n_ts)
    proba = np.exp(logits - logits.max(axis=1, keepdims=True))
    proba = (proba / proba.sum(axis=1, keepdims=True)).reshape(n, n_ts, -1)
    voted = majority_vote(preds, proba)
    return float((voted == ds.labels.astype(np.int64)).mean())


@dataclass
class FinetuneResult:
    best_epoch: int
    best_val_accuracy: float
    phase_epochs: tuple[int, int]
    log: list[dict]


def finetune(
    train_ds: Dataset,
    val_ds: Dataset,
    encoder: Encoder,
    head: ClassifierHead,
    rng: RngStream,
    group_size: int = 4,
    head_epochs: int = 10,
    full_epochs: int = 100,
    head_lr: float = 1e-3,
    encoder_lr: float = 2e-5,
    weight_decay: float = 5e-4,
    batch_size: int = 32,
    sgd_momentum: float = 0.9,
) -> FinetuneResult:
    """Two-phase supervised training of head then full model.

    Phase 1 trains the classifier alone (encoder frozen and in eval mode);
    phase 2 unfreezes the encoder with its own smaller learning rate. The
    best epoch is chosen by sample-level validation accuracy.
    """
    from .data import select_group_indices
    from .train import SGD

    n, n_ts = train_ds.shape[:2]
    g = min(group_size, n_ts)
    head_params = head.named_params()
    enc_params = encoder.named_params()
    opt_head = SGD(head_params, momentum=sgd_momentum, weight_decay=weight_decay)
    opt_enc = SGD(enc_params, momentum=sgd_momentum, weight_decay=weight_decay)
    best = (-1.0, -1)
    best_state = None
    log = []
    drop_gen = rng.child(rngmod.DROPOUT).generator()
    step = 0
    for epoch in range(head_epochs + full_epochs):
        phase2 = epoch >= head_epochs
        order = rng.child(rngmod.DATA_ORDER, epoch).generator().permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            if len(idx) < 2:
                continue
            groups = np.stack(
                [
                    train_ds.values[i][
                        select_group_indices(n_ts, g, rng.child(rngmod.GROUP_SELECT, epoch, int(i)))
                    ]
                    for i in idx
                ]
            )
            labels = train_ds.labels[idx].astype(np.int64)
            if phase2:
                _, h = encoder.encode(groups, training=True)
            else:
                with no_grad():
                    _, h_frozen = encoder.encode(groups, training=False)
                h = Tensor(h_frozen.data)
            logits = head(h, training=True, gen=drop_gen)
            loss = _cross_entropy(logits, labels)
            if not np.isfinite(loss.data):
                raise FloatingPointError(f"non-finite finetuning loss at epoch {epoch}")
            for _, p in head_params + enc_params:
                p.zero_grad()
            loss.backward()
            opt_head.step(head_lr)
            if phase2:
                opt_enc.step(encoder_lr)
            step += 1
        val_acc = _accuracy(encoder, head, val_ds)
        log.append({"epoch": epoch, "phase": 2 if phase2 else 1, "val_accuracy": val_acc})
        if val_acc > best[0]:
            best = (val_acc, epoch)
            best_state = [
                (name, p.data.copy()) for name, p in enc_params + head_params
            ]
    if best_state is not None:
        lookup = dict(best_state)
        for name, p in enc_params + head_params:
            p.data = lookup[name].copy()
    return FinetuneResult(
        best_epoch=best[1],
        best_val_accuracy=best[0],
        phase_epochs=(head_epochs, full_epochs),
        log=log,
    )
