"""Acceptance suite: one test per release criterion, cheap ones first.

Each test prints a `[acceptance] C<n> ...: PASS` line (visible with -s or
in captured output). Criterion 3's affine clause is implemented exactly as
stated and is expected to fail: with disjoint index sets, at most one view
can contain the first upsampled timestep, and the timestamp rescaling maps
subsequence endpoints to output endpoints, so the other view of a sloped
ramp starts at an interior sample of the ramp, off by at least
slope * (T-1) / (t_up-1). That clause is marked strict-xfail; constant
fixed points and shape preservation hold and are asserted.
"""

import hashlib
import math

import numpy as np
import pytest

from helpers import fd_check, param_tensors
from tscl.augment import (
    AugmentConfig,
    ResamplingConfig,
    jitter,
    resampling_pair,
    resize_crop,
    sample_disjoint_indices,
    time_mask,
    upsample,
)
from tscl.contrastive import (
    SslState,
    byol_loss,
    moco_step,
    nt_xent,
    vicreg_loss,
)
from tscl.data import Dataset, load_dataset, save_dataset
from tscl.evaluate import (
    ConfusionMatrix,
    extract_features,
    label_efficiency_sweep,
    metrics,
    probe_accuracy,
    raw_features,
    subsample_per_class,
)
from tscl.nn.layers import BatchNorm1d, Conv1d, Dropout, Linear
from tscl.nn.models import EncoderConfig, ResidualBlock
from tscl.nn.tensor import Tensor
from tscl.rng import RngStream
from tscl.synth import generate
from tscl.train import CollapseError, TrainConfig, load_encoder, one_cycle_lr, pretrain

from test_evaluate import brute_force_metrics

GEN = np.random.default_rng(20240901)


def report(line: str):
    print(f"[acceptance] {line}", flush=True)


# -- criterion 1: upsampling reproduces the frozen reference series -------------------


def test_c1_upsample_reference_series():
    original = np.array([5, 15, 32.5, 28.5, 12.5, 7.5, 11, 2.5])[:, None]
    expected = np.array(
        [5, 10, 15, 23.75, 32.5, 30.5, 28.5, 20.5, 12.5, 10, 7.5, 9.25, 11, 6.75, 2.5]
    )
    up = upsample(original, 15)
    assert np.abs(up[:, 0] - expected).max() <= 1e-9
    report("C1 upsample reproduces the frozen 15-point reference series: PASS")


# -- criterion 2: constraint suite over 10^4 draws ------------------------------


def test_c2_draw_constraints_bulk():
    cfg = ResamplingConfig.for_length(60)
    assert cfg.t_up == 119 and cfg.t_int_1 == 30 and cfg.t_int_2 == 30
    root = RngStream(1312)
    violations = 0
    for i in range(10_000):
        pair = sample_disjoint_indices(cfg, root.child(i))
        s1, s2 = set(pair.x1.tolist()), set(pair.x2.tolist())
        if s1 & s2:
            violations += 1
            continue
        if len(s1) != cfg.t_int_1 or len(s2) != cfg.t_int_2:
            violations += 1
            continue
        for subset, t_int in ((s1, cfg.t_int_1), (s2, cfg.t_int_2)):
            counts = [0, 0, 0, 0]
            for u in subset:
                counts[min(3, u * 4 // cfg.t_up)] += 1
            if min(counts) < t_int // 4:
                violations += 1
                break
    assert violations == 0
    report("C2 10^4 draws, zero disjointness or coverage violations: PASS")


# -- criterion 3: fixed points and shape preservation ---------------------------


def test_c3_constant_fixed_point():
    cfg = ResamplingConfig.for_length(60)
    const = np.full((60, 12), 0.37)
    v1, v2 = resampling_pair(const, cfg, RngStream(5))
    rel1 = np.abs(v1 - const).max() / 0.37
    rel2 = np.abs(v2 - const).max() / 0.37
    assert rel1 <= 1e-6 and rel2 <= 1e-6
    report("C3 constant series is a fixed point of resampling: PASS")


@pytest.mark.xfail(
    strict=True,
    reason=(
        "unattainable as stated: disjointness means at most one view contains "
        "upsampled index 0, and the realignment contract maps subsequence "
        "endpoints to output endpoints, so the other view of a sloped ramp "
        "starts at an interior ramp sample, off by >= slope*(T-1)/(t_up-1), "
        "far above 1e-6; see the affine-collinearity test in test_augment.py "
        "for the property that does hold"
    ),
)
def test_c3_affine_fixed_point():
    t = 60
    ramp = (np.arange(t)[:, None] * 0.5 + 1.0) * np.linspace(0.5, 1.5, 12)[None, :]
    cfg = ResamplingConfig.for_length(t)
    worst = 0.0
    for seed in range(50):
        v1, v2 = resampling_pair(ramp, cfg, RngStream(seed))
        scale = np.abs(ramp).max()
        worst = max(worst, np.abs(v1 - ramp).max() / scale, np.abs(v2 - ramp).max() / scale)
    if worst > 1e-6:
        report(f"C3 affine fixed point: FAIL (deviation {worst:.3e} > 1e-6; "
               "unattainable under endpoint-preserving realignment)")
    assert worst <= 1e-6
    report("C3 affine series is a fixed point of resampling: PASS")


def test_c3_shape_preservation():
    root = RngStream(99)
    for i in range(1000):
        t = int(GEN.integers(9, 40))
        c = int(GEN.integers(1, 6))
        s = GEN.standard_normal((t, c))
        outs = [
            jitter(s, 0.05, root.child(i, 1)),
            resize_crop(s, (0.5, 1.0), root.child(i, 2)),
            time_mask(s, 0.3, root.child(i, 3)),
        ]
        if t >= 8:
            outs.extend(resampling_pair(s, ResamplingConfig.for_length(t), root.child(i, 4)))
        for out in outs:
            assert out.shape == (t, c)
    report("C3 all augmentations preserve (T, C) on 10^3 random inputs: PASS")


# -- criterion 4: gradient suite -------------------------------------------------


def test_c4_layer_gradients():
    gen = np.random.default_rng(4)

    lin = Linear(5, 3, RngStream(1), dtype=np.float64)
    x = Tensor(gen.standard_normal((4, 5)))
    fd_check(lambda: (lin(x) ** 2.0).sum(), param_tensors(lin.params()), tol=1e-6)

    conv = Conv1d(3, 4, 8, RngStream(2), dtype=np.float64)
    xc = Tensor(gen.standard_normal((2, 3, 11)))
    fd_check(lambda: (conv(xc) ** 2.0).sum(), param_tensors(conv.params()), tol=1e-6)

    bn = BatchNorm1d(3, dtype=np.float64)
    xb = Tensor(gen.standard_normal((4, 3, 6)), requires_grad=True)

    def bn_loss():
        bn.running_mean[:] = 0.0
        bn.running_var[:] = 1.0
        return (bn(xb, training=True).relu() ** 2.0).sum()

    fd_check(bn_loss, [xb, bn.gamma, bn.beta], tol=1e-6)

    drop = Dropout(0.2)
    xd = Tensor(gen.standard_normal((6, 8)), requires_grad=True)

    def drop_loss():
        return (drop(xd, True, np.random.default_rng(3)) ** 2.0).sum()

    fd_check(drop_loss, [xd], tol=1e-6)

    agg = Tensor(gen.standard_normal((3, 4, 6)), requires_grad=True)
    fd_check(lambda: (agg.mean(axis=1) ** 2.0).sum(), [agg], tol=1e-6)  # group mean
    gap = Tensor(gen.standard_normal((3, 6, 9)), requires_grad=True)
    fd_check(lambda: (gap.mean(axis=2) ** 2.0).sum(), [gap], tol=1e-6)  # global pooling
    report("C4 per-layer finite-difference checks at 1e-6: PASS")


def test_c4_shrunk_encoder_gradients():
    # two residual blocks with 8 filters, exactly the shrunk configuration
    gen = np.random.default_rng(44)
    b1 = ResidualBlock(2, 8, (8, 5, 3), RngStream(11), dtype=np.float64)
    b2 = ResidualBlock(8, 8, (8, 5, 3), RngStream(12), dtype=np.float64)
    x = Tensor(gen.standard_normal((2, 2, 12)))
    params = []
    for blk in (b1, b2):
        for _, layer in blk.sublayers():
            params.extend(p for _, p in layer.params())

    def loss():
        for blk in (b1, b2):
            for _, layer in blk.sublayers():
                if hasattr(layer, "running_mean"):
                    layer.running_mean[:] = 0.0
                    layer.running_var[:] = 1.0
        h = b2(b1(x, True), True).mean(axis=2)
        return (h**2.0).sum()

    fd_check(loss, params, tol=1e-6, max_elems=48)
    report("C4 shrunk 2-block x 8-filter encoder gradient check: PASS")


def test_c4_ssl_loss_gradients():
    gen = np.random.default_rng(45)
    z1 = Tensor(gen.standard_normal((4, 6)), requires_grad=True)
    z2 = Tensor(gen.standard_normal((4, 6)), requires_grad=True)
    fd_check(lambda: nt_xent(z1, z2, 0.2), [z1, z2], tol=1e-6)
    fd_check(lambda: vicreg_loss(z1, z2), [z1, z2], tol=1e-6)
    p1 = Tensor(gen.standard_normal((4, 6)), requires_grad=True)
    p2 = Tensor(gen.standard_normal((4, 6)), requires_grad=True)
    t1, t2 = Tensor(gen.standard_normal((4, 6))), Tensor(gen.standard_normal((4, 6)))
    fd_check(lambda: byol_loss(p1, t2, p2, t1), [p1, p2], tol=1e-6)
    q = Tensor(gen.standard_normal((3, 6)), requires_grad=True)
    key = gen.standard_normal((3, 6))

    def moco_loss():
        state = SslState(framework="moco", temperature=0.3, queue_capacity=6)
        state.enqueue(key / np.linalg.norm(key, axis=1, keepdims=True))
        return moco_step(q, key, state)

    fd_check(moco_loss, [q], tol=1e-6)
    report("C4 all four framework losses pass finite differences: PASS")


# -- criterion 5: loss oracles -----------------------------------------------------


def test_c5_loss_oracles():
    e1 = np.array([1.0, 0.0, 0.0, 0.0])
    e2 = np.array([0.0, 1.0, 0.0, 0.0])
    val = float(nt_xent(Tensor(np.stack([e1, e2])), Tensor(np.stack([e1, e2])), 1.0).data)
    assert abs(val - (-np.log(np.e / (np.e + 2)))) <= 1e-9

    cols = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=np.float64)
    zero = float(vicreg_loss(Tensor(cols.copy()), Tensor(cols.copy()), eps=0.0).data)
    assert abs(zero) <= 1e-9
    row = GEN.standard_normal(5)
    z = np.tile(row, (4, 1))
    collapsed_val = float(vicreg_loss(Tensor(z.copy()), Tensor(z.copy())).data)
    assert abs(collapsed_val - 25.0 * 2.0 * (1.0 - math.sqrt(1e-4))) <= 1e-6

    p = Tensor(np.stack([e1, e2]))
    assert abs(float(byol_loss(p, Tensor(p.data.copy()), p, Tensor(p.data.copy())).data)) <= 1e-9
    t = Tensor(np.stack([e2, e1]))
    assert abs(float(byol_loss(p, t, p, t).data) - 2.0) <= 1e-9

    state = SslState(framework="moco", temperature=1.0, queue_capacity=4)
    first = float(moco_step(Tensor(np.stack([e1, e2])), np.stack([e1, e2]), state).data)
    assert abs(first - (-np.log(np.e / (np.e + 1)))) <= 1e-9
    batches = [GEN.standard_normal((2, 4)) for _ in range(3)]
    state2 = SslState(framework="moco", queue_capacity=4)
    for kb in batches:
        moco_step(Tensor(GEN.standard_normal((2, 4))), kb, state2)
    expected = np.concatenate([batches[1], batches[2]])
    expected /= np.sqrt((expected**2).sum(axis=1, keepdims=True) + 1e-12)
    assert np.abs(state2.queue_keys() - expected).max() <= 1e-9
    report("C5 loss hand values, closed forms, and ring-buffer contents: PASS")


# -- criterion 6: metric oracle ------------------------------------------------------


def test_c6_metric_oracle():
    oa, kappa, _ = metrics(ConfusionMatrix(np.array([[1, 1], [1, 1]])))
    assert oa == 0.5 and abs(kappa) <= 1e-12
    for _ in range(1000):
        k = int(GEN.integers(2, 7))
        counts = GEN.integers(0, 25, size=(k, k))
        if counts.sum() == 0:
            counts[0, 0] = 1
        ours = metrics(ConfusionMatrix(counts))
        ref = brute_force_metrics(counts.tolist())
        assert np.abs(np.array(ours) - np.array(ref)).max() <= 1e-12
    report("C6 metrics match brute-force recomputation on 1000 matrices: PASS")


# -- criterion 7: schedule anchors -----------------------------------------------------


def test_c7_schedule_anchors():
    cfg = TrainConfig(total_steps=2000)
    warm = math.ceil(0.2 * cfg.total_steps)
    assert abs(one_cycle_lr(0, cfg) - 2e-3) <= 1e-9
    assert abs(one_cycle_lr(warm, cfg) - 5e-2) <= 1e-9
    assert abs(one_cycle_lr(cfg.total_steps - 1, cfg) - 5e-5) <= 1e-9
    lrs = [one_cycle_lr(s, cfg) for s in range(cfg.total_steps)]
    assert np.all(np.diff(lrs[: warm + 1]) >= 0)
    assert np.all(np.diff(lrs[warm:]) <= 0)
    report("C7 one-cycle anchors exact to 1e-9 and phase-monotone: PASS")


# -- criterion 9: determinism ------------------------------------------------------------


SMOKE_ENC = EncoderConfig(in_channels=12, block_filters=(8, 16, 16), kernel_sizes=(8, 5, 3), embedding_dim=16)


def _smoke_datasets(noise=0.10, drop=0.10, seed=17):
    rng = RngStream(seed)
    unl = generate(8, 25, 4, 60, 12, noise, drop, rng, sample_offset=0)
    unl = Dataset(unl.values, None, unl.n_classes, "unlabeled")
    val = generate(8, 8, 4, 60, 12, noise, drop, rng, split_tag="val", sample_offset=25)
    return unl, val


def test_c9_determinism(tmp_path):
    unl, val = _smoke_datasets()
    cfg = TrainConfig(total_steps=200, batch_size=32, eval_every=100, group_size=2, seed=11)
    digests = []
    for sub in ("a", "b"):
        res = pretrain(
            tmp_path / sub, unl, val, cfg,
            AugmentConfig(strategy="resampling"),
            SslState(framework="simclr"), SMOKE_ENC,
        )
        digests.append(hashlib.sha256(res.checkpoint.read_bytes()).hexdigest())
    assert digests[0] == digests[1]

    path = tmp_path / "roundtrip.tscl"
    save_dataset(val, path)
    again = load_dataset(path, split_tag="val")
    save_dataset(again, tmp_path / "echo.tscl")
    assert (tmp_path / "echo.tscl").read_bytes() == path.read_bytes()
    assert again == val
    report("C9 byte-identical smoke checkpoints and dataset round-trip: PASS")


# -- criterion 10: collapse detection -----------------------------------------------------


def test_c10_collapse_flag(tmp_path):
    unl, val = _smoke_datasets(seed=23)
    cfg = TrainConfig(
        total_steps=300, batch_size=16, eval_every=100, group_size=1, seed=2,
        peak_lr=2e-1, weight_decay=5e-2,
    )
    state = SslState(framework="vicreg", vicreg_mu=0.0, vicreg_lambda=400.0, queue_capacity=16)
    with pytest.raises(CollapseError, match="collapse"):
        pretrain(
            tmp_path / "c", unl, val, cfg,
            AugmentConfig(strategy="resampling"), state, SMOKE_ENC,
        )
    report("C10 mis-configured VICReg trips the collapse flag: PASS")


# -- criterion 8: qualitative label-efficiency ordering -------------------------------------
# (last: this is the long end-to-end run, about 80 minutes on one core)


C8_ENC = EncoderConfig(in_channels=12, block_filters=(16, 32, 32), kernel_sizes=(8, 5, 3), embedding_dim=32)


def _c8_datasets(noise, drop, seed=123):
    rng = RngStream(seed)
    unl = generate(8, 150, 8, 60, 12, noise, drop, rng, sample_offset=0)
    unl = Dataset(unl.values, None, unl.n_classes, "unlabeled")
    train = generate(8, 60, 8, 60, 12, noise, drop, rng, split_tag="train", sample_offset=150)
    val = generate(8, 10, 8, 60, 12, noise, drop, rng, split_tag="val", sample_offset=210)
    test = generate(8, 25, 8, 60, 12, noise, drop, rng, split_tag="test", sample_offset=220)
    return unl, train, val, test


def _raw_probe_oa_at_5(train, test):
    ftr, fte = raw_features(train), raw_features(test)
    labels = train.labels.astype(np.int64)
    oas = []
    for rep in range(3):
        idx = subsample_per_class(labels, 5, 8, RngStream(55).child(5, rep))
        oa, _, _ = probe_accuracy(
            ftr[idx], labels[idx], fte, test.labels.astype(np.int64), 8
        )
        oas.append(oa)
    return float(np.mean(oas))


@pytest.mark.long
def test_c8_qualitative_ordering(tmp_path):
    # difficulty gate: raise noise/dropout until raw features are weak enough
    noise, drop = 0.10, 0.10
    for _ in range(6):
        unl, train, val, test = _c8_datasets(noise, drop)
        raw5 = _raw_probe_oa_at_5(train, test)
        report(f"C8 difficulty check: raw probe OA@5 = {raw5:.3f} (noise={noise:.3f}, dropout={drop:.3f})")
        if raw5 < 0.85:
            break
        noise *= 1.4
        drop = min(0.4, drop * 1.4)
    else:
        pytest.fail("generator never reached the required difficulty")

    cfg = TrainConfig(
        total_steps=2000, batch_size=128, eval_every=250, group_size=1, seed=7
    )
    representations = {"raw": (raw_features(train), raw_features(test))}
    for strategy in ("jittering", "resizing", "masking", "resampling"):
        res = pretrain(
            tmp_path / strategy, unl, val, cfg,
            AugmentConfig(strategy=strategy),
            SslState(framework="simclr"), C8_ENC,
        )
        enc, _ = load_encoder(res.checkpoint)
        representations[strategy] = (
            extract_features(train, enc),
            extract_features(test, enc),
        )
        report(f"C8 pretrained {strategy}: best val probe {res.best_score:.3f}")

    rows = label_efficiency_sweep(
        representations,
        train.labels.astype(np.int64),
        test.labels.astype(np.int64),
        8, [5, 10], 5, RngStream(99),
    )
    pooled = {}
    for strategy in representations:
        oas = [r["oa"] for r in rows if r["strategy"] == strategy]
        pooled[strategy] = float(np.mean(oas))
    for strategy, oa in sorted(pooled.items(), key=lambda kv: -kv[1]):
        report(f"C8 mean OA {strategy}: {100 * oa:.1f}%")
    assert pooled["resampling"] - pooled["jittering"] >= 0.05, pooled
    assert pooled["resampling"] >= pooled["masking"] - 0.01, pooled
    report("C8 ordering resampling > jittering (by >= 5) and >= masking: PASS")
