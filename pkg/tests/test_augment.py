import numpy as np
import pytest

from tscl.augment import (
    AugmentConfig,
    IndexPair,
    ResamplingConfig,
    check_index_pair,
    jitter,
    make_view_pair,
    quarter_counts,
    realign,
    resampling_pair,
    resize_crop,
    sample_disjoint_indices,
    time_mask,
    upsample,
)
from tscl.rng import RngStream

REF_SERIES = np.array([5, 15, 32.5, 28.5, 12.5, 7.5, 11, 2.5], dtype=np.float64)
REF_UPSAMPLED = np.array(
    [5, 10, 15, 23.75, 32.5, 30.5, 28.5, 20.5, 12.5, 10, 7.5, 9.25, 11, 6.75, 2.5],
    dtype=np.float64,
)
REF_X1 = np.array([0, 3, 6, 9, 14])
REF_X2 = np.array([1, 4, 7, 10, 12, 13])


def rand_series(gen, t=16, c=3):
    return gen.standard_normal((t, c))


# -- upsample ---------------------------------------------------------------


def test_upsample_reference_values():
    up = upsample(REF_SERIES[:, None], 15)
    np.testing.assert_allclose(up[:, 0], REF_UPSAMPLED, atol=1e-9)


def test_upsample_constant():
    const = np.full((8, 2), 4.25)
    up = upsample(const, 31)
    assert up.shape == (31, 2)
    np.testing.assert_array_equal(up, 4.25)


def test_upsample_identity_when_lengths_match():
    gen = np.random.default_rng(0)
    s = rand_series(gen)
    np.testing.assert_allclose(upsample(s, 16), s, atol=1e-12)


def test_upsample_rejects_downsampling():
    with pytest.raises(ValueError):
        upsample(np.zeros((8, 1)), 7)


def test_upsample_preserves_endpoints():
    gen = np.random.default_rng(1)
    s = rand_series(gen)
    up = upsample(s, 45)
    np.testing.assert_array_equal(up[0], s[0])
    np.testing.assert_array_equal(up[-1], s[-1])


# -- index sampling --------------------------------------------------------


def test_reference_draw_satisfies_constraints():
    pair = IndexPair(REF_X1, REF_X2)
    check_index_pair(pair, 15)  # raises on violation


def test_draws_satisfy_constraints_in_bulk():
    cfg = ResamplingConfig.for_length(60)
    root = RngStream(42)
    for i in range(500):
        pair = sample_disjoint_indices(cfg, root.child(i))
        assert len(pair.x1) == cfg.t_int_1
        assert len(pair.x2) == cfg.t_int_2
        assert not set(pair.x1.tolist()) & set(pair.x2.tolist())
        for x, t_int in ((pair.x1, cfg.t_int_1), (pair.x2, cfg.t_int_2)):
            assert quarter_counts(x, cfg.t_up).min() >= t_int // 4


def test_saturating_lengths_cover_everything():
    cfg = ResamplingConfig(t_up=16, t_int_1=8, t_int_2=8)
    pair = sample_disjoint_indices(cfg, RngStream(3))
    union = np.union1d(pair.x1, pair.x2)
    np.testing.assert_array_equal(union, np.arange(16))


def test_infeasible_config_rejected():
    with pytest.raises(ValueError):
        ResamplingConfig(t_up=15, t_int_1=8, t_int_2=8)  # lengths exceed t_up
    with pytest.raises(ValueError):
        ResamplingConfig(t_up=40, t_int_1=3, t_int_2=4)  # below quarter minimum
    # note: once t_int_1 + t_int_2 <= t_up holds, the per-quarter quotas
    # floor(t1/4) + floor(t2/4) <= floor(t_up/4) fit in every quarter, so a
    # validated config never fails inside the sampler
    for t_up in range(9, 40):
        t1 = t_up // 2
        t2 = t_up - t1
        if min(t1, t2) >= 4:
            sample_disjoint_indices(
                ResamplingConfig(t_up=t_up, t_int_1=t1, t_int_2=t2), RngStream(t_up)
            )


def test_index_pair_validation():
    with pytest.raises(ValueError):
        IndexPair(np.array([3, 1]), np.array([0, 2]))  # not increasing
    with pytest.raises(ValueError):
        IndexPair(np.array([0, 2]), np.array([2, 4]))  # overlap


# -- realign -----------------------------------------------------------------


def test_realign_identity():
    gen = np.random.default_rng(2)
    s = rand_series(gen, t=12)
    out = realign(s, np.arange(12), 12)
    np.testing.assert_allclose(out, s, atol=1e-12)


def test_realign_line_oracle():
    sub = np.array([[5.0], [2.5]])
    out = realign(sub, np.array([0, 14]), 8)
    expected = 5.0 + np.arange(8) * (-2.5 / 7.0)
    np.testing.assert_allclose(out[:, 0], expected, atol=1e-12)


def test_realign_reference_draw_endpoints():
    up = REF_UPSAMPLED[:, None]
    out = realign(up[REF_X1], REF_X1, 8)
    assert out.shape == (8, 1)
    assert out[0, 0] == 5.0
    assert out[-1, 0] == 2.5


def test_realign_rejects_short_input():
    with pytest.raises(ValueError):
        realign(np.zeros((1, 1)), np.array([3]), 8)


# -- resampling pair ----------------------------------------------------------


def test_constant_series_fixed_point():
    cfg = ResamplingConfig.for_length(8)
    const = np.full((8, 3), -2.5)
    v1, v2 = resampling_pair(const, cfg, RngStream(0))
    np.testing.assert_allclose(v1, const, atol=1e-9)
    np.testing.assert_allclose(v2, const, atol=1e-9)


def test_affine_input_stays_affine():
    # each view of an affine series is itself affine (collinear in time)
    t = 24
    ramp = np.arange(t, dtype=np.float64)[:, None] * 0.7 + 2.0
    cfg = ResamplingConfig.for_length(t)
    for seed in range(20):
        for view in resampling_pair(ramp, cfg, RngStream(seed)):
            second_diff = np.diff(view[:, 0], n=2)
            assert np.abs(second_diff).max() < 1e-9


def test_views_subset_endpoint_values():
    # each view starts and ends on its subsequence's endpoint values, which
    # are values of the upsampled input
    gen = np.random.default_rng(7)
    s = rand_series(gen, t=16, c=2)
    cfg = ResamplingConfig.for_length(16)
    up = upsample(s, cfg.t_up)
    pair = sample_disjoint_indices(cfg, RngStream(5))
    v1 = realign(up[pair.x1], pair.x1, 16)
    np.testing.assert_array_equal(v1[0], up[pair.x1[0]])
    np.testing.assert_array_equal(v1[-1], up[pair.x1[-1]])


def test_hull_preserved():
    gen = np.random.default_rng(8)
    cfg = ResamplingConfig.for_length(20)
    root = RngStream(77)
    for i in range(1000):
        s = rand_series(gen, t=20, c=2)
        v1, v2 = resampling_pair(s, cfg, root.child(i))
        lo, hi = s.min(axis=0), s.max(axis=0)
        tol = 1e-9
        for v in (v1, v2):
            assert v.shape == (20, 2)
            assert np.all(v >= lo - tol) and np.all(v <= hi + tol)


def test_resampling_deterministic():
    gen = np.random.default_rng(9)
    s = rand_series(gen)
    cfg = ResamplingConfig.for_length(16)
    a = resampling_pair(s, cfg, RngStream(31, 4))
    b = resampling_pair(s, cfg, RngStream(31, 4))
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


# -- baselines ------------------------------------------------------------


def test_jitter_zero_sigma_identity():
    gen = np.random.default_rng(10)
    s = rand_series(gen)
    np.testing.assert_array_equal(jitter(s, 0.0, RngStream(0)), s)


def test_jitter_mean_shift_bounded():
    gen = np.random.default_rng(11)
    s = rand_series(gen, t=64, c=2)
    sigma = 0.5
    root = RngStream(12)
    shifts = []
    for i in range(200):
        out = jitter(s, sigma, root.child(i))
        shifts.append((out - s).mean(axis=0))
    shifts = np.stack(shifts)
    noise_std = sigma * s.std(axis=0)
    bound = 4 * noise_std / np.sqrt(64)
    assert np.all(np.abs(shifts.mean(axis=0)) < bound)


def test_jitter_shape_and_scale():
    gen = np.random.default_rng(13)
    s = rand_series(gen)
    out = jitter(s, 0.05, RngStream(3))
    assert out.shape == s.shape
    with pytest.raises(ValueError):
        jitter(s, -1.0, RngStream(0))


def test_resize_identity_range():
    gen = np.random.default_rng(14)
    s = rand_series(gen)
    out = resize_crop(s, (1.0, 1.0), RngStream(4))
    np.testing.assert_allclose(out, s, atol=1e-12)


def test_resize_shape_and_constant():
    gen = np.random.default_rng(15)
    s = rand_series(gen, t=30)
    root = RngStream(6)
    for i in range(50):
        out = resize_crop(s, (0.5, 1.0), root.child(i))
        assert out.shape == s.shape
    const = np.full((30, 2), 1.5)
    out = resize_crop(const, (0.5, 1.0), RngStream(7))
    np.testing.assert_allclose(out, 1.5, atol=1e-12)


def test_resize_validation():
    s = np.zeros((10, 1))
    with pytest.raises(ValueError):
        resize_crop(s, (0.0, 0.5), RngStream(0))
    with pytest.raises(ValueError):
        resize_crop(s, (0.6, 0.5), RngStream(0))
    with pytest.raises(ValueError):
        resize_crop(np.zeros((10, 1)), (0.05, 0.05), RngStream(0))  # crop of 1 point


def test_time_mask_zero_ratio_identity():
    gen = np.random.default_rng(16)
    s = rand_series(gen)
    np.testing.assert_array_equal(time_mask(s, 0.0, RngStream(0)), s)


def test_time_mask_counts_and_rest_untouched():
    gen = np.random.default_rng(17)
    s = np.abs(rand_series(gen, t=20, c=3)) + 0.1  # no zeros
    out = time_mask(s, 0.3, RngStream(8))
    zero_rows = np.where((out == 0).all(axis=1))[0]
    assert len(zero_rows) == 6  # floor(0.3 * 20)
    kept = np.setdiff1d(np.arange(20), zero_rows)
    np.testing.assert_array_equal(out[kept], s[kept])
    with pytest.raises(ValueError):
        time_mask(s, 1.0, RngStream(0))


# -- sample-level views ---------------------------------------------------------


def test_group_view_shares_index_draw():
    # two identical series in a group must be warped identically
    gen = np.random.default_rng(18)
    one = rand_series(gen)
    group = np.stack([one, one])
    cfg = AugmentConfig(strategy="resampling")
    v1, v2 = make_view_pair(group, cfg, RngStream(9))
    np.testing.assert_array_equal(v1[0], v1[1])
    np.testing.assert_array_equal(v2[0], v2[1])


def test_group_view_per_series_flag():
    gen = np.random.default_rng(19)
    one = rand_series(gen)
    group = np.stack([one, one])
    cfg = AugmentConfig(strategy="resampling", per_series=True)
    v1, _ = make_view_pair(group, cfg, RngStream(10))
    assert not np.array_equal(v1[0], v1[1])


def test_all_strategies_shapes():
    gen = np.random.default_rng(20)
    group = gen.standard_normal((3, 16, 4))
    for strategy in ("jittering", "resizing", "masking", "resampling"):
        v1, v2 = make_view_pair(group, AugmentConfig(strategy=strategy), RngStream(11))
        assert v1.shape == group.shape
        assert v2.shape == group.shape
        assert not np.isnan(v1).any() and not np.isnan(v2).any()


def test_unknown_strategy_rejected():
    with pytest.raises(ValueError):
        AugmentConfig(strategy="flipping")
