"""Image I/O, the normative bicubic resizer, synthetic data, batch sampling
and augmentation consistency."""

import numpy as np
import pytest

from c2dsr.data import (DataError, TrainSample, apply_augment, augment,
                        bicubic_resize, generate_dataset, list_dataset,
                        load_image, sample_stage1_batch, sample_stage2_batch,
                        save_image, synthesize_image, _cubic_kernel)


# ---------------------------------------------------------------------------
# PNG I/O

def test_save_load_roundtrip_8bit(tmp_path, rng):
    img = np.round(rng.uniform(0, 1, size=(7, 9, 3)) * 255) / 255.0
    path = tmp_path / "x.png"
    save_image(img.astype(np.float32), path)
    np.testing.assert_allclose(load_image(path), img, atol=1e-7)


def test_1x1_roundtrip(tmp_path):
    img = np.array([[[1.0, 0.0, 0.5019608]]], np.float32)
    save_image(img, tmp_path / "p.png")
    np.testing.assert_allclose(load_image(tmp_path / "p.png"), img, atol=1e-6)


def test_load_missing_file():
    with pytest.raises(DataError):
        load_image("/nonexistent/zzz.png")


def test_load_corrupt_header(tmp_path):
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"\x89PNG\r\n\x1a\nnot actually a png")
    with pytest.raises(DataError):
        load_image(bad)


# ---------------------------------------------------------------------------
# bicubic resizer

def test_bicubic_identity():
    img = np.random.default_rng(0).uniform(0.1, 0.9, (8, 8, 3)).astype(np.float32)
    out = bicubic_resize(img, out_hw=(8, 8))
    np.testing.assert_allclose(out, img, atol=1e-6)


def test_bicubic_constant_preserved():
    img = np.full((8, 8, 3), 0.37, np.float32)
    for hw in [(4, 4), (16, 16), (5, 11)]:
        out = bicubic_resize(img, out_hw=hw)
        np.testing.assert_allclose(out, np.full(hw + (3,), 0.37), atol=1e-5)


def test_bicubic_kernel_is_catmull_rom():
    # a = -0.5: k(0)=1, k(1)=0, k(0.5)=0.5625, k(1.5)=-0.0625
    np.testing.assert_allclose(_cubic_kernel(np.array([0.0, 1.0, 0.5, 1.5, 2.0])),
                               [1.0, 0.0, 0.5625, -0.0625, 0.0], atol=1e-12)


def _bicubic_oracle_1d(sig, n_out, a=-0.5):
    """Direct per-output-sample kernel evaluation with edge clamping and the
    kernel widened by the shrink factor when downsampling (antialiasing)."""
    n_in = len(sig)
    factor = max(n_in / n_out, 1.0)
    out = np.zeros(n_out)
    for d in range(n_out):
        src = (d + 0.5) * (n_in / n_out) - 0.5
        base = int(np.floor(src))
        taps = int(np.ceil(2 * factor))
        acc, wsum = 0.0, 0.0
        for tap in range(-taps + 1, taps + 1):
            idx = base + tap
            t = abs(src - idx) / factor
            if t <= 1:
                w = (a + 2) * t ** 3 - (a + 3) * t ** 2 + 1
            elif t < 2:
                w = a * t ** 3 - 5 * a * t ** 2 + 8 * a * t - 4 * a
            else:
                w = 0.0
            acc += w * sig[min(max(idx, 0), n_in - 1)]
            wsum += w
        out[d] = acc / wsum
    return out


def test_bicubic_ramp_downsample_matches_oracle():
    ramp = np.linspace(0.0, 1.0, 8)
    img = np.broadcast_to(ramp[None, :, None], (8, 8, 3)).astype(np.float32).copy()
    out = bicubic_resize(img, s=2.0, direction="down")
    expect = np.clip(_bicubic_oracle_1d(ramp, 4), 0, 1)
    for r in range(4):
        np.testing.assert_allclose(out[r, :, 0], expect, atol=1e-5)


def test_bicubic_rounding_rules():
    img = np.zeros((10, 7, 3), np.float32)
    assert bicubic_resize(img, s=3.0, direction="down").shape == (4, 3, 3)
    assert bicubic_resize(img, s=1.5, direction="up").shape == (15, 10, 3)


def test_bicubic_deterministic():
    img = np.random.default_rng(1).uniform(0, 1, (12, 12, 3)).astype(np.float32)
    a = bicubic_resize(img, s=2.0, direction="down")
    b = bicubic_resize(img, s=2.0, direction="down")
    np.testing.assert_array_equal(a, b)


def test_bicubic_rejects_degenerate():
    with pytest.raises(DataError):
        bicubic_resize(np.zeros((4, 4, 3), np.float32), out_hw=(0, 4))
    with pytest.raises(DataError):
        bicubic_resize(np.zeros((4, 4, 3), np.float32), s=-1.0)
    with pytest.raises(DataError):
        bicubic_resize(np.zeros((4, 4, 3), np.float32), s=2.0, direction="left")


# ---------------------------------------------------------------------------
# synthetic dataset

def test_synthesize_image_contract(rng):
    img = synthesize_image(rng, size=64)
    assert img.shape == (64, 64, 3)
    assert img.dtype == np.float32
    assert np.all(img >= 0) and np.all(img <= 1)


def test_generate_and_list_dataset(tmp_path):
    paths = generate_dataset(tmp_path, 3, size=32, seed=0)
    assert len(paths) == 3
    assert list_dataset(tmp_path) == sorted(paths)
    with pytest.raises(DataError):
        list_dataset(tmp_path / "empty")


def test_generate_dataset_seeded(tmp_path):
    a = generate_dataset(tmp_path / "a", 2, size=32, seed=7)
    b = generate_dataset(tmp_path / "b", 2, size=32, seed=7)
    for pa, pb in zip(a, b):
        np.testing.assert_array_equal(load_image(pa), load_image(pb))


# ---------------------------------------------------------------------------
# batch sampling

def test_stage1_batch_contract(rng):
    pool = [synthesize_image(rng, 160) for _ in range(2)]
    batch = sample_stage1_batch(pool, rng, batch=4, lr_size=16, q_count=32)
    assert len(batch) == 4
    for s in batch:
        assert s.lr.shape == (16, 16, 3)
        assert 1.0 <= s.s <= 4.0
        assert s.hr_size == (int(s.s * 16),) * 2
        assert s.query_idx.shape == (32, 2)
        assert s.query_rgb.shape == (32, 3)
        assert np.all(s.query_idx >= 0)
        assert np.all(s.query_idx < s.hr_size[0])


def test_stage1_s2_shape_law(rng):
    pool = [synthesize_image(rng, 260)]
    # paper protocol: s=2, p=64 -> HR crop 128x128, LR 64x64
    for s in sample_stage1_batch(pool, rng, 8, 64, 4):
        if abs(s.s - 2.0) < 1e-9:
            assert s.hr_size == (128, 128)
        assert s.lr.shape == (64, 64, 3)


def test_stage1_scale_mean(rng):
    pool = [synthesize_image(rng, 160)]
    draws = [s.s for s in sample_stage1_batch(pool, rng, 600, 16, 1)]
    # mean of U(1,4) is 2.5, sd of the mean = sqrt(0.75)/sqrt(600)
    assert abs(np.mean(draws) - 2.5) < 3 * np.sqrt(0.75 / len(draws))


def test_stage2_batch_contract(rng):
    pool = [synthesize_image(rng, 160) for _ in range(2)]
    batch = sample_stage2_batch(pool, rng, batch=3, lr_size=16, s=3)
    for s in batch:
        assert s.lr.shape == (16, 16, 3)
        assert s.hr.shape == (48, 48, 3)
        assert s.s == 3.0


def test_sampling_deterministic(rng):
    pool = [synthesize_image(rng, 160)]
    a = sample_stage1_batch(pool, np.random.default_rng(3), 4, 16, 8)
    b = sample_stage1_batch(pool, np.random.default_rng(3), 4, 16, 8)
    for sa, sb in zip(a, b):
        np.testing.assert_array_equal(sa.lr, sb.lr)
        np.testing.assert_array_equal(sa.query_idx, sb.query_idx)
        assert sa.s == sb.s


def test_empty_pool_rejected(rng):
    with pytest.raises(DataError):
        sample_stage1_batch([], rng, 1, 16, 8)
    with pytest.raises(DataError):
        sample_stage2_batch([], rng, 1, 16, 2)


def test_crop_too_small_rejected(rng):
    pool = [synthesize_image(rng, 32)]
    with pytest.raises(DataError):
        sample_stage2_batch(pool, rng, 1, 32, 4)   # needs 128 > 32


def test_query_local_and_flat_consistency(rng):
    pool = [synthesize_image(rng, 160)]
    (s,) = sample_stage1_batch(pool, rng, 1, 8, 16)
    local, flat = s.query_local_and_flat()
    assert local.shape == (16, 2) and flat.shape == (16,)
    assert np.all(local >= 0) and np.all(local < 1)
    assert np.all(flat >= 0) and np.all(flat < 64)


# ---------------------------------------------------------------------------
# augmentation

def test_augment_identity_draw(rng):
    pool = [synthesize_image(rng, 160)]
    (s,) = sample_stage2_batch(pool, rng, 1, 16, 2)
    out = apply_augment(s, rot_k=0, flip=False)
    np.testing.assert_array_equal(out.lr, s.lr)
    np.testing.assert_array_equal(out.hr, s.hr)


def test_double_flip_is_identity(rng):
    pool = [synthesize_image(rng, 160)]
    (s,) = sample_stage1_batch(pool, rng, 1, 16, 8)
    once = apply_augment(s, 0, True)
    twice = apply_augment(once, 0, True)
    np.testing.assert_array_equal(twice.lr, s.lr)
    np.testing.assert_array_equal(twice.query_idx, s.query_idx)


def test_rotation_consistent_with_queries(rng):
    """Rotated query indices still address the same RGB values pixelwise."""
    pool = [synthesize_image(rng, 160)]
    (s,) = sample_stage1_batch(pool, rng, 1, 16, 64)
    # reconstruct the HR patch implied by the queries is impossible here, so
    # check on the stage-2 path where the HR patch is explicit
    (s2,) = sample_stage2_batch(pool, rng, 1, 16, 2)
    for rot_k in range(4):
        for flip in (False, True):
            out = apply_augment(s2, rot_k, flip)
            # un-rotating the augmented pair reproduces the original
            back_lr = np.rot90(out.lr if not flip else out.lr[:, ::-1],
                               -rot_k, axes=(0, 1))
            np.testing.assert_array_equal(back_lr, s2.lr)


def test_stage1_augment_rgb_lookup_matches(rng):
    """After rot/flip, query_idx into the transformed HR gives the same RGB."""
    hr = synthesize_image(rng, 32)
    idx = np.stack(np.meshgrid(np.arange(32), np.arange(32),
                               indexing="ij"), axis=-1).reshape(-1, 2)[::37]
    sample = TrainSample(lr=np.zeros((16, 16, 3), np.float32), s=2.0,
                         hr_size=(32, 32), query_idx=idx,
                         query_rgb=hr[idx[:, 0], idx[:, 1]])
    for rot_k in range(4):
        for flip in (False, True):
            out = apply_augment(sample, rot_k, flip)
            hr_t = np.rot90(hr, rot_k, axes=(0, 1))
            if flip:
                hr_t = hr_t[:, ::-1]
            np.testing.assert_array_equal(
                hr_t[out.query_idx[:, 0], out.query_idx[:, 1]],
                sample.query_rgb)


def test_augment_random_draw_valid(rng):
    pool = [synthesize_image(rng, 160)]
    (s,) = sample_stage1_batch(pool, rng, 1, 16, 8)
    out = augment(s, rng)
    assert out.lr.shape == s.lr.shape
    assert np.all(out.query_idx >= 0)
    assert np.all(out.query_idx < max(out.hr_size))
