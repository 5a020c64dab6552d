import itertools

import numpy as np
import pytest

from ulf_emi.errors import DegenerateError, InvalidInputError
from ulf_emi.fusion_metrics import (
    ROI,
    ReconImage,
    fuse,
    inverse_variance_weights,
    noise_profile_1d,
    noise_sigma,
    reconstruct,
    snr_db,
    trace_mismatch,
)
from ulf_emi.kspace import KSpaceMatrix, image_to_kspace

SIG = ROI(20, 44, 20, 44)
NOISE = ROI(0, 8, 0, 64)


def phantom(n=64):
    img = np.zeros((n, n))
    img[16:48, 16:48] = 10.0
    return img


def cnoise(rng, shape, sigma=1.0):
    return sigma * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def test_snr_definition_examples():
    rng = np.random.default_rng(0)
    img = np.zeros((64, 64))
    img[SIG.row0:SIG.row1, SIG.col0:SIG.col1] = 10.0
    noise = rng.standard_normal((8, 64))
    noise = (noise - noise.mean()) / noise.std()
    for scale, expected in ((1.0, 20.0), (10.0, 0.0)):
        im = img.copy()
        im[:8] = 50 + scale * noise  # offset keeps the magnitude equal to the value
        rep = snr_db(im, SIG, NOISE)
        assert rep.mu_signal == pytest.approx(10.0)
        assert rep.sigma_noise == pytest.approx(scale)
        assert rep.snr_db == pytest.approx(expected, abs=1e-9)


def test_snr_scale_invariant():
    rng = np.random.default_rng(1)
    img = phantom() + cnoise(rng, (64, 64))
    base = snr_db(img, SIG, NOISE).snr_db
    for k in (1e-3, 0.7, 42.0):
        assert snr_db(k * img, SIG, NOISE).snr_db == pytest.approx(base, abs=1e-9)


def test_snr_errors():
    img = phantom()
    with pytest.raises(DegenerateError):
        snr_db(img, SIG, NOISE)
    noisy = img + 1.0 * np.random.default_rng(2).standard_normal(img.shape)
    with pytest.raises(InvalidInputError):
        snr_db(noisy, SIG, ROI(30, 50, 0, 64))
    with pytest.raises(InvalidInputError):
        snr_db(noisy, SIG, ROI(60, 70, 0, 8))
    with pytest.raises(InvalidInputError):
        snr_db(noisy, SIG, ROI(0, 3, 0, 5))


def test_dc_kspace_gives_uniform_image():
    k = np.zeros((16, 32), complex)
    k[8, 16] = 5.0
    img = reconstruct(KSpaceMatrix(k, 1e-5)).data
    assert np.allclose(img, img[0, 0], rtol=0, atol=1e-12)
    assert abs(img[0, 0]) > 0


def test_reconstruct_round_trip_and_parseval():
    rng = np.random.default_rng(3)
    k = cnoise(rng, (32, 64))
    img = reconstruct(KSpaceMatrix(k, 1e-5), ["raw"])
    assert img.provenance == ("raw",)
    assert np.max(np.abs(image_to_kspace(img.data) - k)) < 1e-10
    assert np.sum(np.abs(img.data) ** 2) == pytest.approx(np.sum(np.abs(k) ** 2), rel=1e-10)
    assert np.max(np.abs(img.to_kspace().data - k)) < 1e-10


def test_weights_normalized():
    rng = np.random.default_rng(4)
    for _ in range(50):
        w = inverse_variance_weights(rng.uniform(1e-3, 1e3, rng.integers(1, 6)))
        assert abs(w.sum() - 1) <= 1e-12
        assert np.all(w >= 0)
    with pytest.raises(DegenerateError):
        inverse_variance_weights([1.0, 0.0])


def test_weights_grid_search_optimal():
    rng = np.random.default_rng(5)
    grid = np.linspace(0, 1, 101)
    for _ in range(10):
        s = rng.uniform(0.2, 5, 3)
        w = inverse_variance_weights(s)
        best = min(a * a * s[0] ** 2 + b * b * s[1] ** 2 + (1 - a - b) ** 2 * s[2] ** 2
                   for a, b in itertools.product(grid, grid) if a + b <= 1 + 1e-12)
        assert np.sum(w ** 2 * s ** 2) <= best + 1e-9


def _pair(rng, sigmas, n=64):
    base = phantom(n)
    return [ReconImage(base + cnoise(rng, base.shape, s), f"c{i}") for i, s in enumerate(sigmas)]


def test_equal_noise_fusion_gain():
    gains = []
    for trial in range(64):
        rng = np.random.default_rng(1000 + trial)
        imgs = _pair(rng, (1.0, 1.0))
        sig = [noise_sigma(im, NOISE) for im in imgs]
        fused, fw = fuse(imgs, sig, SIG)
        single = np.mean([snr_db(im, SIG, NOISE).snr_db for im in imgs])
        gains.append(snr_db(fused, SIG, NOISE).snr_db - single)
    assert np.mean(gains) == pytest.approx(3.01, abs=0.3)


def test_fused_not_worse_than_best_channel():
    for trial in range(32):
        rng = np.random.default_rng(2000 + trial)
        s = rng.uniform(0.5, 4.0, 2)
        imgs = _pair(rng, s)
        fused, _ = fuse(imgs, [noise_sigma(im, NOISE) for im in imgs], SIG)
        best = max(snr_db(im, SIG, NOISE).snr_db for im in imgs)
        assert snr_db(fused, SIG, NOISE).snr_db >= best - 0.1


def test_alignment_handles_phase_and_scale():
    rng = np.random.default_rng(6)
    a, b = _pair(rng, (1.0, 1.0))
    b = ReconImage(b.data * (0.5 * np.exp(1j * 1.2)), "c1")
    fused, fw = fuse([a, b], [noise_sigma(a, NOISE), noise_sigma(b, NOISE)], SIG)
    assert abs(fw.alignment[1]) == pytest.approx(2.0, rel=0.02)
    assert np.angle(fw.alignment[1]) == pytest.approx(-1.2, abs=0.02)
    assert fw.weights == pytest.approx([0.5, 0.5], abs=0.05)


def test_infinite_noise_limit():
    rng = np.random.default_rng(7)
    a, b = _pair(rng, (1.0, 1.0))
    fused, fw = fuse([a, b], [1.0, 1e12])
    assert fw.weights[0] == pytest.approx(1.0, abs=1e-12)
    assert np.max(np.abs(fused.data - a.data)) < 1e-9
    fused, fw = fuse([a, b], [1.0, np.inf])
    assert np.array_equal(fw.weights, [1.0, 0.0])


def test_single_channel_exact():
    rng = np.random.default_rng(8)
    (a,) = _pair(rng, (1.0,))
    fused, fw = fuse([a], [0.3])
    assert np.array_equal(fused.data, a.data)
    assert fw.weights.tolist() == [1.0]


def test_fusion_errors():
    rng = np.random.default_rng(9)
    a, b = _pair(rng, (1.0, 1.0))
    with pytest.raises(DegenerateError):
        fuse([a, b], [1.0, 0.0])
    with pytest.raises(InvalidInputError):
        fuse([a, ReconImage(np.ones((8, 8)))], [1.0, 1.0])
    with pytest.raises(InvalidInputError):
        fuse([], [])


def test_flat_trace_without_emi():
    rng = np.random.default_rng(10)
    rows = cnoise(rng, (128, 128), 0.7)
    trace = noise_profile_1d(rows)
    assert trace.shape == (128,)
    assert np.mean(trace) == pytest.approx(0.7, rel=0.02)
    assert np.all(np.abs(trace / 0.7 - 1) < 0.25)


def test_trace_with_clean_subtraction_and_mismatch():
    rng = np.random.default_rng(11)
    clean = cnoise(rng, (4, 32), 5.0)
    noise = cnoise(rng, (4, 32))
    assert np.allclose(noise_profile_1d(clean + noise, clean), np.sqrt(np.mean(np.abs(noise) ** 2, axis=1)))
    r = np.array([1.0, 2.0, 2.0])
    assert trace_mismatch(r, r) == 0
    assert trace_mismatch(1.1 * r, r) == pytest.approx(0.1)
    with pytest.raises(InvalidInputError):
        trace_mismatch(r, r[:2])


def test_default_scenario_snr_imbalance(default_run):
    _, metrics = default_run
    assert metrics["snr_db_ratio_raw"] == pytest.approx(2.0, rel=0.25)
