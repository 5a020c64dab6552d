import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ulf_emi.acquisition import (
    ChannelSet,
    EMITimeline,
    Interferer,
    SequenceParams,
    coloration_factors,
    head_phantom,
    inject_emi,
    simulate_clean_kspace,
)
from ulf_emi.anc_post import (
    FLOOR_DB,
    BandPartition,
    apply_cancellation,
    denoise,
    emi_suppression_metric,
    estimate_transfer,
    select_periphery,
)
from ulf_emi.errors import DegenerateBandWarning, InvalidInputError, PolicyError
from ulf_emi.kspace import KSpaceMatrix


def cnoise(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def band_mix(ref, per_band, part):
    """Apply per-band factors to time-domain rows."""
    return np.fft.ifft(np.fft.fft(ref, axis=-1) * part.expand(per_band), axis=-1)


def test_partition_covers_bins():
    p = BandPartition.equal(128, 8)
    assert p.n_bands == 8 and p.n_bins == 128
    bins = np.concatenate([np.arange(r.start, r.stop) for r in p.ranges()])
    assert np.array_equal(bins, np.arange(128))
    assert all(len(r) == 16 for r in p.ranges())
    with pytest.raises(InvalidInputError):
        BandPartition((0, 5, 5, 8))
    with pytest.raises(InvalidInputError):
        BandPartition.equal(8, 9)


def test_periphery_policies():
    assert select_periphery(128, "first-rows", 1) == [0]
    assert select_periphery(128, "outer-phase-encodes", 2) == [0, 127]
    assert select_periphery(128, "outer-phase-encodes", 3) == [0, 1, 127]
    assert select_periphery(KSpaceMatrix(np.zeros((16, 8)), 1e-5), "first-rows", 3) == [0, 1, 2]


@pytest.mark.parametrize("policy,n", [("first-rows", 0), ("first-rows", 128), ("outer-phase-encodes", 200),
                                      ("center", 1)])
def test_periphery_rejected(policy, n):
    with pytest.raises(PolicyError):
        select_periphery(128, policy, n)


def test_proportional_reference():
    rng = np.random.default_rng(0)
    ref = cnoise(rng, (1, 128))
    m = estimate_transfer(2.5 * ref, [ref], BandPartition.equal(128, 8), ridge=0.0)
    assert np.allclose(m.factors, 2.5, rtol=0, atol=1e-12)


def test_per_band_factors_recovered():
    rng = np.random.default_rng(1)
    part = BandPartition.equal(128, 8)
    ref = cnoise(rng, (1, 128))
    c = np.arange(8) + 1.0
    m = estimate_transfer(band_mix(ref, c, part), [ref], part, ridge=0.0)
    assert np.allclose(m.factors[:, 0], c, rtol=0, atol=1e-10)


def test_two_reference_mixing():
    rng = np.random.default_rng(2)
    part = BandPartition.equal(64, 4)
    r1, r2 = cnoise(rng, (2, 64)), cnoise(rng, (2, 64))
    c = cnoise(rng, (4, 2))
    rf = band_mix(r1, c[:, 0], part) + band_mix(r2, c[:, 1], part)
    m = estimate_transfer(rf, [r1, r2], part, ridge=1e-12)
    assert np.max(np.abs(m.factors - c)) < 1e-8


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([1, 4, 8, 16]), st.integers(0, 2 ** 32 - 1), st.integers(1, 3))
def test_exact_recovery_property(n_bands, seed, n_refs):
    rng = np.random.default_rng(seed)
    part = BandPartition.equal(64, n_bands)
    clean = np.zeros((16, 64), complex)
    clean[4:12] = cnoise(rng, (8, 64))  # periphery rows carry no MR energy
    refs = [cnoise(rng, (16, 64)) for _ in range(n_refs)]
    c = cnoise(rng, (n_bands, n_refs))
    rf = clean + sum(band_mix(r, c[:, i], part) for i, r in enumerate(refs))
    out, model = denoise(KSpaceMatrix(rf, 1e-5), [KSpaceMatrix(r, 1e-5) for r in refs], part,
                         "outer-phase-encodes", 4, ridge=0.0)
    assert np.max(np.abs(model.factors - c)) <= 1e-10 * np.max(np.abs(c))
    assert np.max(np.abs(out.data - clean)) <= 1e-10 * np.max(np.abs(rf))


def test_linearity_in_input():
    rng = np.random.default_rng(3)
    part = BandPartition.equal(32, 4)
    rf = KSpaceMatrix(cnoise(rng, (8, 32)), 1e-5)
    ref = KSpaceMatrix(cnoise(rng, (8, 32)), 1e-5)
    model = estimate_transfer(rf.data[:1], [ref.data[:1]], part)
    a = 1.7 - 0.4j
    lhs = apply_cancellation(rf.with_data(a * rf.data), [ref], model.scaled(a)).data
    rhs = a * apply_cancellation(rf, [ref], model).data
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)


def test_non_amplification_on_fitted_rows():
    part = BandPartition.equal(64, 8)
    ratios = []
    for trial in range(64):
        rng = np.random.default_rng(100 + trial)
        rf = KSpaceMatrix(cnoise(rng, (8, 64)), 1e-5)
        refs = [KSpaceMatrix(cnoise(rng, (8, 64)), 1e-5) for _ in range(2)]
        out, model = denoise(rf, refs, part, "first-rows", 1, ridge=1e-3)
        assert model.ridge > 0
        rms_in = np.sqrt(np.mean(np.abs(rf.data[0]) ** 2))
        rms_out = np.sqrt(np.mean(np.abs(out.data[0]) ** 2))
        assert rms_out <= rms_in + 1e-12
        ratios.append(rms_out / rms_in)
    assert np.mean(ratios) < 1


def test_zero_references_warn_and_pass_through():
    rng = np.random.default_rng(4)
    rf = KSpaceMatrix(cnoise(rng, (8, 32)), 1e-5)
    ref = KSpaceMatrix(np.zeros((8, 32)), 1e-5)
    with pytest.warns(DegenerateBandWarning):
        out, model = denoise(rf, [ref], BandPartition.equal(32, 4))
    assert model.degenerate_bands == (0, 1, 2, 3)
    assert np.all(model.factors == 0)
    assert np.allclose(out.data, rf.data, rtol=0, atol=1e-15)


def test_constant_coupling_recovers_clean():
    rng = np.random.default_rng(5)
    seq = SequenceParams(n_read=64, n_phase=64, tr=1e-3)
    clean = simulate_clean_kspace(head_phantom(64).image, 1.0, seq).data
    clean[0] = 0  # periphery noise-only
    ref = cnoise(rng, (64, 64))
    c = 0.8 - 2.1j
    rf = KSpaceMatrix(clean + c * ref, seq.dwell)
    out, _ = denoise(rf, [KSpaceMatrix(ref, seq.dwell)], BandPartition.equal(64, 8), ridge=0.0)
    assert np.max(np.abs(out.data - clean)) <= 1e-10 * np.max(np.abs(clean))
    # central row keeps its signal
    assert np.max(np.abs(out.data[32] - clean[32])) < 1e-10 * np.max(np.abs(clean[32]))


def test_colored_coupling_without_thermal_noise():
    seq = SequenceParams(n_read=128, n_phase=64, averages=1, tr=2e-3)
    part = BandPartition.equal(128, 8)
    tl = EMITimeline([Interferer("band_noise", (-45e3, 45e3), seed=1),
                      Interferer("harmonic_comb", (-37e3, 9.1e3), amplitude=0.3, seed=2)], seq.duration)
    col = coloration_factors(2, part, 0.12, 3)
    # one shared spatial mode, so the receive/reference ratio is a single factor per band
    ch = ChannelSet(("rx", "ref"), ("receive", "reference"), [[2.0, 2.0], [0.3j, 0.3j]], col, part, 0.0)
    img = np.zeros((64, 128))
    img[20:44, 40:88] = 1.0
    clean = simulate_clean_kspace(img, 1.0, seq)
    k0 = clean.data.copy()
    k0[0] = 0
    acq = inject_emi(clean.with_data(k0), tl, ch, seq)
    rf, ref = acq.kspace("rx"), acq.kspace("ref")
    out, _ = denoise(rf, [ref], part)
    metric = emi_suppression_metric(rf, out, k0)
    assert metric.residual_db <= -40


def test_suppression_metric_edge_cases():
    rng = np.random.default_rng(6)
    clean = cnoise(rng, (4, 16))
    noisy = clean + cnoise(rng, (4, 16))
    assert emi_suppression_metric(noisy, clean, clean).residual_db == FLOOR_DB
    assert emi_suppression_metric(noisy, noisy, clean).residual_db == 0.0
    half = clean + 0.5 * (noisy - clean)
    assert emi_suppression_metric(noisy, half, clean).residual_db == pytest.approx(-6.0206, abs=1e-3)
    with pytest.raises(InvalidInputError):
        emi_suppression_metric(noisy, noisy[:2], clean)


def test_dimension_mismatch():
    part = BandPartition.equal(32, 4)
    rf = KSpaceMatrix(cnoise(np.random.default_rng(8), (8, 32)), 1e-5)
    model = estimate_transfer(rf.data[:1], [rf.data[:1]], part)
    with pytest.raises(InvalidInputError):
        apply_cancellation(rf, [KSpaceMatrix(np.ones((8, 16)), 1e-5)], model)
    with pytest.raises(InvalidInputError):
        estimate_transfer(rf.data[:1], [np.ones((1, 16))], part)


def test_model_json(tmp_path):
    rng = np.random.default_rng(7)
    part = BandPartition.equal(32, 4)
    ref = cnoise(rng, (1, 32))
    model = estimate_transfer(3 * ref, [ref], part, periphery_rows=[0])
    model.to_json(tmp_path / "m.json")
    d = json.loads((tmp_path / "m.json").read_text())
    assert d["band_edges"] == [0, 8, 16, 24, 32]
    assert np.allclose(d["factors_re"], 3.0)


def test_default_saddle_residual_twice_solenoid(default_run):
    _, metrics = default_run
    assert 1.5 <= metrics["post_residual_ratio"] <= 2.5
