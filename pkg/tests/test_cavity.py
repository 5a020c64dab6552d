import math

import numpy as np
import pytest

from ulf_emi.cavity import (
    CampaignSpec,
    CavitySpec,
    DriftModel,
    IncidenceSpec,
    coupling_scale,
    decay_constant,
    emi_field,
    emi_field_at,
    run_mapping_campaign,
    symmetric_axis,
)
from ulf_emi.errors import (
    DegenerateNormalizationError,
    InvalidSpecError,
    ModelInvalidError,
    OutOfDomainError,
)

CAV = CavitySpec()


def field(points, angle=0.0, axis="about_e", cav=CAV):
    return emi_field_at(cav, IncidenceSpec(axis, angle, 1.0), np.asarray(points, float))


def test_hx_vanishes_on_center_plane():
    pts = np.column_stack([np.linspace(-0.44, 0.44, 23), np.zeros(23), np.zeros(23)])
    assert np.all(field(pts)[:, 0] == 0)


def test_hy_center_to_edge_ratio():
    ly = CAV.ly
    h = field([[0, 0, 0], [0, 0.45 * ly, 0]])
    assert abs(h[0, 1] / h[1, 1]) == pytest.approx(1 / math.cos(0.45 * math.pi), rel=1e-12)
    assert abs(h[0, 1] / h[1, 1]) == pytest.approx(6.39, abs=5e-3)
    ys = np.linspace(0, 0.5 * ly, 30)
    prof = np.abs(field(np.column_stack([np.zeros(30), ys, np.zeros(30)]))[:, 1])
    assert np.all(np.diff(prof) < 0)


def test_default_decay_constant():
    k = 2 * math.pi * 2.23e6 / 2.998e8
    oracle = math.sqrt((math.pi / 0.59) ** 2 - k ** 2)
    assert decay_constant(CAV) == pytest.approx(oracle, rel=1e-4)
    assert decay_constant(CAV) == pytest.approx(5.32, abs=0.01)
    x_ap = CAV.lx / 2
    h = field([[x_ap, 0, 0], [x_ap - 0.2, 0, 0]])
    assert abs(h[1, 1] / h[0, 1]) == pytest.approx(math.exp(-0.2 * oracle), rel=1e-4)
    assert abs(h[1, 1] / h[0, 1]) == pytest.approx(0.345, abs=1e-3)


def test_above_cutoff_is_invalid():
    cav = CavitySpec(ly=0.59, f0=300e6)
    with pytest.raises(ModelInvalidError):
        decay_constant(cav)
    with pytest.raises(ModelInvalidError):
        field([[0, 0, 0]], cav=cav)


def test_quasi_static_flag():
    assert CAV.quasi_static
    assert not CavitySpec(f0=40e6).quasi_static


@pytest.mark.parametrize("kwargs", [{"lx": 0}, {"ly": -1}, {"f0": 0}, {"r_long": 1.0}])
def test_invalid_cavity(kwargs):
    with pytest.raises(InvalidSpecError):
        CavitySpec(**kwargs)


def test_out_of_domain_point():
    with pytest.raises(OutOfDomainError):
        field([[0.45, 0, 0]])
    with pytest.raises(OutOfDomainError):
        emi_field(CAV, IncidenceSpec(), [0.0, 0.5], [0.0], [0.0])


@pytest.mark.parametrize("axis", ["about_e", "about_h"])
def test_coupling_scale_examples(axis):
    assert coupling_scale(IncidenceSpec(axis, 0.0)) == 1.0
    assert coupling_scale(IncidenceSpec(axis, 60.0)) == pytest.approx(0.5, abs=1e-15)
    s = [coupling_scale(IncidenceSpec(axis, a)) for a in np.linspace(0, 90, 31)]
    assert np.all(np.diff(s) < 0)


def test_coupling_scale_at_grazing():
    assert coupling_scale(IncidenceSpec("about_e", 90.0)) == 0.0


@pytest.mark.parametrize("angle", [-1.0, 90.5])
def test_angle_out_of_range(angle):
    with pytest.raises(InvalidSpecError):
        IncidenceSpec("about_e", angle)


def test_symmetry_about_center_plane():
    rng = np.random.default_rng(3)
    pts = rng.uniform(-1, 1, (200, 3)) * CAV.half_extent
    a = field(pts)
    b = field(pts * [1, -1, 1])
    assert np.array_equal(a[:, 0], -b[:, 0])
    assert np.array_equal(a[:, 1], b[:, 1])
    assert np.all(a[:, 2] == 0)


def test_depth_decay_step_ratio():
    alpha = decay_constant(CAV)
    xs = symmetric_axis(CAV.lx / 2, 45)
    for y, z in [(0.0, 0.0), (0.1, -0.05), (-0.2, 0.15)]:
        pts = np.column_stack([xs, np.full(45, y), np.full(45, z)])
        mag = np.linalg.norm(field(pts), axis=1)
        ratio = mag[:-1] / mag[1:]
        assert np.allclose(ratio, np.exp(-alpha * np.diff(xs)), rtol=1e-12, atol=0)


def test_hy_dominates_inside_bound():
    u_bound = math.atan(1 / CAV.r_long)
    assert u_bound / math.pi == pytest.approx(0.352, abs=1e-3)
    ly = CAV.ly
    ys = np.linspace(-0.99, 0.99, 101) * u_bound / math.pi * ly
    h = field(np.column_stack([np.zeros(101), ys, np.zeros(101)]))
    assert np.all(np.abs(h[:, 1]) > np.abs(h[:, 0]))
    outside = field([[0, 0.36 * ly, 0]])
    assert abs(outside[0, 1]) < abs(outside[0, 0])


def test_profile_shape_independent_of_angle():
    ys = np.linspace(-0.28, 0.28, 29)
    pts = np.column_stack([np.full(29, 0.1), ys, np.full(29, 0.05)])
    base = field(pts)[:, 1]
    base = base / np.max(np.abs(base))
    for angle in (15, 45, 75):
        p = field(pts, angle)[:, 1]
        assert np.allclose(p / np.max(np.abs(p)), base, rtol=0, atol=1e-12)


def test_grid_matches_pointwise_field():
    xs, ys, zs = symmetric_axis(0.4, 5), symmetric_axis(0.25, 7), symmetric_axis(0.2, 3)
    grid = emi_field(CAV, IncidenceSpec(), xs, ys, zs)
    assert grid.shape == (5, 7, 3)
    pts = np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), axis=-1)
    direct = field(pts.reshape(-1, 3))
    assert np.allclose(grid.hx.ravel(), direct[:, 0], rtol=1e-12)
    assert np.allclose(grid.hy.ravel(), direct[:, 1], rtol=1e-12)


def test_campaign_without_drift_is_exact():
    camp = run_mapping_campaign(CAV, IncidenceSpec(), CampaignSpec(), DriftModel(0.0), rng_seed=1)
    truth = field(camp.points)[:, :2]
    assert len(camp.points) == 225
    assert camp.raw.shape[1] == 5
    # exact up to the rounding of a five-term mean
    np.testing.assert_allclose(camp.normalized, truth, rtol=4e-16, atol=0)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_campaign_drift_is_normalized_away(seed):
    inc = IncidenceSpec(amplitude=3.0)
    clean = run_mapping_campaign(CAV, inc, CampaignSpec(), DriftModel(0.0), rng_seed=seed)
    drift = run_mapping_campaign(CAV, inc, CampaignSpec(), DriftModel(0.2), rng_seed=seed)
    spread = np.abs(drift.reference[..., 0]) / 3.0
    assert spread.max() == pytest.approx(1.2, abs=1e-9) or spread.min() == pytest.approx(0.8, abs=1e-9)
    err = np.abs(drift.normalized - clean.normalized)
    assert np.max(err) <= 5e-3 * np.max(np.abs(clean.normalized))


def test_campaign_reproduces_center_profiles():
    camp = run_mapping_campaign(CAV, IncidenceSpec(), CampaignSpec(), DriftModel(0.2), rng_seed=5)
    hx = np.abs(camp.component_grid(0))
    hy = np.abs(camp.component_grid(1))
    mid = 2  # y index of the center plane in a 5-point axis
    assert np.all(hx[:, mid, :] < 1e-12)
    assert np.all(hy[:, mid, :] >= hy.max(axis=1) - 1e-12)


def test_campaign_deterministic():
    a = run_mapping_campaign(CAV, IncidenceSpec(), CampaignSpec(probe_noise=0.01), DriftModel(0.1), 9)
    b = run_mapping_campaign(CAV, IncidenceSpec(), CampaignSpec(probe_noise=0.01), DriftModel(0.1), 9)
    assert np.array_equal(a.normalized, b.normalized)


def test_zero_reference_rejected():
    with pytest.raises(DegenerateNormalizationError):
        run_mapping_campaign(CAV, IncidenceSpec(amplitude=0.0), CampaignSpec(), DriftModel(0.0), 0)
