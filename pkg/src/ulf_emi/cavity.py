"""Closed-form EMI field inside a single-side-open rectangular cavity.

The cavity is centered on the origin with its open face at ``x = +lx/2``.
Interference enters through the opening as a below-cutoff aperture mode:

    Hy = H0 S cos(pi y / ly) cos(pi z / lz) exp(-alpha (lx/2 - x))
    Hx = H0 S r_long sin(pi y / ly) cos(pi z / lz) exp(-alpha (lx/2 - x))
    Hz = 0

with ``alpha = sqrt((pi/ly)**2 - (2 pi f0 / c)**2)`` and ``S`` the incidence
coupling scale.  Hx vanishes on the mid-plane y = 0 and flips sign across
it; Hy peaks there.  This is a declared model, not a full-wave solution.
"""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .coilgeom import check_inside
from .errors import (
    DegenerateNormalizationError,
    InvalidInputError,
    InvalidSpecError,
    ModelInvalidError,
    OutOfDomainError,
)

C0 = 299_792_458.0


@dataclass(frozen=True)
class CavitySpec:
    lx: float = 0.88
    ly: float = 0.59
    lz: float = 0.48
    f0: float = 2.23e6
    r_long: float = 0.5

    def __post_init__(self):
        for name in ("lx", "ly", "lz", "f0"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise InvalidSpecError(f"cavity {name} must be positive")
        if not 0 < self.r_long < 1:
            raise InvalidSpecError("r_long must lie in (0, 1)")

    @property
    def half_extent(self) -> np.ndarray:
        return np.array([self.lx, self.ly, self.lz]) / 2

    @property
    def wavelength(self) -> float:
        return C0 / self.f0

    @property
    def quasi_static(self) -> bool:
        """True when the free-space wavelength exceeds ten cavity dimensions."""
        return self.wavelength / max(self.lx, self.ly, self.lz) > 10

    @property
    def wavenumber(self) -> float:
        return 2 * math.pi * self.f0 / C0

    def contains(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return np.all(np.abs(pts) <= self.half_extent + 1e-12, axis=-1)


def decay_constant(cavity: CavitySpec) -> float:
    """Evanescent decay rate (1/m) of the lowest aperture mode."""
    kc2 = (math.pi / cavity.ly) ** 2
    k2 = cavity.wavenumber ** 2
    if kc2 < k2:
        raise ModelInvalidError("working frequency is above the aperture cutoff; the mode propagates")
    return math.sqrt(kc2 - k2)


class RotationAxis(str, Enum):
    ABOUT_E = "about_e"
    ABOUT_H = "about_h"


@dataclass(frozen=True)
class IncidenceSpec:
    """Incident plane wave: base orientation k || -x, H || y, E || z.

    ``angle_deg`` rotates the wave about E (tilting H away from y) or about H
    (tilting k away from the aperture normal).
    """

    axis: RotationAxis = RotationAxis.ABOUT_E
    angle_deg: float = 0.0
    amplitude: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "axis", RotationAxis(self.axis))
        if not 0.0 <= self.angle_deg <= 90.0:
            raise InvalidSpecError("incidence angle must lie in [0, 90] degrees")
        if not np.isfinite(self.amplitude) or self.amplitude < 0:
            raise InvalidSpecError("incident amplitude must be >= 0")


def _cos_law(angle_deg):
    # sin(90 - t) is exactly 0 at 90 deg and exactly 1 at 0 deg
    return math.sin(math.radians(90.0 - angle_deg))


_COUPLING_LAWS = {RotationAxis.ABOUT_E: _cos_law, RotationAxis.ABOUT_H: _cos_law}


def coupling_scale(incidence: IncidenceSpec) -> float:
    """Fraction of the normal-incidence amplitude that couples into the cavity."""
    if not 0.0 <= incidence.angle_deg <= 90.0:
        raise InvalidSpecError("incidence angle must lie in [0, 90] degrees")
    return _COUPLING_LAWS[incidence.axis](incidence.angle_deg)


def emi_field_at(cavity: CavitySpec, incidence: IncidenceSpec, points, check_domain: bool = True) -> np.ndarray:
    """Complex H (A/m) of the aperture mode at ``points`` of shape (..., 3)."""
    pts = np.asarray(points, dtype=float)
    if check_domain:
        check_inside(pts.reshape(-1, 3), -cavity.half_extent, cavity.half_extent, "field point")
    alpha = decay_constant(cavity)
    x, y, z = pts[..., 0], pts[..., 1], pts[..., 2]
    amp = incidence.amplitude * coupling_scale(incidence)
    env = amp * np.cos(math.pi * z / cavity.lz) * np.exp(-alpha * (cavity.lx / 2 - x))
    h = np.zeros(pts.shape, dtype=complex)
    h[..., 0] = env * cavity.r_long * np.sin(math.pi * y / cavity.ly)
    h[..., 1] = env * np.cos(math.pi * y / cavity.ly)
    return h


def cavity_field(cavity: CavitySpec, incidence: IncidenceSpec):
    """Field function bound to one cavity and incidence."""
    return lambda points: emi_field_at(cavity, incidence, points)


def field_checksum(cavity: CavitySpec, incidence: IncidenceSpec | None = None) -> str:
    """Stable identifier of the field a coupling or drive was computed from."""
    parts = [repr(float(getattr(cavity, k))) for k in ("lx", "ly", "lz", "f0", "r_long")]
    if incidence is not None:
        parts += [incidence.axis.value, repr(float(incidence.angle_deg)), repr(float(incidence.amplitude))]
    return hashlib.sha256("|".join(parts).encode()).hexdigest()[:16]


def symmetric_axis(half_width: float, n: int) -> np.ndarray:
    """``n`` evenly spaced samples on [-w, w] that are exact negatives of each other."""
    if n < 1:
        raise InvalidInputError("axis needs at least one sample")
    if n == 1:
        return np.zeros(1)
    half = half_width * (np.arange(n - 1, -1, -2) / (n - 1))[: n // 2]
    mid = [0.0] if n % 2 else []
    return np.concatenate([-half, mid, half[::-1]])


@dataclass(frozen=True, eq=False)
class VectorFieldGrid:
    """Complex H components sampled on a regular lattice (A/m)."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    hx: np.ndarray
    hy: np.ndarray
    hz: np.ndarray
    source: str = ""

    def __post_init__(self):
        axes = [np.asarray(a, dtype=float) for a in (self.x, self.y, self.z)]
        shape = tuple(len(a) for a in axes)
        for a in axes:
            if a.ndim != 1 or (len(a) > 1 and np.any(np.diff(a) <= 0)):
                raise InvalidInputError("grid axes must be strictly increasing 1-D arrays")
        comps = [np.asarray(c, dtype=complex) for c in (self.hx, self.hy, self.hz)]
        for c in comps:
            if c.shape != shape:
                raise InvalidInputError(f"component shape {c.shape} does not match grid {shape}")
            if not np.all(np.isfinite(c)):
                raise InvalidInputError("field grid contains non-finite values")
        for name, a in zip("xyz", axes):
            object.__setattr__(self, name, a)
        for name, c in zip(("hx", "hy", "hz"), comps):
            object.__setattr__(self, name, c)

    @property
    def shape(self):
        return self.hx.shape

    def interpolate(self, points) -> np.ndarray:
        """Trilinear interpolation; points outside the lattice raise OutOfDomainError."""
        from scipy.interpolate import RegularGridInterpolator

        pts = np.asarray(points, dtype=float)
        flat = pts.reshape(-1, 3)
        lo = [a[0] for a in (self.x, self.y, self.z)]
        hi = [a[-1] for a in (self.x, self.y, self.z)]
        check_inside(flat, lo, hi, "interpolation point")
        axes = (self.x, self.y, self.z)
        out = np.empty((len(flat), 3), dtype=complex)
        for i, comp in enumerate((self.hx, self.hy, self.hz)):
            interp = RegularGridInterpolator(axes, comp, method="linear", bounds_error=False, fill_value=None)
            out[:, i] = interp(flat)
        return out.reshape(pts.shape)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for a in (self.x, self.y, self.z, self.hx, self.hy, self.hz):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()[:16]

    def to_csv(self, path) -> None:
        xx, yy, zz = np.meshgrid(self.x, self.y, self.z, indexing="ij")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "z", "hx_re", "hx_im", "hy_re", "hy_im", "hz_re", "hz_im"])
            for idx in np.ndindex(self.shape):
                w.writerow([
                    f"{xx[idx]:.6g}", f"{yy[idx]:.6g}", f"{zz[idx]:.6g}",
                    *(f"{v:.9g}" for c in (self.hx, self.hy, self.hz) for v in (c[idx].real, c[idx].imag)),
                ])


def emi_field(cavity: CavitySpec, incidence: IncidenceSpec, x, y, z) -> VectorFieldGrid:
    """Sample the aperture-mode field on the lattice spanned by ``x``, ``y``, ``z``."""
    x, y, z = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (x, y, z))
    for name, axis, half in zip("xyz", (x, y, z), cavity.half_extent):
        if np.any(np.abs(axis) > half + 1e-12):
            raise OutOfDomainError(f"grid axis {name} leaves the cavity interior")
    xx, yy, zz = np.meshgrid(x, y, z, indexing="ij")
    h = emi_field_at(cavity, incidence, np.stack([xx, yy, zz], axis=-1), check_domain=False)
    src = f"aperture mode {incidence.axis.value} {incidence.angle_deg:g} deg, H0={incidence.amplitude:g} A/m"
    return VectorFieldGrid(x, y, z, h[..., 0], h[..., 1], h[..., 2], source=src)


# --- virtual mapping campaign -------------------------------------------------


@dataclass(frozen=True)
class CampaignSpec:
    """Probe lattice and repetition protocol of a field-mapping campaign.

    The default is 9 x 5 x 5 = 225 points spread over 0.60 x 0.50 x 0.20 m,
    each read five times.  ``probe_noise`` is the relative additive noise of
    one reading (fraction of the incident amplitude).
    """

    extent: tuple = (0.60, 0.50, 0.20)
    counts: tuple = (9, 5, 5)
    center: tuple = (0.0, 0.0, 0.0)
    repeats: int = 5
    probe_noise: float = 0.0
    reference_positions: tuple = ((0.70, 0.0, 0.30), (0.70, 0.25, 0.30))

    def axes(self):
        return [c + symmetric_axis(e / 2, n) for c, e, n in zip(self.center, self.extent, self.counts)]


@dataclass(frozen=True)
class DriftModel:
    """Multiplicative slow random walk on the source amplitude.

    The walk is rescaled so its largest excursion equals ``amplitude``
    (0.2 means the source wanders within +-20 %).
    """

    amplitude: float = 0.0
    step: float = 1.0

    def factors(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.amplitude == 0 or n == 0:
            return np.ones(n)
        walk = np.cumsum(rng.normal(0.0, self.step, n))
        walk -= walk.mean()
        peak = np.max(np.abs(walk))
        if peak == 0:
            return np.ones(n)
        return 1.0 + self.amplitude * walk / peak


@dataclass(frozen=True, eq=False)
class MappingCampaign:
    """Result of a virtual mapping campaign.

    ``raw`` holds every reading (points x repeats x 2 components, Hx and Hy),
    ``reference`` the simultaneous external probe readings (repeats in time
    order x 2 probes) and ``normalized`` the per-point mean of raw readings
    divided by the simultaneous reference, rescaled to A/m.
    """

    points: np.ndarray
    raw: np.ndarray
    reference: np.ndarray
    normalized: np.ndarray
    axes: tuple

    def component_grid(self, comp: int) -> np.ndarray:
        return self.normalized[:, comp].reshape(tuple(len(a) for a in self.axes))


def run_mapping_campaign(
    cavity: CavitySpec,
    incidence: IncidenceSpec,
    campaign: CampaignSpec = CampaignSpec(),
    drift: DriftModel = DriftModel(),
    rng_seed: int = 0,
) -> MappingCampaign:
    """Simulate the probe campaign with source drift and reference normalization.

    Points are visited in raster order; each reading happens at its own time
    step, where the source amplitude carries the drift factor.  The external
    probes see the incident wave directly (amplitude ``H0``) at the same
    instant, so dividing by them removes the drift.
    """
    rng = np.random.default_rng(rng_seed)
    axes = campaign.axes()
    xx, yy, zz = np.meshgrid(*axes, indexing="ij")
    points = np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])
    check_inside(points, -cavity.half_extent, cavity.half_extent, "campaign point")
    truth = emi_field_at(cavity, incidence, points)[:, :2]
    n_pts, reps = len(points), campaign.repeats
    factors = drift.factors(n_pts * reps, rng).reshape(n_pts, reps)
    h0 = incidence.amplitude
    noise = campaign.probe_noise * h0
    raw = truth[:, None, :] * factors[..., None]
    reference = np.repeat((h0 * factors)[..., None], 2, axis=-1).astype(complex)
    if noise > 0:
        raw = raw + noise * (rng.standard_normal(raw.shape) + 1j * rng.standard_normal(raw.shape)) / math.sqrt(2)
        reference = reference + noise * (
            rng.standard_normal(reference.shape) + 1j * rng.standard_normal(reference.shape)
        ) / math.sqrt(2)
    if np.any(reference[..., 0] == 0):
        raise DegenerateNormalizationError("external reference reading is zero")
    ratio = raw / reference[..., :1]
    normalized = ratio.mean(axis=1) * h0
    return MappingCampaign(points, raw, reference, normalized, tuple(axes))
