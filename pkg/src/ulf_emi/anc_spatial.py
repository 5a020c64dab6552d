"""Front-end spatial cancellation: detection coil -> control chain -> cancellation winding.

Phasors are narrowband at the working frequency.  A detection coil turns
flux into an EMF ``V = j w Phi`` (leading the flux by 90 deg); the control
chain scales it by ``g`` and delays it by ``phi`` degrees,
``i = g V exp(-j phi)``.  With real-positive flux-per-ampere factors a
270 deg delay produces a cancellation field in anti-phase with the EMI.
"""
from __future__ import annotations

import cmath
import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .cavity import C0
from .coilgeom import CoilSpec, as_field_function, check_inside, field_at, flux_through, realize_coil
from .errors import InvalidSpecError, OutOfDomainError, UncancelableError


@dataclass(frozen=True)
class ControlChain:
    """Gain (A/V), phase delay (deg at f0) and additive output noise (A/sqrt(Hz))."""

    gain: float = 0.0
    phase_deg: float = 270.0
    noise_density: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.gain) or self.gain < 0:
            raise InvalidSpecError("chain gain must be >= 0")
        if not 0.0 <= self.phase_deg < 360.0:
            raise InvalidSpecError("chain phase must lie in [0, 360)")
        if self.noise_density < 0:
            raise InvalidSpecError("noise density must be >= 0")

    @property
    def transfer(self) -> complex:
        """Complex amperes per volt."""
        return self.gain * cmath.exp(-1j * math.radians(self.phase_deg))

    def mistuned(self, phase_error_deg: float = 0.0, gain_ratio: float = 1.0) -> "ControlChain":
        """Chain whose delay is off by ``phase_error_deg`` and gain scaled by ``gain_ratio``."""
        return ControlChain(self.gain * gain_ratio, (self.phase_deg - phase_error_deg) % 360.0, self.noise_density)


@dataclass(frozen=True)
class CancellationState:
    """Flux bookkeeping in the target coil: residual = emi + drive * per-ampere flux."""

    emi_flux: complex
    cancel_flux_per_amp: complex
    drive: complex

    @property
    def residual(self) -> complex:
        return self.emi_flux + self.drive * self.cancel_flux_per_amp

    @property
    def residual_ratio(self) -> float:
        if self.emi_flux == 0:
            return 0.0 if self.residual == 0 else math.inf
        return abs(self.residual) / abs(self.emi_flux)


def detect_voltage(flux, f0: float):
    """EMF of a pickup coil: ``V = j 2 pi f0 Phi``."""
    if f0 <= 0:
        raise InvalidSpecError("frequency must be positive")
    return 1j * 2 * math.pi * f0 * flux


def drive_current(v, chain: ControlChain):
    """Cancellation current produced by the chain for detector voltage ``v``."""
    return chain.transfer * v


@dataclass(frozen=True)
class DriveSolution:
    current: complex
    chain: ControlChain | None
    residual_ratio: float
    state: CancellationState


def optimize_drive(emi_flux: complex, cancel_flux_per_amp: complex, detect_flux: complex | None = None,
                   f0: float | None = None) -> DriveSolution:
    """Drive current that nulls the flux through the target coil.

    ``i* = -emi_flux / cancel_flux_per_amp``.  When the detector flux and
    frequency are given, ``i*`` is also expressed as the chain setting
    ``(g, phi)`` that produces it from the detector EMF.
    """
    if cancel_flux_per_amp == 0:
        raise UncancelableError("cancellation winding couples no flux into the target coil")
    current = -complex(emi_flux) / complex(cancel_flux_per_amp)
    state = CancellationState(complex(emi_flux), complex(cancel_flux_per_amp), current)
    chain = None
    if detect_flux is not None and f0 is not None:
        v = detect_voltage(complex(detect_flux), f0)
        if v == 0:
            raise UncancelableError("detection coil sees no interference flux")
        t = current / v
        phase = (-math.degrees(cmath.phase(t))) % 360.0
        if phase >= 360.0:
            phase = 0.0
        chain = ControlChain(abs(t), phase)
    return DriveSolution(current, chain, state.residual_ratio, state)


def mistuned_residual(phase_error_deg: float = 0.0, gain_ratio: float = 1.0) -> float:
    """Residual flux ratio |1 - a e^{j d}| left by a chain off in gain and phase."""
    return abs(1 - gain_ratio * cmath.exp(1j * math.radians(phase_error_deg)))


def propagation_phase_deg(distance: float, f0: float) -> float:
    """Phase accumulated by a free-space wave over ``distance`` (diagnostic only)."""
    return 360.0 * distance * f0 / C0


def sphere_points(center, radius: float, spacing: float) -> np.ndarray:
    """Cubic-lattice points inside a sphere, symmetric about its center."""
    n = int(math.floor(radius / spacing))
    ax = spacing * np.arange(-n, n + 1)
    xx, yy, zz = np.meshgrid(ax, ax, ax, indexing="ij")
    pts = np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])
    pts = pts[np.linalg.norm(pts, axis=1) <= radius + 1e-12]
    return pts + np.asarray(center, dtype=float)


@dataclass(frozen=True, eq=False)
class CancellationReport:
    points: np.ndarray
    hy_before: np.ndarray
    hy_after: np.ndarray
    emi_flux: complex
    residual_flux: complex
    drive: complex
    extras: dict = field(default_factory=dict)

    @property
    def flux_reduction(self) -> float:
        if self.emi_flux == 0:
            return 0.0
        return 1.0 - abs(self.residual_flux) / abs(self.emi_flux)

    def statistics(self) -> dict:
        def stats(a):
            return {"min": float(a.min()), "max": float(a.max()), "mean": float(a.mean())}

        return {
            "n_points": int(len(self.points)),
            "hy_before": stats(self.hy_before),
            "hy_after": stats(self.hy_after),
            "field_reduction_mean": float(1 - self.hy_after.mean() / self.hy_before.mean()),
            "saddle_flux_reduction": float(self.flux_reduction),
            "drive_current": [self.drive.real, self.drive.imag],
            **self.extras,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.statistics(), fh, indent=2, sort_keys=True)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "z", "abs_hy_before", "abs_hy_after"])
            for p, b, a in zip(self.points, self.hy_before, self.hy_after):
                w.writerow([f"{p[0]:.4f}", f"{p[1]:.4f}", f"{p[2]:.4f}", f"{b:.9g}", f"{a:.9g}"])


def spatial_cancellation_report(
    emi_field,
    cancel_coil: CoilSpec,
    target_coil: CoilSpec,
    drive: complex,
    center=(0.0, 0.0, 0.0),
    radius: float = 0.1,
    spacing: float = 0.02,
    domain=None,
    segments_per_turn: int = 64,
    quadrature_order: int = 12,
) -> CancellationReport:
    """Field and flux statistics in a spherical target region before/after cancellation.

    ``emi_field`` is a gridded field or a field function; ``domain`` is an
    optional (lower, upper) box that the sphere must fit in.  For grids the
    lattice bounds are used automatically.
    """
    fn = as_field_function(emi_field)
    pts = sphere_points(center, radius, spacing)
    if domain is None and hasattr(emi_field, "interpolate"):
        domain = ([emi_field.x[0], emi_field.y[0], emi_field.z[0]], [emi_field.x[-1], emi_field.y[-1], emi_field.z[-1]])
    if domain is not None:
        c = np.asarray(center, dtype=float)
        if np.any(c - radius < np.asarray(domain[0]) - 1e-12) or np.any(c + radius > np.asarray(domain[1]) + 1e-12):
            raise OutOfDomainError("target sphere leaves the field domain")
        check_inside(pts, domain[0], domain[1], "target point")
    path = realize_coil(cancel_coil, segments_per_turn)
    h_emi = fn(pts)
    h_cancel = field_at(path, pts)
    after = h_emi + drive * h_cancel
    phi_em = flux_through(fn, target_coil, quadrature_order).flux
    phi_c1 = flux_through(lambda p: field_at(path, p), target_coil, quadrature_order).flux
    state = CancellationState(phi_em, phi_c1, complex(drive))
    return CancellationReport(
        pts, np.abs(h_emi[:, 1]), np.abs(after[:, 1]), phi_em, state.residual, complex(drive),
        {"pointwise_residual_max": float(np.max(np.linalg.norm(after, axis=1)))},
    )
