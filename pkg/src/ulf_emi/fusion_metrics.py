"""Reconstruction, ROI-based SNR, inverse-variance fusion and 1-D noise traces.

SNR is reported as ``20 log10(mu / sigma)`` with ``mu`` the mean magnitude
in a signal ROI and ``sigma`` the standard deviation of the magnitude in a
noise ROI.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateError, InvalidInputError
from .kspace import KSpaceMatrix, image_to_kspace, kspace_to_image


@dataclass(frozen=True, eq=False)
class ReconImage:
    data: np.ndarray
    channel: str = ""
    provenance: tuple = ()

    def __post_init__(self):
        d = np.asarray(self.data, dtype=complex)
        if d.ndim != 2:
            raise InvalidInputError("image must be 2-D")
        object.__setattr__(self, "data", d)
        object.__setattr__(self, "provenance", tuple(self.provenance))

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.data)

    @property
    def shape(self):
        return self.data.shape

    def to_kspace(self, dwell: float = 1e-5) -> KSpaceMatrix:
        return KSpaceMatrix(image_to_kspace(self.data), dwell, self.channel)


def reconstruct(k: KSpaceMatrix, provenance: Sequence[str] = ()) -> ReconImage:
    """Inverse of the acquisition transform."""
    stages = tuple(provenance) or tuple(k.meta.get("stages", ()))
    return ReconImage(kspace_to_image(k.data), k.channel, stages)


@dataclass(frozen=True)
class ROI:
    """Half-open pixel rectangle ``[row0, row1) x [col0, col1)``."""

    row0: int
    row1: int
    col0: int
    col1: int

    @property
    def size(self) -> int:
        return max(0, self.row1 - self.row0) * max(0, self.col1 - self.col0)

    def mask(self, shape) -> np.ndarray:
        m = np.zeros(shape, dtype=bool)
        m[self.row0:self.row1, self.col0:self.col1] = True
        return m

    def inside(self, shape) -> bool:
        return 0 <= self.row0 < self.row1 <= shape[0] and 0 <= self.col0 < self.col1 <= shape[1]

    def overlaps(self, other: "ROI") -> bool:
        return (self.row0 < other.row1 and other.row0 < self.row1
                and self.col0 < other.col1 and other.col0 < self.col1)

    def to_list(self) -> list[int]:
        return [self.row0, self.row1, self.col0, self.col1]


def _check_rois(shape, signal: ROI, noise: ROI) -> None:
    for name, r in (("signal", signal), ("noise", noise)):
        if not r.inside(shape):
            raise InvalidInputError(f"{name} ROI {r.to_list()} leaves the {shape} image")
        if r.size < 16:
            raise InvalidInputError(f"{name} ROI needs at least 16 pixels")
    if signal.overlaps(noise):
        raise InvalidInputError("signal and noise ROIs overlap")


@dataclass(frozen=True)
class SNRReport:
    signal_roi: ROI
    noise_roi: ROI
    mu_signal: float
    sigma_noise: float
    snr_db: float

    @property
    def snr_linear(self) -> float:
        return self.mu_signal / self.sigma_noise

    def to_dict(self) -> dict:
        return {
            "signal_roi": self.signal_roi.to_list(),
            "noise_roi": self.noise_roi.to_list(),
            "mu_signal": self.mu_signal,
            "sigma_noise": self.sigma_noise,
            "snr_db": self.snr_db,
        }


def snr_db(img: ReconImage | np.ndarray, signal_roi: ROI, noise_roi: ROI) -> SNRReport:
    mag = img.magnitude if isinstance(img, ReconImage) else np.abs(np.asarray(img))
    _check_rois(mag.shape, signal_roi, noise_roi)
    mu = float(mag[signal_roi.row0:signal_roi.row1, signal_roi.col0:signal_roi.col1].mean())
    sigma = float(mag[noise_roi.row0:noise_roi.row1, noise_roi.col0:noise_roi.col1].std())
    if sigma == 0:
        raise DegenerateError("noise ROI has zero spread")
    return SNRReport(signal_roi, noise_roi, mu, sigma, 20 * math.log10(mu / sigma) if mu > 0 else -math.inf)


def noise_sigma(img: ReconImage | np.ndarray, roi: ROI) -> float:
    """Std of the complex pixel values inside ``roi``."""
    d = img.data if isinstance(img, ReconImage) else np.asarray(img)
    if not roi.inside(d.shape):
        raise InvalidInputError("ROI leaves the image")
    return float(np.std(d[roi.row0:roi.row1, roi.col0:roi.col1]))


@dataclass(frozen=True, eq=False)
class FusionWeights:
    weights: np.ndarray
    sigma: np.ndarray
    alignment: np.ndarray

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "sigma": self.sigma.tolist(),
            "alignment_re": self.alignment.real.tolist(),
            "alignment_im": self.alignment.imag.tolist(),
        }


def inverse_variance_weights(sigma) -> np.ndarray:
    s = np.asarray(sigma, dtype=float)
    if np.any(~(s > 0)):
        raise DegenerateError("every noise estimate must be positive")
    inv = np.where(np.isinf(s), 0.0, 1.0 / np.where(np.isinf(s), 1.0, s) ** 2)
    if inv.sum() == 0:
        raise DegenerateError("all channels have infinite noise")
    return inv / inv.sum()


def fuse(images: Sequence[ReconImage], sigma: Sequence[float], align_roi: ROI | None = None
         ) -> tuple[ReconImage, FusionWeights]:
    """Inverse-variance weighted complex combination.

    Channel ``i`` is first scaled by the complex least-squares factor that
    best maps it onto channel 1 (over ``align_roi`` if given), so noise
    levels are compared on a common signal scale.
    """
    if not images:
        raise InvalidInputError("nothing to fuse")
    if len(sigma) != len(images):
        raise InvalidInputError("need one noise estimate per image")
    shape = images[0].shape
    if any(im.shape != shape for im in images):
        raise InvalidInputError("images must share dimensions")
    sig = np.asarray(sigma, dtype=float)
    if np.any(~(sig > 0)):
        raise DegenerateError("every noise estimate must be positive")
    sel = (slice(None), slice(None)) if align_roi is None else (
        slice(align_roi.row0, align_roi.row1), slice(align_roi.col0, align_roi.col1))
    ref = images[0].data[sel]
    align = np.ones(len(images), dtype=complex)
    for i, im in enumerate(images[1:], start=1):
        d = im.data[sel]
        den = np.vdot(d, d).real
        if den == 0:
            raise DegenerateError(f"image {i} is identically zero")
        align[i] = np.vdot(d, ref) / den
    aligned_sigma = np.abs(align) * sig
    w = inverse_variance_weights(aligned_sigma)
    if len(images) == 1:
        fused = images[0].data.copy()
    else:
        fused = sum(wi * ai * im.data for wi, ai, im in zip(w, align, images) if wi != 0)
    label = "+".join(im.channel for im in images)
    return ReconImage(fused, label, ("fusion",)), FusionWeights(w, aligned_sigma, align)


def noise_profile_1d(rows, clean=None) -> np.ndarray:
    """RMS of each row (readout direction), optionally after subtracting ``clean``."""
    d = rows.data if isinstance(rows, (KSpaceMatrix, ReconImage)) else np.asarray(rows)
    if clean is not None:
        c = clean.data if isinstance(clean, (KSpaceMatrix, ReconImage)) else np.asarray(clean)
        d = d - c
    return np.sqrt(np.mean(np.abs(np.atleast_2d(d)) ** 2, axis=-1))


def trace_mismatch(trace, reference) -> float:
    """Relative RMS difference ``||trace - reference|| / ||reference||``."""
    t, r = np.asarray(trace, float), np.asarray(reference, float)
    if t.shape != r.shape:
        raise InvalidInputError("traces differ in length")
    return float(np.linalg.norm(t - r) / np.linalg.norm(r))
