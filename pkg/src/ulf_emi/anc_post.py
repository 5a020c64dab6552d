"""Band-wise reference cancellation on k-space rows.

Transfer factors from each reference channel to the receive channel are
fitted per frequency band by least squares on periphery rows (rows with
negligible MR energy), then the transferred reference spectra are
subtracted from every phase-encode row.  Rows are handled independently.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateBandWarning, InvalidInputError, PolicyError
from .kspace import KSpaceMatrix

FLOOR_DB = -300.0


@dataclass(frozen=True, eq=False)
class BandPartition:
    """Contiguous, disjoint FFT-bin ranges covering ``[0, n_bins)``.

    ``edges`` has ``B + 1`` increasing entries starting at 0 and ending at
    ``n_bins``; band ``b`` is ``range(edges[b], edges[b + 1])`` in numpy FFT
    bin order.
    """

    edges: tuple

    def __post_init__(self):
        edges = tuple(int(e) for e in self.edges)
        if len(edges) < 2 or edges[0] != 0 or any(b >= e for b, e in zip(edges[:-1], edges[1:])):
            raise InvalidInputError("band edges must start at 0 and increase strictly")
        object.__setattr__(self, "edges", edges)

    @classmethod
    def equal(cls, n_bins: int, n_bands: int) -> "BandPartition":
        if not 1 <= n_bands <= n_bins:
            raise InvalidInputError("need 1 <= n_bands <= n_bins")
        edges = np.round(np.linspace(0, n_bins, n_bands + 1)).astype(int)
        return cls(tuple(edges))

    @property
    def n_bands(self) -> int:
        return len(self.edges) - 1

    @property
    def n_bins(self) -> int:
        return self.edges[-1]

    def ranges(self):
        return [range(b, e) for b, e in zip(self.edges[:-1], self.edges[1:])]

    def band_of_bin(self) -> np.ndarray:
        out = np.empty(self.n_bins, dtype=int)
        for i, r in enumerate(self.ranges()):
            out[r.start:r.stop] = i
        return out

    def expand(self, per_band: np.ndarray) -> np.ndarray:
        """Broadcast per-band values (..., B) to per-bin values (..., n_bins)."""
        return np.asarray(per_band)[..., self.band_of_bin()]


@dataclass(frozen=True, eq=False)
class TransferModel:
    """Complex factors ``factors[b, i]`` from reference ``i`` in band ``b``."""

    factors: np.ndarray
    partition: BandPartition
    periphery_rows: tuple = ()
    ridge: float = 0.0
    degenerate_bands: tuple = ()

    def __post_init__(self):
        f = np.asarray(self.factors, dtype=complex)
        if f.ndim != 2 or f.shape[0] != self.partition.n_bands:
            raise InvalidInputError("factor table must be (n_bands, n_refs)")
        if not np.all(np.isfinite(f)):
            raise InvalidInputError("transfer factors must be finite")
        object.__setattr__(self, "factors", f)

    @property
    def n_refs(self) -> int:
        return self.factors.shape[1]

    def scaled(self, a: complex) -> "TransferModel":
        return TransferModel(self.factors * a, self.partition, self.periphery_rows, self.ridge, self.degenerate_bands)

    def to_dict(self) -> dict:
        return {
            "band_edges": list(self.partition.edges),
            "factors_re": self.factors.real.tolist(),
            "factors_im": self.factors.imag.tolist(),
            "periphery_rows": list(self.periphery_rows),
            "ridge": self.ridge,
            "degenerate_bands": list(self.degenerate_bands),
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def select_periphery(k: KSpaceMatrix | int, policy: str = "first-rows", n: int = 1) -> list[int]:
    """Indices of edge phase-encode rows used to fit transfer factors.

    ``first-rows(n)`` takes rows ``0..n-1``; ``outer-phase-encodes(n)``
    alternates between the two k-space edges: 0, last, 1, last-1, ...
    """
    n_phase = k if isinstance(k, int) else k.n_phase
    if n < 1:
        raise PolicyError("periphery needs at least one row")
    if n >= n_phase:
        raise PolicyError("periphery cannot use every phase-encode row")
    if policy == "first-rows":
        return list(range(n))
    if policy == "outer-phase-encodes":
        rows = []
        for i in range(n):
            rows.append(i // 2 if i % 2 == 0 else n_phase - 1 - i // 2)
        return sorted(rows)
    raise PolicyError(f"unknown periphery policy {policy!r}")


def _spectra(rows: np.ndarray) -> np.ndarray:
    return np.fft.fft(np.atleast_2d(rows), axis=-1)


def default_ridge(ref_spectra: np.ndarray, partition: BandPartition) -> float:
    """1e-9 times the mean per-band reference power."""
    power = np.abs(ref_spectra) ** 2  # (n_refs, n_rows, n_bins)
    per_band = [power[..., r.start:r.stop].sum() for r in partition.ranges()]
    return 1e-9 * float(np.mean(per_band)) / max(1, ref_spectra.shape[0])


def estimate_transfer(
    rf_rows,
    ref_rows: Sequence,
    partition: BandPartition,
    ridge: float | None = None,
    periphery_rows: Sequence[int] = (),
) -> TransferModel:
    """Least-squares transfer factors per band from time-domain periphery rows.

    Per band solves ``(G + ridge I) c = r`` with ``G`` the reference Gram
    matrix over the band's bins (all periphery rows pooled) and ``r`` the
    reference/receive cross products.  A band in which every reference is
    empty gets zero factors and a :class:`DegenerateBandWarning`.
    """
    rf = _spectra(np.asarray(rf_rows, dtype=complex))
    refs = np.stack([_spectra(np.asarray(r, dtype=complex)) for r in ref_rows])
    if refs.shape[1:] != rf.shape:
        raise InvalidInputError("receive and reference periphery rows must share dimensions")
    if rf.shape[-1] != partition.n_bins:
        raise InvalidInputError("partition does not cover the readout length")
    eps = default_ridge(refs, partition) if ridge is None else float(ridge)
    n_refs = refs.shape[0]
    factors = np.zeros((partition.n_bands, n_refs), dtype=complex)
    degenerate = []
    for b, r in enumerate(partition.ranges()):
        a = refs[..., r.start:r.stop].reshape(n_refs, -1)  # refs x samples
        y = rf[..., r.start:r.stop].reshape(-1)
        gram = a.conj() @ a.T
        if not np.any(np.diag(gram).real > 0):
            degenerate.append(b)
            continue
        rhs = a.conj() @ y
        factors[b] = np.linalg.solve(gram + eps * np.eye(n_refs), rhs)
    if degenerate:
        warnings.warn(f"reference channels carry no energy in bands {degenerate}; factors set to 0",
                      DegenerateBandWarning, stacklevel=2)
    return TransferModel(factors, partition, tuple(periphery_rows), eps, tuple(degenerate))


def apply_cancellation(rf: KSpaceMatrix, refs: Sequence[KSpaceMatrix], model: TransferModel) -> KSpaceMatrix:
    """Subtract the transferred reference spectra from every row of ``rf``."""
    if len(refs) != model.n_refs:
        raise InvalidInputError("model and reference count differ")
    for ref in refs:
        if ref.data.shape != rf.data.shape:
            raise InvalidInputError("reference k-space shape differs from the receive channel")
    if model.partition.n_bins != rf.n_read:
        raise InvalidInputError("model partition does not match the readout length")
    spec = np.fft.fft(rf.data, axis=1)
    per_bin = model.partition.expand(model.factors.T)  # n_refs x n_bins
    for i, ref in enumerate(refs):
        spec = spec - per_bin[i][None, :] * np.fft.fft(ref.data, axis=1)
    cleaned = np.fft.ifft(spec, axis=1)
    return rf.with_data(cleaned, meta={**rf.meta, "post_anc": True})


def denoise(rf: KSpaceMatrix, refs: Sequence[KSpaceMatrix], partition: BandPartition | None = None,
            policy: str = "first-rows", n_rows: int = 1, ridge: float | None = None,
            n_bands: int = 8) -> tuple[KSpaceMatrix, TransferModel]:
    """Periphery selection, transfer estimation and cancellation in one call."""
    if partition is None:
        partition = BandPartition.equal(rf.n_read, n_bands)
    rows = select_periphery(rf, policy, n_rows)
    model = estimate_transfer(rf.data[rows], [r.data[rows] for r in refs], partition, ridge, rows)
    return apply_cancellation(rf, refs, model), model


def _db(power_ratio: float) -> float:
    if power_ratio <= 0:
        return FLOOR_DB
    return max(FLOOR_DB, 10 * math.log10(power_ratio))


@dataclass(frozen=True, eq=False)
class SuppressionMetric:
    rms_before: np.ndarray
    rms_after: np.ndarray
    residual_db: float

    @property
    def suppression_db(self) -> float:
        return -self.residual_db

    def to_dict(self) -> dict:
        return {
            "residual_db": self.residual_db,
            "rms_before": float(np.sqrt(np.mean(self.rms_before ** 2))),
            "rms_after": float(np.sqrt(np.mean(self.rms_after ** 2))),
        }


def emi_suppression_metric(before, after, clean) -> SuppressionMetric:
    """Row-RMS of the deviation from ``clean`` before and after cancellation.

    ``residual_db`` is ``10 log10(P_after / P_before)``, floored at -300 dB.
    """
    arrays = [x.data if isinstance(x, KSpaceMatrix) else np.asarray(x) for x in (before, after, clean)]
    if not arrays[0].shape == arrays[1].shape == arrays[2].shape:
        raise InvalidInputError("before, after and clean must share dimensions")
    b, a, c = arrays
    rb = np.sqrt(np.mean(np.abs(b - c) ** 2, axis=-1))
    ra = np.sqrt(np.mean(np.abs(a - c) ** 2, axis=-1))
    pb, pa = float(np.sum(rb ** 2)), float(np.sum(ra ** 2))
    if pb == 0:
        ratio = 1.0 if pa == 0 else math.inf
    else:
        ratio = pa / pb
    return SuppressionMetric(rb, ra, _db(ratio) if math.isfinite(ratio) else math.inf)
