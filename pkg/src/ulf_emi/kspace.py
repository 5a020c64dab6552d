"""K-space container and the centered, unitary 2-D DFT pair.

Arrays are stored as ``(n_phase, n_read)``: one row per phase-encode line,
readout samples along the fast axis.  Row 0 is the outermost phase encode.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidInputError


def image_to_kspace(image: np.ndarray) -> np.ndarray:
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(image), norm="ortho"))


def kspace_to_image(kspace: np.ndarray) -> np.ndarray:
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(kspace), norm="ortho"))


@dataclass(frozen=True, eq=False)
class KSpaceMatrix:
    data: np.ndarray
    dwell: float = 1e-5
    channel: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        if data.ndim != 2 or min(data.shape) == 0:
            raise InvalidInputError("k-space must be a non-empty 2-D array")
        if not np.all(np.isfinite(data)):
            raise InvalidInputError("k-space contains non-finite entries")
        if self.dwell <= 0:
            raise InvalidInputError("dwell time must be positive")
        object.__setattr__(self, "data", data)

    @property
    def n_phase(self) -> int:
        return self.data.shape[0]

    @property
    def n_read(self) -> int:
        return self.data.shape[1]

    def with_data(self, data, **changes) -> "KSpaceMatrix":
        return replace(self, data=data, **changes)
