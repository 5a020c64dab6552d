"""Dual-channel k-space synthesis with time-domain EMI injection.

Every interferer is a baseband waveform (frequencies are offsets from the
working frequency f0).  Readout row ``p`` of average ``a`` samples it at

    t = (a * n_phase + p) * tr + n * dwell,   n = 0 .. n_read - 1

so all channels see one shared realization.  A channel's EMI is the sum of
interferer waveforms weighted by its coupling (volts per unit waveform),
then colored per frequency band and scaled by the ADC gain.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .anc_post import BandPartition
from .anc_spatial import ControlChain, detect_voltage
from .cavity import CavitySpec, IncidenceSpec, cavity_field, field_checksum
from .coilgeom import CoilSpec, flux_through, path_field, realize_coil
from .errors import CoverageError, InvalidInputError, InvalidSpecError, ProvenanceError
from .kspace import KSpaceMatrix, image_to_kspace

INTERFERER_KINDS = ("tone", "harmonic_comb", "band_noise")


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True, eq=False)
class Phantom:
    image: np.ndarray
    pixel_spacing: float = 1e-3

    def __post_init__(self):
        img = np.asarray(self.image, dtype=float)
        if img.ndim not in (2, 3) or img.size == 0:
            raise InvalidInputError("phantom must be a 2-D image or a stack of slices")
        if not np.all(np.isfinite(img)):
            raise InvalidInputError("phantom contains non-finite values")
        if np.any(img < 0):
            raise InvalidInputError("phantom values must be non-negative")
        if not self.pixel_spacing > 0:
            raise InvalidInputError("pixel spacing must be positive")
        object.__setattr__(self, "image", img)

    @property
    def shape(self):
        return self.image.shape

    def slice(self, i: int = 0) -> np.ndarray:
        return self.image if self.image.ndim == 2 else self.image[i]


# (x0, y0, a, b, angle_deg, additive intensity) on [-1, 1]^2, y pointing down the rows
HEAD_ELLIPSES = (
    (0.0, 0.0, 0.69, 0.86, 0.0, 1.0),
    (0.0, -0.02, 0.63, 0.80, 0.0, -0.2),
    (0.16, -0.25, 0.07, 0.22, -18.0, -0.45),
    (-0.16, -0.25, 0.08, 0.24, 18.0, -0.45),
    (0.0, -0.55, 0.10, 0.08, 0.0, 0.15),
    (0.3, 0.05, 0.06, 0.06, 0.0, 0.2),
)


def head_phantom(n: int = 128, scale: float = 1.0, pixel_spacing: float = 1.5e-3) -> Phantom:
    """Ellipse-built head phantom; the lower half of the brain is uniform."""
    c = (np.arange(n) - (n - 1) / 2) / (n / 2)
    yy, xx = np.meshgrid(c, c, indexing="ij")
    img = np.zeros((n, n))
    for x0, y0, a, b, ang, val in HEAD_ELLIPSES:
        t = math.radians(ang)
        dx, dy = xx - x0, yy - y0
        u = dx * math.cos(t) + dy * math.sin(t)
        v = -dx * math.sin(t) + dy * math.cos(t)
        img[(u / a) ** 2 + (v / b) ** 2 <= 1.0] += val
    return Phantom(np.clip(img, 0, None) * scale, pixel_spacing)


@dataclass(frozen=True)
class SequenceParams:
    """Cartesian 2-D readout timing.

    ``tr`` is the repetition time between phase-encode rows; the readout
    bandwidth is ``1 / dwell``.
    """

    n_read: int = 128
    n_phase: int = 128
    dwell: float = 1e-5
    averages: int = 3
    tr: float = 0.02

    def __post_init__(self):
        if not (_is_pow2(self.n_read) and _is_pow2(self.n_phase)):
            raise InvalidSpecError("matrix dimensions must be powers of two")
        if not self.dwell > 0:
            raise InvalidSpecError("dwell must be positive")
        if int(self.averages) != self.averages or self.averages < 1:
            raise InvalidSpecError("averages must be a positive integer")
        if self.tr < self.n_read * self.dwell:
            raise InvalidSpecError("repetition time shorter than one readout")

    @property
    def bandwidth(self) -> float:
        return 1.0 / self.dwell

    @property
    def shape(self):
        return (self.n_phase, self.n_read)

    def row_start(self, average: int, row: int) -> float:
        return (average * self.n_phase + row) * self.tr

    def row_starts(self) -> np.ndarray:
        """Start times, shape (averages, n_phase)."""
        idx = np.arange(self.averages * self.n_phase).reshape(self.averages, self.n_phase)
        return idx * self.tr

    @property
    def duration(self) -> float:
        return self.row_start(self.averages - 1, self.n_phase - 1) + self.n_read * self.dwell


@dataclass(frozen=True)
class ApertureSource:
    """Interference entering through the cavity opening."""

    incidence: IncidenceSpec = field(default_factory=IncidenceSpec)


@dataclass(frozen=True, eq=False)
class LocalSource:
    """Near-field emitter inside the cavity modeled as a small current loop."""

    loop: CoilSpec
    current: float = 1.0

    def __post_init__(self):
        if self.loop.kind != "detection_loop":
            raise InvalidSpecError("local sources are modeled as detection_loop windings")


@dataclass(frozen=True, eq=False)
class Interferer:
    """One EMI component: a unit-RMS waveform times ``amplitude``.

    ``frequencies`` are baseband offsets in hertz:

    * tone: ``(f,)``
    * harmonic comb: ``(f_first, spacing)`` with ``n_lines`` lines of 1/h
      amplitude and seeded phases
    * band-limited noise: ``(f_lo, f_hi)``.  Its correlation time (about
      ``1 / (f_hi - f_lo)``) is far below any repetition time, so each
      readout window gets an independent seeded Gaussian draw, confined to
      the band in the window's DFT domain.
    """

    kind: str
    frequencies: tuple
    amplitude: complex = 1.0
    phase_deg: float = 0.0
    seed: int = 0
    n_lines: int = 0
    source: ApertureSource | LocalSource = field(default_factory=ApertureSource)
    label: str = ""

    def __post_init__(self):
        if self.kind not in INTERFERER_KINDS:
            raise InvalidSpecError(f"unknown interferer kind {self.kind!r}")
        freqs = tuple(float(f) for f in self.frequencies)
        need = {"tone": 1, "harmonic_comb": 2, "band_noise": 2}[self.kind]
        if len(freqs) != need or not all(np.isfinite(freqs)):
            raise InvalidSpecError(f"{self.kind} needs {need} finite frequency values")
        if self.kind == "band_noise" and not freqs[0] < freqs[1]:
            raise InvalidSpecError("band-limited noise needs f_lo < f_hi")
        if not np.isfinite(complex(self.amplitude)):
            raise InvalidSpecError("interferer amplitude must be finite")
        n = self.n_lines or {"tone": 1, "harmonic_comb": 8, "band_noise": 0}[self.kind]
        object.__setattr__(self, "frequencies", freqs)
        object.__setattr__(self, "n_lines", int(n))

    @property
    def complex_amplitude(self) -> complex:
        return complex(self.amplitude) * np.exp(1j * math.radians(self.phase_deg))

    def lines(self) -> tuple[np.ndarray, np.ndarray]:
        """Line frequencies and complex weights with sum |w|^2 = |amplitude|^2."""
        a = self.complex_amplitude
        if self.kind == "tone":
            return np.array(self.frequencies[:1]), np.array([a])
        if self.kind != "harmonic_comb":
            raise InvalidInputError("band-limited noise has no line spectrum")
        rng = np.random.default_rng(self.seed)
        f0, df = self.frequencies
        h = np.arange(self.n_lines)
        w = np.exp(2j * np.pi * rng.random(self.n_lines)) / (h + 1)
        return f0 + h * df, a * w / np.sqrt(np.sum(np.abs(w) ** 2))

    def sample(self, t) -> np.ndarray:
        """Continuous-time waveform of a tone or comb at times ``t``."""
        f, w = self.lines()
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape, dtype=complex)
        for fk, wk in zip(f, w):
            out += wk * np.exp(2j * np.pi * fk * t)
        return out

    def band_bins(self, seq: SequenceParams) -> np.ndarray:
        """Readout DFT bins whose frequencies fall inside the declared band."""
        f = np.fft.fftfreq(seq.n_read, seq.dwell)
        lo, hi = self.frequencies[0], self.frequencies[-1]
        return np.flatnonzero((f >= lo) & (f <= hi))

    def sample_rows(self, seq: SequenceParams) -> np.ndarray:
        """Waveform on every readout window, shape (averages, n_phase, n_read)."""
        shape = (seq.averages, seq.n_phase, seq.n_read)
        if self.kind == "band_noise":
            bins = self.band_bins(seq)
            if len(bins) == 0:
                raise InvalidSpecError(f"band {self.frequencies} holds no readout frequency bin")
            rng = np.random.default_rng(self.seed)
            spec = np.zeros(shape, dtype=complex)
            g = rng.standard_normal(shape[:2] + (len(bins), 2))
            # unit mean power per sample: sum over bins of E|X|^2 equals n_read^2
            spec[..., bins] = (g[..., 0] + 1j * g[..., 1]) * (seq.n_read / math.sqrt(2 * len(bins)))
            return self.complex_amplitude * np.fft.ifft(spec, axis=-1)
        f, w = self.lines()
        starts = seq.row_starts().reshape(-1)
        # separable: exp(j2pi f (t0 + n dt)) = exp(j2pi f t0) exp(j2pi f n dt)
        row_phase = np.exp(2j * np.pi * np.outer(starts, f)) * w[None, :]
        readout = np.exp(2j * np.pi * np.outer(f, np.arange(seq.n_read) * seq.dwell))
        return (row_phase @ readout).reshape(shape)


@dataclass(frozen=True, eq=False)
class EMITimeline:
    interferers: tuple
    duration: float

    def __post_init__(self):
        object.__setattr__(self, "interferers", tuple(self.interferers))
        if not self.duration > 0:
            raise InvalidSpecError("timeline duration must be positive")

    def check_coverage(self, seq: SequenceParams) -> None:
        if self.duration + 1e-12 >= seq.duration:
            return
        ends = seq.row_starts() + seq.n_read * seq.dwell
        bad = np.argwhere(ends > self.duration + 1e-12)[0]
        raise CoverageError(
            f"timeline ({self.duration:g} s) ends before average {bad[0]} row {bad[1]} is read out",
            row=int(bad[1]),
        )

    def sample_rows(self, seq: SequenceParams) -> np.ndarray:
        """Stack of interferer waveforms, shape (n_interferers, averages, n_phase, n_read)."""
        self.check_coverage(seq)
        if not self.interferers:
            return np.zeros((0, seq.averages, seq.n_phase, seq.n_read), dtype=complex)
        return np.stack([i.sample_rows(seq) for i in self.interferers])


def source_flux(source, coil: CoilSpec, cavity: CavitySpec, quadrature_order: int = 12,
                segments_per_turn: int = 64) -> complex:
    """Flux (Wb) a unit-amplitude interferer drives through ``coil``."""
    if isinstance(source, ApertureSource):
        return flux_through(cavity_field(cavity, source.incidence), coil, quadrature_order).flux
    if isinstance(source, LocalSource):
        path = realize_coil(source.loop, segments_per_turn, current=source.current)
        return flux_through(path_field(path), coil, quadrature_order).flux
    raise InvalidSpecError(f"unknown interference source {source!r}")


def coloration_factors(n_channels: int, partition: BandPartition, spread: float, seed: int) -> np.ndarray:
    """Smooth random complex per-band factors, one row per channel.

    Log-magnitude and phase follow a cumulative random walk across bands,
    so neighbouring bands differ by roughly ``spread`` (nepers / radians).
    Each row is scaled to unit mean power so coloration reshapes the EMI
    spectrum without changing its total level.
    """
    out = np.ones((n_channels, partition.n_bands), dtype=complex)
    if spread == 0:
        return out
    for c in range(n_channels):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7, c)))
        mag = np.cumsum(rng.standard_normal(partition.n_bands)) * spread
        ph = np.cumsum(rng.standard_normal(partition.n_bands)) * spread
        f = np.exp(mag + 1j * (ph - ph.mean()))
        out[c] = f / np.sqrt(np.mean(np.abs(f) ** 2))
    return out


@dataclass(frozen=True, eq=False)
class ChannelSet:
    """Receive and reference channels with their EMI coupling model.

    ``couplings[c, k]`` is the EMF (V) channel ``c`` gets per unit waveform of
    interferer ``k``.  ``coloration[c, b]`` multiplies band ``b`` of that EMI;
    ``adc_gain`` converts volts to k-space units; ``noise_sigma`` is the
    per-sample complex thermal noise std in k-space units.  ``cancel_coupling``
    is the EMF per ampere of cancellation current, with ``anc_noise_rms``
    the chain's white output noise current.
    """

    names: tuple
    roles: tuple
    couplings: np.ndarray
    coloration: np.ndarray
    partition: BandPartition
    noise_sigma: np.ndarray
    adc_gain: float = 1.0
    sensitivity: tuple = ()
    field_checksum: str = ""
    cancel_coupling: np.ndarray | None = None
    anc_noise_rms: float = 0.0

    def __post_init__(self):
        names = tuple(self.names)
        roles = tuple(self.roles)
        n = len(names)
        if len(set(names)) != n or len(roles) != n:
            raise InvalidInputError("channel names must be unique with one role each")
        if any(r not in ("receive", "reference") for r in roles):
            raise InvalidInputError("channel role must be 'receive' or 'reference'")
        cpl = np.asarray(self.couplings, dtype=complex).reshape(n, -1)
        if not np.all(np.isfinite(cpl)):
            raise InvalidInputError("coupling coefficients must be finite")
        col = np.asarray(self.coloration, dtype=complex)
        if col.shape != (n, self.partition.n_bands) or not np.all(np.isfinite(col)):
            raise InvalidInputError("coloration must be finite with shape (channels, bands)")
        sig = np.broadcast_to(np.asarray(self.noise_sigma, dtype=float), (n,)).copy()
        if np.any(sig < 0):
            raise InvalidInputError("noise sigma must be >= 0")
        sens = tuple(self.sensitivity) or tuple(1.0 if r == "receive" else 0.0 for r in roles)
        if any(s != 0 for s, r in zip(sens, roles) if r == "reference"):
            raise InvalidInputError("reference channels carry no MR signal")
        cc = None if self.cancel_coupling is None else np.asarray(self.cancel_coupling, dtype=complex).reshape(n)
        for k, v in (("names", names), ("roles", roles), ("couplings", cpl), ("coloration", col),
                     ("noise_sigma", sig), ("sensitivity", sens), ("cancel_coupling", cc)):
            object.__setattr__(self, k, v)

    @property
    def receive(self) -> list[str]:
        return [n for n, r in zip(self.names, self.roles) if r == "receive"]

    @property
    def references(self) -> list[str]:
        return [n for n, r in zip(self.names, self.roles) if r == "reference"]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise InvalidInputError(f"no channel named {name!r}") from None

    def coupling(self, name: str) -> np.ndarray:
        return self.couplings[self.index(name)]


def build_channel_set(
    coils: Mapping[str, CoilSpec],
    roles: Mapping[str, str],
    timeline: EMITimeline,
    cavity: CavitySpec,
    noise_sigma=1.0,
    adc_gain: float = 1.0,
    sensitivity: Mapping[str, complex] | None = None,
    partition: BandPartition | None = None,
    coloration_spread: float = 0.0,
    coloration_seed: int = 0,
    n_read: int = 128,
    quadrature_order: int = 12,
) -> ChannelSet:
    """Couplings ``j w0 Phi`` from the flux each interferer drives through each coil."""
    names = tuple(coils)
    partition = partition or BandPartition.equal(n_read, 8)
    cpl = np.zeros((len(names), len(timeline.interferers)), dtype=complex)
    for c, name in enumerate(names):
        for k, intf in enumerate(timeline.interferers):
            cpl[c, k] = detect_voltage(source_flux(intf.source, coils[name], cavity, quadrature_order), cavity.f0)
    if isinstance(noise_sigma, Mapping):
        noise_sigma = [noise_sigma[n] for n in names]
    sens = None if sensitivity is None else tuple(sensitivity.get(n, 0.0) for n in names)
    return ChannelSet(
        names, tuple(roles[n] for n in names), cpl,
        coloration_factors(len(names), partition, coloration_spread, coloration_seed),
        partition, noise_sigma, adc_gain, sens or (), field_checksum(cavity),
    )


@dataclass(frozen=True, eq=False)
class AncDrive:
    """Front-end cancellation settings bound to one field model.

    ``detector_flux[k]``: flux of interferer ``k`` through the detection
    coil; ``cancel_flux[c]``: flux per ampere of the cancellation winding
    through channel ``c``.
    """

    chain: ControlChain
    detector_flux: np.ndarray
    cancel_flux: np.ndarray
    f0: float
    field_checksum: str

    def currents(self) -> np.ndarray:
        """Cancellation current (A) per unit waveform of each interferer."""
        return self.chain.transfer * detect_voltage(np.asarray(self.detector_flux, dtype=complex), self.f0)


def apply_spatial_anc(channels: ChannelSet, drive: AncDrive, bandwidth: float | None = None) -> ChannelSet:
    """Couplings after the cancellation winding is driven from the detection coil.

    Each coupling gains ``j w0 Phi_cancel[c] * i_k``.  Channels the
    cancellation winding does not link keep their couplings.  Chain output
    noise (density times sqrt(bandwidth)) is recorded for injection.
    """
    if drive.field_checksum != channels.field_checksum:
        raise ProvenanceError(
            f"drive field {drive.field_checksum} differs from coupling field {channels.field_checksum}")
    phi_c = np.asarray(drive.cancel_flux, dtype=complex).reshape(-1)
    cur = drive.currents().reshape(-1)
    if phi_c.shape[0] != len(channels.names) or cur.shape[0] != channels.couplings.shape[1]:
        raise InvalidInputError("drive does not match the channel/interferer layout")
    emf_per_amp = detect_voltage(phi_c, drive.f0)
    new = channels.couplings + np.outer(emf_per_amp, cur)
    noise = drive.chain.noise_density * math.sqrt(bandwidth) if bandwidth else 0.0
    return replace(channels, couplings=new, cancel_coupling=emf_per_amp, anc_noise_rms=noise)


def simulate_clean_kspace(phantom: Phantom | np.ndarray, sensitivity, seq: SequenceParams,
                          channel: str = "") -> KSpaceMatrix:
    """Centered unitary DFT of ``sensitivity * phantom``."""
    img = phantom.slice() if isinstance(phantom, Phantom) else np.asarray(phantom, dtype=float)
    if img.shape != seq.shape:
        raise InvalidInputError(f"phantom shape {img.shape} does not match matrix {seq.shape}")
    weighted = np.asarray(sensitivity) * img
    if np.shape(weighted) != seq.shape:
        raise InvalidInputError("sensitivity map does not match the matrix")
    return KSpaceMatrix(image_to_kspace(weighted), seq.dwell, channel)


def _color(rows: np.ndarray, factors: np.ndarray, partition: BandPartition) -> np.ndarray:
    if np.all(factors == 1):
        return rows
    return np.fft.ifft(np.fft.fft(rows, axis=-1) * partition.expand(factors), axis=-1)


@dataclass(frozen=True, eq=False)
class Acquisition:
    """Per-channel data of shape (averages, n_phase, n_read).

    ``emi`` holds the interference part alone and ``clean`` the noise-free
    MR k-space of each channel (zero for references).
    """

    seq: SequenceParams
    channels: ChannelSet
    data: dict
    emi: dict
    clean: dict

    def kspace(self, name: str, average: int | None = None, **meta) -> KSpaceMatrix:
        d = self.data[name]
        arr = d.mean(axis=0) if average is None else d[average]
        return KSpaceMatrix(arr, self.seq.dwell, name, meta)

    def clean_kspace(self, name: str) -> KSpaceMatrix:
        return KSpaceMatrix(self.clean[name], self.seq.dwell, name)


def inject_emi(
    clean: Mapping[str, KSpaceMatrix] | KSpaceMatrix,
    timeline: EMITimeline,
    channels: ChannelSet,
    seq: SequenceParams,
    noise_seed: int | None = None,
) -> Acquisition:
    """Add EMI (and thermal noise if ``noise_seed`` is given) to every channel.

    ``clean`` maps receive-channel names to noise-free k-spaces; a single
    matrix is used for every receive channel.  Channels without clean data
    (references) get EMI and noise only.
    """
    waves = timeline.sample_rows(seq)
    if waves.shape[0] != channels.couplings.shape[1]:
        raise InvalidInputError("timeline and channel couplings disagree on interferer count")
    shape = (seq.averages,) + seq.shape
    anc_noise = None
    if channels.anc_noise_rms > 0 and channels.cancel_coupling is not None:
        rng = np.random.default_rng(np.random.SeedSequence(noise_seed or 0, spawn_key=(3,)))
        anc_noise = channels.anc_noise_rms * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2)
    data, emi, clean_out = {}, {}, {}
    for c, name in enumerate(channels.names):
        e = np.tensordot(channels.couplings[c], waves, axes=(0, 0)) if waves.shape[0] else np.zeros(shape, complex)
        if anc_noise is not None:
            e = e + channels.cancel_coupling[c] * anc_noise
        e = channels.adc_gain * _color(e, channels.coloration[c], channels.partition)
        if isinstance(clean, KSpaceMatrix):
            k0 = clean.data if channels.roles[c] == "receive" else None
        else:
            k0 = clean[name].data if name in clean else None
        if k0 is not None and channels.roles[c] == "reference":
            raise InvalidInputError(f"reference channel {name!r} cannot carry MR signal")
        if k0 is not None and k0.shape != seq.shape:
            raise InvalidInputError("clean k-space does not match the sequence matrix")
        k0 = np.zeros(seq.shape, complex) if k0 is None else k0
        d = k0[None] + e
        if noise_seed is not None and channels.noise_sigma[c] > 0:
            rng = np.random.default_rng(np.random.SeedSequence(noise_seed, spawn_key=(1, c)))
            s = channels.noise_sigma[c] / math.sqrt(2)
            d = d + s * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
        data[name], emi[name], clean_out[name] = d, e, k0
    return Acquisition(seq, channels, data, emi, clean_out)
