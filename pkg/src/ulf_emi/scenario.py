"""Scenario configuration, presets and the four-condition imaging pipeline.

A scenario is a JSON document deep-merged over a preset and validated
against :data:`CONFIG_SCHEMA`.  The pipeline acquires the phantom once
without and once with front-end cancellation (same interference and
thermal noise realization) and derives the four conditions:

* ``raw``: no cancellation
* ``post``: band-wise reference cancellation only
* ``spatial``: front-end cancellation only
* ``combined``: both
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from .acquisition import (
    Acquisition,
    AncDrive,
    ApertureSource,
    ChannelSet,
    EMITimeline,
    Interferer,
    LocalSource,
    Phantom,
    SequenceParams,
    apply_spatial_anc,
    build_channel_set,
    head_phantom,
    inject_emi,
    simulate_clean_kspace,
    source_flux,
)
from .anc_post import BandPartition, TransferModel, denoise
from .anc_spatial import ControlChain, DriveSolution, optimize_drive
from .cavity import CavitySpec, IncidenceSpec, field_checksum
from .coilgeom import CoilSpec, Pose, flux_through, path_field, realize_coil
from .errors import ConfigError, InvalidInputError
from .fusion_metrics import ROI, ReconImage, fuse, noise_profile_1d, noise_sigma, reconstruct, snr_db, trace_mismatch
from .io import load_image
from .kspace import KSpaceMatrix

CONDITIONS = ("raw", "post", "spatial", "combined")

DEFAULT_CONFIG: dict = {
    "seed": 0,
    "output_dir": "run",
    "cavity": {"lx": 0.88, "ly": 0.59, "lz": 0.48, "f0": 2.23e6, "r_long": 0.5},
    "incidence": {"axis": "about_e", "angle_deg": 0.0, "amplitude": 2.0e-5},
    "coils": {
        "saddle": {"kind": "saddle", "params": {"radius": 0.09, "length": 0.18, "arc_deg": 120, "turns": 4},
                   "axis": "+x", "position": [0.0, 0.0, 0.0]},
        "solenoid": {"kind": "solenoid", "params": {"radius": 0.07, "length": 0.16, "turns": 12},
                     "axis": "+x", "position": [0.0, 0.0, 0.0]},
        "cancel": {"kind": "cancellation_pair",
                   "params": {"half_u": 0.18, "half_v": 0.18, "gap": 0.2, "turns": 10},
                   "axis": "+y", "position": [0.0, 0.0, 0.0]},
        "detector": {"kind": "detection_loop", "params": {"size": 0.03, "turns": 5},
                     "axis": "+y", "position": [0.35, 0.0, 0.1]},
        "ref_y": {"kind": "detection_loop", "params": {"size": 0.03, "turns": 5},
                  "axis": "+y", "position": [0.3, 0.1, -0.15]},
        "ref_x": {"kind": "detection_loop", "params": {"size": 0.03, "turns": 5},
                  "axis": "+x", "position": [-0.3, 0.1, 0.0]},
    },
    "channels": {"receive": ["saddle", "solenoid"], "reference": ["ref_y", "ref_x"]},
    "anc": {"detector": "detector", "cancel": "cancel", "phase_error_deg": 8.0, "gain_ratio": 0.9,
            "noise_density": 0.0},
    "emi": {
        "duration": None,
        "interferers": [
            {"kind": "band_noise", "frequencies": [-45000.0, 45000.0], "amplitude": 1.0,
             "source": {"type": "aperture"}, "label": "ambient broadband"},
            {"kind": "harmonic_comb", "frequencies": [-37000.0, 9100.0], "amplitude": 0.3,
             "source": {"type": "aperture"}, "label": "line harmonics"},
            {"kind": "band_noise", "frequencies": [-40000.0, 40000.0], "amplitude": 1.0,
             "source": {"type": "local", "position": [-0.22, 0.15, 0.0], "axis": "+x",
                        "radius": 0.02, "current": 1.0e-4},
             "label": "electronics"},
        ],
    },
    "sequence": {"n_read": 128, "n_phase": 128, "dwell": 1e-5, "averages": 3, "tr": 0.02},
    "acquisition": {
        "adc_gain": 1.0e6,
        "noise_sigma": {"saddle": 1.0, "solenoid": 1.0, "ref_y": 0.3, "ref_x": 0.5},
        "sensitivity": {"saddle": [1.0, 0.0], "solenoid": [0.8660254037844387, 0.5]},
        "coloration_spread": 0.12,
    },
    "post": {"bands": 8, "policy": "first-rows", "rows": 1, "ridge": None},
    "phantom": {"kind": "head", "scale": 10.0, "path": None},
    "pipeline": {"spatial_anc": True, "post_anc": True, "fusion": True},
    "rois": {"signal": None, "noise": None},
    "mapping": {"grid": [23, 15, 13], "sweep_angles": [0, 15, 30, 45, 60, 75, 90]},
    "quadrature_order": 12,
}

PRESETS: dict = {
    "default": {},
    "strong-emi": {"incidence": {"amplitude": 2.35e-5}},
}


def _num(**kw):
    return {"type": "number", **kw}


_XYZ = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_AXIS = {"enum": ["+x", "-x", "+y", "-y", "+z", "-z"]}
_ROI = {"oneOf": [{"type": "null"},
                  {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 4, "maxItems": 4}]}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False, "required": list(required)}


CONFIG_SCHEMA: dict = _obj({
    "seed": {"type": "integer", "minimum": 0},
    "preset": {"enum": sorted(PRESETS)},
    "output_dir": {"type": "string"},
    "cavity": _obj({k: _num(exclusiveMinimum=0) for k in ("lx", "ly", "lz", "f0", "r_long")}),
    "incidence": _obj({"axis": {"enum": ["about_e", "about_h"]}, "angle_deg": _num(minimum=0, maximum=90),
                       "amplitude": _num(minimum=0)}),
    "coils": {"type": "object", "additionalProperties": _obj({
        "kind": {"enum": ["solenoid", "saddle", "detection_loop", "cancellation_pair"]},
        "params": {"type": "object", "additionalProperties": {"type": ["number", "string"]}},
        "axis": _AXIS, "position": _XYZ}, ("kind", "params"))},
    "channels": _obj({"receive": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                      "reference": {"type": "array", "items": {"type": "string"}}}),
    "anc": _obj({"detector": {"type": "string"}, "cancel": {"type": "string"},
                 "phase_error_deg": _num(), "gain_ratio": _num(minimum=0), "noise_density": _num(minimum=0)}),
    "emi": _obj({
        "duration": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "interferers": {"type": "array", "items": _obj({
            "kind": {"enum": ["tone", "harmonic_comb", "band_noise"]},
            "frequencies": {"type": "array", "items": {"type": "number"}, "minItems": 1, "maxItems": 2},
            "amplitude": {"oneOf": [_num(), {"type": "array", "items": _num(), "minItems": 2, "maxItems": 2}]},
            "phase_deg": _num(),
            "seed": {"type": "integer", "minimum": 0},
            "n_lines": {"type": "integer", "minimum": 1},
            "label": {"type": "string"},
            "source": {"oneOf": [
                _obj({"type": {"const": "aperture"}, "angle_deg": _num(minimum=0, maximum=90),
                      "axis": {"enum": ["about_e", "about_h"]}, "amplitude": _num(minimum=0)}, ("type",)),
                _obj({"type": {"const": "local"}, "position": _XYZ, "axis": _AXIS,
                      "radius": _num(exclusiveMinimum=0), "current": _num()}, ("type", "position")),
            ]},
        }, ("kind", "frequencies"))},
    }),
    "sequence": _obj({"n_read": {"type": "integer", "minimum": 1}, "n_phase": {"type": "integer", "minimum": 1},
                      "dwell": _num(exclusiveMinimum=0), "averages": {"type": "integer", "minimum": 1},
                      "tr": _num(exclusiveMinimum=0)}),
    "acquisition": _obj({
        "adc_gain": _num(exclusiveMinimum=0),
        "noise_sigma": {"type": "object", "additionalProperties": _num(minimum=0)},
        "sensitivity": {"type": "object",
                        "additionalProperties": {"type": "array", "items": _num(), "minItems": 2, "maxItems": 2}},
        "coloration_spread": _num(minimum=0),
    }),
    "post": _obj({"bands": {"type": "integer", "minimum": 1},
                  "policy": {"enum": ["first-rows", "outer-phase-encodes"]},
                  "rows": {"type": "integer", "minimum": 1},
                  "ridge": {"type": ["number", "null"], "minimum": 0}}),
    "phantom": _obj({"kind": {"enum": ["head", "file", "zero"]}, "scale": _num(minimum=0),
                     "path": {"type": ["string", "null"]}}),
    "pipeline": _obj({k: {"type": "boolean"} for k in ("spatial_anc", "post_anc", "fusion")}),
    "rois": _obj({"signal": _ROI, "noise": _ROI}),
    "mapping": _obj({"grid": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 3,
                              "maxItems": 3},
                     "sweep_angles": {"type": "array", "items": _num(minimum=0, maximum=90), "minItems": 1}}),
    "quadrature_order": {"type": "integer", "minimum": 2},
}, ("seed",))


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "coils":
            out[k] = deep_merge(out[k], v)
        elif isinstance(v, dict) and k == "coils" and isinstance(out.get(k), dict):
            coils = copy.deepcopy(out[k])
            for name, spec in v.items():
                coils[name] = deep_merge(coils[name], spec) if name in coils else copy.deepcopy(spec)
            out[k] = coils
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(user: dict | None = None, preset: str = "default", seed: int | None = None) -> dict:
    """Merge ``user`` over the preset and validate; the result always carries a seed.

    The seed must come from the user document or the ``seed`` override.
    """
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    user = {} if user is None else user
    if not isinstance(user, dict):
        raise ConfigError("configuration must be a JSON object")
    if seed is not None:
        user = {**user, "seed": seed}
    if "seed" not in user:
        raise ConfigError("a master seed is required (config 'seed' or --seed)")
    cfg = deep_merge(deep_merge(DEFAULT_CONFIG, PRESETS[preset]), {**user, "preset": preset})
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def sub_seed(master: int, *key: int) -> int:
    return int(np.random.SeedSequence(master, spawn_key=key).generate_state(1)[0])


@dataclass(frozen=True, eq=False)
class Scenario:
    cfg: dict
    cavity: CavitySpec
    incidence: IncidenceSpec
    coils: dict
    seq: SequenceParams
    timeline: EMITimeline
    channels: ChannelSet
    partition: BandPartition
    phantom: Phantom
    signal_roi: ROI
    noise_roi: ROI
    drive: AncDrive | None = None
    drive_solution: DriveSolution | None = None
    extras: dict = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return self.cfg["seed"]

    @property
    def receive(self) -> list[str]:
        return list(self.cfg["channels"]["receive"])

    @property
    def references(self) -> list[str]:
        return list(self.cfg["channels"]["reference"])


def _coil(spec: dict, name: str) -> CoilSpec:
    pose = Pose.along(spec.get("axis", "+z"), spec.get("position", (0.0, 0.0, 0.0)))
    try:
        return CoilSpec(spec["kind"], spec["params"], pose, name)
    except Exception as exc:
        raise ConfigError(f"coil {name!r}: {exc}") from None


def _interferer(spec: dict, index: int, cfg: dict) -> Interferer:
    src = spec.get("source", {"type": "aperture"})
    if src["type"] == "aperture":
        inc = cfg["incidence"]
        source = ApertureSource(IncidenceSpec(src.get("axis", inc["axis"]), src.get("angle_deg", inc["angle_deg"]),
                                              src.get("amplitude", inc["amplitude"])))
    else:
        loop = CoilSpec("detection_loop", {"size": src.get("radius", 0.02)},
                        Pose.along(src.get("axis", "+x"), src["position"]), f"source{index}")
        source = LocalSource(loop, src.get("current", 1.0))
    amp = spec.get("amplitude", 1.0)
    amp = complex(amp[0], amp[1]) if isinstance(amp, list) else complex(amp)
    return Interferer(spec["kind"], tuple(spec["frequencies"]), amp, spec.get("phase_deg", 0.0),
                      spec.get("seed", sub_seed(cfg["seed"], 2, index)), spec.get("n_lines", 0), source,
                      spec.get("label", ""))


def default_rois(n_phase: int, n_read: int) -> tuple[ROI, ROI]:
    """Uniform lower-brain patch of the head phantom and the empty strip above the head.

    The noise strip spans every readout column so EMI streaks are sampled
    across the whole readout band.
    """
    sig = ROI(round(0.61 * n_phase), round(0.73 * n_phase), round(0.375 * n_read), round(0.625 * n_read))
    noise = ROI(0, max(2, n_phase // 16), 0, n_read)
    return sig, noise


def _phantom(cfg: dict, seq: SequenceParams) -> Phantom:
    ph = cfg["phantom"]
    if ph["kind"] == "zero":
        return Phantom(np.zeros(seq.shape))
    if ph["kind"] == "file":
        if not ph.get("path"):
            raise ConfigError("phantom kind 'file' needs a path")
        img = load_image(ph["path"])
        top = img.max()
        return Phantom(ph["scale"] * img / top if top > 0 else img)
    if seq.n_phase != seq.n_read:
        raise ConfigError("the built-in head phantom is square")
    return head_phantom(seq.n_read, ph["scale"])


def build_scenario(cfg: dict) -> Scenario:
    """Instantiate every model object a configuration describes."""
    try:
        cavity = CavitySpec(**cfg["cavity"])
        inc = cfg["incidence"]
        incidence = IncidenceSpec(inc["axis"], inc["angle_deg"], inc["amplitude"])
        seq = SequenceParams(**cfg["sequence"])
    except Exception as exc:
        raise ConfigError(str(exc)) from None
    coils = {name: _coil(spec, name) for name, spec in cfg["coils"].items()}
    receive, refs = cfg["channels"]["receive"], cfg["channels"]["reference"]
    for name in receive + refs:
        if name not in coils:
            raise ConfigError(f"channel {name!r} has no coil definition")
    try:
        interferers = [_interferer(s, i, cfg) for i, s in enumerate(cfg["emi"]["interferers"])]
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(f"interferer: {exc}") from None
    duration = cfg["emi"]["duration"] or seq.duration
    timeline = EMITimeline(tuple(interferers), duration)
    acq = cfg["acquisition"]
    partition = BandPartition.equal(seq.n_read, cfg["post"]["bands"])
    names = receive + refs
    sens = {n: complex(*acq["sensitivity"].get(n, (1.0, 0.0))) for n in receive}
    channels = build_channel_set(
        {n: coils[n] for n in names}, {**{n: "receive" for n in receive}, **{n: "reference" for n in refs}},
        timeline, cavity, {n: acq["noise_sigma"].get(n, 1.0) for n in names}, acq["adc_gain"], sens,
        partition, acq["coloration_spread"], sub_seed(cfg["seed"], 4), seq.n_read, cfg["quadrature_order"],
    )
    phantom = _phantom(cfg, seq)
    sig, noise = default_rois(seq.n_phase, seq.n_read)
    if cfg["rois"]["signal"] is not None:
        sig = ROI(*cfg["rois"]["signal"])
    if cfg["rois"]["noise"] is not None:
        noise = ROI(*cfg["rois"]["noise"])
    scen = Scenario(cfg, cavity, incidence, coils, seq, timeline, channels, partition, phantom, sig, noise)
    if cfg["pipeline"]["spatial_anc"]:
        drive, sol = tune_drive(scen)
        scen = Scenario(cfg, cavity, incidence, coils, seq, timeline, channels, partition, phantom, sig, noise,
                        drive, sol)
    return scen


def tune_drive(scen: Scenario, target: str | None = None) -> tuple[AncDrive, DriveSolution]:
    """Optimal chain for the aperture field at the target coil, then mistuned per config.

    Every aperture interferer shares one spatial mode, so a single gain and
    delay null all of them at once.
    """
    cfg = scen.cfg["anc"]
    target = target or scen.receive[0]
    q = scen.cfg["quadrature_order"]
    det = scen.coils[cfg["detector"]]
    cancel = scen.coils[cfg["cancel"]]
    unit = ApertureSource(scen.incidence)
    emi = source_flux(unit, scen.coils[target], scen.cavity, q)
    cpath = realize_coil(cancel)
    per_amp = {n: flux_through(path_field(cpath), scen.coils[n], q).flux for n in scen.channels.names}
    sol = optimize_drive(emi, per_amp[target], source_flux(unit, det, scen.cavity, q), scen.cavity.f0)
    chain = sol.chain.mistuned(cfg["phase_error_deg"], cfg["gain_ratio"])
    chain = ControlChain(chain.gain, chain.phase_deg, cfg["noise_density"])
    det_flux = np.array([source_flux(i.source, det, scen.cavity, q) for i in scen.timeline.interferers])
    drive = AncDrive(chain, det_flux, np.array([per_amp[n] for n in scen.channels.names]), scen.cavity.f0,
                     field_checksum(scen.cavity))
    return drive, sol


@dataclass(frozen=True, eq=False)
class PipelineResult:
    scenario: Scenario
    kspaces: dict          # (condition, channel) -> averaged KSpaceMatrix
    clean: dict            # channel -> KSpaceMatrix
    models: dict           # (condition, channel, average) -> TransferModel
    acquisitions: dict     # "raw" / "spatial" -> Acquisition

    @property
    def conditions(self) -> list[str]:
        return [c for c in CONDITIONS if any(k[0] == c for k in self.kspaces)]


def _denoise_acquisition(acq: Acquisition, scen: Scenario, models: dict, condition: str) -> dict:
    post = scen.cfg["post"]
    out = {}
    for ch in scen.receive:
        rows = []
        for a in range(scen.seq.averages):
            k, model = denoise(acq.kspace(ch, a), [acq.kspace(r, a) for r in scen.references], scen.partition,
                               post["policy"], post["rows"], post["ridge"])
            models[(condition, ch, a)] = model
            rows.append(k.data)
        out[ch] = np.mean(rows, axis=0)
    return out


def run_pipeline(scen: Scenario) -> PipelineResult:
    seq = scen.seq
    clean = {ch: simulate_clean_kspace(scen.phantom, scen.channels.sensitivity[scen.channels.index(ch)], seq, ch)
             for ch in scen.receive}
    noise_seed = sub_seed(scen.seed, 1)
    toggles = scen.cfg["pipeline"]
    acqs = {"raw": inject_emi(clean, scen.timeline, scen.channels, seq, noise_seed)}
    if toggles["spatial_anc"]:
        chans = apply_spatial_anc(scen.channels, scen.drive, seq.bandwidth)
        acqs["spatial"] = inject_emi(clean, scen.timeline, chans, seq, noise_seed)
    kspaces, models = {}, {}
    for base, acq in acqs.items():
        for ch in scen.receive + scen.references:
            kspaces[(base, ch)] = acq.kspace(ch, stages=[base])
        if toggles["post_anc"] and scen.references:
            cond = "post" if base == "raw" else "combined"
            for ch, data in _denoise_acquisition(acq, scen, models, cond).items():
                kspaces[(cond, ch)] = KSpaceMatrix(data, seq.dwell, ch, {"stages": [base, "post"]})
    return PipelineResult(scen, kspaces, clean, models, acqs)


def best_condition(conditions) -> str:
    for c in ("combined", "post", "spatial", "raw"):
        if c in conditions:
            return c
    raise InvalidInputError("no conditions available")


def evaluate(kspaces: dict, clean: dict, receive: list, signal_roi: ROI, noise_roi: ROI,
             fusion: bool = True) -> dict:
    """Metrics shared by the pipeline and the report command.

    ``kspaces`` maps (condition, channel) to averaged k-space and ``clean``
    maps receive channels to their noise-free k-space.
    """
    conditions = [c for c in CONDITIONS if all((c, ch) in kspaces for ch in receive)]
    per = {}
    traces = {}
    images = {}
    for cond in conditions:
        for ch in receive:
            k = kspaces[(cond, ch)]
            img = reconstruct(k, [cond])
            images[(cond, ch)] = img
            rep = snr_db(img, signal_roi, noise_roi)
            tr = noise_profile_1d(k, clean[ch])
            traces[(cond, ch)] = tr
            per[f"{cond}/{ch}"] = {
                "snr_db": rep.snr_db,
                "snr_linear": rep.snr_linear,
                "mu_signal": rep.mu_signal,
                "sigma_noise": rep.sigma_noise,
                "noise_rms": float(np.sqrt(np.mean(tr ** 2))),
            }
    m = {"conditions": conditions, "channels": per}
    if len(receive) >= 2 and "raw" in conditions:
        s, o = receive[0], receive[1]
        rms = lambda c, ch: per[f"{c}/{ch}"]["noise_rms"]
        m["raw_rms_ratio"] = rms("raw", s) / rms("raw", o)
        m["snr_db_ratio_raw"] = per[f"raw/{o}"]["snr_db"] / per[f"raw/{s}"]["snr_db"]
        supp = {}
        for cond in conditions:
            if cond != "raw":
                supp[cond] = {ch: 1 - rms(cond, ch) / rms("raw", ch) for ch in receive}
        m["suppression"] = supp
        if "post" in conditions:
            m["post_residual_ratio"] = rms("post", s) / rms("post", o)
        if "combined" in conditions and "post" in conditions:
            m["trace_mismatch_combined_vs_post_solenoid"] = trace_mismatch(traces[("combined", s)],
                                                                           traces[("post", o)])
    if fusion and conditions and len(receive) >= 2:
        cond = best_condition(conditions)
        imgs = [images[(cond, ch)] for ch in receive]
        sig = [noise_sigma(im, noise_roi) for im in imgs]
        fused, weights = fuse(imgs, sig, signal_roi)
        rep = snr_db(fused, signal_roi, noise_roi)
        best = max(per[f"{cond}/{ch}"]["snr_linear"] for ch in receive)
        m["fusion"] = {"condition": cond, "snr_db": rep.snr_db, "snr_linear": rep.snr_linear,
                       "gain_linear": rep.snr_linear / best, **weights.to_dict()}
        images[("fused", cond)] = fused
    return {"metrics": m, "traces": traces, "images": images}


def scenario_metrics(result: PipelineResult) -> dict:
    scen = result.scenario
    out = evaluate(result.kspaces, result.clean, scen.receive, scen.signal_roi, scen.noise_roi,
                   scen.cfg["pipeline"]["fusion"])
    if scen.drive_solution is not None:
        chans = apply_spatial_anc(scen.channels, scen.drive)
        aperture = [i for i, intf in enumerate(scen.timeline.interferers) if isinstance(intf.source, ApertureSource)]
        s = scen.channels.index(scen.receive[0])
        before = np.abs(scen.channels.couplings[s, aperture]).sum()
        after = np.abs(chans.couplings[s, aperture]).sum()
        out["metrics"]["spatial_anc"] = {
            "flux_reduction": float(1 - after / before) if before > 0 else 0.0,
            "optimal_residual_ratio": scen.drive_solution.residual_ratio,
            "chain_gain": scen.drive.chain.gain,
            "chain_phase_deg": scen.drive.chain.phase_deg,
        }
    return out
