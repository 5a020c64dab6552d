"""Command-line front end: ``ulf-emi <command> [--config PATH] [--seed N] [--out DIR] [--preset NAME]``.

Exit codes: 0 success, 1 model error, 2 configuration error, 3 missing inputs.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .acquisition import ApertureSource, apply_spatial_anc
from .anc_post import denoise as post_denoise
from .anc_spatial import spatial_cancellation_report
from .cavity import IncidenceSpec, cavity_field, coupling_scale, decay_constant, emi_field, emi_field_at, symmetric_axis
from .coilgeom import flux_through
from .errors import ConfigError, CoverageError, UlfEmiError
from .fusion_metrics import ROI, fuse, noise_sigma, reconstruct, snr_db
from .io import read_kspace, write_columns_csv, write_json, write_kspace, write_pgm
from .scenario import (
    CONDITIONS,
    PRESETS,
    best_condition,
    build_scenario,
    config_hash,
    evaluate,
    load_config,
    run_pipeline,
)

EXIT_OK, EXIT_MODEL, EXIT_CONFIG, EXIT_MISSING = 0, 1, 2, 3


class MissingInputs(Exception):
    def __init__(self, missing):
        super().__init__("missing inputs: " + ", ".join(map(str, missing)))
        self.missing = list(missing)


def _read_config(args) -> dict:
    user = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise MissingInputs([path])
        try:
            user = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: malformed JSON ({exc})") from None
    return load_config(user, args.preset, args.seed)


def _out_dir(args, cfg: dict | None = None) -> Path:
    out = Path(args.out) if args.out else Path((cfg or {}).get("output_dir", "run"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _profiles(scen, incidence, n=61):
    cav = scen.cavity
    y = symmetric_axis(cav.ly / 2, n)
    x = np.linspace(-cav.lx / 2, cav.lx / 2, n)
    along_y = emi_field_at(cav, incidence, np.column_stack([np.zeros(n), y, np.zeros(n)]))
    along_x = emi_field_at(cav, incidence, np.column_stack([x, np.zeros(n), np.zeros(n)]))
    return ({"y": y, "hx": along_y[:, 0].real, "hy": along_y[:, 1].real},
            {"x": x, "hx": along_x[:, 0].real, "hy": along_x[:, 1].real})


def cmd_map_field(args) -> int:
    cfg = _read_config(args)
    scen = build_scenario({**cfg, "pipeline": {**cfg["pipeline"], "spatial_anc": False}})
    out = _out_dir(args, cfg)
    cav, inc = scen.cavity, scen.incidence
    nx, ny, nz = cfg["mapping"]["grid"]
    half = cav.half_extent
    grid = emi_field(cav, inc, symmetric_axis(half[0], nx), symmetric_axis(half[1], ny), symmetric_axis(half[2], nz))
    grid.to_csv(out / "field_grid.csv")
    py, px = _profiles(scen, inc)
    write_columns_csv(out / "profile_y.csv", py)
    write_columns_csv(out / "profile_x.csv", px)
    summary = {
        "decay_constant": decay_constant(cav),
        "quasi_static": cav.quasi_static,
        "wavelength": cav.wavelength,
        "field_checksum": grid.checksum(),
        "coupling_scale": coupling_scale(inc),
        "hy_center": float(py["hy"][len(py["y"]) // 2]),
        "max_abs_hx_on_midplane": float(np.max(np.abs(px["hx"]))),
        "config_hash": config_hash(cfg),
    }
    if args.sweep:
        peaks = []
        for ang in cfg["mapping"]["sweep_angles"]:
            inc_a = IncidenceSpec(inc.axis, float(ang), inc.amplitude)
            p, _ = _profiles(scen, inc_a)
            write_columns_csv(out / f"profile_y_theta{int(round(ang)):02d}.csv", p)
            peaks.append({"angle_deg": ang, "peak_hy": float(np.max(np.abs(p["hy"])))})
        summary["sweep"] = peaks
    write_json(out / "summary.json", summary)
    return EXIT_OK


def cmd_sweep_angle(args) -> int:
    cfg = _read_config(args)
    scen = build_scenario({**cfg, "pipeline": {**cfg["pipeline"], "spatial_anc": False}})
    out = _out_dir(args, cfg)
    q = cfg["quadrature_order"]
    cols = {k: [] for k in ("angle_deg", "coupling_scale", "saddle_flux", "solenoid_flux")}
    for ang in cfg["mapping"]["sweep_angles"]:
        inc = IncidenceSpec(scen.incidence.axis, float(ang), scen.incidence.amplitude)
        fn = cavity_field(scen.cavity, inc)
        cols["angle_deg"].append(ang)
        cols["coupling_scale"].append(coupling_scale(inc))
        cols["saddle_flux"].append(abs(flux_through(fn, scen.coils[scen.receive[0]], q).flux))
        cols["solenoid_flux"].append(abs(flux_through(fn, scen.coils[scen.receive[-1]], q).flux))
    write_columns_csv(out / "sweep.csv", cols)
    scale = np.array(cols["coupling_scale"])
    write_json(out / "summary.json", {
        "axis": scen.incidence.axis.value,
        "strictly_decreasing": bool(np.all(np.diff(scale) < 0)),
        "config_hash": config_hash(cfg),
        **{k: list(map(float, v)) for k, v in cols.items()},
    })
    return EXIT_OK


def cmd_anc_tune(args) -> int:
    cfg = _read_config(args)
    cfg = {**cfg, "pipeline": {**cfg["pipeline"], "spatial_anc": True}}
    scen = build_scenario(cfg)
    out = _out_dir(args, cfg)
    anc = cfg["anc"]
    rep = spatial_cancellation_report(
        cavity_field(scen.cavity, scen.incidence), scen.coils[anc["cancel"]], scen.coils[scen.receive[0]],
        scen.drive_solution.current, domain=(-scen.cavity.half_extent, scen.cavity.half_extent),
        quadrature_order=cfg["quadrature_order"])
    rep.to_json(out / "spatial_report.json")
    rep.to_csv(out / "spatial_points.csv")
    metrics = scenario_metrics_drive_only(scen)
    write_json(out / "anc.json", {
        "optimal_chain": {"gain": scen.drive_solution.chain.gain, "phase_deg": scen.drive_solution.chain.phase_deg},
        "optimal_current": [scen.drive_solution.current.real, scen.drive_solution.current.imag],
        "optimal_residual_ratio": scen.drive_solution.residual_ratio,
        "applied_chain": {"gain": scen.drive.chain.gain, "phase_deg": scen.drive.chain.phase_deg,
                          "noise_density": scen.drive.chain.noise_density},
        "field_checksum": scen.drive.field_checksum,
        "config_hash": config_hash(cfg),
        **metrics,
    })
    return EXIT_OK


def scenario_metrics_drive_only(scen) -> dict:
    after = apply_spatial_anc(scen.channels, scen.drive)
    out = {}
    for name in scen.channels.names:
        i = scen.channels.index(name)
        b, a = scen.channels.couplings[i], after.couplings[i]
        out[name] = {"coupling_before": np.abs(b).tolist(), "coupling_after": np.abs(a).tolist()}
    aperture = [k for k, intf in enumerate(scen.timeline.interferers) if isinstance(intf.source, ApertureSource)]
    s = scen.channels.index(scen.receive[0])
    before = np.abs(scen.channels.couplings[s, aperture]).sum()
    return {"channels": out,
            "applied_flux_reduction": float(1 - np.abs(after.couplings[s, aperture]).sum() / before)}


def _kspace_name(condition: str, channel: str) -> str:
    return f"{condition}_{channel}.ksp"


def cmd_simulate(args) -> int:
    cfg = _read_config(args)
    scen = build_scenario(cfg)
    result = run_pipeline(scen)
    out = _out_dir(args, cfg)
    kdir = out / "kspace"
    kdir.mkdir(exist_ok=True)
    h = config_hash(cfg)
    files = []
    for (cond, ch), k in sorted(result.kspaces.items()):
        name = _kspace_name(cond, ch)
        write_kspace(kdir / name, k, cfg["seed"], h, condition=cond)
        files.append(name)
    for ch, k in sorted(result.clean.items()):
        name = _kspace_name("clean", ch)
        write_kspace(kdir / name, k, cfg["seed"], h, condition="clean")
        files.append(name)
    write_json(out / "manifest.json", {
        "config": cfg,
        "config_hash": h,
        "seed": cfg["seed"],
        "conditions": result.conditions,
        "receive": scen.receive,
        "reference": scen.references,
        "rois": {"signal": scen.signal_roi.to_list(), "noise": scen.noise_roi.to_list()},
        "files": files,
    })
    return EXIT_OK


def _load_run(run: Path) -> tuple[dict, dict, dict]:
    man_path = run / "manifest.json"
    if not man_path.is_file():
        raise MissingInputs([man_path])
    manifest = json.loads(man_path.read_text())
    missing = [run / "kspace" / f for f in manifest.get("files", []) if not (run / "kspace" / f).is_file()]
    if missing:
        raise MissingInputs(missing)
    kspaces, clean = {}, {}
    for f in manifest["files"]:
        cond, ch = f[:-4].split("_", 1)
        k, _ = read_kspace(run / "kspace" / f)
        if cond == "clean":
            clean[ch] = k
        else:
            kspaces[(cond, ch)] = k
    return manifest, kspaces, clean


def _run_dir(args) -> Path:
    if not args.run:
        raise MissingInputs(["run directory argument"])
    run = Path(args.run)
    if not run.is_dir():
        raise MissingInputs([run])
    return run


def cmd_denoise(args) -> int:
    run = _run_dir(args)
    manifest, kspaces, _ = _load_run(run)
    post = manifest["config"]["post"]
    cond = args.condition or "raw"
    out = Path(args.out) if args.out else run / "denoised"
    refs = manifest["reference"]
    missing = [_kspace_name(cond, ch) for ch in manifest["receive"] + refs if (cond, ch) not in kspaces]
    if missing:
        raise MissingInputs(missing)
    out.mkdir(parents=True, exist_ok=True)
    for ch in manifest["receive"]:
        cleaned, model = post_denoise(kspaces[(cond, ch)], [kspaces[(cond, r)] for r in refs], None,
                                      post["policy"], post["rows"], post["ridge"], post["bands"])
        write_kspace(out / f"{cond}_{ch}_denoised.ksp", cleaned, manifest["seed"], manifest["config_hash"],
                     condition=f"{cond}+post")
        model.to_json(out / f"{cond}_{ch}_transfer.json")
    return EXIT_OK


def cmd_fuse(args) -> int:
    run = _run_dir(args)
    manifest, kspaces, _ = _load_run(run)
    receive = manifest["receive"]
    cond = args.condition or best_condition([c for c in CONDITIONS if all((c, ch) in kspaces for ch in receive)])
    missing = [_kspace_name(cond, ch) for ch in receive if (cond, ch) not in kspaces]
    if missing:
        raise MissingInputs(missing)
    sig_roi, noise_roi = ROI(*manifest["rois"]["signal"]), ROI(*manifest["rois"]["noise"])
    imgs = [reconstruct(kspaces[(cond, ch)]) for ch in receive]
    fused, weights = fuse(imgs, [noise_sigma(im, noise_roi) for im in imgs], sig_roi)
    out = Path(args.out) if args.out else run
    out.mkdir(parents=True, exist_ok=True)
    write_pgm(out / f"fused_{cond}.pgm", fused.magnitude)
    rep = snr_db(fused, sig_roi, noise_roi)
    write_json(out / f"fusion_{cond}.json", {"condition": cond, **weights.to_dict(), **rep.to_dict()})
    return EXIT_OK


def cmd_report(args) -> int:
    run = _run_dir(args)
    manifest, kspaces, clean = _load_run(run)
    if not kspaces:
        raise MissingInputs([run / "kspace"])
    receive = manifest["receive"]
    ev = evaluate(kspaces, clean, receive, ROI(*manifest["rois"]["signal"]), ROI(*manifest["rois"]["noise"]),
                  manifest["config"]["pipeline"]["fusion"])
    out = Path(args.out) if args.out else run / "report"
    (out / "images").mkdir(parents=True, exist_ok=True)
    metrics = ev["metrics"]
    metrics["config_hash"] = manifest["config_hash"]
    metrics["ordering"] = snr_ordering(metrics, receive)
    write_json(out / "report.json", metrics)
    scale = max(float(im.magnitude.max()) for im in ev["images"].values())
    for (cond, ch), img in sorted(ev["images"].items()):
        write_pgm(out / "images" / f"{cond}_{ch}.pgm", img.magnitude, scale=scale)
    cols = {"row": np.arange(next(iter(ev["traces"].values())).size)}
    for (cond, ch), tr in sorted(ev["traces"].items()):
        cols[f"{cond}/{ch}"] = tr
    write_columns_csv(out / "noise_profiles.csv", cols)
    table = {"condition": [], "channel": [], "snr_db": [], "noise_rms": []}
    for key, v in sorted(metrics["channels"].items()):
        cond, ch = key.split("/")
        table["condition"].append(CONDITIONS.index(cond))
        table["channel"].append(receive.index(ch))
        table["snr_db"].append(v["snr_db"])
        table["noise_rms"].append(v["noise_rms"])
    write_columns_csv(out / "snr_table.csv", table)
    return EXIT_OK


def snr_ordering(metrics: dict, receive, tol: float = 0.25) -> dict:
    """Check raw-saddle < raw-solenoid ~ post-saddle < combined-saddle ~ post-solenoid.

    The saddle and solenoid are the first two receive channels.  ``~``
    means linear SNRs within ``tol`` of each other (relative).
    """
    ch = metrics["channels"]
    if len(receive) < 2 or not all(f"{c}/{n}" in ch for c in ("raw", "post", "combined") for n in receive[:2]):
        return {"complete": False}
    s, o = receive[0], receive[1]
    lin = lambda c, n: ch[f"{c}/{n}"]["snr_linear"]
    close = lambda a, b: abs(a / b - 1) <= tol
    checks = {
        "raw_saddle_lt_raw_solenoid": lin("raw", s) < lin("raw", o),
        "raw_solenoid_approx_post_saddle": close(lin("post", s), lin("raw", o)),
        "post_saddle_lt_combined_saddle": lin("post", s) < lin("combined", s),
        "combined_saddle_approx_post_solenoid": close(lin("combined", s), lin("post", o)),
    }
    return {"complete": True, "holds": all(checks.values()), **checks}


COMMANDS = {
    "map-field": cmd_map_field,
    "sweep-angle": cmd_sweep_angle,
    "simulate": cmd_simulate,
    "denoise": cmd_denoise,
    "anc-tune": cmd_anc_tune,
    "fuse": cmd_fuse,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ulf-emi", description="EMI field, cancellation and imaging simulator")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON scenario file")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--preset", default="default", choices=sorted(PRESETS))
        if name == "map-field":
            sp.add_argument("--sweep", action="store_true", help="also write one profile per sweep angle")
        if name in ("denoise", "fuse", "report"):
            sp.add_argument("run", nargs="?", help="directory written by 'simulate'")
        if name in ("denoise", "fuse"):
            sp.add_argument("--condition", choices=CONDITIONS)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CoverageError as exc:
        print(f"config error: {exc} (row {exc.row})", file=sys.stderr)
        return EXIT_CONFIG
    except MissingInputs as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_MISSING
    except UlfEmiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
