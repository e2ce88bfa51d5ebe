"""
Command-line front end.

    modalspdc [--config PATH] [--out DIR] [--threads N] [--seed N] COMMAND [options]

Each command writes into ``<out>/<command>/`` and finishes with a
``manifest.json`` listing every emitted file with its SHA-256. Outputs hold
no timestamps or timings, so identical (config, seed) runs are byte-identical.

Exit codes: 0 success, 2 configuration error, 3 numeric or solver failure,
4 calibration targets not met.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .beamlab import (GridSpec, MixedBeam, caustic_planes, estimate_waist, facet_field, facet_offset,
                      fit_m2, heralded_beam, hg_field, iso_sampling_plan, relay_magnification,
                      scan_planes)
from .config import ConfigError, RunConfig, default_config_path, parse_config, parse_label, write_config
from .jsa import (PumpEnvelope, PumpExcitation, SpectralFilter, apply_filter, build_jsa,
                  detect_islands, heralded_spatial_state, jsi_map, solve_pair_rate,
                  counting_statistics)
from .phasematch import (CalibrationTargets, ModeSet, band_summary, calibrate, fundamental_center,
                         inverse_lambda_grid, label_str, map_bands, sfg_response)

log = logging.getLogger("modalspdc")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_THRESHOLD = 0, 2, 3, 4


# output writers -----------------------------------------------------------

class Emitter:
    """Writes artifacts into one directory and remembers them for the manifest."""

    def __init__(self, directory):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files = []

    def _record(self, path):
        self.files.append(Path(path))
        return path

    def json(self, name, obj):
        path = self.dir / name
        path.write_text(json.dumps(obj, indent=2, allow_nan=True) + "\n", encoding="utf-8")
        return self._record(path)

    def csv(self, name, header, columns):
        """Columns of equal length; one header line, numbers as '%.10g', text as is."""
        path = self.dir / name
        cols = [np.asarray(c).ravel() for c in columns]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            if all(c.dtype.kind in "biuf" for c in cols):
                np.savetxt(fh, np.column_stack(cols).astype(float), fmt="%.10g", delimiter=",")
            else:
                fmt = [(lambda v: str(v)) if c.dtype.kind in "SU" else (lambda v: f"{float(v):.10g}")
                       for c in cols]
                for row in zip(*cols):
                    fh.write(",".join(f(v) for f, v in zip(fmt, row)) + "\n")
        return self._record(path)

    def pgm(self, name, image, rows, cols, row_label, col_label, **meta):
        """16-bit binary graymap scaled to the image maximum, plus a sidecar JSON of axis scales."""
        img = np.asarray(image, dtype=float)
        top = float(img.max()) if img.size else 0.0
        scaled = np.zeros(img.shape) if top <= 0 else np.clip(img / top, 0.0, 1.0)
        q = np.round(scaled * 65535).astype(">u2")
        path = self.dir / name
        with open(path, "wb") as fh:
            fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n65535\n".encode("ascii"))
            fh.write(q.tobytes())
        self._record(path)
        side = {"image": name, "rows": {"quantity": row_label, "values": [float(v) for v in rows]},
                "columns": {"quantity": col_label, "values": [float(v) for v in cols]},
                "value_at_maxval": top, "maxval": 65535, **meta}
        self.json(Path(name).stem + ".json", side)
        return path

    def manifest(self, command, config: RunConfig, extra=None):
        entries = []
        for p in sorted(set(self.files), key=str):
            blob = Path(p).read_bytes()
            try:
                rel = str(Path(p).relative_to(self.dir))
            except ValueError:
                rel = str(Path(p).resolve())
            entries.append({"path": rel, "sha256": hashlib.sha256(blob).hexdigest(), "bytes": len(blob)})
        cfg = json.dumps(config.data, sort_keys=True).encode() if config is not None else b""
        doc = {"command": command, "version": __version__,
               "config_sha256": hashlib.sha256(cfg).hexdigest(), "files": entries}
        if extra:
            doc.update(extra)
        path = self.dir / "manifest.json"
        path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        return doc


def _finite(obj):
    """Replace non-finite floats so reports stay strict JSON."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


# shared setup -------------------------------------------------------------

def _modes(cfg: RunConfig, threads):
    return ModeSet(cfg.geometry(), threads=threads, **cfg.modeset_kwargs())


def _spectral_grid(cfg: RunConfig):
    g = cfg["grids"]
    return inverse_lambda_grid(g["spectral_min_nm"], g["spectral_max_nm"], g["spectral_points"])


def _jsa(cfg: RunConfig, ms, threads):
    p = cfg["pump"]
    lam = _spectral_grid(cfg)
    ex = PumpExcitation.from_weights(cfg.excitation_weights())
    return build_jsa(ex, PumpEnvelope(p["center_nm"], p["fwhm_nm"]), ms, lam, lam, threads=threads)


def _fundamental_island(islands, ms):
    """Island closest to the fundamental degenerate band centre."""
    _, c0 = fundamental_center(ms)
    return min(islands, key=lambda i: math.hypot(i.center_h_nm - c0.lam_h_nm, i.center_v_nm - c0.lam_v_nm))


def _herald_filter(cfg: RunConfig, islands, ms, overrides=None):
    h = dict(cfg["filters"]["herald"])
    for k, v in (overrides or {}).items():
        if v is not None:
            h[k] = v
    center = h["center_nm"]
    auto = center is None
    if auto:
        isl = _fundamental_island(islands, ms)
        center = isl.center_h_nm if h["arm"] == "H" else isl.center_v_nm
    return SpectralFilter(h["arm"], float(center), float(h["fwhm_nm"]), h["shape"]), auto


def _herald_report(js, filt, auto, islands_threshold):
    filtered = apply_filter(js, filt)
    arm = "H" if filt.arm == "V" else "V"
    state = heralded_spatial_state(filtered, arm)
    return state, {"filter": {"arm": filt.arm, "center_nm": filt.center_nm, "fwhm_nm": filt.fwhm_nm,
                              "shape": filt.shape, "center_from_island": auto},
                   "island_threshold": islands_threshold, "heralded": state.as_dict()}


# commands -----------------------------------------------------------------

def cmd_modes(cfg, args, out: Emitter):
    ms = _modes(cfg, args.threads)
    rows = {"pol": [], "i": [], "j": [], "lambda_um": [], "n_eff": []}
    index = []
    for pol, table in (("H", ms.h), ("V", ms.v), ("P", ms.pump)):
        for lab, m in table.items():
            for lam, n in zip(m.wavelengths_um, m.n_eff):
                rows["pol"].append(pol)
                rows["i"].append(lab[0])
                rows["j"].append(lab[1])
                rows["lambda_um"].append(lam)
                rows["n_eff"].append(n)
            entry = {"pol": pol, "label": label_str(lab), "reference_um": m.reference_um,
                     "n_eff_reference": m.n_eff_at(m.reference_um)}
            if args.profiles or cfg["modes"]["profiles"]:
                name = f"profile_{pol}_{label_str(lab)}.pgm"
                out.pgm(name, m.profile**2, m.y_um, m.x_um, "depth_um", "width_um",
                        quantity="normalised intensity")
                entry["profile"] = name
            index.append(entry)
    out.csv("modes.csv", list(rows), list(rows.values()))
    out.json("modes.json", {"modes": index})
    return EXIT_OK


def cmd_bands(cfg, args, out: Emitter):
    ms = _modes(cfg, args.threads)
    summary = band_summary(ms, target_nm=cfg["calibration"]["center_nm"])
    out.json("band_summary.json", _finite(summary))
    g = cfg["grids"]
    lam = inverse_lambda_grid(g["spectral_min_nm"], g["spectral_max_nm"], g["band_points"])
    stride = cfg["output"]["csv_stride"]
    allowed = [ms.triplet(r["pump"], r["h"], r["v"]) for r in summary["bands"] if not r["forbidden"]]
    maps = map_bands(allowed, lam, lam, ms)
    total = np.zeros((lam.size, lam.size))
    LH, LV = np.meshgrid(lam, lam, indexing="ij")
    sl = (slice(None, None, stride), slice(None, None, stride))
    for tr, amp in maps.items():
        total += np.abs(amp) ** 2
        out.csv(f"band_{tr.name}.csv",
                ["inv_lambda_H_per_um", "inv_lambda_V_per_um", "lambda_H_nm", "lambda_V_nm", "amplitude"],
                [1e3 / LH[sl], 1e3 / LV[sl], LH[sl], LV[sl], amp[sl]])
    if cfg["output"]["pgm"]:
        out.pgm("band_map.pgm", total, lam, lam, "lambda_H_nm", "lambda_V_nm",
                quantity="sum over allowed channels of |Gamma sinc|^2")
    fund = summary["fundamental"]
    print(f"fundamental band {fund['lambda_H_nm']:.4f} nm, FWHM {fund['fwhm_nm']:.4f} nm, "
          f"nearest higher-order band {summary['nearest_separation_nm']:.3f} nm away")
    return EXIT_OK


def cmd_calibrate(cfg, args, out: Emitter):
    c = cfg["calibration"]
    targets = CalibrationTargets(center_nm=c["center_nm"], min_separation_nm=c["min_separation_nm"],
                                 fwhm_nm=c["fwhm_nm"], fwhm_weight=c["fwhm_weight"],
                                 center_tolerance_nm=c["center_tolerance_nm"],
                                 fwhm_tolerance_nm=c["fwhm_tolerance_nm"])
    res = calibrate(cfg.geometry(), targets, bounds_period=(c["period_min_um"], c["period_max_um"]),
                    bounds_dn=(c["delta_n_min"], c["delta_n_max"]),
                    modeset_kwargs=dict(cfg.modeset_kwargs(), threads=args.threads),
                    max_nfev=c["max_evaluations"], prescan=c["prescan"])
    report = {k: v for k, v in res.as_dict().items() if k != "seconds"}
    out.json("calibration.json", _finite(report))
    for k, v in res.residuals.items():
        print(f"residual {k}: {v}")
    print(f"checks: {res.checks}")
    if not res.success:
        failed = ", ".join(k for k, ok in res.checks.items() if not ok)
        raise ThresholdFailure(f"calibration targets not met: {failed}", report)
    updated = cfg.updated("geometry", poling_period_um=res.poling_period_um,
                          delta_n_h=res.delta_n_h, delta_n_v=res.delta_n_v)
    src = Path(cfg.source) if cfg.source else None
    if src is None or src.resolve() == default_config_path().resolve():
        # never rewrite the packaged default; the updated copy lands beside the report
        target = out.dir / "config.yaml"
    else:
        target = src
    write_config(updated, target)
    out._record(target)
    print(f"poling period {res.poling_period_um:.6f} um, dn_H {res.delta_n_h:.6g}, "
          f"dn_V {res.delta_n_v:.6g} written to {target}")
    return EXIT_OK


def cmd_jsa(cfg, args, out: Emitter):
    ms = _modes(cfg, args.threads)
    js = _jsa(cfg, ms, args.threads)
    stride = cfg["output"]["csv_stride"]
    sl = (slice(None, None, stride), slice(None, None, stride))
    LH, LV = np.meshgrid(js.lam_h_nm, js.lam_v_nm, indexing="ij")
    for (m, n), a in js.channels.items():
        out.csv(f"jsa_{label_str(m)}H_{label_str(n)}V.csv",
                ["lambda_H_nm", "lambda_V_nm", "re", "im"], [LH[sl], LV[sl], a.real[sl], a.imag[sl]])
    jsi = jsi_map(js)
    if cfg["output"]["pgm"]:
        out.pgm("jsi.pgm", jsi, js.lam_h_nm, js.lam_v_nm, "lambda_H_nm", "lambda_V_nm",
                quantity="joint spectral intensity summed over channels")
    thr = cfg["islands"]["threshold"]
    islands = detect_islands(js, thr)
    out.json("islands.json", {"threshold": thr, "islands": [i.as_dict() for i in islands]})
    filt, auto = _herald_filter(cfg, islands, ms)
    _, report = _herald_report(js, filt, auto, thr)
    out.json("herald.json", report)
    print(f"{len(islands)} islands; heralded purity {report['heralded']['purity']:.5f}")
    return EXIT_OK


def cmd_herald(cfg, args, out: Emitter):
    ms = _modes(cfg, args.threads)
    js = _jsa(cfg, ms, args.threads)
    thr = cfg["islands"]["threshold"]
    islands = detect_islands(js, thr)
    filt, auto = _herald_filter(cfg, islands, ms, {"arm": args.arm, "center_nm": args.center_nm,
                                                   "fwhm_nm": args.fwhm_nm, "shape": args.shape})
    state, report = _herald_report(js, filt, auto, thr)
    c = cfg["counting"]
    rate, eta = solve_pair_rate(c["coincidences_hz"], c["ratio"], c["window_ns"] * 1e-9, c["dark_hz"])
    stats = counting_statistics(rate, eta, eta, c["dark_hz"], c["dark_hz"], c["window_ns"] * 1e-9)
    report["counting"] = {"pair_rate_hz": rate, "efficiency": eta, **stats.as_dict()}
    out.json("herald.json", report)
    print(f"heralded purity {state.purity:.5f}, rho_00 {state.population((0, 0)):.5f}, "
          f"dominant {label_str(state.dominant)}")
    return EXIT_OK


def _m2_beam(cfg, args, meas, grid):
    lam = meas["wavelength_nm"]
    if meas["source"] == "hg":
        n, m = parse_label(meas["label"])
        return MixedBeam.pure(hg_field(n, m, meas["hg_w0_um"], lam, grid)), {}
    ms = _modes(cfg, args.threads)
    if meas["source"] == "mode":
        ref = ms.h[(0, 0)]
        mode = ms.mode("H", parse_label(meas["label"]))
        fld = facet_field(mode, lam, grid, magnification=relay_magnification(ref, meas["target_w_um"]),
                          offset_um=facet_offset(ref), na=meas["na"])
        return MixedBeam.pure(fld), {}
    js = _jsa(cfg, ms, args.threads)
    thr = cfg["islands"]["threshold"]
    filt, auto = _herald_filter(cfg, detect_islands(js, thr), ms)
    state, report = _herald_report(js, filt, auto, thr)
    table = ms.h if state.arm == "H" else ms.v
    beam = heralded_beam(state, table, lam, grid, target_w_um=meas["target_w_um"], na=meas["na"])
    return beam, {"herald": report}


def cmd_m2(cfg, args, out: Emitter):
    meas = dict(cfg["measurement"])
    for key in ("source", "label", "budget", "inside", "outside", "width_method"):
        if getattr(args, key) is not None:
            meas[key] = getattr(args, key)
    if args.noiseless:
        meas["noiseless"] = True
    g = cfg["grids"]
    grid = GridSpec(g["beam_points"], g["beam_pitch_um"])
    beam, extra = _m2_beam(cfg, args, meas, grid)
    records, fits, plans = [], {}, {}
    budget = None if meas["noiseless"] else meas["budget"]
    for k, ax in enumerate(("x", "y")):
        z0, zr = estimate_waist(beam, ax)
        plan = iso_sampling_plan(round(z0, 3), zr, meas["inside"], meas["outside"])
        planes = caustic_planes(beam, plan, (ax,))
        seed = np.random.SeedSequence([args.seed, k])
        scan = scan_planes(planes, budget=budget, seed=seed, positions=meas["positions"],
                           span_w=meas["span_w"], floor=meas["floor"], efficiency=meas["efficiency"],
                           resamples=meas["resamples"], method=meas["width_method"])
        fit = fit_m2(scan)[ax]
        fits[ax] = fit.as_dict()
        plans[ax] = list(plan)
        records.extend(scan.records)
    out.csv("caustic.csv", ["z_mm", "axis", "w_um", "sigma_w_um"],
            [[r.z_mm for r in records], [r.axis for r in records],
             [r.w_um for r in records], [r.sigma_w_um for r in records]])
    report = {"source": meas["source"], "label": meas["label"], "wavelength_nm": meas["wavelength_nm"],
              "width_method": meas["width_method"],
              "noiseless": budget is None, "budget": budget, "seed": args.seed,
              "plan_mm": plans, "mixture_weights": beam.weights.tolist(),
              "fit": fits, **extra}
    out.json("m2_fit.json", _finite(report))
    for ax, f in fits.items():
        print(f"{ax}: M2 = {f['M2']:.4f} +/- {f['sigma_M2']:.4f}, w0 = {f['w0_um']:.2f} um")
    return EXIT_OK


def cmd_sfg_map(cfg, args, out: Emitter):
    ms = _modes(cfg, args.threads)
    s = cfg["sfg"]
    tr = ms.triplet(*(parse_label(t) for t in s["triplet"]))
    lam = np.linspace(s["min_nm"], s["max_nm"], s["points"])
    L1, L2 = np.meshgrid(lam, lam, indexing="ij")
    power = sfg_response(L1, L2, tr, s["filter_fwhm_nm"], ms)
    out.csv("sfg_map.csv", ["lambda_H_nm", "lambda_V_nm", "power"], [L1, L2, power])
    if cfg["output"]["pgm"]:
        out.pgm("sfg_map.pgm", power, lam, lam, "lambda_H_nm", "lambda_V_nm",
                quantity=f"relative SFG power, {tr.name}, filters {s['filter_fwhm_nm']} nm FWHM")
    return EXIT_OK


COMMANDS = {"modes": cmd_modes, "bands": cmd_bands, "calibrate": cmd_calibrate, "jsa": cmd_jsa,
            "herald": cmd_herald, "m2": cmd_m2, "sfg-map": cmd_sfg_map}


class ThresholdFailure(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


def build_parser():
    p = argparse.ArgumentParser(prog="modalspdc", description=__doc__.split("\n\n")[0].strip(),
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", help="configuration file (default: $MODALSPDC_CONFIG, then the packaged default)")
    p.add_argument("--out", help="output directory (overrides output.directory)")
    p.add_argument("--threads", type=int, default=1, help="worker cap for inner solvers")
    p.add_argument("--seed", type=int, default=None, help="overrides measurement.seed")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    m = sub.add_parser("modes", help="guided modes and n_eff dispersion")
    m.add_argument("--profiles", action="store_true", help="also write intensity profiles as PGM")
    sub.add_parser("bands", help="phase-matching band maps and summary")
    sub.add_parser("calibrate", help="fit period and index contrasts to the band targets")
    sub.add_parser("jsa", help="joint spectrum, islands and heralded state")
    h = sub.add_parser("herald", help="heralded spatial state for one filter setting")
    h.add_argument("--arm", choices=["H", "V"])
    h.add_argument("--center-nm", type=float)
    h.add_argument("--fwhm-nm", type=float)
    h.add_argument("--shape", choices=["top-hat", "gaussian"])
    q = sub.add_parser("m2", help="simulated knife-edge caustic and M^2 fit")
    q.add_argument("--source", choices=["heralded", "mode", "hg"])
    q.add_argument("--label", help="mode label such as 00 or 10")
    q.add_argument("--budget", type=float, help="expected counts per knife position")
    q.add_argument("--noiseless", action="store_true")
    q.add_argument("--inside", type=int, help="planes within one Rayleigh range")
    q.add_argument("--outside", type=int, help="planes beyond two Rayleigh ranges")
    q.add_argument("--width-method", choices=["derivative", "aperture"],
                   help="knife-edge width estimator (clipped derivative or iterated aperture)")
    sub.add_parser("sfg-map", help="mode-resolved SFG spectroscopy map")
    return p


def _fail(code, exc, out=None, config=None, command=None, details=None):
    doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if details is not None:
        doc["details"] = details
    print(json.dumps(_finite(doc), indent=2), file=sys.stderr)
    if out is not None:
        # whatever was written before the failure stays listed next to the error
        out.json("error.json", _finite(doc))
        out.manifest(command, config)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        return _fail(EXIT_CONFIG, ValueError("--threads must be >= 1"))
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc, details=exc.errors)
    if args.seed is None:
        args.seed = cfg["measurement"]["seed"]
    try:
        out = Emitter(Path(args.out or cfg["output"]["directory"]) / args.command)
    except OSError as exc:
        return _fail(EXIT_CONFIG, exc)
    try:
        code = COMMANDS[args.command](cfg, args, out)
    except ThresholdFailure as exc:
        return _fail(EXIT_THRESHOLD, exc, out, cfg, args.command, exc.report)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc, out, cfg, args.command, exc.errors)
    except (ArithmeticError, ValueError, RuntimeError, KeyError, np.linalg.LinAlgError) as exc:
        log.debug("command failed", exc_info=True)
        return _fail(EXIT_NUMERIC, exc, out, cfg, args.command)
    out.manifest(args.command, cfg, {"seed": args.seed} if args.command == "m2" else None)
    return code


if __name__ == "__main__":
    sys.exit(main())
