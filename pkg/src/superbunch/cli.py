"""Command-line front end.

Every subcommand writes CSV + ``summary.json`` + ``manifest.json`` into
``--out`` and prints a one-line summary. Exit codes: 0 success, 2 invalid
arguments, 3 numerical failure (fit non-convergence, undefined estimator).

Parameter precedence: command-line flags, then ``--config`` (YAML or JSON;
a previous ``manifest.json`` also works), then built-in defaults.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .chain import (Detector, OpticalChain, UndefinedEstimatorError, estimate_g2,
                    simulate_records)
from .distributions import Kind, PhotonDistribution, moments
from .fitting import FitError
from .modes import ModeGeometry, compose_fractional_m, effective_mode_count, reduce_g2
from .output import write_csv, write_json
from .scenarios import (ANGLE_FWHM, CENTER_WAVELENGTH, DEFAULT_M, SPECTRAL_FWHM, ScanConfig,
                        expected_g2, run_calibration, run_gain_fit, run_histogram,
                        run_noise_histogram, run_scan, source_for, synthetic_gain_curve)

log = logging.getLogger("superbunch")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(ValueError):
    pass


def _common(p: argparse.ArgumentParser, pulses: int, m: float) -> None:
    p.add_argument("--pulses", type=int, default=pulses, help="pulses (per point for scans) [%(default)s]")
    p.add_argument("--seed", type=int, default=0, help="master seed [%(default)s]")
    p.add_argument("--out", default="out", help="output directory [%(default)s]")
    p.add_argument("--m", type=float, default=m, help="effective detected mode count [%(default)s]")
    p.add_argument("--config", help="YAML/JSON key-value file (or manifest.json) with defaults")
    p.add_argument("--workers", type=int, default=1, help="threads for pulse blocks [%(default)s]")


def _detector_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--noise-fwhm", type=float, default=10.0, help="detector noise FWHM, nV*s [%(default)s]")
    p.add_argument("--volts-per-photon", type=float, default=70.0 / 8000.0,
                   help="detector conversion, nV*s/photon [%(default)s]")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="superbunch", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("hbt", help="HBT g2 of a simulated source")
    _common(p, 1_000_000, 1.0)
    _detector_flags(p)
    p.add_argument("--kind", default="thermal", choices=[k.value for k in Kind])
    p.add_argument("--mean", type=float, default=100.0, help="photons per pulse [%(default)s]")
    p.add_argument("--eta", type=float, default=1.0, help="channel transmission [%(default)s]")
    p.add_argument("--transmittance", type=float, default=0.5, help="beamsplitter T [%(default)s]")
    p.add_argument("--records", choices=["none", "csv", "bin"], default="none",
                   help="also write per-pulse signal pairs [%(default)s]")

    for name, coord, center, fwhm, half in (
            ("scan-angle", "angle_mrad", 0.0, ANGLE_FWHM, 10.0),
            ("scan-wavelength", "wavelength_nm", CENTER_WAVELENGTH, SPECTRAL_FWHM, 0.5)):
        p = sub.add_parser(name, help=f"g2 versus {coord}")
        _common(p, 100_000, DEFAULT_M)
        _detector_flags(p)
        p.add_argument("--center", type=float, default=center, help="[%(default)s]")
        p.add_argument("--fwhm", type=float, default=fwhm, help="correlation profile FWHM [%(default)s]")
        p.add_argument("--half-width", type=float, default=half, help="scan half range [%(default)s]")
        p.add_argument("--n-points", type=int, default=21, help="[%(default)s]")
        p.add_argument("--mean", type=float, default=8000.0, help="photons per pulse [%(default)s]")
        p.set_defaults(coordinate=coord)

    p = sub.add_parser("histogram", help="signal probability distribution")
    _common(p, 1_000_000, 1.0)
    _detector_flags(p)
    p.add_argument("--kind", default="thermal", choices=["thermal", "squeezed", "poisson", "vacuum"])
    p.add_argument("--mean-signal", type=float, default=70.0, help="mean signal, nV*s [%(default)s]")
    p.add_argument("--bin-width", type=float, default=2.0, help="nV*s [%(default)s]")

    p = sub.add_parser("calibrate", help="coherent-light calibration of the HBT chain")
    _common(p, 1_000_000, 1.0)
    _detector_flags(p)
    p.add_argument("--mean", type=float, default=8000.0, help="photons per pulse [%(default)s]")
    p.add_argument("--transmittance", type=float, default=0.5, help="beamsplitter T [%(default)s]")

    p = sub.add_parser("gain-fit", help="fit gain from PDC signal versus pump power")
    _common(p, 1, 1.0)
    p.add_argument("--data", help="CSV with columns power_mw,signal; synthetic data if omitted")
    p.add_argument("--gamma", type=float, default=15.8, help="synthetic gain at max power [%(default)s]")
    p.add_argument("--scale", type=float, default=1.0, help="synthetic signal scale [%(default)s]")
    p.add_argument("--noise", type=float, default=0.01, help="synthetic relative noise [%(default)s]")
    p.add_argument("--p-min", type=float, default=5.0, help="mW [%(default)s]")
    p.add_argument("--p-max", type=float, default=75.0, help="mW [%(default)s]")
    p.add_argument("--n-powers", type=int, default=15, help="[%(default)s]")

    p = sub.add_parser("modes", help="detected mode count and fractional-m composition")
    _common(p, 100_000, DEFAULT_M)
    p.add_argument("--mean", type=float, default=8000.0, help="total photons per pulse [%(default)s]")
    p.add_argument("--detected-angle", type=float, default=0.45, help="mrad [%(default)s]")
    p.add_argument("--mode-angle", type=float, default=4.1, help="mrad [%(default)s]")
    p.add_argument("--detected-bandwidth", type=float, default=0.1, help="nm [%(default)s]")
    p.add_argument("--mode-bandwidth", type=float, default=0.22, help="nm [%(default)s]")
    p.add_argument("--kind", default="thermal", choices=["thermal", "squeezed"],
                   help="source for the Monte Carlo check [%(default)s]")
    return parser


def load_config(path: str) -> dict:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must be a key-value mapping")
    if "parameters" in data and isinstance(data["parameters"], dict):
        data = data["parameters"]
    return {str(k).replace("-", "_"): v for k, v in data.items()}


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        cfg = load_config(args.config)
        cfg.pop("command", None)
        cfg.pop("config", None)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        sub.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return args


def validate(args: argparse.Namespace) -> None:
    if args.pulses < 1:
        raise UsageError("pulses must be >= 1")
    if args.m < 1:
        raise UsageError("m must be >= 1")
    if args.workers < 1:
        raise UsageError("workers must be >= 1")
    for name in ("mean", "mean_signal"):
        if hasattr(args, name) and not getattr(args, name) > 0:
            raise UsageError(f"{name.replace('_', ' ')} must be positive")
    if getattr(args, "noise_fwhm", 0.0) < 0:
        raise UsageError("noise fwhm must be non-negative")
    if hasattr(args, "volts_per_photon") and not args.volts_per_photon > 0:
        raise UsageError("volts per photon must be positive")


def _detector(args) -> Detector:
    return Detector(args.volts_per_photon, args.noise_fwhm)


def cmd_hbt(args, out: Path) -> tuple[str, dict]:
    chain = OpticalChain.build(args.eta, args.transmittance, args.volts_per_photon, args.noise_fwhm)
    records = simulate_records(source_for(args.kind, args.mean, args.m), chain, args.pulses,
                               args.seed, workers=args.workers)
    g2, se = estimate_g2(records)
    model = expected_g2(args.kind, args.mean, args.m)
    write_csv(out / "hbt.csv", ["kind", "mean_photons", "m", "pulses", "g2", "std_error", "model_g2"],
              [[args.kind, args.mean, args.m, args.pulses, g2, se, model]])
    if args.records == "csv":
        with open(out / "records.csv", "w", newline="") as fh:
            records.to_csv(fh)
    elif args.records == "bin":
        (out / "records.bin").write_bytes(records.to_bytes())
    noisy = min(abs(records.s1.mean()), abs(records.s2.mean())) < chain.detectors[0].noise_sigma
    summary = {"g2": g2, "std_error": se, "model_g2": model, "mean_s1": records.s1.mean(),
               "mean_s2": records.s2.mean(), "noise_dominated": noisy}
    flag = " [noise dominated]" if noisy else ""
    return (f"hbt {args.kind} N={args.mean:g} m={args.m:g}: g2 = {g2:.4f} ± {se:.4f} "
            f"(model {model:.4f}){flag}"), summary


def cmd_scan(args, out: Path) -> tuple[str, dict]:
    make = ScanConfig.angular if args.coordinate == "angle_mrad" else ScanConfig.spectral
    cfg = make(half_width=args.half_width, n_points=args.n_points, center=args.center,
               profile_fwhm=args.fwhm, pulses_per_point=args.pulses, base_m=args.m,
               mean_photons=args.mean, volts_per_photon=args.volts_per_photon,
               noise_fwhm=args.noise_fwhm)
    res = run_scan(cfg, args.seed, workers=args.workers)
    name = "scan_angle" if args.coordinate == "angle_mrad" else "scan_wavelength"
    write_csv(out / f"{name}.csv", ["index", args.coordinate, "overlap", "g2", "std_error", "model_g2"],
              [[i, p.coordinate, p.overlap, p.g2, p.std_error, p.expected] for i, p in enumerate(res.points)])
    summary = {"coordinate": args.coordinate, "fit": res.fit.as_dict() if res.fit else None,
               "fit_error": res.fit_error, "model_baseline": reduce_g2(2.0, args.m),
               "model_peak": reduce_g2(3.0 + 1.0 / args.mean, args.m)}
    if res.fit is None:
        raise FitError(f"scan fit failed: {res.fit_error}")
    f = res.fit
    line = (f"{name}: fwhm = {f.fwhm:.4g} ± {f.errors['fwhm']:.2g}, baseline = {f.baseline:.4f}, "
            f"peak = {f.peak:.4f}")
    return line, summary


def cmd_histogram(args, out: Path) -> tuple[str, dict]:
    if args.m != 1.0:
        raise UsageError("histogram supports single-mode sources only (m = 1)")
    det = _detector(args)
    if args.kind == "vacuum":
        h = run_noise_histogram(args.pulses, det, args.seed, args.bin_width, args.workers)
    else:
        h = run_histogram(args.kind, args.mean_signal, args.pulses, det, args.seed, args.bin_width,
                          args.workers)
    write_csv(out / "histogram.csv", ["bin_lo_nvs", "bin_hi_nvs", "center_nvs", "counts", "probability", "theory"],
              zip(h.edges[:-1], h.edges[1:], h.centers, h.counts, h.probability, h.theory))
    summary = {"kind": args.kind, "bin_width": h.width, "bins": int(h.counts.size),
               "theory_total": float(h.theory.sum()), "fwhm_estimate": h.fwhm(),
               "mean_signal": float(np.sum(h.probability * h.centers))}
    return (f"histogram {args.kind}: {h.counts.size} bins of {h.width:g} nV*s, "
            f"mean {summary['mean_signal']:.3f} nV*s"), summary


def cmd_calibrate(args, out: Path) -> tuple[str, dict]:
    res = run_calibration(args.mean, args.pulses, _detector(args), args.seed, args.transmittance,
                          args.workers)
    write_csv(out / "calibration.csv", ["mean_photons", "pulses", "g2", "std_error", "noise_dominated"],
              [[args.mean, args.pulses, res.g2, res.std_error, res.noise_dominated]])
    flag = " [noise dominated]" if res.noise_dominated else ""
    return f"calibrate: g2 = {res.g2:.4f} ± {res.std_error:.4f}{flag}", res._asdict()


def cmd_gain_fit(args, out: Path) -> tuple[str, dict]:
    if args.data:
        with open(args.data) as fh:
            rows = list(csv.DictReader(fh))
        try:
            powers = np.array([float(r["power_mw"]) for r in rows])
            signals = np.array([float(r["signal"]) for r in rows])
        except KeyError as exc:
            raise UsageError(f"gain data needs power_mw and signal columns (missing {exc})") from exc
        truth = (None, None)
    else:
        powers = np.linspace(args.p_min, args.p_max, args.n_powers)
        powers, signals = synthetic_gain_curve(args.seed, args.gamma, args.scale, powers, args.noise)
        truth = (args.gamma, args.scale)
    curve = run_gain_fit(powers, signals, *truth)
    write_csv(out / "gain_curve.csv", ["power_mw", "signal", "model"],
              zip(curve.powers, curve.signals, curve.model))
    fit = curve.fit
    summary = {"fit": fit.as_dict(), "true_gamma": truth[0], "true_scale": truth[1],
               "photons_per_mode_at_max": float(np.sinh(fit.gamma_max) ** 2)}
    flag = " [degenerate: low gain]" if fit.degenerate else ""
    return (f"gain-fit: gamma_max = {fit.gamma_max:.3f} ± {fit.errors['gamma_max']:.2g}, "
            f"scale = {fit.scale:.4g}{flag}"), summary


def cmd_modes(args, out: Path) -> tuple[str, dict]:
    # volumes are not needed for the count; unit placeholders keep the geometry valid
    geo = ModeGeometry(1.0, 1.0, 1.0, 1.0, 1.0, args.detected_angle, args.mode_angle,
                       args.detected_bandwidth, args.mode_bandwidth)
    m_geo = effective_mode_count(geo)
    comp = compose_fractional_m(args.m, args.mean, args.kind)
    records = simulate_records(comp, OpticalChain.build(noise_fwhm=0.0), args.pulses, args.seed,
                               workers=args.workers)
    g2, se = estimate_g2(records)
    single = moments(PhotonDistribution(args.kind, args.mean)).g2
    model = reduce_g2(single, args.m)
    write_csv(out / "modes.csv", ["mode", "mean_photons", "fraction"],
              [[i, n, f] for i, (n, f) in enumerate(zip(comp.per_mode_means, comp.fractions))])
    summary = {"geometry_m": m_geo, "target_m": args.m, "composition_m": comp.effective_m,
               "kind": args.kind, "g2": g2, "std_error": se, "model_g2": model,
               "reduced_thermal": reduce_g2(2.0, args.m), "reduced_squeezed": reduce_g2(3.0, args.m)}
    return (f"modes: geometry m = {m_geo:.4g}, composition m = {comp.effective_m:.6g} "
            f"({len(comp.per_mode_means)} modes), {args.kind} g2 = {g2:.4f} ± {se:.4f} "
            f"(model {model:.4f})"), summary


COMMANDS = {"hbt": cmd_hbt, "scan-angle": cmd_scan, "scan-wavelength": cmd_scan,
            "histogram": cmd_histogram, "calibrate": cmd_calibrate, "gain-fit": cmd_gain_fit,
            "modes": cmd_modes}


def dispatch(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (UsageError, OSError, yaml.YAMLError) as exc:
        print(f"superbunch: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out)
    params = {k: v for k, v in sorted(vars(args).items()) if k not in ("config", "out")}
    start = time.perf_counter()
    try:
        validate(args)
        out.mkdir(parents=True, exist_ok=True)
        line, summary = COMMANDS[args.command](args, out)
    except ValueError as exc:
        print(f"superbunch {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FitError, UndefinedEstimatorError) as exc:
        print(f"superbunch {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    duration = time.perf_counter() - start
    write_json(out / "summary.json", {"command": args.command, "seed": args.seed,
                                      "pulses": args.pulses, **summary})
    write_json(out / "manifest.json", {"command": args.command, "parameters": params,
                                       "seed": args.seed, "version": __version__,
                                       "duration_s": duration})
    print(line)
    return EXIT_OK


def main() -> None:
    logging.basicConfig(level=logging.WARNING, format="%(name)s: %(message)s")
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
