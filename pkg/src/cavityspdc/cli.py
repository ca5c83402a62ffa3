"""``cavityspdc`` command-line entry point.

Every subcommand prints a short human summary to stdout and writes its
machine-readable results (CSV/JSON) under the output directory. Failures print
one JSON line ``{"error": ..., "message": ...}`` to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import filters, polarization, report, spectrum, timing, tomography
from ._validation import check_fraction
from .config import load_config
from .exceptions import ConfigError, EventFileError, FitError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _outdir(args, cfg) -> Path:
    out = Path(args.out if args.out is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _setup(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg, _outdir(args, cfg)


# -- subcommands ---------------------------------------------------------------


def cmd_spectrum(args):
    cfg, out = _setup(args)
    comb = spectrum.build_comb(cfg.cavity)
    mu = spectrum.multimode_ratio(comb)
    mu_f = filters.filtered_ratio(comb, cfg.stack, cfg.survival)
    comb.to_csv(out / "comb.csv")
    with open(out / "leakage.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["m", "unfiltered_weight", "filtered_weight"])
        for m, raw, kept in filters.leakage_table(comb, cfg.stack, cfg.survival):
            writer.writerow([m, repr(float(raw)), repr(float(kept))])
    if len(cfg.stack):
        filters.write_transmission_csv(cfg.stack, out / "filter_transmission.csv")
    summary = {
        "mu": mu,
        "mu_filtered": mu_f,
        "survival": cfg.survival,
        "mode_count_n": cfg.cavity.mode_count_n,
        "cavity_linewidth_mhz": spectrum.cavity_linewidth(cfg.cavity),
        "round_trip_ps": spectrum.round_trip_time(cfg.cavity),
    }
    _dump_json(summary, out / "spectrum.json")
    print(f"mu = {mu:.6g}")
    print(f"mu_filtered = {mu_f:.6g} ({cfg.survival} survival)")
    return 0


def cmd_simulate(args):
    cfg, out = _setup(args)
    src = cfg.source
    stream = timing.generate_events(src, args.duration_s, cfg.seed)
    path = out / "events.txt"
    timing.write_events(stream, path)
    expected = src.expected_coincidence_rate() * args.duration_s
    summary = {
        "events_file": str(path),
        "duration_s": args.duration_s,
        "seed": cfg.seed,
        "pairs_generated_expected": src.pair_rate * args.duration_s,
        "coincidences_expected": expected,
        "events_written": len(stream),
        "spd1_events": int(stream.times(timing.SPD1).size),
        "spd2_events": int(stream.times(timing.SPD2).size),
        "coincidences_in_window": timing.coincidence_count(stream, src.coincidence_window),
    }
    _dump_json(summary, out / "simulate.json")
    print(f"wrote {len(stream)} events to {path}")
    print(f"coincidences: {summary['coincidences_in_window']} (expected {expected:.1f})")
    return 0


def cmd_analyze(args):
    cfg, out = _setup(args)
    window = args.window_ns if args.window_ns is not None else cfg.source.coincidence_window
    stream = timing.read_events(args.events)
    hist = timing.coincidence_histogram(stream, window, args.bin_ns, cfg.source.digitizer_resolution)
    if hist.total == 0:
        raise FitError(f"no coincidences in {args.events} within +/-{window} ns")
    hist.to_csv(out / "histogram.csv")
    result = {"events_file": str(args.events), "coincidences": hist.total, "window_ns": window,
              "bin_ns": args.bin_ns, "fit_failed": False}
    try:
        result.update(timing.fit_correlation(hist).to_dict())
    except FitError as exc:
        result.update(fit_failed=True, reason=str(exc))
    _dump_json(result, out / "fit.json")
    if result["fit_failed"]:
        print(f"fit failed: {result['reason']}")
    else:
        print(f"linewidth = {result['delta_nu_MHz']:.4g} MHz, FWHM = {result['fwhm_ns']:.4g} ns "
              f"({hist.total} coincidences)")
    return 0


def cmd_chsh(args):
    cfg, out = _setup(args)
    v = check_fraction(args.visibility, "visibility")
    meas = polarization.chsh_measurement(polarization.werner_mix(v), pairs_per_setting=args.pairs_per_setting,
                                         seed=cfg.seed, n_resamples=args.resamples)
    result = polarization.chsh_report(meas["S_expected"], meas["sigma"])
    result.update(visibility=v, S_measured=meas["S_measured"], pairs_per_setting=args.pairs_per_setting)
    _dump_json(result, out / "chsh.json")
    line = f"S = {result['S']:.4f} +/- {result['sigma']:.4f}"
    if result["sigmas_violation"] is not None:
        line += f" ({result['sigmas_violation']:.1f} sigma above 2)"
    print(line)
    return 0


def _synthetic_state(spec: str):
    name, _, arg = spec.partition(":")
    if name == "singlet" and not arg:
        return polarization.singlet()
    try:
        if name == "werner":
            return polarization.werner_mix(float(arg))
        if name == "postselected":
            return polarization.postselected_state(float(arg))
    except ValueError as exc:
        raise UsageError(f"--synthetic {spec}: {exc}") from None
    raise UsageError(f"--synthetic must be singlet, werner:V or postselected:ALPHA, got {spec!r}")


def cmd_tomography(args):
    sources = [x is not None for x in (args.counts, args.rho_file, args.synthetic)]
    if sum(sources) != 1:
        raise UsageError("give exactly one of COUNTS_CSV, --rho-file, --synthetic")
    cfg, out = _setup(args)
    sigma = None
    if args.rho_file is not None:
        path = Path(args.rho_file)
        if not path.is_file():
            raise FileNotFoundError(f"rho file not found: {path}")
        rho = tomography.read_rho_json(path)
        method = "supplied"
    else:
        if args.synthetic is not None:
            truth = _synthetic_state(args.synthetic)
            data = tomography.simulate_counts(truth, n_per_setting=args.counts_per_setting, seed=cfg.seed)
            data.to_csv(out / "counts.csv")
        else:
            data = tomography.TomographyData.from_csv(args.counts)
        rho = tomography.MLETomography().fit(data).rho_
        if args.resamples >= 2:
            sigma = tomography.fidelity_uncertainty(data, n_resamples=args.resamples, seed=cfg.seed)
        method = "mle"

    conv = tomography.fidelity_conventions(rho)
    metrics = tomography.state_metrics(rho)
    result = {
        "method": method,
        "fidelity": conv["fidelity"],
        "fidelity_sigma": sigma,
        "sqrt_fidelity": conv["sqrt_fidelity"],
        "reported_fidelity": tomography.REFERENCE_FIDELITY,
        "trace": float(np.trace(rho).real),
        "trace_normalized_fidelity": conv["trace_normalized"],
        "phase_optimized_fidelity": conv["phase_optimized"],
        **metrics,
    }
    tomography.write_rho_json(rho, out / "rho.json")
    tomography.write_rho_csv(rho, out / "rho_real.csv", out / "rho_imag.csv")
    _dump_json(result, out / "tomography.json")

    err = f" +/- {sigma:.4f}" if sigma is not None else ""
    print(f"fidelity to singlet  <phi|rho|phi> = {conv['fidelity']:.5f}{err}")
    print(f"root fidelity        sqrt(F)       = {conv['sqrt_fidelity']:.5f}")
    print(f"reported fidelity                  = {tomography.REFERENCE_FIDELITY:.5f}")
    if abs(conv["sqrt_fidelity"] - tomography.REFERENCE_FIDELITY) > 1e-3 and method == "supplied":
        print("note: neither convention reproduces the reported value")
    print(f"purity = {metrics['purity']:.4f}, concurrence = {metrics['concurrence']:.4f}")
    print("eigenvalues = " + ", ".join(f"{x:.4f}" for x in metrics["eigenvalues"]))
    return 0


def cmd_report(args):
    cfg, out = _setup(args)
    rows = report.run_report(cfg)
    payload = report.rows_to_json(rows)
    _dump_json(payload, out / "report.json")
    print(report.format_table(rows))
    print(f"\nall rows pass: {payload['all_passed']}")
    return 1 if args.strict and not payload["all_passed"] else 0


# -- wiring ----------------------------------------------------------------------


def _positive_float(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not value > 0 or math.isinf(value):
        raise argparse.ArgumentTypeError(f"must be a finite value > 0, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key = value config file (defaults if omitted)")
    common.add_argument("--seed", type=int, help="master seed, overrides seeds.master")
    common.add_argument("--out", help="output directory, overrides output.dir")

    parser = _Parser(prog="cavityspdc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("spectrum", parents=[common], help="mode comb, multimode ratio, filter leakage")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("simulate", parents=[common], help="generate a time-tag event file")
    p.add_argument("--duration-s", type=_positive_float, default=10.0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", parents=[common], help="histogram an event file and fit the linewidth")
    p.add_argument("events", help="event file, one 'channel,timestamp_ns' per line")
    p.add_argument("--window-ns", type=_positive_float)
    p.add_argument("--bin-ns", type=_positive_float, default=1.0)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("chsh", parents=[common], help="CHSH value for a Werner state of given visibility")
    p.add_argument("--visibility", type=float, default=0.966)
    p.add_argument("--pairs-per-setting", type=int, default=10_000)
    p.add_argument("--resamples", type=int, default=1000)
    p.set_defaults(func=cmd_chsh)

    p = sub.add_parser("tomography", parents=[common], help="reconstruct or evaluate a two-qubit state")
    p.add_argument("counts", nargs="?", help="CSV with setting_label,count rows")
    p.add_argument("--rho-file", help="density matrix JSON to evaluate directly")
    p.add_argument("--synthetic", help="singlet, werner:V or postselected:ALPHA")
    p.add_argument("--counts-per-setting", type=int, default=10_000)
    p.add_argument("--resamples", type=int, default=500, help="bootstrap size for the fidelity error (0 = off)")
    p.set_defaults(func=cmd_tomography)

    p = sub.add_parser("report", parents=[common], help="rerun everything against the published values")
    p.add_argument("--strict", action="store_true", help="exit 1 when any row fails")
    p.set_defaults(func=cmd_report)
    return parser


def _fail(kind, message, code):
    print(json.dumps({"error": kind, "message": " ".join(str(message).split())}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        return _fail("usage", exc, 2)
    except ConfigError as exc:
        return _fail("config", exc, 1)
    except EventFileError as exc:
        return _fail("event_file", exc, 1)
    except FileNotFoundError as exc:
        return _fail("file_not_found", exc, 1)
    except FitError as exc:
        return _fail("fit", exc, 1)
    except (OSError, ValueError, KeyError, np.linalg.LinAlgError) as exc:
        return _fail(type(exc).__name__, exc, 1)


if __name__ == "__main__":
    sys.exit(main())
