"""Desk-scale rerun of the whole pipeline, tabulated against published values."""

from __future__ import annotations

import math
import os
import tempfile
import time
from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np

from . import filters, polarization, spectrum, timing, tomography
from .config import RunConfig

__all__ = ["Row", "format_table", "run_report"]

FRINGE_ANGLES = np.linspace(0.0, math.pi, 13, endpoint=False)


@dataclass
class Row:
    criterion: str
    quantity: str
    published: object
    computed: object
    tolerance: str
    passed: Optional[bool]  # None marks an informational row
    seconds: float = 0.0
    note: str = ""


def _within(value, target, tol):
    return abs(value - target) <= tol


def _rows_spectrum(cfg):
    t = time.perf_counter()
    comb = spectrum.build_comb(cfg.cavity)
    mu = spectrum.multimode_ratio(comb)
    dt = time.perf_counter() - t
    return [Row("1", "multimode ratio mu", 1.87, mu, "+/-0.05", _within(mu, 1.87, 0.05), dt)]


def _rows_filters(cfg):
    comb = spectrum.build_comb(cfg.cavity)
    t = time.perf_counter()
    mu_f = filters.filtered_ratio(comb, cfg.stack, cfg.survival)
    table = filters.leakage_table(comb, cfg.stack, cfg.survival)
    dt = time.perf_counter() - t
    ratio = mu_f / 5.4e-6
    worst = max(table, key=lambda r: r[2]) if table else (0, 0.0, 0.0)
    rows = [Row("2", f"post-filter ratio ({cfg.survival} survival)", 5.4e-6, mu_f, "factor 10",
                0.1 <= ratio <= 10, dt, f"largest leak at m={worst[0]} ({worst[2]:.3g})")]
    other = "pair" if cfg.survival == "single" else "single"
    rows.append(Row("2", f"post-filter ratio ({other} survival)", 5.4e-6,
                    filters.filtered_ratio(comb, cfg.stack, other), "informational", None))
    return rows


def _rows_chsh():
    t = time.perf_counter()
    s_singlet = polarization.chsh_value(polarization.singlet())
    s_werner = polarization.chsh_value(polarization.werner_mix(0.966))
    sig = polarization.chsh_violation_sigmas(2.73, 0.04)
    dt = time.perf_counter() - t
    return [
        Row("3", "CHSH S, singlet", 2 * math.sqrt(2), s_singlet, "+/-1e-9",
            _within(s_singlet, 2 * math.sqrt(2), 1e-9), dt),
        Row("3", "CHSH S, Werner V=0.966", 2.73, s_werner, "2.732 +/-0.001",
            _within(s_werner, 2.732, 1e-3), dt),
        Row("3", "violation sigmas (2.73, 0.04)", "~18", sig, "18.25 +/-1e-9",
            _within(sig, 18.25, 1e-9), dt),
    ]


def _rows_fringes(cfg):
    rows = []
    t = time.perf_counter()
    worst = 0.0
    for v in (0.978, 0.966):
        for theta_a in (0.0, -math.pi / 4):
            # extrema sit at parallel and crossed analyzers
            hi, lo = (polarization.coincidence_probability(
                polarization.werner_mix(v), polarization.AnalyzerSetting(theta_a, theta_a + d))
                for d in (math.pi / 2, 0.0))
            worst = max(worst, abs((hi - lo) / (hi + lo) - v))
    rows.append(Row("4", "closed-form Werner fringe visibility", "V", worst,
                    "1e-9", worst <= 1e-9, time.perf_counter() - t, "computed column is max |V_closed_form - V|"))
    cases = [(v, a) for v in (0.978, 0.966) for a in (0.0, -math.pi / 4)]
    for (v, theta_a), child in zip(cases, np.random.SeedSequence(cfg.seed).spawn(len(cases))):
        t = time.perf_counter()
        scan_seed, fit_seed = child.spawn(2)
        scan = polarization.fringe_scan(polarization.werner_mix(v), theta_a, FRINGE_ANGLES, 10_000, scan_seed)
        fit = polarization.fit_fringe(scan, seed=fit_seed)
        dev = abs(fit["visibility"] - v)
        rows.append(Row("4", f"fringe visibility V={v}, theta_A={theta_a:+.4f}", v,
                        f"{fit['visibility']:.4f} +/- {fit['visibility_sigma']:.4f}", "3 sigma",
                        dev <= 3 * fit["visibility_sigma"], time.perf_counter() - t))
    return rows


def _rows_tomography(cfg):
    t = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    err = 0.0
    for _ in range(100):
        rho = tomography.random_density_matrix(rng)
        rec = tomography.linear_reconstruct(tomography.simulate_counts(rho, noiseless=True))
        err = max(err, float(np.abs(rec - rho).max()))
    rows = [Row("5", "linear inversion round trip (100 states)", 0.0, err, "1e-9", err <= 1e-9,
                time.perf_counter() - t)]
    t = time.perf_counter()
    truth = polarization.werner_mix(0.95)
    fids = []
    for child in np.random.SeedSequence(cfg.seed).spawn(20):
        data = tomography.simulate_counts(truth, n_per_setting=10_000, seed=child)
        est = tomography.MLETomography().fit(data)
        fids.append(tomography.state_fidelity(est.rho_, truth))
    med = float(np.median(fids))
    rows.append(Row("5", "MLE median fidelity to truth (Werner 0.95, 20 seeds)", ">=0.99", med, ">=0.99",
                    med >= 0.99, time.perf_counter() - t,
                    f"root-fidelity convention: {math.sqrt(med):.4f}"))
    return rows


def _rows_reference_rho():
    t = time.perf_counter()
    conv = tomography.fidelity_conventions(tomography.REFERENCE_RHO)
    dt = time.perf_counter() - t
    return [
        Row("6", "fidelity of printed density matrix to singlet", 0.9178, conv["fidelity"], "+/-0.0005",
            _within(conv["fidelity"], 0.9178, 5e-4), dt),
        Row("6", "root fidelity vs reported fidelity", tomography.REFERENCE_FIDELITY, conv["sqrt_fidelity"],
            "informational", None, dt,
            "reported 0.952 is not reproduced by <phi|rho|phi> of the printed matrix"),
    ]


def _linewidth_run(cfg, target=110_000):
    src = cfg.source
    duration = math.ceil(target / src.expected_coincidence_rate())
    stream = timing.generate_events(src, duration, np.random.SeedSequence(cfg.seed).spawn(3)[2])
    hist = timing.coincidence_histogram(stream, src.coincidence_window, 1.0, src.digitizer_resolution)
    return hist, timing.fit_correlation(hist)


def _rows_linewidth(cfg):
    t = time.perf_counter()
    hist, fit = _linewidth_run(cfg)
    dt = time.perf_counter() - t
    return [
        Row("7", "recovered linewidth (MHz)", 15.0, fit.delta_nu, "+/-1",
            _within(fit.delta_nu, 15.0, 1.0) and hist.total >= 100_000, dt,
            f"{hist.total} coincidences"),
        Row("7", "correlation FWHM (ns)", 14.5, fit.fwhm, "14.7 +/-1", _within(fit.fwhm, 14.7, 1.0), dt),
    ]


def _rows_rate(cfg):
    t = time.perf_counter()
    src = replace(cfg.source, pump_power=7.0)
    duration = math.ceil(100_000 / (src.pair_rate * src.duty_cycle))
    _, fit = timing.pump_sweep(src, np.linspace(7, 32, 5), duration, cfg.seed)
    dt = time.perf_counter() - t
    return [Row("8", "pair rate slope (1/s/mW)", 44.8, fit["slope"], "+/-2, R^2>0.99",
                _within(fit["slope"], 44.8, 2.0) and fit["r_squared"] > 0.99, dt,
                f"R^2 = {fit['r_squared']:.5f}")]


def _rows_coherence(cfg):
    t = time.perf_counter()
    lc = timing.coherence_length(15.0)
    l0 = timing.fit_visibility([(0.0, 0.95), (4.5, 0.75)])["l0"]
    dt = time.perf_counter() - t
    return [
        Row("9", "coherence length c/dnu at 15 MHz (m)", "~20", lc, "20.0 +/-0.1", _within(lc, 20.0, 0.1), dt),
        Row("9", "M-Z decay length L0 (m)", "~20", l0, "19.0 +/-0.1", _within(l0, 19.0, 0.1), dt),
    ]


def _rows_cavity(cfg):
    lw = spectrum.cavity_linewidth(cfg.cavity)
    rt = spectrum.round_trip_time(cfg.cavity)
    return [
        Row("10", "cavity linewidth FSR/F (MHz)", 15.0, lw, "5%", abs(lw / 15.0 - 1) <= 0.05),
        Row("10", "round-trip time (ps)", 670.0, rt, "5%", abs(rt / 670.0 - 1) <= 0.05),
    ]


def _rows_properties(cfg):
    t = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    worst = max(polarization.chsh_value(tomography.random_density_matrix(rng, rank=int(rng.integers(1, 5))))
                for _ in range(1000))
    comb = spectrum.build_comb(cfg.cavity)
    energy_ok = all(p.offset_signal + p.offset_idler == 0 for p in comb.pairs)
    src = replace(cfg.source, pump_power=32.0)
    a = timing.generate_events(src, 2.0, cfg.seed)
    b = timing.generate_events(src, 2.0, cfg.seed)
    fd, path = tempfile.mkstemp(suffix=".txt")
    os.close(fd)
    try:
        timing.write_events(a, path)
        roundtrip = timing.read_events(path) == a
    finally:
        os.unlink(path)
    dt = time.perf_counter() - t
    return [
        Row("11", "max CHSH over 1000 random states", 2 * math.sqrt(2), worst, "<= 2sqrt2 + 1e-9",
            worst <= 2 * math.sqrt(2) + 1e-9, dt),
        Row("11", "comb energy conservation", True, energy_ok, "exact", energy_ok),
        Row("11", "seeded event generation reproducible", True, a == b, "exact", a == b),
        Row("11", "event file round trip", True, roundtrip, "exact", roundtrip),
    ]


def run_report(cfg: RunConfig | None = None) -> list[Row]:
    cfg = cfg or RunConfig()
    rows = []
    rows += _rows_spectrum(cfg)
    rows += _rows_filters(cfg)
    rows += _rows_chsh()
    rows += _rows_fringes(cfg)
    rows += _rows_tomography(cfg)
    rows += _rows_reference_rho()
    rows += _rows_linewidth(cfg)
    rows += _rows_rate(cfg)
    rows += _rows_coherence(cfg)
    rows += _rows_cavity(cfg)
    rows += _rows_properties(cfg)
    return rows


def _cell(x):
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def format_table(rows: list[Row]) -> str:
    header = ("#", "quantity", "published", "computed", "tolerance", "status")
    body = []
    for r in rows:
        status = "info" if r.passed is None else ("PASS" if r.passed else "FAIL")
        body.append((r.criterion, r.quantity, _cell(r.published), _cell(r.computed), r.tolerance, status))
    widths = [max(len(h), *(len(b[i]) for b in body)) for i, h in enumerate(header)]
    line = lambda cells: " | ".join(c.ljust(w) for c, w in zip(cells, widths))
    out = [line(header), "-+-".join("-" * w for w in widths)]
    out += [line(b) for b in body]
    notes = [f"  [{r.criterion}] {r.quantity}: {r.note}" for r in rows if r.note]
    if notes:
        out += ["", "notes:"] + notes
    return "\n".join(out)


def rows_to_json(rows: list[Row]) -> dict:
    def clean(v):
        if isinstance(v, (np.floating, np.integer)):
            return v.item()
        if isinstance(v, np.bool_):
            return bool(v)
        return v
    items = [{k: clean(v) for k, v in asdict(r).items()} for r in rows]
    return {"rows": items, "all_passed": all(r.passed is not False for r in rows)}
