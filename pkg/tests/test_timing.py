import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from cavityspdc import timing as tm
from cavityspdc.exceptions import EventFileError, FitError

C = 299_792_458.0
BASE = tm.SourceConfig()


def _brute_force_delays(stream, window):
    t1, t2 = stream.times(tm.SPD1), stream.times(tm.SPD2)
    return [b - a for a in t1 for b in t2 if abs(b - a) <= window]


# -- rates and config --------------------------------------------------------


def test_pair_rate_values():
    assert tm.pair_rate(32, 1434 / 32) == pytest.approx(1434.0)
    assert tm.pair_rate(0, 44.8) == 0.0
    assert tm.pair_rate(7, 44.8) == pytest.approx(313.6, abs=0.2)
    assert BASE.pair_rate == pytest.approx(313.69, abs=0.01)


@pytest.mark.parametrize(
    "kwargs",
    [dict(duty_cycle=0.0), dict(duty_cycle=1.5), dict(detector_efficiency=-0.1), dict(dark_rate=-1),
     dict(digitizer_resolution=0), dict(linewidth=0), dict(pump_power=-1)],
)
def test_source_validation(kwargs):
    with pytest.raises(ValueError):
        tm.SourceConfig(**kwargs)


# -- event generation ----------------------------------------------------------


def test_delay_distribution_is_laplace():
    cfg = replace(BASE, pump_power=32.0, duty_cycle=1.0, dark_rate=0.0, digitizer_resolution=1e-3)
    stream = tm.generate_events(cfg, 150.0, seed=1)
    delays = tm._start_stop_delays(stream, 300.0)
    assert delays.size >= 100_000
    scale = 1e3 / (2 * math.pi * 15.0)
    ks = stats.kstest(np.abs(delays), stats.expon(scale=scale).cdf).statistic
    assert ks < 0.01
    # the two-sided law is symmetric about zero
    assert abs(np.mean(delays)) < 5 * scale * math.sqrt(2) / math.sqrt(delays.size)


def test_seed_reproducibility_and_difference():
    cfg = replace(BASE, pump_power=32.0)
    a = tm.generate_events(cfg, 5.0, seed=7)
    assert a == tm.generate_events(cfg, 5.0, seed=7)
    assert not a == tm.generate_events(cfg, 5.0, seed=8)


def test_different_seeds_same_delay_law():
    cfg = replace(BASE, pump_power=32.0, duty_cycle=1.0, dark_rate=0.0, digitizer_resolution=1e-3)
    d1 = tm._start_stop_delays(tm.generate_events(cfg, 20.0, seed=1), 300.0)
    d2 = tm._start_stop_delays(tm.generate_events(cfg, 20.0, seed=2), 300.0)
    assert stats.ks_2samp(d1, d2).pvalue > 1e-3


def test_zero_efficiency_leaves_dark_counts():
    cfg = replace(BASE, pump_power=32.0, detector_efficiency=0.0, dark_rate=1000.0)
    stream = tm.generate_events(cfg, 10.0, seed=3)
    expected = 2 * 1000.0 * 10.0 * cfg.duty_cycle
    assert abs(len(stream) - expected) < 5 * math.sqrt(expected)
    no_dark = tm.generate_events(replace(cfg, dark_rate=0.0), 10.0, seed=3)
    assert len(no_dark) == 0


def test_duty_cycle_halves_yield():
    full = replace(BASE, pump_power=32.0, duty_cycle=1.0, dark_rate=0.0)
    half = replace(full, duty_cycle=0.5)
    n_full = tm.coincidence_count(tm.generate_events(full, 280.0, seed=4), 100.0)
    n_half = tm.coincidence_count(tm.generate_events(half, 280.0, seed=5), 100.0)
    assert n_full > 100_000
    assert n_half / n_full == pytest.approx(0.5, rel=0.05)


def test_events_are_gated_and_quantized():
    cfg = replace(BASE, pump_power=32.0, dark_rate=500.0)
    stream = tm.generate_events(cfg, 2.0, seed=6)
    t_s = stream.timestamps * 1e-9
    phase = np.mod(t_s, 1 / cfg.lock_rate) * cfg.lock_rate
    # SPD2 photons may trail their partner past the gate edge by a few delays
    assert np.mean(phase < cfg.duty_cycle + 1e-5) == 1.0
    assert np.all(stream.timestamps == np.floor(stream.timestamps))
    assert stream.timestamps.max() < 2e9


def test_simulated_coincidences_match_expectation():
    stream = tm.generate_events(BASE, 10.0, seed=2024)
    expected = BASE.expected_coincidence_rate() * 10.0
    n = tm.coincidence_count(stream, BASE.coincidence_window)
    assert abs(n - expected) <= 3 * math.sqrt(expected) + 1


def test_generate_rejects_bad_duration():
    with pytest.raises(ValueError):
        tm.generate_events(BASE, 0.0, seed=1)


# -- files ---------------------------------------------------------------------


def test_event_file_round_trip(tmp_path):
    stream = tm.generate_events(replace(BASE, pump_power=32.0), 2.0, seed=9)
    path = tmp_path / "ev.txt"
    tm.write_events(stream, path)
    assert tm.read_events(path) == stream
    first = path.read_text().splitlines()[0]
    assert first.count(",") == 1 and first.split(",")[0] in ("1", "2")


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([1, 2]), st.floats(0, 1e12) | st.integers(0, 10**12)), max_size=50))
def test_event_file_round_trip_arbitrary(tmp_path_factory, records):
    stream = tm.EventStream([r[0] for r in records], [r[1] for r in records])
    path = tmp_path_factory.mktemp("ev") / "e.txt"
    tm.write_events(stream, path)
    assert tm.read_events(path) == stream


def test_read_empty_and_bad_files(tmp_path):
    path = tmp_path / "e.txt"
    path.write_text("")
    assert len(tm.read_events(path)) == 0
    path.write_text("3,100\n")
    with pytest.raises(EventFileError, match="line 1"):
        tm.read_events(path)
    path.write_text("1,100\n2,abc\n")
    with pytest.raises(EventFileError, match="line 2"):
        tm.read_events(path)
    path.write_text("1,100\n2,5,6\n")
    with pytest.raises(EventFileError, match="line 2"):
        tm.read_events(path)
    path.write_text("1,-5\n")
    with pytest.raises(EventFileError, match="line 1"):
        tm.read_events(path)


# -- histograms ----------------------------------------------------------------


def test_single_pair_lands_in_its_bin():
    hist = tm.coincidence_histogram(tm.EventStream([1, 2], [1000, 1005]), 100.0, 1.0)
    assert hist.total == 1
    assert hist.counts[hist.centers == 5.0] == 1


@pytest.mark.parametrize("seed", range(5))
def test_histogram_total_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(10, 1000))
    stream = tm.EventStream(rng.integers(1, 3, n), np.floor(rng.uniform(0, 2e5, n)))
    for window in (10.0, 100.0, 250.0):
        hist = tm.coincidence_histogram(stream, window, 1.0)
        brute = _brute_force_delays(stream, window)
        assert hist.total == len(brute) == tm.coincidence_count(stream, window)
        expected, _ = np.histogram(brute, bins=(np.arange(-int(window), int(window) + 2) - 0.5))
        np.testing.assert_array_equal(hist.counts, expected)


def test_dark_only_histogram_is_flat():
    cfg = replace(BASE, detector_efficiency=0.0, dark_rate=20_000.0, duty_cycle=1.0)
    hist = tm.coincidence_histogram(tm.generate_events(cfg, 20.0, seed=10), 100.0, 5.0)
    assert hist.total > 1000
    assert stats.chisquare(hist.counts).pvalue > 1e-3


def test_correlated_histogram_peaks_at_zero():
    cfg = replace(BASE, pump_power=32.0)
    hist = tm.coincidence_histogram(tm.generate_events(cfg, 20.0, seed=11), 100.0, 1.0)
    assert abs(hist.centers[np.argmax(hist.counts)]) <= 3


def test_histogram_rejects_bad_bins():
    s = tm.EventStream()
    with pytest.raises(ValueError):
        tm.coincidence_histogram(s, 100.0, 0.5, resolution=1.0)
    with pytest.raises(ValueError):
        tm.coincidence_histogram(s, 0.0, 1.0)


def test_histogram_csv(tmp_path):
    hist = tm.coincidence_histogram(tm.EventStream([1, 2], [0, 3]), 5.0, 1.0)
    hist.to_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "delay_ns,counts" and len(lines) == 1 + 11


# -- fits ------------------------------------------------------------------------


def test_fwhm_value():
    assert tm.fwhm_from_linewidth(15.0) == pytest.approx(14.70904, abs=1e-5)


def test_noiseless_curve_recovered():
    t = np.arange(-100.0, 101.0)
    y = tm.correlation_model(t, 500.0, 15.0, 0.0, 3.0)
    hist = tm.CoincidenceHistogram(t, y, 1.0, 100.0)
    fit = tm.fit_correlation(hist)
    assert fit.delta_nu == pytest.approx(15.0, rel=1e-6)
    assert fit.baseline == pytest.approx(3.0, rel=1e-6)
    assert fit.fwhm * math.pi * fit.delta_nu * 1e-3 == pytest.approx(math.log(2), abs=1e-9)


def test_end_to_end_linewidth():
    cfg = replace(BASE, pump_power=32.0)
    stream = tm.generate_events(cfg, 320.0, seed=12)
    hist = tm.coincidence_histogram(stream, 100.0, 1.0)
    assert hist.total >= 100_000
    fit = tm.fit_correlation(hist)
    assert fit.delta_nu == pytest.approx(15.0, abs=1.0)
    assert fit.fwhm == pytest.approx(14.7, abs=1.0)
    assert fit.fwhm * math.pi * fit.delta_nu * 1e-3 == pytest.approx(math.log(2), abs=1e-9)


def test_fit_fails_without_signal():
    cfg = replace(BASE, detector_efficiency=0.0, dark_rate=20_000.0, duty_cycle=1.0)
    hist = tm.coincidence_histogram(tm.generate_events(cfg, 20.0, seed=10), 100.0, 1.0)
    with pytest.raises(FitError):
        tm.fit_correlation(hist)
    with pytest.raises(FitError):
        tm.fit_correlation(tm.CoincidenceHistogram(np.arange(-5.0, 6.0), np.zeros(11), 1.0, 5.0))


def test_fitters_predict():
    t = np.arange(-50.0, 51.0)
    y = tm.correlation_model(t, 100.0, 20.0, 1.0, 2.0)
    est = tm.CorrelationFitter().fit(t, y)
    np.testing.assert_allclose(est.predict(t), y, rtol=1e-6)


# -- coherence ---------------------------------------------------------------------


def test_coherence_length_values():
    assert tm.coherence_length(15.0) == pytest.approx(19.98616, abs=1e-5)
    assert tm.coherence_length(30.0) == pytest.approx(10.0, abs=0.01)
    assert tm.coherence_length(1.0) == pytest.approx(C / 1e6)


def test_mz_visibility_values():
    assert tm.mz_visibility(0.0, 0.95, 19.0) == 0.95
    assert tm.mz_visibility(4.5, 0.95, 19.0) == pytest.approx(0.75, abs=0.005)
    assert tm.mz_visibility(1e6, 0.95, 19.0) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        tm.mz_visibility(-1.0, 0.95, 19.0)


def test_visibility_fit_two_points():
    res = tm.fit_visibility([(0.0, 0.95), (4.5, 0.75)])
    assert res["l0"] == pytest.approx(4.5 / math.log(0.95 / 0.75), rel=1e-12)
    assert res["l0"] == pytest.approx(19.03644, abs=1e-5)
    assert res["v0"] == pytest.approx(0.95, rel=1e-12)


def test_visibility_fit_flat_and_exact():
    assert math.isinf(tm.fit_visibility([(0, 0.9), (1, 0.9), (5, 0.9)])["l0"])
    L = np.linspace(0, 10, 10)
    res = tm.fit_visibility(np.column_stack([L, 0.97 * np.exp(-L / 20.0)]))
    assert res["v0"] == pytest.approx(0.97, rel=1e-6)
    assert res["l0"] == pytest.approx(20.0, rel=1e-6)


def test_visibility_fit_rejects_bad_input():
    with pytest.raises(ValueError):
        tm.fit_visibility([(0, 0.9), (1, 0.0)])
    with pytest.raises(ValueError):
        tm.fit_visibility([(0, 0.9)])


# -- sweep -------------------------------------------------------------------------


def test_pump_sweep_linear():
    points, fit = tm.pump_sweep(BASE, np.linspace(7, 32, 5), 640.0, seed=2)
    assert [p[0] for p in points] == pytest.approx([7, 13.25, 19.5, 25.75, 32])
    assert min(p[1] for p in points) >= 100_000 * BASE.duty_cycle * 0.5 * 0.99
    assert fit["slope"] == pytest.approx(44.8, abs=2.0)
    assert fit["r_squared"] > 0.99


def test_pump_sweep_reproducible_and_validated():
    a = tm.pump_sweep(BASE, [10, 20], 5.0, seed=1)
    assert a == tm.pump_sweep(BASE, [10, 20], 5.0, seed=1)
    with pytest.raises(ValueError):
        tm.pump_sweep(BASE, [10], 5.0, seed=1)
