"""Time-domain side of the source: detection events, coincidence histograms,
linewidth extraction and single-photon coherence.

Units: pump power mW, rates 1/s, linewidth MHz, times ns (event timestamps and
histogram axes), durations s, path differences m.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT
from scipy.optimize import curve_fit
from scipy.stats import linregress
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_fraction, check_positive, check_rng, check_xy
from .exceptions import EventFileError, FitError

__all__ = [
    "CoherenceFitter",
    "CoincidenceHistogram",
    "CorrelationFitter",
    "EventStream",
    "HistogramFit",
    "SourceConfig",
    "SPD1",
    "SPD2",
    "coherence_length",
    "coincidence_count",
    "coincidence_histogram",
    "correlation_model",
    "fit_correlation",
    "fit_visibility",
    "fwhm_from_linewidth",
    "generate_events",
    "mz_visibility",
    "pair_rate",
    "pump_sweep",
    "read_events",
    "write_events",
]

SPD1, SPD2 = 1, 2


@dataclass(frozen=True)
class SourceConfig:
    """Photon-pair source and detection chain.

    ``rate_coefficient`` is the pair generation rate per mW of pump.
    ``duty_cycle`` is the detect fraction of each lock/detect period
    (``1/lock_rate`` long). Dark counts are per channel.
    """

    pump_power: float = 7.0  # mW
    rate_coefficient: float = 1434.0 / 32.0  # pairs/s/mW
    linewidth: float = 15.0  # MHz
    duty_cycle: float = 0.5
    detector_efficiency: float = 1.0
    dark_rate: float = 100.0  # 1/s per channel
    digitizer_resolution: float = 1.0  # ns
    coincidence_window: float = 100.0  # ns
    lock_rate: float = 20.0  # Hz

    def __post_init__(self):
        check_positive(self.pump_power, "pump_power", strict=False)
        check_positive(self.rate_coefficient, "rate_coefficient", strict=False)
        check_positive(self.linewidth, "linewidth")
        check_fraction(self.duty_cycle, "duty_cycle", low_open=True)
        check_fraction(self.detector_efficiency, "detector_efficiency")
        check_positive(self.dark_rate, "dark_rate", strict=False)
        check_positive(self.digitizer_resolution, "digitizer_resolution")
        check_positive(self.coincidence_window, "coincidence_window")
        check_positive(self.lock_rate, "lock_rate")

    @property
    def pair_rate(self) -> float:
        return pair_rate(self.pump_power, self.rate_coefficient)

    def expected_coincidence_rate(self) -> float:
        """True coincidences per second of wall time (accidentals excluded)."""
        return self.pair_rate * self.duty_cycle * 0.5 * self.detector_efficiency**2


class EventStream:
    """Time-ordered detection records: ``channels`` (1 or 2) and ``timestamps`` (ns)."""

    __slots__ = ("channels", "timestamps")

    def __init__(self, channels=(), timestamps=()):
        ch = np.asarray(channels, dtype=np.int8).ravel()
        ts = np.asarray(timestamps, dtype=float).ravel()
        if ch.shape != ts.shape:
            raise ValueError("channels and timestamps differ in length")
        if ch.size and not np.all((ch == SPD1) | (ch == SPD2)):
            raise ValueError("channels must be 1 or 2")
        if ts.size and (ts.min() < 0 or not np.all(np.isfinite(ts))):
            raise ValueError("timestamps must be finite and >= 0")
        order = np.lexsort((ch, ts))
        self.channels = ch[order]
        self.timestamps = ts[order]
        self.channels.setflags(write=False)
        self.timestamps.setflags(write=False)

    def __len__(self):
        return self.timestamps.size

    def __eq__(self, other):
        if not isinstance(other, EventStream):
            return NotImplemented
        return np.array_equal(self.channels, other.channels) and np.array_equal(
            self.timestamps, other.timestamps
        )

    def times(self, channel) -> np.ndarray:
        return self.timestamps[self.channels == channel]

    def __repr__(self):
        return f"EventStream(n={len(self)}, spd1={int(np.sum(self.channels == SPD1))})"


def pair_rate(power: float, coeff: float) -> float:
    """Linear pair generation rate ``coeff * power`` in 1/s."""
    check_positive(power, "power", strict=False)
    return coeff * power


def _gate_open(t_s, cfg):
    period = 1.0 / cfg.lock_rate
    return np.mod(t_s, period) < cfg.duty_cycle * period


def _quantize(t_ns, resolution):
    return np.floor(t_ns / resolution) * resolution


def generate_events(cfg: SourceConfig, duration: float, seed=None) -> EventStream:
    """Monte-Carlo detection record for ``duration`` seconds.

    Pairs arrive as a Poisson process and are kept only inside the detect
    part of each lock/detect period. At the 50/50 splitter each photon picks
    a port independently; pairs leaving by the same port are discarded. For
    the rest the SPD2 photon trails the SPD1 photon by a Laplace-distributed
    delay of scale ``1/(2 pi linewidth)``. Each photon then survives with the
    detector efficiency, gated dark counts are added, and all times are
    floored to the digitizer resolution.
    """
    check_positive(duration, "duration")
    rng = check_rng(seed)
    t_end = duration * 1e9

    n_pairs = rng.poisson(cfg.pair_rate * duration)
    t0 = np.sort(rng.uniform(0.0, duration, n_pairs))
    t0 = t0[_gate_open(t0, cfg)]
    split = rng.random(t0.size) < 0.5
    t0 = t0[split] * 1e9
    scale = 1e3 / (2 * math.pi * cfg.linewidth)  # ns
    t2 = t0 + rng.laplace(0.0, scale, t0.size)
    keep1 = rng.random(t0.size) < cfg.detector_efficiency
    keep2 = rng.random(t0.size) < cfg.detector_efficiency

    parts_t, parts_c = [t0[keep1], t2[keep2]], [SPD1, SPD2]
    for ch in (SPD1, SPD2):
        n_dark = rng.poisson(cfg.dark_rate * duration)
        td = rng.uniform(0.0, duration, n_dark)
        parts_t.append(td[_gate_open(td, cfg)] * 1e9)
        parts_c.append(ch)

    ts = np.concatenate(parts_t)
    chs = np.concatenate([np.full(t.size, c, dtype=np.int8) for t, c in zip(parts_t, parts_c)])
    inside = (ts >= 0) & (ts < t_end)
    return EventStream(chs[inside], _quantize(ts[inside], cfg.digitizer_resolution))


def _format_time(t):
    return str(int(t)) if float(t).is_integer() else repr(float(t))


def write_events(stream: EventStream, path):
    """Write ``channel,timestamp_ns`` lines (LF, no header)."""
    with open(path, "w", newline="\n") as fh:
        for ch, t in zip(stream.channels.tolist(), stream.timestamps.tolist()):
            fh.write(f"{ch},{_format_time(t)}\n")


def read_events(path) -> EventStream:
    channels, times = [], []
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = line.split(",")
            if len(fields) != 2:
                raise EventFileError(lineno, f"expected 'channel,timestamp_ns', got {line!r}")
            ch_raw, t_raw = (f.strip() for f in fields)
            if ch_raw not in ("1", "2"):
                raise EventFileError(lineno, f"channel must be 1 or 2, got {ch_raw!r}")
            try:
                t = int(t_raw)
            except ValueError:
                try:
                    t = float(t_raw)
                except ValueError:
                    raise EventFileError(lineno, f"bad timestamp {t_raw!r}") from None
            if not (math.isfinite(t) and t >= 0):
                raise EventFileError(lineno, f"timestamp must be finite and >= 0, got {t_raw!r}")
            channels.append(int(ch_raw))
            times.append(t)
    return EventStream(channels, times)


@dataclass(frozen=True)
class CoincidenceHistogram:
    centers: np.ndarray  # ns
    counts: np.ndarray
    bin_width: float
    window: float

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["delay_ns", "counts"])
            writer.writerows(zip(self.centers.tolist(), self.counts.tolist()))


def _start_stop_delays(stream, window):
    start = stream.times(SPD1)
    stop = stream.times(SPD2)
    lo = np.searchsorted(stop, start - window, side="left")
    hi = np.searchsorted(stop, start + window, side="right")
    n = hi - lo
    if not n.sum():
        return np.empty(0)
    # flat index of every (start, stop) pairing inside the window
    owner = np.repeat(np.arange(start.size), n)
    offs = np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n)
    return stop[lo[owner] + offs] - start[owner]


def coincidence_count(stream: EventStream, window: float) -> int:
    """Number of SPD1-SPD2 pairings with ``|t2 - t1| <= window`` ns."""
    start = stream.times(SPD1)
    stop = stream.times(SPD2)
    lo = np.searchsorted(stop, start - window, side="left")
    hi = np.searchsorted(stop, start + window, side="right")
    return int(np.sum(hi - lo))


def coincidence_histogram(stream: EventStream, window: float, bin: float, resolution: float = 1.0):
    """Start-stop delay histogram: SPD1 starts, SPD2 stops, delays within ``+/-window`` ns.

    Bins are centred on integer multiples of ``bin``.
    """
    check_positive(window, "window")
    check_positive(bin, "bin")
    if bin < resolution:
        raise ValueError(f"bin ({bin} ns) is finer than the digitizer resolution ({resolution} ns)")
    k = math.ceil(window / bin - 1e-12)
    edges = (np.arange(-k, k + 2) - 0.5) * bin
    delays = _start_stop_delays(stream, window)
    counts, _ = np.histogram(delays, bins=edges)
    return CoincidenceHistogram(np.arange(-k, k + 1) * bin, counts, float(bin), float(window))


def correlation_model(t, amplitude, delta_nu, center, baseline):
    """``amplitude * exp(-2 pi delta_nu |t - center|) + baseline`` with t in ns, delta_nu in MHz."""
    return amplitude * np.exp(-2e-3 * np.pi * delta_nu * np.abs(t - center)) + baseline


def fwhm_from_linewidth(delta_nu: float) -> float:
    """FWHM in ns of the two-sided exponential for a linewidth in MHz."""
    return math.log(2) * 1e3 / (math.pi * delta_nu)


@dataclass(frozen=True)
class HistogramFit:
    amplitude: float
    baseline: float
    delta_nu: float  # MHz
    fwhm: float  # ns
    center: float  # ns
    delta_nu_sigma: float = float("nan")

    def to_dict(self):
        return {
            "amplitude": self.amplitude,
            "baseline": self.baseline,
            "delta_nu_MHz": self.delta_nu,
            "delta_nu_sigma_MHz": self.delta_nu_sigma,
            "fwhm_ns": self.fwhm,
            "center_ns": self.center,
        }


class CorrelationFitter(BaseEstimator):
    """Weighted least-squares fit of a two-sided exponential plus flat baseline.

    Counts are weighted with Poisson errors ``sqrt(max(n, 1))``. The fit is
    rejected (``FitError``) when it does not converge or when the peak
    amplitude is below ``min_significance`` standard errors.
    """

    def __init__(self, min_significance=5.0, min_nonempty_bins=10):
        self.min_significance = min_significance
        self.min_nonempty_bins = min_nonempty_bins

    def fit(self, X, y):
        t, n = check_xy(X, y, min_points=3, name="histogram")
        if np.count_nonzero(n) < self.min_nonempty_bins:
            raise FitError(f"need at least {self.min_nonempty_bins} non-empty bins, got {np.count_nonzero(n)}")
        edge = np.abs(t) >= 0.75 * np.abs(t).max()
        b0 = float(np.median(n[edge])) if edge.any() else float(n.min())
        a0 = max(float(n.max()) - b0, 1.0)
        c0 = float(t[np.argmax(n)])
        above = t[n - b0 >= 0.5 * a0]
        width = max(float(above.max() - above.min()), abs(t[1] - t[0])) if above.size else 10.0
        nu0 = math.log(2) * 1e3 / (math.pi * width)
        sigma = np.sqrt(np.maximum(n, 1.0))
        try:
            popt, pcov = curve_fit(
                correlation_model, t, n, p0=[a0, nu0, c0, b0], sigma=sigma,
                bounds=([0.0, 1e-6, t.min(), -np.inf], [np.inf, np.inf, t.max(), np.inf]),
                maxfev=20000,
            )
        except (RuntimeError, ValueError) as exc:
            raise FitError(f"correlation fit did not converge: {exc}") from exc
        err = np.sqrt(np.diag(pcov))
        if not np.all(np.isfinite(err)) or popt[0] < self.min_significance * err[0]:
            raise FitError("no significant correlation peak above the baseline")
        self.amplitude_, self.delta_nu_, self.center_, self.baseline_ = (float(p) for p in popt)
        self.delta_nu_sigma_ = float(err[1])
        self.fwhm_ = fwhm_from_linewidth(self.delta_nu_)
        return self

    def predict(self, X):
        check_is_fitted(self, "delta_nu_")
        return correlation_model(np.asarray(X, float), self.amplitude_, self.delta_nu_, self.center_, self.baseline_)

    def to_result(self) -> HistogramFit:
        check_is_fitted(self, "delta_nu_")
        return HistogramFit(self.amplitude_, self.baseline_, self.delta_nu_, self.fwhm_, self.center_, self.delta_nu_sigma_)


def fit_correlation(hist: CoincidenceHistogram, **params) -> HistogramFit:
    return CorrelationFitter(**params).fit(hist.centers, hist.counts).to_result()


def coherence_length(delta_nu: float) -> float:
    """``c / delta_nu`` in m for a linewidth in MHz."""
    check_positive(delta_nu, "delta_nu")
    return SPEED_OF_LIGHT / (delta_nu * 1e6)


def mz_visibility(path_diff, v0: float, l0: float):
    """Interference visibility ``v0 * exp(-L / l0)`` at path difference ``L`` (m)."""
    check_positive(l0, "l0")
    L = np.asarray(path_diff, dtype=float)
    if np.any(L < 0):
        raise ValueError("path_diff must be >= 0")
    v = v0 * np.exp(-L / l0)
    return float(v) if v.ndim == 0 else v


class CoherenceFitter(BaseEstimator):
    """Fit ``V = v0 exp(-L / l0)`` by linear regression of ``log V`` on ``L``.

    A non-negative fitted slope (no decay) sets ``l0_`` to ``inf``.
    """

    def __init__(self, flat_tol=1e-12):
        self.flat_tol = flat_tol

    def fit(self, X, y):
        L, v = check_xy(X, y, min_points=2, name="visibility data")
        if np.any(v <= 0):
            raise ValueError("visibilities must be > 0")
        if np.ptp(L) == 0:
            raise ValueError("need at least two distinct path differences")
        slope, intercept = np.polyfit(L, np.log(v), 1)
        self.v0_ = float(math.exp(intercept))
        self.l0_ = math.inf if slope >= -self.flat_tol else float(-1.0 / slope)
        return self

    def predict(self, X):
        check_is_fitted(self, "l0_")
        L = np.asarray(X, dtype=float)
        if math.isinf(self.l0_):
            return np.full_like(L, self.v0_)
        return self.v0_ * np.exp(-L / self.l0_)


def fit_visibility(data) -> dict:
    """``{"v0", "l0"}`` from ``[(L, V), ...]``."""
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ValueError("data must be a sequence of (L, V) pairs")
    est = CoherenceFitter().fit(data[:, 0], data[:, 1])
    return {"v0": est.v0_, "l0": est.l0_}


def pump_sweep(cfg: SourceConfig, powers, duration: float, seed=None):
    """Simulate a coincidence-rate vs pump-power sweep.

    Each point counts SPD1-SPD2 pairings within the coincidence window and
    converts them to a pair generation rate by dividing out the duty cycle,
    the 1/2 splitter post-selection and the detector efficiencies. Returns
    ``(points, fit)`` where ``points`` rows are ``(power, coincidences,
    inferred_rate)`` and ``fit`` holds the slope, intercept and R^2.
    """
    powers = [float(p) for p in powers]
    if len(powers) < 2:
        raise ValueError("need at least two pump powers")
    children = np.random.SeedSequence(seed).spawn(len(powers))
    conversion = duration * cfg.duty_cycle * 0.5 * cfg.detector_efficiency**2
    points = []
    for power, child in zip(powers, children):
        stream = generate_events(replace(cfg, pump_power=power), duration, child)
        n = coincidence_count(stream, cfg.coincidence_window)
        points.append((power, n, n / conversion))
    x = np.array([p[0] for p in points])
    y = np.array([p[2] for p in points])
    reg = linregress(x, y)
    return points, {"slope": float(reg.slope), "intercept": float(reg.intercept), "r_squared": float(reg.rvalue**2)}

