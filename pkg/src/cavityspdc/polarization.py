"""Post-selected two-photon polarization states and their measurement.

Density matrices are 4x4 in the basis order ``|HH>, |HV>, |VH>, |VV>``, first
letter photon A, second photon B. Polarizer and wave-plate angles are in
radians measured from H. Wave plates use the Jones convention

    J(theta, delta) = R(theta) @ diag(1, exp(1j*delta)) @ R(-theta)

with ``R`` the 2x2 rotation, so ``delta = pi/2`` is a quarter-wave plate and
``delta = pi`` a half-wave plate with the fast axis at ``theta``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import minimize
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_fraction, check_int, check_rng, check_xy, spawn_seeds
from .exceptions import DegenerateFitError

__all__ = [
    "BASIS_LABELS",
    "AnalyzerSetting",
    "ChshSettings",
    "FringeFitter",
    "TwoQubitState",
    "as_density_matrix",
    "chsh_measurement",
    "chsh_report",
    "chsh_value",
    "chsh_violation_sigmas",
    "coincidence_probability",
    "compensate_phase",
    "correlation_e",
    "fit_fringe",
    "fringe_scan",
    "half_wave_plate",
    "linear_polarizer",
    "maximally_mixed",
    "postselected_state",
    "quarter_wave_plate",
    "retarder",
    "search_compensation",
    "singlet",
    "visibility_at_pump_power",
    "werner_mix",
    "write_chsh_json",
    "write_fringe_csv",
]

BASIS_LABELS = ("HH", "HV", "VH", "VV")

HERMITIAN_ATOL = 1e-12
TRACE_ATOL = 1e-12
EIGEN_FLOOR = -1e-9


class TwoQubitState:
    """Immutable two-qubit density matrix.

    Construction checks Hermiticity, unit trace and positivity; pass
    ``validate=False`` to wrap a matrix that is only approximately physical
    (e.g. one transcribed with rounded entries).
    """

    __slots__ = ("_rho",)

    def __init__(self, rho, *, validate=True):
        rho = np.array(rho, dtype=complex)
        if rho.shape != (4, 4):
            raise ValueError(f"density matrix must be 4x4, got shape {rho.shape}")
        if validate:
            if not np.allclose(rho, rho.conj().T, rtol=0, atol=HERMITIAN_ATOL):
                raise ValueError("density matrix is not Hermitian")
            tr = np.trace(rho)
            if abs(tr - 1) > TRACE_ATOL:
                raise ValueError(f"density matrix trace is {tr.real:.15g}, expected 1")
            lam = np.linalg.eigvalsh(rho)
            if lam[0] < EIGEN_FLOOR:
                raise ValueError(f"density matrix has negative eigenvalue {lam[0]:.3g}")
        rho.setflags(write=False)
        self._rho = rho

    @classmethod
    def from_vector(cls, psi):
        psi = np.asarray(psi, dtype=complex).ravel()
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()))

    @property
    def rho(self) -> np.ndarray:
        return self._rho

    @property
    def purity(self) -> float:
        return float(np.real(np.trace(self._rho @ self._rho)))

    def __array__(self, dtype=None, copy=None):
        return self._rho if dtype is None else self._rho.astype(dtype)

    def __repr__(self):
        return f"TwoQubitState(purity={self.purity:.6f})"


def as_density_matrix(state) -> np.ndarray:
    if isinstance(state, TwoQubitState):
        return state.rho
    rho = np.asarray(state, dtype=complex)
    if rho.shape != (4, 4):
        raise ValueError(f"expected a 4x4 density matrix, got shape {rho.shape}")
    return rho


def postselected_state(alpha: float = 0.0) -> TwoQubitState:
    """``(|HV> - exp(i alpha)|VH>)/sqrt(2)`` as a density matrix."""
    psi = np.zeros(4, dtype=complex)
    psi[1] = 1.0
    psi[2] = -np.exp(1j * alpha)
    return TwoQubitState.from_vector(psi / math.sqrt(2))


def singlet() -> TwoQubitState:
    return postselected_state(0.0)


def maximally_mixed() -> TwoQubitState:
    return TwoQubitState(np.eye(4) / 4)


def werner_mix(visibility: float) -> TwoQubitState:
    """Mixture ``V |singlet><singlet| + (1 - V) I/4``."""
    v = check_fraction(visibility, "visibility")
    return TwoQubitState(v * singlet().rho + (1 - v) * np.eye(4) / 4)


def visibility_at_pump_power(power_mw: float) -> float:
    """Empirical fringe visibility vs pump power.

    Straight line through (7 mW, 0.97) and (20 mW, 0.92), clipped to [0, 1].
    Only meant as a convenience between and near those two points.
    """
    v = 0.97 + (power_mw - 7.0) * (0.92 - 0.97) / (20.0 - 7.0)
    return min(1.0, max(0.0, v))


# -- Jones calculus -------------------------------------------------------


def _rotation(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def retarder(theta: float, retardance: float) -> np.ndarray:
    return _rotation(theta) @ np.diag([1.0, np.exp(1j * retardance)]) @ _rotation(-theta)


def quarter_wave_plate(theta: float) -> np.ndarray:
    return retarder(theta, math.pi / 2)


def half_wave_plate(theta: float) -> np.ndarray:
    return retarder(theta, math.pi)


def linear_polarizer(theta: float) -> np.ndarray:
    v = np.array([math.cos(theta), math.sin(theta)])
    return np.outer(v, v)


def _compensator(qwp1, hwp, qwp2):
    # light traverses qwp1, then hwp, then qwp2
    return quarter_wave_plate(qwp2) @ half_wave_plate(hwp) @ quarter_wave_plate(qwp1)


def _on_arm(u, arm):
    if arm == "A":
        return np.kron(u, np.eye(2))
    if arm == "B":
        return np.kron(np.eye(2), u)
    raise ValueError(f"arm must be 'A' or 'B', got {arm!r}")


def compensate_phase(state, qwp1: float, hwp: float, qwp2: float, arm: str = "B") -> TwoQubitState:
    """Apply a QWP-HWP-QWP compensator to one photon of the pair."""
    u = _on_arm(_compensator(qwp1, hwp, qwp2), arm)
    rho = as_density_matrix(state)
    out = u @ rho @ u.conj().T
    return TwoQubitState(0.5 * (out + out.conj().T), validate=isinstance(state, TwoQubitState))


def search_compensation(state, target=None, arm="B", grid_step=math.radians(7.5)):
    """Find compensator angles mapping ``state`` onto the pure ``target``.

    A coarse grid over the three plate angles in [0, pi) seeds a Nelder-Mead
    refinement. Returns ``((qwp1, hwp, qwp2), fidelity)``.
    """
    rho = as_density_matrix(state)
    tgt = singlet().rho if target is None else as_density_matrix(target)
    lam, vecs = np.linalg.eigh(tgt)
    phi = vecs[:, -1]

    def fid(angles):
        u = _on_arm(_compensator(*angles), arm)
        w = u.conj().T @ phi
        return float(np.real(w.conj() @ rho @ w))

    grid = np.arange(0.0, math.pi, grid_step)
    q = np.stack([quarter_wave_plate(t) for t in grid])
    h = np.stack([half_wave_plate(t) for t in grid])
    # all compensators U[k, j, i] = Q(k) H(j) Q(i) at once
    u = np.einsum("kab,jbc,icd->kjiad", q, h, q).reshape(-1, 2, 2)
    eye = np.eye(2)
    if arm == "A":
        full = np.einsum("nab,cd->nacbd", u, eye).reshape(-1, 4, 4)
    elif arm == "B":
        full = np.einsum("ab,ncd->nacbd", eye, u).reshape(-1, 4, 4)
    else:
        raise ValueError(f"arm must be 'A' or 'B', got {arm!r}")
    w = np.einsum("nba,b->na", full.conj(), phi)
    f = np.real(np.einsum("na,ab,nb->n", w.conj(), rho, w))
    k, j, i = np.unravel_index(int(np.argmax(f)), (grid.size,) * 3)
    start = np.array([grid[i], grid[j], grid[k]])
    res = minimize(lambda a: -fid(a), start, method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000})
    best = res.x if -res.fun >= f.max() else start
    return tuple(float(a) % math.pi for a in best), fid(best)


# -- polarizer projections ---------------------------------------------------


@dataclass(frozen=True)
class AnalyzerSetting:
    theta_a: float
    theta_b: float

    def __post_init__(self):
        object.__setattr__(self, "theta_a", float(self.theta_a) % math.pi)
        object.__setattr__(self, "theta_b", float(self.theta_b) % math.pi)


@dataclass(frozen=True)
class ChshSettings:
    theta_a: float = 0.0
    theta_a_prime: float = math.pi / 4
    theta_b: float = math.pi / 8
    theta_b_prime: float = 3 * math.pi / 8

    @classmethod
    def canonical(cls):
        return cls()


def _joint_probability(rho, theta_a, theta_b):
    """``<ab| rho |ab>`` for linear analyzers, broadcasting over angle arrays."""
    ta, tb = np.broadcast_arrays(np.asarray(theta_a, float), np.asarray(theta_b, float))
    ca, sa, cb, sb = np.cos(ta), np.sin(ta), np.cos(tb), np.sin(tb)
    v = np.stack([ca * cb, ca * sb, sa * cb, sa * sb], axis=-1)
    return np.real(np.einsum("...i,ij,...j->...", v, rho, v))


def coincidence_probability(state, setting: AnalyzerSetting) -> float:
    """Probability that both photons pass polarizers at ``setting``."""
    return float(_joint_probability(as_density_matrix(state), setting.theta_a, setting.theta_b))


def fringe_scan(state, theta_a, theta_b_list, pairs_per_point, seed=None):
    """Poisson-sampled coincidence counts while rotating analyzer B.

    Returns a list of ``(theta_b, count)``.
    """
    check_int(pairs_per_point, "pairs_per_point", minimum=1)
    rng = check_rng(seed)
    tb = np.asarray(theta_b_list, dtype=float)
    mean = pairs_per_point * np.clip(_joint_probability(as_density_matrix(state), theta_a, tb), 0, None)
    counts = rng.poisson(mean)
    return list(zip(tb.tolist(), counts.tolist()))


def write_fringe_csv(scan, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["theta_b_rad", "counts"])
        writer.writerows(scan)


def _fringe_design(theta):
    return np.column_stack([np.ones_like(theta), np.cos(2 * theta), np.sin(2 * theta)])


class FringeFitter(BaseEstimator):
    """Fit ``a sin^2(theta - phi) + b`` to a coincidence fringe.

    The model is linear in ``(1, cos 2theta, sin 2theta)`` so the fit is an
    ordinary least-squares solve. Visibility ``a / (a + 2b)`` gets a standard
    error from ``n_resamples`` Poisson resamples of the observed counts, each
    drawn from its own child of ``random_state`` so the result is independent
    of evaluation order. ``n_resamples=0`` skips the error estimate (sigma 0).

    Attributes
    ----------
    amplitude_, offset_, phase_ : float
        ``a``, ``b`` and ``phi`` (radians, in [0, pi)).
    visibility_, visibility_sigma_ : float
    """

    def __init__(self, n_resamples=1000, random_state=0):
        self.n_resamples = n_resamples
        self.random_state = random_state

    @staticmethod
    def _solve(design, counts):
        coef, *_ = np.linalg.lstsq(design, counts, rcond=None)
        return coef

    def fit(self, X, y):
        theta, counts = check_xy(X, y, min_points=4, name="fringe")
        design = _fringe_design(theta)
        if np.linalg.matrix_rank(design) < 3:
            raise ValueError("fringe angles do not constrain a sinusoid (need >= 3 distinct angles mod pi)")
        c0, c1, c2 = (float(c) for c in self._solve(design, counts))
        half_amp = math.hypot(c1, c2)
        noise = 3.0 * math.sqrt(2.0 * max(c0, 0.0) / theta.size)
        if c0 <= 0 or half_amp <= max(noise, 1e-12 * abs(c0)):
            raise DegenerateFitError("fringe amplitude is not distinguishable from noise")

        self.amplitude_ = 2.0 * half_amp
        self.offset_ = c0 - half_amp
        self.phase_ = (0.5 * math.atan2(-c2, -c1)) % math.pi
        self.visibility_ = half_amp / c0

        m = check_int(self.n_resamples, "n_resamples", minimum=0)
        if m == 0:
            self.visibility_sigma_ = 0.0
        else:
            lam = np.clip(counts, 0, None)
            draws = np.stack([np.random.default_rng(s).poisson(lam) for s in spawn_seeds(self.random_state, m)])
            coef = self._solve(design, draws.T.astype(float))
            with np.errstate(divide="ignore", invalid="ignore"):
                vis = np.hypot(coef[1], coef[2]) / coef[0]
            vis = vis[np.isfinite(vis)]
            self.visibility_sigma_ = float(np.std(vis, ddof=1)) if vis.size > 1 else float("nan")
        return self

    def predict(self, X):
        check_is_fitted(self, "visibility_")
        theta = np.asarray(X, dtype=float)
        return self.amplitude_ * np.sin(theta - self.phase_) ** 2 + self.offset_


def fit_fringe(data, n_resamples=1000, seed=0) -> dict:
    """Functional wrapper over :class:`FringeFitter` for ``[(angle, count), ...]``."""
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ValueError("data must be a sequence of (angle, count) pairs")
    est = FringeFitter(n_resamples=n_resamples, random_state=seed).fit(data[:, 0], data[:, 1])
    return {
        "amplitude": est.amplitude_,
        "offset": est.offset_,
        "phase": est.phase_,
        "visibility": est.visibility_,
        "visibility_sigma": est.visibility_sigma_,
    }


# -- CHSH --------------------------------------------------------------------


def _outcome_probabilities(rho, theta_a, theta_b):
    """Joint probabilities for (a, b), (a_perp, b_perp), (a, b_perp), (a_perp, b)."""
    ap, bp = theta_a + math.pi / 2, theta_b + math.pi / 2
    return np.array([
        _joint_probability(rho, theta_a, theta_b),
        _joint_probability(rho, ap, bp),
        _joint_probability(rho, theta_a, bp),
        _joint_probability(rho, ap, theta_b),
    ])


def _correlation_from_counts(n):
    total = n[..., 0] + n[..., 1] + n[..., 2] + n[..., 3]
    if np.any(total == 0):
        raise ZeroDivisionError("correlation undefined: all four outcome rates are zero")
    return (n[..., 0] + n[..., 1] - n[..., 2] - n[..., 3]) / total


def correlation_e(state, theta_a: float, theta_b: float) -> float:
    p = _outcome_probabilities(as_density_matrix(state), theta_a, theta_b)
    return float(_correlation_from_counts(p))


def _chsh_pairs(settings):
    s = settings
    return [
        (s.theta_a, s.theta_b),
        (s.theta_a, s.theta_b_prime),
        (s.theta_a_prime, s.theta_b),
        (s.theta_a_prime, s.theta_b_prime),
    ]


def _combine(e):
    # S = |E(a,b) - E(a,b') + E(a',b) + E(a',b')|; this sign pattern puts the
    # singlet at 2*sqrt(2) for the canonical angles
    return np.abs(e[..., 0] - e[..., 1] + e[..., 2] + e[..., 3])


def chsh_value(state, settings: ChshSettings | None = None) -> float:
    """Bell-CHSH parameter ``S`` of ``state`` at the given analyzer settings."""
    settings = settings or ChshSettings.canonical()
    rho = as_density_matrix(state)
    e = np.array([correlation_e(rho, a, b) for a, b in _chsh_pairs(settings)])
    return float(_combine(e))


def chsh_violation_sigmas(s: float, sigma: float) -> float:
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma!r}")
    return (s - 2.0) / sigma


def chsh_measurement(state, settings=None, pairs_per_setting=10_000, seed=None, n_resamples=1000):
    """Simulate the 16 coincidence rates of a CHSH run and estimate ``S`` and its error.

    Returns ``{"S_expected", "S_measured", "sigma"}``; ``sigma`` is the
    standard deviation of ``S`` over Poisson resamples of the simulated counts.
    """
    settings = settings or ChshSettings.canonical()
    check_int(pairs_per_setting, "pairs_per_setting", minimum=1)
    check_int(n_resamples, "n_resamples", minimum=2)
    rho = as_density_matrix(state)
    seeds = np.random.SeedSequence(seed).spawn(2)
    p = np.stack([_outcome_probabilities(rho, a, b) for a, b in _chsh_pairs(settings)])
    counts = np.random.default_rng(seeds[0]).poisson(pairs_per_setting * np.clip(p, 0, None))
    s_meas = float(_combine(_correlation_from_counts(counts.astype(float))))
    draws = np.stack([
        np.random.default_rng(child).poisson(counts) for child in seeds[1].spawn(n_resamples)
    ]).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        total = draws.sum(axis=-1)
        e = (draws[..., 0] + draws[..., 1] - draws[..., 2] - draws[..., 3]) / total
    s = _combine(e)
    s = s[np.isfinite(s)]
    return {
        "S_expected": chsh_value(rho, settings),
        "S_measured": s_meas,
        "sigma": float(np.std(s, ddof=1)),
    }


def chsh_report(s, sigma, settings=None) -> dict:
    settings = settings or ChshSettings.canonical()
    return {
        "S": float(s),
        "sigma": float(sigma),
        "sigmas_violation": chsh_violation_sigmas(s, sigma) if sigma > 0 else None,
        "settings": asdict(settings),
    }


def write_chsh_json(report: dict, path):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
