"""Two-qubit polarization state tomography from 16 projective coincidence counts.

Reconstruction proceeds in two steps: a linear inversion in the Pauli basis
(fast, may be unphysical) and a Poisson maximum-likelihood fit over the
Cholesky-style parameterization ``rho = T^dagger T / Tr(T^dagger T)`` with
``T`` lower triangular.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_int, check_rng, spawn_seeds
from .exceptions import ConvergenceWarning
from .polarization import TwoQubitState, as_density_matrix

__all__ = [
    "REFERENCE_RHO",
    "REFERENCE_FIDELITY",
    "SINGLET_VECTOR",
    "MLETomography",
    "ProjectionSetting",
    "TomographyData",
    "concurrence",
    "fidelity",
    "fidelity_conventions",
    "fidelity_uncertainty",
    "linear_reconstruct",
    "log_likelihood",
    "mle_reconstruct",
    "project_to_physical",
    "random_density_matrix",
    "projector_gram",
    "read_rho_json",
    "simulate_counts",
    "standard_settings",
    "state_fidelity",
    "state_metrics",
    "write_rho_csv",
    "write_rho_json",
]

_S2 = 1 / math.sqrt(2)
SINGLE_QUBIT_STATES = {
    "H": np.array([1, 0], dtype=complex),
    "V": np.array([0, 1], dtype=complex),
    "D": np.array([_S2, _S2], dtype=complex),
    "A": np.array([_S2, -_S2], dtype=complex),
    "R": np.array([_S2, -1j * _S2], dtype=complex),
    "L": np.array([_S2, 1j * _S2], dtype=complex),
}

# tomographically complete sequence reachable with QWP + HWP + polarizer per arm
STANDARD_LABELS = (
    "HH", "HV", "VV", "VH", "RH", "RV", "DV", "DH",
    "DR", "DD", "RD", "HD", "VD", "VL", "HL", "RL",
)

SINGLET_VECTOR = np.array([0, _S2, -_S2, 0], dtype=complex)

# reconstructed matrix of the reference source, as printed (rounded, trace 1.0001)
REFERENCE_RHO = np.array([
    [0.0104, -0.0323 - 0.0012j, -0.0012 - 0.0082j, -0.0019 + 0.0073j],
    [-0.0323 + 0.0012j, 0.5055, -0.4269 + 0.0331j, -0.0113 - 0.0199j],
    [-0.0012 + 0.0082j, -0.4269 - 0.0331j, 0.4762, 0.0162 - 0.0047j],
    [-0.0019 - 0.0073j, -0.0113 + 0.0199j, 0.0162 + 0.0047j, 0.008],
])
REFERENCE_FIDELITY = 0.952

_PAULI = [
    np.eye(2, dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
]
PAULI_BASIS = np.array([np.kron(a, b) for a in _PAULI for b in _PAULI])
_SIGMA_YY = np.kron(_PAULI[2], _PAULI[2])


@dataclass(frozen=True, eq=False)
class ProjectionSetting:
    label: str
    projector_state: np.ndarray = field(repr=False)

    def __post_init__(self):
        psi = np.asarray(self.projector_state, dtype=complex).ravel()
        if psi.shape != (4,):
            raise ValueError("projector_state must have 4 components")
        if abs(np.linalg.norm(psi) - 1) > 1e-12:
            raise ValueError(f"projector state for {self.label!r} is not normalized")
        psi.setflags(write=False)
        object.__setattr__(self, "projector_state", psi)

    @classmethod
    def from_label(cls, label: str):
        """Product projector from a two-letter label over ``H V D A R L``."""
        label = label.strip().upper()
        if len(label) != 2 or any(ch not in SINGLE_QUBIT_STATES for ch in label):
            raise ValueError(f"unknown projection label {label!r}")
        return cls(label, np.kron(SINGLE_QUBIT_STATES[label[0]], SINGLE_QUBIT_STATES[label[1]]))


def standard_settings() -> list[ProjectionSetting]:
    return [ProjectionSetting.from_label(lbl) for lbl in STANDARD_LABELS]


def projector_gram(settings) -> np.ndarray:
    """``G[i, j] = Tr(P_i P_j) = |<psi_i|psi_j>|^2``."""
    psi = np.array([s.projector_state for s in settings])
    return np.abs(psi.conj() @ psi.T) ** 2


@dataclass(frozen=True)
class TomographyData:
    records: tuple = ()
    total_per_setting_hint: Optional[int] = None

    def __post_init__(self):
        recs = tuple((s, c) for s, c in self.records)
        for s, c in recs:
            if not c >= 0:
                raise ValueError(f"negative count {c!r} for setting {s.label}")
        object.__setattr__(self, "records", recs)

    def __len__(self):
        return len(self.records)

    @property
    def labels(self) -> list[str]:
        return [s.label for s, _ in self.records]

    @property
    def counts(self) -> np.ndarray:
        return np.array([c for _, c in self.records], dtype=float)

    @property
    def states(self) -> np.ndarray:
        return np.array([s.projector_state for s, _ in self.records])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["setting_label", "count"])
            for s, c in self.records:
                writer.writerow([s.label, int(c) if float(c).is_integer() else repr(float(c))])

    @classmethod
    def from_csv(cls, path):
        records = []
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row or not "".join(row).strip():
                    continue
                if lineno == 1 and row[0].strip().lower() == "setting_label":
                    continue
                if len(row) != 2:
                    raise ValueError(f"{path}:{lineno}: expected 'setting_label,count'")
                try:
                    count = float(row[1])
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: count {row[1]!r} is not a number") from None
                if count < 0 or not math.isfinite(count):
                    raise ValueError(f"{path}:{lineno}: count must be a finite non-negative number")
                try:
                    setting = ProjectionSetting.from_label(row[0])
                except ValueError as exc:
                    raise ValueError(f"{path}:{lineno}: {exc}") from None
                records.append((setting, int(count) if count.is_integer() else count))
        return cls(tuple(records))


def _expected_probabilities(rho, states):
    return np.real(np.einsum("ia,ab,ib->i", states.conj(), rho, states))


def simulate_counts(rho, settings=None, n_per_setting=10_000, seed=None, *, noiseless=False) -> TomographyData:
    """Poisson coincidence counts with mean ``n_per_setting * <psi|rho|psi>``.

    ``noiseless=True`` returns the (non-integer) expected counts instead.
    """
    check_int(n_per_setting, "n_per_setting", minimum=1)
    settings = standard_settings() if settings is None else list(settings)
    states = np.array([s.projector_state for s in settings])
    mean = n_per_setting * np.clip(_expected_probabilities(as_density_matrix(rho), states), 0, None)
    if noiseless:
        counts = mean.tolist()
    else:
        counts = check_rng(seed).poisson(mean).tolist()
    return TomographyData(tuple(zip(settings, counts)), n_per_setting)


def _check_complete(data: TomographyData):
    if len(set(data.labels)) < 16:
        raise ValueError(f"tomography needs 16 distinct projection settings, got {len(set(data.labels))}")


def linear_reconstruct(data: TomographyData) -> np.ndarray:
    """Least-squares inversion of the counts in the two-qubit Pauli basis.

    Returns a Hermitian, unit-trace matrix that may have negative eigenvalues.
    """
    _check_complete(data)
    states = data.states
    # design[i, k] = <psi_i| sigma_k |psi_i>
    design = np.real(np.einsum("ia,kab,ib->ik", states.conj(), PAULI_BASIS, states))
    if np.linalg.cond(design) > 1e12:
        raise np.linalg.LinAlgError("projection settings are not tomographically complete")
    coef, *_ = np.linalg.lstsq(design, data.counts, rcond=None)
    if not coef[0] > 0:
        raise ValueError("counts carry no normalization (all zero?)")
    rho = np.einsum("k,kab->ab", coef, PAULI_BASIS) / (4 * coef[0])
    return 0.5 * (rho + rho.conj().T)


def project_to_physical(rho) -> np.ndarray:
    """Closest density matrix with non-negative spectrum (eigenvalue redistribution)."""
    rho = np.asarray(rho, dtype=complex)
    rho = 0.5 * (rho + rho.conj().T)
    lam, vec = np.linalg.eigh(rho / np.trace(rho).real)
    lam = lam[::-1].copy()
    vec = vec[:, ::-1]
    d = lam.size
    i, acc = d, 0.0
    while i > 0 and lam[i - 1] + acc / i < 0:
        acc += lam[i - 1]
        lam[i - 1] = 0.0
        i -= 1
    lam[:i] += acc / i
    return (vec * lam) @ vec.conj().T


def log_likelihood(rho_scaled, data: TomographyData, floor=1e-12) -> float:
    """Poisson log-likelihood (without the ``log n!`` term) of expected counts ``<psi|M|psi>``."""
    mu = _expected_probabilities(np.asarray(rho_scaled), data.states)
    n = data.counts
    return float(np.sum(n * np.log(np.maximum(mu, floor)) - mu))


_TRIL = np.tril_indices(4, -1)


def _unpack(t):
    tm = np.zeros((4, 4), dtype=complex)
    tm[np.diag_indices(4)] = t[:4]
    tm[_TRIL] = t[4:10] + 1j * t[10:16]
    return tm


def _pack(tm):
    return np.concatenate([np.real(np.diag(tm)), np.real(tm[_TRIL]), np.imag(tm[_TRIL])])


def _cholesky_params(m):
    """Parameters of lower-triangular ``T`` with ``T^dagger T = m`` (m positive definite)."""
    j = np.eye(4)[::-1]
    low = np.linalg.cholesky(j @ m @ j)
    return _pack(j @ low.conj().T @ j)


class MLETomography(BaseEstimator):
    """Poisson maximum-likelihood state reconstruction.

    The expected count for projector ``|psi_i>`` is ``<psi_i| T^dagger T |psi_i>``;
    the trace of ``T^dagger T`` plays the role of the shared per-setting scale,
    so the 16 real entries of ``T`` cover both the state and the scale.
    The search starts from the linear estimate projected to the physical
    cone and runs L-BFGS-B with an analytic gradient until the per-iteration
    gain in log-likelihood drops below ``tol`` or ``max_iter`` is hit.

    Parameters
    ----------
    tol : float
        Absolute log-likelihood improvement at which to stop.
    max_iter : int
    floor : float
        Lower bound on predicted means inside the logarithm.
    max_restarts : int
        Fresh L-BFGS-B starts allowed after a stalled line search.

    Attributes
    ----------
    rho_ : ndarray of shape (4, 4)
    state_ : TwoQubitState
    scale_ : float
        Fitted pairs per setting.
    log_likelihood_ : float
    initial_log_likelihood_ : float
        Log-likelihood of the projected linear estimate at its best scale.
    n_iter_ : int
    converged_ : bool
    """

    def __init__(self, tol=1e-10, max_iter=100_000, floor=1e-12, max_restarts=5):
        self.tol = tol
        self.max_iter = max_iter
        self.floor = floor
        self.max_restarts = max_restarts

    def fit(self, X, y=None):
        """Fit on a :class:`TomographyData` or on (projector states, counts)."""
        data = X if isinstance(X, TomographyData) else _as_data(X, y)
        _check_complete(data)
        states, n = data.states, data.counts
        floor = self.floor

        rho0 = project_to_physical(linear_reconstruct(data))
        p0 = _expected_probabilities(rho0, states)
        scale0 = n.sum() / max(p0.sum(), floor)
        self.initial_log_likelihood_ = log_likelihood(scale0 * rho0, data, floor)

        def nll(t):
            tm = _unpack(t)
            v = states @ tm.T  # v[i] = T psi_i
            mu = np.sum(np.abs(v) ** 2, axis=1)
            safe = np.maximum(mu, floor)
            f = np.sum(mu - n * np.log(safe))
            w = 1.0 - np.where(mu > floor, n / safe, 0.0)
            g = 2.0 * np.einsum("i,ij,ik->jk", w, v, states.conj())
            grad = np.concatenate([np.real(np.diag(g)), np.real(g[_TRIL]), np.imag(g[_TRIL])])
            return f, grad

        x = _cholesky_params(scale0 * (0.999 * rho0 + 0.001 * np.eye(4) / 4))
        f_prev, _ = nll(x)
        ftol = self.tol / max(1.0, abs(f_prev))
        self.n_iter_, self.converged_ = 0, False
        # L-BFGS-B can stall in its line search close to the optimum; restart
        # from the stalled point and accept once a restart gains less than tol
        for _ in range(self.max_restarts + 1):
            res = minimize(
                nll, x, jac=True, method="L-BFGS-B",
                options={
                    "maxiter": max(1, self.max_iter - self.n_iter_),
                    "maxfun": 10 * self.max_iter,
                    "ftol": ftol,
                    "gtol": 1e-12,
                },
            )
            self.n_iter_ += int(res.nit)
            gain = f_prev - res.fun
            if res.fun <= f_prev:
                x, f_prev = res.x, res.fun
            if res.success or gain < self.tol:
                self.converged_ = True
                break
            if self.n_iter_ >= self.max_iter:
                break
        if not self.converged_:
            warnings.warn(
                f"MLE tomography did not converge after {self.n_iter_} iterations: {res.message}",
                ConvergenceWarning,
                stacklevel=2,
            )

        tm = _unpack(x)
        m = tm.conj().T @ tm
        self.scale_ = float(np.trace(m).real)
        rho = m / self.scale_
        rho = 0.5 * (rho + rho.conj().T)
        self.rho_ = rho
        self.state_ = TwoQubitState(rho)
        self.log_likelihood_ = log_likelihood(m, data, floor)
        return self

    def predict(self, X):
        """Expected counts for projector states ``X`` (shape ``(n, 4)``) or a TomographyData."""
        check_is_fitted(self, "rho_")
        states = X.states if isinstance(X, TomographyData) else np.asarray(X, dtype=complex)
        return self.scale_ * _expected_probabilities(self.rho_, states)


def _as_data(states, counts):
    states = np.asarray(states, dtype=complex)
    counts = np.asarray(counts, dtype=float)
    if states.ndim != 2 or states.shape[1] != 4 or counts.shape != (states.shape[0],):
        raise ValueError("expected projector states of shape (n, 4) and n counts")
    recs = tuple((ProjectionSetting(f"P{i}", s), c) for i, (s, c) in enumerate(zip(states, counts)))
    return TomographyData(recs)


def mle_reconstruct(data: TomographyData, **params) -> TwoQubitState:
    return MLETomography(**params).fit(data).state_


def fidelity(rho, target) -> float:
    """``<phi| rho |phi>`` for a normalized pure target (vector or pure density matrix)."""
    rho = as_density_matrix(rho)
    tgt = np.asarray(target.rho if isinstance(target, TwoQubitState) else target, dtype=complex)
    if tgt.ndim == 1:
        if abs(np.linalg.norm(tgt) - 1) > 1e-12:
            raise ValueError("target state must be normalized")
        return float(np.real(tgt.conj() @ rho @ tgt))
    return float(np.real(np.trace(rho @ tgt)))


def state_fidelity(rho, sigma) -> float:
    """Uhlmann fidelity ``(Tr sqrt(sqrt(rho) sigma sqrt(rho)))**2`` between two density matrices."""
    rho = as_density_matrix(rho)
    sigma = as_density_matrix(sigma)
    lam, vec = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    root = (vec * np.sqrt(np.clip(lam, 0, None))) @ vec.conj().T
    inner = np.linalg.eigvalsh(root @ sigma @ root)
    return float(np.sum(np.sqrt(np.clip(inner, 0, None))) ** 2)


def concurrence(rho) -> float:
    """Wootters concurrence."""
    rho = as_density_matrix(rho)
    flipped = _SIGMA_YY @ rho.conj() @ _SIGMA_YY
    ev = np.linalg.eigvals(rho @ flipped)
    lam = np.sort(np.sqrt(np.clip(np.real(ev), 0, None)))[::-1]
    return float(max(0.0, lam[0] - lam[1] - lam[2] - lam[3]))


def state_metrics(rho) -> dict:
    rho = as_density_matrix(rho)
    return {
        "purity": float(np.real(np.trace(rho @ rho))),
        "eigenvalues": np.sort(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)))[::-1].tolist(),
        "concurrence": concurrence(rho),
    }


def fidelity_conventions(rho, target=SINGLET_VECTOR) -> dict:
    """Fidelity of ``rho`` under several conventions, side by side.

    ``fidelity`` is ``<phi|rho|phi>``; ``sqrt_fidelity`` its square root
    (the root-fidelity convention); ``trace_normalized`` divides by
    ``Tr(rho)`` first; ``phase_optimized`` maximizes over the relative phase
    of the ``|HV>, |VH>`` components of the singlet target.
    """
    rho = as_density_matrix(rho)
    f = fidelity(rho, target)
    tr = float(np.trace(rho).real)
    phase_opt = 0.5 * float(np.real(rho[1, 1] + rho[2, 2])) + float(abs(rho[1, 2]))
    return {
        "fidelity": f,
        "sqrt_fidelity": math.sqrt(max(f, 0.0)),
        "trace_normalized": f / tr,
        "phase_optimized": phase_opt,
    }


def fidelity_uncertainty(data: TomographyData, target=SINGLET_VECTOR, n_resamples=500, seed=None, **params):
    """Standard deviation of the MLE fidelity over Poisson resamples of the counts."""
    check_int(n_resamples, "n_resamples", minimum=2)
    n = data.counts
    settings = [s for s, _ in data.records]
    values = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        for child in spawn_seeds(seed, n_resamples):
            draw = np.random.default_rng(child).poisson(np.clip(n, 0, None))
            rep = TomographyData(tuple(zip(settings, draw.tolist())))
            values.append(fidelity(MLETomography(**params).fit(rep).rho_, target))
    return float(np.std(values, ddof=1))


def write_rho_json(rho, path, extra=None):
    rho = as_density_matrix(rho)
    payload = {"basis": ["HH", "HV", "VH", "VV"],
               "rho": [[[float(z.real), float(z.imag)] for z in row] for row in rho]}
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def read_rho_json(path) -> np.ndarray:
    with open(path) as fh:
        payload = json.load(fh)
    raw = payload["rho"] if isinstance(payload, dict) else payload
    arr = np.asarray(raw, dtype=float)
    if arr.shape != (4, 4, 2):
        raise ValueError(f"{path}: rho must be a 4x4 array of [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


def write_rho_csv(rho, real_path, imag_path):
    rho = as_density_matrix(rho)
    labels = ["HH", "HV", "VH", "VV"]
    for part, path in ((rho.real, real_path), (rho.imag, imag_path)):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([""] + labels)
            for lbl, row in zip(labels, part):
                writer.writerow([lbl] + [repr(float(x)) for x in row])


def random_density_matrix(rng, rank=None) -> np.ndarray:
    """Random state from the induced (Ginibre) measure; full rank by default."""
    rng = check_rng(rng)
    k = 4 if rank is None else rank
    g = rng.normal(size=(4, k)) + 1j * rng.normal(size=(4, k))
    m = g @ g.conj().T
    return m / np.trace(m).real

