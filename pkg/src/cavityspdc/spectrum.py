"""Cavity output mode comb and its aggregate spectral statistics.

The cavity emits a degenerate pair at the half-pump frequency plus, for every
order ``m``, four non-degenerate branches where one photon sits on an
H-polarized (or V-polarized) cavity resonance ``±m*FSR`` away from the
degenerate frequency. All frequencies are detunings in MHz.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_int, check_positive

__all__ = [
    "Branch",
    "CavityConfig",
    "ModeComb",
    "ModePair",
    "build_comb",
    "cavity_linewidth",
    "mode_weight",
    "multimode_ratio",
    "round_trip_time",
]

_OMEGA_REFERENCES = ("h", "v", "mean")


@dataclass(frozen=True)
class CavityConfig:
    """Cavity parameters.

    ``omega_reference`` selects which FSR sets the walk-off period in the
    mode weight: ``"h"`` (default), ``"v"`` or ``"mean"``.
    """

    fsr_h: float = 1468.0  # MHz
    fsr_v: float = 1481.0  # MHz
    finesse: float = 100.0
    phase_matching_bandwidth: float = 300.0  # GHz
    mode_count_n: int = 100
    omega_reference: str = "h"
    round_trip_hint: float = 670.0  # ps, informational
    double_resonance_temp: float = 40.356  # degC, inert

    def __post_init__(self):
        check_positive(self.fsr_h, "fsr_h")
        check_positive(self.fsr_v, "fsr_v")
        check_positive(self.finesse, "finesse")
        if self.finesse <= 1:
            raise ValueError(f"finesse must be > 1, got {self.finesse!r}")
        check_positive(self.phase_matching_bandwidth, "phase_matching_bandwidth")
        # N = 0 is accepted: it yields a comb holding only the degenerate pair
        check_int(self.mode_count_n, "mode_count_n", minimum=0)
        if self.omega_reference not in _OMEGA_REFERENCES:
            raise ValueError(
                f"omega_reference must be one of {_OMEGA_REFERENCES}, "
                f"got {self.omega_reference!r}"
            )

    @property
    def delta_omega(self) -> float:
        """FSR mismatch ``fsr_h - fsr_v`` in MHz (sign is irrelevant to the weights)."""
        return self.fsr_h - self.fsr_v

    @property
    def omega(self) -> float:
        if self.omega_reference == "h":
            return self.fsr_h
        if self.omega_reference == "v":
            return self.fsr_v
        return 0.5 * (self.fsr_h + self.fsr_v)

    @property
    def degenerate_offset(self) -> float:
        return 0.0


class Branch(str, enum.Enum):
    DEGENERATE = "degenerate"
    H_COMB_PLUS = "H_comb_plus"
    H_COMB_MINUS = "H_comb_minus"
    V_COMB_PLUS = "V_comb_plus"
    V_COMB_MINUS = "V_comb_minus"


@dataclass(frozen=True)
class ModePair:
    index_m: int
    offset_signal: float  # MHz from the degenerate frequency
    branch: Branch
    relative_weight: float

    @property
    def offset_idler(self) -> float:
        return -self.offset_signal


@dataclass(frozen=True)
class ModeComb:
    config: CavityConfig
    pairs: tuple[ModePair, ...] = field(repr=False)

    def __len__(self):
        return len(self.pairs)

    @property
    def nondegenerate(self) -> tuple[ModePair, ...]:
        return tuple(p for p in self.pairs if p.branch is not Branch.DEGENERATE)

    def arrays(self):
        """Return ``(m, offset_signal, relative_weight)`` arrays over non-degenerate pairs."""
        nd = self.nondegenerate
        m = np.fromiter((p.index_m for p in nd), dtype=int, count=len(nd))
        off = np.fromiter((p.offset_signal for p in nd), dtype=float, count=len(nd))
        w = np.fromiter((p.relative_weight for p in nd), dtype=float, count=len(nd))
        return m, off, w

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["m", "branch", "offset_signal_MHz", "relative_weight"])
            for p in self.pairs:
                writer.writerow(
                    [p.index_m, p.branch.value, repr(p.offset_signal), repr(p.relative_weight)]
                )


def mode_weight(m, cfg: CavityConfig):
    """Relative weight ``chi_m / chi_0`` of order ``m`` (all four branches together).

    ``m`` may be an integer or an integer array; every entry must be >= 1.
    The degenerate weight is 1 by normalization and is not produced here.
    """
    m_arr = np.asarray(m)
    if not np.issubdtype(m_arr.dtype, np.integer):
        raise ValueError("m must be integer-valued")
    if np.any(m_arr < 1):
        raise ValueError("m must be >= 1; the degenerate weight is 1 by normalization")
    s = np.sin(np.pi * m_arr * cfg.delta_omega / cfg.omega)
    w = 4.0 / (1.0 + (4.0 * cfg.finesse**2 / np.pi**2) * s * s)
    return float(w) if w.ndim == 0 else w


def build_comb(cfg: CavityConfig) -> ModeComb:
    pairs = [ModePair(0, 0.0, Branch.DEGENERATE, 1.0)]
    if cfg.mode_count_n:
        weights = mode_weight(np.arange(1, cfg.mode_count_n + 1), cfg)
        for m, w in enumerate(weights.tolist(), start=1):
            share = w / 4.0
            pairs += [
                ModePair(m, m * cfg.fsr_h, Branch.H_COMB_PLUS, share),
                ModePair(m, -m * cfg.fsr_h, Branch.H_COMB_MINUS, share),
                ModePair(m, m * cfg.fsr_v, Branch.V_COMB_PLUS, share),
                ModePair(m, -m * cfg.fsr_v, Branch.V_COMB_MINUS, share),
            ]
    return ModeComb(cfg, tuple(pairs))


def multimode_ratio(comb: ModeComb) -> float:
    """Total non-degenerate weight relative to the degenerate pair."""
    return math.fsum(p.relative_weight for p in comb.pairs if p.branch is not Branch.DEGENERATE)


def cavity_linewidth(cfg: CavityConfig) -> float:
    """Resonance linewidth in MHz (H-mode FSR over finesse)."""
    return cfg.fsr_h / cfg.finesse


def round_trip_time(cfg: CavityConfig) -> float:
    """Round-trip time in ps from the mean of the two FSRs."""
    return 1e6 / (0.5 * (cfg.fsr_h + cfg.fsr_v))
