"""Fabry-Perot etalon filter chain.

Each etalon is an Airy filter centred ``detuning`` MHz from the degenerate
frequency. The chain transmission is the product over etalons. Lengths are in
mm, FSRs in GHz, detunings in MHz.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from ._validation import check_fraction, check_int, check_positive
from .exceptions import ConfigError
from .spectrum import ModeComb

__all__ = [
    "DEFAULT_PEAK_TRANSMITTANCE",
    "EtalonSpec",
    "EtalonStack",
    "design_stack",
    "etalon_fsr",
    "etalon_transmission",
    "filtered_ratio",
    "leakage_table",
    "reference_stack",
    "stack_transmission",
    "write_transmission_csv",
]

# five etalons sharing a measured 40 % total transmittance
DEFAULT_PEAK_TRANSMITTANCE = 0.4 ** (1 / 5)

SURVIVAL_MODES = ("single", "pair")


@dataclass(frozen=True)
class EtalonSpec:
    length: float  # mm
    refractive_index: float = 1.45
    surface_reflectivity: float = 0.9
    finesse_override: Optional[float] = 25.0
    peak_transmittance: float = DEFAULT_PEAK_TRANSMITTANCE
    detuning: float = 0.0  # MHz

    def __post_init__(self):
        check_positive(self.length, "length")
        if not self.refractive_index >= 1:
            raise ValueError(f"refractive_index must be >= 1, got {self.refractive_index!r}")
        check_fraction(self.surface_reflectivity, "surface_reflectivity", low_open=True, high_open=True)
        check_fraction(self.peak_transmittance, "peak_transmittance", low_open=True)
        if self.finesse_override is not None:
            check_positive(self.finesse_override, "finesse_override")
        if not math.isfinite(self.detuning):
            raise ValueError("detuning must be finite")

    @property
    def effective_finesse(self) -> float:
        if self.finesse_override is not None:
            return float(self.finesse_override)
        r = self.surface_reflectivity
        return math.pi * math.sqrt(r) / (1.0 - r)

    @property
    def fsr(self) -> float:
        return etalon_fsr(self)


@dataclass(frozen=True)
class EtalonStack:
    etalons: tuple[EtalonSpec, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "etalons", tuple(self.etalons))

    def __len__(self):
        return len(self.etalons)

    def __iter__(self):
        return iter(self.etalons)

    @property
    def peak_transmission(self) -> float:
        return math.prod(e.peak_transmittance for e in self.etalons)

    @property
    def lengths(self) -> tuple[float, ...]:
        return tuple(e.length for e in self.etalons)

    def to_config(self, prefix="filter") -> dict[str, str]:
        """Flatten to ``{prefix}.etalon.{i}.{key}`` entries."""
        out = {}
        for i, e in enumerate(self.etalons):
            base = f"{prefix}.etalon.{i}."
            out[base + "length_mm"] = repr(e.length)
            out[base + "n"] = repr(e.refractive_index)
            out[base + "R"] = repr(e.surface_reflectivity)
            out[base + "finesse"] = "none" if e.finesse_override is None else repr(e.finesse_override)
            out[base + "peak_T"] = repr(e.peak_transmittance)
            out[base + "detuning_MHz"] = repr(e.detuning)
        return out

    @classmethod
    def from_config(cls, entries, prefix="filter"):
        """Inverse of :meth:`to_config`. Missing per-etalon keys take the defaults.

        Problems raise :class:`ConfigError` naming the offending key.
        """
        keymap = {
            "length_mm": "length",
            "n": "refractive_index",
            "R": "surface_reflectivity",
            "finesse": "finesse_override",
            "peak_T": "peak_transmittance",
            "detuning_MHz": "detuning",
        }
        per_index: dict[int, dict] = {}
        head = f"{prefix}.etalon."
        for key, raw in entries.items():
            if not key.startswith(head):
                continue
            idx, _, name = key[len(head):].partition(".")
            if not idx.isdigit() or name not in keymap:
                raise ConfigError(key, "unknown etalon key")
            if name == "finesse" and str(raw).strip().lower() == "none":
                value = None
            else:
                try:
                    value = float(raw)
                except ValueError:
                    raise ConfigError(key, f"cannot parse {raw!r} as float") from None
            per_index.setdefault(int(idx), {})[keymap[name]] = value
        for i in range(len(per_index)):
            if i not in per_index:
                raise ConfigError(f"{head}{i}", "etalon indices must be contiguous from 0")
        field_to_key = {v: k for k, v in keymap.items()}
        specs = []
        for i in range(len(per_index)):
            if "length" not in per_index[i]:
                raise ConfigError(f"{head}{i}.length_mm", "required")
            try:
                specs.append(EtalonSpec(**per_index[i]))
            except ValueError as exc:
                name = str(exc).split(" ", 1)[0]
                raise ConfigError(f"{head}{i}.{field_to_key.get(name, name)}", str(exc)) from None
        return cls(tuple(specs))


def reference_stack(**overrides) -> EtalonStack:
    """Two 5.4 mm, two 7.5 mm and one 2.1 mm etalon, all tuned to the degenerate line."""
    return EtalonStack(tuple(EtalonSpec(length=L, **overrides) for L in (5.4, 5.4, 7.5, 7.5, 2.1)))


def etalon_fsr(spec: EtalonSpec) -> float:
    """Free spectral range ``c / (2 n L)`` in GHz."""
    return SPEED_OF_LIGHT / (2.0 * spec.refractive_index * spec.length * 1e-3) / 1e9


def etalon_transmission(spec: EtalonSpec, delta):
    """Airy transmission at detuning ``delta`` (MHz, scalar or array)."""
    fsr_mhz = etalon_fsr(spec) * 1e3
    coef = (2.0 * spec.effective_finesse / math.pi) ** 2
    s = np.sin(np.pi * (np.asarray(delta, dtype=float) - spec.detuning) / fsr_mhz)
    t = spec.peak_transmittance / (1.0 + coef * s * s)
    return float(t) if t.ndim == 0 else t


def stack_transmission(stack: EtalonStack, delta):
    if not len(stack):
        raise ValueError("stack must contain at least one etalon")
    t = 1.0
    for spec in stack:
        t = t * etalon_transmission(spec, delta)
    return t


def _survival(comb, stack, survival):
    if survival not in SURVIVAL_MODES:
        raise ValueError(f"survival must be one of {SURVIVAL_MODES}, got {survival!r}")
    m, off, w = comb.arrays()
    if stack is None or not len(stack):
        return m, w, np.ones_like(w)
    t0 = stack_transmission(stack, 0.0)
    if t0 <= 0:
        raise ValueError("degenerate mode is blocked by the stack (T(0) = 0)")
    ts = stack_transmission(stack, off) / t0
    ti = stack_transmission(stack, -off) / t0
    if survival == "pair":
        factor = ts * ti
    else:
        factor = 0.5 * (ts + ti)
    return m, w, factor


def filtered_ratio(comb: ModeComb, stack: Optional[EtalonStack], survival: str = "single") -> float:
    """Non-degenerate to degenerate weight ratio after the filter chain.

    Each branch weight is scaled by its transmission relative to the
    degenerate pair. With ``survival="single"`` (default) a branch is scaled
    by the mean single-photon transmission of its two photons. With
    ``survival="pair"`` both photons must pass, ``T(s) T(i) / T(0)**2``,
    which suppresses far more strongly.

    ``stack=None`` or an empty stack bypasses filtering.
    """
    _, w, factor = _survival(comb, stack, survival)
    return math.fsum((w * factor).tolist())


def leakage_table(comb: ModeComb, stack: Optional[EtalonStack], survival: str = "single"):
    """Per-order leakage rows ``(m, unfiltered_weight, filtered_weight)``, summed over branches."""
    m, w, factor = _survival(comb, stack, survival)
    n = comb.config.mode_count_n
    raw = np.bincount(m, weights=w, minlength=n + 1)[1:]
    kept = np.bincount(m, weights=w * factor, minlength=n + 1)[1:]
    return [(i + 1, float(raw[i]), float(kept[i])) for i in range(n)]


def design_stack(
    comb: ModeComb,
    candidate_lengths,
    count: int,
    budget: float = 0.0,
    *,
    survival: str = "single",
    **etalon_kwargs,
) -> EtalonStack:
    """Exhaustive search over multisets of ``count`` candidate lengths.

    Returns the stack (lengths ascending, detunings 0) with the smallest
    filtered ratio whose peak transmission is at least ``budget``. Ties are
    broken by lexicographic length order. ``etalon_kwargs`` are forwarded to
    every :class:`EtalonSpec`.
    """
    check_int(count, "count", minimum=1)
    check_fraction(budget, "budget")
    lengths = sorted({float(x) for x in candidate_lengths})
    if not lengths:
        raise ValueError("candidate_lengths must be non-empty")
    etalon_kwargs = {**etalon_kwargs, "detuning": 0.0}
    specs = {L: EtalonSpec(length=L, **etalon_kwargs) for L in lengths}

    best_key, best = None, None
    for combo in itertools.combinations_with_replacement(lengths, count):
        stack = EtalonStack(tuple(specs[L] for L in combo))
        if stack.peak_transmission < budget:
            continue
        key = (filtered_ratio(comb, stack, survival), combo)
        if best_key is None or key < best_key:
            best_key, best = key, stack
    if best is None:
        raise ValueError(
            f"no stack of {count} etalons reaches peak transmission {budget}"
        )
    return best


def write_transmission_csv(stack: EtalonStack, path, span=None, points=2001):
    """Two-column ``detuning_MHz,T`` curve, by default over +/- one shortest-etalon FSR."""
    if span is None:
        span = min(e.fsr for e in stack) * 1e3
    delta = np.linspace(-span, span, points)
    t = stack_transmission(stack, delta)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["detuning_MHz", "T"])
        writer.writerows(zip(delta.tolist(), t.tolist()))

