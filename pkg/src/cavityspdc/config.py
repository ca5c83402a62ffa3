"""Flat key-value run configuration.

One ``section.key = value`` entry per line, ``#`` starts a comment. Units are
suffixed in key names. Anything not given falls back to the reference-setup
defaults, see ``configs/reference_setup.cfg``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .exceptions import ConfigError
from .filters import SURVIVAL_MODES, EtalonStack, reference_stack
from .spectrum import CavityConfig
from .timing import SourceConfig

__all__ = ["RunConfig", "load_config", "parse_config_text"]

# key -> (dataclass field, parser)
_CAVITY_KEYS = {
    "cavity.fsr_h_mhz": ("fsr_h", float),
    "cavity.fsr_v_mhz": ("fsr_v", float),
    "cavity.finesse": ("finesse", float),
    "cavity.phase_matching_bandwidth_ghz": ("phase_matching_bandwidth", float),
    "cavity.mode_count_n": ("mode_count_n", int),
    "cavity.omega_reference": ("omega_reference", str),
    "cavity.round_trip_hint_ps": ("round_trip_hint", float),
    "cavity.double_resonance_temp_c": ("double_resonance_temp", float),
}
_SOURCE_KEYS = {
    "source.pump_power_mw": ("pump_power", float),
    "source.rate_coefficient_per_s_mw": ("rate_coefficient", float),
    "source.linewidth_mhz": ("linewidth", float),
    "source.duty_cycle": ("duty_cycle", float),
    "source.detector_efficiency": ("detector_efficiency", float),
    "source.dark_rate_per_s": ("dark_rate", float),
    "source.digitizer_resolution_ns": ("digitizer_resolution", float),
    "source.coincidence_window_ns": ("coincidence_window", float),
    "source.lock_rate_hz": ("lock_rate", float),
}
_ETALON_FIELDS = {"length_mm", "n", "R", "finesse", "peak_T", "detuning_MHz"}


@dataclass(frozen=True)
class RunConfig:
    cavity: CavityConfig = field(default_factory=CavityConfig)
    stack: EtalonStack = field(default_factory=reference_stack)
    survival: str = "single"
    source: SourceConfig = field(default_factory=SourceConfig)
    seed: int = 2024
    output_dir: str = "out"

    @classmethod
    def from_entries(cls, entries: dict[str, str]) -> "RunConfig":
        for key in entries:
            if key in _CAVITY_KEYS or key in _SOURCE_KEYS:
                continue
            if key in ("filter.survival", "seeds.master", "output.dir"):
                continue
            if key.startswith("filter.etalon."):
                parts = key.split(".")
                if len(parts) == 4 and parts[2].isdigit() and parts[3] in _ETALON_FIELDS:
                    continue
            raise ConfigError(key, "unknown key")

        cavity = _build(CavityConfig, _CAVITY_KEYS, entries)
        source = _build(SourceConfig, _SOURCE_KEYS, entries)

        etalon_entries = {k: v for k, v in entries.items() if k.startswith("filter.etalon.")}
        stack = EtalonStack.from_config(etalon_entries) if etalon_entries else reference_stack()

        survival = entries.get("filter.survival", "single").strip()
        if survival not in SURVIVAL_MODES:
            raise ConfigError("filter.survival", f"must be one of {SURVIVAL_MODES}")
        seed = _parse("seeds.master", entries.get("seeds.master", "2024"), int)
        return cls(cavity, stack, survival, source, seed, entries.get("output.dir", "out").strip())

    def to_entries(self) -> dict[str, str]:
        out = {}
        for key, (name, _) in _CAVITY_KEYS.items():
            out[key] = _fmt(getattr(self.cavity, name))
        out["filter.survival"] = self.survival
        out.update(self.stack.to_config())
        for key, (name, _) in _SOURCE_KEYS.items():
            out[key] = _fmt(getattr(self.source, name))
        out["seeds.master"] = str(self.seed)
        out["output.dir"] = self.output_dir
        return out

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_entries().items())


def _fmt(value):
    return value if isinstance(value, str) else repr(value)


def _parse(key, raw, kind):
    raw = raw.strip()
    try:
        if kind is int:
            as_float = float(raw)
            if not as_float.is_integer():
                raise ValueError
            return int(as_float)
        return kind(raw)
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {kind.__name__}") from None


def _build(cls, keymap, entries):
    kwargs = {}
    by_field = {}
    for key, (name, kind) in keymap.items():
        by_field[name] = key
        if key in entries:
            kwargs[name] = _parse(key, entries[key], kind)
    try:
        return cls(**kwargs)
    except ValueError as exc:
        msg = str(exc)
        name = msg.split(" ", 1)[0]
        raise ConfigError(by_field.get(name, cls.__name__), msg) from None


def parse_config_text(text: str) -> dict[str, str]:
    entries = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {line!r}")
        if key in entries:
            raise ConfigError(key, f"duplicate key (line {lineno})")
        entries[key] = value.strip()
    return entries


def load_config(path=None) -> RunConfig:
    """Read a config file; ``None`` gives the built-in defaults."""
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return RunConfig.from_entries(parse_config_text(path.read_text()))

