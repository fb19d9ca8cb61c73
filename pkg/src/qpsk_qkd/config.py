"""Flat ``key = value`` experiment configuration.

Blank lines and ``#`` comments are ignored. Every key must be one of the
fields of :class:`Config`; booleans are written ``true``/``false``.
Presets live in ``qpsk_qkd/presets/<name>.cfg``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Union

from .modem import DelayLine, triangular_profile
from .physics import ChannelParams, DetectorParams

__all__ = ["Config", "ConfigError", "load", "parse_text", "load_preset", "preset_names"]


class ConfigError(ValueError):
    def __init__(self, key: Optional[str], message: str):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


@dataclass(frozen=True)
class Config:
    # channel
    mu_key: float = 0.1
    ref_ratio: float = 1.0
    strong_reference: bool = False
    ref_gain_cap: float = 100.0
    extinction_ratio: float = 0.0
    pol_mismatch: float = 0.0
    mod_phase_sigma: float = 0.0
    drift_sigma: float = 0.0
    feedback_gain: float = 0.0
    # detectors
    eta: float = 0.1
    p_dark: float = 0.0
    gate_rate: float = 1e6
    # delay line
    n_taps: int = 32
    segment_delay_ps: float = 25.0
    meta_profile: str = "triangular"
    meta_peak: float = -1.0
    meta_half_width: float = -1.0
    calib_words: int = 4096
    # symbol buffer
    buffer_capacity: int = 4096
    producer_bps: float = 200e6
    consumer_bps: float = 4e6
    network_bps: float = 100e6
    burst_period_ticks: int = 1000
    burst_ticks: int = 20
    buffer_ticks: int = 100_000
    buffer_initial_fill: int = 0
    # session
    n_gates: int = 100_000
    seed: int = 1
    constant_key: bool = False
    symbols: str = "modem"
    qber_sample_fraction: float = 0.1
    # network
    host: str = "127.0.0.1"
    port: int = 7451
    timeout: float = 30.0

    def __post_init__(self) -> None:
        if self.n_gates <= 0:
            raise ConfigError("n_gates", "must be positive")
        if self.seed < 0:
            raise ConfigError("seed", "must be non-negative")
        if self.symbols not in ("modem", "numpy"):
            raise ConfigError("symbols", "must be modem or numpy")
        if self.meta_profile not in _PROFILES:
            raise ConfigError("meta_profile", f"must be one of {', '.join(_PROFILES)}")
        if not 0 <= self.qber_sample_fraction < 1:
            raise ConfigError("qber_sample_fraction", "must lie in [0, 1)")
        if self.calib_words < 1:
            raise ConfigError("calib_words", "must be >= 1")
        if self.buffer_capacity < 1:
            raise ConfigError("buffer_capacity", "must be >= 1")
        if self.buffer_ticks < 1:
            raise ConfigError("buffer_ticks", "must be >= 1")
        if not 0 <= self.buffer_initial_fill <= self.buffer_capacity:
            raise ConfigError("buffer_initial_fill", "must lie in [0, buffer_capacity]")
        for key in ("producer_bps", "consumer_bps", "network_bps"):
            if getattr(self, key) < 0:
                raise ConfigError(key, "must be non-negative")
        if self.burst_period_ticks < 0 or self.burst_ticks < 0:
            raise ConfigError("burst_period_ticks", "burst ticks must be non-negative")
        if not 0 < self.timeout:
            raise ConfigError("timeout", "must be positive")
        if not 0 <= self.port < 65536:
            raise ConfigError("port", "must be a TCP port number")
        # embedded types carry the remaining invariants; their messages start with the key
        for build in (self.channel, self.detector, self.delay_line):
            try:
                build()
            except ValueError as exc:
                key = str(exc).split(" ", 1)[0]
                raise ConfigError(key, str(exc).split(" ", 1)[1]) from None

    def channel(self) -> ChannelParams:
        return ChannelParams(
            mu_key=self.mu_key,
            ref_ratio=self.ref_ratio,
            extinction_ratio=self.extinction_ratio,
            pol_mismatch=self.pol_mismatch,
            mod_phase_sigma=self.mod_phase_sigma,
            drift_sigma=self.drift_sigma,
            feedback_gain=self.feedback_gain,
            strong_reference=self.strong_reference,
            ref_gain_cap=self.ref_gain_cap,
        )

    def detector(self) -> DetectorParams:
        return DetectorParams(eta=self.eta, p_dark=self.p_dark, gate_rate=self.gate_rate)

    def delay_line(self) -> DelayLine:
        if self.n_taps < 2:
            raise ValueError("n_taps must be >= 2")
        if self.meta_profile == "stuck":
            return DelayLine(self.n_taps, self.segment_delay_ps, (0.0,) * self.n_taps)
        if self.meta_profile == "stuck_low":
            # the edge never reaches the line: every tap reads 0
            return DelayLine(self.n_taps, self.segment_delay_ps, (0.0,) * self.n_taps, (0,) * self.n_taps)
        peak = self.meta_peak if self.meta_peak >= 0 else self.n_taps // 2
        width = self.meta_half_width if self.meta_half_width > 0 else max(1, self.n_taps // 4)
        profile = triangular_profile(self.n_taps, peak, width)
        return DelayLine(self.n_taps, self.segment_delay_ps, profile)

    def replace(self, **changes) -> "Config":
        unknown = set(changes) - _TYPES.keys()
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown key")
        return dataclasses.replace(self, **changes)

    def items(self) -> tuple[tuple[str, str], ...]:
        """Snapshot as (key, text) pairs in field order, as a config file would hold them."""
        return tuple((f.name, _format(getattr(self, f.name))) for f in fields(self))

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.items())


_PROFILES = ("triangular", "stuck", "stuck_low")
_TYPES = {f.name: f.type for f in fields(Config)}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(key: str, text: str):
    kind = _TYPES[key]
    text = text.strip()
    try:
        if kind == "bool":
            lowered = text.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return lowered in ("true", "1", "yes")
        if kind == "int":
            return int(float(text)) if "e" in text.lower() else int(text, 0)
        if kind == "float":
            value = float(text)
            if not math.isfinite(value):
                raise ValueError(text)
            return value
        return text
    except ValueError:
        raise ConfigError(key, f"cannot read {text!r} as {kind}") from None


def is_numeric(key: str) -> bool:
    if key not in _TYPES:
        raise ConfigError(key, "unknown key")
    return _TYPES[key] in ("int", "float")


def convert(key: str, text: str):
    if key not in _TYPES:
        raise ConfigError(key, "unknown key")
    return _convert(key, text)


def parse_text(text: str, base: Optional[Config] = None) -> Config:
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(None, f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(key, f"unknown key (line {lineno})")
        values[key] = _convert(key, value)
    return dataclasses.replace(base or Config(), **values)


def preset_names() -> list[str]:
    root = resources.files("qpsk_qkd") / "presets"
    return sorted(p.name[: -len(".cfg")] for p in root.iterdir() if p.name.endswith(".cfg"))


def load_preset(name: str) -> Config:
    path = resources.files("qpsk_qkd") / "presets" / f"{name}.cfg"
    if not path.is_file():
        raise ConfigError(None, f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return parse_text(path.read_text())


def load(
    path: Union[str, Path, None] = None,
    preset: Optional[str] = None,
    overrides: Mapping[str, str] = {},
) -> Config:
    """Preset first, then the file, then the overrides."""
    config = load_preset(preset) if preset else Config()
    if path is not None:
        config = parse_text(Path(path).read_text(), base=config)
    if overrides:
        values = {k: convert(k, v) for k, v in overrides.items()}
        config = dataclasses.replace(config, **values)
    return config
