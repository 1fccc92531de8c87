"""Run configuration: an INI file with typed keys, plus environment overrides.

Grammar::

    [section]
    key = value        ; floats accept 1e-3, ints are plain integers,
                       ; booleans are true/false, lists are comma separated

Sections and keys map one-to-one onto dataclass fields (see ``SECTIONS``).
Unknown sections or keys are errors.  An environment variable
``SHELVESIM_<SECTION>_<KEY>`` overrides the file value for that key.
"""
from __future__ import annotations

import configparser
import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .atomic import AtomicConstants, ConfigError, LaserConfig, shelving_config
from .photons import CountModel
from .protocol import ProtocolParams

ENV_PREFIX = "SHELVESIM_"


@dataclass(frozen=True)
class RunSettings:
    seed: int = 20211
    n_per_state: int = 1000
    calibration_n_per_state: int = 10_000
    detect_error_bound: float = 1e-7
    doppler_error_bound: float = 1e-6


@dataclass(frozen=True)
class ScanSettings:
    times: tuple = (0.0, 0.025, 0.05, 0.075, 0.1, 0.15, 0.2, 0.25, 0.3)
    n_per_point: int = 100_000
    schemes: tuple = ("nm935", "nm861")


@dataclass(frozen=True)
class RBSettings:
    lengths: tuple = (2, 50, 200, 800)
    n_seqs: int = 200
    n_shots: int = 100
    eps_per_gate: float = 7.4e-5


@dataclass(frozen=True)
class TwoIonSettings:
    n_cycles: int = 1_000_000
    bright_rate: float = 2.0e4
    dark_rate: float = 20.0
    bin_width: float = 10e-3
    p_one_shelved: float = 0.5
    storage_rate_per_bin: float = 0.0
    storage_mean_bins: float = 3.0


@dataclass(frozen=True)
class FitSettings:
    delta_loglik: float = 0.5


@dataclass(frozen=True)
class RunConfig:
    run: RunSettings = field(default_factory=RunSettings)
    constants: AtomicConstants = field(default_factory=AtomicConstants)
    lasers: LaserConfig = field(default_factory=LaserConfig)
    protocol: ProtocolParams = field(default_factory=ProtocolParams)
    counts: CountModel = field(default_factory=CountModel)
    scan: ScanSettings = field(default_factory=ScanSettings)
    rb: RBSettings = field(default_factory=RBSettings)
    two_ion: TwoIonSettings = field(default_factory=TwoIonSettings)
    fit: FitSettings = field(default_factory=FitSettings)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            sec = dataclasses.asdict(getattr(self, f.name))
            if f.name == "lasers":
                sec = {k: v for k, v in sec.items() if not k.startswith("on_")}
            out[f.name] = {k: list(v) if isinstance(v, tuple) else v for k, v in sec.items()}
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return _build({k: dict(v) for k, v in data.items()}, typed=True)

    def with_overrides(self, **run_fields) -> "RunConfig":
        return dataclasses.replace(self, run=dataclasses.replace(self.run, **run_fields))

    def two_ion_counts(self) -> CountModel:
        t = self.two_ion
        return CountModel(bright_rate=t.bright_rate, dark_rate=t.dark_rate, bin_width=t.bin_width)


SECTIONS = {f.name: f.default_factory for f in dataclasses.fields(RunConfig)}
# Shelving-phase flags accepted in [lasers]; they select the repump scheme.
LASER_SCHEME_FLAGS = ("on_935", "on_861")


def _convert(kind, text: str, where: str):
    text = text.strip()
    try:
        if kind in ("bool",):
            low = text.lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError(text)
            return low in ("true", "yes", "1", "on")
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "tuple":
            items = [s.strip() for s in text.split(",") if s.strip()]
            out = []
            for s in items:
                try:
                    out.append(int(s))
                except ValueError:
                    try:
                        out.append(float(s))
                    except ValueError:
                        out.append(s)
            return tuple(out)
        return text
    except ValueError:
        raise ConfigError(f"{where}: cannot read {text!r} as {kind}") from None


def _field_kinds(factory) -> dict:
    return {f.name: str(f.type) for f in dataclasses.fields(factory)}


def _build(raw: dict, typed: bool = False) -> RunConfig:
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    parts = {}
    scheme_flags = {}
    for name, factory in SECTIONS.items():
        kinds = _field_kinds(factory)
        values = {}
        for key, value in raw.get(name, {}).items():
            match = {k.lower(): k for k in kinds}.get(key.lower())
            if match is None:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
            kind = kinds[match]
            if typed:
                values[match] = tuple(value) if kind == "tuple" else value
            else:
                values[match] = _convert(kind, value, f"[{name}] {key}")
        if name == "lasers":
            for flag in LASER_SCHEME_FLAGS:
                if flag in values:
                    scheme_flags[flag] = values.pop(flag)
            for flag in ("on_411", "on_deshelve_760", "on_976", "on_cooling"):
                if values.pop(flag, False):
                    raise ConfigError(f"[lasers] {flag}: phase flags are set by the protocol")
        try:
            parts[name] = factory(**values)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{name}] {exc}") from None

    if scheme_flags:
        on_935 = scheme_flags.get("on_935", False)
        on_861 = scheme_flags.get("on_861", False)
        # Validates the shelving-phase combination.
        LaserConfig(on_411=True, on_935=on_935, on_861=on_861)
        if on_935 == on_861:
            raise ConfigError("[lasers] exactly one of on_935 / on_861 must be on while shelving")
        scheme = "nm935" if on_935 else "nm861"
        explicit = raw.get("protocol", {})
        if any(k.lower() == "repump_scheme" for k in explicit) and parts["protocol"].repump_scheme != scheme:
            raise ConfigError("[lasers] flags disagree with [protocol] repump_scheme")
        parts["protocol"] = dataclasses.replace(parts["protocol"], repump_scheme=scheme)
    shelving_config(parts["lasers"], parts["protocol"].repump_scheme)
    return RunConfig(**parts)


def _env_overrides(raw: dict, environ) -> dict:
    for var, value in environ.items():
        if not var.startswith(ENV_PREFIX):
            continue
        rest = var[len(ENV_PREFIX):].lower()
        for section in sorted(SECTIONS, key=len, reverse=True):
            if rest.startswith(section + "_"):
                raw.setdefault(section, {})[rest[len(section) + 1:]] = value
                break
        else:
            raise ConfigError(f"environment override {var} names no config section")
    return raw


def parse_config(text: str = "", environ=None) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}") from None
    raw = {s: dict(parser.items(s)) for s in parser.sections()}
    raw = _env_overrides(raw, os.environ if environ is None else environ)
    return _build(raw)


def load_config(path: str | os.PathLike | None, environ=None) -> RunConfig:
    """Read an INI config, or replay the ``config`` block of a run manifest."""
    if path is None:
        return parse_config("", environ)
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    if p.suffix == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad manifest {p}: {exc}") from None
        return RunConfig.from_dict(data.get("config", data))
    return parse_config(text, environ)


def config_to_ini(cfg: RunConfig) -> str:
    lines = []
    for section, values in cfg.to_dict().items():
        lines.append(f"[{section}]")
        for k, v in values.items():
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, list):
                v = ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{k} = {v}")
        lines.append("")
    return "\n".join(lines)
