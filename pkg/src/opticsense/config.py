"""Core geometry, device and timing/energy configuration, plus YAML loading.

Configuration is layered: built-in defaults, then a constants fixture, then a
run file, then ``--set key=value`` overrides (dotted paths).
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .devices import AwcConfig, BpdConfig, MrConfig, VamConfig, VomConfig
from .errors import ConfigError
from .pixel import PixelConfig

DATA_DIR = Path(__file__).parent / "data"
OPS_POLICIES = ("mac", "mac2", "dot")


@dataclass(frozen=True)
class TimingEnergyConstants:
    """Per-event energies (J), step times (s) and static power (W)."""

    t_mac: float = 55.8e-12
    e_vcsel: float = 20e-15  # per emitted activation symbol
    e_bpd: float = 10e-15  # per balanced detection
    e_vom: float = 30e-15  # per re-modulated partial sum
    e_awc_per_bit: float = 5e-12
    e_kernel_read_per_bit: float = 1e-12
    e_to_step: float = 100e-12
    t_to_step: float = 200e-9
    e_eo_step: float = 1e-12
    t_eo_step: float = 1e-9
    e_pixel: float = 1e-12  # per pixel readout incl. both sense amplifiers
    p_static: float = 0.0
    t_exposure: float = 300e-6
    t_readout: float = 0.0
    ops_accounting: str = "mac"
    provenance: str = "built-in nominal values"

    def __post_init__(self):
        if self.t_mac <= 0:
            raise ConfigError(f"t_mac must be positive, got {self.t_mac}")
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float)) and not isinstance(v, bool) and v < 0:
                raise ConfigError(f"constant {f.name} must be >= 0, got {v}")
        if self.ops_accounting not in OPS_POLICIES:
            raise ConfigError(
                f"ops_accounting must be one of {OPS_POLICIES}, got {self.ops_accounting!r}")


@dataclass(frozen=True)
class CoreConfig:
    num_banks: int = 80
    bank_columns: int = 4
    arms_per_bank: int = 5
    mrs_per_arm: int = 10
    awc_units_per_row: int = 40
    mr: MrConfig = field(default_factory=MrConfig)
    awc: AwcConfig = field(default_factory=AwcConfig)
    vam: VamConfig = field(default_factory=VamConfig)
    bpd: BpdConfig = field(default_factory=BpdConfig)
    vom: VomConfig = field(default_factory=VomConfig)
    pixel: PixelConfig = field(default_factory=PixelConfig)
    constants: TimingEnergyConstants = field(default_factory=TimingEnergyConstants)

    def __post_init__(self):
        for name in ("num_banks", "bank_columns", "arms_per_bank", "mrs_per_arm",
                     "awc_units_per_row"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.num_banks % self.bank_columns:
            raise ConfigError("num_banks must be a multiple of bank_columns")
        if self.awc_units_per_row != self.bank_columns * self.mrs_per_arm:
            raise ConfigError(
                "awc_units_per_row must equal bank_columns * mrs_per_arm "
                "(one AWC per MR of a core row)")
        if self.mrs_per_arm < 10:
            raise ConfigError("arms need at least 10 MR slots (3x3 kernel + spare)")

    @property
    def total_mrs(self) -> int:
        return self.num_banks * self.arms_per_bank * self.mrs_per_arm

    @property
    def num_rows(self) -> int:
        return self.total_mrs // self.awc_units_per_row

    @property
    def total_arms(self) -> int:
        return self.num_banks * self.arms_per_bank

    def replace(self, **changes) -> "CoreConfig":
        return dataclasses.replace(self, **changes)

    def with_overrides(self, overrides: dict[str, Any]) -> "CoreConfig":
        return from_dict(CoreConfig, apply_overrides(to_dict(self), overrides))


# ---------------------------------------------------------------- dict plumbing


def to_dict(obj) -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if dataclasses.is_dataclass(v):
            v = to_dict(v)
        elif isinstance(v, tuple):
            v = list(v)
        out[f.name] = v
    return out


def from_dict(cls, data: dict | None, where: str = ""):
    data = dict(data or {})
    kwargs = {}
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"unknown config key {where + key!r}")
        sub = _nested_type(cls, key)
        if sub is not None:
            value = from_dict(sub, value, f"{where}{key}.")
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid {where.rstrip('.') or cls.__name__}: {exc}") from exc


_NESTED = {
    "mr": MrConfig, "awc": AwcConfig, "vam": VamConfig, "bpd": BpdConfig,
    "vom": VomConfig, "pixel": PixelConfig, "constants": TimingEnergyConstants,
}


def _nested_type(cls, key):
    return _NESTED.get(key) if cls is CoreConfig else None


def apply_overrides(data: dict, overrides: dict[str, Any]) -> dict:
    """Return a deep copy of ``data`` with dotted-path overrides applied."""
    out = yaml.safe_load(yaml.safe_dump(data))
    for path, value in overrides.items():
        node = out
        parts = path.split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"unknown config path {path!r}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config path {path!r}")
        node[parts[-1]] = value
    return out


def parse_assignment(text: str) -> tuple[str, Any]:
    """``a.b=1.5`` -> ('a.b', 1.5); the value is parsed as YAML."""
    if "=" not in text:
        raise ConfigError(f"expected key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        return key.strip(), yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"bad value in {text!r}: {exc}") from exc


def load_yaml(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def constants_path(name_or_path) -> Path:
    p = Path(name_or_path)
    if p.suffix in (".yaml", ".yml") or p.exists():
        return p
    return DATA_DIR / "constants" / f"{name_or_path}.yaml"


def load_constants(name_or_path) -> TimingEnergyConstants:
    """Load a constants fixture by bundled name (e.g. ``paper_cal``) or path."""
    path = constants_path(name_or_path)
    data = load_yaml(path)
    data.pop("notes", None)
    return from_dict(TimingEnergyConstants, data.get("constants", data))


def load_core_config(data: dict | None = None, constants=None,
                     overrides: dict[str, Any] | None = None) -> CoreConfig:
    cfg = from_dict(CoreConfig, data or {})
    if constants is not None:
        if not isinstance(constants, TimingEnergyConstants):
            constants = load_constants(constants)
        cfg = cfg.replace(constants=constants)
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg
