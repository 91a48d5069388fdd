"""Run configuration: TOML sections, keyed defaults and validation.

Every tolerance used by the pipeline lives here as a default that a config
file may override.  Validation errors carry a dotted path such as
``grid.points``.
"""
from __future__ import annotations

import copy
import hashlib
import inspect
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .geometry import CATALOG

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

FAMILY_NAMES = tuple(sorted(CATALOG)) + ("table",)


@dataclass
class FamilySection:
    name: str = "bump"
    params: dict = field(default_factory=dict)


@dataclass
class GridSection:
    points: int = 64
    circumference: float = 2 * math.pi
    t_max: float = 640.0
    antiperiodic: bool = False


@dataclass
class EvolutionSection:
    scheme: str = "magnus2"
    dt0: float = 0.02
    growth_start: float = 10.0
    deriv_tol: float = 1.0
    drift_budget: float = 1e-8


@dataclass
class ScatteringSection:
    directions: list = field(default_factory=lambda: ["out", "in"])
    t_first: float = 10.0
    ratio: float = 2.0
    purify: bool = True
    identity_tol: float = 1e-6
    static_tol: float = 1e-6
    cook: bool = False
    cook_order: int = 1
    cook_mode: str = "paper_leading"
    cook_coarse_dt0: float = 0.1


@dataclass
class DiagnosticsSection:
    decay_slack: float = 0.2
    decay_samples: list = field(default_factory=lambda: [5.0, 10.0, 20.0, 40.0, 80.0, 160.0])
    positivity_tol: float = 1e-8
    sum_rule_tol: float = 1e-7
    symbol_band: list | None = None
    symbol_threshold: float = -0.8
    symbol_fail: float = -0.5
    smoothing_order: int = 1
    smoothing_ratio: float = math.sqrt(2.0)
    two_point: list = field(default_factory=lambda: [2.0, -1.0])
    equation_tol: float = 1e-5
    time_consistency: list = field(default_factory=lambda: [1.0, 0.0])
    time_consistency_tol: float = 1e-6


@dataclass
class RunSection:
    seed: int = 0


@dataclass
class Config:
    family: FamilySection = field(default_factory=FamilySection)
    grid: GridSection = field(default_factory=GridSection)
    evolution: EvolutionSection = field(default_factory=EvolutionSection)
    scattering: ScatteringSection = field(default_factory=ScatteringSection)
    diagnostics: DiagnosticsSection = field(default_factory=DiagnosticsSection)
    run: RunSection = field(default_factory=RunSection)
    sweep: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def with_overrides(self, overrides: dict) -> "Config":
        """Copy with dotted-path overrides, e.g. ``{"family.mu": 1.0}``."""
        data = copy.deepcopy(self.to_dict())
        data.pop("sweep", None)
        for path, value in overrides.items():
            section, _, key = path.partition(".")
            if section == "family" and key not in ("name", "params"):
                data["family"]["params"][key] = value
            elif section in data and key:
                data[section][key] = value
            else:
                raise ConfigError(path, "not a valid override path")
        return from_dict(_flatten_family(data))


SECTIONS = {"family": FamilySection, "grid": GridSection, "evolution": EvolutionSection,
            "scattering": ScatteringSection, "diagnostics": DiagnosticsSection, "run": RunSection}

_CHOICES = {
    "evolution.scheme": ("magnus2", "crank-nicolson"),
    "scattering.cook_mode": ("paper_leading", "sylvester_exact"),
}
_POSITIVE = {"grid.circumference", "grid.t_max", "evolution.dt0", "evolution.growth_start",
             "evolution.drift_budget", "scattering.t_first", "scattering.identity_tol",
             "scattering.static_tol", "scattering.cook_coarse_dt0", "diagnostics.positivity_tol",
             "diagnostics.sum_rule_tol", "diagnostics.equation_tol",
             "diagnostics.time_consistency_tol", "diagnostics.smoothing_ratio"}


def _flatten_family(data: dict) -> dict:
    fam = dict(data.get("family", {}))
    params = fam.pop("params", {}) or {}
    fam.update(params)
    return dict(data, family=fam)


def _coerce(path: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if isinstance(default, list) or default is None:
        if value is not None and not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {value!r}")
        return value
    return value


def _section(name: str, cls, raw) -> object:
    if not isinstance(raw, dict):
        raise ConfigError(name, "expected a table")
    defaults = cls()
    known = {f.name for f in fields(cls)}
    values = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"{name}.{key}", "unknown key")
        values[key] = _coerce(f"{name}.{key}", value, getattr(defaults, key))
    return cls(**values)


def _validate(cfg: Config) -> None:
    g = cfg.grid
    if g.points <= 0 or g.points % 2:
        raise ConfigError("grid.points", f"must be a positive even integer, got {g.points}")
    for path, choices in _CHOICES.items():
        section, key = path.split(".")
        value = getattr(getattr(cfg, section), key)
        if value not in choices:
            raise ConfigError(path, f"must be one of {choices}, got {value!r}")
    for path in _POSITIVE:
        section, key = path.split(".")
        value = getattr(getattr(cfg, section), key)
        if not value > 0:
            raise ConfigError(path, f"must be positive, got {value!r}")
    s = cfg.scattering
    if not s.directions or any(d not in ("out", "in") for d in s.directions):
        raise ConfigError("scattering.directions", "entries must be 'out' or 'in'")
    if s.ratio <= 1:
        raise ConfigError("scattering.ratio", "must exceed 1")
    if not 0 <= s.cook_order <= 4:
        raise ConfigError("scattering.cook_order", "must lie in 0..4")
    d = cfg.diagnostics
    for key in ("two_point", "time_consistency"):
        v = getattr(d, key)
        if len(v) != 2 or not all(isinstance(t, (int, float)) for t in v):
            raise ConfigError(f"diagnostics.{key}", "expected [t, s]")
    if d.symbol_band is not None and (len(d.symbol_band) != 2 or d.symbol_band[0] >= d.symbol_band[1]):
        raise ConfigError("diagnostics.symbol_band", "expected [k_min, k_max] with k_min < k_max")
    if len(d.decay_samples) < 4:
        raise ConfigError("diagnostics.decay_samples", "need at least 4 samples")
    if cfg.family.name not in FAMILY_NAMES:
        raise ConfigError("family.name", f"unknown family {cfg.family.name!r}; known: {FAMILY_NAMES}")
    _validate_family(cfg.family)
    for key, values in cfg.sweep.items():
        if not isinstance(values, list):
            raise ConfigError(f"sweep.{key}", "expected a list of values")
        section, _, name = key.partition(".")
        if section not in SECTIONS or section == "run" or not name:
            raise ConfigError(f"sweep.{key}", "sweep keys are dotted paths like 'family.mu'")


def _validate_family(fam: FamilySection) -> None:
    if fam.name == "table":
        allowed = {"table", "mu"}
    else:
        allowed = set(inspect.signature(CATALOG[fam.name]).parameters)
    for key, value in fam.params.items():
        if key not in allowed:
            raise ConfigError(f"family.{key}", f"unknown parameter for {fam.name!r}")
        if key != "table" and (isinstance(value, bool) or not isinstance(value, (int, float))):
            raise ConfigError(f"family.{key}", f"expected a number, got {value!r}")


def from_dict(data: dict) -> Config:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "expected a table")
    unknown = set(data) - set(SECTIONS) - {"sweep"}
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(key, "unknown section")
    fam_raw = dict(data.get("family", {}))
    if not isinstance(data.get("family", {}), dict):
        raise ConfigError("family", "expected a table")
    name = fam_raw.pop("name", FamilySection.name)
    if not isinstance(name, str):
        raise ConfigError("family.name", "expected a string")
    family = FamilySection(name=name, params=fam_raw)
    kwargs = {"family": family}
    for sec, cls in SECTIONS.items():
        if sec != "family":
            kwargs[sec] = _section(sec, cls, data.get(sec, {}))
    sweep = data.get("sweep", {})
    if not isinstance(sweep, dict):
        raise ConfigError("sweep", "expected a table")
    cfg = Config(**kwargs, sweep=_dotted(sweep))
    _validate(cfg)
    return cfg


def _dotted(table: dict, prefix: str = "") -> dict:
    # TOML parses "family.mu = [...]" into nested tables; flatten back to dotted keys
    out = {}
    for key, value in table.items():
        path = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(_dotted(value, path + "."))
        else:
            out[path] = value
    return out


def loads(text: str) -> Config:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<file>", f"invalid TOML: {exc}") from None
    return from_dict(data)


def load(path) -> Config:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(str(p), f"cannot read config: {exc}") from None
    return loads(text)
