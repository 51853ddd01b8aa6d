"""INI configuration: experiment settings plus the task constants tables.

Sections: ``[harness]``, ``[bo]``, ``[perf]``, ``[svm]``, ``[gp]``,
``[task.obstacle]`` and ``[task.push]``.  Every key is optional; missing keys
keep their defaults.  Vectors are written as comma-separated numbers and lists
of points as ``;``-separated vectors.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .bayesopt import BOConfig
from .core import TASKS
from .tasks import PROFILES
from .tasks.obstacle import ObstacleConstants
from .tasks.push import PushConstants

CONFIG_ENV = "BTMG_ADAPT_CONFIG"
METHODS = ("learned", "perf", "direct", "nearest_neighbor", "single_policy")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PerfSettings:
    mu_factor: float = 0.25
    n_starts: int = 16


@dataclass(frozen=True)
class SVMSettings:
    C: float = 10.0
    gamma: Optional[float] = None  # None: 1 / input dimension


@dataclass(frozen=True)
class GPSettings:
    max_points: int = 2000


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "obstacle"
    n_train: int = 20
    n_test: int = 20
    repetitions: int = 5
    master_seed: int = 0
    methods: tuple = METHODS
    profile: str = "sim"
    bo: BOConfig = field(default_factory=BOConfig)
    perf: PerfSettings = field(default_factory=PerfSettings)
    svm: SVMSettings = field(default_factory=SVMSettings)
    gp: GPSettings = field(default_factory=GPSettings)
    obstacle: ObstacleConstants = field(default_factory=ObstacleConstants)
    push: PushConstants = field(default_factory=PushConstants)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if min(self.n_train, self.n_test, self.repetitions) < 1:
            raise ConfigError("n_train, n_test and repetitions must be >= 1")
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"unknown methods {bad!r}; choose from {METHODS}")

    @property
    def constants(self):
        return self.obstacle if self.task == "obstacle" else self.push


# ---------------------------------------------------------------------------
# value codecs
# ---------------------------------------------------------------------------

def _encode(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return "; ".join(_encode(p) for p in value)
        if value and isinstance(value[0], str):
            return ", ".join(value)
        return ", ".join(_encode(float(a)) for a in value)
    return str(value)


def _decode(text: str, default, name: str):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if default is None:
            return None if text.lower() == "none" else float(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            if default and isinstance(default[0], tuple):
                return tuple(tuple(float(a) for a in p.split(",")) for p in text.split(";"))
            if default and isinstance(default[0], str):
                return tuple(a.strip() for a in text.split(",") if a.strip())
            return tuple(float(a) for a in text.split(","))
        return text
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None


def _apply(obj, section, name: str):
    """Return ``obj`` with fields overridden from an INI section."""
    fields = {f.name: f for f in dataclasses.fields(obj) if f.name not in _NESTED}
    changes = {}
    for key, text in section.items():
        if key not in fields:
            raise ConfigError(f"unknown key [{name}] {key}")
        # optional fields (declared default None) decode as "none" or a number
        default = None if fields[key].default is None else getattr(obj, key)
        changes[key] = _decode(text, default, f"[{name}] {key}")
    try:
        return dataclasses.replace(obj, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from None


_SECTIONS = {"bo": "bo", "perf": "perf", "svm": "svm", "gp": "gp",
             "task.obstacle": "obstacle", "task.push": "push"}
_NESTED = frozenset(_SECTIONS.values())


def _parser() -> configparser.ConfigParser:
    p = configparser.ConfigParser(interpolation=None)
    p.optionxform = str  # keep key case (C)
    return p


def parse_config(text: str, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    p = _parser()
    try:
        p.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    cfg = base or ExperimentConfig()
    for sec in p.sections():
        if sec != "harness" and sec not in _SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
    if p.has_section("harness"):
        cfg = _apply(cfg, p["harness"], "harness")
    changes = {}
    for sec, attr in _SECTIONS.items():
        if p.has_section(sec):
            changes[attr] = _apply(getattr(cfg, attr), p[sec], sec)
    return dataclasses.replace(cfg, **changes) if changes else cfg


def load_config(path=None, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    """Read ``path``, else the file named by ``BTMG_ADAPT_CONFIG``, else defaults."""
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return base or ExperimentConfig()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(encoding="utf-8"), base)


def config_to_text(cfg: ExperimentConfig) -> str:
    """Full INI snapshot; ``parse_config`` of the result gives back ``cfg``."""
    p = _parser()
    p["harness"] = {f.name: _encode(getattr(cfg, f.name)) for f in dataclasses.fields(cfg)
                    if f.name not in _NESTED}
    for sec, attr in _SECTIONS.items():
        obj = getattr(cfg, attr)
        p[sec] = {f.name: _encode(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    buf = io.StringIO()
    p.write(buf)
    return buf.getvalue().replace("\r\n", "\n").rstrip("\n") + "\n"
