"""Experiment configuration files.

A config is an INI-style ``key = value`` file.  Keys may sit under the section
of the module that owns them or above the first section header::

    strategy = eafl

    [experiment]
    strategies = random, oort, eafl
    seeds = 0, 1, 2

    [selection]
    blend_f = 0.25

Unknown keys and out-of-range values are rejected with the offending line.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .engine import TaskConfig
from .selection import StrategyKind
from .simulator import SimConfig

DEFAULT_STRATEGIES = (StrategyKind.RANDOM, StrategyKind.OORT, StrategyKind.EAFL)
DEFAULT_TARGET_ACCURACY = 0.6

_TOP = "__top__"


class ConfigError(Exception):
    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None):
        self.path = str(path) if path is not None else None
        self.line = line
        where = ""
        if self.path is not None:
            where = f"{self.path}:{line}: " if line is not None else f"{self.path}: "
        super().__init__(where + message)


class ConfigNotFoundError(ConfigError, FileNotFoundError):
    pass


class ConfigSyntaxError(ConfigError):
    pass


class UnknownKeyError(ConfigError, KeyError):
    def __str__(self) -> str:
        return self.args[0]


class ConfigValueError(ConfigError, ValueError):
    pass


@dataclass
class ExperimentSpec:
    base: SimConfig
    strategies: list[StrategyKind] = field(default_factory=lambda: list(DEFAULT_STRATEGIES))
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: Path = Path("results")
    target_accuracy: float = DEFAULT_TARGET_ACCURACY
    jobs: int = 1

    def __post_init__(self):
        if not self.strategies:
            raise ValueError("at least one strategy is required")
        if not self.seeds:
            raise ValueError("at least one seed is required")

    def run_configs(self) -> list[SimConfig]:
        return [
            dataclasses.replace(self.base, strategy=s, seed=seed)
            for s in self.strategies
            for seed in self.seeds
        ]


# -- value parsers ------------------------------------------------------------

def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _int(text: str) -> int:
    return int(text.strip())


def _float(text: str) -> float:
    value = float(text.strip())
    if not math.isfinite(value):
        raise ValueError(f"expected a finite number, got {text!r}")
    return value


def _list(item: Callable[[str], Any]) -> Callable[[str], list]:
    def parse(text: str) -> list:
        return [item(part) for part in re.split(r"[,\s]+", text.strip()) if part]
    return parse


def _tier_mix(text: str) -> tuple[float, float, float]:
    parts = _list(_float)(text)
    if len(parts) != 3:
        raise ValueError(f"tier_mix needs three fractions (high, mid, low), got {len(parts)}")
    return tuple(parts)


def _optional_path(text: str) -> str | None:
    return text.strip() or None


# key -> (section, parser, range check, range description)
_Check = Callable[[Any], bool]
_ANY: _Check = lambda v: True  # noqa: E731
_pos: _Check = lambda v: v > 0  # noqa: E731
_nonneg: _Check = lambda v: v >= 0  # noqa: E731
_unit: _Check = lambda v: 0.0 <= v <= 1.0  # noqa: E731

KEYS: dict[str, tuple[str, Callable[[str], Any], _Check, str]] = {
    # experiment
    "strategies": ("experiment", _list(StrategyKind.parse), lambda v: len(v) > 0, "a non-empty list"),
    "seeds": ("experiment", _list(_int), lambda v: len(v) > 0, "a non-empty list"),
    "output_dir": ("experiment", str.strip, lambda v: len(v) > 0, "a path"),
    "target_accuracy": ("experiment", _float, _unit, "in [0, 1]"),
    "jobs": ("experiment", _int, lambda v: v >= 1, ">= 1"),
    # simulator
    "n_clients": ("simulator", _int, lambda v: v >= 1, ">= 1"),
    "rounds": ("simulator", _int, lambda v: v >= 1, ">= 1"),
    "strategy": ("simulator", StrategyKind.parse, _ANY, ""),
    "seed": ("simulator", _int, _ANY, ""),
    "round_deadline_s": ("simulator", _float, _pos, "> 0"),
    "report_quorum": ("simulator", _float, lambda v: 0.0 < v <= 1.0, "in (0, 1]"),
    "min_round_s": ("simulator", _float, _pos, "> 0"),
    "model_bytes": ("simulator", _int, _nonneg, ">= 0"),
    "tier_mix": ("simulator", _tier_mix,
                 lambda v: min(v) >= 0 and abs(sum(v) - 1.0) <= 1e-9, "non-negative and summing to 1"),
    # selection
    "k_per_round": ("selection", _int, lambda v: v >= 1, ">= 1"),
    "blend_f": ("selection", _float, _unit, "in [0, 1]"),
    "epsilon": ("selection", _float, _unit, "in [0, 1]"),
    "straggler_alpha": ("selection", _float, _nonneg, ">= 0"),
    # energy
    "battery_voltage": ("energy", _float, _pos, "> 0"),
    "idle_drain_pct_per_hour": ("energy", _float, _nonneg, ">= 0"),
    "busy_other_prob": ("energy", _float, _unit, "in [0, 1]"),
    "initial_battery_min": ("energy", _float, _unit, "in [0, 1]"),
    "initial_battery_max": ("energy", _float, _unit, "in [0, 1]"),
    "wifi_fraction": ("energy", _float, _unit, "in [0, 1]"),
    "battery_enabled": ("energy", _bool, _ANY, ""),
    "fleet_csv": ("energy", _optional_path, _ANY, ""),
    # engine
    "lr": ("engine", _float, _pos, "> 0"),
    "batch_size": ("engine", _int, lambda v: v >= 1, ">= 1"),
    "local_epochs": ("engine", _int, lambda v: v >= 1, ">= 1"),
    "server_eta": ("engine", _float, _pos, "> 0"),
    "server_beta1": ("engine", _float, lambda v: 0.0 <= v < 1.0, "in [0, 1)"),
    "server_beta2": ("engine", _float, _unit, "in [0, 1]"),
    "server_tau": ("engine", _float, _pos, "> 0"),
    # task
    "num_labels": ("task", _int, lambda v: v >= 2, ">= 2"),
    "labels_per_client": ("task", _int, lambda v: v >= 1, ">= 1"),
    "feature_dim": ("task", _int, lambda v: v >= 1, ">= 1"),
    "samples_per_client": ("task", _int, lambda v: v >= 1, ">= 1"),
    "size_spread": ("task", _float, lambda v: 0.0 <= v < 1.0, "in [0, 1)"),
    "label_noise": ("task", _float, lambda v: 0.0 <= v < 1.0, "in [0, 1)"),
    "cluster_scale": ("task", _float, _pos, "> 0"),
    "test_samples_per_label": ("task", _int, lambda v: v >= 1, ">= 1"),
}

SECTIONS = sorted({section for section, *_ in KEYS.values()})
_EXPERIMENT_KEYS = {k for k, (s, *_) in KEYS.items() if s == "experiment"}
_TASK_KEYS = {f.name for f in dataclasses.fields(TaskConfig)}


def _line_index(text: str) -> dict[tuple[str, str], int]:
    """Map (section, key) to the 1-based line it appears on."""
    found = {}
    section = _TOP
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        m = re.match(r"^\[([^\]]+)\]", stripped)
        if m:
            section = m.group(1).strip()
            continue
        m = re.match(r"^([^=:#;\s][^=:]*?)\s*[=:]", stripped)
        if m:
            found.setdefault((section, m.group(1).strip().lower()), lineno)
    return found


def read_values(path: str | Path) -> tuple[dict[str, Any], dict[str, int]]:
    """Parse and range-check every key in the file; returns values and their line numbers."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigNotFoundError("config file not found", path) from None
    except IsADirectoryError:
        raise ConfigNotFoundError("config path is a directory", path) from None

    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    try:
        parser.read_string(f"[{_TOP}]\n" + text, source=str(path))
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigSyntaxError(_syntax_message(exc), path, line - 1 if line else None) from None

    lines = _line_index(text)
    values: dict[str, Any] = {}
    where: dict[str, int] = {}
    for section in parser.sections():
        if section != _TOP and section not in SECTIONS:
            line = next((n for (s, _), n in lines.items() if s == section), None)
            raise UnknownKeyError(f"unknown section [{section}] (known: {', '.join(SECTIONS)})", path, line)
        for key, raw in parser.items(section):
            line = lines.get((section, key))
            if key not in KEYS:
                raise UnknownKeyError(f"unknown key {key!r}", path, line)
            owner, parse, check, desc = KEYS[key]
            if section not in (_TOP, owner):
                raise UnknownKeyError(f"key {key!r} belongs in section [{owner}], not [{section}]", path, line)
            if key in values:
                raise ConfigSyntaxError(f"key {key!r} given more than once", path, line)
            try:
                value = parse(raw)
            except ValueError as exc:
                raise ConfigValueError(f"{key}: {exc}", path, line) from None
            if not check(value):
                raise ConfigValueError(f"{key} = {raw.strip()} is out of range: must be {desc}", path, line)
            values[key] = value
            where[key] = line
    return values, where


def _syntax_message(exc: configparser.Error) -> str:
    if isinstance(exc, configparser.ParsingError):
        return "malformed line (expected 'key = value' or '[section]')"
    if isinstance(exc, configparser.DuplicateOptionError):
        return f"key {exc.option!r} given more than once"
    if isinstance(exc, configparser.DuplicateSectionError):
        return f"section [{exc.section}] given more than once"
    return exc.message if hasattr(exc, "message") else str(exc)


def build_spec(values: dict[str, Any], path: str | Path | None = None,
               where: dict[str, int] | None = None) -> ExperimentSpec:
    where = where or {}
    task_kw = {k: v for k, v in values.items() if k in _TASK_KEYS}
    sim_kw = {k: v for k, v in values.items() if k not in _TASK_KEYS and k not in _EXPERIMENT_KEYS}

    if "strategies" in values:
        strategies = list(values["strategies"])
    elif "strategy" in values:
        strategies = [values["strategy"]]
    else:
        strategies = list(DEFAULT_STRATEGIES)
    if "seeds" in values:
        seeds = list(values["seeds"])
    elif "seed" in values:
        seeds = [values["seed"]]
    else:
        seeds = [0]
    sim_kw.setdefault("strategy", strategies[0])
    sim_kw.setdefault("seed", seeds[0])

    try:
        task = TaskConfig(**task_kw)
    except ValueError as exc:
        raise ConfigValueError(str(exc), path, _first_line(exc, where)) from None
    try:
        base = SimConfig(task=task, **sim_kw)
    except ValueError as exc:
        raise ConfigValueError(str(exc), path, _first_line(exc, where)) from None
    return ExperimentSpec(
        base=base,
        strategies=strategies,
        seeds=seeds,
        output_dir=Path(values.get("output_dir", "results")),
        target_accuracy=values.get("target_accuracy", DEFAULT_TARGET_ACCURACY),
        jobs=values.get("jobs", 1),
    )


def _first_line(exc: Exception, where: dict[str, int]) -> int | None:
    msg = str(exc)
    hits = [line for key, line in where.items() if key in msg and line is not None]
    return min(hits) if hits else None


def parse_config(path: str | Path, overrides: dict[str, Any] | None = None) -> ExperimentSpec:
    """Load, validate and default-fill an experiment config; ``overrides`` win over file keys."""
    values, where = read_values(path)
    for key, value in (overrides or {}).items():
        if key not in KEYS:
            raise UnknownKeyError(f"unknown override {key!r}")
        _, _, check, desc = KEYS[key]
        if not check(value):
            raise ConfigValueError(f"{key} = {value} is out of range: must be {desc}")
        values[key] = value
        where.pop(key, None)
        if key == "strategy":
            values.pop("strategies", None)
        if key == "seed":
            values.pop("seeds", None)
    return build_spec(values, path, where)
