"""Unified run configuration.

One flat key=value namespace covering tracker, scenario, dataset, and
counting-line settings, loadable from file with flag overrides on top.
Unknown keys are rejected; every key has a documented default taken
from the owning dataclass.
"""

from __future__ import annotations

from dataclasses import fields
from typing import Callable, Dict, Optional, Tuple

from .core import RoILine
from .dataset_gen import DatasetSpec
from .io_formats import read_key_value
from .simulator import SimScenario
from .tracking import TrackerConfig


class ConfigError(ValueError):
    """Bad key, malformed value, or failed cross-field validation."""


def _parse_int(s: str) -> int:
    return int(s)


def _parse_float(s: str) -> float:
    return float(s)


def _parse_str(s: str) -> str:
    return s


def _parse_opt_str(s: str) -> Optional[str]:
    return s or None


def _parse_int_tuple(s: str) -> Tuple[int, ...]:
    return tuple(int(p) for p in s.split(",") if p != "")


def _parse_float_pair(s: str) -> Tuple[float, float]:
    parts = s.split(",")
    if len(parts) != 2:
        raise ValueError(f"expected two comma-separated numbers, got {s!r}")
    return float(parts[0]), float(parts[1])


def _parse_int_pair(s: str) -> Tuple[int, int]:
    parts = s.split(",")
    if len(parts) != 2:
        raise ValueError(f"expected two comma-separated integers, got {s!r}")
    return int(parts[0]), int(parts[1])


def _parse_rgb(s: str) -> Tuple[int, int, int]:
    parts = s.split(",")
    if len(parts) != 3:
        raise ValueError(f"expected three comma-separated bytes, got {s!r}")
    return int(parts[0]), int(parts[1]), int(parts[2])


def _parse_seed_size(s: str) -> Tuple[Tuple[int, float, float], ...]:
    """Grammar: `class:WxH` entries separated by semicolons."""
    rows = []
    for chunk in s.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        cid_s, _, dims = chunk.partition(":")
        w_s, _, h_s = dims.partition("x")
        if not w_s or not h_s:
            raise ValueError(f"expected class:WxH, got {chunk!r}")
        rows.append((int(cid_s), float(w_s), float(h_s)))
    if not rows:
        raise ValueError("seed_size must list at least one class")
    return tuple(rows)


def _fmt_plain(v) -> str:
    return "" if v is None else str(v)


def _fmt_seq(v) -> str:
    return ",".join(str(x) for x in v)


def _fmt_seed_size(v) -> str:
    return ";".join(f"{c}:{w}x{h}" for c, w, h in v)


# key -> (parser, formatter, [(section, attr)])
_SPECIAL: Dict[str, Tuple[Callable, Callable, list]] = {
    "rng_seed": (_parse_int, _fmt_plain, [("scenario", "rng_seed"), ("dataset", "rng_seed")]),
    "seed_size": (_parse_seed_size, _fmt_seed_size, [("scenario", "seed_size")]),
    "clutter_conf_range": (_parse_float_pair, _fmt_seq, [("scenario", "clutter_conf_range")]),
    "image_size": (_parse_int_pair, _fmt_seq, [("dataset", "image_size")]),
    "kernels_per_image": (_parse_int_pair, _fmt_seq, [("dataset", "kernels_per_image")]),
    "background_color": (_parse_rgb, _fmt_seq, [("dataset", "background_color")]),
    "background_path": (_parse_opt_str, _fmt_plain, [("dataset", "background_path")]),
    "classes": (_parse_int_tuple, _fmt_seq, [("dataset", "classes")]),
}

_SECTION_TYPES = {
    "tracker": TrackerConfig,
    "scenario": SimScenario,
    "dataset": DatasetSpec,
    "line": RoILine,
}

_SCALAR_PARSERS = {int: _parse_int, float: _parse_float, str: _parse_str}


def _build_registry():
    registry: Dict[str, Tuple[Callable, Callable, list]] = {}
    defaults: Dict[str, object] = {}
    for section, cls in _SECTION_TYPES.items():
        instance = cls()
        for f in fields(cls):
            default = getattr(instance, f.name)
            key = f.name
            if key in _SPECIAL:
                parser, formatter, targets = _SPECIAL[key]
                if key not in registry:
                    registry[key] = (parser, formatter, targets)
                    defaults[key] = default
                continue
            if key in registry:
                raise RuntimeError(f"config key collision: {key}")
            parser = _SCALAR_PARSERS[type(default)]
            registry[key] = (parser, _fmt_plain, [(section, key)])
            defaults[key] = default
    return registry, defaults


_REGISTRY, _DEFAULTS = _build_registry()


class RunConfig:
    """Effective configuration: defaults, then file, then overrides."""

    def __init__(self, values: Optional[Dict[str, object]] = None):
        self._values = dict(_DEFAULTS)
        if values:
            for key, value in values.items():
                if key not in _REGISTRY:
                    raise ConfigError(f"unknown config key {key!r}")
                self._values[key] = value

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        cfg = cls()
        cfg.apply_file(path)
        return cfg

    def apply_file(self, path) -> None:
        for key, raw in read_key_value(path).items():
            self.set_raw(key, raw)

    def set_raw(self, key: str, raw: str) -> None:
        if key not in _REGISTRY:
            raise ConfigError(f"unknown config key {key!r}")
        parser = _REGISTRY[key][0]
        try:
            self._values[key] = parser(raw)
        except ValueError as exc:
            raise ConfigError(f"config key {key}: {exc}") from None

    def set_value(self, key: str, value) -> None:
        if key not in _REGISTRY:
            raise ConfigError(f"unknown config key {key!r}")
        self._values[key] = value

    def get(self, key: str):
        if key not in _REGISTRY:
            raise ConfigError(f"unknown config key {key!r}")
        return self._values[key]

    def _section_kwargs(self, section: str) -> Dict[str, object]:
        out = {}
        for key, (_, _, targets) in _REGISTRY.items():
            for sec, attr in targets:
                if sec == section:
                    out[attr] = self._values[key]
        return out

    def tracker_config(self) -> TrackerConfig:
        try:
            return TrackerConfig(**self._section_kwargs("tracker"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def scenario(self) -> SimScenario:
        try:
            return SimScenario(**self._section_kwargs("scenario"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def dataset_spec(self) -> DatasetSpec:
        try:
            return DatasetSpec(**self._section_kwargs("dataset"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def roi_line(self) -> RoILine:
        try:
            return RoILine(**self._section_kwargs("line"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def echo(self) -> Dict[str, str]:
        """Every effective key, serialized, in registry order."""
        return {
            key: _REGISTRY[key][1](self._values[key]) for key in _REGISTRY
        }


def config_keys() -> Tuple[str, ...]:
    return tuple(_REGISTRY)
