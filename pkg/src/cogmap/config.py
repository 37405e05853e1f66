"""Line-oriented run configuration.

::

    [scene]
    object_count = 4
    seed = 7

    [map]
    resolution = 0.04

    [cdif]
    layers = 2

    [run]
    verbosity = 1

Every key is optional; unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, replace

from .errors import ConfigurationError
from .mapping import MapConfig
from .scene import SceneSpec

CDIF_INITS = ("random", "zero", "zero-ffn")


@dataclass(frozen=True)
class CdifConfig:
    layers: int = 2
    heads: int = 4
    seed: int = 0
    init: str = "random"
    frequency_base: float = 10000.0
    coordinate_scale: float = 1.0
    map_residual: bool = True

    def __post_init__(self):
        if self.layers < 1:
            raise ConfigurationError("cdif.layers must be >= 1")
        if self.heads < 1:
            raise ConfigurationError("cdif.heads must be >= 1")
        if self.init not in CDIF_INITS:
            raise ConfigurationError(f"cdif.init must be one of {', '.join(CDIF_INITS)}")


@dataclass(frozen=True)
class RunSettings:
    bundle: str = ""
    map: str = ""
    params: str = ""
    truth: str = ""
    out: str = ""
    verbosity: int = 0


@dataclass(frozen=True)
class RunConfig:
    scene: SceneSpec = field(default_factory=SceneSpec)
    map: MapConfig = field(default_factory=MapConfig)
    cdif: CdifConfig = field(default_factory=CdifConfig)
    run: RunSettings = field(default_factory=RunSettings)


_SECTIONS = {"scene": SceneSpec, "map": MapConfig, "cdif": CdifConfig, "run": RunSettings}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(section: str, key: str, raw: str, default):
    where = f"[{section}] {key}"
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() in _TRUE:
            return True
        if raw.lower() in _FALSE:
            return False
        raise ConfigurationError(f"{where}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw, 0)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigurationError(f"{where}: {exc}") from exc
    return raw


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, empty_lines_in_values=False)
    parser.optionxform = str  # keys are case-sensitive
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from exc

    sections = {}
    for name in parser.sections():
        cls = _SECTIONS.get(name)
        if cls is None:
            raise ConfigurationError(f"unknown config section [{name}]")
        defaults = {f.name: f.default for f in fields(cls)}
        values = {}
        for key, raw in parser.items(name):
            if key not in defaults:
                raise ConfigurationError(f"unknown key {key!r} in [{name}]")
            values[key] = _coerce(name, key, raw, defaults[key])
        sections[name] = cls(**values)
    return RunConfig(**sections)


def load_config(path: str | os.PathLike | None) -> RunConfig:
    if not path:
        return RunConfig()
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def with_seed(cfg: RunConfig, section: str, seed: int | None) -> RunConfig:
    if seed is None:
        return cfg
    return replace(cfg, **{section: replace(getattr(cfg, section), seed=seed)})
