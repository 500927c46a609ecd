"""Run configuration: INI or JSON files merged with command-line overrides."""

from __future__ import annotations

import configparser
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

from .estimators.report import config_hash
from .lattice import Geometry, Params

OUTPUT_ENV = "CPDRE_OUTPUT_DIR"


class ConfigError(ValueError):
    """A configuration violates a precondition of the requested run."""


def parse_sites(text: Optional[str], d: int) -> list:
    """``"0;1;2"`` or ``"0,0;1,0"`` into a list of ``d``-tuples; empty text is the empty set."""
    if text is None or not str(text).strip():
        return []
    out = []
    for chunk in str(text).split(";"):
        coords = tuple(int(v) for v in chunk.split(","))
        if len(coords) != d:
            raise ConfigError(f"site {chunk!r} does not have {d} coordinates")
        out.append(coords)
    return out


def parse_floats(text) -> list:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",") if v.strip()]


def parse_shard(text: Optional[str]) -> tuple:
    """``"i/k"`` with ``0 <= i < k``."""
    if not text:
        return 0, 1
    try:
        i, k = (int(v) for v in str(text).split("/"))
    except ValueError:
        raise ConfigError(f"shard must look like i/k, got {text!r}") from None
    if not 0 <= i < k:
        raise ConfigError(f"shard index must satisfy 0 <= i < k, got {text!r}")
    return i, k


def shard_range(replicates: int, shard: tuple) -> tuple:
    i, k = shard
    return replicates * i // k, replicates * (i + 1) // k


def load_config_file(path) -> dict:
    """Flat option mapping from an INI file (any sections) or an equivalent JSON object."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    if path.suffix.lower() == ".json":
        data = json.loads(text)
        flat = {}
        for key, value in data.items():
            if isinstance(value, Mapping):
                flat.update(value)
            else:
                flat[key] = value
        return {k.replace("-", "_"): v for k, v in flat.items()}
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from None
    flat = dict(parser.defaults())
    for section in parser.sections():
        flat.update({k: v for k, v in parser.items(section, raw=True)})
    return {k.replace("-", "_"): v for k, v in flat.items()}


@dataclass(frozen=True)
class RunConfig:
    """Resolved options of one CLI run."""

    command: str
    options: dict
    output_dir: Path
    workers: int = 1
    shard: tuple = (0, 1)
    sources: dict = field(default_factory=dict, compare=False)

    def __getattr__(self, name: str) -> Any:
        try:
            return self.options[name]
        except KeyError:
            raise AttributeError(name) from None

    @property
    def hash(self) -> str:
        return config_hash({"command": self.command, **self.options})

    def params(self) -> Params:
        try:
            return Params(int(self.options["d"]), float(self.options["alpha"]), float(self.options["beta"]),
                          float(self.options["delta"]))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def geometry(self) -> Geometry:
        d = int(self.options["d"])
        periodic = _as_bool(self.options.get("periodic", False))
        sites = self.options.get("sites")
        if sites not in (None, ""):
            n = int(sites)
            if n < 1:
                raise ConfigError("sites must be positive")
            if d != 1:
                raise ConfigError("sites describes a line; use radius for d > 1")
            return Geometry.line(n, periodic)
        radius = int(self.options["radius"])
        if radius < 0:
            raise ConfigError("radius must be nonnegative")
        return Geometry.cube(radius, d, periodic)

    def to_json(self) -> str:
        return json.dumps({"command": self.command, "options": self.options, "config_hash": self.hash},
                          sort_keys=True)


def _as_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    return str(value).strip().lower() in ("1", "true", "yes", "on")


def resolve(command: str, defaults: Mapping, file_options: Mapping, cli_options: Mapping) -> RunConfig:
    """Merge ``defaults < config file < command line`` into a RunConfig."""
    options = dict(defaults)
    sources = {k: "default" for k in defaults}
    for k, v in file_options.items():
        if k in defaults:
            options[k] = v
            sources[k] = "file"
    for k, v in cli_options.items():
        if v is not None and k in defaults:
            options[k] = v
            sources[k] = "cli"
    meta = {k: options.pop(k) for k in ("output_dir", "workers", "shard") if k in options}
    out = meta.get("output_dir") or os.environ.get(OUTPUT_ENV) or "."
    workers = int(meta.get("workers") or 1)
    if workers < 1:
        raise ConfigError("workers must be positive")
    return RunConfig(command, options, Path(out), workers, parse_shard(meta.get("shard")), sources)
