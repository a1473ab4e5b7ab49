"""TOML configuration loading with strict key checking, and run manifests.

Every dataclass field is a config key; unknown keys are rejected with the
dotted path of the offending entry. See ``configs/`` for annotated examples.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import sys
import time
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from . import __version__

SEED_ENV = "SYMPTOM_BENCH_SEED"


class ConfigError(ValueError):
    pass


def read_toml(path: str | Path | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} not found")
    try:
        return tomllib.loads(p.read_text())
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"{p}: {err}") from None


def check_keys(section: dict, allowed, where: str) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        dotted = ", ".join(f"{where}.{k}" if where else k for k in unknown)
        raise ConfigError(f"unknown config key(s): {dotted}")


def build(cls, data: dict | None, where: str, **overrides):
    """Instantiate dataclass ``cls`` from ``data``, recursing into dataclass fields."""
    data = dict(data or {})
    fields = {f.name: f for f in dataclasses.fields(cls)}
    check_keys(data, fields, where)
    kwargs: dict[str, Any] = {}
    for name, value in data.items():
        default = fields[name].default_factory() if fields[name].default_factory is not dataclasses.MISSING else fields[name].default
        if dataclasses.is_dataclass(default) and isinstance(value, dict):
            value = build(type(default), value, f"{where}.{name}")
        elif isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{where}: {err}") from None


def resolve_seed(cli_seed: int | None, config_seed: int | None, default: int = 0) -> int:
    """``--seed`` beats the config file, which beats ``$SYMPTOM_BENCH_SEED``."""
    if cli_seed is not None:
        return int(cli_seed)
    if config_seed is not None:
        return int(config_seed)
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={env!r} is not an integer") from None
    return default


def digest(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str).encode()
    return hashlib.sha256(blob).hexdigest()


@dataclasses.dataclass
class RunManifest:
    command: str
    config_digest: str
    config: dict
    inputs: dict
    outputs: dict
    seed: int
    tool_version: str = __version__
    started_at: float = dataclasses.field(default_factory=time.time)
    duration_s: float = 0.0

    def finish(self, out_dir: str | Path) -> Path:
        self.duration_s = time.time() - self.started_at
        path = Path(out_dir) / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True, default=str))
        return path
