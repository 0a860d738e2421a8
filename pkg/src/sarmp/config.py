"""Layered run configuration: defaults < config file < SARMP_* env vars < flags.

The config file is flat ``key = value`` text (a TOML subset: no tables)::

    # umls.toml
    data = "data/umls"
    k = 10
    learning_rate = 0.01
    aggregator = "multi_head_attention"

Keys are the field names of :class:`HyperParams` and :class:`TrainConfig`
plus ``data``, ``out`` and ``threads``. The same names, upper-cased with a
``SARMP_`` prefix, are read from the environment.
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import tomli

from .model import HyperParams
from .training import TrainConfig

ENV_PREFIX = "SARMP_"
SNAPSHOT = "run_config.toml"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    hyper: HyperParams = field(default_factory=HyperParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: str | None = None
    out: str | None = None
    threads: int | None = None

    def flat(self) -> dict:
        out = {**asdict(self.hyper), **asdict(self.train)}
        for k in ("data", "out", "threads"):
            if getattr(self, k) is not None:
                out[k] = getattr(self, k)
        return out

    def validate(self):
        try:
            self.hyper.validate()
            self.train.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.threads is not None and self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        return self


def _types() -> dict[str, type]:
    out = {}
    for cls in (HyperParams, TrainConfig):
        for f in fields(cls):
            out[f.name] = type(getattr(cls(), f.name))
    out.update(data=str, out=str, threads=int)
    return out


KEYS = _types()


def _coerce(key: str, value, source: str):
    kind = KEYS[key]
    try:
        if kind is bool:
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind is int and isinstance(value, float) and not value.is_integer():
            raise ValueError(value)
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{source}: {key} expects {kind.__name__}, got {value!r}") from None


def read_config_file(path) -> dict:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    out = {}
    for key, value in raw.items():
        if isinstance(value, dict):
            raise ConfigError(f"{path}: tables are not supported ([{key}])")
        if key not in KEYS:
            raise ConfigError(f"{path}: unknown key {key!r}")
        out[key] = _coerce(key, value, str(path))
    return out


def read_env(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for key in KEYS:
        name = ENV_PREFIX + key.upper()
        if name in environ:
            out[key] = _coerce(key, environ[name], name)
    return out


def resolve(config_file=None, flags: dict | None = None, environ=None) -> RunConfig:
    """Merge the layers; ``flags`` entries that are ``None`` are treated as unset."""
    merged: dict = {}
    if config_file is not None:
        merged.update(read_config_file(config_file))
    merged.update(read_env(environ))
    for key, value in (flags or {}).items():
        if value is None:
            continue
        if key not in KEYS:
            raise ConfigError(f"unknown option {key!r}")
        merged[key] = _coerce(key, value, f"--{key.replace('_', '-')}")
    hyper = HyperParams(**{k: v for k, v in merged.items() if k in HyperParams.__dataclass_fields__})
    train = TrainConfig(**{k: v for k, v in merged.items() if k in TrainConfig.__dataclass_fields__})
    return RunConfig(hyper, train, merged.get("data"), merged.get("out"), merged.get("threads"))


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    return repr(v)


def dumps(config: RunConfig) -> str:
    return "".join(f"{k} = {_toml_value(v)}\n" for k, v in config.flat().items())


def write_snapshot(config: RunConfig, out_dir) -> Path:
    path = Path(out_dir) / SNAPSHOT
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(config), encoding="utf-8")
    return path
