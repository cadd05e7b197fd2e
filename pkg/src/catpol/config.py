"""Flat ``key = value`` run configuration files.

One assignment per line, ``#`` starts a comment, whitespace is free. Keys are
snake_case; list values are comma separated. Unknown keys are rejected so a
typo cannot silently fall back to a default. The same format configures
training runs, estimator-lab grids, and capacity sweeps.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

from .envs import ENV_NAMES
from .estlab import ESTIMATORS, LINEAR, QUADRATIC
from .trainer import METHODS, TrainConfig


class ConfigError(Exception):
    """Malformed config text or values; maps to exit code 2 in the CLI."""


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config_file(path: str | Path) -> dict[str, str]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text(encoding="utf-8"))


def _convert(key: str, raw: str, kind):
    try:
        if kind is bool:
            if raw.lower() in ("true", "yes", "1"):
                return True
            if raw.lower() in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"key {key!r}: cannot parse {raw!r} as {kind.__name__}") from None


def _int_list(key: str, raw: str) -> tuple[int, ...]:
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if not parts:
        raise ConfigError(f"key {key!r}: empty list")
    return tuple(_convert(key, p, int) for p in parts)


def _float_list(key: str, raw: str) -> tuple[float, ...]:
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if not parts:
        raise ConfigError(f"key {key!r}: empty list")
    return tuple(_convert(key, p, float) for p in parts)


def _str_list(key: str, raw: str) -> tuple[str, ...]:
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if not parts:
        raise ConfigError(f"key {key!r}: empty list")
    return tuple(parts)


DEFAULT_SEEDS = (0, 1, 2, 3, 4)


@dataclass
class RunConfig:
    """A full training-run description (one run per seed)."""

    env: str = "two_goal"
    method: str = "ste"
    n_factors: int = 4
    n_classes: int = 4
    hidden: int = 64
    temperature: float = 2.0
    init_log_std: float = 0.0
    gamma: float = 0.99
    lam: float = 0.95
    horizon: int = 16
    batch: int = 32
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    updates: int = 3000
    eval_every: int = 200
    eval_episodes: int = 10
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    out_dir: str = "runs/out"

    _SCALARS = {
        "env": str, "method": str, "n_factors": int, "n_classes": int,
        "hidden": int, "temperature": float, "init_log_std": float,
        "gamma": float, "lam": float,
        "horizon": int, "batch": int, "actor_lr": float, "critic_lr": float,
        "updates": int, "eval_every": int, "eval_episodes": int, "out_dir": str,
    }

    @classmethod
    def from_mapping(cls, raw: dict[str, str], extra_keys: tuple[str, ...] = ()) -> "RunConfig":
        known = set(cls._SCALARS) | {"seeds"} | set(extra_keys)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, kind in cls._SCALARS.items():
            if key in raw:
                kwargs[key] = _convert(key, raw[key], kind)
        if "seeds" in raw:
            kwargs["seeds"] = _int_list("seeds", raw["seeds"])
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.env not in ENV_NAMES:
            raise ConfigError(f"unknown env {self.env!r}; known: {ENV_NAMES}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; known: {METHODS}")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        try:
            self.to_train_config(self.seeds[0])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def to_train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            env=self.env, method=self.method, n_factors=self.n_factors,
            n_classes=self.n_classes, hidden=self.hidden, temperature=self.temperature,
            init_log_std=self.init_log_std, gamma=self.gamma, lam=self.lam, horizon=self.horizon, batch=self.batch,
            actor_lr=self.actor_lr, critic_lr=self.critic_lr, updates=self.updates,
            eval_every=self.eval_every, eval_episodes=self.eval_episodes, seed=seed,
        )

    def render(self, seeds: tuple[int, ...] | None = None) -> str:
        """Canonical text form; parsing it reproduces this config."""
        lines = []
        for key in self._SCALARS:
            lines.append(f"{key} = {getattr(self, key)}")
        chosen = self.seeds if seeds is None else seeds
        lines.append("seeds = " + ", ".join(str(s) for s in chosen))
        return "\n".join(lines) + "\n"


@dataclass
class EstlabConfig:
    """Grid description for the estimator lab."""

    methods: tuple[str, ...] = ESTIMATORS
    temperatures: tuple[float, ...] = (0.5, 2.0)
    seeds: tuple[int, ...] = (0, 1, 2)
    n_factors: int = 2
    n_classes: int = 3
    objective: str = LINEAR
    n_samples: int = 100_000
    out_dir: str = "runs/estlab"

    @classmethod
    def from_mapping(cls, raw: dict[str, str]) -> "EstlabConfig":
        known = {"methods", "temperatures", "seeds", "n_factors", "n_classes",
                 "objective", "n_samples", "out_dir"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        if "methods" in raw:
            kwargs["methods"] = _str_list("methods", raw["methods"])
        if "temperatures" in raw:
            kwargs["temperatures"] = _float_list("temperatures", raw["temperatures"])
        if "seeds" in raw:
            kwargs["seeds"] = _int_list("seeds", raw["seeds"])
        for key in ("n_factors", "n_classes", "n_samples"):
            if key in raw:
                kwargs[key] = _convert(key, raw[key], int)
        for key in ("objective", "out_dir"):
            if key in raw:
                kwargs[key] = raw[key]
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        for m in self.methods:
            if m not in ESTIMATORS:
                raise ConfigError(f"unknown estimator {m!r}; known: {ESTIMATORS}")
        if self.objective not in (LINEAR, QUADRATIC):
            raise ConfigError(f"objective must be {LINEAR!r} or {QUADRATIC!r}")
        if not self.seeds or not self.temperatures or not self.methods:
            raise ConfigError("methods, temperatures and seeds must be non-empty")
        if self.n_samples < 1000:
            raise ConfigError("n_samples must be at least 1000")
        if self.n_classes ** self.n_factors > 1296:
            raise ConfigError("n_classes ** n_factors exceeds the exact-enumeration cap 1296")


@dataclass
class SweepConfig:
    """A capacity sweep: the same run repeated across (n_factors x n_classes) cells."""

    base: RunConfig = field(default_factory=RunConfig)
    cells: tuple[str, ...] = ("4x4", "1x64")

    @classmethod
    def from_mapping(cls, raw: dict[str, str]) -> "SweepConfig":
        raw = dict(raw)
        cells = _str_list("cells", raw.pop("cells")) if "cells" in raw else cls.__dataclass_fields__["cells"].default
        base = RunConfig.from_mapping(raw)
        cfg = cls(base=base, cells=tuple(cells))
        for cell in cfg.cells:
            parse_cell(cell)
        return cfg


def parse_cell(label: str) -> tuple[int, int]:
    """'NxM' -> (n_factors, n_classes)."""
    parts = label.lower().split("x")
    if len(parts) != 2:
        raise ConfigError(f"cell label must look like '4x4', got {label!r}")
    try:
        n, m = int(parts[0]), int(parts[1])
    except ValueError:
        raise ConfigError(f"cell label must be two integers, got {label!r}") from None
    if n < 1 or m < 2:
        raise ConfigError(f"cell {label!r} needs n_factors >= 1 and n_classes >= 2")
    return n, m


def resolve_out_dir(configured: str) -> Path:
    """Output directory, overridable by the CATPOL_OUT environment variable."""
    return Path(os.environ.get("CATPOL_OUT", configured))
