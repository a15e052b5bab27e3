"""Run configuration: flat ``key=value`` files layered under command-line flags."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from typing import Any, Mapping

from .evaluation import FULL_PROFILE, SHORT_PROFILE
from .expand import ExpansionConfig, TrainOptions


class ConfigError(ValueError):
    pass


# short names accepted in files, flags and sweep grids
ALIASES = {"M": "feedback_docs", "N": "expansion_terms", "m": "feedback_docs", "n": "expansion_terms"}


@dataclass(frozen=True)
class RunConfig:
    # paths
    corpus: str = ""
    index: str = ""
    queries: str = ""
    qrels: str = ""
    embeddings: str = ""
    stopwords: str = ""
    labels: str = ""
    pointer: str = ""
    ranker: str = ""
    run: str = ""
    baseline: str = ""
    report: str = ""
    out: str = ""
    # expansion
    feedback_docs: int = 10
    expansion_terms: int = 60
    beta: float = 0.1
    gamma: float = 0.5
    alpha: float = 1.0
    # training
    seed: int = 0
    dim: int = 64
    heads: int = 4
    pointer_epochs: int = 10
    pointer_lr: float = 1e-2
    ranker_hidden: int = 32
    ranker_epochs: int = 200
    ranker_lr: float = 0.01
    pairs_per_query: int = 64
    max_len: int = 256
    # evaluation / execution
    mode: str = "full"
    folds: int = 5
    threads: int = 1
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if self.mode not in ("full", "short"):
            raise ConfigError(f"mode must be 'full' or 'short', got {self.mode!r}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    @property
    def profile(self) -> dict:
        return FULL_PROFILE if self.mode == "full" else SHORT_PROFILE

    def expansion(self) -> ExpansionConfig:
        return ExpansionConfig(
            self.feedback_docs, self.expansion_terms, self.beta, self.gamma, self.alpha, self.profile["depth"]
        )

    def training(self) -> TrainOptions:
        return TrainOptions(
            seed=self.seed,
            heads=self.heads,
            pointer_epochs=self.pointer_epochs,
            pointer_lr=self.pointer_lr,
            ranker_hidden=self.ranker_hidden,
            ranker_epochs=self.ranker_epochs,
            ranker_lr=self.ranker_lr,
            pairs_per_query=self.pairs_per_query,
            max_len=self.max_len,
        )

    def with_values(self, values: Mapping[str, Any]) -> "RunConfig":
        return replace(self, **coerce(values))


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def canonical(key: str) -> str:
    key = key.strip().replace("-", "_")
    key = ALIASES.get(key, key)
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    return key


def coerce(values: Mapping[str, Any]) -> dict:
    out = {}
    for k, v in values.items():
        k = canonical(k)
        typ = _TYPES[k]
        try:
            if typ == "int":
                out[k] = int(v)
            elif typ == "float":
                out[k] = float(v)
            else:
                out[k] = str(v)
        except ValueError as exc:
            raise ConfigError(f"bad value for {k}: {v!r}") from exc
    return out


def parse_config_file(path) -> dict[str, str]:
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            out[canonical(key)] = val.strip()
    return out


def resolve(config_path: str | None, flags: Mapping[str, Any]) -> RunConfig:
    """Built-in defaults, overridden by the file, overridden by flags."""
    cfg = RunConfig()
    if config_path:
        cfg = cfg.with_values(parse_config_file(config_path))
    set_flags = {k: v for k, v in flags.items() if v is not None}
    return cfg.with_values(set_flags)


def parse_grid(specs: list[str]) -> dict[str, list]:
    """``beta=0,0.1`` style specs (several per argument with ``;``)."""
    grid: dict[str, list] = {}
    for spec in specs:
        for part in spec.split(";"):
            if not part.strip():
                continue
            key, sep, vals = part.partition("=")
            if not sep:
                raise ConfigError(f"bad grid spec {part!r}; expected key=v1,v2")
            key = canonical(key)
            if key not in {"feedback_docs", "expansion_terms", "beta", "gamma", "alpha"}:
                raise ConfigError(f"cannot sweep {key!r}")
            grid[key] = [coerce({key: v})[key] for v in vals.split(",") if v.strip()]
            if not grid[key]:
                raise ConfigError(f"empty value list for {key!r}")
    if not grid:
        raise ConfigError("sweep grid is empty")
    return grid
