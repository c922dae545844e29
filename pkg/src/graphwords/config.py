"""Pipeline configuration: flat ``key = value`` files with command-line overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .cdk import CdkParams
from .codebook import config_hash

FUSION_MODES = ("selected-surf", "kmeans-baseline")

# Defaults fixed by the method's published protocol; every other default is a choice.
PROTOCOL_KEYS = ("n_seeds", "layers", "alpha", "beta", "iterations", "first_pass_k")

# Keys that never influence artifact contents.
_RUNTIME_KEYS = ("workers",)


class ConfigError(ValueError):
    pass


def _bool(v: str) -> bool:
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


def _int_list(v: str) -> tuple[int, ...]:
    parts = [p for p in v.replace("+", ",").replace(" ", ",").split(",") if p]
    try:
        return tuple(int(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"not an integer list: {v!r}") from exc


@dataclass
class PipelineConfig:
    n_seeds: int = 300
    layers: tuple[int, ...] = (0, 3, 6, 9)
    alpha: float = 0.0001
    beta: float = 0.1
    iterations: int = 2
    first_pass_k: int = 500
    dict_size: int = 1000
    dict_sizes: dict[str, int] = field(default_factory=dict)  # per-tag overrides, key "dict_size.<tag>"
    fusion: str = "selected-surf"
    baseline: bool = True
    subsample_cap: int = 5000
    memory_cap_mb: int = 4096
    rng_seed: int = 0
    kmeans_max_iters: int = 100
    sweep_sizes: tuple[int, ...] = (50, 100, 250, 500, 1000, 2500, 5000)
    on_unencodable: str = "error"
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.n_seeds <= 0:
            raise ConfigError("n_seeds must be positive")
        if not self.layers or len(set(self.layers)) != len(self.layers) or min(self.layers) < 0:
            raise ConfigError(f"invalid layers {self.layers}")
        self.layers = tuple(sorted(self.layers))
        if self.fusion not in FUSION_MODES:
            raise ConfigError(f"fusion must be one of {FUSION_MODES}")
        if self.on_unencodable not in ("error", "skip"):
            raise ConfigError("on_unencodable must be 'error' or 'skip'")
        for key in ("first_pass_k", "dict_size", "subsample_cap", "memory_cap_mb", "kmeans_max_iters", "workers"):
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key} must be positive")
        if any(v <= 0 for v in self.dict_sizes.values()) or any(v <= 0 for v in self.sweep_sizes):
            raise ConfigError("dictionary sizes must be positive")
        try:
            self.cdk
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def cdk(self) -> CdkParams:
        return CdkParams(self.alpha, self.beta, self.iterations)

    @property
    def memory_cap(self) -> int:
        return self.memory_cap_mb * 2 ** 20

    def size_for(self, tag: str) -> int:
        return self.dict_sizes.get(tag, self.dict_size)

    def set(self, key: str, value: str) -> None:
        key = key.strip()
        value = value.strip()
        if key.startswith("dict_size."):
            self.dict_sizes[key.split(".", 1)[1]] = int(value)
            return
        fields = {f.name: f for f in dataclasses.fields(self)}
        if key not in fields or key == "dict_sizes":
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(self, key)
        try:
            if isinstance(current, bool):
                parsed = _bool(value)
            elif isinstance(current, int):
                parsed = int(value)
            elif isinstance(current, float):
                parsed = float(value)
            elif isinstance(current, tuple):
                parsed = _int_list(value)
            else:
                parsed = value
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {value!r}") from exc
        setattr(self, key, parsed)

    def echo(self) -> dict:
        """Canonical, artifact-affecting settings plus which defaults are choices."""
        values = {}
        for f in dataclasses.fields(self):
            if f.name in _RUNTIME_KEYS:
                continue
            v = getattr(self, f.name)
            values[f.name] = list(v) if isinstance(v, tuple) else (dict(sorted(v.items())) if isinstance(v, dict) else v)
        choices = [k for k in values if k not in PROTOCOL_KEYS]
        return {"values": values, "choice_keys": choices}


def parse_config_text(text: str, cfg: Optional[PipelineConfig] = None, source: str = "<config>") -> PipelineConfig:
    cfg = cfg or PipelineConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        try:
            cfg.set(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from exc
    cfg.validate()
    return cfg


def load_config(path=None, overrides: Iterable[str] = ()) -> PipelineConfig:
    cfg = PipelineConfig()
    if path is not None:
        cfg = parse_config_text(Path(path).read_text(), cfg, str(path))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        k, v = item.split("=", 1)
        cfg.set(k, v)
    cfg.validate()
    return cfg


def write_config(cfg: PipelineConfig, path) -> None:
    lines = []
    for k, v in cfg.echo()["values"].items():
        if k == "dict_sizes":
            lines += [f"dict_size.{t} = {s}" for t, s in v.items()]
        elif isinstance(v, list):
            lines.append(f"{k} = {','.join(str(x) for x in v)}")
        else:
            lines.append(f"{k} = {str(v).lower() if isinstance(v, bool) else v}")
    Path(path).write_text("\n".join(lines) + "\n")


def graphs_hash(cfg: PipelineConfig, features_digest: str) -> str:
    return config_hash({"stage": "graphs", "features": features_digest,
                        "n_seeds": cfg.n_seeds, "layers": list(cfg.layers)})


def dicts_hash(cfg: PipelineConfig, graphs_digest: str) -> str:
    return config_hash({"stage": "dicts", "graphs": graphs_digest, **cfg.echo()["values"],
                        "sweep_sizes": None, "on_unencodable": None})
