"""Run configuration: one declarative YAML document.

Secrets are referenced with ${ENV_VAR} placeholders and resolved at load
time; the manifest digest is computed over the raw (uninterpolated)
document, so keys never influence or enter manifests.
"""
from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .cassette import CassetteMode
from .tools import ALL_TOOLS, expand_tool_groups

_ENV_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


class ConfigError(ValueError):
    pass


def _interpolate(value: Any) -> Any:
    if isinstance(value, str):
        return _ENV_RE.sub(lambda m: os.environ.get(m.group(1), ""), value)
    if isinstance(value, dict):
        return {k: _interpolate(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_interpolate(v) for v in value]
    return value


def config_digest(raw: dict[str, Any]) -> str:
    canon = json.dumps(raw, sort_keys=True, ensure_ascii=False, default=str)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


@dataclass
class RunConfig:
    instances_path: str
    policy: str = "agentic"  # agentic | fixed
    model: str = "scripted:"
    budget: int = 10
    tools: list[str] | None = None  # None = all nine
    cassette_mode: str = "live"  # live | record | replay
    cassette_path: str | None = None
    sandbox_url: str | None = None
    seed: int = 0
    output_dir: str = "runs/out"
    concurrency: int | None = None
    level_filter: str | None = None
    repeats: int = 1
    visit_summary_limit: int = 2000
    digest: str = ""
    raw: dict[str, Any] = field(default_factory=dict, repr=False)

    def validate(self) -> None:
        if self.policy not in ("agentic", "fixed"):
            raise ConfigError(f"policy must be agentic or fixed, got {self.policy!r}")
        if self.budget < 1:
            raise ConfigError(f"budget must be >= 1, got {self.budget}")
        if self.repeats < 1:
            raise ConfigError(f"repeats must be >= 1, got {self.repeats}")
        try:
            CassetteMode(self.cassette_mode)
        except ValueError as exc:
            raise ConfigError(f"unknown cassette mode: {self.cassette_mode!r}") from exc
        if self.cassette_mode == "replay":
            if not self.cassette_path or not Path(self.cassette_path).exists():
                raise ConfigError(
                    f"replay mode requires an existing cassette file, got "
                    f"{self.cassette_path!r}"
                )
        if self.level_filter not in (None, "L1", "L2"):
            raise ConfigError(f"level_filter must be L1 or L2, got {self.level_filter!r}")
        if self.policy == "agentic":
            if self.tools is not None and not self.tools:
                raise ConfigError("agentic runs need a non-empty tool set")
        if self.tools is not None:
            self.tools = expand_tool_groups(self.tools)
            unknown = [t for t in self.tools if t not in ALL_TOOLS]
            if unknown:
                raise ConfigError(f"unknown tools in toggle set: {unknown}")

    @property
    def enabled_tools(self) -> frozenset[str] | None:
        return None if self.tools is None else frozenset(self.tools)


_FIELD_ALIASES = {"instances": "instances_path", "output": "output_dir"}


def run_config_from_dict(raw: dict[str, Any]) -> RunConfig:
    data = _interpolate(raw)
    kwargs: dict[str, Any] = {}
    cassette = data.pop("cassette", None)
    if isinstance(cassette, dict):
        kwargs["cassette_mode"] = cassette.get("mode", "live")
        kwargs["cassette_path"] = cassette.get("path")
    for key, value in data.items():
        key = _FIELD_ALIASES.get(key, key)
        if key in RunConfig.__dataclass_fields__ and key not in ("digest", "raw"):
            kwargs[key] = value
    if "instances_path" not in kwargs:
        raise ConfigError("config is missing instances/instances_path")
    cfg = RunConfig(**kwargs)
    cfg.digest = config_digest(raw)
    cfg.raw = raw
    cfg.validate()
    return cfg


def load_run_config(path: str | Path) -> RunConfig:
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} is not a mapping")
    return run_config_from_dict(raw)


@dataclass
class ForgeConfig:
    roots_path: str
    depth: int = 3
    seed: int = 0
    generator: str = "scripted:"
    output_dir: str = "forge/out"
    cassette_mode: str = "live"
    cassette_path: str | None = None
    solvability_runs: int = 4
    id_offset: int = 10000
    digest: str = ""
    raw: dict[str, Any] = field(default_factory=dict, repr=False)

    def validate(self) -> None:
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.solvability_runs < 0:
            raise ConfigError("solvability_runs must be >= 0")
        if self.cassette_mode == "replay":
            if not self.cassette_path or not Path(self.cassette_path).exists():
                raise ConfigError("replay mode requires an existing cassette file")


def forge_config_from_dict(raw: dict[str, Any]) -> ForgeConfig:
    data = _interpolate(raw)
    kwargs: dict[str, Any] = {}
    cassette = data.pop("cassette", None)
    if isinstance(cassette, dict):
        kwargs["cassette_mode"] = cassette.get("mode", "live")
        kwargs["cassette_path"] = cassette.get("path")
    for key, value in data.items():
        key = {"roots": "roots_path", "output": "output_dir"}.get(key, key)
        if key in ForgeConfig.__dataclass_fields__ and key not in ("digest", "raw"):
            kwargs[key] = value
    if "roots_path" not in kwargs:
        raise ConfigError("config is missing roots/roots_path")
    cfg = ForgeConfig(**kwargs)
    cfg.digest = config_digest(raw)
    cfg.raw = raw
    cfg.validate()
    return cfg


def load_forge_config(path: str | Path) -> ForgeConfig:
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} is not a mapping")
    return forge_config_from_dict(raw)
