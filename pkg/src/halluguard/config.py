"""Run configuration assembled from an optional TOML file, env vars and CLI flags.

TOML layout::

    [run]
    prompts = "prompts.txt"
    out = "runs.jsonl"
    backend = "replay"          # live | replay | mock
    replay_dir = "fixtures/"
    workers = 4
    weights = [0.25, 0.25, 0.25, 0.25]
    na = 3

    [endpoint]                  # live backend only
    url = "https://.../v1/chat/completions"
    max_retries = 3

    [agents.front_end]
    model = "gpt-3.5-turbo"
    instruction = "..."
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import tomli

from .agents import ROLES, AgentRole, PipelineConfig, default_roles
from .backend import EndpointProfile
from .kpi import Lexicon
from .scoring import DEFAULT_NA, WeightVector

BACKEND_MODES = ("live", "replay", "mock")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    prompts: Path | None = None
    out: Path = Path("runs.jsonl")
    backend: str = "mock"
    replay_dir: Path | None = None
    record_dir: Path | None = None
    workers: int = 4
    weights: WeightVector = field(default_factory=WeightVector)
    na: int = DEFAULT_NA
    lexicon: Path | None = None
    strict_envelope: bool = False
    judge_fallback: bool = True
    normalize_fgr: bool = True
    zero_based: bool = False
    envelope_every_hop: bool = False
    roles: dict[str, AgentRole] = field(default_factory=default_roles)
    endpoint: dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        if self.backend not in BACKEND_MODES:
            raise ConfigError(f"backend must be one of {BACKEND_MODES}, got {self.backend!r}")
        if self.prompts is None:
            raise ConfigError("no prompt corpus given (--prompts)")
        if not self.prompts.is_file():
            raise ConfigError(f"prompt corpus not found: {self.prompts}")
        if self.backend == "replay" and (self.replay_dir is None or not self.replay_dir.is_dir()):
            raise ConfigError(f"replay backend needs an existing --replay-dir (got {self.replay_dir})")
        if self.lexicon is not None and not self.lexicon.is_file():
            raise ConfigError(f"lexicon file not found: {self.lexicon}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.na < 1:
            raise ConfigError("na must be >= 1")

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(
            roles=dict(self.roles),
            weights=self.weights,
            na=self.na,
            strict_envelope=self.strict_envelope,
            judge_fallback=self.judge_fallback,
            lexicon=Lexicon.load(self.lexicon) if self.lexicon else None,
            normalize_fgr=self.normalize_fgr,
            envelope_every_hop=self.envelope_every_hop,
        )

    def endpoint_profile(self, env: Mapping[str, str] | None = None) -> EndpointProfile:
        env = os.environ if env is None else env
        opts = dict(self.endpoint)
        key_env = opts.pop("api_key_env", "HG_API_KEY")
        opts.setdefault("api_key", env.get(key_env, ""))
        try:
            return EndpointProfile.from_env(dict(env), **opts)
        except TypeError as exc:
            raise ConfigError(f"bad [endpoint] option: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def _weights(value: Any) -> WeightVector:
    try:
        if isinstance(value, str):
            return WeightVector.parse(value)
        return WeightVector(*value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad weights {value!r}: {exc}") from exc


def _roles(table: Mapping[str, Any], env: Mapping[str, str]) -> dict[str, AgentRole]:
    roles = default_roles()
    for name in table:
        if name not in ROLES:
            raise ConfigError(f"unknown agent role [agents.{name}]")
    for name in ROLES:
        r = roles[name]
        t = table.get(name, {})
        model = env.get(f"HG_MODEL_{name.upper()}") or t.get("model", r.model_id)
        roles[name] = AgentRole(
            name,
            t.get("instruction", r.instruction),
            model,
            float(t.get("temperature", r.temperature)),
        )
    return roles


def load_toml(path: str | Path) -> dict[str, Any]:
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


_PATH_KEYS = ("prompts", "out", "replay_dir", "record_dir", "lexicon")


def build_run_config(
    doc: Mapping[str, Any] | None = None,
    overrides: Mapping[str, Any] | None = None,
    env: Mapping[str, str] | None = None,
) -> RunConfig:
    """Merge TOML ``doc``, environment and CLI ``overrides`` (highest precedence)."""
    doc = doc or {}
    env = os.environ if env is None else env
    merged: dict[str, Any] = dict(doc.get("run", {}))
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    cfg = RunConfig(roles=_roles(doc.get("agents", {}), env), endpoint=dict(doc.get("endpoint", {})))
    for key, value in merged.items():
        if key in _PATH_KEYS:
            setattr(cfg, key, Path(value))
        elif key == "weights":
            cfg.weights = _weights(value)
        elif key in ("workers", "na"):
            setattr(cfg, key, int(value))
        elif key == "backend":
            cfg.backend = str(value)
        elif key in ("strict_envelope", "judge_fallback", "normalize_fgr", "zero_based", "envelope_every_hop"):
            setattr(cfg, key, bool(value))
        else:
            raise ConfigError(f"unknown run option {key!r}")
    return cfg
