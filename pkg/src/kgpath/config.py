"""Run configuration with precedence flags > config file > environment > defaults."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from kgpath.errors import ConfigError
from kgpath.llm.gateway import LLMGateway
from kgpath.llm.http import ENV_API_KEY, ENV_BASE_URL, ENV_EMBED_MODEL, ENV_MODEL, HTTPProvider
from kgpath.llm.mock import MockProvider
from kgpath.rerank import RerankWeights

MODES = ("full", "no_plan", "no_rerank", "naive")
_ENV = {
    "llm_base_url": ENV_BASE_URL,
    "llm_model": ENV_MODEL,
    "embed_model": ENV_EMBED_MODEL,
}


@dataclass
class RunConfig:
    provider: str = "mock"
    llm_base_url: str | None = None
    llm_model: str = "gpt-4o-mini"
    embed_model: str = "bge-m3"
    embed_dim: int = 1024
    plans: list[str] = field(default_factory=list)
    max_attempts: int = 3
    backoff: float = 0.5
    rate: float | None = None
    workers: int = 4

    max_tokens: int = 600
    overlap_tokens: int = 100
    leiden_seed: int = 0
    resolution_schedule: list[float] = field(default_factory=lambda: [1.0, 0.5, 0.25])

    k_entities: int = 5
    k_chunks: int = 12
    k_communities: int = 8
    k_context: int = 6
    prior_top: int = 2
    level_policy: str = "auto"
    seed_floor: float = 0.1

    alpha: float | None = None
    beta: float | None = None
    mode: str = "full"
    plan_fallback: bool = True
    synthesis_budget: int = 3000

    corpus_dir: str | None = None
    manifest: str | None = None
    index_dir: str | None = None
    templates_dir: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.provider not in ("mock", "http"):
            raise ConfigError(f"provider must be 'mock' or 'http', got {self.provider!r}")
        if (self.alpha is None) != (self.beta is None):
            if self.alpha is None:
                self.alpha = 1.0 - self.beta
            else:
                self.beta = 1.0 - self.alpha
        if self.alpha is not None:
            RerankWeights(self.alpha, self.beta)
        if self.level_policy not in ("auto", "leaf", "top"):
            raise ConfigError(f"unknown level policy {self.level_policy!r}")
        for name in ("k_entities", "k_chunks", "k_communities", "k_context", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    @property
    def weights(self) -> RerankWeights | None:
        return None if self.alpha is None else RerankWeights(self.alpha, self.beta)

    def resolve_paths(self, base: Path | None = None) -> "RunConfig":
        base = base or Path.cwd()
        for name in ("corpus_dir", "manifest", "index_dir", "templates_dir"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, str((base / v).resolve()))
        self.plans = [str((base / p).resolve()) for p in self.plans]
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_sources(
        cls,
        flags: dict | None = None,
        config_file: str | Path | None = None,
        env: dict | None = None,
    ) -> "RunConfig":
        """Merge settings; a ``None`` flag means "not given" and does not override."""
        env = os.environ if env is None else env
        known = {f.name for f in fields(cls)}
        merged: dict = {}
        for key, var in _ENV.items():
            if env.get(var):
                merged[key] = env[var]
        if env.get(ENV_BASE_URL):
            merged["provider"] = "http"
        if config_file is not None:
            try:
                data = json.loads(Path(config_file).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config file {config_file}: {exc}") from exc
            unknown = set(data) - known
            if unknown:
                raise ConfigError(f"unknown config keys: {sorted(unknown)}")
            base = Path(config_file).resolve().parent
            for key in ("corpus_dir", "manifest", "index_dir", "templates_dir"):
                if data.get(key) is not None:
                    data[key] = str((base / data[key]).resolve())
            if "plans" in data:
                data["plans"] = [str((base / p).resolve()) for p in data["plans"]]
            merged.update(data)
        for key, value in (flags or {}).items():
            if value is None:
                continue
            if key not in known:
                raise ConfigError(f"unknown setting {key!r}")
            merged[key] = value
        return cls(**merged)


def make_gateway(cfg: RunConfig, env: dict | None = None) -> LLMGateway:
    from kgpath.llm.templates import TemplateRegistry

    templates = (TemplateRegistry.from_dir(cfg.templates_dir) if cfg.templates_dir
                 else TemplateRegistry.builtin())
    if cfg.provider == "mock":
        provider = MockProvider.from_plan_files(*cfg.plans)
        backoff = 0.0
    else:
        env = os.environ if env is None else env
        provider = HTTPProvider(
            base_url=cfg.llm_base_url or env.get(ENV_BASE_URL, ""),
            api_key=env.get(ENV_API_KEY),
            model=cfg.llm_model,
            embed_model=cfg.embed_model,
            embed_dim=cfg.embed_dim,
        )
        backoff = cfg.backoff
    return LLMGateway(provider, templates, cfg.max_attempts, backoff, cfg.rate)
