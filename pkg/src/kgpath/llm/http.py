"""OpenAI-compatible HTTP provider (``/chat/completions`` and ``/embeddings``)."""

from __future__ import annotations

import json
import os
import urllib.error
import urllib.request

import numpy as np

from kgpath.errors import ConfigError, TransportError
from kgpath.llm.gateway import CompletionRequest, TransientError

ENV_BASE_URL = "PANKRAG_LLM_BASE_URL"
ENV_API_KEY = "PANKRAG_LLM_API_KEY"
ENV_MODEL = "PANKRAG_LLM_MODEL"
ENV_EMBED_MODEL = "PANKRAG_EMBED_MODEL"

_RETRYABLE_STATUS = {408, 409, 429, 500, 502, 503, 504}


class HTTPProvider:
    name = "http"

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        model: str = "gpt-4o-mini",
        embed_model: str = "bge-m3",
        embed_dim: int = 1024,
        timeout: float = 60.0,
    ):
        if not base_url:
            raise ConfigError(f"HTTP provider needs a base URL (set {ENV_BASE_URL})")
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.model = model
        self.embed_model = embed_model
        self.embed_dim = embed_dim
        self.timeout = timeout

    @classmethod
    def from_env(cls, env=None, **overrides) -> "HTTPProvider":
        env = os.environ if env is None else env
        kwargs = {
            "base_url": env.get(ENV_BASE_URL, ""),
            "api_key": env.get(ENV_API_KEY),
            "model": env.get(ENV_MODEL, "gpt-4o-mini"),
            "embed_model": env.get(ENV_EMBED_MODEL, "bge-m3"),
        }
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kwargs)

    def _post(self, path: str, payload: dict) -> dict:
        req = urllib.request.Request(
            f"{self.base_url}{path}",
            data=json.dumps(payload).encode("utf-8"),
            method="POST",
            headers={"Content-Type": "application/json"},
        )
        if self.api_key:
            req.add_header("Authorization", f"Bearer {self.api_key}")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            body = exc.read().decode("utf-8", "replace")[:500]
            if exc.code in _RETRYABLE_STATUS:
                raise TransientError(f"HTTP {exc.code} from {path}: {body}") from exc
            raise TransportError(f"HTTP {exc.code} from {path}: {body}") from exc
        except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
            raise TransientError(f"cannot reach {self.base_url}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise TransientError(f"malformed JSON from {path}") from exc

    def complete(self, request: CompletionRequest, prompt: str) -> str:
        data = self._post(
            "/chat/completions",
            {
                "model": self.model,
                "messages": [{"role": "user", "content": prompt}],
                "temperature": request.temperature,
                "max_tokens": request.max_output_tokens,
            },
        )
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransientError("completion response missing choices[0].message.content") from exc

    def embed(self, texts: list[str]) -> np.ndarray:
        data = self._post("/embeddings", {"model": self.embed_model, "input": list(texts)})
        try:
            rows = sorted(data["data"], key=lambda r: r.get("index", 0))
            mat = np.asarray([r["embedding"] for r in rows], dtype=np.float64)
        except (KeyError, TypeError) as exc:
            raise TransientError("embedding response missing data[].embedding") from exc
        if mat.ndim != 2 or mat.shape[1] != self.embed_dim:
            raise ConfigError(
                f"embedding model returned shape {mat.shape}, declared dim is {self.embed_dim}")
        return mat
