from kgpath.llm.gateway import (
    Completion,
    CompletionRequest,
    EmbeddingVector,
    LLMGateway,
    RateLimiter,
    TransientError,
    cosine,
    normalize,
    parse_json_block,
)
from kgpath.llm.http import HTTPProvider
from kgpath.llm.mock import MockProvider, hashed_embedding
from kgpath.llm.templates import Template, TemplateRegistry

__all__ = [
    "Completion",
    "CompletionRequest",
    "EmbeddingVector",
    "HTTPProvider",
    "LLMGateway",
    "MockProvider",
    "RateLimiter",
    "Template",
    "TemplateRegistry",
    "TransientError",
    "cosine",
    "hashed_embedding",
    "normalize",
    "parse_json_block",
]
