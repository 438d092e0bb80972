"""Graph-based retrieval-augmented generation with planned sub-question DAGs
and dependency-aware reranking."""

from kgpath.errors import (
    ConfigError,
    CorruptIndexError,
    ExtractionError,
    GenerationError,
    InputError,
    IntegrityError,
    KgpathError,
    MigrationNeededError,
    NoIndexError,
    PlanningError,
    RetrievalError,
    SequencingError,
    TransportError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "CorruptIndexError",
    "ExtractionError",
    "GenerationError",
    "InputError",
    "IntegrityError",
    "KgpathError",
    "MigrationNeededError",
    "NoIndexError",
    "PlanningError",
    "RetrievalError",
    "SequencingError",
    "TransportError",
]
