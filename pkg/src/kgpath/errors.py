"""Exception hierarchy shared by every stage of the engine."""


class KgpathError(Exception):
    """Base class for all engine errors."""


class InputError(KgpathError, ValueError):
    pass


class ConfigError(KgpathError, ValueError):
    pass


class TransportError(KgpathError):
    """Provider unreachable or returned a non-retryable transport failure."""


class ExtractionError(KgpathError):
    """LLM output could not be parsed into the template's declared structure."""

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class PlanningError(KgpathError):
    pass


class SequencingError(KgpathError):
    """A sub-question was asked to run before its prerequisites resolved."""


class IntegrityError(KgpathError):
    pass


class RetrievalError(KgpathError):
    pass


class GenerationError(KgpathError):
    pass


class NoIndexError(KgpathError):
    pass


class MigrationNeededError(KgpathError):
    pass


class CorruptIndexError(KgpathError):
    pass
