"""Exception hierarchy shared by every kgrag module."""

from __future__ import annotations


class KgragError(Exception):
    """Base class for all errors raised by kgrag."""


class ConfigError(KgragError, ValueError):
    pass


class ContractError(KgragError, ValueError):
    """A precondition on shapes or arguments was violated."""


class IngestError(KgragError):
    def __init__(self, message: str, line_number: int | None = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class UnknownIdError(KgragError, KeyError):
    """An entity/relation id or label is not in the vocabulary."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown id"


class SamplingError(KgragError):
    pass


class TrainingError(KgragError):
    pass


class EvaluationError(KgragError):
    pass


class NoEntityError(KgragError):
    """No entity of the knowledge graph could be linked in the question."""

    reason = "no-entity"


class GeneratorError(KgragError):
    pass


class TransportError(GeneratorError):
    pass


class StatusError(GeneratorError):
    def __init__(self, status_code: int, body: str = ""):
        self.status_code = status_code
        self.body = body
        super().__init__(f"generator returned HTTP {status_code}")


class DecodeError(GeneratorError):
    pass


class PipelineError(KgragError):
    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")
