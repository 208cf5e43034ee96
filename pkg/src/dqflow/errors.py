"""Exception hierarchy shared across the package."""

from __future__ import annotations


class DQError(Exception):
    """Base class for all dqflow errors."""


class InvalidParameterError(DQError):
    """A caller-supplied parameter violates a precondition."""


class SchemaError(DQError):
    """A table schema violates its structural invariants."""


class EncodingError(DQError):
    """A value cannot be canonically encoded under its declared type."""


class BackendError(DQError):
    """A storage backend operation failed."""


class BackendUnavailableError(BackendError):
    """The backend connection is closed or unreachable; aborts whole runs."""


class SnapshotError(BackendError):
    """Snapshot capture or restore failed; the live store is left untouched."""


class MigrationError(BackendError):
    """Table migration between stores failed."""


class ModelRunError(DQError):
    """Materializing an analytical model failed.

    Carries the name of the model that failed.
    """

    def __init__(self, model: str, message: str) -> None:
        super().__init__(f"model {model}: {message}")
        self.model = model


class SchemaParseError(DQError):
    """A schema document failed to parse; carries the full issue list."""

    def __init__(self, issues: list) -> None:
        lines = "; ".join(str(i) for i in issues)
        super().__init__(f"schema document invalid: {lines}")
        self.issues = issues


class CompilationError(DQError):
    """A test spec could not be compiled to a failing-rows query."""


class InjectionError(DQError):
    """An anomaly mutation could not be applied; the experiment must abort."""


class ExperimentError(DQError):
    """An anomaly experiment could not run to completion on clean state."""


class ExtractionError(DQError):
    """Model context extraction failed (missing or non-curated model)."""


class GenerationError(DQError):
    """Test generation failed for one or more target models.

    ``raw_responses`` preserves whatever provider output was received so it
    can still be persisted for inspection.
    """

    def __init__(self, message: str, raw_responses: dict | None = None) -> None:
        super().__init__(message)
        self.raw_responses = raw_responses or {}


class ProviderError(DQError):
    """The text-generation provider failed after exhausting retries."""


class AuditError(DQError):
    """Usefulness auditing is missing required experiment detail."""


class WorkflowError(DQError):
    """A workflow stage failed; no later stage runs."""

    def __init__(self, stage: str, message: str) -> None:
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage


class ConfigError(DQError):
    """The run configuration file is invalid."""


class LockError(DQError):
    """Another workflow run holds the output-directory lock."""
