"""Typed error hierarchy shared across the package.

Every error carries a stable ``code`` string so the API and CLI can report
machine-readable failures without string-matching messages.
"""

from __future__ import annotations


class ModelcrafterError(Exception):
    """Base class for all package errors."""

    code = "error"

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.details = details


class ConfigurationError(ModelcrafterError):
    code = "configuration-error"


class PreconditionError(ModelcrafterError, ValueError):
    """An operation was invoked outside its documented contract."""

    code = "precondition-violation"


# --- gateway ---------------------------------------------------------------


class BackendUnreachableError(ModelcrafterError):
    code = "backend-unreachable"


class RoleMismatchError(ModelcrafterError):
    """Operation invoked against a backend of the wrong role."""

    code = "role-mismatch"


class NoScriptError(ModelcrafterError):
    """Mock LLM has no scripted response for this prompt (test-fixture gap)."""

    code = "no-script-for-prompt"


class UnresolvableQuestionError(ModelcrafterError):
    """Mock VQA cannot map a question to an attribute identifier."""

    code = "unresolvable-question"


class DimensionMismatchError(ModelcrafterError):
    code = "dimension-mismatch"


# --- parsing ---------------------------------------------------------------


class UnparseableResponseError(ModelcrafterError):
    code = "unparseable-response"


class EmptyExtractionError(ModelcrafterError):
    """The model returned a well-formed but empty attribute list."""

    code = "empty-list"


class NoAttributesError(ModelcrafterError):
    code = "no-attributes-available"


class DecisionParseError(ModelcrafterError):
    code = "decision-parse-failure"


# --- metrics -----------------------------------------------------------------


class LengthMismatchError(ModelcrafterError):
    code = "length-mismatch"


class NoPositivesError(ModelcrafterError):
    code = "no-positives"


# --- corpus / store --------------------------------------------------------


class FormatError(ModelcrafterError):
    code = "format-error"

    def __init__(self, message: str, line: int | None = None, **details):
        super().__init__(message, line=line, **details)
        self.line = line


class DuplicateIdError(ModelcrafterError):
    code = "duplicate-id"


class NotFoundError(ModelcrafterError):
    code = "not-found"


class StateError(ModelcrafterError):
    """A workflow step was requested before its prerequisites completed."""

    code = "invalid-state"


class StoreIoError(ModelcrafterError):
    code = "io-error"


class VersionMismatchError(ModelcrafterError):
    code = "version-mismatch"


class ChecksumMismatchError(ModelcrafterError):
    code = "checksum-mismatch"


# --- trainer ---------------------------------------------------------------


class SingleClassDatasetError(ModelcrafterError):
    code = "single-class-dataset"


class NonFiniteLossError(ModelcrafterError):
    code = "nonfinite-loss"
