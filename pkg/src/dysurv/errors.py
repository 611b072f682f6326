"""Error taxonomy shared by the library and the CLI.

Every failure mode that callers are expected to distinguish gets its own
class with a stable machine-readable ``code``. The CLI prints the code on
stderr so shell pipelines can branch on it without parsing prose.
"""

from __future__ import annotations


class DySurvError(Exception):
    """Base class; ``code`` is stable across releases."""

    code = "E_GENERIC"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class SchemaError(DySurvError):
    code = "E_SCHEMA"


class ParseError(DySurvError):
    code = "E_PARSE"


class ReferentialError(DySurvError):
    code = "E_REFERENTIAL"


class DomainError(DySurvError):
    code = "E_DOMAIN"


class ContractError(DySurvError):
    code = "E_CONTRACT"


class NumericalError(DySurvError):
    code = "E_NUMERIC"


class ReproducibilityError(DySurvError):
    code = "E_REPRO"


class MetricUndefinedError(DySurvError):
    code = "E_METRIC_UNDEFINED"


class WeightDegeneracyError(DySurvError):
    code = "E_WEIGHT_DEGENERATE"


class NoCheckpointError(DySurvError):
    code = "E_NO_CHECKPOINT"


class CheckpointCorruptError(DySurvError):
    code = "E_CORRUPT"


class CheckpointIncompatibleError(DySurvError):
    code = "E_INCOMPATIBLE"


class SearchFailureError(DySurvError):
    code = "E_SEARCH"


class ConfigError(DySurvError):
    code = "E_CONFIG"
