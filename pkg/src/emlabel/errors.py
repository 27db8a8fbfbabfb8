"""Error taxonomy shared across modules. Each error carries a stable
machine-readable code so the HTTP layer can map it without string matching."""

from __future__ import annotations


class EmlabelError(Exception):
    code = "internal"


class InvalidArgument(EmlabelError):
    code = "invalid_argument"


class NotFound(EmlabelError):
    code = "not_found"


class FailedPrecondition(EmlabelError):
    code = "failed_precondition"


class AlreadyExists(EmlabelError):
    code = "already_exists"


class DataError(EmlabelError):
    """Malformed input data (bad catalog line, broken taxonomy file, ...)."""

    code = "data_error"


class DegenerateLabels(EmlabelError):
    """A fit was requested with only one class present."""

    code = "degenerate_labels"


class StaleModel(EmlabelError):
    """Model was trained against a different keyword-feature version."""

    code = "stale_model"


class InfeasibleConstraints(EmlabelError):
    """Fixed taxonomy probabilities that no consistent assignment extends."""

    code = "infeasible_constraints"

    def __init__(self, message, nodes=()):
        super().__init__(message)
        self.nodes = list(nodes)


class TrainingFailure(EmlabelError):
    code = "training_failure"


class StaleLease(EmlabelError):
    code = "stale_lease"
