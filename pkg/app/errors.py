from typing import Any, Dict, Optional


EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


class ProbeError(Exception):
    """Base error for the probe toolkit"""

    code = "probe_error"
    exit_code = EXIT_NUMERICAL

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        """Machine-readable error record"""
        return {
            "error": self.code,
            "message": self.message,
            "details": self.details,
        }


class ParameterError(ProbeError):
    code = "parameter_error"


class GeometryError(ProbeError):
    code = "geometry_error"


class SingularEvaluationError(ProbeError):
    code = "singular_evaluation"


class DomainError(ProbeError):
    code = "domain_error"


class SolverError(ProbeError):
    code = "solver_error"


class SpaceError(ProbeError):
    code = "space_error"


class ConsistencyError(ProbeError):
    code = "consistency_error"


class DegenerateOperatorError(ProbeError):
    code = "degenerate_operator"


class PlanError(ProbeError):
    code = "plan_error"


class MetricError(ProbeError):
    code = "metric_error"


class ScenarioValidationError(ProbeError):
    """Raised when a scenario config fails validation"""

    code = "validation_error"
    exit_code = EXIT_VALIDATION

    def __init__(self, violations: list):
        super().__init__(
            f"{len(violations)} validation violation(s)",
            {"violations": violations},
        )
        self.violations = violations
