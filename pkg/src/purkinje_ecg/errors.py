"""Exception hierarchy shared across the pipeline."""


class PipelineError(Exception):
    """Base class for all package errors."""


class MeshError(PipelineError):
    """Invalid or unparsable mesh input."""


class GrowthError(PipelineError):
    """Tree growth could not produce a valid network."""


class SolverError(PipelineError):
    """Numeric failure in an activation or ECG solve."""


class ConfigError(PipelineError):
    """Invalid run configuration."""


class BudgetExhausted(PipelineError):
    """The inference budget ran out before the posterior was complete."""
