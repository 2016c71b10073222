"""Exception taxonomy, mirrored by the CLI exit codes."""


class AbisensError(Exception):
    """Base class for package errors."""


class UsageError(AbisensError):
    """Invalid arguments, configuration, or domain violations (exit 1)."""


class IntegrityError(AbisensError):
    """Hash or manifest mismatch in persisted artifacts (exit 2)."""


class NumericError(AbisensError):
    """Non-finite values or failed numeric procedures (exit 3)."""


class SimulationError(NumericError):
    """Simulator produced a non-finite or impossible state."""


class TrainingError(NumericError):
    """Training diverged or failed to make progress."""
