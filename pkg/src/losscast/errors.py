"""Exception hierarchy shared across the package.

Every error raised by library code derives from LosscastError and carries the
name of the subsystem that raised it, so the CLI can emit module-tagged
messages and map them to a nonzero exit status.
"""


class LosscastError(Exception):
    """Base class for all package errors."""

    module = "losscast"


class SchemaError(LosscastError):
    """Invalid configuration value, unknown categorical, or field mismatch."""

    module = "schema"


class FormatError(LosscastError):
    """Run-log file could not be parsed (too many malformed lines, bad shape)."""

    module = "ingest"


class SplitError(LosscastError):
    """Dataset cannot be split as requested (e.g. too few groups)."""

    module = "ingest"


class FitError(LosscastError):
    """Law fitting failed (degenerate data or no finite optimum)."""

    module = "lawfit"


class ScopeError(LosscastError):
    """A prediction was requested outside the fitted baseline scopes."""

    module = "regressor"


class TrainingError(LosscastError):
    """Training aborted (non-finite gradients or loss)."""

    module = "regressor"


class SweepError(LosscastError):
    """Grid sweep produced no valid configurations."""

    module = "select"
