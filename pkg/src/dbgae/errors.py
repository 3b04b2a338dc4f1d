"""Exception types shared across the package."""


class DbgaeError(Exception):
    """Base class for all package errors."""


class ConfigError(DbgaeError):
    """Invalid configuration value; the message names the offending field."""


class ParseError(DbgaeError):
    """Malformed input file; the message carries the line number."""


class SchemaError(DbgaeError):
    """Structurally readable input that violates the data schema."""


class AmbiguityUndefinedError(DbgaeError):
    """Ambiguity ratio requested for a class no candidate link touches."""


class AutodiffError(DbgaeError):
    """Computation-graph contract violation (e.g. non-scalar loss)."""


class DimensionError(AutodiffError):
    """Shape mismatch in a primitive operation; the message names the op."""


class TrainingError(DbgaeError):
    """Training aborted (non-finite loss/gradient, empty supervision)."""


class EvalError(DbgaeError):
    """Evaluation cannot proceed (e.g. missing ground truth)."""


class PipelineError(DbgaeError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage
