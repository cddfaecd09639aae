"""Exception types shared across the package."""


class CtcmtError(Exception):
    """Base class for all errors raised by this package."""


class ContractViolation(CtcmtError):
    """An operation was called with arguments that break its contract."""


class GraphReuseError(ContractViolation):
    """backward() was called twice on the same recorded computation."""


class DimensionError(CtcmtError):
    """Tensor shapes do not line up for the requested operation."""


class InvalidLabelError(CtcmtError):
    """A label sequence contains the blank id."""


class FeasibilityError(CtcmtError):
    """The target cannot be produced from the given number of frames."""

    def __init__(self, target_len: int, frames: int):
        self.target_len = target_len
        self.frames = frames
        super().__init__(
            f"target of length {target_len} is not representable in {frames} frames"
        )


class OracleTooLargeError(CtcmtError):
    """The brute-force enumeration would exceed its path-count guard."""


class VocabularyError(CtcmtError):
    """Bad token id, malformed vocabulary file, or vocabulary mismatch."""


class ConfigError(CtcmtError):
    """Invalid configuration value."""


class CorpusError(CtcmtError):
    """Malformed parallel corpus (line-count mismatch, empty source line)."""


class CheckpointError(CtcmtError):
    """Checkpoint file is truncated, malformed, or inconsistent with its config."""


class EmptyInputError(CtcmtError):
    """The model was asked to translate an empty token sequence."""


class InputTooLongError(CtcmtError):
    """A source sentence exceeds the configured maximum length."""

    def __init__(self, length: int, limit: int, line_number=None):
        self.length = length
        self.limit = limit
        self.line_number = line_number
        where = f"line {line_number}: " if line_number is not None else ""
        super().__init__(f"{where}{length} tokens exceeds max source length {limit}")


class TrainingDiverged(CtcmtError):
    """Training produced a non-finite loss."""
