"""Exception hierarchy shared across the package."""


class TransmuseError(Exception):
    """Base class for all package errors."""


class ParseError(TransmuseError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(TransmuseError, ValueError):
    pass


class TrainingDivergedError(TransmuseError, FloatingPointError):
    def __init__(self, epoch, loss):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}")


class CheckpointError(TransmuseError):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class StageError(TransmuseError):
    """A pipeline stage failed; ``stage`` names which one."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage}: {type(cause).__name__}: {cause}")
