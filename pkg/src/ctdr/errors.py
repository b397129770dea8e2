"""Exception taxonomy. Everything raised on purpose derives from CtdrError."""


class CtdrError(Exception):
    """Base class for all errors raised by this package."""


class ContractViolation(CtdrError, ValueError):
    """An argument broke a documented precondition (shape, range, emptiness)."""


class ConfigError(CtdrError, ValueError):
    """Bad experiment configuration: unknown key, unparsable value, invalid combination."""


class ParseError(CtdrError, ValueError):
    """Malformed data file. Message carries the file and 1-based line number."""

    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{self.path}:{line_no}: {message}")


class CheckpointError(CtdrError, ValueError):
    """Malformed checkpoint file."""


class UnsupportedVersionError(CheckpointError):
    """Checkpoint version is newer (or older) than this code understands."""


class TruncatedCheckpointError(CheckpointError):
    """Checkpoint file ended before the declared payload."""


class CheckpointShapeError(CheckpointError):
    """Tensor table disagrees with the architecture header."""


class NonFiniteLossError(CtdrError, RuntimeError):
    """A loss term produced NaN or inf. `term` names the offender."""

    def __init__(self, term, value, epoch=None, step=None):
        self.term = term
        self.value = value
        self.epoch = epoch
        self.step = step
        where = ""
        if epoch is not None:
            where = f" at epoch {epoch}" + (f" step {step}" if step is not None else "")
        super().__init__(f"non-finite loss in term '{term}'{where}: {value!r}")
