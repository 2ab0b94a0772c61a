"""Exception hierarchy; each class carries the CLI exit code it maps to."""


class ConfmiaError(Exception):
    exit_code = 3


class ValidationError(ConfmiaError, ValueError):
    """Bad configuration, precondition violation or shape mismatch."""

    exit_code = 2


class NumericalError(ConfmiaError, ArithmeticError):
    exit_code = 3


class TrainingDivergenceError(NumericalError):
    def __init__(self, epoch, batch, model_index=None):
        self.epoch = epoch
        self.batch = batch
        self.model_index = model_index
        where = f"epoch {epoch}, batch {batch}"
        if model_index is not None:
            where = f"model {model_index}, {where}"
        super().__init__(f"training diverged (non-finite loss) at {where}")

    def with_model(self, model_index):
        return TrainingDivergenceError(self.epoch, self.batch, model_index)


class FormatError(ConfmiaError):
    """A binary artifact failed to parse; ``offset`` is the byte position."""

    exit_code = 4

    def __init__(self, message, offset, path=None):
        self.offset = offset
        self.path = path
        prefix = f"{path}: " if path else ""
        super().__init__(f"{prefix}{message} (at byte offset {offset})")
