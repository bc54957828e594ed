"""Exception hierarchy shared by every module."""


class LbtError(Exception):
    """Base class for all errors raised by lbtest."""


class ShapeError(LbtError, ValueError):
    pass


class DomainError(LbtError, ValueError):
    pass


class TrainingDivergedError(LbtError, ArithmeticError):
    def __init__(self, epoch, loss):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss!r})")
        self.epoch = epoch
        self.loss = loss


class IdxFormatError(LbtError, ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class AttackTuningError(LbtError, RuntimeError):
    """No attack strength in the search grid lands inside the accuracy band."""

    def __init__(self, message, frontier=()):
        rows = ", ".join(f"{p:.2f}->{a:.4f}" for p, a in frontier)
        super().__init__(f"{message}; frontier: [{rows}]" if frontier else message)
        self.frontier = list(frontier)


class OperatorInapplicableError(LbtError, ValueError):
    pass


class PoolExhaustedError(LbtError, RuntimeError):
    pass


class ContractViolation(LbtError, RuntimeError):
    pass


class CalibrationError(LbtError, RuntimeError):
    pass


class DegenerateClassError(LbtError, ValueError):
    def __init__(self, cls, count):
        super().__init__(f"class {cls} has {count} reference(s); at least 2 required")
        self.cls = cls


class ConfigError(LbtError, ValueError):
    pass


class StageError(LbtError, RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
