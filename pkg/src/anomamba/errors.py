"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible shapes; message names the offending dims."""


class DataContractError(RuntimeError):
    """A dataset violates the layout/labeling contract (CLI exit code 2)."""


class NumericalError(RuntimeError):
    """A numerical failure such as a NaN loss (CLI exit code 3)."""


class MetricUndefinedError(ValueError):
    """AUROC/AP requested on a set without both classes represented."""


class CheckpointFormatError(RuntimeError):
    """Malformed checkpoint file; carries the byte offset of the problem."""

    def __init__(self, offset: int, message: str):
        super().__init__(f"checkpoint error at byte {offset}: {message}")
        self.offset = offset


class MaskSynthesisError(RuntimeError):
    """Mask area stayed outside bounds after the resampling budget."""
