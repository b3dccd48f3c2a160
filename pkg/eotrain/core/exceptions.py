"""Module for custom exceptions used in the eotrain package."""

from typing import Optional


class EotrainError(Exception):
    """Base class for every error eotrain raises on purpose."""

    pass


class ModelSyntaxError(EotrainError):
    """Malformed model description."""

    def __init__(self, message: str, lineno: Optional[int] = None):
        self.lineno = lineno
        where = f"line {lineno}: " if lineno is not None else ""
        super().__init__(f"{where}{message}")


class UnknownLayerKindError(ModelSyntaxError):
    """Layer section names a type that is not supported."""

    def __init__(self, kind: str, lineno: Optional[int] = None):
        self.kind = kind
        super().__init__(f"unknown layer kind '{kind}'", lineno)


class MissingPropertyError(EotrainError):
    """Required layer property is absent."""

    def __init__(self, layer: str, key: str):
        self.layer = layer
        self.key = key
        super().__init__(f"layer '{layer}' is missing required property '{key}'")


class UnknownPropertyError(EotrainError):
    """Layer or model section carries a key nobody consumes."""

    def __init__(self, layer: str, key: str):
        self.layer = layer
        self.key = key
        super().__init__(f"layer '{layer}' has unknown property '{key}'")


class RealizeError(EotrainError):
    """Graph cannot be lowered into a valid chain."""

    pass


class ShapeError(EotrainError):
    """Inconsistent tensor dimensions."""

    pass


class PlanningError(EotrainError):
    """Execution-order or memory planning received inconsistent input."""

    pass


class LifetimeError(EotrainError):
    """Tensor requested outside its lifetime, or an external buffer is missing."""

    pass


class ResidencyError(EotrainError):
    """Compute path touched a tensor that is not resident in the swap cache."""

    pass


class SwapIOError(EotrainError):
    """Backing store read or write failed."""

    def __init__(self, tensor: str, eo: int, cause: Optional[BaseException] = None):
        self.tensor = tensor
        self.eo = eo
        detail = f": {cause}" if cause is not None else ""
        super().__init__(f"swap I/O failed for tensor '{tensor}' at EO {eo}{detail}")


class DivergenceError(EotrainError):
    """Loss became NaN or infinite."""

    def __init__(self, iteration: int, loss: float):
        self.iteration = iteration
        self.loss = loss
        super().__init__(f"training diverged at iteration {iteration} (loss={loss})")
