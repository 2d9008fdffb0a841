# refil/errors.py
from typing import Optional, Sequence


class RefilError(Exception):
    """Base class for every error raised by refil"""


class ConfigError(RefilError):
    """Raised when a configuration value violates its invariant"""


class ShapeMismatchError(RefilError):
    """Raised when a tensor does not fit the layer that receives it"""
    def __init__(self, layer_index: int, layer_name: str, expected: Sequence[int], got: Sequence[int]):
        self.layer_index = layer_index
        self.layer_name = layer_name
        self.expected = tuple(expected)
        self.got = tuple(got)
        super().__init__(
            f"Layer {layer_index} ({layer_name}) expected shape {self.expected}, got {self.got}"
        )


class JacobianTooLargeError(RefilError):
    """Raised when materializing a Jacobian would exceed the entry cap"""
    def __init__(self, rows: int, cols: int, cap: int):
        self.rows = rows
        self.cols = cols
        self.cap = cap
        super().__init__(
            f"Jacobian of {rows}x{cols} = {rows * cols} entries exceeds cap {cap}; "
            f"use a trace estimator instead"
        )


class CheckpointError(RefilError):
    """Raised when a model checkpoint cannot be parsed"""
    def __init__(self, offset: int, detail: str):
        self.offset = offset
        self.detail = detail
        super().__init__(f"Checkpoint error at byte {offset}: {detail}")


class DataError(RefilError):
    """Raised when a dataset file is malformed"""
    def __init__(self, source: str, location: str, detail: str):
        self.source = source
        self.location = location
        self.detail = detail
        super().__init__(f"{source} ({location}): {detail}")


class NumericalError(RefilError):
    """Raised when a computation produces non-finite values"""


class DivergenceError(NumericalError):
    """Raised when the training loss becomes non-finite"""
    def __init__(self, batch_index: int, loss: float):
        self.batch_index = batch_index
        self.loss = loss
        super().__init__(f"Training diverged at batch {batch_index} (loss={loss})")


class AttackFailedError(NumericalError):
    """Raised when every restart of a reconstruction attack went non-finite"""
    def __init__(self, restarts: int):
        self.restarts = restarts
        super().__init__(f"All {restarts} attack restarts produced a non-finite objective")


class ProtocolError(RefilError):
    """Raised when a wire frame is malformed"""
    def __init__(self, detail: str):
        self.detail = detail
        super().__init__(f"Malformed frame: {detail}")


class UnknownModelError(RefilError):
    """Raised when a request names a model the server does not hold"""
    def __init__(self, model_id: str, available: Optional[Sequence[str]] = None):
        self.model_id = model_id
        self.available = list(available or [])
        super().__init__(
            f"Model '{model_id}' not found. Available models: {', '.join(self.available)}"
        )


class ServerUnavailableError(RefilError):
    """Raised when the split server cannot be reached"""
    def __init__(self, address: str, detail: str):
        self.address = address
        self.detail = detail
        super().__init__(f"Split server {address} unavailable: {detail}")


class ServerError(RefilError):
    """Raised when the split server replies with an Error frame"""
    def __init__(self, code: int, detail: str):
        self.code = code
        self.detail = detail
        super().__init__(f"Split server error {code}: {detail}")


class InvalidInputError(RefilError):
    """Raised when input values fall outside the domain a layer accepts"""
    def __init__(self, layer_name: str, detail: str):
        self.layer_name = layer_name
        self.detail = detail
        super().__init__(f"{layer_name}: {detail}")
