# refil/service/service.py
import logging
import threading
from pathlib import Path
from typing import Iterator, Optional, Union

import numpy as np

from refil.errors import ProtocolError, ShapeMismatchError
from refil.service import protocol
from refil.service.data_service import ModelCatalog
from refil.service.models import (
    ActivationPayload, ErrorCode, ErrorMessage, HonestButCurious, Hello, LogMode, LogOff, PredictionResponse,
    WireMessage,
)

logger = logging.getLogger("split-server")


class ActivationLog:
    """Append-only file of ActivationRequest frames with a single writer."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def append(self, payload: ActivationPayload) -> None:
        frame = protocol.encode(payload)
        with self._lock:
            with open(self.path, "ab") as f:
                f.write(frame)


def read_activation_log(path: Union[str, Path]) -> Iterator[ActivationPayload]:
    for msg in protocol.iter_frames(Path(path).read_bytes()):
        if not isinstance(msg, ActivationPayload):
            raise ProtocolError(f"activation log holds a {type(msg).__name__} frame")
        yield msg


class InferenceService:
    """Server half of split inference; stateless across requests."""

    def __init__(self, catalog: ModelCatalog, log_mode: Optional[LogMode] = None):
        self.catalog = catalog
        log_mode = log_mode if log_mode is not None else LogOff()
        self.activation_log = ActivationLog(log_mode.path) if isinstance(log_mode, HonestButCurious) else None

    def handle(self, frame: bytes) -> bytes:
        msg = protocol.decode(frame)
        return protocol.encode(self.dispatch(msg))

    def dispatch(self, msg: WireMessage) -> WireMessage:
        if isinstance(msg, Hello):
            return self.hello(msg)
        if isinstance(msg, ActivationPayload):
            return self.infer(msg)
        logger.warning(f"Unexpected {type(msg).__name__} frame from a client")
        return ErrorMessage(int(ErrorCode.UNEXPECTED_MESSAGE), f"server does not accept {type(msg).__name__} frames")

    def hello(self, msg: Hello) -> Hello:
        model = self.catalog.require(msg.model_id)
        return Hello(msg.model_id, model.input_shape)

    def infer(self, payload: ActivationPayload) -> PredictionResponse:
        model = self.catalog.require(payload.model_id)
        if tuple(payload.tensor.shape) != model.input_shape:
            raise ShapeMismatchError(0, model.layers[0].name if model.layers else "Identity",
                                     model.input_shape, payload.tensor.shape)
        if self.activation_log is not None:
            self.activation_log.append(payload)
        prediction = model.predict(payload.tensor[None].astype(model.dtype))[0]
        logger.info(f"Request {payload.request_id}: model '{payload.model_id}' "
                    f"sigma={payload.sigma} dFIL={payload.achieved_dfil}")
        return PredictionResponse(payload.request_id, np.asarray(prediction, dtype=np.float32))
