# refil/service/client.py
import logging
import uuid
from typing import Dict, Optional, Tuple

import httpx
import numpy as np

from refil.autodiff.model import Model
from refil.config import CLIENT_TIMEOUT, FRAMES_PATH, SEND_TELEMETRY
from refil.errors import ProtocolError, ServerError, ServerUnavailableError, ShapeMismatchError
from refil.privacy import NoisyActivation, RefilConfig, refil_forward
from refil.service import protocol
from refil.service.error_handlers import FRAME_MEDIA_TYPE
from refil.service.models import ActivationPayload, ErrorMessage, Hello, PredictionResponse, WireMessage

logger = logging.getLogger("split-client")


def new_request_id() -> int:
    return uuid.uuid4().int & 0xFFFF_FFFF_FFFF_FFFF


class SplitClient:
    """Client half of split inference over one keep-alive HTTP connection.

    The raw input never leaves this object: only the noised split activation
    is put on the wire.
    """

    def __init__(self, address: str, http_client: Optional[httpx.Client] = None,
                 send_telemetry: bool = SEND_TELEMETRY, timeout: float = CLIENT_TIMEOUT):
        self.address = address
        self.send_telemetry = send_telemetry
        self.timeout = timeout
        self._owns_client = http_client is None
        self._http = http_client if http_client is not None else httpx.Client(
            base_url=f"http://{address}", timeout=timeout,
        )
        self._shapes: Dict[str, Tuple[int, ...]] = {}

    def close(self) -> None:
        if self._owns_client:
            self._http.close()

    def __enter__(self) -> "SplitClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _exchange(self, msg: WireMessage) -> WireMessage:
        try:
            response = self._http.post(
                FRAMES_PATH, content=protocol.encode(msg), headers={"Content-Type": FRAME_MEDIA_TYPE},
            )
        except httpx.TimeoutException:
            raise ServerUnavailableError(self.address, f"request timed out after {self.timeout} seconds")
        except httpx.ConnectError:
            raise ServerUnavailableError(self.address, f"could not connect to split server at {self.address}")
        except httpx.RequestError as e:
            raise ServerUnavailableError(self.address, f"request error: {str(e)}")

        try:
            reply = protocol.decode(response.content)
        except ProtocolError:
            if response.status_code >= 400:
                raise ServerError(response.status_code, response.text or "Unknown error")
            raise
        if isinstance(reply, ErrorMessage):
            raise ServerError(reply.code, reply.message)
        return reply

    def hello(self, model_id: str) -> Tuple[int, ...]:
        """Server-side input shape of ``model_id``."""
        if model_id not in self._shapes:
            reply = self._exchange(Hello(model_id))
            if not isinstance(reply, Hello) or reply.input_shape is None:
                raise ProtocolError(f"expected a Hello reply with a shape, got {type(reply).__name__}")
            self._shapes[model_id] = tuple(reply.input_shape)
            logger.info(f"Server holds '{model_id}' with input shape {reply.input_shape}")
        return self._shapes[model_id]

    def send(self, model_id: str, activation: NoisyActivation) -> np.ndarray:
        z = np.asarray(activation.z_noised, dtype=np.float32)
        payload = ActivationPayload(
            model_id=model_id,
            tensor=z,
            sigma=activation.sigma if self.send_telemetry else None,
            achieved_dfil=activation.achieved_dfil if self.send_telemetry else None,
            request_id=new_request_id(),
        )
        reply = self._exchange(payload)
        if not isinstance(reply, PredictionResponse):
            raise ProtocolError(f"expected a PredictionResponse, got {type(reply).__name__}")
        if reply.request_id != payload.request_id:
            raise ProtocolError(f"response for request {reply.request_id}, sent {payload.request_id}")
        return reply.tensor

    def infer(self, model_id: str, client_model: Model, x: np.ndarray, refil_cfg: Optional[RefilConfig],
              rng: Optional[np.random.Generator] = None) -> np.ndarray:
        expected = self.hello(model_id)
        if tuple(client_model.output_shape) != expected:
            raise ShapeMismatchError(len(client_model.layers) - 1, "split activation",
                                     expected, client_model.output_shape)
        activation = refil_forward(client_model, x, refil_cfg, rng)
        return self.send(model_id, activation)


def client_infer(client_model: Model, refil_cfg: Optional[RefilConfig], x: np.ndarray, server_address: str,
                 model_id: str, http_client: Optional[httpx.Client] = None,
                 rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """One-shot split inference: ReFIL locally, remainder on the server."""
    with SplitClient(server_address, http_client=http_client) as client:
        return client.infer(model_id, client_model, x, refil_cfg, rng)
