# refil/service/main.py
from fastapi import FastAPI, Request
from fastapi.responses import Response
from starlette.concurrency import run_in_threadpool
from typing import Optional, Tuple
import logging
import uvicorn

from refil import __version__
from refil.config import FRAMES_PATH, LOG_FILE, LOG_LEVEL, SERVER_BIND
from refil.errors import ConfigError, InvalidInputError, ProtocolError, ShapeMismatchError, UnknownModelError
from refil.logging_config import configure_logging
from refil.service.data_service import ModelCatalog
from refil.service.error_handlers import (
    FRAME_MEDIA_TYPE, general_exception_handler, invalid_input_handler, protocol_error_handler,
    shape_mismatch_handler, unknown_model_handler,
)
from refil.service.middleware import RequestLoggingMiddleware
from refil.service.models import LogMode
from refil.service.service import InferenceService

logger = logging.getLogger("split-server")


def create_app(catalog: ModelCatalog, log_mode: Optional[LogMode] = None) -> FastAPI:
    configure_logging(LOG_FILE, LOG_LEVEL)
    app = FastAPI(title="Split Inference Server", version=__version__)

    # Add request logging middleware
    app.add_middleware(RequestLoggingMiddleware)

    # Register exception handlers
    app.add_exception_handler(ProtocolError, protocol_error_handler)
    app.add_exception_handler(UnknownModelError, unknown_model_handler)
    app.add_exception_handler(ShapeMismatchError, shape_mismatch_handler)
    app.add_exception_handler(InvalidInputError, invalid_input_handler)
    app.add_exception_handler(Exception, general_exception_handler)

    inference_service = InferenceService(catalog, log_mode)
    app.state.inference_service = inference_service

    @app.get("/")
    def read_root():
        return {"message": "Split inference server is running", "models": catalog.get_all_ids()}

    @app.post(FRAMES_PATH)
    async def exchange_frame(request: Request):
        """Decode one SPLT frame and reply with one SPLT frame"""
        body = await request.body()
        reply = await run_in_threadpool(inference_service.handle, body)
        return Response(content=reply, media_type=FRAME_MEDIA_TYPE)

    return app


def parse_bind(bind: str) -> Tuple[str, int]:
    host, sep, port = bind.rpartition(":")
    if not sep or not host or not port.isdigit():
        raise ConfigError(f"bind address must look like host:port, got '{bind}'")
    return host, int(port)


def serve(catalog: ModelCatalog, bind: str = SERVER_BIND, log_mode: Optional[LogMode] = None) -> None:
    """Run the split server until shutdown."""
    host, port = parse_bind(bind)
    app = create_app(catalog, log_mode)
    logger.info(f"Serving models {catalog.get_all_ids()} on {host}:{port}")
    uvicorn.run(app, host=host, port=port, log_config=None)
