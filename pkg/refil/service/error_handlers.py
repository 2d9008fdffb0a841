# refil/service/error_handlers.py
from fastapi import Request, status
from fastapi.responses import Response
import logging

from refil.errors import InvalidInputError, ProtocolError, ShapeMismatchError, UnknownModelError
from refil.service import protocol
from refil.service.models import ErrorCode, ErrorMessage

logger = logging.getLogger("split-server")

FRAME_MEDIA_TYPE = "application/octet-stream"


def error_frame_response(code: ErrorCode, message: str, status_code: int, close: bool = False) -> Response:
    headers = {"Connection": "close"} if close else None
    return Response(
        content=protocol.encode(ErrorMessage(int(code), message)),
        status_code=status_code,
        media_type=FRAME_MEDIA_TYPE,
        headers=headers,
    )


# Exception handlers
async def protocol_error_handler(request: Request, exc: ProtocolError):
    """Malformed frame: reply with an Error frame and drop the connection"""
    logger.error(f"Protocol Error: {exc.detail}")
    logger.error(f"Request: {request.method} {request.url}")
    return error_frame_response(ErrorCode.MALFORMED_FRAME, str(exc), status.HTTP_400_BAD_REQUEST, close=True)


async def unknown_model_handler(request: Request, exc: UnknownModelError):
    logger.error(f"Unknown Model: {exc.model_id}")
    logger.error(f"Request: {request.method} {request.url}")
    return error_frame_response(ErrorCode.UNKNOWN_MODEL, str(exc), status.HTTP_404_NOT_FOUND)


async def shape_mismatch_handler(request: Request, exc: ShapeMismatchError):
    logger.error(f"Shape Mismatch: expected {exc.expected}, got {exc.got}")
    logger.error(f"Request: {request.method} {request.url}")
    return error_frame_response(ErrorCode.SHAPE_MISMATCH, str(exc), status.HTTP_422_UNPROCESSABLE_ENTITY)


async def invalid_input_handler(request: Request, exc: InvalidInputError):
    logger.error(f"Invalid Input: {exc.layer_name} - {exc.detail}")
    logger.error(f"Request: {request.method} {request.url}")
    return error_frame_response(ErrorCode.SHAPE_MISMATCH, str(exc), status.HTTP_422_UNPROCESSABLE_ENTITY)


async def general_exception_handler(request: Request, exc: Exception):
    """Handle all other exceptions"""
    logger.error(f"Unhandled Exception: {type(exc).__name__} - {str(exc)}")
    logger.error(f"Request: {request.method} {request.url}")
    return error_frame_response(
        ErrorCode.INTERNAL, f"{type(exc).__name__}: an unexpected error occurred",
        status.HTTP_500_INTERNAL_SERVER_ERROR, close=True,
    )
