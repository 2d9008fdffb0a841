# refil/service/middleware.py
import time
import logging
import uuid
from fastapi import Request, Response
from starlette.middleware.base import BaseHTTPMiddleware
from typing import Callable

logger = logging.getLogger("split-server")


class RequestLoggingMiddleware(BaseHTTPMiddleware):
    """Log every frame exchange with an id, its size and its timing"""

    async def dispatch(self, request: Request, call_next: Callable) -> Response:
        request_id = uuid.uuid4().hex[:16]
        client_host = request.client.host if request.client else "unknown"
        frame_size = request.headers.get("content-length", "?")

        logger.info(f"[{request_id}] {request.method} {request.url.path} from {client_host}, {frame_size} bytes")

        start_time = time.time()

        try:
            response = await call_next(request)
        except Exception as e:
            elapsed = time.time() - start_time
            logger.error(f"[{request_id}] failed after {elapsed:.4f}s: {type(e).__name__}: {e}")
            raise

        elapsed = time.time() - start_time
        logger.info(f"[{request_id}] status {response.status_code} in {elapsed:.4f}s")

        response.headers["X-Request-ID"] = request_id
        response.headers["X-Process-Time"] = f"{elapsed:.6f}"
        return response
