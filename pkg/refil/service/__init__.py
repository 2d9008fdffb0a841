"""Networked split inference: SPLT wire protocol, split server and client."""
from refil.service.client import SplitClient, client_infer
from refil.service.data_service import ModelCatalog
from refil.service.main import create_app, serve
from refil.service.models import (
    ActivationPayload, ErrorCode, ErrorMessage, Hello, HonestButCurious, LogOff, MsgType, PredictionResponse,
)
from refil.service.service import ActivationLog, InferenceService, read_activation_log

__all__ = [
    "ActivationLog", "ActivationPayload", "ErrorCode", "ErrorMessage", "Hello", "HonestButCurious",
    "InferenceService", "LogOff", "ModelCatalog", "MsgType", "PredictionResponse", "SplitClient",
    "client_infer", "create_app", "read_activation_log", "serve",
]
