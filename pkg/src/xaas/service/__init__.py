"""Network service and wire protocol around the shared orchestrator."""

from .protocol import (BumpModel, ErrorResponse, ModelAck, ProtocolError, RegisterModel,
                       WireRequest, WireResponse, decode, encode)
from .server import ExplanationService, ModelRegistry, Server, build_service, serve

__all__ = ["BumpModel", "ErrorResponse", "ModelAck", "ProtocolError", "RegisterModel",
           "WireRequest", "WireResponse", "decode", "encode", "ExplanationService",
           "ModelRegistry", "Server", "build_service", "serve"]
