"""Wire messages: one JSON object per line, tagged by ``type``.

``encode`` produces canonical text (sorted keys, no insignificant
whitespace, no NaN/Infinity), and ``decode`` validates strictly, so
``decode(encode(m)) == m`` for every message and malformed input is
rejected with a ``ProtocolError`` carrying a wire error code.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from typing import Any, Dict, Mapping, Optional, Tuple, Union

SOURCES = ("cache_local", "cache_global", "generated")

BAD_REQUEST = "bad_request"
UNKNOWN_MODEL = "unknown_model"
DUPLICATE_MODEL = "duplicate_model"
OVERLOADED = "overloaded"
INTERNAL = "internal_error"


class ProtocolError(ValueError):
    def __init__(self, message: str, code: str = BAD_REQUEST,
                 request_id: Optional[str] = None):
        super().__init__(message)
        self.code = code
        self.request_id = request_id


@dataclass(frozen=True)
class WireRequest:
    request_id: str
    model_id: str
    features: Tuple[float, ...]
    prediction: int
    fid_threshold: float
    latency_budget_ms: float

    def __post_init__(self):
        if not self.features:
            raise ProtocolError("features must be non-empty", request_id=self.request_id)
        if not 0.0 <= self.fid_threshold <= 1.0:
            raise ProtocolError("fid_threshold must be in [0, 1]", request_id=self.request_id)
        if not self.latency_budget_ms > 0:
            raise ProtocolError("latency_budget_ms must be > 0", request_id=self.request_id)
        if self.prediction < 0:
            raise ProtocolError("prediction must be >= 0", request_id=self.request_id)


@dataclass(frozen=True)
class WireResponse:
    request_id: str
    attribution: Tuple[float, ...]
    method: str
    source: str
    verified: bool
    fidelity: float
    latency_ms: float
    model_version: int
    sla_missed: bool

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ProtocolError(f"unknown source {self.source!r}", request_id=self.request_id)
        if self.source == "generated" and self.verified:
            raise ProtocolError("generated responses are never verified",
                                request_id=self.request_id)


@dataclass(frozen=True)
class ErrorResponse:
    request_id: Optional[str]
    code: str
    message: str


@dataclass(frozen=True)
class RegisterModel:
    request_id: str
    model: Mapping[str, Any]        # a serialized model definition


@dataclass(frozen=True)
class BumpModel:
    request_id: str
    model_id: str
    magnitude: float
    seed: int

    def __post_init__(self):
        if self.magnitude < 0:
            raise ProtocolError("magnitude must be >= 0", request_id=self.request_id)


@dataclass(frozen=True)
class ModelAck:
    request_id: str
    model_id: str
    version: int


Message = Union[WireRequest, WireResponse, ErrorResponse, RegisterModel, BumpModel, ModelAck]

TYPES = {
    "explain": WireRequest,
    "explanation": WireResponse,
    "error": ErrorResponse,
    "register_model": RegisterModel,
    "bump_model": BumpModel,
    "model_ack": ModelAck,
}
_TAG = {cls: tag for tag, cls in TYPES.items()}

# field -> expected JSON kind
_KINDS = {
    "request_id": "str", "model_id": "str", "method": "str", "source": "str",
    "code": "str", "message": "str",
    "features": "reals", "attribution": "reals",
    "prediction": "int", "model_version": "int", "version": "int", "seed": "int",
    "fid_threshold": "real", "latency_budget_ms": "real", "fidelity": "real",
    "latency_ms": "real", "magnitude": "real",
    "verified": "bool", "sla_missed": "bool",
    "model": "object",
}


def _check(name: str, value: Any, kind: str, optional: bool = False):
    if value is None and optional:
        return None
    ok = {
        "str": lambda v: isinstance(v, str),
        "bool": lambda v: isinstance(v, bool),
        "int": lambda v: isinstance(v, int) and not isinstance(v, bool),
        "real": lambda v: (isinstance(v, (int, float)) and not isinstance(v, bool)
                           and math.isfinite(v)),
        "object": lambda v: isinstance(v, dict),
    }
    if kind == "reals":
        if not isinstance(value, list) or not all(ok["real"](v) for v in value):
            raise ProtocolError(f"{name} must be an array of finite numbers")
        return tuple(float(v) for v in value)
    if not ok[kind](value):
        raise ProtocolError(f"{name} must be of type {kind}")
    return float(value) if kind == "real" else value


def to_dict(msg: Message) -> Dict[str, Any]:
    out: Dict[str, Any] = {"type": _TAG[type(msg)]}
    for f in fields(msg):
        v = getattr(msg, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def from_dict(doc: Any) -> Message:
    if not isinstance(doc, dict):
        raise ProtocolError("message must be a JSON object")
    rid = doc.get("request_id") if isinstance(doc.get("request_id"), str) else None
    cls = TYPES.get(doc.get("type"))
    if cls is None:
        raise ProtocolError(f"unknown message type {doc.get('type')!r}", request_id=rid)
    names = [f.name for f in fields(cls)]
    extra = set(doc) - set(names) - {"type"}
    if extra:
        raise ProtocolError(f"unexpected fields {sorted(extra)}", request_id=rid)
    missing = [n for n in names if n not in doc]
    if missing:
        raise ProtocolError(f"missing fields {missing}", request_id=rid)
    kwargs = {}
    try:
        for n in names:
            optional = cls is ErrorResponse and n == "request_id"
            kwargs[n] = _check(n, doc[n], _KINDS[n], optional)
        return cls(**kwargs)
    except ProtocolError as exc:
        exc.request_id = exc.request_id or rid
        raise


def encode(msg: Message) -> str:
    """Canonical single-line JSON, without the trailing newline."""
    return json.dumps(to_dict(msg), sort_keys=True, separators=(",", ":"), allow_nan=False)


def decode(line: Union[str, bytes]) -> Message:
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError:
            raise ProtocolError("message is not valid UTF-8") from None
    line = line.strip()
    if not line:
        raise ProtocolError("empty message")
    try:
        doc = json.loads(line, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"malformed JSON: {exc.msg}") from None
    return from_dict(doc)


def _reject_constant(name: str):
    raise ProtocolError(f"non-finite number {name} is not allowed")


def error_for(exc: ProtocolError) -> ErrorResponse:
    return ErrorResponse(exc.request_id, exc.code, str(exc))
