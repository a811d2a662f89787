from .client import (
    Backend,
    CallRecord,
    HttpBackend,
    RetryPolicy,
    StructuredReply,
    chat,
    segment,
    similarity,
)
from .mock import MockBackend, ScriptedGapError, ScenarioSchemaError, load_mock_scenario
from .wire import (
    BackendError,
    BackendParseError,
    BackendVerdictScores,
    ChatRequest,
    SchemaViolation,
    SegmentRequest,
    SimilarityRequest,
    TransportError,
    decode_image,
    encode_image,
    extract_first_json,
    fingerprint,
    image_key,
    parse_reply,
)

__all__ = [
    "Backend",
    "BackendError",
    "BackendParseError",
    "BackendVerdictScores",
    "CallRecord",
    "ChatRequest",
    "HttpBackend",
    "MockBackend",
    "RetryPolicy",
    "ScenarioSchemaError",
    "SchemaViolation",
    "ScriptedGapError",
    "SegmentRequest",
    "SimilarityRequest",
    "StructuredReply",
    "TransportError",
    "chat",
    "decode_image",
    "encode_image",
    "extract_first_json",
    "fingerprint",
    "image_key",
    "load_mock_scenario",
    "parse_reply",
    "segment",
    "similarity",
]
