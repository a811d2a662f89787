"""Protocol clients: retry handling, reply coercion, and the HTTP backend.

Backends expose three raw operations (raw_chat, raw_similarity,
raw_segment). The module-level ``chat`` / ``similarity`` / ``segment``
functions add retries, schema validation, and arity checks on top, so
scripted mocks and real HTTP services behave identically to callers.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol

import requests

from ..clips import Masklet
from .wire import (
    BackendParseError,
    BackendError,
    BackendVerdictScores,
    ChatRequest,
    ERROR_SCHEMA,
    SchemaViolation,
    SegmentRequest,
    SimilarityRequest,
    TransportError,
    decode_image,
    masklet_from_wire,
    parse_reply,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RetryPolicy:
    """Bounded retries on transport errors and schema violations."""

    attempts: int = 3
    backoff_base: float = 0.5

    def sleep(self, attempt: int) -> None:
        if self.backoff_base > 0:
            time.sleep(self.backoff_base * (2 ** (attempt - 1)))


DEFAULT_RETRY = RetryPolicy()


@dataclass
class CallRecord:
    """One backend call as seen by the protocol layer, for audit logs."""

    kind: str  # chat | similarity | segment
    tag: str
    role: str
    round: int
    fingerprint: str
    user_text: str = ""
    system_prompt: str = ""


class Backend(Protocol):
    """Raw transport surface implemented by HTTP and mock backends."""

    call_log: list[CallRecord]

    def raw_chat(self, req: ChatRequest) -> str: ...

    def raw_similarity(self, req: SimilarityRequest) -> list[float]: ...

    def raw_segment(self, req: SegmentRequest) -> list[Masklet]: ...


def _record(backend, kind: str, req) -> None:
    log = getattr(backend, "call_log", None)
    if log is None:
        return
    if isinstance(req, ChatRequest):
        log.append(
            CallRecord(
                kind=kind,
                tag=req.response_schema_tag,
                role=req.role,
                round=req.round,
                fingerprint=req.fingerprint,
                user_text=req.user_text,
                system_prompt=req.system_prompt,
            )
        )
    else:
        log.append(CallRecord(kind=kind, tag=kind, role="", round=0, fingerprint=req.fingerprint))


@dataclass
class StructuredReply:
    """Parsed chat reply plus provenance for transcripts."""

    value: object
    raw_text: str
    retry_count: int = 0


def chat(
    backend: Backend,
    req: ChatRequest,
    retry: RetryPolicy = DEFAULT_RETRY,
    parser: Callable[[str], object] | None = None,
) -> StructuredReply:
    """Issue a chat request and coerce the reply per its schema tag.

    Retries never change request content: the identical request is
    re-sent on transport errors and schema violations.
    """
    parse = parser or (lambda text: parse_reply(req.response_schema_tag, text))
    last_error: Exception | None = None
    raw_text = ""
    for attempt in range(1, retry.attempts + 1):
        try:
            _record(backend, "chat", req)
            raw_text = backend.raw_chat(req)
            value = parse(raw_text)
            return StructuredReply(value=value, raw_text=raw_text, retry_count=attempt - 1)
        except (TransportError, SchemaViolation) as exc:
            last_error = exc
            logger.warning(
                "chat attempt %d/%d failed (%s: %s)", attempt, retry.attempts,
                type(exc).__name__, exc,
            )
            if attempt < retry.attempts:
                retry.sleep(attempt)
    if isinstance(last_error, SchemaViolation):
        raise BackendParseError(
            f"reply never matched schema {req.response_schema_tag!r}: {last_error}",
            raw_text=raw_text,
        )
    raise TransportError(f"chat failed after {retry.attempts} attempts: {last_error}")


def similarity(
    backend: Backend, req: SimilarityRequest, retry: RetryPolicy = DEFAULT_RETRY
) -> list[float]:
    """Raw cosine-style similarity per image; no normalization here."""
    last_error: Exception | None = None
    for attempt in range(1, retry.attempts + 1):
        try:
            _record(backend, "similarity", req)
            scores = backend.raw_similarity(req)
            break
        except TransportError as exc:
            last_error = exc
            if attempt < retry.attempts:
                retry.sleep(attempt)
    else:
        raise TransportError(f"similarity failed after {retry.attempts} attempts: {last_error}")
    if len(scores) != len(req.images):
        raise BackendError(
            f"similarity arity mismatch: {len(scores)} scores for {len(req.images)} images"
        )
    try:
        return list(BackendVerdictScores(scores=scores).scores)
    except ValueError as exc:
        raise BackendError(str(exc)) from exc


def segment(
    backend: Backend, req: SegmentRequest | None, retry: RetryPolicy = DEFAULT_RETRY
) -> list[Masklet]:
    """One masklet per prompt box, in box order. Zero boxes short-circuits."""
    if req is None or not req.boxes:
        return []
    last_error: Exception | None = None
    for attempt in range(1, retry.attempts + 1):
        try:
            _record(backend, "segment", req)
            masklets = backend.raw_segment(req)
            break
        except TransportError as exc:
            last_error = exc
            if attempt < retry.attempts:
                retry.sleep(attempt)
    else:
        raise TransportError(f"segment failed after {retry.attempts} attempts: {last_error}")
    if len(masklets) != len(req.boxes):
        raise BackendError(
            f"masklet count {len(masklets)} != box count {len(req.boxes)}"
        )
    height, width = decode_image(req.frames[0]).shape[:2]
    for m in masklets:
        if m.shape != (len(req.frames), height, width):
            raise BackendError(
                f"masklet shape {m.shape} != requested "
                f"({len(req.frames)}, {height}, {width})"
            )
    return masklets


@dataclass
class HttpBackend:
    """JSON-over-HTTP client for the /v1/chat, /v1/similarity, /v1/segment API."""

    chat_url: str
    similarity_url: str
    segment_url: str
    bearer_token: str | None = None
    timeout: float = 60.0
    call_log: list[CallRecord] = field(default_factory=list)

    def _post(self, url: str, body: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.bearer_token:
            headers["Authorization"] = f"Bearer {self.bearer_token}"
        try:
            resp = requests.post(url, json=body, headers=headers, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(f"POST {url} failed: {exc}") from exc
        if resp.status_code >= 500:
            raise TransportError(f"POST {url} -> {resp.status_code}: {resp.text[:200]}")
        try:
            payload = resp.json()
        except ValueError as exc:
            raise TransportError(f"non-JSON response from {url}") from exc
        if resp.status_code >= 400 or payload.get("schema") == ERROR_SCHEMA:
            message = payload.get("error", f"HTTP {resp.status_code}")
            if payload.get("retryable"):
                raise TransportError(message)
            raise BackendError(message)
        return payload

    def raw_chat(self, req: ChatRequest) -> str:
        payload = self._post(self.chat_url, req.to_body())
        if "text" not in payload:
            raise SchemaViolation("chat response missing 'text'", raw_text=str(payload))
        return str(payload["text"])

    def raw_similarity(self, req: SimilarityRequest) -> list[float]:
        payload = self._post(self.similarity_url, req.to_body())
        scores = payload.get("scores")
        if not isinstance(scores, list):
            raise BackendError("similarity response missing 'scores'")
        return [float(s) for s in scores]

    def raw_segment(self, req: SegmentRequest) -> list[Masklet]:
        payload = self._post(self.segment_url, req.to_body())
        docs = payload.get("masklets")
        if not isinstance(docs, list):
            raise BackendError("segment response missing 'masklets'")
        return [masklet_from_wire(d) for d in docs]
