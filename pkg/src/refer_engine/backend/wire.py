"""Wire-level types shared by real and mock model backends.

All bodies are JSON with a versioned ``schema`` field. Images travel as
base64-encoded lossless PNG. Structured model replies are requested by
embedding a schema instruction in the prompt and recovered by extracting
the first valid JSON value from the reply text.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from ..clips import from_png_bytes, png_bytes

CHAT_REQUEST_SCHEMA = "chat-request/1"
CHAT_RESPONSE_SCHEMA = "chat-response/1"
SIMILARITY_REQUEST_SCHEMA = "similarity-request/1"
SIMILARITY_RESPONSE_SCHEMA = "similarity-response/1"
SEGMENT_REQUEST_SCHEMA = "segment-request/1"
SEGMENT_RESPONSE_SCHEMA = "segment-response/1"
ERROR_SCHEMA = "error/1"

RESPONSE_SCHEMA_TAGS = (
    "free_text",
    "frame_scores",
    "expressions",
    "box",
    "qa_answers",
    "questions",
)

DEFAULT_MAX_IMAGE_BYTES = 8 * 1024 * 1024


class BackendError(RuntimeError):
    """Base class for protocol-level failures."""


class TransportError(BackendError):
    """Connection-level failure; retryable."""


class SchemaViolation(BackendError):
    """Reply did not match the expected shape; retryable."""

    def __init__(self, message: str, raw_text: str = ""):
        super().__init__(message)
        self.raw_text = raw_text


class BackendParseError(BackendError):
    """Schema violation persisted through all retries; carries raw text."""

    def __init__(self, message: str, raw_text: str = ""):
        super().__init__(message)
        self.raw_text = raw_text


def encode_image(image: np.ndarray) -> str:
    return base64.b64encode(png_bytes(image)).decode("ascii")


def decode_image(data: str) -> np.ndarray:
    return from_png_bytes(base64.b64decode(data))


def image_key(encoded: str) -> str:
    """Stable short hash of an encoded image, for scripted lookups."""
    return hashlib.sha256(base64.b64decode(encoded)).hexdigest()[:16]


def canonical_json(body: dict) -> str:
    return json.dumps(body, sort_keys=True, separators=(",", ":"))


def fingerprint(body: dict) -> str:
    """Stable hash of a canonicalized request body."""
    return hashlib.sha256(canonical_json(body).encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class ChatRequest:
    """One multimodal chat exchange.

    ``role`` and ``round`` ride along the wire so transcripts stay
    auditable and scripted backends can key replies per pipeline stage.
    """

    system_prompt: str
    user_text: str
    images: tuple[str, ...] = ()  # base64 PNG
    response_schema_tag: str = "free_text"
    role: str = ""
    round: int = 1

    def __post_init__(self):
        if self.response_schema_tag not in RESPONSE_SCHEMA_TAGS:
            raise ValueError(f"unknown response_schema_tag: {self.response_schema_tag}")
        object.__setattr__(self, "images", tuple(self.images))

    def to_body(self) -> dict:
        return {
            "schema": CHAT_REQUEST_SCHEMA,
            "system_prompt": self.system_prompt,
            "user_text": self.user_text,
            "images": list(self.images),
            "response_schema_tag": self.response_schema_tag,
            "role": self.role,
            "round": self.round,
        }

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.to_body())


@dataclass(frozen=True)
class SimilarityRequest:
    """Text-image similarity scoring over one or more images."""

    query_text: str
    images: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))
        if len(self.images) < 1:
            raise ValueError("similarity request needs at least one image")

    def to_body(self) -> dict:
        return {
            "schema": SIMILARITY_REQUEST_SCHEMA,
            "query_text": self.query_text,
            "images": list(self.images),
        }

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.to_body())


@dataclass(frozen=True)
class SegmentRequest:
    """Box-prompted video segmentation from one prompt frame."""

    frames: tuple[str, ...]
    prompt_frame_index: int
    boxes: tuple[tuple[float, float, float, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "boxes", tuple(tuple(b) for b in self.boxes))
        if not 0 <= self.prompt_frame_index < len(self.frames):
            raise ValueError(
                f"prompt_frame_index {self.prompt_frame_index} out of range "
                f"for {len(self.frames)} frames"
            )
        for box in self.boxes:
            x1, y1, x2, y2 = box
            if not (x1 < x2 and y1 < y2):
                raise ValueError(f"degenerate box {box}: need x1<x2 and y1<y2")
            if min(box) < 0.0 or max(box) > 1.0:
                raise ValueError(f"box {box} outside [0,1]")

    def to_body(self) -> dict:
        return {
            "schema": SEGMENT_REQUEST_SCHEMA,
            "frames": list(self.frames),
            "prompt_frame_index": self.prompt_frame_index,
            "boxes": [list(b) for b in self.boxes],
        }

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.to_body())


@dataclass(frozen=True)
class BackendVerdictScores:
    """Per-image scalar scores, normalized to [0,1] by the consumer."""

    scores: tuple[float, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))
        if any(not np.isfinite(s) for s in self.scores):
            raise ValueError("non-finite score in backend reply")


def extract_first_json(text: str):
    """Return the first valid JSON value embedded in free text.

    Scans for candidate start characters and attempts a raw decode at
    each; raises SchemaViolation when nothing parses.
    """
    decoder = json.JSONDecoder()
    starts = set('{["-0123456789tfn')
    for i, ch in enumerate(text):
        if ch not in starts:
            continue
        try:
            value, _ = decoder.raw_decode(text, i)
        except json.JSONDecodeError:
            continue
        return value
    raise SchemaViolation("no JSON value found in reply", raw_text=text)


def _as_number_list(value, raw_text: str) -> list[float]:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return [float(value)]
    if isinstance(value, list) and value and all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    ):
        return [float(v) for v in value]
    raise SchemaViolation(f"expected a number list, got {value!r}", raw_text=raw_text)


def parse_reply(tag: str, text: str):
    """Coerce raw reply text into the structured shape for ``tag``."""
    if tag == "free_text":
        return text
    value = extract_first_json(text)
    if tag == "frame_scores":
        return _as_number_list(value, text)
    if tag == "box":
        nums = _as_number_list(value, text)
        if len(nums) != 4:
            raise SchemaViolation(f"box reply needs 4 numbers, got {len(nums)}", text)
        return nums
    if tag == "expressions":
        if isinstance(value, list) and all(isinstance(v, str) for v in value):
            return value
        raise SchemaViolation(f"expected a string list, got {value!r}", text)
    if tag in ("qa_answers", "questions"):
        if isinstance(value, list) and all(isinstance(v, dict) for v in value):
            return value
        raise SchemaViolation(f"expected a list of objects, got {value!r}", text)
    raise ValueError(f"unknown response_schema_tag: {tag}")


# Wire codec for masklets rides on the RLE document format.


def masklet_to_wire(masklet) -> dict:
    from ..clips import masklet_to_rle

    return masklet_to_rle(masklet)


def masklet_from_wire(doc: dict):
    from ..clips import masklet_from_rle

    return masklet_from_rle(doc)
