"""FastAPI service implementing the /v1 wire protocol.

Endpoints conform to the versioned request/response schemas of the
engine's protocol clients: JSON bodies, base64-PNG images, masklets as
per-row run-length counts (alternating 0/1 runs, leading 0-run). Model
calls are serialized per capability, standing in for per-device
serialization on real hardware.
"""

from __future__ import annotations

import base64
import io
import logging
import threading

import numpy as np
from fastapi import Body, FastAPI, Request
from fastapi.responses import JSONResponse
from PIL import Image

from .config import AdapterConfig
from .models import build_model

logger = logging.getLogger(__name__)

CHAT_RESPONSE_SCHEMA = "chat-response/1"
SIMILARITY_RESPONSE_SCHEMA = "similarity-response/1"
SEGMENT_RESPONSE_SCHEMA = "segment-response/1"
ERROR_SCHEMA = "error/1"


class RequestError(Exception):
    def __init__(self, message: str, status: int = 400, retryable: bool = False):
        super().__init__(message)
        self.status = status
        self.retryable = retryable


def _error(message: str, status: int, retryable: bool) -> JSONResponse:
    return JSONResponse(
        status_code=status,
        content={"schema": ERROR_SCHEMA, "error": message, "retryable": retryable},
    )


def _decode_image(data: str, max_bytes: int) -> np.ndarray:
    try:
        raw = base64.b64decode(data)
    except Exception as exc:
        raise RequestError(f"image is not valid base64: {exc}") from exc
    if len(raw) > max_bytes:
        raise RequestError(f"image exceeds {max_bytes} byte limit")
    try:
        with Image.open(io.BytesIO(raw)) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except Exception as exc:
        raise RequestError(f"image is not decodable PNG: {exc}") from exc


def rle_encode(mask: np.ndarray) -> list[list[int]]:
    """Per-row counts of alternating 0/1 runs, starting with a 0-run."""
    rows = []
    for row in np.asarray(mask, dtype=bool):
        counts = [0]
        current = False
        for px in row:
            if px == current:
                counts[-1] += 1
            else:
                counts.append(1)
                current = not current
        rows.append(counts)
    return rows


def create_app(config: AdapterConfig | None = None) -> FastAPI:
    config = config or AdapterConfig()
    app = FastAPI(title="refer-adapter", version="0.1.0")

    models = {
        "chat": build_model("chat", config.chat_model),
        "similarity": build_model("similarity", config.similarity_model),
        "segment": build_model("segment", config.segment_model),
    }
    locks = {name: threading.Lock() for name in models}

    def require(capability: str):
        model = models[capability]
        if model is None:
            raise RequestError(
                f"capability {capability!r} is not configured on this adapter",
                status=503,
                retryable=False,
            )
        return model

    def check_auth(request: Request) -> None:
        if config.bearer_token is None:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {config.bearer_token}":
            raise RequestError("missing or invalid bearer token", status=401)

    @app.exception_handler(RequestError)
    async def handle_request_error(request: Request, exc: RequestError):
        return _error(str(exc), exc.status, exc.retryable)

    @app.exception_handler(Exception)
    async def handle_unexpected(request: Request, exc: Exception):
        logger.exception("request failed")
        return _error(f"internal error: {exc}", 500, True)

    @app.get("/v1/health")
    def health():
        return {
            "status": "ok",
            "capabilities": {name: m is not None for name, m in models.items()},
        }

    @app.post("/v1/chat")
    def chat(request: Request, body: dict = Body(...)):
        check_auth(request)
        model = require("chat")
        tag = body.get("response_schema_tag", "free_text")
        images = [
            _decode_image(i, config.max_image_bytes) for i in body.get("images", [])
        ]
        with locks["chat"]:
            text = model.reply(
                body.get("system_prompt", ""), body.get("user_text", ""), images, tag
            )
        return {"schema": CHAT_RESPONSE_SCHEMA, "text": text}

    @app.post("/v1/similarity")
    def similarity(request: Request, body: dict = Body(...)):
        check_auth(request)
        model = require("similarity")
        encoded = body.get("images", [])
        if not encoded:
            raise RequestError("similarity request needs at least one image")
        images = [_decode_image(i, config.max_image_bytes) for i in encoded]
        with locks["similarity"]:
            scores = model.scores(body.get("query_text", ""), images)
        if len(scores) != len(images):
            raise RequestError("model produced a score-count mismatch", status=500, retryable=True)
        return {"schema": SIMILARITY_RESPONSE_SCHEMA, "scores": [float(s) for s in scores]}

    @app.post("/v1/segment")
    def segment(request: Request, body: dict = Body(...)):
        check_auth(request)
        model = require("segment")
        encoded = body.get("frames", [])
        if not encoded:
            raise RequestError("segment request needs at least one frame")
        frames = [_decode_image(i, config.max_image_bytes) for i in encoded]
        prompt_index = int(body.get("prompt_frame_index", 0))
        if not 0 <= prompt_index < len(frames):
            raise RequestError(f"prompt_frame_index {prompt_index} out of range")
        boxes = []
        for raw in body.get("boxes", []):
            if len(raw) != 4:
                raise RequestError(f"box needs 4 coordinates, got {raw}")
            x1, y1, x2, y2 = (float(v) for v in raw)
            if not (0.0 <= x1 < x2 <= 1.0 and 0.0 <= y1 < y2 <= 1.0):
                raise RequestError(f"invalid box {raw}")
            boxes.append((x1, y1, x2, y2))
        with locks["segment"]:
            masklets = model.segment(frames, prompt_index, boxes)
        height, width = frames[0].shape[:2]
        docs = []
        for i, masks in enumerate(masklets):
            if masks.shape != (len(frames), height, width):
                raise RequestError("model produced a mask-shape mismatch", status=500, retryable=True)
            docs.append(
                {
                    "target_id": i,
                    "size": [height, width],
                    "frames": [rle_encode(masks[t]) for t in range(len(frames))],
                }
            )
        return {"schema": SEGMENT_RESPONSE_SCHEMA, "masklets": docs}

    return app
