"""Model interfaces plus the deterministic stub implementations.

A real deployment implements the same three interfaces around hosted
weights (a multimodal chat model, a text-image embedding model, a
promptable video segmentation model). The stubs are deterministic and
schema-faithful so the wire contract can be tested without any model.
"""

from __future__ import annotations

import hashlib
import json
from typing import Protocol

import numpy as np


class ChatModel(Protocol):
    def reply(self, system_prompt: str, user_text: str, images: list[np.ndarray], tag: str) -> str: ...


class SimilarityModel(Protocol):
    def scores(self, query: str, images: list[np.ndarray]) -> list[float]: ...


class SegmentModel(Protocol):
    def segment(
        self,
        frames: list[np.ndarray],
        prompt_frame_index: int,
        boxes: list[tuple[float, float, float, float]],
    ) -> list[np.ndarray]: ...


def _first_json_array(text: str):
    decoder = json.JSONDecoder()
    for i, ch in enumerate(text):
        if ch != "[":
            continue
        try:
            value, _ = decoder.raw_decode(text, i)
        except json.JSONDecodeError:
            continue
        if isinstance(value, list):
            return value
    return None


class StubChatModel:
    """Schema-valid canned replies keyed by the response tag."""

    def reply(self, system_prompt: str, user_text: str, images: list[np.ndarray], tag: str) -> str:
        if tag == "frame_scores":
            return json.dumps([50] * max(1, len(images)))
        if tag == "box":
            return json.dumps([0.25, 0.25, 0.75, 0.75])
        if tag == "expressions":
            return json.dumps(["the most salient object"])
        if tag == "qa_answers":
            questions = _first_json_array(user_text) or [{}]
            answers = []
            for q in questions:
                entry = {"answer": "yes", "explanation": "stub affirmation"}
                if isinstance(q, dict) and isinstance(q.get("choices"), list) and q["choices"]:
                    entry["choice"] = q.get("gold", q["choices"][0])
                answers.append(entry)
            return json.dumps(answers)
        if tag == "questions":
            if "attribute" in user_text.lower():
                return json.dumps([{"attribute": "object", "level": "high"}])
            return json.dumps(
                [
                    {"kind": "visibility", "question": "Are the targets clearly visible in the keyframe?"},
                    {"kind": "completeness", "question": "Does the keyframe cover all the referred targets?"},
                    {"kind": "optimality", "question": "Is a context frame better than the keyframe?"},
                ]
            )
        return json.dumps(
            {
                "frame_scores": [50] * max(1, len(images)),
                "expressions": ["the most salient object"],
                "boxes": [[0.25, 0.25, 0.75, 0.75]],
            }
        )


class StubSimilarityModel:
    """Hash-derived cosine-style scores: deterministic, in [-1, 1]."""

    def scores(self, query: str, images: list[np.ndarray]) -> list[float]:
        out = []
        for img in images:
            digest = hashlib.sha256(query.encode() + img.tobytes()).digest()
            out.append(int.from_bytes(digest[:4], "big") % 2001 / 1000.0 - 1.0)
        return out


class StubSegmentModel:
    """Propagates the prompt box as a filled rectangle over every frame."""

    def segment(self, frames, prompt_frame_index, boxes):
        height, width = frames[0].shape[:2]
        out = []
        for x1, y1, x2, y2 in boxes:
            mask = np.zeros((height, width), dtype=bool)
            mask[
                int(y1 * height) : max(int(y1 * height) + 1, int(y2 * height)),
                int(x1 * width) : max(int(x1 * width) + 1, int(x2 * width)),
            ] = True
            out.append(np.repeat(mask[None, :, :], len(frames), axis=0))
        return out


_REGISTRY = {
    "chat": {"stub": StubChatModel},
    "similarity": {"stub": StubSimilarityModel},
    "segment": {"stub": StubSegmentModel},
}


def build_model(capability: str, name: str | None):
    """Instantiate the configured model for one capability, or None."""
    if name is None:
        return None
    options = _REGISTRY[capability]
    if name not in options:
        raise ValueError(
            f"unknown {capability} model {name!r}; available: {sorted(options)}"
        )
    return options[name]()
