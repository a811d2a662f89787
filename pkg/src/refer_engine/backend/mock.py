"""Deterministic scripted backend driven by a mock-scenario/1 document.

Every chat/similarity/segment answer is scripted. Entries match on
response_schema_tag plus optional round, role, and request fingerprint;
the most specific matching entry wins, and an entry may carry a reply
sequence that is consumed call by call (for fault injection). Requests
nothing matches raise ScriptedGapError so fixture gaps surface loudly.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..clips import Masklet
from .wire import (
    BackendError,
    ChatRequest,
    SegmentRequest,
    SimilarityRequest,
    decode_image,
    image_key,
    masklet_from_wire,
)

MOCK_SCENARIO_SCHEMA = "mock-scenario/1"

MATCH_KEYS = {"tag", "round", "role", "fingerprint"}


class ScenarioSchemaError(ValueError):
    """Scenario document violates the mock-scenario/1 schema."""


class ScriptedGapError(BackendError):
    """A request arrived that no scripted entry covers."""


@dataclass
class ScriptEntry:
    match: dict
    replies: list
    served: int = 0

    @property
    def specificity(self) -> int:
        score = 0
        if "fingerprint" in self.match:
            score += 8
        if "round" in self.match:
            score += 2
        if "role" in self.match:
            score += 2
        return score

    def matches(self, tag: str, round_: int | None, role: str, fingerprint: str) -> bool:
        if self.match.get("tag") != tag:
            return False
        if "round" in self.match and self.match["round"] != round_:
            return False
        if "role" in self.match and self.match["role"] != role:
            return False
        if "fingerprint" in self.match and self.match["fingerprint"] != fingerprint:
            return False
        return True

    def next_reply(self):
        reply = self.replies[min(self.served, len(self.replies) - 1)]
        self.served += 1
        return reply


def _validate_entry(raw: dict, index: int) -> ScriptEntry:
    if not isinstance(raw, dict) or "match" not in raw:
        raise ScenarioSchemaError(f"entry {index}: missing 'match'")
    match = raw["match"]
    if not isinstance(match, dict) or "tag" not in match:
        raise ScenarioSchemaError(f"entry {index}: match needs a 'tag'")
    unknown = set(match) - MATCH_KEYS
    if unknown:
        raise ScenarioSchemaError(f"entry {index}: unknown match keys {sorted(unknown)}")
    if "reply" in raw:
        replies = [raw["reply"]]
    elif "replies" in raw and isinstance(raw["replies"], list) and raw["replies"]:
        replies = list(raw["replies"])
    else:
        raise ScenarioSchemaError(f"entry {index}: needs 'reply' or non-empty 'replies'")
    return ScriptEntry(match=dict(match), replies=replies)


class MockBackend:
    """Backend whose answers are fully scripted by a scenario document."""

    def __init__(self, document: dict):
        if document.get("schema") != MOCK_SCENARIO_SCHEMA:
            raise ScenarioSchemaError(
                f"expected schema {MOCK_SCENARIO_SCHEMA!r}, got {document.get('schema')!r}"
            )
        raw_entries = document.get("entries", [])
        self.entries = [_validate_entry(e, i) for i, e in enumerate(raw_entries)]
        seen = set()
        for e in self.entries:
            key = json.dumps(e.match, sort_keys=True)
            if key in seen:
                raise ScenarioSchemaError(f"duplicate scripted key: {key}")
            seen.add(key)
        self.meta = document.get("meta", {})
        gt = document.get("gt", {})
        self.gt_masklets = [masklet_from_wire(d) for d in gt.get("masklets", [])]
        self.call_log = []
        self._lock = threading.Lock()

    def _lookup(self, tag: str, round_: int | None, role: str, fingerprint: str):
        with self._lock:
            candidates = [
                e for e in self.entries if e.matches(tag, round_, role, fingerprint)
            ]
            if not candidates:
                raise ScriptedGapError(
                    f"no scripted reply for tag={tag!r} round={round_} role={role!r} "
                    f"fingerprint={fingerprint}"
                )
            best = max(candidates, key=lambda e: e.specificity)
            return best.next_reply()

    # Raw backend surface -------------------------------------------------

    def raw_chat(self, req: ChatRequest) -> str:
        reply = self._lookup(req.response_schema_tag, req.round, req.role, req.fingerprint)
        if not isinstance(reply, str):
            reply = json.dumps(reply)
        return reply

    def raw_similarity(self, req: SimilarityRequest) -> list[float]:
        reply = self._lookup("similarity", None, "", req.fingerprint)
        if isinstance(reply, dict) and "scores" in reply:
            return [float(s) for s in reply["scores"]]
        if isinstance(reply, dict) and "by_image" in reply:
            default = float(reply.get("default", 0.0))
            table = reply["by_image"]
            return [float(table.get(image_key(img), default)) for img in req.images]
        if isinstance(reply, list):
            return [float(s) for s in reply]
        raise ScenarioSchemaError(f"bad similarity reply: {reply!r}")

    def raw_segment(self, req: SegmentRequest) -> list[Masklet]:
        reply = self._lookup("segment", None, "", req.fingerprint)
        if isinstance(reply, dict) and reply.get("mode") == "oracle":
            return self._oracle_segment(req)
        if isinstance(reply, dict) and reply.get("mode") == "empty":
            return [self._empty_masklet(req, i) for i in range(len(req.boxes))]
        if isinstance(reply, dict) and reply.get("mode") == "box_fill":
            return [self._box_fill_masklet(req, i) for i in range(len(req.boxes))]
        if isinstance(reply, dict) and "masklets" in reply:
            return [masklet_from_wire(d) for d in reply["masklets"]]
        raise ScenarioSchemaError(f"bad segment reply: {reply!r}")

    # Oracle segmentation --------------------------------------------------

    def _request_dims(self, req: SegmentRequest) -> tuple[int, int]:
        return decode_image(req.frames[0]).shape[:2]

    def _empty_masklet(self, req: SegmentRequest, target_id: int) -> Masklet:
        h, w = self._request_dims(req)
        return Masklet(
            target_id=target_id, masks=np.zeros((len(req.frames), h, w), dtype=bool)
        )

    def _box_fill_masklet(self, req: SegmentRequest, target_id: int) -> Masklet:
        """Fill the prompt box on every frame; a shape-contract stand-in."""
        h, w = self._request_dims(req)
        x1, y1, x2, y2 = req.boxes[target_id]
        mask = np.zeros((h, w), dtype=bool)
        mask[int(y1 * h) : max(int(y1 * h) + 1, int(y2 * h)),
             int(x1 * w) : max(int(x1 * w) + 1, int(x2 * w))] = True
        return Masklet(
            target_id=target_id,
            masks=np.repeat(mask[None, :, :], len(req.frames), axis=0),
        )

    def _oracle_segment(self, req: SegmentRequest) -> list[Masklet]:
        """Ground-truth echo: each prompt box gets the stored masklet whose
        box at the prompt frame overlaps it most, else an empty masklet."""
        if not self.gt_masklets:
            raise ScenarioSchemaError("oracle segment mode needs a 'gt' block")
        out = []
        for i, box in enumerate(req.boxes):
            best, best_iou = None, 0.0
            for gm in self.gt_masklets:
                gt_box = _mask_bbox_normalized(gm.masks[req.prompt_frame_index])
                if gt_box is None:
                    continue
                iou = _box_iou(box, gt_box)
                if iou > best_iou:
                    best, best_iou = gm, iou
            if best is None:
                out.append(self._empty_masklet(req, i))
            else:
                out.append(Masklet(target_id=i, masks=best.masks))
        return out


def _mask_bbox_normalized(mask: np.ndarray):
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        return None
    h, w = mask.shape
    return (xs.min() / w, ys.min() / h, (xs.max() + 1) / w, (ys.max() + 1) / h)


def _box_iou(a, b) -> float:
    ix1, iy1 = max(a[0], b[0]), max(a[1], b[1])
    ix2, iy2 = min(a[2], b[2]), min(a[3], b[3])
    if ix2 <= ix1 or iy2 <= iy1:
        return 0.0
    inter = (ix2 - ix1) * (iy2 - iy1)
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def load_mock_scenario(path: str | Path) -> MockBackend:
    """Build a scripted backend handle from a mock-scenario/1 JSON file."""
    document = json.loads(Path(path).read_text())
    return MockBackend(document)
