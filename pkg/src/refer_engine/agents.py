"""Reasoning agents: intent analysis over the focus canvas, and
per-target grounding on the raw keyframe.

Grounding boxes must live in keyframe coordinates (the canvas is for
reasoning only), so each expression is grounded against the
full-resolution keyframe in its own call.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .backend import ChatRequest, chat
from .backend.client import Backend, DEFAULT_RETRY, RetryPolicy
from .backend.wire import encode_image
from .layout import FocusCanvas
from .prompts import render_prompt

logger = logging.getLogger(__name__)

MAX_EXPRESSION_CHARS = 200
MIN_BOX_AREA = 1e-4
PIXEL_COORD_THRESHOLD = 1.5


class IntentFailure(RuntimeError):
    """The intent agent produced no usable target expressions."""


class GroundingFailure(RuntimeError):
    """A target's box was degenerate after normalization and clipping."""


@dataclass(frozen=True)
class TargetExpression:
    target_id: int
    expression: str
    revision: int = 0

    def __post_init__(self):
        if not self.expression:
            raise ValueError("expression must be nonempty")
        if len(self.expression) > MAX_EXPRESSION_CHARS:
            raise ValueError("expression exceeds the length cap")


@dataclass(frozen=True)
class GroundedTarget:
    target_id: int
    box: tuple[float, float, float, float]
    expression: TargetExpression

    def __post_init__(self):
        x1, y1, x2, y2 = self.box
        if not (0.0 <= x1 < x2 <= 1.0 and 0.0 <= y1 < y2 <= 1.0):
            raise ValueError(f"invalid box {self.box}")
        if (x2 - x1) * (y2 - y1) < MIN_BOX_AREA:
            raise ValueError(f"degenerate box {self.box}")


def _consistency_feedback_block(feedback: str | None) -> str:
    if not feedback:
        return ""
    return (
        "A previous round's targets were judged inconsistent with the query. "
        f"Revise your reasoning under this report:\n{feedback}\n"
    )


def build_expressions(
    texts: list[str],
    max_targets: int,
    previous: list[TargetExpression] | None = None,
) -> list[TargetExpression]:
    """Assign dense ids, cap length and count, and track revisions."""
    cleaned = [t.strip()[:MAX_EXPRESSION_CHARS] for t in texts if t and t.strip()]
    if not cleaned:
        raise IntentFailure("backend returned no target expressions")
    if len(cleaned) > max_targets:
        logger.warning("truncating %d expressions to max_targets=%d", len(cleaned), max_targets)
        cleaned = cleaned[:max_targets]
    prev_by_id = {e.target_id: e for e in previous} if previous else {}
    out = []
    for i, text in enumerate(cleaned):
        prev = prev_by_id.get(i)
        if prev is None:
            revision = 0
        elif prev.expression == text:
            revision = prev.revision
        else:
            revision = prev.revision + 1
        out.append(TargetExpression(target_id=i, expression=text, revision=revision))
    return out


def analyze_intent(
    canvas: FocusCanvas,
    query: str,
    chat_backend: Backend,
    max_targets: int = 8,
    feedback: str | None = None,
    previous: list[TargetExpression] | None = None,
    round_number: int = 1,
    retry: RetryPolicy = DEFAULT_RETRY,
) -> list[TargetExpression]:
    """Rewrite the query into one discriminative expression per target."""
    prompt = render_prompt(
        "intent",
        query=query,
        slot_legend=canvas.legend(),
        max_targets=max_targets,
        feedback_block=_consistency_feedback_block(feedback),
    )
    req = ChatRequest(
        system_prompt=render_prompt("system_reasoner"),
        user_text=prompt,
        images=(encode_image(canvas.image),),
        response_schema_tag="expressions",
        role="intent",
        round=round_number,
    )
    reply = chat(chat_backend, req, retry)
    return build_expressions(reply.value, max_targets, previous=previous)


def normalize_box(
    raw: list[float], width: int, height: int
) -> tuple[float, float, float, float]:
    """Map a model box reply to a normalized, ordered, clipped box.

    Values above the pixel-detection threshold mean the reply used pixel
    coordinates; those are divided by the image dimensions. The rule is
    idempotent: an already-normalized box passes through unchanged.
    """
    x1, y1, x2, y2 = (float(v) for v in raw)
    if any(v > PIXEL_COORD_THRESHOLD for v in (x1, y1, x2, y2)):
        x1, x2 = x1 / width, x2 / width
        y1, y2 = y1 / height, y2 / height
    x1, x2 = sorted((x1, x2))
    y1, y2 = sorted((y1, y2))
    clip = lambda v: min(1.0, max(0.0, v))
    return (clip(x1), clip(y1), clip(x2), clip(y2))


def ground_target(
    keyframe: np.ndarray,
    expr: TargetExpression,
    chat_backend: Backend,
    round_number: int = 1,
    retry: RetryPolicy = DEFAULT_RETRY,
) -> GroundedTarget:
    """Ground one expression as a normalized box on the keyframe."""
    req = ChatRequest(
        system_prompt=render_prompt("system_grounder"),
        user_text=render_prompt("grounding", expression=expr.expression),
        images=(encode_image(keyframe),),
        response_schema_tag="box",
        role="grounding",
        round=round_number,
    )
    reply = chat(chat_backend, req, retry)
    height, width = keyframe.shape[:2]
    box = normalize_box(reply.value, width, height)
    x1, y1, x2, y2 = box
    if x2 <= x1 or y2 <= y1 or (x2 - x1) * (y2 - y1) < MIN_BOX_AREA:
        raise GroundingFailure(
            f"degenerate box {box} for target {expr.target_id} ({expr.expression!r})"
        )
    return GroundedTarget(target_id=expr.target_id, box=box, expression=expr)


def ground_all(
    keyframe: np.ndarray,
    expressions: list[TargetExpression],
    chat_backend: Backend,
    round_number: int = 1,
    retry: RetryPolicy = DEFAULT_RETRY,
) -> tuple[list[GroundedTarget], list[TargetExpression]]:
    """Ground every expression; returns (grounded, dropped)."""
    grounded, dropped = [], []
    for expr in expressions:
        try:
            grounded.append(
                ground_target(keyframe, expr, chat_backend, round_number, retry)
            )
        except GroundingFailure as exc:
            logger.warning("%s", exc)
            dropped.append(expr)
    return grounded, dropped
