"""Text-guided coarse-to-fine frame selection.

Coarse stage: similarity between the query and every frame, one argmax
pick per contiguous segment. Fine stage: a single batched chat call
scores the candidates 0-100. The two scores fuse linearly,
``fused = alpha * clip_score + beta * mllm_score``, and the top-k frames
by fused score become the selection, keyframe = fused argmax.

Reflection feedback from a failed existence check re-runs only the fine
stage: the coarse candidate pool is feedback-blind and reused.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

from .backend import ChatRequest, SimilarityRequest, chat, similarity
from .backend.client import Backend, DEFAULT_RETRY, RetryPolicy
from .backend.wire import SchemaViolation, encode_image, parse_reply
from .clips import VideoClip
from .config import SelectionConfig
from .prompts import render_prompt

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FrameScore:
    """Per-candidate score triple; fused is exactly alpha*clip + beta*mllm."""

    frame_index: int
    s_clip: float
    s_mllm: float
    s_fused: float

    def __post_init__(self):
        for name in ("s_clip", "s_mllm"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0,1]")


@dataclass(frozen=True)
class FrameSelection:
    """Chosen top-k frames plus the scored candidate pool they came from."""

    candidates: tuple[FrameScore, ...]
    selected: tuple[int, ...]
    keyframe_index: int
    round: int = 1

    def __post_init__(self):
        if self.keyframe_index not in self.selected:
            raise ValueError("keyframe must be one of the selected frames")
        if list(self.selected) != sorted(set(self.selected)):
            raise ValueError("selected indices must be distinct and ascending")

    def score_for(self, frame_index: int) -> FrameScore:
        for c in self.candidates:
            if c.frame_index == frame_index:
                return c
        raise KeyError(frame_index)


@dataclass(frozen=True)
class CoarsePool:
    """Cached coarse-stage output reused across reflection rounds."""

    frame_indices: tuple[int, ...]
    raw_scores: tuple[float, ...]
    norm_scores: tuple[float, ...]
    encoded_frames: tuple[str, ...] = field(repr=False, default=())


def segment_bounds(t: int, n: int) -> list[tuple[int, int]]:
    """Partition [0, t) into min(n, t) contiguous near-equal segments.

    The first t mod n segments are one frame longer.
    """
    n = min(n, t)
    base, rem = divmod(t, n)
    bounds = []
    start = 0
    for i in range(n):
        size = base + (1 if i < rem else 0)
        bounds.append((start, start + size))
        start += size
    return bounds


def coarse_select(
    clip: VideoClip,
    query: str,
    n: int,
    sim_backend: Backend,
    retry: RetryPolicy = DEFAULT_RETRY,
) -> list[tuple[int, float]]:
    """One (frame_index, raw_score) pick per segment, argmax within each.

    Ties break to the lowest frame index; results ascend by frame index.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    encoded = [encode_image(clip.frame(i)) for i in range(clip.frame_count)]
    raw = similarity(sim_backend, SimilarityRequest(query, tuple(encoded)), retry)
    picks = []
    for start, end in segment_bounds(clip.frame_count, n):
        best = start
        for i in range(start + 1, end):
            if raw[i] > raw[best]:
                best = i
        picks.append((best, raw[best]))
    return picks


def normalize_clip_scores(raw: list[float]) -> list[float]:
    """Min-max normalize over the candidate set; constant lists map to 0.5."""
    if not raw:
        raise ValueError("empty score list")
    if any(not math.isfinite(s) for s in raw):
        raise ValueError(f"non-finite similarity score in {raw}")
    lo, hi = min(raw), max(raw)
    if hi == lo:
        return [0.5] * len(raw)
    return [(s - lo) / (hi - lo) for s in raw]


def _clamp_unit(value: float, what: str) -> float:
    if value < 0.0 or value > 1.0:
        logger.warning("%s score %.3f outside [0,1]; clamping", what, value)
        return min(1.0, max(0.0, value))
    return value


def fine_score(
    encoded_candidates: list[str],
    frame_indices: list[int],
    query: str,
    chat_backend: Backend,
    feedback: str | None = None,
    round_number: int = 1,
    retry: RetryPolicy = DEFAULT_RETRY,
) -> list[float]:
    """One batched importance-scoring call; 0-100 replies mapped to [0,1]."""
    if not encoded_candidates:
        raise ValueError("no candidates to score")
    prompt = render_prompt(
        "fine_score",
        query=query,
        frame_list=", ".join(str(i) for i in frame_indices),
        count=len(encoded_candidates),
        feedback_block=_feedback_block(feedback),
    )
    req = ChatRequest(
        system_prompt=render_prompt("system_scorer"),
        user_text=prompt,
        images=tuple(encoded_candidates),
        response_schema_tag="frame_scores",
        role="fine_score",
        round=round_number,
    )

    def parse(text: str) -> list[float]:
        scores = parse_reply("frame_scores", text)
        if len(scores) != len(encoded_candidates):
            raise SchemaViolation(
                f"frame score arity mismatch: {len(scores)} scores for "
                f"{len(encoded_candidates)} candidates",
                raw_text=text,
            )
        return scores

    reply = chat(chat_backend, req, retry, parser=parse)
    return [_clamp_unit(s / 100.0, "frame importance") for s in reply.value]


def _feedback_block(feedback: str | None) -> str:
    if not feedback:
        return ""
    return (
        "A previous attempt was rejected with this feedback; re-score the "
        f"frames under it:\n{feedback}\n"
    )


def fuse_and_pick(
    frame_indices: list[int],
    clip_scores: list[float],
    mllm_scores: list[float],
    k: int,
    alpha: float,
    beta: float,
    round_number: int = 1,
) -> FrameSelection:
    """Fuse score pairs and keep the top-k frames.

    Rank ties break to the lower frame index; the selection is re-sorted
    ascending; keyframe is the fused-score argmax among the selected.
    """
    if k <= 0:
        raise ValueError("k must be positive")
    if not len(frame_indices) == len(clip_scores) == len(mllm_scores):
        raise ValueError("score lists must align with frame indices")
    candidates = tuple(
        FrameScore(
            frame_index=idx,
            s_clip=c,
            s_mllm=m,
            s_fused=alpha * c + beta * m,
        )
        for idx, c, m in zip(frame_indices, clip_scores, mllm_scores)
    )
    ranked = sorted(candidates, key=lambda s: (-s.s_fused, s.frame_index))
    chosen = sorted(ranked[: min(k, len(ranked))], key=lambda s: s.frame_index)
    keyframe = min(chosen, key=lambda s: (-s.s_fused, s.frame_index))
    return FrameSelection(
        candidates=candidates,
        selected=tuple(s.frame_index for s in chosen),
        keyframe_index=keyframe.frame_index,
        round=round_number,
    )


def build_coarse_pool(
    clip: VideoClip,
    query: str,
    n: int,
    sim_backend: Backend,
    retry: RetryPolicy = DEFAULT_RETRY,
) -> CoarsePool:
    picks = coarse_select(clip, query, n, sim_backend, retry)
    indices = [i for i, _ in picks]
    raw = [s for _, s in picks]
    return CoarsePool(
        frame_indices=tuple(indices),
        raw_scores=tuple(raw),
        norm_scores=tuple(normalize_clip_scores(raw)),
        encoded_frames=tuple(encode_image(clip.frame(i)) for i in indices),
    )


def select_frames(
    clip: VideoClip,
    query: str,
    config: SelectionConfig,
    backends: Backend,
    feedback: str | None = None,
    round_number: int = 1,
    coarse_pool: CoarsePool | None = None,
    retry: RetryPolicy = DEFAULT_RETRY,
) -> tuple[FrameSelection, CoarsePool]:
    """Full coarse-to-fine pass; returns the selection and the reusable pool."""
    if coarse_pool is None:
        coarse_pool = build_coarse_pool(clip, query, config.n, backends, retry)
    mllm = fine_score(
        list(coarse_pool.encoded_frames),
        list(coarse_pool.frame_indices),
        query,
        backends,
        feedback=feedback,
        round_number=round_number,
        retry=retry,
    )
    selection = fuse_and_pick(
        list(coarse_pool.frame_indices),
        list(coarse_pool.norm_scores),
        mllm,
        k=config.k,
        alpha=config.alpha,
        beta=config.beta,
        round_number=round_number,
    )
    return selection, coarse_pool
