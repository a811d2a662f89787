"""Wire-protocol conformance checks shared by mock and real backends.

Every backend reachable through the protocol surface must pass these:
arity, determinism, shape contracts, and score ranges. Tests for the
scripted mock and for external adapter services run the same checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .client import Backend, RetryPolicy, chat, segment, similarity
from .wire import ChatRequest, SegmentRequest, SimilarityRequest, encode_image


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str = ""


def _probe_frames(t: int, h: int = 48, w: int = 64) -> list[str]:
    frames = []
    for i in range(t):
        frame = np.zeros((h, w, 3), dtype=np.uint8)
        frame[:, :, 0] = (37 * i) % 256
        frame[8 : h - 8, 8 : w - 8] = (0, 200, 0)
        frames.append(encode_image(frame))
    return frames


def run_conformance(
    backend: Backend,
    retry: RetryPolicy = RetryPolicy(attempts=3, backoff_base=0.0),
    chat_tags: tuple[str, ...] = ("frame_scores", "box", "expressions"),
    segment_lengths: tuple[int, ...] = (1, 8),
) -> list[CheckResult]:
    results: list[CheckResult] = []

    def check(name: str, fn) -> None:
        try:
            fn()
            results.append(CheckResult(name, True))
        except Exception as exc:  # noqa: BLE001 - reported, not swallowed
            results.append(CheckResult(name, False, f"{type(exc).__name__}: {exc}"))

    images = _probe_frames(3)

    def similarity_arity():
        scores = similarity(backend, SimilarityRequest("a green box", tuple(images)), retry)
        assert len(scores) == 3, f"expected 3 scores, got {len(scores)}"
        assert all(np.isfinite(s) for s in scores), "non-finite score"
        assert all(-1.0 <= s <= 1.0 for s in scores), f"score outside [-1,1]: {scores}"

    def similarity_determinism():
        req = SimilarityRequest("a green box", tuple(images))
        assert similarity(backend, req, retry) == similarity(backend, req, retry)

    check("similarity-arity-range", similarity_arity)
    check("similarity-determinism", similarity_determinism)

    if "frame_scores" in chat_tags:
        def chat_frame_scores():
            req = ChatRequest(
                system_prompt="You score frames.",
                user_text="Score each frame 0-100. Reply with a JSON array of numbers,"
                " one per frame.",
                images=tuple(images),
                response_schema_tag="frame_scores",
            )
            reply = chat(backend, req, retry)
            assert len(reply.value) == 3, f"expected 3 scores, got {reply.value}"

        check("chat-frame-scores", chat_frame_scores)

    if "box" in chat_tags:
        def chat_box():
            req = ChatRequest(
                system_prompt="You locate objects.",
                user_text="Locate 'the green box'. Reply with a JSON array"
                " [x1, y1, x2, y2] normalized to [0,1].",
                images=(images[0],),
                response_schema_tag="box",
            )
            reply = chat(backend, req, retry)
            assert len(reply.value) == 4

        check("chat-box", chat_box)

    if "expressions" in chat_tags:
        def chat_expressions():
            req = ChatRequest(
                system_prompt="You describe targets.",
                user_text="Name each referred target. Reply with a JSON array of strings.",
                images=(images[0],),
                response_schema_tag="expressions",
            )
            reply = chat(backend, req, retry)
            assert len(reply.value) >= 1
            assert all(isinstance(v, str) for v in reply.value)

        check("chat-expressions", chat_expressions)

    for t in segment_lengths:
        def segment_shape(t=t):
            frames = _probe_frames(t)
            req = SegmentRequest(
                frames=tuple(frames),
                prompt_frame_index=0,
                boxes=((0.1, 0.1, 0.9, 0.9),),
            )
            masklets = segment(backend, req, retry)
            assert len(masklets) == 1
            assert masklets[0].frame_count == t
            assert masklets[0].shape[1:] == (48, 64), f"dims {masklets[0].shape}"

        check(f"segment-shape-T{t}", segment_shape)

    def segment_order():
        frames = _probe_frames(2)
        req = SegmentRequest(
            frames=tuple(frames),
            prompt_frame_index=1,
            boxes=((0.1, 0.1, 0.5, 0.5), (0.5, 0.5, 0.9, 0.9)),
        )
        masklets = segment(backend, req, retry)
        assert len(masklets) == 2, "one masklet per box, in order"

    check("segment-box-order", segment_order)

    def segment_empty():
        frames = _probe_frames(1)
        before = len(backend.call_log)
        out = segment(
            backend,
            SegmentRequest(frames=tuple(frames), prompt_frame_index=0, boxes=()),
            retry,
        )
        assert out == []
        assert len(backend.call_log) == before, "zero boxes must not hit the service"

    check("segment-zero-boxes", segment_empty)
    return results


def assert_conformant(backend: Backend, **kwargs) -> None:
    results = run_conformance(backend, **kwargs)
    failed = [r for r in results if not r.ok]
    if failed:
        lines = "\n".join(f"  {r.name}: {r.detail}" for r in failed)
        raise AssertionError(f"conformance failures:\n{lines}")
