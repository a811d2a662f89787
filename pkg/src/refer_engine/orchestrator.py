"""The alternating reasoning-reflection session loop and batch harness.

Each round runs: frame selection -> canvas composition -> intent
analysis -> existence reflection -> grounding -> consistency reflection.
A failed verification stores stage-specific feedback and re-enters the
loop (existence feedback steers frame re-scoring, consistency feedback
steers intent re-analysis) while the round count is below ``max_turn``.
``max_turn=0`` disables reflection entirely: one unverified pass. On
budget exhaustion the final round's best-effort segmentation is still
emitted. Exactly one segmentation call happens per session.

A failed existence check skips grounding and consistency for that round
when another round is available; at exhaustion grounding proceeds so the
session can still produce output.
"""

from __future__ import annotations

import json
import logging
import threading
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agents import (
    GroundedTarget,
    IntentFailure,
    TargetExpression,
    analyze_intent,
    build_expressions,
    ground_all,
    normalize_box,
)
from .backend import ChatRequest, HttpBackend, SegmentRequest, chat, segment
from .backend.client import Backend, RetryPolicy
from .backend.mock import load_mock_scenario
from .backend.wire import SchemaViolation, encode_image, extract_first_json
from .clips import Masklet, VideoClip, draw_boxes, load_clip
from .config import EngineConfig
from .layout import FocusCanvas, build_canvas
from .metrics import SampleReport, evaluate, load_gt_masklets, write_reports
from .prompts import render_prompt, set_prompts_dir
from .reflection import ReflectionChain, consistency_reflect, existence_reflect
from .selection import CoarsePool, FrameSelection, fuse_and_pick, select_frames

logger = logging.getLogger(__name__)

SESSION_LOG_SCHEMA = "session-log/1"


class SessionAbort(RuntimeError):
    """Unrecoverable backend failure; partial transcript was preserved."""


@dataclass
class RoundRecord:
    round: int
    existence_feedback_in: str | None = None
    consistency_feedback_in: str | None = None
    selection: FrameSelection | None = None
    canvas_slots: list[dict] = field(default_factory=list)
    expressions: list[TargetExpression] = field(default_factory=list)
    targets: list[GroundedTarget] = field(default_factory=list)
    dropped_targets: list[int] = field(default_factory=list)
    existence: ReflectionChain | None = None
    consistency: ReflectionChain | None = None
    intent_error: str | None = None

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "existence_feedback_in": self.existence_feedback_in,
            "consistency_feedback_in": self.consistency_feedback_in,
            "selection": None
            if self.selection is None
            else {
                "candidates": [
                    {
                        "frame_index": c.frame_index,
                        "s_clip": c.s_clip,
                        "s_mllm": c.s_mllm,
                        "s_fused": c.s_fused,
                    }
                    for c in self.selection.candidates
                ],
                "selected": list(self.selection.selected),
                "keyframe_index": self.selection.keyframe_index,
            },
            "canvas_slots": self.canvas_slots,
            "expressions": [
                {"target_id": e.target_id, "expression": e.expression, "revision": e.revision}
                for e in self.expressions
            ],
            "targets": [
                {"target_id": t.target_id, "box": list(t.box), "expression": t.expression.expression}
                for t in self.targets
            ],
            "dropped_targets": self.dropped_targets,
            "existence": None if self.existence is None else self.existence.to_dict(),
            "consistency": None if self.consistency is None else self.consistency.to_dict(),
            "intent_error": self.intent_error,
        }


@dataclass
class SessionState:
    round: int = 1
    max_turn: int = 4
    existence_feedback: str | None = None
    consistency_feedback: str | None = None
    history: list[RoundRecord] = field(default_factory=list)
    status: str = "running"  # running | accepted | exhausted


@dataclass
class SessionResult:
    masklets: list[Masklet]
    accepted: bool
    rounds_used: int
    status: str
    final_round_record: RoundRecord
    history: list[RoundRecord]
    transcript_path: Path | None = None


def _merged_parser(required: dict):
    """Parser for merged-agent replies: a JSON object holding several
    pipeline outputs at once. ``required`` maps key -> arity (None = any)."""

    def parse(text: str) -> dict:
        value = extract_first_json(text)
        if not isinstance(value, dict):
            raise SchemaViolation(f"expected a JSON object, got {value!r}", raw_text=text)
        for key, arity in required.items():
            if key not in value or not isinstance(value[key], list):
                raise SchemaViolation(f"merged reply missing list {key!r}", raw_text=text)
            if arity is not None and len(value[key]) != arity:
                raise SchemaViolation(
                    f"merged reply {key!r} has {len(value[key])} entries, expected {arity}",
                    raw_text=text,
                )
        return value

    return parse


class Session:
    """One video + query driven through the reasoning-reflection loop."""

    def __init__(
        self,
        clip: VideoClip,
        query: str,
        config: EngineConfig,
        backend: Backend,
        out_dir: str | Path | None = None,
        dump_reflection: bool = False,
    ):
        self.clip = clip
        self.query = query
        self.config = config
        self.backend = backend
        self.out_dir = Path(out_dir) if out_dir else None
        self.dump_reflection = dump_reflection
        self.retry = RetryPolicy(
            attempts=config.backends.retry_attempts,
            backoff_base=config.backends.backoff_base,
        )
        self.state = SessionState(max_turn=config.pipeline.max_turn)
        self._coarse_pool: CoarsePool | None = None
        self._prev: tuple[FrameSelection, FocusCanvas] | None = None
        if config.pipeline.prompts_dir:
            set_prompts_dir(config.pipeline.prompts_dir)

    # -- reasoning steps ---------------------------------------------------

    def _reflection_on(self) -> bool:
        return self.state.max_turn >= 1

    def _can_reenter(self) -> bool:
        return self.state.round < self.state.max_turn

    def _select(self, record: RoundRecord) -> tuple[FrameSelection, FocusCanvas]:
        merge = self.config.pipeline.merge
        feedback = record.existence_feedback_in
        if merge in ("select+intent", "all"):
            return self._merged_select(record)
        if feedback is None and self._prev is not None:
            # Only consistency failed: keep the keyframe, re-reason.
            return self._prev
        selection, self._coarse_pool = select_frames(
            self.clip,
            self.query,
            self.config.selection,
            self.backend,
            feedback=feedback,
            round_number=self.state.round,
            coarse_pool=self._coarse_pool,
            retry=self.retry,
        )
        record.selection = selection
        canvas = self._compose(selection)
        return selection, canvas

    def _compose(self, selection: FrameSelection) -> FocusCanvas:
        dump = None
        if self.out_dir is not None and self.config.layout.dump_canvas:
            dump = self.out_dir / f"canvas_round{self.state.round}.png"
        return build_canvas(
            self.clip,
            list(selection.selected),
            selection.keyframe_index,
            self.config.layout,
            dump_path=dump,
        )

    def _merged_select(self, record: RoundRecord) -> tuple[FrameSelection, FocusCanvas]:
        """select+intent / all: one call scores frames and names targets."""
        from .selection import build_coarse_pool

        if self._coarse_pool is None:
            self._coarse_pool = build_coarse_pool(
                self.clip, self.query, self.config.selection.n, self.backend, self.retry
            )
        pool = self._coarse_pool
        merge = self.config.pipeline.merge
        template = "merged_select_intent" if merge == "select+intent" else "merged_all"
        required = {"frame_scores": len(pool.frame_indices), "expressions": None}
        if merge == "all":
            required["boxes"] = None
        prompt = render_prompt(
            template,
            query=self.query,
            frame_list=", ".join(str(i) for i in pool.frame_indices),
            count=len(pool.frame_indices),
            max_targets=self.config.agents.max_targets,
            feedback_block_scores=_block(
                record.existence_feedback_in, "Frame-choice feedback to honor"
            ),
            feedback_block_intent=_block(
                record.consistency_feedback_in, "Target-consistency feedback to honor"
            ),
        )
        req = ChatRequest(
            system_prompt=render_prompt("system_reasoner"),
            user_text=prompt,
            images=pool.encoded_frames,
            response_schema_tag="free_text",
            role="merged_select_intent" if merge == "select+intent" else "merged_all",
            round=self.state.round,
        )
        reply = chat(self.backend, req, self.retry, parser=_merged_parser(required))
        merged = reply.value
        mllm = [min(1.0, max(0.0, s / 100.0)) for s in merged["frame_scores"]]
        selection = fuse_and_pick(
            list(pool.frame_indices),
            list(pool.norm_scores),
            mllm,
            k=self.config.selection.k,
            alpha=self.config.selection.alpha,
            beta=self.config.selection.beta,
            round_number=self.state.round,
        )
        record.selection = selection
        canvas = self._compose(selection)
        self._merged_reply = merged
        return selection, canvas

    def _intent(
        self, canvas: FocusCanvas, record: RoundRecord, previous: list[TargetExpression] | None
    ) -> list[TargetExpression]:
        merge = self.config.pipeline.merge
        if merge in ("select+intent", "all"):
            texts = [str(t) for t in self._merged_reply["expressions"]]
            return build_expressions(texts, self.config.agents.max_targets, previous=previous)
        if merge == "intent+ground":
            return self._merged_intent_ground(canvas, record, previous)
        return analyze_intent(
            canvas,
            self.query,
            self.backend,
            max_targets=self.config.agents.max_targets,
            feedback=record.consistency_feedback_in,
            previous=previous,
            round_number=self.state.round,
            retry=self.retry,
        )

    def _merged_intent_ground(
        self, canvas: FocusCanvas, record: RoundRecord, previous
    ) -> list[TargetExpression]:
        prompt = render_prompt(
            "merged_intent_ground",
            query=self.query,
            slot_legend=canvas.legend(),
            max_targets=self.config.agents.max_targets,
            feedback_block=_block(
                record.consistency_feedback_in, "Target-consistency feedback to honor"
            ),
        )
        req = ChatRequest(
            system_prompt=render_prompt("system_reasoner"),
            user_text=prompt,
            images=(encode_image(canvas.image),),
            response_schema_tag="free_text",
            role="merged_intent_ground",
            round=self.state.round,
        )
        reply = chat(
            self.backend,
            req,
            self.retry,
            parser=_merged_parser({"expressions": None, "boxes": None}),
        )
        merged = reply.value
        if len(merged["boxes"]) != len(merged["expressions"]):
            raise IntentFailure("merged reply box/expression arity mismatch")
        self._merged_reply = merged
        return build_expressions(
            [str(t) for t in merged["expressions"]],
            self.config.agents.max_targets,
            previous=previous,
        )

    def _ground(
        self, keyframe: np.ndarray, expressions: list[TargetExpression], record: RoundRecord
    ) -> list[GroundedTarget]:
        merge = self.config.pipeline.merge
        if merge in ("intent+ground", "all"):
            height, width = keyframe.shape[:2]
            grounded = []
            boxes = self._merged_reply.get("boxes", [])
            for expr, raw in zip(expressions, boxes):
                box = normalize_box([float(v) for v in raw], width, height)
                x1, y1, x2, y2 = box
                if x2 <= x1 or y2 <= y1 or (x2 - x1) * (y2 - y1) < 1e-4:
                    record.dropped_targets.append(expr.target_id)
                    continue
                grounded.append(GroundedTarget(target_id=expr.target_id, box=box, expression=expr))
            return grounded
        grounded, dropped = ground_all(
            keyframe, expressions, self.backend, self.state.round, self.retry
        )
        record.dropped_targets.extend(e.target_id for e in dropped)
        return grounded

    # -- the loop ----------------------------------------------------------

    def run(self) -> SessionResult:
        try:
            return self._run()
        except Exception as exc:
            self._write_transcript(error=f"{type(exc).__name__}: {exc}")
            if isinstance(exc, (SessionAbort, IntentFailure)):
                raise
            raise SessionAbort(f"session aborted: {exc}") from exc

    def _run(self) -> SessionResult:
        cfg = self.config
        state = self.state
        prev_expressions: list[TargetExpression] | None = None
        final: RoundRecord | None = None
        final_targets: list[GroundedTarget] = []
        final_keyframe: int = 0

        while True:
            record = RoundRecord(
                round=state.round,
                existence_feedback_in=state.existence_feedback,
                consistency_feedback_in=state.consistency_feedback,
            )
            state.history.append(record)
            state.existence_feedback = None
            state.consistency_feedback = None

            selection, canvas = self._select(record)
            record.selection = selection
            record.canvas_slots = [
                {
                    "rect": list(s.rect),
                    "frame_index": s.frame_index,
                    "is_keyframe": s.is_keyframe,
                }
                for s in canvas.slots
            ]
            self._prev = (selection, canvas)
            keyframe = self.clip.frame(selection.keyframe_index)

            # Intent analysis; an empty target list is a round failure.
            try:
                expressions = self._intent(canvas, record, prev_expressions)
            except IntentFailure as exc:
                record.intent_error = str(exc)
                if self._reflection_on() and self._can_reenter():
                    state.consistency_feedback = (
                        "No usable targets were identified last round; re-read the "
                        "query and name at least one visible target."
                    )
                    state.round += 1
                    continue
                state.status = "exhausted"
                final, final_targets, final_keyframe = record, [], selection.keyframe_index
                break
            record.expressions = expressions
            prev_expressions = expressions

            # Existence reflection gates grounding while rounds remain.
            existence_failed = False
            if self._reflection_on() and cfg.reflection.existence_enabled:
                chain = existence_reflect(
                    selection,
                    canvas,
                    self.query,
                    expressions,
                    self.backend,
                    round_number=state.round,
                    retry=self.retry,
                )
                record.existence = chain
                existence_failed = chain.verdict == "fail"
                if existence_failed and self._can_reenter():
                    state.existence_feedback = chain.feedback
                    state.round += 1
                    continue

            targets = self._ground(keyframe, expressions, record)
            record.targets = targets
            if not targets and self._reflection_on() and self._can_reenter():
                state.consistency_feedback = (
                    "Every target failed grounding last round; produce expressions "
                    "that can be localized with a visible bounding box."
                )
                state.round += 1
                continue

            consistency_failed = False
            if (
                self._reflection_on()
                and cfg.reflection.consistency_enabled
                and targets
                and not existence_failed
            ):
                boxed = draw_boxes(
                    keyframe,
                    [t.box for t in targets],
                    labels=[str(t.target_id) for t in targets],
                )
                chain = consistency_reflect(
                    boxed,
                    self.query,
                    targets,
                    self.backend,
                    fail_threshold=cfg.reflection.fail_threshold,
                    round_number=state.round,
                    retry=self.retry,
                )
                record.consistency = chain
                consistency_failed = chain.verdict == "fail"
                if consistency_failed and self._can_reenter():
                    state.consistency_feedback = chain.feedback
                    state.round += 1
                    continue

            failed = existence_failed or consistency_failed or not targets
            state.status = "exhausted" if failed else "accepted"
            final, final_targets, final_keyframe = record, targets, selection.keyframe_index
            break

        masklets = self._segment(final_targets, final_keyframe)
        accepted = state.status == "accepted" and bool(final_targets)
        result = SessionResult(
            masklets=masklets,
            accepted=accepted,
            rounds_used=state.round,
            status=state.status,
            final_round_record=final,
            history=state.history,
        )
        result.transcript_path = self._write_transcript(result=result)
        return result

    def _segment(self, targets: list[GroundedTarget], keyframe_index: int) -> list[Masklet]:
        if not targets:
            return []
        frames = tuple(encode_image(self.clip.frame(i)) for i in range(self.clip.frame_count))
        req = SegmentRequest(
            frames=frames,
            prompt_frame_index=keyframe_index,
            boxes=tuple(t.box for t in targets),
        )
        raw = segment(self.backend, req, self.retry)
        return [
            Masklet(target_id=t.target_id, masks=m.masks) for t, m in zip(targets, raw)
        ]

    def _write_transcript(
        self, result: SessionResult | None = None, error: str | None = None
    ) -> Path | None:
        if self.out_dir is None:
            return None
        self.out_dir.mkdir(parents=True, exist_ok=True)
        doc = {
            "schema": SESSION_LOG_SCHEMA,
            "query": self.query,
            "source_id": self.clip.source_id,
            "config": self.config.to_dict(),
            "status": self.state.status,
            "rounds_used": self.state.round,
            "accepted": result.accepted if result else False,
            "error": error,
            "rounds": [r.to_dict() for r in self.state.history],
        }
        path = self.out_dir / "session.json"
        path.write_text(json.dumps(doc, indent=2))
        if self.dump_reflection:
            for record in self.state.history:
                chains = [
                    c.to_dict() for c in (record.existence, record.consistency) if c is not None
                ]
                if chains:
                    (self.out_dir / f"reflection_round{record.round}.json").write_text(
                        json.dumps(chains, indent=2)
                    )
        return path


def _block(feedback: str | None, heading: str) -> str:
    if not feedback:
        return ""
    return f"{heading}:\n{feedback}\n"


def run_session(
    clip: VideoClip,
    query: str,
    config: EngineConfig,
    backend: Backend,
    out_dir: str | Path | None = None,
    dump_reflection: bool = False,
) -> SessionResult:
    return Session(clip, query, config, backend, out_dir, dump_reflection).run()


# ---------------------------------------------------------------------------
# Batch evaluation


def load_manifest(path: str | Path) -> list[dict]:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".jsonl":
        entries = [json.loads(line) for line in text.splitlines() if line.strip()]
    else:
        entries = json.loads(text)
        if not isinstance(entries, list):
            raise ValueError("manifest must be a JSON list or JSONL file")
    base = path.parent
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or "frames" not in entry or "query" not in entry:
            raise ValueError(f"manifest entry {i} needs 'frames' and 'query'")
        entry.setdefault("id", f"sample_{i:04d}")
        for key in ("frames", "gt", "scenario"):
            if entry.get(key):
                entry[key] = str((base / entry[key]).resolve())
    return entries


def _build_backend(config: EngineConfig) -> Backend:
    b = config.backends
    if b.mock_scenario:
        return load_mock_scenario(b.mock_scenario)
    if not (b.chat_url and b.similarity_url and b.segment_url):
        raise ValueError("backends config needs URLs or a mock_scenario path")
    return HttpBackend(
        chat_url=b.chat_url,
        similarity_url=b.similarity_url,
        segment_url=b.segment_url,
        bearer_token=b.bearer_token,
    )


def run_batch(
    manifest_path: str | Path,
    config: EngineConfig,
    out_dir: str | Path,
    parallelism: int = 1,
    write_masks: bool = False,
) -> list[SampleReport]:
    """Run sessions over a manifest with bounded concurrency.

    Per-sample failures are recorded, not fatal; completed sample ids
    land in a ledger so an interrupted batch resumes where it stopped.
    """
    entries = load_manifest(manifest_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ledger_path = out_dir / "completed.jsonl"
    done: set[str] = set()
    if ledger_path.exists():
        for line in ledger_path.read_text().splitlines():
            if line.strip():
                done.add(json.loads(line)["id"])
    ledger_lock = threading.Lock()
    reports: dict[str, SampleReport] = {}

    def record_done(sample_id: str) -> None:
        with ledger_lock:
            with ledger_path.open("a") as fh:
                fh.write(json.dumps({"id": sample_id}) + "\n")

    def run_one(entry: dict) -> SampleReport:
        sample_id = entry["id"]
        report = SampleReport(sample_id=sample_id)
        try:
            clip = load_clip(entry["frames"], max_frames=entry.get("max_frames"))
            if entry.get("scenario"):
                backend = load_mock_scenario(entry["scenario"])
            else:
                backend = _build_backend(config)
            sample_dir = out_dir / sample_id
            result = run_session(clip, entry["query"], config, backend, out_dir=sample_dir)
            report.accepted = result.accepted
            report.rounds_used = result.rounds_used
            if write_masks and result.masklets:
                from .clips import write_masklets

                write_masklets(clip, result.masklets, sample_dir / "masks", "png-per-frame")
            if entry.get("gt"):
                gts = load_gt_masklets(entry["gt"])
                scores = evaluate(
                    result.masklets, gts, tolerance_px=config.metrics.boundary_tolerance
                )
                report.j, report.f, report.jf = scores.j, scores.f, scores.jf
            record_done(sample_id)
        except Exception as exc:  # noqa: BLE001 - isolation per sample
            logger.error("sample %s failed: %s", sample_id, traceback.format_exc())
            report.error = f"{type(exc).__name__}: {exc}"
        return report

    pending = [e for e in entries if e["id"] not in done]
    for entry in entries:
        if entry["id"] in done:
            reports[entry["id"]] = SampleReport(
                sample_id=entry["id"], extra={"skipped": "already completed"}
            )
    if parallelism <= 1:
        for entry in pending:
            reports[entry["id"]] = run_one(entry)
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            for report in pool.map(run_one, pending):
                reports[report.sample_id] = report

    ordered = [reports[e["id"]] for e in entries]
    write_reports(ordered, out_dir)
    return ordered
