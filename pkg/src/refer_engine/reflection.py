"""Two-stage verification: existence reflection over the selected frames
and consistency reflection over the predicted targets.

Each stage runs a Questioner -> Responder chain on the same chat backend
under different system prompts, yields a pass/fail verdict, and on
failure emits natural-language feedback for the next reasoning round:
existence feedback steers frame re-scoring, consistency feedback steers
intent re-analysis.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass

import numpy as np

from .agents import GroundedTarget, TargetExpression
from .backend import ChatRequest, chat
from .backend.client import Backend, DEFAULT_RETRY, RetryPolicy
from .backend.wire import BackendParseError, SchemaViolation, encode_image, parse_reply
from .layout import FocusCanvas
from .prompts import render_prompt
from .selection import FrameSelection

logger = logging.getLogger(__name__)

REFLECTION_LOG_SCHEMA = "reflection-log/1"

EXISTENCE_KINDS = ("visibility", "completeness", "optimality")
QA_KINDS = EXISTENCE_KINDS + ("attribute_high", "attribute_low")

DEFAULT_FAIL_THRESHOLD = 0.30


@dataclass(frozen=True)
class ReflectionQA:
    question: str
    kind: str
    answer: str
    explanation: str
    choices: tuple[str, ...] | None = None
    correct: bool | None = None
    target_id: int | None = None
    attribute: str | None = None

    def __post_init__(self):
        if self.kind not in QA_KINDS:
            raise ValueError(f"unknown QA kind {self.kind!r}")
        if self.choices is not None:
            if len(self.choices) < 2:
                raise ValueError("multi-choice entries need at least 2 choices")
            if self.answer not in self.choices:
                raise ValueError(f"answer {self.answer!r} not among choices")


@dataclass(frozen=True)
class ReflectionChain:
    stage: str  # existence | consistency
    round: int
    entries: tuple[ReflectionQA, ...]
    verdict: str  # pass | fail
    feedback: str = ""

    def __post_init__(self):
        if self.stage not in ("existence", "consistency"):
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.verdict not in ("pass", "fail"):
            raise ValueError(f"unknown verdict {self.verdict!r}")
        if (self.verdict == "fail") != bool(self.feedback):
            raise ValueError("feedback must be nonempty iff the verdict is fail")

    def to_dict(self) -> dict:
        return {
            "schema": REFLECTION_LOG_SCHEMA,
            "stage": self.stage,
            "round": self.round,
            "verdict": self.verdict,
            "feedback": self.feedback,
            "entries": [
                {
                    "question": e.question,
                    "kind": e.kind,
                    "answer": e.answer,
                    "explanation": e.explanation,
                    "choices": list(e.choices) if e.choices else None,
                    "correct": e.correct,
                    "target_id": e.target_id,
                    "attribute": e.attribute,
                }
                for e in self.entries
            ],
        }


# ---------------------------------------------------------------------------
# Existence reflection


def _check_existence_questions(items: list[dict]) -> list[str]:
    """Return the aspects missing from a generated question list."""
    kinds = {item.get("kind") for item in items if item.get("question")}
    return sorted(set(EXISTENCE_KINDS) - kinds)


def _affirmative(answer: str) -> bool:
    return answer.strip().lower().startswith("yes")


def _aspect_passes(kind: str, answer: str) -> bool:
    # visibility/completeness pass on "yes"; optimality asks whether a
    # better context frame exists, so it passes on "no".
    if kind == "optimality":
        return not _affirmative(answer)
    return _affirmative(answer)


_FRAME_RE = re.compile(r"frame\s+#?(\d+)", re.IGNORECASE)


def _better_frame(entry_answer: dict) -> int | None:
    value = entry_answer.get("better_frame")
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return int(value)
    m = _FRAME_RE.search(str(entry_answer.get("explanation", "")))
    return int(m.group(1)) if m else None


def existence_reflect(
    selection: FrameSelection,
    canvas: FocusCanvas,
    query: str,
    expressions: list[TargetExpression],
    chat_backend: Backend,
    round_number: int = 1,
    retry: RetryPolicy = DEFAULT_RETRY,
) -> ReflectionChain:
    """Audit the frame choice on visibility, completeness, and optimality.

    Passes only when every aspect affirms the keyframe; on failure the
    feedback concatenates the failing explanations and, when a better
    context frame is named, a directive to promote it.
    """
    expr_list = json.dumps([e.expression for e in expressions])
    context_frames = ", ".join(
        str(s.frame_index) for s in canvas.context_slots
    ) or "none"
    q_req = ChatRequest(
        system_prompt=render_prompt("system_questioner"),
        user_text=render_prompt(
            "existence_questioner",
            query=query,
            expressions=expr_list,
            keyframe_index=selection.keyframe_index,
            context_frames=context_frames,
        ),
        response_schema_tag="questions",
        role="existence_questioner",
        round=round_number,
    )
    # A question list missing one of the three aspects is regenerated
    # exactly once; a second miss is a hard error.
    questions = chat(chat_backend, q_req, retry).value
    missing = _check_existence_questions(questions)
    if missing:
        logger.warning("existence questions missing %s; regenerating once", missing)
        retry_reply = chat(chat_backend, q_req, retry)
        questions = retry_reply.value
        missing = _check_existence_questions(questions)
        if missing:
            raise BackendParseError(
                f"existence questions still missing aspects {missing}",
                raw_text=retry_reply.raw_text,
            )
    questions = [q for q in questions if q.get("question")]

    def parse_answers(text: str) -> list[dict]:
        items = parse_reply("qa_answers", text)
        if len(items) != len(questions):
            raise SchemaViolation(
                f"{len(items)} answers for {len(questions)} questions", raw_text=text
            )
        return items

    r_req = ChatRequest(
        system_prompt=render_prompt("system_responder"),
        user_text=render_prompt(
            "existence_responder",
            query=query,
            expressions=expr_list,
            keyframe_index=selection.keyframe_index,
            context_frames=context_frames,
            questions_json=json.dumps(questions),
        ),
        images=(encode_image(canvas.image),),
        response_schema_tag="qa_answers",
        role="existence_responder",
        round=round_number,
    )
    answers = chat(chat_backend, r_req, retry, parser=parse_answers).value

    entries = []
    failures = []
    for question, answer in zip(questions, answers):
        kind = question["kind"]
        text = str(answer.get("answer", ""))
        explanation = str(answer.get("explanation", ""))
        entries.append(
            ReflectionQA(
                question=question["question"],
                kind=kind,
                answer=text,
                explanation=explanation,
            )
        )
        if not _aspect_passes(kind, text):
            failures.append((kind, explanation, _better_frame(answer)))

    feedback = ""
    if failures:
        parts = [explanation for _, explanation, _ in failures if explanation]
        for kind, _, better in failures:
            if kind == "optimality" and better is not None:
                parts.append(f"Prefer context frame {better} as the keyframe.")
        feedback = " ".join(parts) or "Frame choice rejected; select differently."
    return ReflectionChain(
        stage="existence",
        round=round_number,
        entries=tuple(entries),
        verdict="fail" if failures else "pass",
        feedback=feedback,
    )


# ---------------------------------------------------------------------------
# Consistency reflection


def decompose_attributes(
    query: str,
    chat_backend: Backend,
    round_number: int = 1,
    retry: RetryPolicy = DEFAULT_RETRY,
) -> list[dict]:
    """Split the query into tagged attributes; falls back to the query itself."""
    req = ChatRequest(
        system_prompt=render_prompt("system_questioner"),
        user_text=render_prompt("attribute_decomposition", query=query),
        response_schema_tag="questions",
        role="attribute_decomposition",
        round=round_number,
    )
    items = chat(chat_backend, req, retry).value
    attributes = []
    for item in items:
        name = str(item.get("attribute", "")).strip()
        if not name:
            continue
        level = item.get("level")
        if level not in ("high", "low"):
            level = "high"
        attributes.append({"attribute": name, "level": level})
    if not attributes:
        logger.warning("empty attribute decomposition; falling back to raw query")
        attributes = [{"attribute": query, "level": "high"}]
    return attributes


def consistency_verdict(
    target_count: int, inconsistent_count: int, fail_threshold: float = DEFAULT_FAIL_THRESHOLD
) -> str:
    """Strict thresholding: fail when the inconsistent fraction exceeds
    the threshold; a lone target must itself be consistent."""
    if target_count < 1:
        raise ValueError("need at least one target")
    if target_count == 1:
        return "fail" if inconsistent_count else "pass"
    return "fail" if inconsistent_count / target_count > fail_threshold else "pass"


def _parse_consistency_questions(targets: list[GroundedTarget]):
    ids = {t.target_id for t in targets}

    def parse(text: str) -> list[dict]:
        items = parse_reply("questions", text)
        if not items:
            raise SchemaViolation("no consistency questions generated", raw_text=text)
        for item in items:
            if item.get("target_id") not in ids:
                raise SchemaViolation(
                    f"question references unknown target {item.get('target_id')!r}",
                    raw_text=text,
                )
            choices = item.get("choices")
            if not isinstance(choices, list) or len(choices) < 2:
                raise SchemaViolation("each question needs >= 2 choices", raw_text=text)
            if item.get("gold") not in choices:
                raise SchemaViolation("gold choice missing from choices", raw_text=text)
        return items

    return parse


def consistency_reflect(
    keyframe_with_boxes: np.ndarray,
    query: str,
    targets: list[GroundedTarget],
    chat_backend: Backend,
    fail_threshold: float = DEFAULT_FAIL_THRESHOLD,
    round_number: int = 1,
    retry: RetryPolicy = DEFAULT_RETRY,
) -> ReflectionChain:
    """Check each predicted target against the query's attributes.

    One multi-choice question per (target, attribute); a target is
    inconsistent when any of its answers misses the gold choice.
    """
    if not targets:
        raise ValueError("consistency reflection needs at least one target")
    attributes = decompose_attributes(query, chat_backend, round_number, retry)
    targets_json = json.dumps(
        [{"target_id": t.target_id, "expression": t.expression.expression} for t in targets]
    )
    q_req = ChatRequest(
        system_prompt=render_prompt("system_questioner"),
        user_text=render_prompt(
            "consistency_questioner",
            query=query,
            attributes_json=json.dumps(attributes),
            targets_json=targets_json,
        ),
        response_schema_tag="questions",
        role="consistency_questioner",
        round=round_number,
    )
    questions = chat(
        chat_backend, q_req, retry, parser=_parse_consistency_questions(targets)
    ).value

    def parse_answers(text: str) -> list[dict]:
        items = parse_reply("qa_answers", text)
        if len(items) != len(questions):
            raise SchemaViolation(
                f"{len(items)} answers for {len(questions)} questions", raw_text=text
            )
        for item, question in zip(items, questions):
            if item.get("choice") not in question["choices"]:
                raise SchemaViolation(
                    f"choice {item.get('choice')!r} not among {question['choices']}",
                    raw_text=text,
                )
        return items

    r_req = ChatRequest(
        system_prompt=render_prompt("system_responder"),
        user_text=render_prompt(
            "consistency_responder", questions_json=json.dumps(questions)
        ),
        images=(encode_image(keyframe_with_boxes),),
        response_schema_tag="qa_answers",
        role="consistency_responder",
        round=round_number,
    )
    answers = chat(chat_backend, r_req, retry, parser=parse_answers).value

    level_by_attr = {a["attribute"]: a["level"] for a in attributes}
    entries = []
    wrong: dict[int, list[str]] = {}
    for question, answer in zip(questions, answers):
        tid = int(question["target_id"])
        attribute = str(question.get("attribute", ""))
        choice = str(answer["choice"])
        correct = choice == question["gold"]
        kind = "attribute_high" if level_by_attr.get(attribute) == "high" else "attribute_low"
        entries.append(
            ReflectionQA(
                question=question["question"],
                kind=kind,
                answer=choice,
                explanation=str(answer.get("explanation", "")),
                choices=tuple(str(c) for c in question["choices"]),
                correct=correct,
                target_id=tid,
                attribute=attribute,
            )
        )
        if not correct:
            wrong.setdefault(tid, []).append(
                f"attribute {attribute!r} expected {question['gold']!r}, observed {choice!r}"
            )

    verdict = consistency_verdict(len(targets), len(wrong), fail_threshold)
    feedback = ""
    if verdict == "fail":
        expr_by_id = {t.target_id: t.expression.expression for t in targets}
        lines = [
            f"Target {tid} ({expr_by_id.get(tid, '?')!r}) is inconsistent: "
            + "; ".join(problems)
            for tid, problems in sorted(wrong.items())
        ]
        feedback = " ".join(lines)
    return ReflectionChain(
        stage="consistency",
        round=round_number,
        entries=tuple(entries),
        verdict=verdict,
        feedback=feedback,
    )
