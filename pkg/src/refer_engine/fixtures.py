"""Desk-scale synthetic scenarios: procedurally rendered clips of moving
shapes, exact ground-truth masklets, and generated mock-backend scripts.

Scripts are generated from the scenario's own ground truth and key on
response_schema_tag (plus round/role where the template needs it), never
on prompt text, so they stay valid as prompt wording evolves. Four
templates cover the interesting loop behaviors:

- single_target / multi_target: cooperative scripts, one clean round.
- keyframe_correction: the existence check fails in round 1 naming a
  better context frame; round 2 promotes it.
- consistency_correction: one attribute is answered wrong in round 1;
  the corrected expression passes in round 2.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backend.mock import MOCK_SCENARIO_SCHEMA, MockBackend
from .backend.wire import masklet_to_wire
from .clips import Masklet, VideoClip, png_bytes

TEMPLATES = (
    "single_target",
    "multi_target",
    "keyframe_correction",
    "consistency_correction",
)

# Static fine-score tables: with constant similarity scores the fused
# ranking follows these alone. Top-5 of ROUND1 is {0, 2, 4, 5, 6} with
# keyframe 4 (position 3 of 5: no parity resampling); ROUND2 swaps the
# peak to frame 6.
ROUND1_SCORES = [50, 40, 70, 30, 95, 60, 90, 20, 10, 5]
ROUND2_SCORES = [50, 40, 70, 30, 90, 60, 95, 20, 10, 5]
KEYFRAME_R1 = 4
KEYFRAME_R2 = 6


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ShapeSpec:
    kind: str  # rect | circle
    color: tuple[int, int, int]
    start: tuple[int, int]  # rect: top-left; circle: center
    velocity: tuple[int, int]
    size: tuple[int, int]  # rect: (w, h); circle: (radius, radius)

    def at(self, t: int) -> tuple[int, int]:
        return (self.start[0] + self.velocity[0] * t, self.start[1] + self.velocity[1] * t)


@dataclass(frozen=True)
class ClipSpec:
    t: int
    height: int
    width: int
    shapes: tuple[ShapeSpec, ...]
    background: tuple[int, int, int] = (16, 16, 16)


@dataclass
class Scenario:
    clip_spec: ClipSpec
    query: str
    clip: VideoClip
    gt_masklets: list[Masklet]
    document: dict
    template: str
    seed: int

    def backend(self) -> MockBackend:
        """Fresh scripted backend (per-entry reply sequences start over)."""
        return MockBackend(json.loads(json.dumps(self.document)))


def _rasterize(shape: ShapeSpec, t: int, height: int, width: int) -> np.ndarray:
    mask = np.zeros((height, width), dtype=bool)
    x, y = shape.at(t)
    if shape.kind == "rect":
        w, h = shape.size
        if x < 0 or y < 0 or x + w > width or y + h > height:
            raise ScenarioError(f"rect out of bounds at t={t}: {(x, y, w, h)}")
        mask[y : y + h, x : x + w] = True
    elif shape.kind == "circle":
        r = shape.size[0]
        if x - r < 0 or y - r < 0 or x + r >= width or y + r >= height:
            raise ScenarioError(f"circle out of bounds at t={t}: {(x, y, r)}")
        yy, xx = np.ogrid[:height, :width]
        mask[(yy - y) ** 2 + (xx - x) ** 2 <= r * r] = True
    else:
        raise ScenarioError(f"unknown shape kind {shape.kind!r}")
    return mask


def render_shapes(spec: ClipSpec) -> tuple[VideoClip, list[Masklet]]:
    """Rasterize shapes exactly (no anti-aliasing); later shapes win RGB
    pixel ownership, masks stay per-shape."""
    frames = np.empty((spec.t, spec.height, spec.width, 3), dtype=np.uint8)
    frames[:] = np.asarray(spec.background, dtype=np.uint8)
    per_shape = [
        np.zeros((spec.t, spec.height, spec.width), dtype=bool) for _ in spec.shapes
    ]
    for t in range(spec.t):
        for si, shape in enumerate(spec.shapes):
            mask = _rasterize(shape, t, spec.height, spec.width)
            per_shape[si][t] = mask
            frames[t][mask] = np.asarray(shape.color, dtype=np.uint8)
    clip = VideoClip(frames=frames, source_id=f"synthetic/{len(spec.shapes)}shapes")
    masklets = [Masklet(target_id=i, masks=m) for i, m in enumerate(per_shape)]
    return clip, masklets


def mask_bbox_normalized(mask: np.ndarray) -> tuple[float, float, float, float]:
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        raise ScenarioError("empty mask has no bounding box")
    h, w = mask.shape
    return (xs.min() / w, ys.min() / h, (xs.max() + 1) / w, (ys.max() + 1) / h)


# ---------------------------------------------------------------------------
# Script assembly


def _entry(match: dict, reply=None, replies=None) -> dict:
    out = {"match": match}
    if replies is not None:
        out["replies"] = replies
    else:
        out["reply"] = reply
    return out


def _existence_questions() -> str:
    return json.dumps(
        [
            {"kind": "visibility", "question": "Are the targets clearly visible in the keyframe?"},
            {"kind": "completeness", "question": "Does the keyframe cover all the referred targets?"},
            {
                "kind": "optimality",
                "question": "Is there a better choice among the context frames than the current keyframe?",
            },
        ]
    )


def _existence_pass() -> str:
    return json.dumps(
        [
            {"answer": "yes", "explanation": "every target is sharp and unoccluded", "better_frame": None},
            {"answer": "yes", "explanation": "all referred targets appear", "better_frame": None},
            {"answer": "no", "explanation": "no context frame beats the keyframe", "better_frame": None},
        ]
    )


def _existence_fail_better(frame: int) -> str:
    return json.dumps(
        [
            {"answer": "yes", "explanation": "the target is visible", "better_frame": None},
            {"answer": "yes", "explanation": "all referred targets appear", "better_frame": None},
            {
                "answer": "yes",
                "explanation": f"the target is partially occluded here; frame {frame} shows it more clearly",
                "better_frame": frame,
            },
        ]
    )


def _consistency_questions(targets: list[dict]) -> str:
    questions = []
    for t in targets:
        questions.append(
            {
                "target_id": t["target_id"],
                "attribute": t["attribute"],
                "question": f"Which {t['attribute']} does boxed object {t['target_id']} have?",
                "choices": t["choices"],
                "gold": t["gold"],
            }
        )
    return json.dumps(questions)


def _consistency_answers(targets: list[dict], wrong_ids: set[int]) -> str:
    answers = []
    for t in targets:
        if t["target_id"] in wrong_ids:
            choice = next(c for c in t["choices"] if c != t["gold"])
            answers.append({"choice": choice, "explanation": f"the boxed object looks {choice}"})
        else:
            answers.append({"choice": t["gold"], "explanation": f"the boxed object is {t['gold']}"})
    return json.dumps(answers)


@dataclass
class _ScriptBuilder:
    entries: list[dict] = field(default_factory=list)

    def wildcard(self, tag: str, reply) -> None:
        self.entries.append(_entry({"tag": tag}, reply))

    def add(self, match: dict, reply=None, replies=None) -> None:
        self.entries.append(_entry(match, reply=reply, replies=replies))


def _base_script(
    builder: _ScriptBuilder,
    expressions: list[str],
    boxes: list[tuple[float, float, float, float]],
    consistency_targets: list[dict],
    attributes: list[dict],
    scores_reply: str,
) -> None:
    builder.wildcard("similarity", {"by_image": {}, "default": 0.5})
    builder.wildcard("frame_scores", scores_reply)
    builder.wildcard("expressions", json.dumps(expressions))
    builder.add(
        {"tag": "questions", "role": "existence_questioner"}, _existence_questions()
    )
    builder.add({"tag": "qa_answers", "role": "existence_responder"}, _existence_pass())
    builder.add({"tag": "box"}, replies=[json.dumps(list(b)) for b in boxes])
    builder.add(
        {"tag": "questions", "role": "attribute_decomposition"}, json.dumps(attributes)
    )
    builder.add(
        {"tag": "questions", "role": "consistency_questioner"},
        _consistency_questions(consistency_targets),
    )
    builder.add(
        {"tag": "qa_answers", "role": "consistency_responder"},
        _consistency_answers(consistency_targets, set()),
    )
    builder.wildcard(
        "free_text",
        json.dumps(
            {
                "frame_scores": ROUND1_SCORES,
                "expressions": expressions,
                "boxes": [list(b) for b in boxes],
            }
        ),
    )
    builder.wildcard("segment", {"mode": "oracle"})


def _document(builder: _ScriptBuilder, gt: list[Masklet], meta: dict) -> dict:
    return {
        "schema": MOCK_SCENARIO_SCHEMA,
        "meta": meta,
        "entries": builder.entries,
        "gt": {"masklets": [masklet_to_wire(m) for m in gt]},
    }


def _single_shape(rng: random.Random, color=(210, 40, 40)) -> ShapeSpec:
    w = rng.randint(12, 16)
    h = rng.randint(12, 16)
    x0 = rng.randint(2, 8)
    y0 = rng.randint(10, 34)
    return ShapeSpec(kind="rect", color=color, start=(x0, y0), velocity=(2, 0), size=(w, h))


def _multi_shapes(rng: random.Random, count: int) -> tuple[ShapeSpec, ...]:
    shapes = [
        ShapeSpec(
            kind="rect",
            color=(210, 40, 40),
            start=(rng.randint(2, 6), rng.randint(4, 10)),
            velocity=(2, 0),
            size=(rng.randint(10, 12), rng.randint(10, 12)),
        ),
        ShapeSpec(
            kind="circle",
            color=(40, 60, 210),
            start=(rng.randint(10, 14), rng.randint(44, 50)),
            velocity=(2, 0),
            size=(rng.randint(6, 8),) * 2,
        ),
    ]
    if count >= 3:
        shapes.append(
            ShapeSpec(
                kind="rect",
                color=(40, 200, 60),
                start=(rng.randint(30, 36), rng.randint(26, 30)),
                velocity=(1, 0),
                size=(rng.randint(8, 10), rng.randint(8, 10)),
            )
        )
    return tuple(shapes)


def generate_scenario(seed: int, template: str) -> Scenario:
    """Deterministic scenario for a seed: clip, GT, and a complete script."""
    if template not in TEMPLATES:
        raise ScenarioError(f"unknown template {template!r}; pick from {TEMPLATES}")
    rng = random.Random((seed, template).__repr__())
    t, height, width = 10, 64, 64
    builder = _ScriptBuilder()

    if template == "multi_target":
        count = 2 + seed % 2
        shapes = _multi_shapes(rng, count)
        query = "the colored shapes gliding to the right"
        expressions = ["the red rectangle", "the blue circle", "the green rectangle"][:count]
        kinds = ["rectangle", "circle", "rectangle"][:count]
        consistency_targets = [
            {
                "target_id": i,
                "attribute": "category",
                "choices": ["rectangle", "circle"],
                "gold": kinds[i],
            }
            for i in range(count)
        ]
        attributes = [{"attribute": "category", "level": "high"}]
    else:
        shapes = (_single_shape(rng),)
        query = "the red rectangle sliding right"
        expressions = ["the red rectangle"]
        consistency_targets = [
            {"target_id": 0, "attribute": "color", "choices": ["red", "blue"], "gold": "red"}
        ]
        attributes = [{"attribute": "color", "level": "low"}]

    spec = ClipSpec(t=t, height=height, width=width, shapes=shapes)
    clip, gt = render_shapes(spec)

    keyframe = KEYFRAME_R2 if template == "keyframe_correction" else KEYFRAME_R1
    boxes = [mask_bbox_normalized(m.masks[keyframe]) for m in gt]
    scores_reply = json.dumps(ROUND1_SCORES)
    _base_script(builder, expressions, boxes, consistency_targets, attributes, scores_reply)

    if template == "keyframe_correction":
        # Round 1 existence names a better context frame; round 2 scores
        # promote it and the check passes.
        builder.add({"tag": "frame_scores", "round": 1}, json.dumps(ROUND1_SCORES))
        builder.add({"tag": "frame_scores", "round": 2}, json.dumps(ROUND2_SCORES))
        builder.add(
            {"tag": "qa_answers", "role": "existence_responder", "round": 1},
            _existence_fail_better(KEYFRAME_R2),
        )
        builder.add(
            {"tag": "qa_answers", "role": "existence_responder", "round": 2},
            _existence_pass(),
        )
    elif template == "consistency_correction":
        # Round 1 answers the color attribute wrong; the report steers the
        # intent agent to a corrected expression in round 2.
        builder.add({"tag": "expressions", "round": 1}, json.dumps(["the blue shape"]))
        builder.add({"tag": "expressions", "round": 2}, json.dumps(expressions))
        builder.add(
            {"tag": "qa_answers", "role": "consistency_responder", "round": 1},
            _consistency_answers(consistency_targets, {0}),
        )
        builder.add(
            {"tag": "qa_answers", "role": "consistency_responder", "round": 2},
            _consistency_answers(consistency_targets, set()),
        )

    meta = {
        "template": template,
        "seed": seed,
        "query": query,
        "expected_keyframe": keyframe,
        "expressions": expressions,
    }
    document = _document(builder, gt, meta)
    return Scenario(
        clip_spec=spec,
        query=query,
        clip=clip,
        gt_masklets=gt,
        document=document,
        template=template,
        seed=seed,
    )


def write_scenario(scenario: Scenario, out_dir: str | Path) -> Path:
    """Emit frames/, gt/, scenario.json, and a single-entry manifest."""
    out_dir = Path(out_dir)
    frames_dir = out_dir / "frames"
    gt_dir = out_dir / "gt"
    frames_dir.mkdir(parents=True, exist_ok=True)
    for i in range(scenario.clip.frame_count):
        (frames_dir / f"{i:05d}.png").write_bytes(png_bytes(scenario.clip.frame(i)))
    for m in scenario.gt_masklets:
        tdir = gt_dir / f"target_{m.target_id}"
        tdir.mkdir(parents=True, exist_ok=True)
        for i in range(m.frame_count):
            (tdir / f"{i:05d}.png").write_bytes(png_bytes(m.masks[i]))
    (out_dir / "scenario.json").write_text(json.dumps(scenario.document, indent=2))
    manifest = [
        {
            "id": f"{scenario.template}_seed{scenario.seed}",
            "frames": "frames",
            "query": scenario.query,
            "gt": "gt",
            "scenario": "scenario.json",
        }
    ]
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2))
    return manifest_path
