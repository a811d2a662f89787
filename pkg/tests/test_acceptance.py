"""Acceptance suite: one test per release criterion, each printing a
pass/fail line with its runtime (run with ``pytest -s`` to see them all).
Every tolerance and time budget is pinned here, not configurable.
"""

from __future__ import annotations

import itertools
import json
import random
import time
from contextlib import contextmanager
from fractions import Fraction

import numpy as np
import pytest

from refer_engine.clips import Masklet
from refer_engine.config import EngineConfig
from refer_engine.fixtures import generate_scenario
from refer_engine.layout import compose, plan_layout
from refer_engine.metrics import evaluate, frame_boundary_f, frame_iou, mask_boundary, region_j
from refer_engine.orchestrator import run_session
from refer_engine.reflection import consistency_verdict
from refer_engine.selection import coarse_select, fuse_and_pick, segment_bounds

from conftest import NO_BACKOFF, make_backend, make_clip
from test_metrics import oracle_boundary, oracle_frame_f, oracle_iou

WRONG_CONSISTENCY = json.dumps(
    [{"choice": "blue", "explanation": "the boxed object looks blue"}]
)


@contextmanager
def criterion(name: str, budget_s: float):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"[FAIL] {name} ({time.perf_counter() - start:.2f}s)")
        raise
    elapsed = time.perf_counter() - start
    print(f"[PASS] {name} ({elapsed:.2f}s, budget {budget_s:g}s)")
    assert elapsed < budget_s, f"{name} exceeded its {budget_s}s budget: {elapsed:.2f}s"


def engine_config(**tweaks) -> EngineConfig:
    cfg = EngineConfig()
    cfg.backends.backoff_base = 0.0
    for dotted, value in tweaks.items():
        section, key = dotted.split(".")
        setattr(getattr(cfg, section), key, value)
    return cfg


def test_score_fusion_exactness():
    """Fused scores are exactly 0.3*clip + 0.7*mllm; ranking matches a
    brute-force sort oracle over 10,000 random score pairs."""
    with criterion("score-fusion-exactness", 1.0):
        rng = random.Random(101)
        pairs = [(rng.random(), rng.random()) for _ in range(10_000)]
        alpha, beta = 0.3, 0.7
        # exactness over all pairs, checked through the real constructor
        for chunk_start in range(0, 10_000, 10):
            chunk = pairs[chunk_start : chunk_start + 10]
            idx = list(range(10))
            c = [p[0] for p in chunk]
            m = [p[1] for p in chunk]
            sel = fuse_and_pick(idx, c, m, k=5, alpha=alpha, beta=beta)
            for score, ci, mi in zip(sel.candidates, c, m):
                assert score.s_fused == alpha * ci + beta * mi  # 0 ULP drift
            fused = [alpha * ci + beta * mi for ci, mi in zip(c, m)]
            order = sorted(range(10), key=lambda i: (-fused[i], i))
            assert list(sel.selected) == sorted(order[:5])
            assert sel.keyframe_index == min(order[:5], key=lambda i: (-fused[i], i))


def test_coarse_selection_property():
    """One pick per nonempty segment, each the segment argmax with
    lowest-index tie-break, against a whole-video brute-force oracle."""
    with criterion("coarse-selection-property", 5.0):
        rng = random.Random(202)
        ts = [1, 2, 9, 10, 11, 200] + [rng.randint(1, 200) for _ in range(54)]
        for t in ts:
            raw = [rng.choice([0.0, 0.25, 0.5, 0.75, 1.0]) for _ in range(t)]  # ties likely
            clip = make_clip(t=t, h=8, w=8, seed=t)
            backend = make_backend(
                [{"match": {"tag": "similarity"}, "reply": {"scores": raw}}]
            )
            picks = coarse_select(clip, "q", 10, backend, NO_BACKOFF)
            bounds = segment_bounds(t, 10)
            assert len(picks) == len(bounds) == min(10, t)
            for (start, end), (chosen, score) in zip(bounds, picks):
                segment = list(range(start, end))
                best = max(segment, key=lambda i: (raw[i], -i))
                assert chosen == best, (t, start, end)
                assert score == raw[best]
            assert [i for i, _ in picks] == sorted(i for i, _ in picks)


def test_layout_suite():
    """For every keyframe position p in 1..5 with K=5: parity rule fires
    iff p is even; geometry, non-overlap, temporal order, determinism."""
    with criterion("layout-suite", 5.0):
        clip = make_clip(t=20, h=48, w=64, seed=7)
        selected = [2, 5, 9, 13, 17]
        w, h = 64, 64
        for p, keyframe in enumerate(selected, start=1):
            plan = plan_layout(selected, keyframe, clip.frame_count)
            if p % 2 == 0:
                assert len(plan.extra_frames) == 2, f"p={p}: parity rule must fire"
            else:
                assert plan.extra_frames == (), f"p={p}: parity rule must not fire"
            canvas = compose(clip, plan, (w, h))
            expected_slots = 5 + len(plan.extra_frames)
            assert len(canvas.slots) == expected_slots
            kf = canvas.keyframe_slot
            assert (kf.rect[2] - kf.rect[0], kf.rect[3] - kf.rect[1]) == (2 * w, 2 * h)
            rects = [s.rect for s in canvas.slots]
            for i, a in enumerate(rects):
                for b in rects[i + 1 :]:
                    overlap = not (
                        a[2] <= b[0] or b[2] <= a[0] or a[3] <= b[1] or b[3] <= a[1]
                    )
                    assert not overlap
            H, W = canvas.image.shape[:2]
            assert all(0 <= r[0] < r[2] <= W and 0 <= r[1] < r[3] <= H for r in rects)
            order = [s.frame_index for s in canvas.slots]
            assert order == sorted(order), f"p={p}: reading order not temporal"
            assert len(set(order)) == len(order)
            again = compose(clip, plan, (w, h))
            assert np.array_equal(canvas.image, again.image), f"p={p}: not deterministic"


def test_consistency_threshold_table():
    """Verdicts over every (targets <= 12, inconsistent) pair follow the
    strict >0.30 rule, including the 3/10 pass vs 4/10 fail boundary."""
    with criterion("consistency-threshold-table", 1.0):
        for count in range(1, 13):
            for bad in range(0, count + 1):
                got = consistency_verdict(count, bad, 0.30)
                if count == 1:
                    want = "fail" if bad else "pass"
                else:
                    want = "fail" if Fraction(bad, count) > Fraction(30, 100) else "pass"
                assert got == want, f"count={count} bad={bad}: {got} != {want}"
        assert consistency_verdict(10, 3, 0.30) == "pass"
        assert consistency_verdict(10, 4, 0.30) == "fail"


def test_orchestrator_loop():
    """Scripted loop behaviors: single clean round equals the
    reflection-free run; failed checks re-enter with routed feedback;
    the budget caps rounds; max_turn=0 makes zero reflection calls."""
    with criterion("orchestrator-loop", 10.0):
        # (a) all-pass: one round, identical to reflection-disabled output
        sc = generate_scenario(1, "single_target")
        with_reflection = run_session(sc.clip, sc.query, engine_config(), sc.backend())
        without = run_session(
            sc.clip, sc.query, engine_config(**{"pipeline.max_turn": 0}), sc.backend()
        )
        assert with_reflection.rounds_used == 1
        for a, b in zip(with_reflection.masklets, without.masklets):
            assert np.array_equal(a.masks, b.masks)

        # (b) existence fail then pass: keyframe changes, feedback verbatim
        sc = generate_scenario(2, "keyframe_correction")
        backend = sc.backend()
        result = run_session(sc.clip, sc.query, engine_config(), backend)
        assert result.rounds_used == 2
        assert (
            result.history[0].selection.keyframe_index
            != result.history[1].selection.keyframe_index
        )
        feedback = result.history[0].existence.feedback
        round2_scores = [
            c for c in backend.call_log if c.tag == "frame_scores" and c.round == 2
        ]
        assert len(round2_scores) == 1
        assert feedback in round2_scores[0].user_text

        # (c) always-fail consistency with max_turn=4: exactly 4 rounds,
        # exhausted, segmentation still emitted
        sc = generate_scenario(3, "single_target")
        for entry in sc.document["entries"]:
            m = entry["match"]
            if m.get("tag") == "qa_answers" and m.get("role") == "consistency_responder":
                entry.pop("replies", None)
                entry["reply"] = WRONG_CONSISTENCY
        backend = sc.backend()
        result = run_session(
            sc.clip, sc.query, engine_config(**{"pipeline.max_turn": 4}), backend
        )
        assert result.rounds_used == 4
        assert result.status == "exhausted"
        assert result.masklets and result.masklets[0].masks.any()
        assert len([c for c in backend.call_log if c.kind == "segment"]) == 1

        # (d) max_turn=0: zero reflection calls in the log
        sc = generate_scenario(4, "single_target")
        backend = sc.backend()
        run_session(sc.clip, sc.query, engine_config(**{"pipeline.max_turn": 0}), backend)
        reflection_roles = {
            "existence_questioner",
            "existence_responder",
            "attribute_decomposition",
            "consistency_questioner",
            "consistency_responder",
        }
        assert not [c for c in backend.call_log if c.role in reflection_roles]


def test_metrics_oracle_equivalence():
    """J and F over 1,000 random mask pairs match per-pixel brute force
    (J exactly, F within 1e-9); identity and disjoint sanity; assignment
    permutation-invariance."""
    with criterion("metrics-oracle", 30.0):
        rng = np.random.default_rng(303)
        for trial in range(1000):
            h = int(rng.integers(1, 17))
            w = int(rng.integers(1, 17))
            pred = rng.random((h, w)) < rng.uniform(0.05, 0.95)
            gt = rng.random((h, w)) < rng.uniform(0.05, 0.95)
            tol = int(rng.integers(0, 4))
            assert frame_iou(pred, gt) == oracle_iou(pred, gt)
            fast = frame_boundary_f(pred, gt, tol)
            slow = oracle_frame_f(pred, gt, tol)
            assert abs(fast - slow) <= 1e-9, f"trial {trial}: {fast} vs {slow}"
            if trial % 100 == 0:
                assert np.array_equal(mask_boundary(pred), oracle_boundary(pred))

        square = np.zeros((2, 12, 12), dtype=bool)
        square[:, 3:9, 3:9] = True
        m = Masklet(target_id=0, masks=square)
        assert region_j(m, m) == 1.0
        a = np.zeros((1, 12, 12), dtype=bool)
        b = np.zeros((1, 12, 12), dtype=bool)
        a[0, :3, :3] = True
        b[0, 8:, 8:] = True
        assert region_j(Masklet(target_id=0, masks=a), Masklet(target_id=0, masks=b)) == 0.0

        rng = np.random.default_rng(7)
        gts = [Masklet(target_id=i, masks=rng.random((1, 10, 10)) < 0.4) for i in range(3)]
        preds = [Masklet(target_id=i, masks=rng.random((1, 10, 10)) < 0.4) for i in range(3)]
        base = evaluate(preds, gts)
        for perm in itertools.permutations(range(3)):
            shuffled = evaluate([preds[i] for i in perm], gts)
            assert shuffled.jf == pytest.approx(base.jf, abs=1e-12)


def test_end_to_end_desk_scale():
    """All four fixture templates reach J&F >= 0.99 against GT with the
    GT-echo segment mock; correction templates route stage feedback to
    the right agent and recover by round 2. No network, no GPU."""
    with criterion("end-to-end-desk-scale", 60.0):
        for template in ("single_target", "multi_target"):
            sc = generate_scenario(11, template)
            result = run_session(sc.clip, sc.query, engine_config(), sc.backend())
            scores = evaluate(result.masklets, sc.gt_masklets)
            assert scores.jf >= 0.99, f"{template}: J&F {scores.jf}"
            assert result.rounds_used == 1

        # existence feedback must land in the next round's frame-scoring
        sc = generate_scenario(12, "keyframe_correction")
        backend = sc.backend()
        result = run_session(sc.clip, sc.query, engine_config(), backend)
        assert result.rounds_used == 2
        feedback = result.history[0].existence.feedback
        scoring_round2 = [
            c for c in backend.call_log if c.tag == "frame_scores" and c.round == 2
        ]
        assert feedback in scoring_round2[0].user_text
        intent_round2 = [
            c for c in backend.call_log if c.tag == "expressions" and c.round == 2
        ]
        assert all(feedback not in c.user_text for c in intent_round2)
        assert evaluate(result.masklets, sc.gt_masklets).jf >= 0.99

        # consistency feedback must land in the next round's intent prompt
        sc = generate_scenario(13, "consistency_correction")
        backend = sc.backend()
        result = run_session(sc.clip, sc.query, engine_config(), backend)
        assert result.rounds_used == 2
        report = result.history[0].consistency.feedback
        intent_round2 = [
            c for c in backend.call_log if c.tag == "expressions" and c.round == 2
        ]
        assert report in intent_round2[0].user_text
        scoring_round2 = [
            c for c in backend.call_log if c.tag == "frame_scores" and c.round == 2
        ]
        assert not scoring_round2  # keyframe kept, no re-scoring happened
        assert evaluate(result.masklets, sc.gt_masklets).jf >= 0.99


def test_ablation_surface(tmp_path):
    """Every ablation toggle runs to completion on fixtures and is
    reflected in the session transcript."""
    with criterion("ablation-surface", 60.0):
        sc = generate_scenario(21, "single_target")
        matrix: list[dict] = []
        matrix += [
            {"reflection.existence_enabled": False},
            {"reflection.consistency_enabled": False},
            {"reflection.existence_enabled": False, "reflection.consistency_enabled": False},
        ]
        matrix += [{"pipeline.max_turn": n} for n in (0, 2, 4, 6)]
        matrix += [{"pipeline.merge": m} for m in ("none", "select+intent", "intent+ground", "all")]
        matrix += [{"layout.mode": m} for m in ("focus", "single_keyframe", "uniform_grid")]

        for i, tweaks in enumerate(matrix):
            cfg = engine_config(**tweaks)
            out = tmp_path / f"run_{i}"
            result = run_session(sc.clip, sc.query, cfg, sc.backend(), out_dir=out)
            assert result.masklets, f"toggle {tweaks} produced no output"
            doc = json.loads((out / "session.json").read_text())
            assert doc["schema"] == "session-log/1"
            for dotted, value in tweaks.items():
                section, key = dotted.split(".")
                assert doc["config"][section][key] == value, f"{dotted} not in transcript"
            assert doc["rounds"], f"toggle {tweaks} recorded no rounds"
            assert evaluate(result.masklets, sc.gt_masklets).jf >= 0.99
