from __future__ import annotations

import numpy as np
import pytest

from refer_engine.config import LayoutConfig
from refer_engine.layout import (
    FocusCanvas,
    LayoutError,
    build_canvas,
    compose,
    letterbox,
    plan_layout,
)

from conftest import make_clip


def rects_overlap(a, b):
    return not (a[2] <= b[0] or b[2] <= a[0] or a[3] <= b[1] or b[3] <= a[1])


def check_canvas_invariants(canvas: FocusCanvas, w: int, h: int):
    kf = canvas.keyframe_slot
    if canvas.mode == "focus":
        assert (kf.rect[2] - kf.rect[0], kf.rect[3] - kf.rect[1]) == (2 * w, 2 * h)
        for s in canvas.context_slots:
            assert (s.rect[2] - s.rect[0], s.rect[3] - s.rect[1]) == (w, h)
    slots = canvas.slots
    for i, a in enumerate(slots):
        for b in slots[i + 1 :]:
            assert not rects_overlap(a.rect, b.rect)
    H, W = canvas.image.shape[:2]
    for s in slots:
        assert 0 <= s.rect[0] < s.rect[2] <= W
        assert 0 <= s.rect[1] < s.rect[3] <= H
    # reading order (slots stored column-major) is temporally nondecreasing
    order = [s.frame_index for s in slots]
    assert order == sorted(order)
    # injective slot -> frame mapping
    assert len(set(order)) == len(order)


class TestPlanLayout:
    def test_odd_position_no_extras(self):
        # keyframe in the middle of five: one left column, one right column
        plan = plan_layout([0, 2, 4, 5, 6], 4, 10)
        assert plan.extra_frames == ()
        assert len(plan.columns) == 3
        assert [c.is_keyframe for c in plan.columns] == [False, True, False]
        assert plan.columns[0].frames == (0, 2)
        assert plan.columns[2].frames == (5, 6)

    def test_even_position_fires_parity_rule(self):
        plan = plan_layout([0, 2, 4, 5, 6], 2, 10)
        assert len(plan.extra_frames) == 2
        left = [c for c in plan.columns if not c.is_keyframe][:1]
        assert sum(len(c.frames) for c in plan.columns if not c.is_keyframe) == 6
        # before=2, after=4 -> 1 left + 2 right columns
        kf_pos = [c.is_keyframe for c in plan.columns].index(True)
        assert kf_pos == 1
        assert len(plan.columns) == 4

    def test_parity_fires_iff_even_position(self):
        selected = [1, 3, 5, 7, 9]
        for p, kf in enumerate(selected, start=1):
            plan = plan_layout(selected, kf, 20)
            if p % 2 == 0:
                assert len(plan.extra_frames) == 2, f"p={p} should sample extras"
            else:
                assert plan.extra_frames == (), f"p={p} should not sample extras"

    def test_extra_frames_sampled_at_midpoints(self):
        # selected {1, 5, 9, 13, 17}, keyframe 5 (p=2): gaps (1,5) and (5,9)
        plan = plan_layout([1, 5, 9, 13, 17], 5, 20)
        assert set(plan.extra_frames) == {3, 7}

    def test_single_frame_keyframe_only(self):
        plan = plan_layout([4], 4, 10)
        assert len(plan.columns) == 1
        assert plan.columns[0].is_keyframe

    def test_keyframe_must_be_selected(self):
        with pytest.raises(LayoutError):
            plan_layout([0, 1], 5, 10)

    def test_extras_are_distinct_and_in_range(self):
        for kf in (2, 5):
            plan = plan_layout([0, 2, 5, 7, 9], kf, 10)
            frames = plan.frame_indices
            assert len(set(frames)) == len(frames)
            assert all(0 <= i < 10 for i in frames)


class TestCompose:
    def test_geometry_example(self):
        # 64x64 frames, 128x128 cells, keyframe at position 3 of 5
        clip = make_clip(t=10, h=64, w=64)
        plan = plan_layout([0, 2, 4, 5, 6], 4, 10)
        canvas = compose(clip, plan, (128, 128))
        assert canvas.image.shape == (256, 512, 3)
        assert canvas.keyframe_slot.rect == (128, 0, 384, 256)
        check_canvas_invariants(canvas, 128, 128)

    def test_parity_canvas_width(self):
        clip = make_clip(t=10, h=64, w=64)
        plan = plan_layout([0, 2, 4, 5, 6], 2, 10)
        canvas = compose(clip, plan, (128, 128))
        assert canvas.image.shape == (256, 5 * 128, 3)
        check_canvas_invariants(canvas, 128, 128)

    def test_keyframe_only_canvas(self):
        clip = make_clip(t=3, h=64, w=64)
        plan = plan_layout([1], 1, 3)
        canvas = compose(clip, plan, (128, 128))
        assert canvas.image.shape == (256, 256, 3)

    def test_bit_identical_recomposition(self):
        clip = make_clip(t=10, h=48, w=64)
        plan = plan_layout([0, 2, 4, 5, 6], 4, 10)
        c1 = compose(clip, plan, (64, 64))
        c2 = compose(clip, plan, (64, 64))
        assert np.array_equal(c1.image, c2.image)

    def test_letterbox_wide_content_centered(self):
        frame = np.full((90, 160, 3), 200, dtype=np.uint8)  # 16:9
        out = letterbox(frame, 128, 128)
        assert out.shape == (128, 128, 3)
        # scale = 0.8 -> content 128x72, vertical bars of 28 px
        assert out[:28].max() == 0 and out[100:].max() == 0
        assert out[28:100].min() > 0

    def test_cell_too_small(self):
        clip = make_clip(t=2)
        plan = plan_layout([0], 0, 2)
        with pytest.raises(LayoutError, match="too small"):
            compose(clip, plan, (16, 128))

    def test_keyframe_area_is_four_context_areas(self):
        clip = make_clip(t=10, h=64, w=64)
        plan = plan_layout([0, 2, 4, 5, 6], 4, 10)
        canvas = compose(clip, plan, (64, 64))
        kf = canvas.keyframe_slot.rect
        ctx = canvas.context_slots[0].rect
        area = lambda r: (r[2] - r[0]) * (r[3] - r[1])
        assert area(kf) == 4 * area(ctx)


class TestLayoutModes:
    def test_single_keyframe_mode(self):
        clip = make_clip(t=10, h=64, w=64)
        cfg = LayoutConfig(cell_w=64, cell_h=64, mode="single_keyframe")
        canvas = build_canvas(clip, [0, 2, 4, 5, 6], 4, cfg)
        assert len(canvas.slots) == 1
        assert canvas.keyframe_slot.frame_index == 4
        assert canvas.image.shape == (128, 128, 3)

    def test_uniform_grid_mode(self):
        clip = make_clip(t=10, h=64, w=64)
        cfg = LayoutConfig(cell_w=64, cell_h=64, mode="uniform_grid")
        canvas = build_canvas(clip, [0, 2, 4, 5, 6], 4, cfg)
        assert len(canvas.slots) == 5
        sizes = {(s.rect[2] - s.rect[0], s.rect[3] - s.rect[1]) for s in canvas.slots}
        assert sizes == {(64, 64)}
        assert canvas.keyframe_slot.frame_index == 4

    def test_labels_toggle_changes_pixels(self):
        clip = make_clip(t=10, h=64, w=64)
        plan = plan_layout([0, 2, 4, 5, 6], 4, 10)
        with_labels = compose(clip, plan, (64, 64), label_frames=True)
        without = compose(clip, plan, (64, 64), label_frames=False)
        assert not np.array_equal(with_labels.image, without.image)

    def test_legend_mentions_keyframe_and_context(self):
        clip = make_clip(t=10, h=64, w=64)
        canvas = build_canvas(clip, [0, 2, 4, 5, 6], 4, LayoutConfig(cell_w=64, cell_h=64))
        legend = canvas.legend()
        assert "frame 4" in legend
        assert "0, 2, 5, 6" in legend
