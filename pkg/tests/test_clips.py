from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from refer_engine.clips import (
    ClipError,
    Masklet,
    blend_overlay,
    draw_boxes,
    load_clip,
    read_masklets_png,
    read_masklets_rle,
    render_overlay,
    rle_decode_mask,
    subsample_indices,
    rle_encode_mask,
    target_color,
    write_masklets,
)

from conftest import make_clip, make_masklet


def write_frames(tmp_path, count, size=(64, 64), name="frames"):
    d = tmp_path / name
    d.mkdir()
    for i in range(count):
        arr = np.full((size[1], size[0], 3), i * 10 % 256, dtype=np.uint8)
        Image.fromarray(arr).save(d / f"{i:05d}.png")
    return d


class TestLoadClip:
    def test_directory_of_pngs(self, tmp_path):
        d = write_frames(tmp_path, 5)
        clip = load_clip(d)
        assert clip.frame_count == 5
        assert (clip.height, clip.width) == (64, 64)
        assert clip.source_indices == (0, 1, 2, 3, 4)

    def test_uniform_subsample(self, tmp_path):
        d = write_frames(tmp_path, 10)
        clip = load_clip(d, max_frames=5)
        assert clip.frame_count == 5
        assert clip.source_indices == (0, 2, 4, 6, 8)

    def test_subsample_never_exceeds_cap(self, tmp_path):
        d = write_frames(tmp_path, 10)
        clip = load_clip(d, max_frames=3)
        assert clip.frame_count == 3
        assert list(clip.source_indices) == sorted(set(clip.source_indices))

    def test_empty_directory(self, tmp_path):
        d = tmp_path / "empty"
        d.mkdir()
        with pytest.raises(ClipError, match="zero decodable frames"):
            load_clip(d)

    def test_missing_path(self, tmp_path):
        with pytest.raises(ClipError, match="unreadable"):
            load_clip(tmp_path / "nope")

    def test_inconsistent_dimensions(self, tmp_path):
        d = write_frames(tmp_path, 2)
        Image.fromarray(np.zeros((32, 32, 3), dtype=np.uint8)).save(d / "zzz.png")
        with pytest.raises(ClipError, match="inconsistent"):
            load_clip(d)

    @given(t=st.integers(1, 500), cap=st.integers(1, 40))
    @settings(max_examples=120, deadline=None)
    def test_subsample_order_strictly_increases(self, t, cap):
        indices = subsample_indices(t, cap)
        assert len(indices) == min(t, cap)
        assert all(0 <= i < t for i in indices)
        assert all(b > a for a, b in zip(indices, indices[1:]))
        assert indices[0] == 0


class TestClipInvariants:
    def test_frames_are_read_only(self):
        clip = make_clip()
        with pytest.raises(ValueError):
            clip.frames[0, 0, 0, 0] = 1

    def test_masklet_shape_checked(self):
        with pytest.raises(ClipError):
            Masklet(target_id=0, masks=np.zeros((4, 4), dtype=bool))


class TestMaskletIO:
    def test_png_per_frame_file_count(self, tmp_path):
        clip = make_clip(t=3)
        m = make_masklet(0, np.zeros((3, 32, 32)))
        manifest = write_masklets(clip, [m], tmp_path / "out", "png-per-frame")
        lines = manifest.read_text().splitlines()
        assert len(lines) == 3
        assert all((tmp_path / "out" / rel).exists() for rel in lines)

    def test_all_false_masks_write_zero_pngs(self, tmp_path):
        clip = make_clip(t=2)
        m = make_masklet(0, np.zeros((2, 32, 32)))
        write_masklets(clip, [m], tmp_path / "out", "png-per-frame")
        img = np.asarray(Image.open(tmp_path / "out" / "target_0" / "00000.png"))
        assert img.max() == 0

    def test_png_round_trip(self, tmp_path):
        clip = make_clip(t=3)
        masks = np.zeros((3, 32, 32), dtype=bool)
        masks[:, 4:12, 6:20] = True
        m = make_masklet(2, masks)
        write_masklets(clip, [m], tmp_path / "out", "png-per-frame")
        (back,) = read_masklets_png(tmp_path / "out")
        assert back.target_id == 2
        assert np.array_equal(back.masks, masks)

    def test_rle_round_trip(self, tmp_path):
        clip = make_clip(t=2)
        rng = np.random.default_rng(7)
        masks = rng.random((2, 32, 32)) > 0.5
        m = make_masklet(0, masks)
        write_masklets(clip, [m], tmp_path / "out", "rle-json")
        (back,) = read_masklets_rle(tmp_path / "out" / "masklets.json")
        assert np.array_equal(back.masks, masks)

    def test_dimension_mismatch_rejected(self, tmp_path):
        clip = make_clip(t=2)
        m = make_masklet(0, np.zeros((2, 16, 16)))
        with pytest.raises(ClipError, match="shape"):
            write_masklets(clip, [m], tmp_path / "out")

    @given(
        mask=st.lists(
            st.lists(st.booleans(), min_size=1, max_size=12),
            min_size=1,
            max_size=8,
        ).filter(lambda rows: len({len(r) for r in rows}) == 1)
    )
    @settings(max_examples=80, deadline=None)
    def test_rle_round_trip_property(self, mask):
        arr = np.asarray(mask, dtype=bool)
        assert np.array_equal(rle_decode_mask(rle_encode_mask(arr), arr.shape[1]), arr)


class TestOverlay:
    def test_zero_targets_copies_frames(self, tmp_path):
        clip = make_clip(t=2)
        paths = render_overlay(clip, [], tmp_path / "ov")
        for i, p in enumerate(paths):
            assert np.array_equal(np.asarray(Image.open(p)), clip.frame(i))

    def test_full_mask_blends_half(self, tmp_path):
        clip = make_clip(t=1)
        m = make_masklet(0, np.ones((1, 32, 32)))
        (p,) = render_overlay(clip, [m], tmp_path / "ov", alpha=0.5)
        got = np.asarray(Image.open(p)).astype(np.float64)
        expected = np.round(
            0.5 * clip.frame(0).astype(np.float64) + 0.5 * np.asarray(target_color(0))
        )
        assert np.array_equal(got, expected)

    def test_distinct_target_colors(self):
        assert target_color(0) != target_color(1)

    def test_pixels_outside_mask_untouched(self, tmp_path):
        clip = make_clip(t=1)
        masks = np.zeros((1, 32, 32), dtype=bool)
        masks[0, :8, :8] = True
        m = make_masklet(0, masks)
        (p,) = render_overlay(clip, [m], tmp_path / "ov")
        got = np.asarray(Image.open(p))
        assert np.array_equal(got[8:, :], clip.frame(0)[8:, :])
        assert np.array_equal(got[:8, 8:], clip.frame(0)[:8, 8:])

    def test_blend_formula_direct(self):
        frame = np.full((4, 4, 3), 100, dtype=np.uint8)
        mask = np.ones((4, 4), dtype=bool)
        out = blend_overlay(frame, mask, (200, 0, 50), 0.5)
        assert np.array_equal(out[0, 0], [150, 50, 75])

    def test_draw_boxes_labels_inside(self):
        img = np.zeros((40, 40, 3), dtype=np.uint8)
        out = draw_boxes(img, [(0.1, 0.1, 0.9, 0.9)])
        assert out.shape == img.shape
        assert out.sum() > 0
        assert np.array_equal(out[0, 0], [0, 0, 0])  # outside box untouched
