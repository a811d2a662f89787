"""Focus canvas composition: keyframe large, context frames small.

The default "focus" mode builds a 2-row canvas: context frames stack two
per column (each w x h) and the keyframe occupies one full-height,
double-width column (2w x 2h) at its temporal position. When the
keyframe sits at an even 1-based position among the selected frames, the
context counts on both sides are odd, so two extra frames are sampled at
temporal midpoints to restore even counts and a balanced grid.

Alternative modes for ablations: "single_keyframe" (keyframe only) and
"uniform_grid" (all frames in equal cells).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .clips import VideoClip, png_bytes
from .config import LayoutConfig

logger = logging.getLogger(__name__)

MIN_CELL_PX = 32


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class Slot:
    rect: tuple[int, int, int, int]  # (x1, y1, x2, y2) on the canvas
    frame_index: int
    is_keyframe: bool


@dataclass(frozen=True)
class Column:
    frames: tuple[int, ...]  # 1 or 2 context frames, or the keyframe alone
    is_keyframe: bool


@dataclass(frozen=True)
class LayoutPlan:
    columns: tuple[Column, ...]
    keyframe_index: int
    extra_frames: tuple[int, ...]
    mode: str = "focus"

    @property
    def frame_indices(self) -> tuple[int, ...]:
        out: list[int] = []
        for col in self.columns:
            out.extend(col.frames)
        return tuple(out)


@dataclass(frozen=True)
class FocusCanvas:
    """Composed canvas plus the slot map back to source frame indices.

    Slots are listed in reading order (columns left to right, top to
    bottom within a column), which is nondecreasing in frame index.
    """

    image: np.ndarray
    slots: tuple[Slot, ...]
    cell: tuple[int, int]
    mode: str = "focus"

    def __post_init__(self):
        keyframes = [s for s in self.slots if s.is_keyframe]
        if len(keyframes) != 1:
            raise LayoutError(f"expected exactly one keyframe slot, got {len(keyframes)}")

    @property
    def keyframe_slot(self) -> Slot:
        return next(s for s in self.slots if s.is_keyframe)

    @property
    def context_slots(self) -> tuple[Slot, ...]:
        return tuple(s for s in self.slots if not s.is_keyframe)

    def legend(self) -> str:
        kf = self.keyframe_slot.frame_index
        ctx = [str(s.frame_index) for s in self.context_slots]
        if not ctx:
            return f"It shows only the keyframe, frame {kf}."
        return (
            f"The large block is the keyframe, frame {kf}; the small slots are "
            f"context frames {', '.join(ctx)}, in temporal order. Each slot is "
            "labelled with its frame index."
        )


def _pick_extra_frame(lo: int, hi: int, used: set[int], t: int, side: str) -> int | None:
    """Nearest unused index to the midpoint of (lo, hi), preferring that
    open interval, then any unused index on the keyframe's side."""
    mid = (lo + hi) // 2
    in_gap = [i for i in range(lo + 1, hi) if i not in used]
    if in_gap:
        return min(in_gap, key=lambda i: (abs(i - mid), i))
    if side == "before":
        fallback = [i for i in range(0, hi) if i not in used]
    else:
        fallback = [i for i in range(lo + 1, t) if i not in used]
    if fallback:
        return min(fallback, key=lambda i: (abs(i - mid), i))
    return None


def _chunk_pairs(frames: list[int]) -> list[Column]:
    return [
        Column(frames=tuple(frames[i : i + 2]), is_keyframe=False)
        for i in range(0, len(frames), 2)
    ]


def plan_layout(
    selected: list[int],
    keyframe_index: int,
    clip_t: int,
    mode: str = "focus",
) -> LayoutPlan:
    """Decide the column grid and any extra frames to sample."""
    selected = sorted(selected)
    if keyframe_index not in selected:
        raise LayoutError(f"keyframe {keyframe_index} not in selected {selected}")

    if mode == "single_keyframe":
        return LayoutPlan(
            columns=(Column(frames=(keyframe_index,), is_keyframe=True),),
            keyframe_index=keyframe_index,
            extra_frames=(),
            mode=mode,
        )
    if mode == "uniform_grid":
        return LayoutPlan(
            columns=tuple(_chunk_pairs(selected)),
            keyframe_index=keyframe_index,
            extra_frames=(),
            mode=mode,
        )
    if mode != "focus":
        raise LayoutError(f"unknown layout mode: {mode}")

    position = selected.index(keyframe_index) + 1  # 1-based
    before = [i for i in selected if i < keyframe_index]
    after = [i for i in selected if i > keyframe_index]
    extras: list[int] = []

    if position % 2 == 0:
        used = set(selected)
        prev_anchor = before[-1] if before else 0
        extra_b = _pick_extra_frame(prev_anchor, keyframe_index, used, clip_t, "before")
        if extra_b is not None:
            used.add(extra_b)
            before.append(extra_b)
            before.sort()
            extras.append(extra_b)
        else:
            logger.warning("no spare frame available before keyframe %d", keyframe_index)
        next_anchor = after[0] if after else clip_t - 1
        extra_a = _pick_extra_frame(keyframe_index, next_anchor, used, clip_t, "after")
        if extra_a is not None:
            after.append(extra_a)
            after.sort()
            extras.append(extra_a)
        else:
            logger.warning("no spare frame available after keyframe %d", keyframe_index)

    columns = (
        _chunk_pairs(before)
        + [Column(frames=(keyframe_index,), is_keyframe=True)]
        + _chunk_pairs(after)
    )
    return LayoutPlan(
        columns=tuple(columns),
        keyframe_index=keyframe_index,
        extra_frames=tuple(extras),
        mode=mode,
    )


def letterbox(frame: np.ndarray, width: int, height: int) -> np.ndarray:
    """Resize preserving aspect, centered on black bars."""
    src_h, src_w = frame.shape[:2]
    scale = min(width / src_w, height / src_h)
    new_w = max(1, int(round(src_w * scale)))
    new_h = max(1, int(round(src_h * scale)))
    resized = np.asarray(
        Image.fromarray(frame).resize((new_w, new_h), Image.BILINEAR)
    )
    out = np.zeros((height, width, 3), dtype=np.uint8)
    x0 = (width - new_w) // 2
    y0 = (height - new_h) // 2
    out[y0 : y0 + new_h, x0 : x0 + new_w] = resized
    return out


def _label_slot(draw: ImageDraw.ImageDraw, rect, text: str, font) -> None:
    x1, y1 = rect[0], rect[1]
    bbox = draw.textbbox((x1 + 2, y1 + 2), text, font=font)
    draw.rectangle(bbox, fill=(0, 0, 0))
    draw.text((x1 + 2, y1 + 2), text, fill=(255, 255, 0), font=font)


def compose(
    clip: VideoClip,
    plan: LayoutPlan,
    cell: tuple[int, int],
    label_frames: bool = True,
) -> FocusCanvas:
    """Render the planned grid into one deterministic RGB canvas."""
    w, h = cell
    if w < MIN_CELL_PX or h < MIN_CELL_PX:
        raise LayoutError(f"cell {cell} too small; minimum {MIN_CELL_PX}px per side")
    for idx in plan.frame_indices:
        if not 0 <= idx < clip.frame_count:
            raise LayoutError(f"frame index {idx} out of range")

    # Column x-offsets; keyframe column is double width.
    widths = [2 * w if col.is_keyframe else w for col in plan.columns]
    canvas_w = sum(widths)
    canvas_h = 2 * h
    canvas = np.zeros((canvas_h, canvas_w, 3), dtype=np.uint8)
    slots: list[Slot] = []

    x = 0
    for col, col_w in zip(plan.columns, widths):
        if col.is_keyframe:
            rect = (x, 0, x + 2 * w, 2 * h)
            canvas[0 : 2 * h, x : x + 2 * w] = letterbox(
                clip.frame(col.frames[0]), 2 * w, 2 * h
            )
            slots.append(Slot(rect=rect, frame_index=col.frames[0], is_keyframe=True))
        else:
            for row, frame_idx in enumerate(col.frames):
                y = row * h
                rect = (x, y, x + w, y + h)
                canvas[y : y + h, x : x + w] = letterbox(clip.frame(frame_idx), w, h)
                # uniform_grid has no dedicated column; flag its keyframe cell
                is_kf = plan.mode == "uniform_grid" and frame_idx == plan.keyframe_index
                slots.append(Slot(rect=rect, frame_index=frame_idx, is_keyframe=is_kf))
        x += col_w

    if label_frames:
        img = Image.fromarray(canvas)
        draw = ImageDraw.Draw(img)
        font = ImageFont.load_default()
        for slot in slots:
            _label_slot(draw, slot.rect, f"#{slot.frame_index}", font)
        canvas = np.asarray(img)

    return FocusCanvas(image=canvas, slots=tuple(slots), cell=cell, mode=plan.mode)


def build_canvas(
    clip: VideoClip,
    selected: list[int],
    keyframe_index: int,
    config: LayoutConfig,
    dump_path: str | Path | None = None,
) -> FocusCanvas:
    plan = plan_layout(selected, keyframe_index, clip.frame_count, mode=config.mode)
    canvas = compose(
        clip, plan, (config.cell_w, config.cell_h), label_frames=config.label_frames
    )
    if dump_path is not None:
        Path(dump_path).write_bytes(png_bytes(canvas.image))
    return canvas
