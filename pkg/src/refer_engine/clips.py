"""Frame store, masklets, and mask/overlay file formats.

A clip is an immutable stack of RGB frames loaded from a directory of
image files (benchmarks ship frames, not encoded video). Masklets are
per-target binary mask stacks aligned with the clip. Masks can be written
as per-frame PNGs or as a single run-length-encoded JSON document; both
round-trip losslessly.
"""

from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

logger = logging.getLogger(__name__)

RLE_SCHEMA = "masklet/1"
MANIFEST_NAME = "manifest.txt"
RLE_DOC_NAME = "masklets.json"

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}

# Overlay / box colors, indexed by target_id (wraps around).
TARGET_PALETTE = (
    (230, 25, 75),
    (60, 180, 75),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
    (240, 50, 230),
    (210, 245, 60),
)


class ClipError(ValueError):
    """Raised for unreadable, empty, or inconsistent frame sources."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class VideoClip:
    """Ordered, immutable RGB frame sequence with uniform dimensions."""

    frames: np.ndarray  # (T, H, W, 3) uint8, read-only
    source_id: str
    source_indices: tuple[int, ...] = field(default=())

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.uint8)
        if frames.ndim != 4 or frames.shape[0] < 1 or frames.shape[3] != 3:
            raise ClipError(f"expected (T, H, W, 3) frame stack, got {frames.shape}")
        object.__setattr__(self, "frames", _freeze(frames))
        if not self.source_indices:
            object.__setattr__(self, "source_indices", tuple(range(frames.shape[0])))
        if len(self.source_indices) != frames.shape[0]:
            raise ClipError("source_indices length must equal frame count")
        if any(b <= a for a, b in zip(self.source_indices, self.source_indices[1:])):
            raise ClipError("source_indices must strictly increase")

    @property
    def frame_count(self) -> int:
        return int(self.frames.shape[0])

    @property
    def height(self) -> int:
        return int(self.frames.shape[1])

    @property
    def width(self) -> int:
        return int(self.frames.shape[2])

    def frame(self, index: int) -> np.ndarray:
        return self.frames[index]


@dataclass(frozen=True)
class Masklet:
    """Per-frame binary masks for one target across a whole clip."""

    target_id: int
    masks: np.ndarray  # (T, H, W) bool, read-only

    def __post_init__(self):
        masks = np.asarray(self.masks, dtype=bool)
        if masks.ndim != 3 or masks.shape[0] < 1:
            raise ClipError(f"expected (T, H, W) mask stack, got {masks.shape}")
        object.__setattr__(self, "masks", _freeze(masks))

    @property
    def frame_count(self) -> int:
        return int(self.masks.shape[0])

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.masks.shape)  # type: ignore[return-value]


def _check_masklets(clip: VideoClip, targets: list[Masklet]) -> None:
    expected = (clip.frame_count, clip.height, clip.width)
    for m in targets:
        if m.shape != expected:
            raise ClipError(f"masklet {m.target_id} shape {m.shape} != clip {expected}")


def subsample_indices(total: int, max_frames: int | None) -> list[int]:
    """Uniform subsampling: stride = floor(total / max_frames), starting
    at index 0, truncated to at most ``max_frames`` picks."""
    if max_frames is None or max_frames < 1 or total <= max_frames:
        return list(range(total))
    stride = max(1, total // max_frames)
    return list(range(0, total, stride))[:max_frames]


def load_clip(path: str | Path, max_frames: int | None = None) -> VideoClip:
    """Load a directory of lexicographically ordered image frames.

    With ``max_frames`` set, frames are uniformly subsampled to at most
    that many while preserving temporal order.
    """
    path = Path(path)
    if not path.exists():
        raise ClipError(f"unreadable path: {path}")
    if path.is_file():
        raise ClipError(
            f"{path} is a file; decode videos to a frame directory first"
        )
    files = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise ClipError(f"zero decodable frames in {path}")

    indices = subsample_indices(len(files), max_frames)

    frames = []
    for i in indices:
        with Image.open(files[i]) as img:
            frames.append(np.asarray(img.convert("RGB"), dtype=np.uint8))
    shapes = {f.shape for f in frames}
    if len(shapes) > 1:
        raise ClipError(f"inconsistent frame dimensions in {path}: {sorted(shapes)}")
    return VideoClip(
        frames=np.stack(frames),
        source_id=str(path),
        source_indices=tuple(indices),
    )


def clip_from_frames(frames: np.ndarray, source_id: str = "memory") -> VideoClip:
    return VideoClip(frames=np.asarray(frames, dtype=np.uint8), source_id=source_id)


# ---------------------------------------------------------------------------
# PNG helpers


def png_bytes(image: np.ndarray) -> bytes:
    """Encode an RGB (H, W, 3) or mask (H, W) array as lossless PNG bytes."""
    arr = np.asarray(image)
    if arr.dtype == bool:
        arr = arr.astype(np.uint8) * 255
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def from_png_bytes(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as img:
        if img.mode in ("1", "L"):
            return np.asarray(img.convert("L"), dtype=np.uint8)
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


# ---------------------------------------------------------------------------
# Run-length encoding: per row, counts of alternating 0/1 runs starting
# with a 0-run (first count may be 0 when the row begins with 1).


def rle_encode_mask(mask: np.ndarray) -> list[list[int]]:
    mask = np.asarray(mask, dtype=bool)
    rows = []
    for row in mask:
        counts = [0]  # leading 0-run
        current = False
        for px in row:
            if px == current:
                counts[-1] += 1
            else:
                counts.append(1)
                current = not current
        rows.append(counts)
    return rows


def rle_decode_mask(rows: list[list[int]], width: int) -> np.ndarray:
    out = np.zeros((len(rows), width), dtype=bool)
    for y, counts in enumerate(rows):
        x = 0
        value = False
        for count in counts:
            if count:
                out[y, x : x + count] = value
                x += count
            value = not value
        if x != width:
            raise ClipError(f"row {y} decodes to {x} pixels, expected {width}")
    return out


def masklet_to_rle(masklet: Masklet) -> dict:
    t, h, w = masklet.shape
    return {
        "target_id": masklet.target_id,
        "size": [h, w],
        "frames": [rle_encode_mask(masklet.masks[i]) for i in range(t)],
    }


def masklet_from_rle(doc: dict) -> Masklet:
    h, w = doc["size"]
    masks = np.stack([rle_decode_mask(rows, w) for rows in doc["frames"]])
    if masks.shape[1] != h:
        raise ClipError("RLE height mismatch")
    return Masklet(target_id=int(doc["target_id"]), masks=masks)


# ---------------------------------------------------------------------------
# Writers / readers


def write_masklets(
    clip: VideoClip,
    targets: list[Masklet],
    out_dir: str | Path,
    format: str = "png-per-frame",
) -> Path:
    """Write masklets under ``out_dir``; returns the manifest path.

    ``png-per-frame`` writes target_<id>/<frame:05>.png with values {0,255};
    ``rle-json`` writes one versioned JSON document.
    """
    _check_masklets(clip, targets)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[str] = []

    if format == "png-per-frame":
        for m in targets:
            tdir = out_dir / f"target_{m.target_id}"
            tdir.mkdir(exist_ok=True)
            for i in range(m.frame_count):
                rel = f"target_{m.target_id}/{i:05d}.png"
                (out_dir / rel).write_bytes(png_bytes(m.masks[i]))
                written.append(rel)
    elif format == "rle-json":
        doc = {
            "schema": RLE_SCHEMA,
            "frame_count": clip.frame_count,
            "masklets": [masklet_to_rle(m) for m in targets],
        }
        (out_dir / RLE_DOC_NAME).write_text(json.dumps(doc))
        written.append(RLE_DOC_NAME)
    else:
        raise ClipError(f"unknown mask format: {format}")

    manifest = out_dir / MANIFEST_NAME
    manifest.write_text("".join(line + "\n" for line in written))
    return manifest


def read_masklets_rle(path: str | Path) -> list[Masklet]:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != RLE_SCHEMA:
        raise ClipError(f"expected schema {RLE_SCHEMA!r}, got {doc.get('schema')!r}")
    return [masklet_from_rle(m) for m in doc["masklets"]]


def read_masklets_png(out_dir: str | Path) -> list[Masklet]:
    """Read back masklets written in png-per-frame layout."""
    out_dir = Path(out_dir)
    targets = []
    for tdir in sorted(out_dir.glob("target_*")):
        tid = int(tdir.name.split("_", 1)[1])
        frames = [
            from_png_bytes(p.read_bytes()) > 127 for p in sorted(tdir.glob("*.png"))
        ]
        if not frames:
            raise ClipError(f"no mask frames under {tdir}")
        targets.append(Masklet(target_id=tid, masks=np.stack(frames)))
    return targets


def target_color(target_id: int) -> tuple[int, int, int]:
    return TARGET_PALETTE[target_id % len(TARGET_PALETTE)]


def blend_overlay(
    frame: np.ndarray, mask: np.ndarray, color: tuple[int, int, int], alpha: float
) -> np.ndarray:
    """Blend ``color`` over masked pixels: out = (1-alpha)*pixel + alpha*color."""
    out = frame.astype(np.float64)
    col = np.asarray(color, dtype=np.float64)
    out[mask] = (1.0 - alpha) * out[mask] + alpha * col
    return np.round(out).astype(np.uint8)


def _box_to_pixels(
    box: tuple[float, float, float, float], width: int, height: int
) -> tuple[int, int, int, int]:
    x1, y1, x2, y2 = box
    return (
        int(round(x1 * (width - 1))),
        int(round(y1 * (height - 1))),
        int(round(x2 * (width - 1))),
        int(round(y2 * (height - 1))),
    )


def draw_boxes(
    image: np.ndarray,
    boxes: list[tuple[float, float, float, float]],
    labels: list[str] | None = None,
    width: int = 2,
) -> np.ndarray:
    """Return a copy of ``image`` with normalized boxes outlined and labelled."""
    img = Image.fromarray(np.asarray(image, dtype=np.uint8).copy())
    draw = ImageDraw.Draw(img)
    font = ImageFont.load_default()
    h, w = image.shape[:2]
    for i, box in enumerate(boxes):
        color = target_color(i)
        px = _box_to_pixels(box, w, h)
        draw.rectangle(px, outline=color, width=width)
        label = labels[i] if labels else str(i)
        draw.text((px[0] + width + 1, px[1] + width + 1), label, fill=color, font=font)
    return np.asarray(img)


def render_overlay(
    clip: VideoClip,
    targets: list[Masklet],
    out_dir: str | Path,
    boxes: list[tuple[float, float, float, float]] | None = None,
    alpha: float = 0.5,
) -> list[Path]:
    """Write per-frame overlay composites; returns the image paths.

    Pixels outside mask and box regions are copied unmodified; colors are
    assigned deterministically by target_id.
    """
    _check_masklets(clip, targets)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(clip.frame_count):
        frame = clip.frame(i).copy()
        for m in targets:
            frame = blend_overlay(frame, m.masks[i], target_color(m.target_id), alpha)
        if boxes:
            frame = draw_boxes(frame, boxes, labels=[str(m.target_id) for m in targets])
        path = out_dir / f"{i:05d}.png"
        path.write_bytes(png_bytes(frame))
        paths.append(path)
    return paths
