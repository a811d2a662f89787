"""Segmentation quality metrics: region similarity J (mean IoU), contour
accuracy F (boundary F-measure), and their mean J&F.

Conventions follow standard video-segmentation benchmark tooling: frames
where both masks are empty score 1.0, one-sided-empty frames score 0.0
(J) / 0 via empty precision-recall (F). Boundaries are a mask XOR its
4-connected erosion; boundary matching uses a Euclidean disk of the
tolerance radius, default round(0.008 * image diagonal).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import binary_dilation, binary_erosion
from scipy.optimize import linear_sum_assignment

from .clips import Masklet


@dataclass(frozen=True)
class TargetScore:
    gt_target_id: int
    pred_target_id: int | None
    j: float
    f: float


@dataclass(frozen=True)
class EvalResult:
    j: float
    f: float
    jf: float
    per_target: tuple[TargetScore, ...] = ()
    per_frame: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if not math.isclose(self.jf, (self.j + self.f) / 2.0, abs_tol=1e-12):
            raise ValueError("jf must equal (j + f) / 2")


def _check_shapes(pred: Masklet, gt: Masklet) -> None:
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")


def frame_iou(pred: np.ndarray, gt: np.ndarray) -> float:
    p = pred.astype(bool)
    g = gt.astype(bool)
    union = np.count_nonzero(p | g)
    if union == 0:
        return 1.0
    return np.count_nonzero(p & g) / union


def region_j(pred: Masklet, gt: Masklet) -> float:
    """Mean IoU over frames; both-empty frames contribute 1.0."""
    _check_shapes(pred, gt)
    return float(
        np.mean([frame_iou(pred.masks[t], gt.masks[t]) for t in range(pred.frame_count)])
    )


def mask_boundary(mask: np.ndarray) -> np.ndarray:
    """1-px boundary: the mask minus its 4-connected erosion.

    Out-of-bounds neighbors count as background, so masks touching the
    image border keep their border pixels as boundary.
    """
    mask = mask.astype(bool)
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
    eroded = binary_erosion(mask, structure=structure, border_value=0)
    return mask & ~eroded


def _disk(radius: int) -> np.ndarray:
    if radius <= 0:
        return np.ones((1, 1), dtype=bool)
    span = np.arange(-radius, radius + 1)
    yy, xx = np.meshgrid(span, span, indexing="ij")
    return (yy * yy + xx * xx) <= radius * radius


def default_tolerance(height: int, width: int) -> int:
    return int(round(0.008 * math.hypot(height, width)))


def frame_boundary_f(pred: np.ndarray, gt: np.ndarray, tolerance_px: int) -> float:
    p = pred.astype(bool)
    g = gt.astype(bool)
    if not p.any() and not g.any():
        return 1.0
    pb = mask_boundary(p)
    gb = mask_boundary(g)
    disk = _disk(tolerance_px)
    gb_zone = binary_dilation(gb, structure=disk) if gb.any() else np.zeros_like(gb)
    pb_zone = binary_dilation(pb, structure=disk) if pb.any() else np.zeros_like(pb)
    n_pred = np.count_nonzero(pb)
    n_gt = np.count_nonzero(gb)
    precision = np.count_nonzero(pb & gb_zone) / n_pred if n_pred else 0.0
    recall = np.count_nonzero(gb & pb_zone) / n_gt if n_gt else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def boundary_f(pred: Masklet, gt: Masklet, tolerance_px: int | None = None) -> float:
    """Mean boundary F-measure over frames."""
    _check_shapes(pred, gt)
    if tolerance_px is None:
        tolerance_px = default_tolerance(pred.shape[1], pred.shape[2])
    if tolerance_px < 0:
        raise ValueError("tolerance must be >= 0")
    return float(
        np.mean(
            [
                frame_boundary_f(pred.masks[t], gt.masks[t], tolerance_px)
                for t in range(pred.frame_count)
            ]
        )
    )


def _assign(preds: list[Masklet], gts: list[Masklet]) -> list[int | None]:
    """Optimal one-to-one assignment of predictions to GT targets,
    maximizing summed per-pair J. Returns pred index per GT (or None)."""
    if not preds:
        return [None] * len(gts)
    j_matrix = np.array([[region_j(p, g) for p in preds] for g in gts])
    rows, cols = linear_sum_assignment(-j_matrix)
    mapping: list[int | None] = [None] * len(gts)
    for r, c in zip(rows, cols):
        mapping[r] = int(c)
    return mapping


def evaluate(
    preds: list[Masklet],
    gts: list[Masklet],
    tolerance_px: int | None = None,
) -> EvalResult:
    """Score predictions against GT with multi-target assignment.

    Unmatched GT targets score 0; j/f/jf are averaged over GT targets.
    """
    if not gts:
        raise ValueError("need at least one ground-truth masklet")
    mapping = _assign(preds, gts)
    per_target = []
    for gi, (gt, pi) in enumerate(zip(gts, mapping)):
        if pi is None:
            per_target.append(
                TargetScore(gt_target_id=gt.target_id, pred_target_id=None, j=0.0, f=0.0)
            )
        else:
            pred = preds[pi]
            per_target.append(
                TargetScore(
                    gt_target_id=gt.target_id,
                    pred_target_id=pred.target_id,
                    j=region_j(pred, gt),
                    f=boundary_f(pred, gt, tolerance_px),
                )
            )
    j = float(np.mean([t.j for t in per_target]))
    f = float(np.mean([t.f for t in per_target]))
    return EvalResult(j=j, f=f, jf=(j + f) / 2.0, per_target=tuple(per_target))


# ---------------------------------------------------------------------------
# Ground-truth loading: DAVIS-style directories. Two layouts are accepted:
# per-target subdirectories (target_<id>/<frame:05>.png, values {0,255}) or
# flat indexed PNGs where each distinct nonzero value is one target.


def load_gt_masklets(gt_dir: str | Path) -> list[Masklet]:
    gt_dir = Path(gt_dir)
    if not gt_dir.is_dir():
        raise ValueError(f"not a directory: {gt_dir}")
    subdirs = sorted(gt_dir.glob("target_*"))
    if subdirs:
        from .clips import read_masklets_png

        return read_masklets_png(gt_dir)
    files = sorted(gt_dir.glob("*.png"))
    if not files:
        raise ValueError(f"no GT masks under {gt_dir}")
    frames = []
    for f in files:
        with Image.open(f) as img:
            if img.mode == "P":
                frames.append(np.asarray(img, dtype=np.int32))
            else:
                frames.append(np.asarray(img.convert("L"), dtype=np.int32))
    stack = np.stack(frames)
    values = sorted(int(v) for v in np.unique(stack) if v != 0)
    if not values:
        # A GT with no labelled pixels still defines one all-empty target.
        return [Masklet(target_id=0, masks=np.zeros_like(stack, dtype=bool))]
    return [Masklet(target_id=i, masks=stack == v) for i, v in enumerate(values)]


# ---------------------------------------------------------------------------
# Batch report output


@dataclass
class SampleReport:
    sample_id: str
    accepted: bool | None = None
    rounds_used: int | None = None
    j: float | None = None
    f: float | None = None
    jf: float | None = None
    error: str | None = None
    extra: dict = field(default_factory=dict)


def write_reports(samples: list[SampleReport], out_dir: str | Path) -> tuple[Path, Path]:
    """Write report.json and report.csv with per-sample rows and means."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scored = [s for s in samples if s.jf is not None]
    aggregate = {
        "samples": len(samples),
        "scored": len(scored),
        "errors": sum(1 for s in samples if s.error),
        "mean_j": float(np.mean([s.j for s in scored])) if scored else None,
        "mean_f": float(np.mean([s.f for s in scored])) if scored else None,
        "mean_jf": float(np.mean([s.jf for s in scored])) if scored else None,
    }
    json_path = out_dir / "report.json"
    json_path.write_text(
        json.dumps(
            {
                "schema": "batch-report/1",
                "aggregate": aggregate,
                "samples": [
                    {
                        "id": s.sample_id,
                        "accepted": s.accepted,
                        "rounds_used": s.rounds_used,
                        "J": s.j,
                        "F": s.f,
                        "J&F": s.jf,
                        "error": s.error,
                        **s.extra,
                    }
                    for s in samples
                ],
            },
            indent=2,
        )
    )
    csv_path = out_dir / "report.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "accepted", "rounds_used", "J", "F", "J&F", "error"])
        for s in samples:
            writer.writerow(
                [s.sample_id, s.accepted, s.rounds_used, s.j, s.f, s.jf, s.error or ""]
            )
        writer.writerow(
            ["MEAN", "", "", aggregate["mean_j"], aggregate["mean_f"], aggregate["mean_jf"], ""]
        )
    return json_path, csv_path
