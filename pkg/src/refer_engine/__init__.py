"""Backend-agnostic engine for text-guided video object segmentation.

The pipeline selects query-relevant frames coarse-to-fine, composes a
focus canvas, reasons out per-target expressions, grounds them as boxes,
verifies intermediate results with a two-stage reflection loop, and
prompts a video segmentation backend once with the final keyframe and
boxes. All model capabilities sit behind a small HTTP/JSON protocol with
deterministic scripted mocks for model-free testing.
"""

from .clips import Masklet, VideoClip, load_clip, render_overlay, write_masklets
from .config import EngineConfig, load_config
from .metrics import EvalResult, boundary_f, evaluate, region_j
from .orchestrator import SessionResult, run_batch, run_session
from .selection import FrameScore, FrameSelection

__version__ = "0.1.0"

__all__ = [
    "EngineConfig",
    "EvalResult",
    "FrameScore",
    "FrameSelection",
    "Masklet",
    "SessionResult",
    "VideoClip",
    "boundary_f",
    "evaluate",
    "load_clip",
    "load_config",
    "region_j",
    "render_overlay",
    "run_batch",
    "run_session",
    "write_masklets",
    "__version__",
]
