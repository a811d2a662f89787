from __future__ import annotations

import numpy as np
import pytest

from refer_engine.backend.client import RetryPolicy
from refer_engine.backend.mock import MOCK_SCENARIO_SCHEMA, MockBackend
from refer_engine.backend.wire import masklet_to_wire
from refer_engine.clips import Masklet, VideoClip

NO_BACKOFF = RetryPolicy(attempts=3, backoff_base=0.0)


def make_backend(entries, gt_masklets=None, meta=None) -> MockBackend:
    document = {
        "schema": MOCK_SCENARIO_SCHEMA,
        "entries": entries,
        "meta": meta or {},
    }
    if gt_masklets is not None:
        document["gt"] = {"masklets": [masklet_to_wire(m) for m in gt_masklets]}
    return MockBackend(document)


def make_clip(t=4, h=32, w=32, seed=0) -> VideoClip:
    rng = np.random.default_rng(seed)
    frames = rng.integers(0, 256, size=(t, h, w, 3), dtype=np.uint8)
    return VideoClip(frames=frames, source_id=f"test/{seed}")


def make_masklet(target_id, masks) -> Masklet:
    return Masklet(target_id=target_id, masks=np.asarray(masks, dtype=bool))


@pytest.fixture
def retry():
    return NO_BACKOFF
