"""Adapter configuration."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path


@dataclass
class AdapterConfig:
    """Which model backs each capability; "stub" enables the built-in
    deterministic stand-in, None disables the endpoint entirely."""

    chat_model: str | None = "stub"
    similarity_model: str | None = "stub"
    segment_model: str | None = "stub"
    device: str = "cpu"
    max_image_bytes: int = 8 * 1024 * 1024
    port: int = 8080
    bearer_token: str | None = None


def load_adapter_config(path: str | Path) -> AdapterConfig:
    data = json.loads(Path(path).read_text())
    return AdapterConfig(**data)
