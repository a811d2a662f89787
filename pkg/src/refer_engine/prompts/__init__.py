"""Prompt templates, stored as external text files.

Templates live in ``templates/`` next to this module and use
``str.format`` placeholders. An override directory (config
``pipeline.prompts_dir``) lets deployments drop in their own wording
without code changes; file names must match the built-in set.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

_override_dir: Path | None = None


def set_prompts_dir(path: str | Path | None) -> None:
    global _override_dir
    _override_dir = Path(path) if path else None


def load_template(name: str) -> str:
    if _override_dir is not None:
        candidate = _override_dir / f"{name}.txt"
        if candidate.exists():
            return candidate.read_text()
    ref = resources.files(__package__) / "templates" / f"{name}.txt"
    return ref.read_text()


def render_prompt(name: str, **fields) -> str:
    return load_template(name).format(**fields)
