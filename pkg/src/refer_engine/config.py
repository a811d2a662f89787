"""Engine configuration: dataclass sections loadable from TOML or JSON."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

MERGE_MODES = ("none", "select+intent", "intent+ground", "all")
LAYOUT_MODES = ("focus", "single_keyframe", "uniform_grid")


@dataclass
class SelectionConfig:
    n: int = 10
    k: int = 5
    alpha: float = 0.3
    beta: float = 0.7


@dataclass
class LayoutConfig:
    cell_w: int = 224
    cell_h: int = 224
    label_frames: bool = True
    mode: str = "focus"
    dump_canvas: bool = False

    def __post_init__(self):
        if self.mode not in LAYOUT_MODES:
            raise ValueError(f"layout.mode must be one of {LAYOUT_MODES}")


@dataclass
class AgentsConfig:
    max_targets: int = 8


@dataclass
class ReflectionConfig:
    existence_enabled: bool = True
    consistency_enabled: bool = True
    fail_threshold: float = 0.30


@dataclass
class PipelineConfig:
    max_turn: int = 4
    merge: str = "none"
    prompts_dir: str | None = None

    def __post_init__(self):
        if self.merge not in MERGE_MODES:
            raise ValueError(f"pipeline.merge must be one of {MERGE_MODES}")
        if self.max_turn < 0:
            raise ValueError("pipeline.max_turn must be >= 0")


@dataclass
class BackendsConfig:
    chat_url: str | None = None
    similarity_url: str | None = None
    segment_url: str | None = None
    mock_scenario: str | None = None
    bearer_token: str | None = None
    retry_attempts: int = 3
    backoff_base: float = 0.5
    max_image_bytes: int = 8 * 1024 * 1024


@dataclass
class MetricsConfig:
    boundary_tolerance: int | None = None  # None -> round(0.008 * diagonal)


@dataclass
class EngineConfig:
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    layout: LayoutConfig = field(default_factory=LayoutConfig)
    agents: AgentsConfig = field(default_factory=AgentsConfig)
    reflection: ReflectionConfig = field(default_factory=ReflectionConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    backends: BackendsConfig = field(default_factory=BackendsConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {
    "selection": SelectionConfig,
    "layout": LayoutConfig,
    "agents": AgentsConfig,
    "reflection": ReflectionConfig,
    "pipeline": PipelineConfig,
    "backends": BackendsConfig,
    "metrics": MetricsConfig,
}


def config_from_dict(data: dict) -> EngineConfig:
    kwargs = {}
    for name, cls in _SECTIONS.items():
        section = data.get(name, {})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(section) - known
        if unknown:
            raise ValueError(f"unknown keys in [{name}]: {sorted(unknown)}")
        kwargs[name] = cls(**section)
    unknown_sections = set(data) - set(_SECTIONS)
    if unknown_sections:
        raise ValueError(f"unknown config sections: {sorted(unknown_sections)}")
    return EngineConfig(**kwargs)


def load_config(path: str | Path) -> EngineConfig:
    """Load an EngineConfig from a .toml or .json file."""
    path = Path(path)
    if path.suffix == ".toml":
        data = tomllib.loads(path.read_text())
    elif path.suffix == ".json":
        data = json.loads(path.read_text())
    else:
        raise ValueError(f"config must be .toml or .json, got {path.suffix!r}")
    return config_from_dict(data)
