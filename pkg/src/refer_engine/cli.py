"""Command-line entry points: run one session, evaluate a manifest, or
generate a synthetic fixture."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import click

from .clips import load_clip, render_overlay, write_masklets
from .config import EngineConfig, load_config
from .fixtures import TEMPLATES, generate_scenario, write_scenario
from .orchestrator import _build_backend, run_batch, run_session

logger = logging.getLogger(__name__)


@click.group()
@click.option("--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


def _load_config(config_path: str | None) -> EngineConfig:
    return load_config(config_path) if config_path else EngineConfig()


@main.command()
@click.option("--video", "video_path", required=True, type=click.Path(exists=True))
@click.option("--query", required=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--max-turn", type=int, default=None, help="Override pipeline.max_turn.")
@click.option("--max-frames", type=int, default=None)
@click.option("--dump-reflection", is_flag=True)
@click.option("--overlay/--no-overlay", default=True, help="Write overlay renders.")
def run(video_path, query, out_dir, config_path, max_turn, max_frames, dump_reflection, overlay):
    """Segment the objects QUERY refers to across the video at --video."""
    config = _load_config(config_path)
    if max_turn is not None:
        config.pipeline.max_turn = max_turn
    clip = load_clip(video_path, max_frames=max_frames)
    backend = _build_backend(config)
    result = run_session(
        clip, query, config, backend, out_dir=out_dir, dump_reflection=dump_reflection
    )
    out = Path(out_dir)
    if result.masklets:
        write_masklets(clip, result.masklets, out / "masks", "png-per-frame")
        write_masklets(clip, result.masklets, out / "masks_rle", "rle-json")
        if overlay:
            boxes = [t.box for t in result.final_round_record.targets]
            render_overlay(clip, result.masklets, out / "overlays", boxes=boxes)
    click.echo(
        json.dumps(
            {
                "accepted": result.accepted,
                "status": result.status,
                "rounds_used": result.rounds_used,
                "targets": len(result.masklets),
                "transcript": str(result.transcript_path),
            },
            indent=2,
        )
    )


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--parallel", type=int, default=1)
@click.option("--write-masks", is_flag=True)
def eval(manifest_path, out_dir, config_path, parallel, write_masks):
    """Run every manifest sample and aggregate J / F / J&F."""
    config = _load_config(config_path)
    reports = run_batch(
        manifest_path, config, out_dir, parallelism=parallel, write_masks=write_masks
    )
    scored = [r for r in reports if r.jf is not None]
    mean_jf = sum(r.jf for r in scored) / len(scored) if scored else None
    click.echo(
        json.dumps(
            {
                "samples": len(reports),
                "errors": sum(1 for r in reports if r.error),
                "mean_jf": mean_jf,
                "report": str(Path(out_dir) / "report.json"),
            },
            indent=2,
        )
    )


@main.command("gen-fixture")
@click.option("--template", required=True, type=click.Choice(TEMPLATES))
@click.option("--seed", required=True, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path())
def gen_fixture(template, seed, out_dir):
    """Generate frames/, gt/, and scenario.json for a synthetic scenario."""
    scenario = generate_scenario(seed, template)
    manifest = write_scenario(scenario, out_dir)
    click.echo(
        json.dumps(
            {
                "template": template,
                "seed": seed,
                "query": scenario.query,
                "frames": scenario.clip.frame_count,
                "targets": len(scenario.gt_masklets),
                "manifest": str(manifest),
            },
            indent=2,
        )
    )


if __name__ == "__main__":
    main()
