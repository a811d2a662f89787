#!/usr/bin/env python3
"""Run the ablation toggle matrix on a synthetic fixture and print a
results table: reflection stages on/off, reflection budget, agent
merging variants, and layout strategy alternatives.
"""

from __future__ import annotations

import argparse
import time

from refer_engine.config import EngineConfig
from refer_engine.fixtures import generate_scenario
from refer_engine.metrics import evaluate
from refer_engine.orchestrator import run_session

MATRIX = [
    ("full pipeline", {}),
    ("no existence stage", {"reflection.existence_enabled": False}),
    ("no consistency stage", {"reflection.consistency_enabled": False}),
    ("no reflection stages", {
        "reflection.existence_enabled": False,
        "reflection.consistency_enabled": False,
    }),
    ("max_turn=0", {"pipeline.max_turn": 0}),
    ("max_turn=2", {"pipeline.max_turn": 2}),
    ("max_turn=6", {"pipeline.max_turn": 6}),
    ("merge select+intent", {"pipeline.merge": "select+intent"}),
    ("merge intent+ground", {"pipeline.merge": "intent+ground"}),
    ("merge all", {"pipeline.merge": "all"}),
    ("layout single_keyframe", {"layout.mode": "single_keyframe"}),
    ("layout uniform_grid", {"layout.mode": "uniform_grid"}),
]


def build_config(tweaks: dict) -> EngineConfig:
    cfg = EngineConfig()
    cfg.backends.backoff_base = 0.0
    for dotted, value in tweaks.items():
        section, key = dotted.split(".")
        setattr(getattr(cfg, section), key, value)
    return cfg


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument(
        "--template", default="single_target",
        choices=["single_target", "multi_target", "keyframe_correction", "consistency_correction"],
    )
    args = parser.parse_args()

    scenario = generate_scenario(args.seed, args.template)
    print(f"fixture: {args.template} seed={args.seed} query={scenario.query!r}\n")
    header = f"{'variant':<26} {'rounds':>6} {'status':>10} {'J':>7} {'F':>7} {'J&F':>7} {'time':>7}"
    print(header)
    print("-" * len(header))
    for name, tweaks in MATRIX:
        start = time.perf_counter()
        result = run_session(
            scenario.clip, scenario.query, build_config(tweaks), scenario.backend()
        )
        elapsed = time.perf_counter() - start
        scores = evaluate(result.masklets, scenario.gt_masklets)
        print(
            f"{name:<26} {result.rounds_used:>6} {result.status:>10} "
            f"{scores.j:>7.3f} {scores.f:>7.3f} {scores.jf:>7.3f} {elapsed:>6.2f}s"
        )


if __name__ == "__main__":
    main()
