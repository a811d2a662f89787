#!/usr/bin/env python3
"""Trace the reasoning-reflection loop on the correction fixtures: shows
which stage failed, the feedback it produced, and how the next round
changed. Good for eyeballing the loop without reading transcripts.
"""

from __future__ import annotations

import argparse

from refer_engine.config import EngineConfig
from refer_engine.fixtures import generate_scenario
from refer_engine.metrics import evaluate
from refer_engine.orchestrator import run_session


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=2)
    args = parser.parse_args()

    for template in ("keyframe_correction", "consistency_correction"):
        scenario = generate_scenario(args.seed, template)
        cfg = EngineConfig()
        cfg.backends.backoff_base = 0.0
        result = run_session(scenario.clip, scenario.query, cfg, scenario.backend())
        scores = evaluate(result.masklets, scenario.gt_masklets)
        print(f"=== {template} (seed {args.seed}) ===")
        print(f"query: {scenario.query!r}")
        for record in result.history:
            print(f"\nround {record.round}:")
            if record.selection:
                print(f"  selected {list(record.selection.selected)}, "
                      f"keyframe {record.selection.keyframe_index}")
            if record.expressions:
                exprs = [(e.expression, e.revision) for e in record.expressions]
                print(f"  expressions: {exprs}")
            for chain in (record.existence, record.consistency):
                if chain is None:
                    continue
                print(f"  {chain.stage}: {chain.verdict}")
                if chain.feedback:
                    print(f"    feedback -> {chain.feedback}")
        print(f"\nstatus={result.status} rounds={result.rounds_used} J&F={scores.jf:.3f}\n")


if __name__ == "__main__":
    main()
