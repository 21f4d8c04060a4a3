#!/usr/bin/env python3
"""Regenerate the pinned golden traces used by the acceptance suite.

Run this only when an intentional behavior change invalidates the pinned
references; commit the regenerated files together with the change that
caused them. The acceptance tests compare freshly produced traces byte for
byte against these files to catch numeric drift.
"""

import json
import sys
from collections import Counter
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from asap.driver import RunConfig, run, run_baseline
from asap.environment import make_aligned_suite
from asap.rewards import AlphaSchedule

GOLDEN_DIR = Path(__file__).resolve().parents[1] / "tests" / "golden"

# Reference alignment-preference scenario: 8 arms, one aligned at cosine
# 0.9, curvature matched to the 500-turn horizon so training stays ongoing.
SCENARIO = dict(dim=8, num_aux=8, aligned_index=3, alignment_cos=0.9, seed=0,
                learning_rate=0.05, curvature=0.15)
HORIZON = 500
BETA = 0.1


def build_config(trace_path, seed=0):
    env, cert = make_aligned_suite(**SCENARIO)
    return RunConfig(
        horizon=HORIZON,
        environment=env,
        beta=BETA,
        alpha_schedule=AlphaSchedule(kind="linear", alpha0=0.5, alpha_min=0.0),
        seed=seed,
        trace_path=trace_path,
    ), cert


def main() -> int:
    GOLDEN_DIR.mkdir(parents=True, exist_ok=True)

    cfg, cert = build_config(GOLDEN_DIR / "aligned_d8_k8.csv")
    trace = run(cfg)

    cfg_u, _ = build_config(GOLDEN_DIR / "aligned_d8_k8_uniform.csv")
    trace_u = run_baseline(cfg_u, "uniform_random")

    counts = Counter(r.selected for r in trace.records)
    aligned = SCENARIO["aligned_index"]
    play_ratio = counts[aligned] / max(v for k, v in counts.items() if k != aligned)
    loss_ratio = (
        trace.records[-1].target_loss_after_step
        / trace_u.records[-1].target_loss_after_step
    )
    summary = {
        "scenario": SCENARIO,
        "horizon": HORIZON,
        "beta": BETA,
        "aligned_play_count": counts[aligned],
        "max_other_play_count": max(v for k, v in counts.items() if k != aligned),
        "play_ratio": play_ratio,
        "final_target_loss": trace.records[-1].target_loss_after_step,
        "uniform_final_target_loss": trace_u.records[-1].target_loss_after_step,
        "loss_ratio": loss_ratio,
        "config_digest": trace.config_digest,
    }
    (GOLDEN_DIR / "aligned_d8_k8_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    print(f"play ratio {play_ratio:.3f}, loss ratio {loss_ratio:.4f}")
    print(f"golden files written to {GOLDEN_DIR}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
