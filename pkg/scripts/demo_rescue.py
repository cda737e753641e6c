#!/usr/bin/env python3
"""Side-by-side demo: baseline AdamW vs the guarded run at an aggressive lr.

Calibrates the smallest degrading learning rate on the bigram task, then runs
both arms and prints the eval traces so the rescue is visible step by step.

Usage:
    python scripts/demo_rescue.py [--seed 7] [--steps 1000]
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from guardlab.governor import GuardConfig  # noqa: E402
from guardlab.harness import (  # noqa: E402
    OptimizerConfig,
    RunConfig,
    TaskSpec,
    calibrate_divergence_lr,
    run_training,
)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--steps", type=int, default=1000)
    args = parser.parse_args()

    task = TaskSpec(kind="bigram_lm", dims={})
    lr = calibrate_divergence_lr(
        task, probe_steps=args.steps, seed=args.seed, criterion="final"
    )
    print(f"calibrated degrading lr: {lr:g}")

    results = {}
    for arm in ("baseline", "guard"):
        cfg = RunConfig(
            task=task,
            opt=OptimizerConfig(lr=lr),
            guard=GuardConfig() if arm == "guard" else None,
            baseline_marker=arm == "baseline",
            steps=args.steps,
            eval_every=max(1, args.steps // 10),
            seed=args.seed,
            label=arm,
        )
        results[arm] = run_training(cfg)

    print(f"{'step':>6} {'baseline loss':>14} {'guard loss':>11}")
    for (step, base_loss, _), (_, guard_loss, _) in zip(
        results["baseline"].eval_trace, results["guard"].eval_trace
    ):
        print(f"{step:>6} {base_loss:>14.4f} {guard_loss:>11.4f}")
    for arm, res in results.items():
        s = res.summary
        print(
            f"{arm}: initial {res.initial_loss:.4f} -> final {res.final_loss:.4f}, "
            f"control-active {s.control_active_steps}, skipped {s.skipped_steps}, "
            f"min scale {s.min_scale:.3f}, energy {s.control_energy:.2f}"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
