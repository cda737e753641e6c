#!/usr/bin/env python3
"""Calibrate the smallest run-degrading learning rate for each task kind.

Prints one JSON line per (task, seed) with the calibrated rate, plus the
aggressive/moderate/safe presets derived from the per-task maximum.

Usage:
    python scripts/calibrate_lr.py [--steps 1000] [--seeds 7 42 123]
"""

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from guardlab.config import MODERATE_BACKOFF, SAFE_BACKOFF  # noqa: E402
from guardlab.harness import TaskSpec, calibrate_divergence_lr  # noqa: E402


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=1000)
    parser.add_argument("--seeds", type=int, nargs="+", default=[7, 42, 123])
    parser.add_argument("--kinds", nargs="+",
                        default=["bigram_lm", "mlp_regression", "quadratic"])
    args = parser.parse_args()

    for kind in args.kinds:
        spec = TaskSpec(kind=kind, dims={})
        per_seed = {}
        for seed in args.seeds:
            try:
                per_seed[seed] = calibrate_divergence_lr(
                    spec, probe_steps=args.steps, seed=seed, criterion="final"
                )
            except RuntimeError as exc:
                per_seed[seed] = str(exc)
        rates = [v for v in per_seed.values() if isinstance(v, float)]
        presets = None
        if rates:
            aggressive = max(rates)
            presets = {
                "aggressive": aggressive,
                "moderate": aggressive / MODERATE_BACKOFF,
                "safe": aggressive / SAFE_BACKOFF,
            }
        print(json.dumps({"task": kind, "per_seed": per_seed, "presets": presets}))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
