#!/usr/bin/env python3
"""Run the full stress suite from a config and write CSV + markdown report.

Usage:
    python scripts/run_suite.py [--config configs/default_suite.json] [--out results]
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from guardlab.cli import main  # noqa: E402


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default="configs/default_suite.json")
    parser.add_argument("--out", default=None)
    parser.add_argument("--quiet", action="store_true")
    args = parser.parse_args()
    argv = ["--config", args.config]
    if args.out:
        argv += ["--out", args.out]
    if args.quiet:
        argv.append("--quiet")
    argv.append("suite")
    raise SystemExit(main(argv))
