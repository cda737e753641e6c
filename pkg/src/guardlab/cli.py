"""Command-line surface: run, suite, calibrate, report."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Optional

from .config import ConfigError, SuiteConfig, emit_config, expand_scenarios, parse_config
from .governor import GuardConfig
from .harness import RunConfig, calibrate_divergence_lr, run_suite, run_training
from .optim import ClipConfig
from .report import (
    CSV_COLUMNS,
    read_suite_csv,
    render_report_from_csv,
    result_csv_row,
    write_suite_csv,
)

__all__ = ["main"]


class CliError(RuntimeError):
    pass


def _load_config(args) -> SuiteConfig:
    if not args.config:
        raise CliError("--config PATH is required for this subcommand")
    path = Path(args.config)
    if not path.exists():
        raise CliError(f"config file not found: {path}")
    return parse_config(path)


def _out_dir(args, cfg: Optional[SuiteConfig]) -> Path:
    if args.out:
        return Path(args.out)
    if cfg is not None:
        return Path(cfg.out_dir)
    raise CliError("--out DIR is required")


def _echo_config(cfg: SuiteConfig, out: Path, quiet: bool) -> None:
    out.mkdir(parents=True, exist_ok=True)
    echo_path = out / "config_echo.json"
    with open(echo_path, "w", encoding="utf-8") as fh:
        json.dump(emit_config(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if not quiet:
        print(f"configuration (defaults applied) echoed to {echo_path}")


def _run_config_from_section(cfg: SuiteConfig, seed_override: Optional[int]) -> RunConfig:
    section = cfg.run
    if not section:
        raise CliError("config has no 'run' section for the run subcommand")
    allowed = ("task", "arm", "lr", "steps", "batch_size", "eval_every", "clip_g", "label")
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in section 'run'")
    task_name = section.get("task")
    if task_name not in cfg.tasks:
        raise ConfigError(f"run.task references unknown task {task_name!r}")
    arm = section.get("arm", "guard")
    if arm not in ("guard", "baseline"):
        raise ConfigError("run.arm must be 'guard' or 'baseline'")
    import dataclasses

    opt = cfg.optimizer
    if "lr" in section:
        opt = dataclasses.replace(opt, lr=float(section["lr"]))
    clip = None
    if section.get("clip_g") is not None:
        clip = ClipConfig(g=float(section["clip_g"]))
    return RunConfig(
        task=cfg.tasks[task_name],
        opt=opt,
        schedule_kind=cfg.schedule_kind,
        min_lr=cfg.min_lr,
        guard=cfg.guard if arm == "guard" else None,
        baseline_marker=arm == "baseline",
        clip=clip,
        steps=int(section.get("steps", 1000)),
        batch_size=int(section.get("batch_size", 32)),
        eval_every=int(section.get("eval_every", 100)),
        seed=seed_override if seed_override is not None else cfg.seeds[0],
        label=str(section.get("label", f"run-{task_name}-{arm}")),
    )


def cmd_run(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    _echo_config(cfg, out, args.quiet)
    run_cfg = _run_config_from_section(cfg, args.seed)
    result = run_training(run_cfg, out_dir=out)
    csv_path = out / f"{run_cfg.label}_seed{result.seed}.csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(CSV_COLUMNS))
        writer.writeheader()
        writer.writerow(result_csv_row(run_cfg.label, "guard" if run_cfg.guard else "baseline", result))
    if not args.quiet:
        print(
            json.dumps(
                {
                    "label": run_cfg.label,
                    "seed": result.seed,
                    "final_loss": result.final_loss,
                    "final_perplexity": result.final_perplexity,
                    "control_active_steps": result.summary.control_active_steps,
                }
            )
        )
    return 0


def cmd_suite(args) -> int:
    cfg = _load_config(args)
    if not cfg.scenarios:
        raise CliError("config defines no scenarios")
    out = _out_dir(args, cfg)
    _echo_config(cfg, out, args.quiet)
    pairs = expand_scenarios(cfg)
    if not args.quiet:
        print(f"running {len(pairs)} comparison pairs")
    rows = run_suite(pairs, out_dir=out / "runs")
    csv_path = out / "suite.csv"
    write_suite_csv(rows, csv_path)
    report_path = out / "report.md"
    report_path.write_text(render_report_from_csv(read_suite_csv(csv_path)), encoding="utf-8")
    if not args.quiet:
        print(f"wrote {csv_path} and {report_path}")
    return 0


def cmd_calibrate(args) -> int:
    cfg = _load_config(args)
    if not cfg.tasks:
        raise CliError("config defines no tasks")
    task_name = args.task or next(iter(cfg.tasks))
    if task_name not in cfg.tasks:
        raise CliError(f"unknown task {task_name!r}")
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    lr = calibrate_divergence_lr(
        cfg.tasks[task_name],
        cfg.optimizer,
        seed=seed,
        schedule_kind=cfg.schedule_kind,
    )
    print(json.dumps({"task": task_name, "seed": seed, "degrading_lr": lr}))
    return 0


def cmd_report(args) -> int:
    out = _out_dir(args, None)
    csv_path = out / "suite.csv"
    if not csv_path.exists():
        raise CliError(f"no suite.csv found in {out}")
    report_path = out / "report.md"
    report_path.write_text(render_report_from_csv(read_suite_csv(csv_path)), encoding="utf-8")
    if not args.quiet:
        print(f"wrote {report_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="guardlab",
        description="Bounded training-control governance stress laboratory",
    )
    parser.add_argument("--config", metavar="PATH", help="suite configuration JSON")
    parser.add_argument("--out", metavar="DIR", help="output directory")
    parser.add_argument("--seed", type=int, metavar="N", help="seed override")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", help="execute the config's single-run section")
    sub.add_parser("suite", help="execute every scenario in the config")
    cal = sub.add_parser("calibrate", help="find the smallest degrading learning rate")
    cal.add_argument("--task", metavar="NAME", help="task name from the config")
    sub.add_parser("report", help="re-render the markdown report from an existing CSV")
    return parser


_COMMANDS = {
    "run": cmd_run,
    "suite": cmd_suite,
    "calibrate": cmd_calibrate,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (CliError, ConfigError, ValueError, RuntimeError, OSError) as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
