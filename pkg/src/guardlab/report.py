"""Suite CSV and markdown report rendering.

The CSV is the source of truth: the markdown is rendered from CSV rows
alone (4-decimal formatting), so a report can be regenerated from existing
results without re-running anything.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Sequence

from .harness import ComparisonRow, DEGRADATION_FACTOR, RunResult, seed_stats

__all__ = [
    "CSV_COLUMNS",
    "rows_to_csv_dicts",
    "write_suite_csv",
    "read_suite_csv",
    "render_report",
    "render_report_from_csv",
    "verdict",
    "result_csv_row",
]

CSV_COLUMNS = (
    "scenario",
    "arm",
    "seed",
    "initial_loss",
    "final_loss",
    "final_ppl",
    "wall_s",
    "active_steps",
    "regime_switches",
    "control_energy",
)


def verdict(final_loss: float, initial_loss: float) -> str:
    if not math.isfinite(final_loss) or final_loss > DEGRADATION_FACTOR * initial_loss:
        return "severe degradation"
    if final_loss < initial_loss:
        return "trainable"
    return "stagnant"


def result_csv_row(scenario: str, arm: str, res: RunResult) -> Dict[str, object]:
    return {
        "scenario": scenario,
        "arm": arm,
        "seed": res.seed,
        "initial_loss": res.initial_loss,
        "final_loss": res.final_loss,
        "final_ppl": res.final_perplexity,
        "wall_s": res.wall_seconds,
        "active_steps": res.summary.control_active_steps,
        "regime_switches": res.summary.regime_switches,
        "control_energy": res.summary.control_energy,
    }


def rows_to_csv_dicts(rows: Sequence[ComparisonRow]) -> List[Dict[str, object]]:
    out: List[Dict[str, object]] = []
    for row in rows:
        if row.error is not None:
            out.append(
                {
                    "scenario": row.scenario,
                    "arm": "error",
                    "seed": row.seed,
                    "initial_loss": math.nan,
                    "final_loss": math.nan,
                    "final_ppl": math.nan,
                    "wall_s": math.nan,
                    "active_steps": 0,
                    "regime_switches": 0,
                    "control_energy": math.nan,
                }
            )
            continue
        out.append(result_csv_row(row.scenario, "baseline", row.baseline))
        out.append(result_csv_row(row.scenario, "guard", row.guarded))
    return out


def write_suite_csv(rows: Sequence[ComparisonRow], path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(CSV_COLUMNS))
        writer.writeheader()
        for d in rows_to_csv_dicts(rows):
            writer.writerow(d)


def read_suite_csv(path: Path) -> List[Dict[str, object]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != CSV_COLUMNS:
            raise ValueError(f"unexpected suite CSV columns in {path}")
        out = []
        for raw in reader:
            out.append(
                {
                    "scenario": raw["scenario"],
                    "arm": raw["arm"],
                    "seed": int(raw["seed"]),
                    "initial_loss": float(raw["initial_loss"]),
                    "final_loss": float(raw["final_loss"]),
                    "final_ppl": float(raw["final_ppl"]),
                    "wall_s": float(raw["wall_s"]),
                    "active_steps": int(raw["active_steps"]),
                    "regime_switches": int(raw["regime_switches"]),
                    "control_energy": float(raw["control_energy"]),
                }
            )
        return out


def _f(x: float) -> str:
    return f"{x:.4f}"


def render_report_from_csv(csv_rows: Sequence[Dict[str, object]]) -> str:
    """Markdown report: per-scenario comparison tables plus seed aggregates."""
    if not csv_rows:
        raise ValueError("report requires at least one row")
    by_scenario: Dict[str, Dict[int, Dict[str, dict]]] = defaultdict(lambda: defaultdict(dict))
    for row in csv_rows:
        by_scenario[str(row["scenario"])][int(row["seed"])][str(row["arm"])] = row

    lines = ["# Stress suite report", ""]
    for scenario in sorted(by_scenario):
        lines.append(f"## {scenario}")
        lines.append("")
        lines.append(
            "| seed | baseline PPL | guard PPL | PPL reduction | E2E speedup |"
            " baseline verdict | guard verdict |"
        )
        lines.append("|---|---|---|---|---|---|---|")
        per_arm: Dict[str, List[float]] = defaultdict(list)
        for seed in sorted(by_scenario[scenario]):
            arms = by_scenario[scenario][seed]
            if "error" in arms:
                lines.append(f"| {seed} | run error | | | | | |")
                continue
            base, guard = arms["baseline"], arms["guard"]
            b_ppl, g_ppl = float(base["final_ppl"]), float(guard["final_ppl"])
            if math.isfinite(b_ppl) and b_ppl > 0:
                reduction = f"{100.0 * (1.0 - g_ppl / b_ppl):.1f}%"
            else:
                reduction = "n/a"
            g_wall = float(guard["wall_s"])
            speedup = _f(float(base["wall_s"]) / g_wall) + "x" if g_wall > 0 else "n/a"
            lines.append(
                f"| {seed} | {_f(b_ppl)} | {_f(g_ppl)} | {reduction} | {speedup} | "
                f"{verdict(float(base['final_loss']), float(base['initial_loss']))} | "
                f"{verdict(float(guard['final_loss']), float(guard['initial_loss']))} |"
            )
            per_arm["baseline"].append(b_ppl)
            per_arm["guard"].append(g_ppl)
        lines.append("")
        for arm in ("baseline", "guard"):
            if per_arm[arm]:
                mean, std = seed_stats(per_arm[arm])
                lines.append(
                    f"- {arm} final PPL across seeds: {_f(mean)} ± {_f(std)}"
                    f" (n={len(per_arm[arm])})"
                )
        lines.append("")
    return "\n".join(lines)


def render_report(rows: Sequence[ComparisonRow]) -> str:
    return render_report_from_csv(rows_to_csv_dicts(rows))
