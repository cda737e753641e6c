"""Stress-test harness: run loop, divergence calibration, outlier injection,
and paired baseline-vs-guard suite execution.

Runs are deterministic in (config, seed) apart from wall-clock fields. Each
run carries its full step log, so telemetry summaries can be recomputed and
cross-checked from the raw records at any time.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .governor import Governor, GuardConfig, StepLog, TelemetrySummary
from .optim import (
    ClipConfig,
    OptimizerConfig,
    ScheduleConfig,
    ScheduleKind,
    guarded_step,
    init_optimizer_state,
    schedule_lr,
)
from .rngstream import StreamState, advance, generator
from .tasks import Batch, Task, evaluate, forward_backward, make_task, sample_batch

__all__ = [
    "TaskSpec",
    "InjectionSpec",
    "RunConfig",
    "RunResult",
    "ComparisonRow",
    "run_training",
    "calibrate_divergence_lr",
    "inject_outliers",
    "run_suite",
    "config_pair_diff",
    "severe_degradation",
]

# A run is severely degraded when its final eval loss is non-finite or more
# than twice its initial eval loss.
DEGRADATION_FACTOR = 2.0

_BATCH_STREAM = 0
_INJECT_STREAM = 1


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    dims: Dict = field(default_factory=dict)

    def build(self, seed: int) -> Task:
        return make_task(self.kind, dict(self.dims), seed)


@dataclass(frozen=True)
class InjectionSpec:
    """Deterministic outlier schedule: periodic and/or explicit step indices."""

    magnitude: float = 50.0
    period: Optional[int] = 100
    steps: Tuple[int, ...] = ()
    mode: str = "outlier_batch"

    def __post_init__(self):
        if self.magnitude < 1.0:
            raise ValueError("injection magnitude must be >= 1")
        if self.period is not None and self.period < 1:
            raise ValueError("injection period must be >= 1")
        if self.mode not in ("outlier_batch", "gradient_burst"):
            raise ValueError(f"unknown injection mode: {self.mode!r}")

    def scheduled(self, step: int) -> bool:
        if step in self.steps:
            return True
        return self.period is not None and step > 0 and step % self.period == 0


@dataclass(frozen=True)
class RunConfig:
    task: TaskSpec
    opt: OptimizerConfig = OptimizerConfig()
    schedule_kind: ScheduleKind = ScheduleKind.COSINE
    min_lr: float = 0.0
    guard: Optional[GuardConfig] = None
    baseline_marker: bool = False
    clip: Optional[ClipConfig] = None
    steps: int = 1000
    batch_size: int = 32
    eval_every: int = 100
    seed: int = 7
    injection: Optional[InjectionSpec] = None
    label: str = "run"

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.eval_every < 1 or self.eval_every > self.steps:
            raise ValueError("eval_every must lie in [1, steps]")
        if self.baseline_marker and self.guard is not None and self.guard.auto_enabled:
            raise ValueError("config conflict: baseline marker with an enabled guard")
        if self.injection is not None:
            bad = [s for s in self.injection.steps if not 0 <= s < self.steps]
            if bad:
                raise ValueError(f"injection steps outside [0, steps): {bad}")

    def schedule(self) -> ScheduleConfig:
        return ScheduleConfig(
            base_lr=self.opt.lr,
            total_steps=self.steps,
            min_lr=self.min_lr,
            kind=self.schedule_kind,
        )

    def guard_or_disabled(self) -> GuardConfig:
        if self.guard is not None:
            return self.guard
        return GuardConfig(auto_enabled=False)


@dataclass
class RunResult:
    label: str
    seed: int
    initial_loss: float
    final_loss: float
    final_perplexity: float
    wall_seconds: float
    steps_per_second: float
    summary: TelemetrySummary
    eval_trace: List[Tuple[int, float, float]]
    log: StepLog
    params: np.ndarray


@dataclass
class ComparisonRow:
    scenario: str
    seed: int
    baseline: Optional[RunResult]
    guarded: Optional[RunResult]
    ppl_reduction: float = math.nan
    e2e_speedup: float = math.nan
    error: Optional[str] = None

    def derive(self) -> "ComparisonRow":
        if self.baseline is None or self.guarded is None:
            return self
        b, g = self.baseline, self.guarded
        if b.final_perplexity > 0 and math.isfinite(b.final_perplexity):
            self.ppl_reduction = 1.0 - g.final_perplexity / b.final_perplexity
        elif math.isinf(b.final_perplexity) and math.isfinite(g.final_perplexity):
            self.ppl_reduction = 1.0
        if g.wall_seconds > 0:
            self.e2e_speedup = b.wall_seconds / g.wall_seconds
        return self


def inject_outliers(
    batch: Batch, spec: InjectionSpec, step: int, rng_state: StreamState
) -> Tuple[Batch, StreamState]:
    """Flag and rescale scheduled batches; off-schedule batches pass through.

    outlier_batch scales the targets before the forward pass; gradient_burst
    only flags the batch, and the run loop scales the gradient after the
    clipping stage (a corruption magnitude clipping cannot remove).
    """
    if not spec.scheduled(step):
        return batch, rng_state
    if spec.mode == "outlier_batch":
        if np.issubdtype(np.asarray(batch.targets).dtype, np.integer):
            raise ValueError("outlier_batch injection requires real-valued targets")
        batch = Batch(
            inputs=batch.inputs,
            targets=np.asarray(batch.targets, dtype=float) * spec.magnitude,
            outlier_flag=True,
        )
    else:
        batch = Batch(inputs=batch.inputs, targets=batch.targets, outlier_flag=True)
    return batch, advance(rng_state)


def run_training(cfg: RunConfig, out_dir: Optional[Path] = None) -> RunResult:
    """Execute one run: sample -> inject? -> forward/backward -> guarded step."""
    task = cfg.task.build(cfg.seed)
    params = task.init_params()
    opt_state = init_optimizer_state(task.n_params)
    gov = Governor(cfg.guard_or_disabled())
    sched = cfg.schedule()
    batch_state = StreamState(seed=cfg.seed, stream=_BATCH_STREAM)
    inject_state = StreamState(seed=cfg.seed, stream=_INJECT_STREAM)

    initial = evaluate(task, params)
    eval_trace: List[Tuple[int, float, float]] = []
    t0 = time.perf_counter()
    for step in range(cfg.steps):
        lr_t = schedule_lr(step, sched)
        batch, batch_state = sample_batch(task, batch_state, cfg.batch_size)
        if cfg.injection is not None:
            batch, inject_state = inject_outliers(batch, cfg.injection, step, inject_state)
        loss, grads = forward_backward(task, params, batch)
        burst = 1.0
        if (
            cfg.injection is not None
            and cfg.injection.mode == "gradient_burst"
            and batch.outlier_flag
        ):
            burst = cfg.injection.magnitude
        params, opt_state, _ = guarded_step(
            gov, opt_state, params, grads, loss, step, lr_t, cfg.opt, cfg.clip,
            grad_scale=burst,
        )
        if (step + 1) % cfg.eval_every == 0:
            ev = evaluate(task, params)
            eval_trace.append((step + 1, ev.eval_loss, ev.perplexity))
    wall = time.perf_counter() - t0

    final = evaluate(task, params)
    result = RunResult(
        label=cfg.label,
        seed=cfg.seed,
        initial_loss=initial.eval_loss,
        final_loss=final.eval_loss,
        final_perplexity=final.perplexity,
        wall_seconds=wall,
        steps_per_second=cfg.steps / wall if wall > 0 else math.inf,
        summary=gov.log.finalize(),
        eval_trace=eval_trace,
        log=gov.log,
        params=params,
    )
    if out_dir is not None:
        write_run_artifacts(result, Path(out_dir))
    return result


def write_run_artifacts(result: RunResult, out_dir: Path) -> Tuple[Path, Path]:
    """One telemetry JSONL and one summary JSON per run."""
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{result.label}_seed{result.seed}"
    jsonl_path = out_dir / f"{stem}.jsonl"
    with open(jsonl_path, "w", encoding="utf-8") as fh:
        result.log.write_jsonl(fh)
    summary_path = out_dir / f"{stem}_summary.json"
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(dataclasses.asdict(result.summary), fh, indent=2)
        fh.write("\n")
    return jsonl_path, summary_path


def severe_degradation(result: RunResult) -> bool:
    return not math.isfinite(result.final_loss) or (
        result.final_loss > DEGRADATION_FACTOR * result.initial_loss
    )


def _probe_degraded(result: RunResult, criterion: str) -> bool:
    """peak: any eval checkpoint degraded; final: only the final eval counts
    (non-finite mid-run evals count either way, the run is already dead)."""
    if any(not math.isfinite(loss) for _, loss, _ in result.eval_trace):
        return True
    if criterion == "peak":
        threshold = DEGRADATION_FACTOR * result.initial_loss
        if any(loss > threshold for _, loss, _ in result.eval_trace):
            return True
    return severe_degradation(result)


def calibrate_divergence_lr(
    task: TaskSpec,
    opt: OptimizerConfig = OptimizerConfig(),
    probe_steps: int = 300,
    seed: int = 7,
    floor: float = 1e-4,
    schedule_kind: ScheduleKind = ScheduleKind.COSINE,
    batch_size: int = 32,
    max_doublings: int = 20,
    criterion: str = "peak",
    injection: Optional[InjectionSpec] = None,
) -> float:
    """Double the baseline lr from a safe floor until it degrades the run.

    criterion="peak" flags degradation at any eval checkpoint within the
    probe run; "final" requires the probe run to end degraded (cosine decay
    can anneal a mid-run excursion away, so "final" needs probe_steps equal
    to the target run length to transfer).
    """
    if criterion not in ("peak", "final"):
        raise ValueError("criterion must be 'peak' or 'final'")
    lr = floor
    for _ in range(max_doublings + 1):
        cfg = RunConfig(
            task=task,
            opt=replace(opt, lr=lr),
            schedule_kind=schedule_kind,
            baseline_marker=True,
            steps=probe_steps,
            batch_size=batch_size,
            eval_every=max(1, probe_steps // 10),
            seed=seed,
            injection=injection,
            label="calibrate",
        )
        if _probe_degraded(run_training(cfg), criterion):
            return lr
        lr *= 2.0
    raise RuntimeError("task not stressable: no degrading lr within doubling budget")


def config_pair_diff(baseline: RunConfig, guarded: RunConfig) -> List[str]:
    """Field names where a comparison pair differs.

    Pairing integrity requires the diff to be a subset of the
    governance/clipping fields {guard, baseline_marker, clip, label}.
    """
    diffs = []
    for f in dataclasses.fields(RunConfig):
        if getattr(baseline, f.name) != getattr(guarded, f.name):
            diffs.append(f.name)
    return diffs


GOVERNANCE_FIELDS = {"guard", "baseline_marker", "clip", "label"}


def run_suite(
    pairs: Sequence[Tuple[str, RunConfig, RunConfig]],
    out_dir: Optional[Path] = None,
) -> List[ComparisonRow]:
    """Run (scenario, baseline_cfg, guarded_cfg) pairs and aggregate rows.

    Pairing integrity is asserted up front; per-run errors are recorded on
    the row and the suite continues. Rows come back sorted by scenario id.
    """
    if not pairs:
        raise ValueError("run_suite requires at least one pair")
    for scenario, base_cfg, guard_cfg in pairs:
        extra = set(config_pair_diff(base_cfg, guard_cfg)) - GOVERNANCE_FIELDS
        if extra:
            raise ValueError(
                f"pairing integrity violated in {scenario!r}: differs on {sorted(extra)}"
            )
    rows: List[ComparisonRow] = []
    for scenario, base_cfg, guard_cfg in pairs:
        row = ComparisonRow(scenario=scenario, seed=base_cfg.seed, baseline=None, guarded=None)
        try:
            row.baseline = run_training(base_cfg, out_dir)
            row.guarded = run_training(guard_cfg, out_dir)
            row.derive()
        except Exception as exc:  # noqa: BLE001 - per-row error capture
            row.error = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    rows.sort(key=lambda r: (r.scenario, r.seed))
    return rows


def seed_stats(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and sample standard deviation (ddof=1; 0.0 for a single value)."""
    arr = np.asarray(values, dtype=float)
    # Non-finite entries (e.g. overflowed perplexities) legitimately yield
    # inf/nan statistics; suppress the float warnings they would raise.
    with np.errstate(over="ignore", invalid="ignore"):
        mean = float(arr.mean())
        std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return mean, std
