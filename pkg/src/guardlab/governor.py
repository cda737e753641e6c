"""Bounded training-control governor.

The control loop is sense -> classify -> select posture -> actuate -> log.
Every transition is a pure function over explicit state values; the
``Governor`` class is a thin bundle of (config, analyzer state, posture, log)
for callers that want a stateful handle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import IO, List, Optional, Sequence

import numpy as np

__all__ = [
    "TelemetryError",
    "NonFiniteGradientError",
    "Regime",
    "GuardConfig",
    "TelemetrySample",
    "AnalyzerState",
    "ControlPosture",
    "StepRecord",
    "TelemetrySummary",
    "update_ema",
    "gradient_rms",
    "sense",
    "classify_regime",
    "select_posture",
    "apply_posture",
    "StepLog",
    "log_step",
    "finalize_log",
    "summarize_records",
    "Governor",
    "ACTIVE_SCALE_TOLERANCE",
    "SPIKE_DAMPING",
    "STRESS_DAMPING",
]

# A step counts as control-active when scale < 1 - tolerance; strict
# inequality with a tolerance keeps floating noise out of the counter.
ACTIVE_SCALE_TOLERANCE = 1e-9

# Multiplicative damping applied per classified step.
SPIKE_DAMPING = 0.5
STRESS_DAMPING = 0.9

_EMA_FLOOR = 1e-12


class TelemetryError(ValueError):
    """Telemetry input rejected (non-finite where finite is required)."""


class NonFiniteGradientError(TelemetryError):
    """A gradient entry is NaN or infinite."""


class Regime(str, Enum):
    STABLE = "stable"
    STRESS = "stress"
    SPIKE = "spike"
    RECOVERY = "recovery"


@dataclass(frozen=True)
class GuardConfig:
    """Public controller parameters plus the bounded-scale limits."""

    auto_enabled: bool = True
    stats_freq: int = 10
    stress_threshold: float = 1.25
    spike_threshold: float = 1.8
    recovery_fast: float = 0.005
    ema_decay: float = 0.98
    use_max_rms: bool = True
    c_min: float = 0.05
    c_max: float = 1.0
    recovery_confirm: int = 3

    def __post_init__(self):
        if self.stats_freq < 1:
            raise ValueError("stats_freq must be >= 1")
        if not self.stress_threshold > 1.0:
            raise ValueError("stress_threshold must be > 1")
        if not self.spike_threshold > self.stress_threshold:
            raise ValueError("spike_threshold must be > stress_threshold")
        if self.recovery_fast < 0.0:
            raise ValueError("recovery_fast must be >= 0")
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in (0, 1)")
        if self.c_max != 1.0:
            raise ValueError("c_max is fixed at 1.0")
        if not 0.0 < self.c_min <= self.c_max:
            raise ValueError("c_min must lie in (0, c_max]")
        if self.recovery_confirm < 1:
            raise ValueError("recovery_confirm must be >= 1")


@dataclass(frozen=True)
class TelemetrySample:
    """Per-step sensor output. grad_rms is present only on probe steps."""

    step: int
    loss: float
    grad_rms: Optional[float]
    lr: float


@dataclass(frozen=True)
class AnalyzerState:
    loss_ema: float = 0.0
    rms_ema: Optional[float] = None
    regime: Regime = Regime.STABLE
    improving_streak: int = 0
    initialized: bool = False


@dataclass(frozen=True)
class ControlPosture:
    scale: float = 1.0
    skip_step: bool = False
    mode: Regime = Regime.STABLE


@dataclass(frozen=True)
class StepRecord:
    step: int
    loss: float
    loss_ema: float
    regime: Regime
    scale: float
    active: bool
    skipped: bool
    grad_rms: Optional[float]
    lr: float


@dataclass(frozen=True)
class TelemetrySummary:
    total_steps: int
    control_active_steps: int
    regime_switches: int
    control_energy: float
    min_scale: float
    skipped_steps: int


def update_ema(prev: float, value: float, decay: float) -> float:
    """decay * prev + (1 - decay) * value, finite inputs only."""
    if not 0.0 < decay < 1.0:
        raise ValueError("decay must lie in (0, 1)")
    if not (math.isfinite(prev) and math.isfinite(value)):
        raise TelemetryError("update_ema requires finite inputs")
    return decay * prev + (1.0 - decay) * value


def gradient_rms(grad_groups: Sequence[np.ndarray], use_max_rms: bool) -> float:
    """Per-group RMS, aggregated by max (use_max_rms) or mean over groups."""
    if len(grad_groups) == 0:
        raise ValueError("gradient_rms requires at least one group")
    per_group = []
    for g in grad_groups:
        arr = np.asarray(g, dtype=float)
        if arr.size == 0:
            raise ValueError("gradient_rms requires nonempty groups")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteGradientError("non-finite gradient")
        per_group.append(float(np.sqrt(np.mean(arr * arr))))
    return max(per_group) if use_max_rms else float(np.mean(per_group))


def sense(
    step: int,
    loss: float,
    grad_groups: Optional[Sequence[np.ndarray]],
    lr: float,
    cfg: GuardConfig,
) -> TelemetrySample:
    """Read-only probe: attaches grad_rms only on probe-cadence steps.

    A non-finite loss passes through untouched; a non-finite gradient on a
    probe step yields grad_rms=None (the probe is unusable, skip semantics
    are decided downstream).
    """
    if step < 0:
        raise ValueError("step must be non-negative")
    grad_rms: Optional[float] = None
    if grad_groups is not None and step % cfg.stats_freq == 0:
        try:
            grad_rms = gradient_rms(grad_groups, cfg.use_max_rms)
        except NonFiniteGradientError:
            grad_rms = None
    return TelemetrySample(step=step, loss=float(loss), grad_rms=grad_rms, lr=float(lr))


def classify_regime(
    sample: TelemetrySample,
    state: AnalyzerState,
    cfg: GuardConfig,
    current_scale: float = 1.0,
) -> tuple:
    """Assign an operating regime and advance the analyzer state.

    Ratio triggers: r = loss / loss_ema (spike/stress), rho = grad_rms /
    rms_ema (stress, probe steps only). Recovery requires
    ``recovery_confirm`` consecutive improving observations (r <= 1) and
    holds while the scale has not yet been released back to c_max; once the
    bound is reached the regime returns to Stable. Non-finite losses are
    classified Spike and never enter the EMA.
    """
    loss = sample.loss
    finite = math.isfinite(loss)

    if not state.initialized:
        if not finite:
            return Regime.SPIKE, replace(state, regime=Regime.SPIKE, improving_streak=0)
        new = AnalyzerState(
            loss_ema=loss,
            rms_ema=sample.grad_rms,
            regime=Regime.STABLE,
            improving_streak=0,
            initialized=True,
        )
        return Regime.STABLE, new

    r = loss / max(state.loss_ema, _EMA_FLOOR) if finite else math.inf
    rho = None
    if sample.grad_rms is not None and state.rms_ema is not None:
        rho = sample.grad_rms / max(state.rms_ema, _EMA_FLOOR)

    if not finite or r >= cfg.spike_threshold:
        regime = Regime.SPIKE
        streak = 0
    elif r >= cfg.stress_threshold or (rho is not None and rho >= cfg.stress_threshold):
        regime = Regime.STRESS
        streak = 0
    else:
        streak = state.improving_streak + 1 if r <= 1.0 else 0
        released = current_scale >= cfg.c_max - ACTIVE_SCALE_TOLERANCE
        if not released and (streak >= cfg.recovery_confirm or state.regime is Regime.RECOVERY):
            regime = Regime.RECOVERY
        else:
            regime = Regime.STABLE

    loss_ema = update_ema(state.loss_ema, loss, cfg.ema_decay) if finite else state.loss_ema
    rms_ema = state.rms_ema
    if sample.grad_rms is not None:
        rms_ema = (
            sample.grad_rms
            if rms_ema is None
            else update_ema(rms_ema, sample.grad_rms, cfg.ema_decay)
        )
    new = AnalyzerState(
        loss_ema=loss_ema,
        rms_ema=rms_ema,
        regime=regime,
        improving_streak=streak,
        initialized=True,
    )
    return regime, new


def select_posture(
    regime: Regime,
    current: ControlPosture,
    cfg: GuardConfig,
    loss_finite: bool,
) -> ControlPosture:
    """Bounded scale transition: damp on spike/stress, release otherwise."""
    if not cfg.auto_enabled:
        return ControlPosture(scale=1.0, skip_step=False, mode=regime)
    if regime is Regime.SPIKE:
        scale = max(cfg.c_min, current.scale * SPIKE_DAMPING)
    elif regime is Regime.STRESS:
        scale = max(cfg.c_min, current.scale * STRESS_DAMPING)
    else:
        scale = min(cfg.c_max, current.scale * (1.0 + cfg.recovery_fast))
    return ControlPosture(scale=scale, skip_step=not loss_finite, mode=regime)


def apply_posture(
    update_delta: np.ndarray,
    posture: ControlPosture,
    check_finite: bool = True,
) -> np.ndarray:
    """Scale the update elementwise; a skipped step becomes the zero delta."""
    delta = np.asarray(update_delta, dtype=float)
    if posture.skip_step:
        return np.zeros_like(delta)
    if check_finite and not np.all(np.isfinite(delta)):
        raise TelemetryError("actuation on non-finite update")
    return posture.scale * delta


def _record_to_json_dict(rec: StepRecord) -> dict:
    # Field order fixed for byte-stable JSONL diffs.
    return {
        "step": rec.step,
        "loss": rec.loss,
        "loss_ema": rec.loss_ema,
        "regime": rec.regime.value,
        "scale": rec.scale,
        "active": rec.active,
        "skipped": rec.skipped,
        "grad_rms": rec.grad_rms,
        "lr": rec.lr,
    }


def record_from_json_dict(d: dict) -> StepRecord:
    return StepRecord(
        step=int(d["step"]),
        loss=float(d["loss"]),
        loss_ema=float(d["loss_ema"]),
        regime=Regime(d["regime"]),
        scale=float(d["scale"]),
        active=bool(d["active"]),
        skipped=bool(d["skipped"]),
        grad_rms=None if d["grad_rms"] is None else float(d["grad_rms"]),
        lr=float(d["lr"]),
    )


@dataclass
class StepLog:
    """Ordered sink of step records with strictly increasing step numbers."""

    records: List[StepRecord] = field(default_factory=list)

    def append(self, rec: StepRecord) -> None:
        if self.records and rec.step <= self.records[-1].step:
            raise ValueError(
                f"out-of-order step {rec.step} after {self.records[-1].step}"
            )
        self.records.append(rec)

    def finalize(self) -> TelemetrySummary:
        return summarize_records(self.records)

    def write_jsonl(self, fh: IO[str]) -> None:
        for rec in self.records:
            fh.write(json.dumps(_record_to_json_dict(rec)))
            fh.write("\n")


def log_step(log: StepLog, rec: StepRecord) -> StepLog:
    log.append(rec)
    return log


def finalize_log(log: StepLog) -> TelemetrySummary:
    return log.finalize()


def summarize_records(records: Sequence[StepRecord]) -> TelemetrySummary:
    active = sum(1 for r in records if r.active)
    skipped = sum(1 for r in records if r.skipped)
    switches = sum(
        1 for a, b in zip(records, records[1:]) if a.regime is not b.regime
    )
    energy = sum(
        1.0 if r.skipped else (1.0 - r.scale) ** 2 for r in records
    )
    min_scale = min((r.scale for r in records), default=1.0)
    return TelemetrySummary(
        total_steps=len(records),
        control_active_steps=active,
        regime_switches=switches,
        control_energy=energy,
        min_scale=min_scale,
        skipped_steps=skipped,
    )


def make_step_record(
    step: int,
    loss: float,
    loss_ema: float,
    regime: Regime,
    posture: ControlPosture,
    grad_rms: Optional[float],
    lr: float,
) -> StepRecord:
    active = posture.scale < 1.0 - ACTIVE_SCALE_TOLERANCE or posture.skip_step
    return StepRecord(
        step=step,
        loss=float(loss),
        loss_ema=float(loss_ema),
        regime=regime,
        scale=float(posture.scale),
        active=active,
        skipped=posture.skip_step,
        grad_rms=grad_rms,
        lr=float(lr),
    )


class Governor:
    """Stateful handle bundling analyzer state, posture, and the step log."""

    def __init__(self, cfg: GuardConfig):
        self.cfg = cfg
        self.state = AnalyzerState()
        self.posture = ControlPosture()
        self.log = StepLog()

    def observe(
        self,
        step: int,
        loss: float,
        grad_groups: Optional[Sequence[np.ndarray]],
        lr: float,
        inputs_finite: bool,
    ) -> ControlPosture:
        """One governance pass: sense, classify, and select the posture."""
        sample = sense(step, loss, grad_groups, lr, self.cfg)
        regime, self.state = classify_regime(
            sample, self.state, self.cfg, current_scale=self.posture.scale
        )
        self.posture = select_posture(regime, self.posture, self.cfg, inputs_finite)
        rec = make_step_record(
            step, loss, self.state.loss_ema, regime, self.posture, sample.grad_rms, lr
        )
        self.log.append(rec)
        return self.posture
