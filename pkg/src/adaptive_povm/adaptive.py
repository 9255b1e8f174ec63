"""On-the-fly POVM learning loop.

Each iteration samples ``S_t`` shots with the current parameters, folds the
resulting estimate into the running mixture, estimates the gradient of the
weights' second moment from the same shots, and takes a max-normalized step.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .estimation import (
    EstimateRecord,
    RunningEstimate,
    WeightContext,
    estimate,
    mix,
    second_moment_gradient,
)
from .observables import PauliObservable
from .povm import DEFAULT_DELTA, PovmParams
from .sampling import OutcomeBatch, ProductPovm, SeedKey, as_seed_key, sample_povm
from .simulator import StateVector

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Schedule:
    initial_shots: int = 1000
    shot_increment: int = 1000
    increment_period: int = 3
    initial_step: float = 0.05
    step_decay: float = 1.2
    delta: float = DEFAULT_DELTA
    fd_step: float = 1e-3

    def __post_init__(self) -> None:
        for name in ("initial_shots", "increment_period", "initial_step", "step_decay", "fd_step"):
            if getattr(self, name) <= 0:
                raise ValueError(f"schedule field {name} must be positive")
        if self.shot_increment < 0:
            raise ValueError("shot_increment must be non-negative")
        if not 0 < self.delta < 0.5:
            raise ValueError("delta must lie in (0, 0.5)")

    def shots(self, t: int) -> int:
        """Shots for 1-based iteration ``t``."""
        return self.initial_shots + self.shot_increment * ((t - 1) // self.increment_period)

    def step(self, t: int) -> float:
        return self.initial_step / self.step_decay ** ((t - 1) // self.increment_period)


@dataclass(frozen=True)
class StopCriteria:
    target_error: float | None = None
    total_shots: int | None = None
    max_iterations: int | None = None

    def __post_init__(self) -> None:
        if self.target_error is None and self.total_shots is None and self.max_iterations is None:
            raise ValueError("at least one stop criterion is required")
        if self.target_error is not None and self.target_error <= 0:
            raise ValueError("target_error must be positive")
        if self.total_shots is not None and self.total_shots <= 0:
            raise ValueError("total_shots must be positive")
        if self.max_iterations is not None and self.max_iterations <= 0:
            raise ValueError("max_iterations must be positive")


@dataclass
class TraceEntry:
    t: int
    params: PovmParams
    record: EstimateRecord
    grad_norm: float
    mixed_mean: float
    mixed_variance: float
    cumulative_shots: int


@dataclass
class AdaptiveRun:
    trace: list[TraceEntry]
    final: RunningEstimate
    stop_reason: str
    batches: list[OutcomeBatch] = field(default_factory=list)

    @property
    def total_shots(self) -> int:
        return self.trace[-1].cumulative_shots if self.trace else 0

    @property
    def exact(self) -> bool:
        return self.final.exact


def update_params(params: PovmParams, grad: np.ndarray, step: float) -> PovmParams:
    """``x - step * g / max|g|``, clamped to the box.  Zero gradients leave ``x`` alone."""
    scale = float(np.max(np.abs(grad))) if grad.size else 0.0
    if scale == 0 or not np.isfinite(scale):
        return PovmParams(params.values.copy(), params.delta, dict(params.provenance))
    moved = params.values - step * grad / scale
    return PovmParams(moved, params.delta, dict(params.provenance)).clamped()


def run_adaptive(state: StateVector, obs: PauliObservable, x0: PovmParams,
                 schedule: Schedule = Schedule(), stop: StopCriteria = StopCriteria(total_shots=100_000),
                 seed: int | SeedKey = 0, *, learn: bool = True, keep_batches: bool = False,
                 discard_first: int = 0) -> AdaptiveRun:
    """Learn the measurement while estimating ``<O>``.

    Every sampled shot enters the final mixture (unless ``discard_first`` asks
    to drop the earliest records).  With a shot budget the last batch is cut so
    the total matches it exactly.  ``learn=False`` keeps ``x0`` fixed, which
    gives the non-adaptive estimator on the same shot schedule.
    """
    if x0.num_qubits != obs.num_qubits or obs.num_qubits != state.num_qubits:
        raise ValueError("state, observable and POVM parameters disagree on the qubit count")
    if stop.total_shots is not None and stop.total_shots < schedule.initial_shots:
        raise ValueError(f"shot budget {stop.total_shots} is smaller than S_1 = {schedule.initial_shots}")
    key = as_seed_key(seed)
    params = PovmParams(x0.values.copy(), schedule.delta, dict(x0.provenance))
    if not params.in_box():
        raise ValueError("initial POVM parameters lie outside [delta, 1 - delta]")
    running = RunningEstimate()
    trace: list[TraceEntry] = []
    batches: list[OutcomeBatch] = []
    used = 0
    t = 0
    reason = "iteration_cap"
    while True:
        t += 1
        shots = schedule.shots(t)
        if stop.total_shots is not None:
            shots = min(shots, stop.total_shots - used)
        povm = ProductPovm.from_params(params)
        batch = sample_povm(state, povm, shots, key.child(t))
        ctx = WeightContext.build(obs, povm)
        record = estimate(batch, ctx)
        used += shots
        if t > discard_first:
            running = mix(running, record)
        else:
            running.history.append(record)
        grad_norm = 0.0
        next_params = params
        if learn and not running.exact:
            grad = second_moment_gradient(batch, ctx, params, schedule.fd_step)
            grad_norm = float(np.max(np.abs(grad)))
            next_params = update_params(params, grad, schedule.step(t))
        trace.append(TraceEntry(t, params, record, grad_norm, running.mean, running.variance, used))
        if keep_batches:
            batches.append(batch)
        logger.debug("t=%d S_t=%d mean=%.6f mixed=%.6f +- %.2e", t, shots, record.mean,
                     running.mean, running.error)
        if running.exact:
            reason = "exact"
            break
        if stop.target_error is not None and running.error <= stop.target_error:
            reason = "target_error"
            break
        if stop.total_shots is not None and used >= stop.total_shots:
            reason = "shot_budget"
            break
        if stop.max_iterations is not None and t >= stop.max_iterations:
            reason = "iteration_cap"
            break
        params = next_params
    return AdaptiveRun(trace, running, reason, batches)


def run_fixed(state: StateVector, obs: PauliObservable, params: PovmParams, shots: int,
              seed: int | SeedKey = 0, *, keep_batches: bool = False) -> AdaptiveRun:
    """Single batch with a fixed POVM, reported in the same trace format."""
    key = as_seed_key(seed)
    povm = ProductPovm.from_params(params)
    batch = sample_povm(state, povm, shots, key.child(1))
    record = estimate(batch, WeightContext.build(obs, povm))
    running = mix(RunningEstimate(), record)
    entry = TraceEntry(1, params, record, 0.0, running.mean, running.variance, shots)
    return AdaptiveRun([entry], running, "exact" if running.exact else "shot_budget",
                       [batch] if keep_batches else [])
