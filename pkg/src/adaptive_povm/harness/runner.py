"""Run orchestration and the on-disk layout of a run directory.

::

    <output>/config.json         resolved configuration
    <output>/ansatz.json         circuit that prepares the state
    <output>/observable.txt      copy of the observable
    <output>/metadata.json       versions, exact reference values, per-seed outcome
    <output>/summary.csv         one row per seed
    <output>/seed_<s>/trace.csv  per-iteration trace
    <output>/seed_<s>/final.json
    <output>/seed_<s>/povm/iter_0001.txt ...   parameters used at each iteration
    <output>/seed_<s>/bloch.csv                 Bloch vectors of every effect
    <output>/seed_<s>/batches/iter_0001.csv ... outcome batches (unless persist is off)
"""
from __future__ import annotations

import csv
import io
import json
import logging
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

from .. import __version__
from ..adaptive import AdaptiveRun, StopCriteria, run_adaptive, run_fixed
from ..baselines import BaselineResult, grouped_pauli_estimate, pauli_estimate, shots_per_unit
from ..observables import PauliObservable, group_qubitwise, load_observable
from ..povm import PovmParams, effect_to_bloch
from ..sampling import OutcomeBatch, ProductPovm
from ..simulator import (
    AnsatzCircuit,
    StateVector,
    exact_expectation,
    ground_energy_dense,
    prepare_ansatz_state,
    train_vqe,
)
from .analysis import Trace, bootstrap_mean
from .config import ExperimentConfig

logger = logging.getLogger(__name__)


class RunError(RuntimeError):
    pass


@dataclass
class PreparedState:
    circuit: AnsatzCircuit
    state: StateVector
    vqe_gap: float | None


def prepare_state(config: ExperimentConfig, obs: PauliObservable) -> PreparedState:
    n = obs.num_qubits
    if config.ansatz:
        circuit = AnsatzCircuit.from_json(Path(config.ansatz).read_text())
        if circuit.num_qubits != n:
            raise RunError("ansatz and observable qubit counts differ")
        return PreparedState(circuit, prepare_ansatz_state(circuit), None)
    depth = config.depth if config.depth is not None else n + 1
    if config.theta is not None:
        circuit = AnsatzCircuit(n, depth, np.array(config.theta, dtype=float))
        if len(config.theta) != circuit.num_parameters:
            raise RunError(f"theta needs {circuit.num_parameters} angles")
        return PreparedState(circuit, prepare_ansatz_state(circuit), None)
    result = train_vqe(obs, AnsatzCircuit(n, depth, seed=config.vqe_seed),
                       threshold=config.vqe_threshold, seed=config.vqe_seed)
    return PreparedState(result.circuit, prepare_ansatz_state(result.circuit), result.gap)


def _initial_params(config: ExperimentConfig, n: int) -> PovmParams:
    if config.x0:
        params = PovmParams.load(config.x0)
        if params.num_qubits != n:
            raise RunError("initial POVM parameter file has the wrong number of rows")
        return params
    variant = 2 if config.method.endswith("2") else 1
    return PovmParams.sic(variant, n)


def trace_of_run(run: AdaptiveRun) -> Trace:
    rows = []
    for e in run.trace:
        rows.append([e.t, e.record.shots, e.record.mean, e.record.variance, e.mixed_mean,
                     e.mixed_variance, e.grad_norm, e.params.digest()])
    return Trace.from_rows(rows)


def trace_of_baseline(result: BaselineResult) -> Trace:
    var = result.variance
    return Trace.from_rows([[1, result.total_shots, result.mean, var, result.mean, var, 0.0,
                             result.method]])


def bloch_csv(run: AdaptiveRun) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "qubit", "effect", "rx", "ry", "rz"])
    for e in run.trace:
        for q, local in enumerate(e.params.local_povms()):
            for i, effect in enumerate(local.effects):
                r = effect_to_bloch(effect)
                writer.writerow([e.t, q, i, *(repr(float(v)) for v in r)])
    return buf.getvalue()


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def run_seed(config: ExperimentConfig, obs: PauliObservable, state: StateVector, seed: int,
             out_dir: Path) -> dict:
    """Run one seed, write its artifacts, and return its summary row."""
    n = obs.num_qubits
    seed_dir = out_dir / f"seed_{seed}"
    summary: dict = {"seed": seed}
    if config.method in ("pauli", "grouped"):
        if config.method == "pauli":
            units = len(obs.non_identity())
            per = shots_per_unit(config.total_shots, units) if units else 1
            result = pauli_estimate(state, obs, per, seed)
        else:
            grouping = group_qubitwise(obs)
            units = sum(1 for g in grouping.groups if any(obs.labels[k].strip("I") for k in g))
            per = shots_per_unit(config.total_shots, units) if units else 1
            result = grouped_pauli_estimate(state, obs, per, seed, grouping)
        trace = trace_of_baseline(result)
        final = {"mean": result.mean, "error": result.error, "total_shots": result.total_shots,
                 "shots_per_unit": per, "units": result.units, "stop_reason": "shot_budget",
                 **result.metadata}
        summary.update(mean=result.mean, error=result.error, total_shots=result.total_shots,
                       stop_reason="shot_budget", iterations=1)
    else:
        if config.method in ("sic1", "sic2"):
            params = PovmParams.sic(int(config.method[-1]), n)
            run = run_fixed(state, obs, params, config.total_shots, seed, keep_batches=config.persist)
        else:
            stop = StopCriteria(config.target_error, config.total_shots, config.max_iterations)
            run = run_adaptive(state, obs, _initial_params(config, n), config.schedule_obj(), stop,
                               seed, keep_batches=config.persist, discard_first=config.discard_first)
        trace = trace_of_run(run)
        for e in run.trace:
            _write(seed_dir / "povm" / f"iter_{e.t:04d}.txt", e.params.dumps())
        _write(seed_dir / "bloch.csv", bloch_csv(run))
        for t, batch in enumerate(run.batches, start=1):
            _write(seed_dir / "batches" / f"iter_{t:04d}.csv", batch.to_csv())
        final = {"mean": run.final.mean, "error": run.final.error, "variance": run.final.variance,
                 "total_shots": run.total_shots, "iterations": len(run.trace),
                 "stop_reason": run.stop_reason, "exact": run.exact,
                 "persisted_batches": bool(run.batches)}
        summary.update(mean=run.final.mean, error=run.final.error, total_shots=run.total_shots,
                       stop_reason=run.stop_reason, iterations=len(run.trace))
    _write(seed_dir / "trace.csv", trace.to_csv())
    _write(seed_dir / "final.json", json.dumps(final, indent=2, sort_keys=True) + "\n")
    return summary


def _run_seed_job(args: tuple) -> dict:
    config, obs, amps, seed, out_dir = args
    return run_seed(config, obs, StateVector(amps), seed, out_dir)


def execute(config: ExperimentConfig) -> Path:
    """Run every seed of ``config`` and write the run directory."""
    config.validate()
    obs = load_observable(config.observable)
    prepared = prepare_state(config, obs)
    out_dir = Path(config.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write(out_dir / "config.json", config.to_json())
    _write(out_dir / "ansatz.json", prepared.circuit.to_json() + "\n")
    _write(out_dir / "observable.txt", obs.dumps())
    exact = exact_expectation(prepared.state, obs)
    jobs = [(config, obs, prepared.state.amplitudes, s, out_dir) for s in config.seeds]
    if config.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            rows = list(pool.map(_run_seed_job, jobs))
    else:
        rows = [_run_seed_job(job) for job in jobs]
    for row in rows:
        row["abs_error"] = abs(row["mean"] - exact)
    _write(out_dir / "summary.csv", _summary_csv(rows))
    meta = {
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "method": config.method,
        "num_qubits": obs.num_qubits,
        "num_terms": obs.num_terms,
        "exact_value": exact,
        "vqe_gap": prepared.vqe_gap,
        "seeds": rows,
        "conventions": _conventions(config.method),
    }
    if obs.num_qubits <= 12:
        meta["ground_energy"] = ground_energy_dense(obs)
    if len(rows) >= 2:
        ci = bootstrap_mean([r["abs_error"] for r in rows])
        meta["abs_error_bootstrap"] = {"mean": ci.estimate, "low": ci.low, "high": ci.high,
                                       "resamples": ci.resamples, "confidence": ci.confidence}
    _write(out_dir / "metadata.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out_dir


def _conventions(method: str) -> dict:
    if method == "pauli":
        return {"allocation": "uniform-per-string", "error": "independent terms"}
    if method == "grouped":
        return {"allocation": "uniform-per-group", "error": "within-group covariance included"}
    return {"variance": "unbiased sample variance / S_t", "mixing": "inverse variance"}


def _summary_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    cols = ["seed", "mean", "error", "abs_error", "total_shots", "iterations", "stop_reason"]
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for row in rows:
        writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in cols])
    return buf.getvalue()


def load_run(run_dir: str | Path) -> tuple[ExperimentConfig, PauliObservable, StateVector]:
    run_dir = Path(run_dir)
    if not (run_dir / "config.json").exists():
        raise RunError(f"{run_dir} is not a run directory (config.json missing)")
    config = ExperimentConfig.load(run_dir / "config.json")
    obs = load_observable(run_dir / "observable.txt")
    circuit = AnsatzCircuit.from_json((run_dir / "ansatz.json").read_text())
    return config, obs, prepare_ansatz_state(circuit)


def load_batches(seed_dir: str | Path) -> list[OutcomeBatch]:
    """Reload the persisted batches of one seed, checking each against its POVM file."""
    seed_dir = Path(seed_dir)
    files = sorted((seed_dir / "batches").glob("iter_*.csv")) if (seed_dir / "batches").is_dir() else []
    if not files:
        raise RunError(f"{seed_dir}: no persisted outcome batches")
    batches = []
    for path in files:
        params_path = seed_dir / "povm" / (path.stem + ".txt")
        if not params_path.exists():
            raise RunError(f"{params_path} missing for {path.name}")
        povm = ProductPovm.from_params(PovmParams.load(params_path))
        batches.append(OutcomeBatch.load(path, povm))
    return batches
