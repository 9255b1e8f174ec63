"""Command-line interface.

Subcommands: ``run``, ``vqe-train``, ``tomography``, ``extrapolate``, ``fit``,
``gen-hamiltonian`` and ``export-bloch``.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from ..observables import heisenberg_chain, load_observable, transverse_field_ising
from ..povm import PovmParams, effect_to_bloch
from ..simulator import AnsatzCircuit, train_vqe
from ..tomography import kwise_report
from .analysis import AnalysisError, Trace, bootstrap_exponent, extrapolate_shots, fit_power_law
from .config import METHODS, ConfigError, ExperimentConfig
from .runner import RunError, execute, load_batches, load_run

logger = logging.getLogger("adaptive_povm")


def _schedule_pairs(pairs: Sequence[str] | None) -> dict | None:
    if not pairs:
        return None
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ConfigError(f"schedule override {pair!r} is not KEY=VALUE")
        out[key] = float(value) if any(ch in value for ch in ".eE") else int(value)
    return out


def cmd_run(args: argparse.Namespace) -> int:
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    seeds = args.seed
    if args.seeds is not None:
        seeds = list(range(args.seeds))
    overrides = {
        "observable": args.obs, "method": args.method, "ansatz": args.ansatz,
        "depth": args.depth, "total_shots": args.shots, "target_error": args.target_error,
        "max_iterations": args.max_iterations, "seeds": seeds, "output": args.out,
        "x0": args.x0, "discard_first": args.discard_first, "jobs": args.jobs,
        "schedule": _schedule_pairs(args.schedule),
        "persist": False if args.no_persist else None,
    }
    config = config.merged(overrides)
    out = execute(config)
    with open(out / "summary.csv") as fh:
        sys.stdout.write(fh.read())
    print(f"run directory: {out}")
    return 0


def cmd_vqe_train(args: argparse.Namespace) -> int:
    obs = load_observable(args.obs)
    circuit = AnsatzCircuit(obs.num_qubits, args.depth, seed=args.seed)
    result = train_vqe(obs, circuit, threshold=args.threshold, max_sweeps=args.max_sweeps,
                       seed=args.seed)
    Path(args.output).write_text(result.circuit.to_json() + "\n")
    print(f"energy={result.energy!r} ground={result.ground_energy!r} gap={result.gap:.3e} "
          f"converged={result.converged} sweeps={result.sweeps}")
    return 0


def _seed_dirs(run_dir: Path, seed: int | None) -> list[Path]:
    if seed is not None:
        path = run_dir / f"seed_{seed}"
        if not path.is_dir():
            raise RunError(f"{path} does not exist")
        return [path]
    dirs = sorted(run_dir.glob("seed_*"), key=lambda p: int(p.name.split("_")[1]))
    if not dirs:
        raise RunError(f"{run_dir} has no seed directories")
    return dirs


def cmd_tomography(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    _, obs, state = load_run(run_dir)
    if not 1 <= args.k <= obs.num_qubits:
        raise ConfigError(f"k must lie in [1, {obs.num_qubits}]")
    for seed_dir in _seed_dirs(run_dir, args.seed):
        batches = load_batches(seed_dir)
        report = kwise_report(batches, state, args.k, dilution=args.dilution,
                              max_iters=args.max_iters, max_subsets=args.max_subsets,
                              seed=args.subset_seed)
        (seed_dir / "tomography_report.txt").write_text(report.to_text())
        (seed_dir / "tomography_summary.csv").write_text(report.summary_csv())
        print(f"[{seed_dir.name}]")
        sys.stdout.write(report.summary_csv())
    return 0


def cmd_extrapolate(args: argparse.Namespace) -> int:
    trace = Trace.read(args.trace)
    print(repr(extrapolate_shots(trace, args.target)))
    return 0


def _read_points(path: str) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]
    if not rows:
        raise AnalysisError(f"{path}: no data rows")
    data = np.array([[float(r[0]), float(r[1])] for r in rows])
    return data[:, 0], data[:, 1]


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def cmd_fit(args: argparse.Namespace) -> int:
    n, s = _read_points(args.points)
    levels = np.unique(n)
    means = np.array([s[n == level].mean() for level in levels])
    fit = fit_power_law(levels, means) if len(levels) < len(n) else fit_power_law(n, s)
    print(f"a={fit.a!r} a_stderr={fit.a_stderr!r}")
    print(f"b={fit.b!r} b_stderr={fit.b_stderr!r}")
    print(f"max_abs_log_residual={float(np.max(np.abs(fit.residuals)))!r}")
    if len(levels) < len(n):
        ci = bootstrap_exponent(n, s, resamples=args.resamples, seed=args.bootstrap_seed)
        print(f"b_bootstrap_{int(ci.confidence * 100)}=[{ci.low!r}, {ci.high!r}] "
              f"resamples={ci.resamples}")
    return 0


def cmd_gen_hamiltonian(args: argparse.Namespace) -> int:
    if args.model == "tfim":
        obs = transverse_field_ising(args.qubits, args.coupling[0], args.field, args.periodic)
    else:
        coupling = args.coupling * 3 if len(args.coupling) == 1 else args.coupling
        if len(coupling) != 3:
            raise ConfigError("heisenberg coupling takes one or three values")
        obs = heisenberg_chain(args.qubits, coupling, args.field, args.periodic)
    text = obs.dumps()
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def bloch_rows(params: PovmParams, t: int) -> list[list]:
    rows = []
    for q, local in enumerate(params.local_povms()):
        for i, effect in enumerate(local.effects):
            rows.append([t, q, i, *(repr(float(v)) for v in effect_to_bloch(effect))])
    return rows


def cmd_export_bloch(args: argparse.Namespace) -> int:
    if args.params:
        entries = [(1, PovmParams.load(args.params))]
    else:
        if not args.run_dir:
            raise ConfigError("give a run directory or --params")
        seed_dir = _seed_dirs(Path(args.run_dir), args.seed)[0]
        files = sorted((seed_dir / "povm").glob("iter_*.txt"))
        if not files:
            raise RunError(f"{seed_dir} has no POVM parameter files")
        entries = [(int(p.stem.split("_")[1]), PovmParams.load(p)) for p in files]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "qubit", "effect", "rx", "ry", "rz"])
    for t, params in entries:
        writer.writerows(bloch_rows(params, t))
    if args.output:
        Path(args.output).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adaptive-povm",
                                     description="Adaptive IC-POVM estimation of Pauli observables.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="estimate an observable with one method over several seeds")
    p.add_argument("--config", help="JSON config; flags below override it")
    p.add_argument("--obs", help="observable text file")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--ansatz", help="ansatz JSON written by vqe-train")
    p.add_argument("--depth", type=int, help="ansatz depth when training on the fly")
    p.add_argument("--shots", type=int, help="total shot budget")
    p.add_argument("--target-error", type=float)
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--seed", type=int, action="append", help="seed (repeatable)")
    p.add_argument("--seeds", type=int, help="use seeds 0..N-1")
    p.add_argument("--out", help="run directory")
    p.add_argument("--x0", help="initial POVM parameter file for adaptive methods")
    p.add_argument("--schedule", action="append", metavar="KEY=VALUE",
                   help="schedule override, e.g. initial_shots=2000")
    p.add_argument("--discard-first", type=int, help="leave the first T records out of the mixture")
    p.add_argument("--no-persist", action="store_true", help="do not store outcome batches")
    p.add_argument("--jobs", type=int, help="parallel seed workers")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("vqe-train", help="train the ansatz to the ground state")
    p.add_argument("--obs", required=True)
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=1e-4)
    p.add_argument("--max-sweeps", type=int, default=500)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_vqe_train)

    p = sub.add_parser("tomography", help="k-wise reduced-state tomography from stored batches")
    p.add_argument("run_dir")
    p.add_argument("--k", type=int, required=True, help="largest subset size")
    p.add_argument("--seed", type=int, help="only this seed (default: all)")
    p.add_argument("--dilution", type=float, default=0.1)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--max-subsets", type=int, default=20)
    p.add_argument("--subset-seed", type=int, default=0)
    p.set_defaults(func=cmd_tomography)

    p = sub.add_parser("extrapolate", help="shots needed to reach a target error")
    p.add_argument("trace")
    p.add_argument("--target", type=float, required=True)
    p.set_defaults(func=cmd_extrapolate)

    p = sub.add_parser("fit", help="fit S = a N^b to a CSV of (N, S) rows")
    p.add_argument("points")
    p.add_argument("--resamples", type=int, default=1000)
    p.add_argument("--bootstrap-seed", type=int, default=0)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("gen-hamiltonian", help="write a spin-chain Hamiltonian")
    p.add_argument("model", choices=("tfim", "heisenberg"))
    p.add_argument("--qubits", type=int, required=True)
    p.add_argument("--coupling", type=float, nargs="+", default=[1.0])
    p.add_argument("--field", type=float, default=1.0)
    p.add_argument("--periodic", action="store_true")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_gen_hamiltonian)

    p = sub.add_parser("export-bloch", help="Bloch vectors of every effect along a run")
    p.add_argument("run_dir", nargs="?")
    p.add_argument("--seed", type=int)
    p.add_argument("--params", help="single POVM parameter file instead of a run")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_export_bloch)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
