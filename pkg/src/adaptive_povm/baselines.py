"""Projective Pauli-basis estimators used as reference points.

``pauli_estimate`` measures every non-identity string in its own basis with
the same number of shots.  ``grouped_pauli_estimate`` measures each
qubit-wise commuting group in one shared basis, again with a uniform number
of shots per group, and its error includes the covariances between members
of a group.  Identity strings cost no shots and add their coefficient exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .observables import PauliGrouping, PauliObservable, group_qubitwise, weight
from .sampling import SeedKey, as_seed_key, basis_probabilities, pauli_eigenvalues, sample_pauli_basis
from .simulator import StateVector, exact_expectation


class BaselineError(ValueError):
    pass


@dataclass
class BaselineResult:
    """Estimate, its predicted error and the shot bookkeeping behind it.

    ``shots`` has one entry per measured unit: non-identity strings for the
    plain method, groups with at least one non-identity member for the
    grouped method.
    """

    method: str
    mean: float
    error: float
    shots: np.ndarray
    units: list[str]
    metadata: dict = field(default_factory=dict)

    @property
    def total_shots(self) -> int:
        return int(np.sum(self.shots))

    @property
    def variance(self) -> float:
        return self.error ** 2


def shots_per_unit(total_shots: int, units: int) -> int:
    """Uniform allocation ``floor(total / units)`` used for equal-budget comparisons."""
    if units <= 0:
        raise BaselineError("nothing to measure")
    per = total_shots // units
    if per < 1:
        raise BaselineError(f"budget {total_shots} cannot give every one of {units} units a shot")
    return per


def _basis_of(label: str) -> str:
    return "".join("Z" if ch == "I" else ch for ch in label)


def _sample_var(values: np.ndarray) -> float:
    if len(values) < 2:
        return float("inf")
    if np.all(values == values[0]):
        return 0.0
    return float(np.var(values, ddof=1))


def pauli_estimate(state: StateVector, obs: PauliObservable, shots_per_term: int,
                   seed: int | SeedKey = 0) -> BaselineResult:
    """Measure each non-identity string separately.

    ``eps^2 = sum_k c_k^2 sampleVar(P_k) / S_k`` with the unbiased sample
    variance; strings are treated as independent.
    """
    if shots_per_term < 1:
        raise BaselineError("shots_per_term must be at least 1")
    key = as_seed_key(seed)
    mean = obs.identity_offset
    var = 0.0
    units: list[str] = []
    for k in obs.non_identity():
        label = obs.labels[k]
        bits = sample_pauli_basis(state, _basis_of(label), shots_per_term, key.child(k))
        vals = pauli_eigenvalues(bits, label)
        c = obs.coeffs[k]
        mean += c * float(vals.mean())
        var += c * c * _sample_var(vals) / shots_per_term
        units.append(label)
    shots = np.full(len(units), shots_per_term, dtype=np.int64)
    meta = {"allocation": "uniform-per-string", "covariance": "not applicable"}
    return BaselineResult("pauli", mean, float(np.sqrt(var)), shots, units, meta)


def _group_members(obs: PauliObservable, group: tuple[int, ...]) -> list[int]:
    return [k for k in group if weight(obs.labels[k]) > 0]


def grouped_pauli_estimate(state: StateVector, obs: PauliObservable, shots_per_group: int,
                           seed: int | SeedKey = 0,
                           grouping: PauliGrouping | None = None) -> BaselineResult:
    """Measure each qubit-wise commuting group in its shared basis.

    The group's contribution per shot is ``sum_{k in g} c_k P_k``; its sample
    variance therefore carries the within-group covariances.
    """
    if shots_per_group < 1:
        raise BaselineError("shots_per_group must be at least 1")
    grouping = grouping if grouping is not None else group_qubitwise(obs)
    covered = sorted(k for g in grouping.groups for k in g)
    if covered != list(range(obs.num_terms)):
        raise BaselineError("grouping does not cover every term exactly once")
    key = as_seed_key(seed)
    mean = obs.identity_offset
    var = 0.0
    units: list[str] = []
    for g, (group, basis) in enumerate(zip(grouping.groups, grouping.bases)):
        members = _group_members(obs, group)
        if not members:
            continue
        bits = sample_pauli_basis(state, _basis_of(basis), shots_per_group, key.child(g))
        per_shot = np.zeros(shots_per_group)
        for k in members:
            per_shot += obs.coeffs[k] * pauli_eigenvalues(bits, obs.labels[k])
        mean += float(per_shot.mean())
        var += _sample_var(per_shot) / shots_per_group
        units.append(basis)
    shots = np.full(len(units), shots_per_group, dtype=np.int64)
    meta = {"allocation": "uniform-per-group", "covariance": "within-group included"}
    return BaselineResult("grouped", mean, float(np.sqrt(var)), shots, units, meta)


def _label_signs(label: str, num_qubits: int) -> np.ndarray:
    """Eigenvalue of ``label`` for every computational basis index."""
    idx = np.arange(2 ** num_qubits)
    mask = sum(1 << q for q, ch in enumerate(label) if ch != "I")
    return 1.0 - 2.0 * (np.bitwise_count(idx & mask) % 2)


def pauli_population_variance(state: StateVector, obs: PauliObservable,
                              shots_per_term: int) -> float:
    """Exact ``sum_k c_k^2 Var(P_k) / S`` for the plain method."""
    total = 0.0
    for k in obs.non_identity():
        label = obs.labels[k]
        probs = basis_probabilities(state, _basis_of(label))
        ev = float(probs @ _label_signs(label, state.num_qubits))
        total += obs.coeffs[k] ** 2 * (1.0 - ev * ev)
    return total / shots_per_term


def grouped_population_variance(state: StateVector, obs: PauliObservable, shots_per_group: int,
                                grouping: PauliGrouping | None = None) -> float:
    """Exact variance of the grouped estimator, covariances included."""
    grouping = grouping if grouping is not None else group_qubitwise(obs)
    n = state.num_qubits
    total = 0.0
    for group, basis in zip(grouping.groups, grouping.bases):
        members = _group_members(obs, group)
        if not members:
            continue
        probs = basis_probabilities(state, _basis_of(basis))
        vals = sum(obs.coeffs[k] * _label_signs(obs.labels[k], n) for k in members)
        m = float(probs @ vals)
        total += float(probs @ (vals * vals)) - m * m
    return total / shots_per_group


def exact_mean(state: StateVector, obs: PauliObservable) -> float:
    return exact_expectation(state, obs)
