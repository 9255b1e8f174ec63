"""Dense statevector simulation for R_y / CNOT ansatz circuits.

Qubit ``q`` is bit ``q`` of the amplitude index (qubit 0 is least significant).
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from .observables import PAULI_CODES, PauliObservable

logger = logging.getLogger(__name__)

DENSE_LIMIT = 12


class SimulatorError(ValueError):
    pass


def ry_matrix(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)


@dataclass(frozen=True)
class StateVector:
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        amps = np.asarray(self.amplitudes, dtype=complex).ravel()
        n = int(round(np.log2(len(amps)))) if len(amps) else -1
        if n < 1 or 2 ** n != len(amps):
            raise SimulatorError(f"amplitude count {len(amps)} is not a power of two >= 2")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def num_qubits(self) -> int:
        return int(np.log2(len(self.amplitudes)))

    @classmethod
    def zero(cls, num_qubits: int) -> "StateVector":
        amps = np.zeros(2 ** num_qubits, dtype=complex)
        amps[0] = 1.0
        return cls(amps)

    @classmethod
    def random(cls, num_qubits: int, rng: np.random.Generator) -> "StateVector":
        amps = rng.normal(size=2 ** num_qubits) + 1j * rng.normal(size=2 ** num_qubits)
        return cls(amps / np.linalg.norm(amps))

    @classmethod
    def product(cls, kets: Sequence[Sequence[complex]]) -> "StateVector":
        """Tensor product with ``kets[q]`` on qubit ``q``."""
        amps = np.array([1.0], dtype=complex)
        for ket in kets:
            amps = np.kron(np.asarray(ket, dtype=complex), amps)
        return cls(amps / np.linalg.norm(amps))

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def density_matrix(self) -> np.ndarray:
        return np.outer(self.amplitudes, self.amplitudes.conj())


def apply_single_qubit(amps: np.ndarray, gate: np.ndarray, qubit: int, num_qubits: int) -> np.ndarray:
    tensor = amps.reshape(2 ** (num_qubits - qubit - 1), 2, 2 ** qubit)
    return np.einsum("ab,xby->xay", gate, tensor).reshape(-1)


def apply_cnot(amps: np.ndarray, control: int, target: int, num_qubits: int) -> np.ndarray:
    if control == target:
        raise SimulatorError("CNOT control and target coincide")
    idx = np.arange(2 ** num_qubits)
    flipped = np.where((idx >> control) & 1, idx ^ (1 << target), idx)
    return amps[flipped]


@dataclass
class AnsatzCircuit:
    """Hardware-efficient ansatz: an R_y layer, then ``depth`` x (CNOT block + R_y layer).

    ``theta[layer * N + q]`` is the angle of the R_y on qubit ``q`` in that layer.
    """

    num_qubits: int
    depth: int
    theta: np.ndarray = field(default=None)  # type: ignore[assignment]
    entangler_map: list[tuple[int, int]] | None = None
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.entangler_map is None:
            self.entangler_map = [(i, i + 1) for i in range(self.num_qubits - 1)]
        self.entangler_map = [tuple(p) for p in self.entangler_map]
        if self.theta is None:
            self.theta = np.zeros(self.num_parameters)
        self.theta = np.asarray(self.theta, dtype=float).ravel()

    @property
    def num_parameters(self) -> int:
        return self.num_qubits * (self.depth + 1)

    def with_theta(self, theta: Sequence[float]) -> "AnsatzCircuit":
        return AnsatzCircuit(self.num_qubits, self.depth, np.array(theta, dtype=float),
                             list(self.entangler_map), self.seed)

    def to_json(self) -> str:
        data = asdict(self)
        data["theta"] = [float(t) for t in self.theta]
        data["entangler_map"] = [list(p) for p in self.entangler_map]
        return json.dumps(data, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "AnsatzCircuit":
        data = json.loads(text)
        return cls(data["num_qubits"], data["depth"], np.array(data["theta"], dtype=float),
                   [tuple(p) for p in data["entangler_map"]], data.get("seed"))


def prepare_ansatz_state(circuit: AnsatzCircuit) -> StateVector:
    n = circuit.num_qubits
    theta = circuit.theta
    if len(theta) != circuit.num_parameters:
        raise SimulatorError(f"ansatz expects {circuit.num_parameters} angles, got {len(theta)}")
    amps = StateVector.zero(n).amplitudes.copy()
    for layer in range(circuit.depth + 1):
        if layer > 0:
            for control, target in circuit.entangler_map:
                amps = apply_cnot(amps, control, target, n)
        for q in range(n):
            amps = apply_single_qubit(amps, ry_matrix(theta[layer * n + q]), q, n)
    return StateVector(amps)


def _pauli_masks(label: str) -> tuple[int, int, int]:
    x_mask = z_mask = n_y = 0
    for q, ch in enumerate(label):
        code = PAULI_CODES[ch]
        if code in (1, 2):
            x_mask |= 1 << q
        if code in (2, 3):
            z_mask |= 1 << q
        if code == 2:
            n_y += 1
    return x_mask, z_mask, n_y


def _parity(values: np.ndarray) -> np.ndarray:
    return (np.bitwise_count(values) & 1).astype(np.int64)


def apply_pauli(amps: np.ndarray, label: str) -> np.ndarray:
    """``P |psi>`` for a Pauli label, using ``Y = i X Z`` per qubit."""
    x_mask, z_mask, n_y = _pauli_masks(label)
    idx = np.arange(len(amps))
    phase = (1j ** n_y) * (1 - 2 * _parity(idx & z_mask))
    out = np.empty_like(amps)
    out[idx ^ x_mask] = phase * amps
    return out


def pauli_expectation(state: StateVector, label: str) -> float:
    amps = state.amplitudes
    return float(np.real(np.vdot(amps, apply_pauli(amps, label))))


def exact_expectation(state: StateVector, obs: PauliObservable) -> float:
    if obs.num_qubits != state.num_qubits:
        raise SimulatorError(f"observable acts on {obs.num_qubits} qubits, state has {state.num_qubits}")
    return float(sum(c * pauli_expectation(state, lab) for c, lab in zip(obs.coeffs, obs.labels)))


def pauli_matrix(label: str) -> np.ndarray:
    dim = 2 ** len(label)
    x_mask, z_mask, n_y = _pauli_masks(label)
    idx = np.arange(dim)
    mat = np.zeros((dim, dim), dtype=complex)
    mat[idx ^ x_mask, idx] = (1j ** n_y) * (1 - 2 * _parity(idx & z_mask))
    return mat


def sparse_operator(obs: PauliObservable) -> sparse.csr_matrix:
    """Observable as a sparse matrix with ``K * 2^N`` stored entries at most."""
    dim = 2 ** obs.num_qubits
    idx = np.arange(dim)
    rows, cols, vals = [], [], []
    for c, lab in zip(obs.coeffs, obs.labels):
        x_mask, z_mask, n_y = _pauli_masks(lab)
        rows.append(idx ^ x_mask)
        cols.append(idx)
        vals.append(c * (1j ** n_y) * (1 - 2 * _parity(idx & z_mask)))
    return sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(dim, dim)).tocsr()


def ground_energy_dense(obs: PauliObservable, dense_limit: int = DENSE_LIMIT) -> float:
    """Smallest eigenvalue of the Hamiltonian matrix.

    Below 10 qubits this is a dense Hermitian eigensolve; larger matrices are
    handed to Lanczos in sparse form.
    """
    n = obs.num_qubits
    if n > dense_limit:
        raise SimulatorError(f"{n} qubits exceeds the dense limit of {dense_limit}")
    if n < 10:
        return float(np.linalg.eigvalsh(obs.to_matrix())[0])
    from scipy.sparse.linalg import eigsh

    return float(eigsh(sparse_operator(obs), k=1, which="SA", return_eigenvectors=False)[0])


def _kept_axes(keep: Iterable[int], num_qubits: int) -> list[int]:
    keep = sorted(set(int(q) for q in keep))
    if not keep or keep[0] < 0 or keep[-1] >= num_qubits:
        raise SimulatorError(f"invalid qubit subset {keep} for {num_qubits} qubits")
    return keep


def partial_trace(state: StateVector | np.ndarray, keep: Iterable[int]) -> np.ndarray:
    """Reduced density matrix on ``keep``; the lowest kept qubit is the least significant bit."""
    amps = state.amplitudes if isinstance(state, StateVector) else np.asarray(state).ravel()
    n = int(np.log2(len(amps)))
    kept = _kept_axes(keep, n)
    # tensor axis a holds qubit n - 1 - a
    tensor = amps.reshape((2,) * n)
    row_axes = [n - 1 - q for q in reversed(kept)]
    other = [a for a in range(n) if a not in row_axes]
    mat = np.transpose(tensor, row_axes + other).reshape(2 ** len(kept), -1)
    return mat @ mat.conj().T


def partial_trace_density(rho: np.ndarray, qubits: Sequence[int], keep: Iterable[int]) -> np.ndarray:
    """Trace a density matrix on ``qubits`` (sorted labels, lowest = LSB) down to ``keep``."""
    qubits = sorted(qubits)
    k = len(qubits)
    keep = sorted(set(keep))
    if not keep or not set(keep) <= set(qubits):
        raise SimulatorError(f"{keep} is not a nonempty subset of {qubits}")
    pos = [qubits.index(q) for q in keep]
    tensor = rho.reshape((2,) * (2 * k))
    row_axes = [k - 1 - p for p in reversed(pos)]
    traced = [a for a in range(k) if a not in row_axes]
    letters = "abcdefghijklmnopqrstuvwxyz"
    rows = list(letters[:k])
    cols = list(letters[k:2 * k])
    for a in traced:
        cols[a] = rows[a]
    out = "".join(rows[a] for a in row_axes) + "".join(cols[a] for a in row_axes)
    res = np.einsum("".join(rows) + "".join(cols) + "->" + out, tensor)
    d = 2 ** len(keep)
    return res.reshape(d, d)


@dataclass
class VqeResult:
    circuit: AnsatzCircuit
    energy: float
    ground_energy: float
    threshold: float
    converged: bool
    sweeps: int
    evaluations: int

    @property
    def gap(self) -> float:
        return self.energy - self.ground_energy


def train_vqe(obs: PauliObservable, circuit: AnsatzCircuit, *, threshold: float = 1e-4,
              max_sweeps: int = 500, restarts: int = 8, seed: int = 0,
              dense_limit: int = DENSE_LIMIT) -> VqeResult:
    """Sequential single-angle minimization of the energy.

    With one R_y per angle the energy is ``C + A cos(theta_j - phi)`` along
    each coordinate, so three evaluations locate the exact coordinate minimum.
    Sweeps repeat until the energy is within ``threshold`` of the exact ground
    energy, stalls, or ``max_sweeps`` is used up; restarts draw fresh random
    angles from the seeded generator.  Never raises on non-convergence.
    """
    if obs.num_qubits != circuit.num_qubits:
        raise SimulatorError("observable and circuit qubit counts differ")
    e0 = ground_energy_dense(obs, dense_limit)
    op = sparse_operator(obs)
    work = circuit.with_theta(circuit.theta)
    evals = 0

    def energy_of(theta: np.ndarray) -> float:
        nonlocal evals
        evals += 1
        work.theta = theta
        amps = prepare_ansatz_state(work).amplitudes
        return float(np.real(np.vdot(amps, op @ amps)))

    rng = np.random.default_rng(seed)
    best_theta = np.array(circuit.theta, dtype=float)
    best = energy_of(best_theta)
    total_sweeps = 0
    for attempt in range(restarts):
        if best - e0 <= threshold:
            break
        theta = best_theta.copy() if attempt == 0 else rng.uniform(-np.pi, np.pi, work.num_parameters)
        energy = energy_of(theta)
        for _ in range(max_sweeps):
            total_sweeps += 1
            previous = energy
            for j in range(len(theta)):
                base = theta[j]
                e_p = energy_of(_shifted(theta, j, base + np.pi / 2))
                e_m = energy_of(_shifted(theta, j, base - np.pi / 2))
                # E(base + t) = C + A cos(t - phi), minimal at t = phi + pi
                phi = np.arctan2(e_p - e_m, 2 * energy - e_p - e_m)
                theta[j] = (base + phi + 2 * np.pi) % (2 * np.pi) - np.pi
                energy = energy_of(theta)
            if energy - e0 <= threshold * 1e-2 or previous - energy < 1e-13:
                break
        if energy < best:
            best, best_theta = energy, theta.copy()
        logger.debug("vqe restart %d: energy %.10f (ground %.10f)", attempt, energy, e0)
    result = circuit.with_theta(best_theta)
    result.seed = seed
    return VqeResult(result, best, e0, threshold, best - e0 <= threshold, total_sweeps, evals)


def _shifted(theta: np.ndarray, j: int, value: float) -> np.ndarray:
    out = theta.copy()
    out[j] = value
    return out
