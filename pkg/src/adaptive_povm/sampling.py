"""Outcome sampling for product POVMs and Pauli-basis measurements.

Random numbers come from fixed-size shot blocks, each with its own stream
derived from ``(seed, *key, block)``.  A batch therefore depends only on the
seed, never on how blocks are scheduled.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .povm import LocalPovm, PovmParams, params_digest
from .simulator import StateVector, apply_single_qubit

BLOCK_SHOTS = 4096
ENUMERATION_LIMIT = 8
_ZERO_FLOOR = 1e-14


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class SeedKey:
    """Root seed plus a spawn path, e.g. ``SeedKey(7, (3,))`` for iteration 3 of seed 7."""

    seed: int
    path: tuple[int, ...] = ()

    def child(self, *path: int) -> "SeedKey":
        return SeedKey(self.seed, self.path + tuple(int(p) for p in path))

    def generator(self, *path: int) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path + tuple(path))
        return np.random.Generator(np.random.Philox(ss))

    def __str__(self) -> str:
        return ":".join(str(v) for v in (self.seed,) + self.path)


def as_seed_key(seed: int | SeedKey) -> SeedKey:
    return seed if isinstance(seed, SeedKey) else SeedKey(int(seed))


def block_uniforms(seed: int | SeedKey, shots: int, width: int) -> np.ndarray:
    """``(shots, width)`` uniforms; row ``s`` depends only on the seed and ``s``."""
    key = as_seed_key(seed)
    out = np.empty((shots, width))
    for block, start in enumerate(range(0, shots, BLOCK_SHOTS)):
        stop = min(start + BLOCK_SHOTS, shots)
        rows = key.generator(block).random((BLOCK_SHOTS, width))
        out[start:stop] = rows[: stop - start]
    return out


@dataclass
class ProductPovm:
    """One local POVM per qubit, optionally tagged with the parameters that built it."""

    locals: list[LocalPovm]
    params: PovmParams | None = None

    @classmethod
    def from_params(cls, params: PovmParams) -> "ProductPovm":
        return cls(params.local_povms(), params)

    @classmethod
    def uniform(cls, local: LocalPovm, num_qubits: int) -> "ProductPovm":
        return cls([local] * num_qubits)

    @property
    def num_qubits(self) -> int:
        return len(self.locals)

    @property
    def vectors(self) -> np.ndarray:
        return np.stack([p.vectors for p in self.locals])

    @property
    def povm_id(self) -> str:
        if self.params is not None:
            return self.params.digest()
        return "v" + params_digest(np.concatenate([self.vectors.real.ravel(), self.vectors.imag.ravel()]))


@dataclass
class OutcomeBatch:
    outcomes: np.ndarray
    povm: ProductPovm
    seed: str = ""

    def __post_init__(self) -> None:
        self.outcomes = np.asarray(self.outcomes, dtype=np.uint8)
        if self.outcomes.ndim != 2:
            raise ValueError("outcomes must be a (shots, qubits) table")
        if self.outcomes.size and self.outcomes.max() > 3:
            raise ValueError("outcome digits must be in 0..3")
        if self.outcomes.shape[1] != self.povm.num_qubits:
            raise ValueError("outcome width does not match the POVM")

    @property
    def shots(self) -> int:
        return self.outcomes.shape[0]

    @property
    def num_qubits(self) -> int:
        return self.outcomes.shape[1]

    @property
    def povm_id(self) -> str:
        return self.povm.povm_id

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# povm_id={self.povm_id}\n# seed={self.seed}\n# shots={self.shots}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["shot", "outcomes"])
        for s, row in enumerate(self.outcomes):
            writer.writerow([s, "".join(str(int(v)) for v in row)])
        return buf.getvalue()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def load(cls, path: str | Path, povm: ProductPovm) -> "OutcomeBatch":
        header: dict[str, str] = {}
        rows = []
        with open(path) as fh:
            for line in fh:
                if line.startswith("#"):
                    key, _, val = line[1:].strip().partition("=")
                    header[key] = val
                    continue
                if line.startswith("shot"):
                    continue
                _, digits = line.strip().split(",")
                rows.append([int(ch) for ch in digits])
        batch = cls(np.array(rows, dtype=np.uint8).reshape(len(rows), povm.num_qubits), povm,
                    header.get("seed", ""))
        if header.get("povm_id") and header["povm_id"] != batch.povm_id:
            raise SamplingError(f"{path}: POVM id {header['povm_id']} does not match {batch.povm_id}")
        if int(header.get("shots", batch.shots)) != batch.shots:
            raise SamplingError(f"{path}: header shot count disagrees with the data")
        return batch


def _qubit_major(amps: np.ndarray, num_qubits: int) -> np.ndarray:
    # (2,)*N tensor indexed [b_0, b_1, ...]
    return amps.reshape((2,) * num_qubits).transpose(tuple(reversed(range(num_qubits))))


def sample_povm(state: StateVector, povm: ProductPovm, shots: int,
                seed: int | SeedKey) -> OutcomeBatch:
    """Draw ``shots`` outcome strings by sequential per-qubit conditional sampling.

    Qubits are measured in ascending order: the four conditional
    probabilities ``||<pi_m| psi'>||^2`` are computed, an outcome is drawn and
    ``<pi_m|`` is contracted onto the remaining state.
    """
    n = state.num_qubits
    if povm.num_qubits != n:
        raise SamplingError(f"POVM has {povm.num_qubits} qubits, state has {n}")
    key = as_seed_key(seed)
    vecs_conj = povm.vectors.conj()  # (N, 4, 2)
    out = np.empty((shots, n), dtype=np.uint8)
    amps = state.amplitudes
    chunk = max(1, min(BLOCK_SHOTS, (1 << 21) // len(amps)))
    uniforms = block_uniforms(key, shots, n)
    for start in range(0, shots, chunk):
        stop = min(start + chunk, shots)
        out[start:stop] = _sample_chunk(amps, vecs_conj, uniforms[start:stop])
    return OutcomeBatch(out, povm, str(key))


def _sample_chunk(amps: np.ndarray, vecs_conj: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    count, n = uniforms.shape
    # psi rows: remaining qubits with the lowest remaining qubit as the last axis
    psi = np.broadcast_to(amps, (count, len(amps)))
    result = np.empty((count, n), dtype=np.uint8)
    rows = np.arange(count)
    for q in range(n):
        psi = psi.reshape(count, -1, 2)
        branches = psi @ vecs_conj[q].T  # (count, rest, 4)
        probs = np.sum(np.abs(branches) ** 2, axis=1)
        totals = probs.sum(axis=1)
        if np.any(totals < _ZERO_FLOOR):
            raise SamplingError("conditional state collapsed to zero norm")
        cdf = np.cumsum(probs, axis=1) / totals[:, None]
        m = np.minimum((uniforms[:, q, None] >= cdf).sum(axis=1), 3)
        # skip zero-probability outcomes that rounding could land on
        m = np.where(probs[rows, m] > 0, m, np.argmax(probs, axis=1))
        result[:, q] = m
        psi = branches[rows, :, m]
        psi = psi / np.sqrt(probs[rows, m])[:, None]
    return result


def enumerate_probabilities(state: StateVector, povm: ProductPovm) -> np.ndarray:
    """Exact outcome probabilities as a ``(4,)*N`` array indexed ``[m_0, ..., m_{N-1}]``."""
    n = state.num_qubits
    if n > ENUMERATION_LIMIT:
        raise SamplingError(f"enumeration is limited to {ENUMERATION_LIMIT} qubits")
    if povm.num_qubits != n:
        raise SamplingError("POVM and state qubit counts differ")
    tensor = _qubit_major(state.amplitudes, n)
    for q, local in enumerate(povm.locals):
        tensor = np.tensordot(local.vectors.conj(), tensor, axes=([1], [q]))
        tensor = np.moveaxis(tensor, 0, q)
    return np.abs(tensor) ** 2


_BASIS_ROTATIONS = {
    "X": np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2),
    "Y": np.array([[1, -1j], [1, 1j]], dtype=complex) / np.sqrt(2),
}


def rotate_to_basis(state: StateVector, basis: str) -> np.ndarray:
    """Amplitudes after mapping each qubit's requested Pauli eigenbasis onto Z."""
    n = state.num_qubits
    if len(basis) != n:
        raise SamplingError("basis string length differs from the qubit count")
    amps = state.amplitudes
    for q, ch in enumerate(basis):
        if ch in _BASIS_ROTATIONS:
            amps = apply_single_qubit(amps, _BASIS_ROTATIONS[ch], q, n)
        elif ch not in "ZI":
            raise SamplingError(f"invalid basis letter {ch!r}")
    return amps


def basis_probabilities(state: StateVector, basis: str) -> np.ndarray:
    return np.abs(rotate_to_basis(state, basis)) ** 2


def sample_pauli_basis(state: StateVector, basis: str, shots: int,
                       seed: int | SeedKey) -> np.ndarray:
    """Computational-basis bits ``(shots, N)`` after rotating into ``basis``.

    Bit 1 on a measured qubit means eigenvalue -1.  Qubits marked ``I`` are
    left unrotated and their bits should be ignored downstream.
    """
    probs = basis_probabilities(state, basis)
    cdf = np.cumsum(probs)
    cdf /= cdf[-1]
    u = block_uniforms(seed, shots, 1)[:, 0]
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)
    n = state.num_qubits
    return ((idx[:, None] >> np.arange(n)) & 1).astype(np.uint8)


def pauli_eigenvalues(bits: np.ndarray, label: str) -> np.ndarray:
    """Per-shot eigenvalue of ``label`` given bits measured in a compatible basis."""
    mask = np.array([ch != "I" for ch in label])
    if not mask.any():
        return np.ones(bits.shape[0])
    return 1.0 - 2.0 * (bits[:, mask].sum(axis=1) % 2)
