"""Pauli-string observables and qubit-wise commuting grouping.

Text format, one term per line::

    # comment
    -0.5  XIZ
    1.25  ZZI

Character ``j`` of the label acts on qubit ``j``.  Duplicate labels are merged.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAULI_CODES = {"I": 0, "X": 1, "Y": 2, "Z": 3}
PAULI_LABELS = "IXYZ"


class ObservableError(ValueError):
    pass


def weight(label: str) -> int:
    return sum(ch != "I" for ch in label)


@dataclass(frozen=True)
class PauliObservable:
    """``O = sum_k c_k P_k`` with real coefficients and unique labels."""

    coeffs: tuple[float, ...]
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.coeffs) != len(self.labels):
            raise ObservableError("coefficient and label counts differ")
        if not self.labels:
            raise ObservableError("observable has no terms")
        n = len(self.labels[0])
        if n == 0:
            raise ObservableError("empty Pauli label")
        for lab in self.labels:
            if len(lab) != n:
                raise ObservableError(f"inconsistent label lengths: {self.labels[0]!r} vs {lab!r}")
            if set(lab) - set(PAULI_LABELS):
                raise ObservableError(f"invalid Pauli label {lab!r}")
        if len(set(self.labels)) != len(self.labels):
            raise ObservableError("duplicate Pauli labels")

    @classmethod
    def from_terms(cls, terms: Iterable[tuple[float, str]]) -> "PauliObservable":
        """Build from ``(coefficient, label)`` pairs, merging repeated labels."""
        merged: dict[str, float] = {}
        for coeff, label in terms:
            label = label.strip().upper()
            merged[label] = merged.get(label, 0.0) + float(coeff)
        return cls(tuple(merged.values()), tuple(merged.keys()))

    @property
    def num_qubits(self) -> int:
        return len(self.labels[0])

    @property
    def num_terms(self) -> int:
        return len(self.labels)

    @property
    def coeff_array(self) -> np.ndarray:
        return np.array(self.coeffs, dtype=float)

    @property
    def codes(self) -> np.ndarray:
        """Integer table ``(K, N)`` with I, X, Y, Z mapped to 0..3."""
        return np.array([[PAULI_CODES[ch] for ch in lab] for lab in self.labels], dtype=np.intp)

    @property
    def identity_offset(self) -> float:
        return sum(c for c, lab in zip(self.coeffs, self.labels) if weight(lab) == 0)

    def non_identity(self) -> list[int]:
        return [k for k, lab in enumerate(self.labels) if weight(lab) > 0]

    def dumps(self) -> str:
        return "".join(f"{c!r} {lab}\n" for c, lab in zip(self.coeffs, self.labels))

    def scaled(self, factor: float) -> "PauliObservable":
        return PauliObservable(tuple(factor * c for c in self.coeffs), self.labels)

    def __add__(self, other: "PauliObservable") -> "PauliObservable":
        return PauliObservable.from_terms(list(zip(self.coeffs, self.labels))
                                          + list(zip(other.coeffs, other.labels)))

    def to_matrix(self) -> np.ndarray:
        """Dense ``2^N x 2^N`` matrix with qubit 0 as the least significant bit."""
        from .simulator import pauli_matrix

        dim = 2 ** self.num_qubits
        out = np.zeros((dim, dim), dtype=complex)
        for c, lab in zip(self.coeffs, self.labels):
            out += c * pauli_matrix(lab)
        return out


def parse_observable(text: str) -> PauliObservable:
    terms = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ObservableError(f"line {lineno}: expected '<coefficient> <label>', got {raw!r}")
        try:
            coeff = float(parts[0])
        except ValueError:
            raise ObservableError(f"line {lineno}: malformed coefficient {parts[0]!r}") from None
        terms.append((coeff, parts[1]))
    if not terms:
        raise ObservableError("observable text contains no terms")
    return PauliObservable.from_terms(terms)


def load_observable(path: str | Path) -> PauliObservable:
    return parse_observable(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class PauliGrouping:
    """Partition of term indices into qubit-wise commuting groups.

    ``bases[g][q]`` is the measurement basis letter of group ``g`` on qubit
    ``q``, or ``"I"`` when no member acts there.
    """

    groups: tuple[tuple[int, ...], ...]
    bases: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.groups)


def qubitwise_compatible(a: str, b: str) -> bool:
    return all(x == y or x == "I" or y == "I" for x, y in zip(a, b))


def _merge_basis(basis: list[str], label: str) -> None:
    for q, ch in enumerate(label):
        if ch != "I":
            basis[q] = ch


def group_qubitwise(obs: PauliObservable) -> PauliGrouping:
    """Greedy first-fit grouping, visiting terms by decreasing ``|c_k|``.

    Identity terms join the first group (they are compatible with everything).
    Ties in ``|c_k|`` keep input order.
    """
    order = sorted(range(obs.num_terms), key=lambda k: -abs(obs.coeffs[k]))
    groups: list[list[int]] = []
    bases: list[list[str]] = []
    for k in order:
        label = obs.labels[k]
        for members, basis in zip(groups, bases):
            if qubitwise_compatible("".join(basis), label):
                members.append(k)
                _merge_basis(basis, label)
                break
        else:
            basis = ["I"] * obs.num_qubits
            _merge_basis(basis, label)
            groups.append([k])
            bases.append(basis)
    return PauliGrouping(tuple(tuple(g) for g in groups), tuple("".join(b) for b in bases))


def transverse_field_ising(num_qubits: int, coupling: float = 1.0, field: float = 1.0,
                           periodic: bool = False) -> PauliObservable:
    """``H = -J sum Z_i Z_{i+1} - h sum X_i`` on a chain."""
    terms = []
    bonds = _chain_bonds(num_qubits, periodic)
    for i, j in bonds:
        terms.append((-coupling, _two_site(num_qubits, i, j, "Z")))
    for i in range(num_qubits):
        terms.append((-field, _one_site(num_qubits, i, "X")))
    return PauliObservable.from_terms(terms)


def heisenberg_chain(num_qubits: int, coupling: Sequence[float] = (1.0, 1.0, 1.0),
                     field: float = 0.0, periodic: bool = False) -> PauliObservable:
    """``H = sum_bonds (Jx XX + Jy YY + Jz ZZ) + h sum Z_i``."""
    terms = []
    for i, j in _chain_bonds(num_qubits, periodic):
        for jc, p in zip(coupling, "XYZ"):
            if jc:
                terms.append((jc, _two_site(num_qubits, i, j, p)))
    if field:
        for i in range(num_qubits):
            terms.append((field, _one_site(num_qubits, i, "Z")))
    return PauliObservable.from_terms(terms)


def _chain_bonds(n: int, periodic: bool) -> list[tuple[int, int]]:
    if n < 2:
        raise ObservableError("chains need at least two qubits")
    bonds = [(i, i + 1) for i in range(n - 1)]
    if periodic and n > 2:
        bonds.append((n - 1, 0))
    return bonds


def _one_site(n: int, i: int, p: str) -> str:
    lab = ["I"] * n
    lab[i] = p
    return "".join(lab)


def _two_site(n: int, i: int, j: int, p: str) -> str:
    lab = ["I"] * n
    lab[i] = lab[j] = p
    return "".join(lab)
