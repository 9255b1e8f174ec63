"""Parametrized single-qubit rank-1 POVMs realised by a qubit-ancilla unitary.

Each qubit is measured through a two-qubit unitary ``U`` acting on the system
qubit and an ancilla prepared in ``|0>``, followed by a computational-basis
readout of both.  Outcome ``i = 2*b_q + b_a`` corresponds to the effect
``|pi_i><pi_i|`` with ``|pi_i> = sum_k conj(U[i, 2k]) |k>``.

Eight numbers in ``(0, 1)`` fix the measurement: three hyperspherical angles
for the real column ``u0 = U[:, 0]`` and five for ``u1 = U[:, 2]``, which is
built in an orthonormal complement of ``u0``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

NUM_PARAMS = 8
DEFAULT_DELTA = 0.05
GRAM_CONDITION_LIMIT = 1e8

PAULIS = np.array(
    [
        [[1, 0], [0, 1]],
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=complex,
)


class PovmError(ValueError):
    """Raised for POVMs that cannot be used for estimation."""


def hypersphere_point(angles: Sequence[float]) -> np.ndarray:
    """Euclidean coordinates of a unit-sphere point from hyperspherical angles.

    ``n`` angles give a point on ``S^n`` in ``R^(n+1)``; the last angle is the
    azimuth.
    """
    angles = np.asarray(angles, dtype=float)
    out = np.empty(len(angles) + 1)
    sin_prod = 1.0
    for j, a in enumerate(angles):
        out[j] = sin_prod * np.cos(a)
        sin_prod *= np.sin(a)
    out[-1] = sin_prod
    return out


def _gram_schmidt_complete(columns: list[np.ndarray], dim: int = 4) -> list[np.ndarray]:
    """Extend orthonormal ``columns`` to a basis using canonical seeds in index order."""
    basis = [c for c in columns]
    for j in range(dim):
        if len(basis) == dim:
            break
        v = np.zeros(dim, dtype=complex)
        v[j] = 1.0
        for b in basis:
            v = v - np.vdot(b, v) * b
        norm = np.linalg.norm(v)
        if norm < 1e-8:
            continue
        basis.append(v / norm)
    return basis


def params_to_unitary(x: Sequence[float]) -> np.ndarray:
    """Build the 4x4 dilation unitary for one qubit from its 8 parameters.

    Rows and columns are indexed ``2*system + ancilla``.  Column 0 is the real
    unit vector on ``S^3`` given by angles ``(pi x0, pi x1, 2 pi x2)``;
    column 2 is ``sum_k z_k u_perp_k`` where ``z`` comes from the ``S^5`` point
    at angles ``(pi x3, ..., pi x6, 2 pi x7)``.  Columns 1 and 3 complete the
    unitary and do not affect the measurement.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (NUM_PARAMS,):
        raise ValueError(f"expected {NUM_PARAMS} parameters, got shape {x.shape}")
    u0 = hypersphere_point(np.pi * np.array([x[0], x[1], 2 * x[2]])).astype(complex)
    r = hypersphere_point(np.pi * np.array([x[3], x[4], x[5], x[6], 2 * x[7]]))
    z = r[0::2] + 1j * r[1::2]
    perp = _gram_schmidt_complete([u0])[1:]
    u1 = sum(zk * pk for zk, pk in zip(z, perp))
    u2, u3 = _gram_schmidt_complete([u0, u1])[2:]
    unitary = np.empty((4, 4), dtype=complex)
    unitary[:, 0] = u0
    unitary[:, 1] = u2
    unitary[:, 2] = u1
    unitary[:, 3] = u3
    return unitary


@dataclass(frozen=True, eq=False)
class LocalPovm:
    """Four rank-1 effects ``|pi_i><pi_i|`` on one qubit.

    ``vectors[i]`` is the (subnormalized) ket ``|pi_i>``.
    """

    vectors: np.ndarray
    unitary: np.ndarray | None = None

    def __post_init__(self) -> None:
        vecs = np.asarray(self.vectors, dtype=complex)
        if vecs.shape != (4, 2):
            raise ValueError(f"expected four 2-vectors, got shape {vecs.shape}")
        vecs.setflags(write=False)
        object.__setattr__(self, "vectors", vecs)

    @cached_property
    def effects(self) -> np.ndarray:
        v = self.vectors
        return np.einsum("ia,ib->iab", v, v.conj())

    def completeness_error(self) -> float:
        return float(np.max(np.abs(self.effects.sum(axis=0) - np.eye(2))))

    @classmethod
    def from_unitary(cls, unitary: np.ndarray, atol: float = 1e-8) -> "LocalPovm":
        return unitary_to_effects(unitary, atol=atol)

    @classmethod
    def from_params(cls, x: Sequence[float]) -> "LocalPovm":
        return unitary_to_effects(params_to_unitary(x))


def unitary_to_effects(unitary: np.ndarray, atol: float = 1e-8) -> LocalPovm:
    """Read the four effect vectors off the ancilla-``|0>`` columns of ``unitary``."""
    unitary = np.asarray(unitary, dtype=complex)
    if unitary.shape != (4, 4):
        raise ValueError("dilation unitary must be 4x4")
    err = np.max(np.abs(unitary.conj().T @ unitary - np.eye(4)))
    if err > atol:
        raise PovmError(f"matrix is not unitary (max deviation {err:.2e})")
    vectors = unitary[:, [0, 2]].conj()
    return LocalPovm(vectors, unitary)


def sic_povm(variant: int = 1) -> LocalPovm:
    """Single-qubit SIC POVM.

    Variant 1 has its first effect along ``|0>``; variant 2 points along the
    cube diagonals, so every dual coefficient for a Pauli is ``+-sqrt(3)``.
    """
    if variant == 1:
        kets = [np.array([1.0, 0.0], dtype=complex)]
        for k in (1, 2, 3):
            phase = np.exp(2j * np.pi * (k - 1) / 3)
            kets.append(np.array([1.0, np.sqrt(2) * phase]) / np.sqrt(3))
        return LocalPovm(np.array(kets) / np.sqrt(2))
    if variant == 2:
        directions = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]]) / np.sqrt(3)
        return LocalPovm(np.array([_bloch_ket(q) for q in directions]) / np.sqrt(2))
    raise ValueError(f"unknown SIC variant {variant!r}")


def _bloch_ket(q: np.ndarray) -> np.ndarray:
    theta = np.arccos(np.clip(q[2], -1.0, 1.0))
    phi = np.arctan2(q[1], q[0])
    return np.array([np.cos(theta / 2), np.exp(1j * phi) * np.sin(theta / 2)])


def _gram(effects: np.ndarray) -> np.ndarray:
    return np.real(np.einsum("iab,jba->ij", effects, effects))


def _expand_in(targets: np.ndarray, basis_effects: np.ndarray) -> np.ndarray:
    """Real coefficients ``c`` with ``targets[r] = sum_m c[r, m] basis_effects[m]``."""
    gram = _gram(basis_effects)
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > GRAM_CONDITION_LIMIT:
        raise PovmError(f"POVM is not informationally complete (Gram condition {cond:.2e})")
    overlaps = np.real(np.einsum("rab,mba->rm", targets, basis_effects))
    return np.linalg.solve(gram, overlaps.T).T


def dual_table(povm: LocalPovm) -> np.ndarray:
    """``b[k, m]`` such that ``sigma_k = sum_m b[k, m] Pi_m`` for ``k`` in I, X, Y, Z."""
    table = _expand_in(PAULIS, povm.effects)
    # completeness makes the identity row exactly ones; pin it against rounding
    table[0] = 1.0
    return table


def cross_dual_table(new: LocalPovm, old: LocalPovm) -> np.ndarray:
    """``d[r, m]`` such that ``Gamma_r = sum_m d[r, m] Pi_m`` (new effects in the old ones)."""
    return _expand_in(new.effects, old.effects)


def effect_to_bloch(effect: np.ndarray) -> np.ndarray:
    """Map an effect to ``r = (Tr[E X], Tr[E Y], Tr[E Z])``.

    For rank-1 effects the inverse is ``E = (|r| I + r . sigma) / 2``.
    """
    effect = np.asarray(effect)
    return np.real(np.einsum("kab,ba->k", PAULIS[1:], effect))


def bloch_to_effect(r: Sequence[float]) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return (np.linalg.norm(r) * PAULIS[0] + np.einsum("k,kab->ab", r, PAULIS[1:])) / 2


@dataclass
class PovmParams:
    """Per-qubit parameter rows, each entry kept inside ``[delta, 1 - delta]``."""

    values: np.ndarray
    delta: float = DEFAULT_DELTA
    provenance: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[1] != NUM_PARAMS:
            raise ValueError(f"parameter rows must have {NUM_PARAMS} entries")
        if not 0 <= self.delta < 0.5:
            raise ValueError("delta must lie in [0, 0.5)")

    @property
    def num_qubits(self) -> int:
        return self.values.shape[0]

    def in_box(self, atol: float = 1e-12) -> bool:
        v = self.values
        return bool(np.all(v >= self.delta - atol) and np.all(v <= 1 - self.delta + atol))

    def clamped(self) -> "PovmParams":
        return PovmParams(np.clip(self.values, self.delta, 1 - self.delta), self.delta,
                          dict(self.provenance))

    def local_povms(self) -> list[LocalPovm]:
        return [LocalPovm.from_params(row) for row in self.values]

    def digest(self) -> str:
        return params_digest(self.values)

    @classmethod
    def tiled(cls, row: Sequence[float], num_qubits: int, delta: float = DEFAULT_DELTA,
              **provenance) -> "PovmParams":
        return cls(np.tile(np.asarray(row, dtype=float), (num_qubits, 1)), delta, provenance)

    @classmethod
    def sic(cls, variant: int, num_qubits: int) -> "PovmParams":
        row = load_sic_params(variant)
        return cls(np.tile(row.values[0], (num_qubits, 1)), row.delta, dict(row.provenance))

    def dumps(self) -> str:
        lines = [f"# delta={self.delta!r}"]
        for key, val in self.provenance.items():
            lines.append(f"# {key}={val}")
        for row in self.values:
            lines.append(" ".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "PovmParams":
        delta = DEFAULT_DELTA
        provenance: dict = {}
        rows = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                if key == "delta":
                    delta = float(val)
                else:
                    provenance[key] = val
                continue
            rows.append([float(tok) for tok in line.split()])
        if not rows:
            raise ValueError("parameter file has no rows")
        return cls(np.array(rows), delta, provenance)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path: str | Path) -> "PovmParams":
        return cls.loads(Path(path).read_text())


def params_digest(values: np.ndarray) -> str:
    data = np.ascontiguousarray(np.asarray(values, dtype=np.float64)).tobytes()
    return hashlib.sha256(data).hexdigest()[:12]


def load_sic_params(variant: int) -> PovmParams:
    """Shipped parameter row reproducing SIC variant 1 or 2."""
    ref = resources.files("adaptive_povm") / "data" / f"sic{variant}.txt"
    return PovmParams.loads(ref.read_text())


@dataclass
class FitResult:
    x: np.ndarray
    residual: float
    success: bool


def _effects_residual(x: np.ndarray, target: np.ndarray) -> float:
    return float(np.sum(np.abs(LocalPovm.from_params(x).effects - target) ** 2))


def fit_params(target: LocalPovm, *, starts: int = 32, seed: int = 0,
               delta: float = DEFAULT_DELTA, tol: float = 1e-8,
               fail_above: float = 1e-6) -> FitResult:
    """Find a parameter row whose effects match ``target`` in Frobenius norm.

    Multi-start bounded quasi-Newton search inside ``[delta, 1 - delta]^8``;
    stops early once the squared residual drops below ``tol``.
    """
    rng = np.random.default_rng(seed)
    target_effects = target.effects
    bounds = [(delta, 1 - delta)] * NUM_PARAMS
    best_x, best_res = None, np.inf
    for _ in range(starts):
        x0 = rng.uniform(delta, 1 - delta, NUM_PARAMS)
        res = minimize(_effects_residual, x0, args=(target_effects,), method="L-BFGS-B",
                       bounds=bounds, options={"ftol": 1e-16, "gtol": 1e-12, "maxiter": 2000})
        if res.fun < best_res:
            best_x, best_res = res.x, float(res.fun)
        if best_res < tol * 1e-3:
            break
    return FitResult(np.asarray(best_x), best_res, best_res <= fail_above)
