"""Reference computations that share no code with the package under test.

Everything here goes through explicit dense matrices: Kronecker products of
2x2 Paulis, full density matrices, and the 2N-qubit dilation circuit.
"""
from __future__ import annotations

import itertools
from functools import reduce

import numpy as np

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
SIGMA = {"I": I2, "X": X, "Y": Y, "Z": Z}


def kron_all(mats):
    return reduce(np.kron, mats, np.eye(1, dtype=complex))


def dense_pauli(label: str) -> np.ndarray:
    """Qubit 0 is the least significant bit, so it is the last Kronecker factor."""
    return kron_all([SIGMA[ch] for ch in reversed(label)])


def dense_observable(coeffs, labels) -> np.ndarray:
    return sum(c * dense_pauli(lab) for c, lab in zip(coeffs, labels))


def dense_partial_trace(rho: np.ndarray, n: int, keep) -> np.ndarray:
    """Trace out every qubit not in ``keep`` one at a time, highest qubit first."""
    keep = sorted(keep)
    current = rho
    qubits = list(range(n))
    for q in sorted(set(range(n)) - set(keep), reverse=True):
        m = len(qubits)
        pos = qubits.index(q)
        # axis order of the reshaped tensor: qubit m-1 ... qubit 0
        axis = m - 1 - pos
        t = current.reshape((2,) * (2 * m))
        t = np.trace(t, axis1=axis, axis2=axis + m)
        current = t.reshape(2 ** (m - 1), 2 ** (m - 1))
        qubits.remove(q)
    return current


def random_density(d: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    rank = d if rank is None else rank
    g = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    q, r = np.linalg.qr(g)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def effects_from_dilation(u: np.ndarray) -> list[np.ndarray]:
    """``Pi_(bq, ba) = <0_a| U^+ |bq ba><bq ba| U |0_a>`` computed as a partial trace.

    The system is the more significant factor of ``|bq ba>``.
    """
    effects = []
    zero_a = np.array([1, 0], dtype=complex)
    embed = np.kron(I2, zero_a[:, None])  # |s> -> |s, 0_a>
    for bq, ba in itertools.product((0, 1), (0, 1)):
        basis = np.zeros(4, dtype=complex)
        basis[2 * bq + ba] = 1
        proj = np.outer(basis, basis)
        effects.append(embed.conj().T @ u.conj().T @ proj @ u @ embed)
    return effects


def dilation_probabilities(amps: np.ndarray, unitaries: list[np.ndarray]) -> np.ndarray:
    """Outcome table of the 2N-qubit dilation circuit, indexed ``[m_0, ..., m_{N-1}]``.

    Every system qubit gets its own ancilla in ``|0>``; the pair (q, a_q) is
    rotated by ``U_q`` and both are read out, giving ``m_q = 2 b_q + b_a``.
    """
    n = len(unitaries)
    psi = amps.reshape((2,) * n)  # axes: qubit n-1 ... qubit 0
    psi = np.transpose(psi, tuple(reversed(range(n))))  # axes: qubit 0 ... n-1
    zero = np.array([1, 0], dtype=complex)
    full = psi
    for _ in range(n):
        full = np.multiply.outer(full, zero)
    # axes: s_0..s_{n-1}, a_0..a_{n-1}
    for q, u in enumerate(unitaries):
        g = u.reshape(2, 2, 2, 2)  # [out_s, out_a, in_s, in_a]
        full = np.tensordot(g, full, axes=([2, 3], [q, n + q]))
        # new axes 0,1 are (s_q, a_q); move them back
        full = np.moveaxis(full, [0, 1], [q, n + q])
    probs = np.abs(full) ** 2
    out = np.zeros((4,) * n)
    for idx in itertools.product((0, 1), repeat=2 * n):
        m = tuple(2 * idx[q] + idx[n + q] for q in range(n))
        out[m] += probs[idx]
    return out


def enumerate_by_matrices(rho: np.ndarray, local_effects: list[list[np.ndarray]]) -> np.ndarray:
    """``p_m = Tr[rho (Pi^(N-1)_{m_{N-1}} x ... x Pi^(0)_{m_0})]`` for every outcome."""
    n = len(local_effects)
    out = np.zeros((4,) * n)
    for m in itertools.product(range(4), repeat=n):
        op = kron_all([local_effects[q][m[q]] for q in reversed(range(n))])
        out[m] = np.real(np.trace(rho @ op))
    return out


def dual_by_lstsq(effects: list[np.ndarray]) -> np.ndarray:
    """Solve ``sigma_k = sum_m b[k, m] Pi_m`` as a real least-squares problem on vectorized matrices."""
    a = np.array([e.ravel() for e in effects]).T  # 4 x 4 complex, columns = effects
    a_real = np.vstack([a.real, a.imag])
    b = np.zeros((4, 4))
    for k, s in enumerate("IXYZ"):
        target = SIGMA[s].ravel()
        sol, *_ = np.linalg.lstsq(a_real, np.concatenate([target.real, target.imag]), rcond=None)
        b[k] = sol
    return b


def brute_force_min_groups(labels: list[str]) -> int:
    """Smallest qubit-wise commuting partition by trying every set partition."""

    def compatible(group):
        for q in range(len(labels[0])):
            letters = {labels[k][q] for k in group} - {"I"}
            if len(letters) > 1:
                return False
        return True

    best = len(labels)

    def partitions(items):
        if not items:
            yield []
            return
        first, rest = items[0], items[1:]
        for part in partitions(rest):
            for i in range(len(part)):
                yield part[:i] + [[first] + part[i]] + part[i + 1:]
            yield [[first]] + part

    for part in partitions(list(range(len(labels)))):
        if all(compatible(g) for g in part):
            best = min(best, len(part))
    return best


def sqrtm_psd(a: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(a)
    return (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.conj().T


def fidelity_oracle(rho: np.ndarray, sigma: np.ndarray) -> float:
    from scipy.linalg import sqrtm

    r = sqrtm(rho)
    return float(np.real(np.trace(sqrtm(r @ sigma @ r))) ** 2)
