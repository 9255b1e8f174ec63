"""Reduced-state tomography from the outcome batches of an estimation run.

Every batch ``t`` was taken with its own product POVM.  Pooling all of them,
the marginal outcome ``m`` on a qubit subset in batch ``t`` corresponds to
the collective effect

    Xi_(t, m) = (S_t / S) * tensor_{i in subset} Pi^(t)_{m_i}

and these effects again resolve the identity.  The reduced state is then
fitted by a diluted maximum-likelihood iteration.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .sampling import OutcomeBatch, ProductPovm
from .simulator import DENSE_LIMIT, StateVector, partial_trace

FULL_ENUMERATION_K = 4
_PSD_TOL = 1e-10


class TomographyError(ValueError):
    pass


@dataclass
class CollectiveEffectSet:
    """Rank-1 collective effects ``weights[j] |vectors[j]><vectors[j]|`` with their counts.

    Vectors live on the subset with its lowest qubit as the least significant
    bit, matching ``partial_trace``.  ``counts`` may be non-integer when they
    stand in for exact expected frequencies.
    """

    subset: tuple[int, ...]
    vectors: np.ndarray  # (J, 2^k) complex
    weights: np.ndarray  # (J,)  S_t / S
    counts: np.ndarray  # (J,)
    batch_index: np.ndarray  # (J,)  which batch each effect came from

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def total(self) -> float:
        return float(np.sum(self.counts))

    def effects(self) -> np.ndarray:
        v = self.vectors
        return self.weights[:, None, None] * np.einsum("ja,jb->jab", v, v.conj())

    def completeness_error(self) -> float:
        return float(np.max(np.abs(self.effects().sum(axis=0) - np.eye(self.dim))))

    def probabilities(self, rho: np.ndarray) -> np.ndarray:
        """``Tr[rho Xi_j]`` for every effect."""
        v = self.vectors
        return self.weights * np.real(np.sum(v.conj() * (v @ rho.T), axis=1))


def _subset_vectors(povm: ProductPovm, subset: Sequence[int]) -> np.ndarray:
    """``(4^k, 2^k)`` product kets, outcome index with ``subset[0]`` as the lowest base-4 digit."""
    out = np.ones((1, 1), dtype=complex)
    for q in subset:
        # the newer qubit is both the more significant bit and base-4 digit
        out = np.kron(povm.locals[q].vectors, out)
    return out


def _marginal_index(outcomes: np.ndarray, subset: Sequence[int]) -> np.ndarray:
    idx = np.zeros(outcomes.shape[0], dtype=np.int64)
    for j, q in enumerate(subset):
        idx += outcomes[:, q].astype(np.int64) * 4 ** j
    return idx


def _check_subset(subset: Sequence[int], num_qubits: int) -> tuple[int, ...]:
    subset = tuple(sorted(int(q) for q in subset))
    if not subset:
        raise TomographyError("empty qubit subset")
    if len(set(subset)) != len(subset) or subset[0] < 0 or subset[-1] >= num_qubits:
        raise TomographyError(f"invalid subset {subset} for {num_qubits} qubits")
    return subset


def marginalize(batches: Sequence[OutcomeBatch], subset: Sequence[int]) -> CollectiveEffectSet:
    """Histogram every batch on ``subset`` and attach the matching collective effects."""
    if not batches:
        raise TomographyError("no batches to marginalize")
    n = batches[0].num_qubits
    if any(b.num_qubits != n for b in batches):
        raise TomographyError("batches disagree on the qubit count")
    subset = _check_subset(subset, n)
    total = sum(b.shots for b in batches)
    if total == 0:
        raise TomographyError("batches contain no shots")
    bins = 4 ** len(subset)
    vecs, weights, counts, owner = [], [], [], []
    for t, batch in enumerate(batches):
        vecs.append(_subset_vectors(batch.povm, subset))
        weights.append(np.full(bins, batch.shots / total))
        counts.append(np.bincount(_marginal_index(batch.outcomes, subset), minlength=bins).astype(float))
        owner.append(np.full(bins, t))
    return CollectiveEffectSet(subset, np.concatenate(vecs), np.concatenate(weights),
                               np.concatenate(counts), np.concatenate(owner))


def expected_effect_set(rho: np.ndarray, povms: Sequence[ProductPovm], shots: Sequence[int],
                        subset: Sequence[int]) -> CollectiveEffectSet:
    """Collective effects for a ``2^k``-dimensional ``rho`` on ``subset`` with counts ``S_t p_(t, m)``.

    These are the expected counts, an infinite-shot stand-in for sampled data.
    """
    if len(povms) != len(shots) or not povms:
        raise TomographyError("need one shot count per POVM")
    subset = _check_subset(subset, povms[0].num_qubits)
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (2 ** len(subset),) * 2:
        raise TomographyError("density matrix does not match the subset size")
    total = float(sum(shots))
    vecs, weights, counts, owner = [], [], [], []
    for t, (povm, s) in enumerate(zip(povms, shots)):
        v = _subset_vectors(povm, subset)
        p = np.real(np.sum(v.conj() * (v @ rho.T), axis=1))
        vecs.append(v)
        weights.append(np.full(len(v), s / total))
        counts.append(s * np.clip(p, 0.0, None))
        owner.append(np.full(len(v), t))
    return CollectiveEffectSet(subset, np.concatenate(vecs), np.concatenate(weights),
                               np.concatenate(counts), np.concatenate(owner))


def exact_effect_set(state: StateVector, povms: Sequence[ProductPovm], shots: Sequence[int],
                     subset: Sequence[int]) -> CollectiveEffectSet:
    """Expected-count effect set for the marginal of ``state`` on ``subset``."""
    subset = _check_subset(subset, state.num_qubits)
    return expected_effect_set(partial_trace(state, subset), povms, shots, subset)


def effect_set_from_probabilities(probs: np.ndarray, povm: ProductPovm, shots: float = 1.0) -> CollectiveEffectSet:
    """Single-batch set over all qubits with counts ``shots * p_m`` from an enumerated table."""
    n = povm.num_qubits
    subset = tuple(range(n))
    # enumerate_probabilities is indexed [m_0, ..., m_{N-1}]; flatten with m_0 as the lowest digit
    flat = np.asarray(probs).transpose(tuple(reversed(range(n)))).reshape(-1)
    v = _subset_vectors(povm, subset)
    return CollectiveEffectSet(subset, v, np.ones(len(v)), shots * flat, np.zeros(len(v), dtype=int))


@dataclass
class MleResult:
    rho: np.ndarray
    iterations: int  # diluted steps taken
    log_likelihood: float
    converged: bool
    dilution: float  # final value of the adaptive dilution
    stationarity: float  # max |R rho - rho|, zero at the maximum
    polish_iterations: int = 0
    history: list[float] = field(default_factory=list)


def log_likelihood(cset: CollectiveEffectSet, rho: np.ndarray) -> float:
    mask = cset.counts > 0
    p = cset.probabilities(rho)[mask]
    if np.any(p <= 0):
        return -math.inf
    return float(np.sum(cset.counts[mask] * np.log(p)))


def _normalized(rho: np.ndarray) -> np.ndarray:
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.real(np.trace(rho))


class _Likelihood:
    """Normalized log-likelihood ``sum_j f_j log Tr[rho Xi_j]`` over observed effects."""

    def __init__(self, cset: CollectiveEffectSet) -> None:
        mask = cset.counts > 0
        self.v = cset.vectors[mask]
        self.f = cset.counts[mask] / cset.total
        self.w = cset.weights[mask]
        self.dim = cset.dim

    def overlaps(self, rho: np.ndarray) -> np.ndarray:
        return np.real(np.sum(self.v.conj() * (self.v @ rho.T), axis=1))

    def value(self, rho: np.ndarray) -> float:
        q = self.overlaps(rho)
        if np.any(q <= 0):
            return -math.inf
        return float(np.sum(self.f * np.log(self.w * q)))

    def r_operator(self, rho: np.ndarray) -> np.ndarray:
        # the weight of each effect cancels between Xi_j and Tr[rho Xi_j]
        q = self.overlaps(rho)
        return (self.v * (self.f / q)[:, None]).T @ self.v.conj()

    def stationarity(self, rho: np.ndarray) -> float:
        return float(np.max(np.abs(self.r_operator(rho) @ rho - rho)))

    def divergence_and_grad(self, z: np.ndarray) -> tuple[float, np.ndarray]:
        """KL divergence ``sum f log(f / p)`` and its gradient in the factor ``T``
        of ``rho = T T^+ / Tr[T T^+]``.  Working with the divergence keeps the
        optimum near zero, where float resolution is best."""
        d = self.dim
        t = (z[: d * d] + 1j * z[d * d:]).reshape(d, d)
        tau = float(np.sum(np.abs(t) ** 2))
        rho = t @ t.conj().T / tau
        q = self.overlaps(rho)
        if np.any(q <= 0):
            return math.inf, np.zeros_like(z)
        r_op = (self.v * (self.f / q)[:, None]).T @ self.v.conj()
        grad = -2.0 * (r_op - np.eye(d)) @ t / tau
        return float(np.sum(self.f * np.log(self.f / (self.w * q)))), np.concatenate(
            [grad.real.ravel(), grad.imag.ravel()])


def _polish(lik: _Likelihood, rho: np.ndarray, max_iters: int) -> tuple[np.ndarray, int]:
    vals, vecs = np.linalg.eigh(rho)
    t0 = vecs * np.sqrt(np.clip(vals, 0.0, None))
    z0 = np.concatenate([t0.real.ravel(), t0.imag.ravel()])
    res = minimize(lik.divergence_and_grad, z0, jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iters, "gtol": 1e-14, "ftol": 0.0, "maxcor": 30})
    d = lik.dim
    t = (res.x[: d * d] + 1j * res.x[d * d:]).reshape(d, d)
    return _normalized(t @ t.conj().T), int(res.nit)


def _traceless_basis(d: int) -> np.ndarray:
    """Orthonormal Hermitian basis ``(d^2 - 1, d, d)`` of the traceless matrices."""
    # diagonal part: an orthonormal basis of R^d with the all-ones direction removed
    ones = np.eye(d)
    ones[:, 0] = 1.0
    q, _ = np.linalg.qr(ones)
    mats = [np.diag(q[:, a]).astype(complex) for a in range(1, d)]
    for i in range(d):
        for j in range(i + 1, d):
            re = np.zeros((d, d), dtype=complex)
            re[i, j] = re[j, i] = 1 / np.sqrt(2)
            im = np.zeros((d, d), dtype=complex)
            im[i, j], im[j, i] = -1j / np.sqrt(2), 1j / np.sqrt(2)
            mats += [re, im]
    return np.array(mats)


def _newton_refine(lik: _Likelihood, rho: np.ndarray, max_iters: int) -> tuple[np.ndarray, int]:
    """Exact Newton ascent over traceless Hermitian directions.

    Converges quadratically to a full-rank maximum; near a rank-deficient one
    the positivity line search keeps steps short and little is gained.
    """
    basis = _traceless_basis(lik.dim)
    # b[j, a] = <v_j| G_a |v_j>, so q_j(rho + sum_a x_a G_a) = q_j(rho) + b[j] @ x
    b = np.real(np.einsum("ja,kab,jb->jk", lik.v.conj(), basis, lik.v))
    current = lik.value(rho)
    it = 0
    for it in range(1, max_iters + 1):
        q = lik.overlaps(rho)
        grad = b.T @ (lik.f / q)
        hess = (b * (lik.f / q**2)[:, None]).T @ b
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        decrement = float(grad @ step)
        if not np.isfinite(decrement) or decrement < 1e-20:
            break
        delta = np.einsum("a,aij->ij", step, basis)
        alpha = 1.0
        while alpha > 1e-10:
            trial = rho + alpha * delta
            trial = 0.5 * (trial + trial.conj().T)
            if np.linalg.eigvalsh(trial)[0] > 0:
                value = lik.value(trial)
                if value >= current:
                    break
            alpha *= 0.5
        else:
            break
        rho, current = trial, value
    return rho, it


def mle_reconstruct(cset: CollectiveEffectSet, dilution: float = 0.1, tol: float = 1e-12,
                    max_iters: int = 500, *, grow: float = 1.5, max_dilution: float = 1e6,
                    polish: bool = True, polish_iters: int = 2000, newton_iters: int = 50,
                    stationarity_tol: float = 1e-6, record_history: bool = False) -> MleResult:
    """Diluted iteration ``rho <- N[(I + e(R - I)) rho (I + e(R - I))]`` from ``I / d``.

    ``R = sum_j f_j / (S Tr[rho Xi_j]) Xi_j``.  A step that lowers the
    likelihood is rejected and retried with ``e`` halved; after an accepted
    step ``e`` is multiplied by ``grow`` (``grow=1`` keeps it fixed).  The
    iteration stops once an undamped step gains less than ``tol`` in the
    normalized log-likelihood, or after ``max_iters`` steps.

    The iteration slows down badly near rank-deficient or ill-conditioned
    maxima, so by default the result is refined by quasi-Newton ascent on a
    factor ``T`` with ``rho = T T^+``; the refinement is kept only if it does
    not lower the likelihood, followed by exact Newton steps that settle
    full-rank maxima to float precision.  ``converged`` reports whether the fixed-point
    residual ``max |R rho - rho|`` ended below ``stationarity_tol``.
    """
    if cset.total <= 0:
        raise TomographyError("effect set has no counts")
    if dilution <= 0 or grow < 1:
        raise TomographyError("dilution must be positive and grow at least 1")
    lik = _Likelihood(cset)
    eye = np.eye(lik.dim)
    rho = eye / lik.dim
    current = lik.value(rho)
    eps = dilution
    history = [current]
    it = 0
    while it < max_iters:
        it += 1
        r_op = lik.r_operator(rho)
        damped = False
        while True:
            a = eye + eps * (r_op - eye)
            trial = _normalized(a @ rho @ a.conj().T)
            value = lik.value(trial)
            if value >= current or eps < 1e-12:
                break
            eps *= 0.5
            damped = True
        gain = value - current
        if gain < 0:
            break
        rho, current = trial, value
        if record_history:
            history.append(current)
        if gain < tol and not damped:
            break
        eps = min(eps * grow, max_dilution)
    polish_steps = 0
    if polish:
        refined, polish_steps = _polish(lik, rho, polish_iters)
        value = lik.value(refined)
        if value >= current:
            rho, current = refined, value
        refined, newton_steps = _newton_refine(lik, rho, newton_iters)
        value = lik.value(refined)
        if value >= current:
            rho, current = refined, value
        polish_steps += newton_steps
    station = lik.stationarity(rho)
    return MleResult(rho, it, current * cset.total, station < stationarity_tol, eps, station,
                     polish_steps, history)


def _check_density(rho: np.ndarray, name: str) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise TomographyError(f"{name} is not a square matrix")
    if np.max(np.abs(rho - rho.conj().T)) > _PSD_TOL:
        raise TomographyError(f"{name} is not Hermitian")
    if np.min(np.linalg.eigvalsh(rho)) < -_PSD_TOL:
        raise TomographyError(f"{name} is not positive semidefinite")
    if abs(np.trace(rho) - 1) > 1e-8:
        raise TomographyError(f"{name} does not have unit trace")
    return 0.5 * (rho + rho.conj().T)


def _psd_sqrt(rho: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(rho)
    # eigenvalues at rounding level are zero; their square roots would not be
    vals = np.where(vals > len(vals) * np.finfo(float).eps * vals[-1], vals, 0.0)
    return (vecs * np.sqrt(vals)) @ vecs.conj().T


def fidelity(rho: np.ndarray, sigma: np.ndarray) -> float:
    """``Tr[sqrt(sqrt(rho) sigma sqrt(rho))]^2``."""
    rho = _check_density(rho, "rho")
    sigma = _check_density(sigma, "sigma")
    if rho.shape != sigma.shape:
        raise TomographyError("density matrices have different dimensions")
    root = _psd_sqrt(rho)
    vals = np.linalg.eigvalsh(root @ sigma @ root)
    vals = np.where(vals > len(vals) * np.finfo(float).eps * max(vals[-1], 0.0), vals, 0.0)
    f = float(np.sum(np.sqrt(vals)) ** 2)
    return min(max(f, 0.0), 1.0)


@dataclass
class SubsetResult:
    subset: tuple[int, ...]
    iterations: int
    log_likelihood: float
    fidelity: float
    converged: bool

    @property
    def infidelity(self) -> float:
        return 1.0 - self.fidelity


@dataclass
class KwiseReport:
    results: list[SubsetResult]
    sampled: dict[int, bool]  # k -> whether subsets were sub-sampled

    def average_infidelity(self) -> dict[int, float]:
        out: dict[int, list[float]] = {}
        for r in self.results:
            out.setdefault(len(r.subset), []).append(r.infidelity)
        return {k: float(np.mean(v)) for k, v in sorted(out.items())}

    def to_text(self) -> str:
        lines = []
        for r in self.results:
            lines.append(f"subset={','.join(map(str, r.subset))} iterations={r.iterations} "
                         f"log_likelihood={r.log_likelihood!r} fidelity={r.fidelity!r} "
                         f"converged={r.converged}")
        return "\n".join(lines) + "\n"

    def summary_csv(self) -> str:
        counts: dict[int, int] = {}
        for r in self.results:
            counts[len(r.subset)] = counts.get(len(r.subset), 0) + 1
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["k", "subsets", "sampled", "mean_infidelity"])
        for k, value in self.average_infidelity().items():
            writer.writerow([k, counts[k], int(self.sampled[k]), repr(value)])
        return buf.getvalue()


def choose_subsets(num_qubits: int, k: int, max_subsets: int = 20,
                   seed: int = 0) -> tuple[list[tuple[int, ...]], bool]:
    """All ``k``-subsets up to ``FULL_ENUMERATION_K``, otherwise a seeded random sample."""
    total = math.comb(num_qubits, k)
    if k <= FULL_ENUMERATION_K or total <= max_subsets:
        return list(itertools.combinations(range(num_qubits), k)), False
    rng = np.random.default_rng([seed, k])
    picked: set[tuple[int, ...]] = set()
    while len(picked) < max_subsets:
        picked.add(tuple(sorted(rng.choice(num_qubits, size=k, replace=False).tolist())))
    return sorted(picked), True


def kwise_report(batches: Sequence[OutcomeBatch], state: StateVector, max_k: int, *,
                 dilution: float = 0.1, tol: float = 1e-12, max_iters: int = 500,
                 max_subsets: int = 20, seed: int = 0) -> KwiseReport:
    """Reconstruct every (or a sample of) ``k``-qubit marginal for ``k <= max_k``."""
    n = state.num_qubits
    if not 1 <= max_k <= n:
        raise TomographyError(f"max_k must lie in [1, {n}]")
    if max_k > DENSE_LIMIT:
        raise TomographyError(f"max_k exceeds the dense limit of {DENSE_LIMIT} qubits")
    results = []
    sampled = {}
    for k in range(1, max_k + 1):
        subsets, sampled[k] = choose_subsets(n, k, max_subsets, seed)
        for subset in subsets:
            cset = marginalize(batches, subset)
            fit = mle_reconstruct(cset, dilution, tol, max_iters)
            truth = partial_trace(state, subset)
            results.append(SubsetResult(subset, fit.iterations, fit.log_likelihood,
                                        fidelity(fit.rho, truth), fit.converged))
    return KwiseReport(results, sampled)
