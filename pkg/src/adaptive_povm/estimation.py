"""Monte Carlo estimation of Pauli observables from informationally complete data.

Every outcome string ``m`` gets a weight

    omega_m = sum_k c_k prod_i b_i[k_i, m_i]

whose average over the outcome distribution is ``<O>``.  The same outcomes
also give the second moment of the weights under any nearby POVM, which is
what the parameter gradient is built from.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .observables import PauliObservable
from .povm import LocalPovm, PovmParams, cross_dual_table, dual_table
from .sampling import OutcomeBatch, ProductPovm

_CHUNK_ELEMENTS = 1 << 22


class EstimationError(ValueError):
    pass


@dataclass
class WeightContext:
    """Observable together with one dual table per qubit."""

    obs: PauliObservable
    tables: np.ndarray  # (N, 4, 4)

    def __post_init__(self) -> None:
        self.tables = np.asarray(self.tables, dtype=float)
        if self.tables.shape != (self.obs.num_qubits, 4, 4):
            raise EstimationError("need one 4x4 dual table per qubit")
        self.coeffs = self.obs.coeff_array
        self.codes = self.obs.codes

    @classmethod
    def build(cls, obs: PauliObservable, povm: ProductPovm) -> "WeightContext":
        if povm.num_qubits != obs.num_qubits:
            raise EstimationError("POVM and observable qubit counts differ")
        return cls(obs, np.stack([dual_table(p) for p in povm.locals]))

    def factors(self, outcomes: np.ndarray) -> np.ndarray:
        """``(S, K, N)`` table of ``b_i[k_i, m_i]``."""
        outcomes = np.asarray(outcomes, dtype=np.intp)
        qubits = np.arange(self.obs.num_qubits)
        return self.tables[qubits[None, None, :], self.codes[None, :, :], outcomes[:, None, :]]

    def term_values(self, outcomes: np.ndarray) -> np.ndarray:
        """``(S, K)`` per-term products ``prod_i b_i[k_i, m_i]``."""
        return np.prod(self.factors(outcomes), axis=2)

    def weights(self, outcomes: np.ndarray) -> np.ndarray:
        outcomes = np.atleast_2d(outcomes)
        out = np.empty(outcomes.shape[0])
        for sl in _chunks(outcomes.shape[0], self.coeffs.size * self.obs.num_qubits):
            out[sl] = self.term_values(outcomes[sl]) @ self.coeffs
        return out


def _chunks(total: int, per_row: int):
    step = max(1, _CHUNK_ELEMENTS // max(per_row, 1))
    for start in range(0, total, step):
        yield slice(start, min(start + step, total))


def omega(outcome: Sequence[int], ctx: WeightContext) -> float:
    return float(ctx.weights(np.asarray(outcome)[None, :])[0])


def omega_table(ctx: WeightContext) -> np.ndarray:
    """Weights for all ``4^N`` outcomes as a ``(4,)*N`` array (small N only)."""
    n = ctx.obs.num_qubits
    grids = np.indices((4,) * n).reshape(n, -1).T
    return ctx.weights(grids).reshape((4,) * n)


@dataclass
class EstimateRecord:
    mean: float
    variance: float  # of the mean
    second_moment: float
    shots: int
    params: PovmParams | None = None

    @property
    def weight_variance(self) -> float:
        return self.variance * self.shots


def estimate_from_weights(w: np.ndarray, params: PovmParams | None = None) -> EstimateRecord:
    s = len(w)
    if s == 0:
        raise EstimationError("cannot estimate from an empty batch")
    if s > 1 and np.all(w == w[0]):
        # constant weights, e.g. an identity observable: the estimate is exact
        return EstimateRecord(float(w[0]), 0.0, float(w[0] * w[0]), s, params)
    mean = float(np.mean(w))
    var = float(np.var(w, ddof=1)) / s if s > 1 else np.inf
    return EstimateRecord(mean, var, float(np.mean(w * w)), s, params)


def estimate(batch: OutcomeBatch, ctx: WeightContext) -> EstimateRecord:
    """Sample mean of the weights and the unbiased variance of that mean."""
    if batch.shots == 0:
        raise EstimationError("cannot estimate from an empty batch")
    return estimate_from_weights(ctx.weights(batch.outcomes), batch.povm.params)


def exact_moments(probs: np.ndarray, ctx: WeightContext) -> tuple[float, float]:
    """Population mean and variance of the weights under exact probabilities."""
    w = omega_table(ctx)
    mean = float(np.sum(probs * w))
    return mean, float(np.sum(probs * w * w) - mean ** 2)


def _exclusive_products(factors: np.ndarray) -> np.ndarray:
    """``out[..., l] = prod_{i != l} factors[..., i]`` without division."""
    n = factors.shape[-1]
    ones = np.ones(factors.shape[:-1] + (1,))
    prefix = np.concatenate([ones, np.cumprod(factors[..., :-1], axis=-1)], axis=-1)
    suffix = np.concatenate([np.cumprod(factors[..., :0:-1], axis=-1)[..., ::-1], ones], axis=-1)
    return prefix * suffix


@dataclass
class Perturbation:
    """POVM on qubit ``qubit`` after moving parameter ``index`` by ``step``."""

    qubit: int
    index: int
    step: float
    table: np.ndarray  # dual table of the new local POVM
    cross: np.ndarray  # new effects in terms of the sampled ones


def perturbation(params: PovmParams, qubit: int, index: int, h: float,
                 sampled: LocalPovm) -> Perturbation:
    """Forward step ``+h`` unless that leaves the box, then backward ``-h``."""
    x = params.values[qubit]
    step = h if x[index] + h <= 1 - params.delta + 1e-12 else -h
    moved = x.copy()
    moved[index] += step
    new = LocalPovm.from_params(moved)
    return Perturbation(qubit, index, step, dual_table(new), cross_dual_table(new, sampled))


def reweighted_second_moment(outcomes: np.ndarray, ctx: WeightContext,
                             pert: Perturbation, partials: np.ndarray | None = None) -> np.ndarray:
    """Per-sample ``sum_r d[r, m_l] omega'(m with m_l -> r)^2``.

    Its average over samples from the current POVM estimates the second
    moment of the weights under the perturbed one.  ``partials`` may carry
    precomputed ``c_k prod_{i != l} b_i[k_i, m_i]`` for qubit ``l``.
    """
    outcomes = np.asarray(outcomes, dtype=np.intp)
    l = pert.qubit
    if partials is None:
        partials = ctx.coeffs[None, :] * _exclusive_products(ctx.factors(outcomes))[:, :, l]
    new_rows = pert.table[ctx.codes[:, l], :]  # (K, 4)
    w_new = partials @ new_rows  # (S, 4): omega' with qubit l outcome r
    d_cols = pert.cross[:, outcomes[:, l]].T  # (S, 4): d[r, m_l]
    return np.sum(d_cols * w_new ** 2, axis=1)


def second_moment_gradient(batch: OutcomeBatch, ctx: WeightContext, params: PovmParams,
                           h: float = 1e-3) -> np.ndarray:
    """Finite-difference gradient ``(N, 8)`` of the weights' second moment.

    All partials reuse ``batch``; no new samples are drawn.
    """
    if h <= 0:
        raise EstimationError("finite-difference step must be positive")
    n = ctx.obs.num_qubits
    if params.num_qubits != n:
        raise EstimationError("parameter rows and observable qubit counts differ")
    n_params = params.values.shape[1]
    sampled = batch.povm.locals
    perts = [[perturbation(params, l, j, h, sampled[l]) for j in range(n_params)]
             for l in range(n)]
    steps = np.array([[p.step for p in row] for row in perts])
    # per qubit: (P, K, 4) rows of the new dual tables, (P, 4, 4) cross tables
    new_rows = [np.stack([p.table[ctx.codes[:, l], :] for p in perts[l]]) for l in range(n)]
    # (P, m, r) so that indexing by outcome gives d[r, m_l] rows
    cross = [np.stack([p.cross.T for p in perts[l]]) for l in range(n)]
    outcomes = batch.outcomes.astype(np.intp)
    sums = np.zeros((n, n_params))
    base_sum = 0.0
    for sl in _chunks(len(outcomes), ctx.coeffs.size * n * n_params):
        part = outcomes[sl]
        factors = ctx.factors(part)
        w = np.prod(factors, axis=2) @ ctx.coeffs
        base_sum += float(np.sum(w * w))
        excl = ctx.coeffs[None, :, None] * _exclusive_products(factors)
        for l in range(n):
            w_new = np.matmul(excl[:, :, l], new_rows[l])  # (P, S, 4)
            d_rows = cross[l][:, part[:, l], :]  # (P, S, 4)
            sums[l] += np.sum(d_rows * w_new * w_new, axis=(1, 2))
    s = len(outcomes)
    return (sums / s - base_sum / s) / steps


def exact_perturbed_second_moment(probs: np.ndarray, ctx: WeightContext,
                                  pert: Perturbation) -> float:
    """Exact reweighted average over all outcomes with known probabilities."""
    n = ctx.obs.num_qubits
    grids = np.indices((4,) * n).reshape(n, -1).T
    vals = reweighted_second_moment(grids, ctx, pert)
    return float(np.sum(probs.reshape(-1) * vals))


@dataclass
class RunningEstimate:
    """Inverse-variance mixture of independent estimates, updated one at a time."""

    mean: float = float("nan")
    variance: float = float("inf")
    exact: bool = False
    history: list[EstimateRecord] = field(default_factory=list)

    @property
    def precision(self) -> float:
        if self.variance == 0:
            return float("inf")
        return 1.0 / self.variance

    @property
    def error(self) -> float:
        return float(np.sqrt(self.variance))


def mix(running: RunningEstimate, new: EstimateRecord) -> RunningEstimate:
    """Fold ``new`` into the mixture with the variance-optimal weight.

    A zero-variance record is taken as exact and freezes the mixture.
    """
    history = running.history + [new]
    if running.exact:
        return replace(running, history=history)
    if new.variance < 0 or np.isnan(new.variance):
        raise EstimationError(f"invalid record variance {new.variance}")
    if new.variance == 0:
        return RunningEstimate(new.mean, 0.0, True, history)
    if np.isinf(new.variance):
        # a single-shot record carries no usable variance and gets zero weight
        return replace(running, history=history)
    if not running.history or not np.isfinite(running.variance):
        return RunningEstimate(new.mean, new.variance, False, history)
    vv, vt = running.variance, new.variance
    mean = (new.mean * vv + running.mean * vt) / (vv + vt)
    return RunningEstimate(mean, vv * vt / (vv + vt), False, history)


def one_step_mix(records: Sequence[EstimateRecord]) -> tuple[float, float]:
    """Inverse-variance weighted mean of all records and its variance."""
    if not records:
        raise EstimationError("no records to mix")
    variances = np.array([r.variance for r in records], dtype=float)
    if not np.all(variances > 0):
        raise EstimationError("one-step mixing needs strictly positive variances")
    prec = 1.0 / variances
    means = np.array([r.mean for r in records])
    total = prec.sum()
    return float(np.sum(means * prec) / total), float(1.0 / total)


@dataclass
class TermEstimates:
    means: np.ndarray
    covariance: np.ndarray  # of the per-term means
    total_variance: float  # of the mean of omega; equals c^T cov c
    independent_variance: float  # sum_k c_k^2 Var(P_k), ignoring correlations

    @property
    def correlation_gap(self) -> float:
        return self.total_variance - self.independent_variance


def pauli_term_estimates(batch: OutcomeBatch, ctx: WeightContext) -> TermEstimates:
    """Per-Pauli-string estimates from IC data, with their covariance."""
    if batch.shots < 2:
        raise EstimationError("need at least two shots for a covariance")
    values = ctx.term_values(batch.outcomes)
    s = values.shape[0]
    cov = np.atleast_2d(np.cov(values, rowvar=False, ddof=1)) / s
    c = ctx.coeffs
    total = float(np.var(values @ c, ddof=1) / s)
    return TermEstimates(values.mean(axis=0), cov, total, float(np.sum(c * c * np.diag(cov))))


def exact_term_covariance(probs: np.ndarray, ctx: WeightContext) -> np.ndarray:
    """Population covariance of the per-term values (single shot)."""
    n = ctx.obs.num_qubits
    grids = np.indices((4,) * n).reshape(n, -1).T
    vals = ctx.term_values(grids)
    p = probs.reshape(-1)
    mean = p @ vals
    return (vals * p[:, None]).T @ vals - np.outer(mean, mean)
