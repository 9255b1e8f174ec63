"""Trace files, shots-to-target extrapolation and power-law fits."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

TRACE_COLUMNS = ["t", "S_t", "mean_t", "var_t", "mixed_mean", "mixed_var", "grad_inf", "x_digest"]


class AnalysisError(ValueError):
    pass


@dataclass
class Trace:
    """Per-iteration columns of a run; ``var_t`` and ``mixed_var`` are variances of means."""

    t: np.ndarray
    shots: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    mixed_mean: np.ndarray
    mixed_var: np.ndarray
    grad_inf: np.ndarray
    digest: list[str]

    def __len__(self) -> int:
        return len(self.t)

    @property
    def cumulative_shots(self) -> np.ndarray:
        return np.cumsum(self.shots)

    @property
    def errors(self) -> np.ndarray:
        return np.sqrt(self.mixed_var)

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence]) -> "Trace":
        cols = list(zip(*rows)) if rows else [()] * len(TRACE_COLUMNS)
        return cls(np.array(cols[0], dtype=int), np.array(cols[1], dtype=np.int64),
                   *(np.array(c, dtype=float) for c in cols[2:7]), [str(d) for d in cols[7]])

    def rows(self) -> list[list]:
        return [[int(a), int(b), float(c), float(d), float(e), float(f), float(g), h]
                for a, b, c, d, e, f, g, h in zip(self.t, self.shots, self.mean, self.var,
                                                  self.mixed_mean, self.mixed_var,
                                                  self.grad_inf, self.digest)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for row in self.rows():
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
        return buf.getvalue()

    @classmethod
    def read(cls, path: str | Path) -> "Trace":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != TRACE_COLUMNS:
                raise AnalysisError(f"{path}: unexpected trace header {header}")
            rows = [row for row in reader if row]
        return cls.from_rows(rows)


def extrapolate_shots(trace: Trace, target_error: float) -> float:
    """Shots needed to reach ``target_error``.

    If the trace reaches the target, the cumulative shot count of the first
    row that does is returned.  Otherwise the last row is extrapolated with
    ``eps ~ S^(-1/2)``: ``S_tar = S_lim eps_lim^2 / eps_tar^2``.
    """
    if len(trace) == 0:
        raise AnalysisError("empty trace")
    if target_error <= 0:
        raise AnalysisError("target error must be positive")
    errors = trace.errors
    cumulative = trace.cumulative_shots
    hit = np.nonzero(errors <= target_error)[0]
    if hit.size:
        return float(cumulative[hit[0]])
    return float(cumulative[-1] * trace.mixed_var[-1] / target_error ** 2)


@dataclass
class ScalingFit:
    """``S = a N^b`` fitted in log-log space."""

    a: float
    b: float
    a_stderr: float
    b_stderr: float
    residuals: np.ndarray  # log-space residuals
    n: np.ndarray
    s: np.ndarray

    def predict(self, n: np.ndarray | float) -> np.ndarray:
        return self.a * np.asarray(n, dtype=float) ** self.b


def fit_power_law(n: Sequence[float], s: Sequence[float]) -> ScalingFit:
    """Least squares of ``log S`` on ``log N``; needs at least three points and two distinct ``N``."""
    n = np.asarray(n, dtype=float)
    s = np.asarray(s, dtype=float)
    if n.shape != s.shape or n.ndim != 1:
        raise AnalysisError("n and s must be matching 1-d sequences")
    if len(n) < 3:
        raise AnalysisError("a power-law fit needs at least three points")
    if np.any(n <= 0) or np.any(s <= 0) or not np.all(np.isfinite(n)) or not np.all(np.isfinite(s)):
        raise AnalysisError("power-law points must be positive and finite")
    if np.unique(n).size < 2:
        raise AnalysisError("degenerate fit: all points share the same N")
    x, y = np.log(n), np.log(s)
    res = stats.linregress(x, y)
    a = float(np.exp(res.intercept))
    resid = y - (res.intercept + res.slope * x)
    return ScalingFit(a, float(res.slope), a * float(res.intercept_stderr), float(res.stderr),
                      resid, n, s)


@dataclass
class BootstrapInterval:
    estimate: float
    low: float
    high: float
    resamples: int
    confidence: float


def bootstrap_mean(values: Sequence[float], *, resamples: int = 1000, confidence: float = 0.95,
                   seed: int = 0) -> BootstrapInterval:
    """Percentile bootstrap interval for the mean of seed-level results."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise AnalysisError("bootstrap needs at least two values")
    res = stats.bootstrap((values,), np.mean, n_resamples=resamples, confidence_level=confidence,
                          method="percentile", rng=np.random.default_rng(seed))
    ci = res.confidence_interval
    return BootstrapInterval(float(values.mean()), float(ci.low), float(ci.high), resamples,
                             confidence)


def bootstrap_exponent(n: Sequence[float], s: Sequence[float], *, resamples: int = 1000,
                       confidence: float = 0.95, seed: int = 0) -> BootstrapInterval:
    """Percentile interval for ``b`` when each ``N`` has several seed-level ``S`` values.

    Values are resampled within each ``N`` and the fit is redone on the
    per-``N`` means.
    """
    n = np.asarray(n, dtype=float)
    s = np.asarray(s, dtype=float)
    levels = np.unique(n)
    groups = tuple(s[n == level] for level in levels)
    if any(g.size < 2 for g in groups):
        raise AnalysisError("bootstrap needs at least two values per N")

    def exponent(*samples: np.ndarray) -> float:
        return fit_power_law(levels, [np.mean(g) for g in samples]).b

    res = stats.bootstrap(groups, exponent, n_resamples=resamples, confidence_level=confidence,
                          method="percentile", vectorized=False,
                          rng=np.random.default_rng(seed))
    ci = res.confidence_interval
    point = fit_power_law(levels, [g.mean() for g in groups]).b
    return BootstrapInterval(point, float(ci.low), float(ci.high), resamples, confidence)


def loglog_slope(shots: Sequence[float], errors: Sequence[float]) -> float:
    """Slope of ``log error`` against ``log shots``."""
    shots = np.asarray(shots, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if len(shots) < 2 or np.any(shots <= 0) or np.any(errors <= 0):
        raise AnalysisError("slope needs at least two positive points")
    return float(np.polyfit(np.log(shots), np.log(errors), 1)[0])
