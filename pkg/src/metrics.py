from __future__ import annotations
from typing import NamedTuple
import math

import numpy as np
import ot
import pandas as pd
from scipy import stats

from src.errors import ContractViolation, DomainError
from src.paths import PointPath


def _events_upto(path: PointPath, theta: float) -> set[float]:
    return {t for t in path.events if t <= theta}


def delta_count(path_a: PointPath, path_b: PointPath, theta: float) -> int:
    # exact equality: shared grains make common events bit-identical
    return len(_events_upto(path_a, theta) ^ _events_upto(path_b, theta))


def sup_age_gap(path_a: PointPath, path_b: PointPath, theta: float) -> float:
    """
    sup_{0 <= t <= theta} |S^A_{t-} - S^B_{t-}|.

    Both ages grow at unit speed, so the gap only changes just after an event of
    either path and is constant up to the next one.
    """
    if path_a.past != path_b.past:
        raise ContractViolation("sup_age_gap needs paths with the same past")
    if not path_a.past:
        raise DomainError("paths have no past point")
    la = lb = path_a.last_past
    a = sorted(_events_upto(path_a, theta))
    b = sorted(_events_upto(path_b, theta))
    gap = 0.0
    i = j = 0
    while i < len(a) or j < len(b):
        t = min(a[i] if i < len(a) else math.inf, b[j] if j < len(b) else math.inf)
        if i < len(a) and a[i] == t:
            la = t
            i += 1
        if j < len(b) and b[j] == t:
            lb = t
            j += 1
        if t < theta:
            gap = max(gap, abs(la - lb))
    return gap


def _density_weights(density: np.ndarray, ages: np.ndarray) -> np.ndarray:
    density = np.asarray(density, dtype=float)
    ages = np.asarray(ages, dtype=float)
    if density.shape != ages.shape or ages.size < 2:
        raise DomainError("density and ages must be arrays of the same length >= 2")
    if np.any(density < 0) or not np.all(np.isfinite(density)):
        raise DomainError("density must be finite and non-negative")
    # trapezoid masses carried by the nodes
    dx = np.diff(ages)
    w = np.zeros_like(density)
    w[:-1] += 0.5 * dx * density[:-1]
    w[1:] += 0.5 * dx * density[1:]
    if w.sum() <= 0:
        raise DomainError("density has zero mass")
    return w / w.sum()


def _check_samples(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise DomainError("need at least one sample")
    if not np.all(np.isfinite(x)):
        raise DomainError("samples must be finite")
    return x


def w1_empirical_vs_density(samples, density, ages) -> float:
    x = _check_samples(samples)
    w = _density_weights(density, ages)
    return float(stats.wasserstein_distance(x, np.asarray(ages, dtype=float), v_weights=w))


def w1_tilde_empirical_vs_density(samples, density, ages, max_bins: int = 400) -> float:
    """W1 with cost min(|x - y|, 1), by exact transport between binned measures."""
    x = _check_samples(samples)
    ages = np.asarray(ages, dtype=float)
    w = _density_weights(density, ages)
    lo = min(ages[0], x.min())
    hi = max(ages[-1], x.max())
    if hi <= lo:
        return 0.0
    edges = np.linspace(lo, hi, max_bins + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    emp, _ = np.histogram(x, bins=edges)
    ref, _ = np.histogram(ages, bins=edges, weights=w)
    emp = emp / emp.sum()
    ref = ref / ref.sum()
    cost = np.minimum(np.abs(centers[:, None] - centers[None, :]), 1.0)
    return float(ot.emd2(emp, ref, cost))


class RateFit(NamedTuple):
    slope: float
    intercept: float
    residual: float
    slope_se: float


def fit_rate(ns, values) -> RateFit:
    """Least squares of log(value) against log(n)."""
    ns = np.asarray(ns, dtype=float)
    values = np.asarray(values, dtype=float)
    if ns.shape != values.shape:
        raise DomainError("ns and values must have the same length")
    bad = [int(n) for n, v in zip(ns, values) if not v > 0]
    if bad:
        raise DomainError(f"values must be > 0 for a log-log fit (n = {bad})")
    if len(np.unique(ns)) < 3:
        raise DomainError("need at least 3 distinct n to fit a rate")
    lx, ly = np.log(ns), np.log(values)
    res = stats.linregress(lx, ly)
    resid = ly - (res.intercept + res.slope * lx)
    return RateFit(
        slope=float(res.slope),
        intercept=float(res.intercept),
        residual=float(np.sqrt(np.mean(resid**2))),
        slope_se=float(res.stderr),
    )


def _se(x: pd.Series) -> float:
    if len(x) < 2:
        return math.nan
    return float(x.std(ddof=1) / math.sqrt(len(x)))


def summarize(report: pd.DataFrame) -> pd.DataFrame:
    """Per-n means and standard errors of every metric column of a coupling report."""
    metric_cols = [c for c in report.columns if c not in ("n", "replica")]
    rows = []
    for n, grp in report.groupby("n", sort=True):
        row = {"n": int(n), "replicas": int(len(grp))}
        for col in metric_cols:
            vals = grp[col].dropna()
            row[f"{col}_mean"] = float(vals.mean()) if len(vals) else math.nan
            row[f"{col}_se"] = _se(vals)
        rows.append(row)
    return pd.DataFrame(rows)
