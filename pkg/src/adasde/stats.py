"""Small statistics helpers shared by the estimators and the sweep harness."""
from __future__ import annotations

import numpy as np

__all__ = [
    "mean_and_se",
    "jackknife_se",
    "select_third_triples",
    "fit_loglog_slope",
    "bootstrap_slope_se",
]


def mean_and_se(samples: np.ndarray, axis: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and its standard error along an axis."""
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[axis]
    if n < 2:
        raise ValueError("need at least 2 samples for a standard error")
    mean = np.mean(samples, axis=axis)
    se = np.std(samples, axis=axis, ddof=1) / np.sqrt(n)
    return mean, se


def jackknife_se(per_sample_terms: np.ndarray, axis: int = 0) -> np.ndarray:
    """Delete-one jackknife standard error of a mean-of-terms statistic.

    For a statistic that is the average of per-sample terms, the delete-one
    jackknife SE reduces exactly to std(terms, ddof=1) / sqrt(n).
    """
    terms = np.asarray(per_sample_terms, dtype=float)
    n = terms.shape[axis]
    if n < 2:
        raise ValueError("need at least 2 samples for a jackknife")
    return np.std(terms, axis=axis, ddof=1) / np.sqrt(n)


def select_third_triples(dim: int, count: int = 20, seed: int = 0x7E57) -> list[tuple[int, int, int]]:
    """Deterministic sample of off-diagonal index triples i <= j <= k.

    Diagonal entries (i == j == k) are tracked separately, so they are
    excluded here. The selection depends only on (dim, count, seed).
    """
    triples = [
        (i, j, k)
        for i in range(dim)
        for j in range(i, dim)
        for k in range(j, dim)
        if not (i == j == k)
    ]
    if len(triples) <= count:
        return triples
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(triples), size=count, replace=False)
    return [triples[i] for i in sorted(idx)]


def fit_loglog_slope(x: np.ndarray, y: np.ndarray) -> float:
    """Least-squares slope of log(y) against log(x); x, y must be positive."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log fit needs strictly positive values")
    if x.size < 2:
        raise ValueError("need at least 2 points to fit a slope")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def bootstrap_slope_se(
    x: np.ndarray,
    samples_per_point: list[np.ndarray],
    statistic,
    n_boot: int = 200,
    seed: int = 0xB007,
) -> tuple[float, float]:
    """Slope and bootstrap SE when each sweep point carries per-seed samples.

    ``statistic`` maps a (resampled) per-seed array to the positive scalar
    whose log-log slope against x is fitted.
    """
    rng = np.random.default_rng(seed)
    point_values = np.array([statistic(s) for s in samples_per_point])
    slope = fit_loglog_slope(x, point_values)
    boot = np.empty(n_boot)
    for b in range(n_boot):
        vals = []
        for s in samples_per_point:
            idx = rng.integers(0, s.shape[0], size=s.shape[0])
            vals.append(statistic(s[idx]))
        vals = np.maximum(vals, 1e-300)
        boot[b] = fit_loglog_slope(x, np.asarray(vals))
    return slope, float(np.std(boot, ddof=1))
