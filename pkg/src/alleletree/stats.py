"""Goodness-of-fit utilities: Kolmogorov-Smirnov and pooled chi-square tests."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats as sps

MIN_EXPECTED = 5.0


def ks_1samp(samples, cdf: Callable[[np.ndarray], np.ndarray], cdf_left: Callable | None = None) -> float:
    """Exact one-sample KS distance ``sup_t |F_n(t) - F(t)|``.

    The supremum of a step function against a monotone ``F`` is attained at the
    sample points, so only the distinct sample values are examined. Repeated
    values (lattice data) are handled by comparing ``F`` with the empirical CDF
    just before and at each distinct value. ``cdf_left`` gives ``F(t-)`` when
    ``F`` itself has atoms.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n == 0:
        raise ValueError("no samples")
    values, counts = np.unique(x, return_counts=True)
    upper = np.cumsum(counts) / n
    lower = upper - counts / n
    f = np.asarray(cdf(values), dtype=float)
    f_left = f if cdf_left is None else np.asarray(cdf_left(values), dtype=float)
    return float(max(np.max(upper - f), np.max(f_left - lower), 0.0))


def ks_2samp(a, b) -> float:
    """Two-sample KS distance; symmetric in its arguments."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("no samples")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def effective_size(n: int, m: int | None = None) -> float:
    return float(n) if m is None else n * m / (n + m)


def ks_threshold(alpha: float, n: int, m: int | None = None) -> float:
    """Critical KS distance from the asymptotic Kolmogorov law."""
    return float(sps.kstwobign.isf(alpha) / math.sqrt(effective_size(n, m)))


def ks_pvalue(d: float, n: int, m: int | None = None) -> float:
    return float(sps.kstwobign.sf(d * math.sqrt(effective_size(n, m))))


@dataclass(frozen=True)
class ChiSquare:
    statistic: float
    dof: int
    pvalue: float
    bins: int


def _pool(counts: np.ndarray, weight: np.ndarray, min_expected: float) -> np.ndarray:
    """Group label per category; rare categories (by ``weight``) are merged."""
    order = np.argsort(-weight, kind="stable")
    groups = np.empty(len(weight), dtype=np.int64)
    keep = weight[order] >= min_expected
    n_keep = int(keep.sum())
    groups[order[:n_keep]] = np.arange(n_keep)
    if n_keep < len(weight):
        rest = order[n_keep:]
        if weight[rest].sum() >= min_expected or n_keep == 0:
            groups[rest] = n_keep
        else:
            # leftover mass too small for its own bin: fold into the last kept bin
            groups[rest] = n_keep - 1
    return groups


def chi2_gof(observed, expected_probs, min_expected: float = MIN_EXPECTED) -> ChiSquare:
    """Pearson goodness-of-fit with rare cells pooled until expected >= min_expected.

    ``expected_probs`` need not sum to one; the missing mass is an extra
    category with zero observations expected to be (nearly) empty.
    """
    obs = np.asarray(observed, dtype=float)
    p = np.asarray(expected_probs, dtype=float)
    n = obs.sum()
    missing = max(0.0, 1.0 - p.sum())
    if missing > 0:
        obs = np.append(obs, 0.0)
        p = np.append(p, missing)
    exp = n * p / p.sum()
    groups = _pool(obs, exp, min_expected)
    k = groups.max() + 1
    o = np.bincount(groups, weights=obs, minlength=k)
    e = np.bincount(groups, weights=exp, minlength=k)
    if k <= 1:
        return ChiSquare(0.0, 0, 1.0, int(k))
    stat = float(np.sum((o - e) ** 2 / e))
    return ChiSquare(stat, int(k - 1), float(sps.chi2.sf(stat, k - 1)), int(k))


def _codes(samples) -> np.ndarray:
    arr = np.asarray(samples)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr


def chi2_two_sample(a, b, min_expected: float = MIN_EXPECTED) -> ChiSquare:
    """Pearson homogeneity test between two samples of discrete values.

    Samples may be 1-D arrays of labels or 2-D arrays whose rows are joint
    outcomes. Categories whose expected count is below ``min_expected`` in
    either sample are pooled.
    """
    a = _codes(a)
    b = _codes(b)
    both = np.concatenate([a, b])
    cats, inverse = np.unique(both, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    ca = np.bincount(inverse[: len(a)], minlength=len(cats)).astype(float)
    cb = np.bincount(inverse[len(a):], minlength=len(cats)).astype(float)
    na, nb = ca.sum(), cb.sum()
    total = ca + cb
    weight = total * min(na, nb) / (na + nb)
    groups = _pool(total, weight, min_expected)
    k = groups.max() + 1
    oa = np.bincount(groups, weights=ca, minlength=k)
    ob = np.bincount(groups, weights=cb, minlength=k)
    if k <= 1:
        return ChiSquare(0.0, 0, 1.0, int(k))
    tot = oa + ob
    ea = tot * na / (na + nb)
    eb = tot * nb / (na + nb)
    stat = float(np.sum((oa - ea) ** 2 / ea) + np.sum((ob - eb) ** 2 / eb))
    return ChiSquare(stat, int(k - 1), float(sps.chi2.sf(stat, k - 1)), int(k))


def binomial_se(p: float, n: int) -> float:
    return math.sqrt(max(p * (1 - p), 0.0) / n)
