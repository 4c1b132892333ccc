"""Exact laws of ``(T_0, M_1)``: convolution powers, the Lagrange-inversion
formula, a brute-force enumeration oracle and the generating-function fixed
point.

Arrays hold floats, or Python :class:`~fractions.Fraction` objects when the
law is rational and exact arithmetic is requested.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .offspring import MarkedOffspringLaw, classify
from .tree import SCHEMA

ENUMERATION_CAP = 16


class ConvergenceError(ArithmeticError):
    pass


def law_hash(law: MarkedOffspringLaw) -> str:
    text = ";".join(f"{k},{l}:{v}" for (k, l), v in sorted(law.joint_pmf.items()))
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def _use_rational(law: MarkedOffspringLaw, rational: bool | None) -> bool:
    if rational is None:
        return law.rational
    if rational and not law.rational:
        raise ValueError("rational mode needs a law with rational probabilities")
    return rational


def _zeros(shape, rational: bool) -> np.ndarray:
    if rational:
        out = np.empty(shape, dtype=object)
        out.fill(Fraction(0))
        return out
    return np.zeros(shape)


def _cells(law: MarkedOffspringLaw, rational: bool):
    return [(k, l, v if rational else float(v)) for (k, l), v in law.joint_pmf.items()]


def _law_array(law: MarkedOffspringLaw, rational: bool) -> np.ndarray:
    cells = _cells(law, rational)
    out = _zeros((max(k for k, _, _ in cells) + 1, max(l for _, l, _ in cells) + 1), rational)
    for k, l, v in cells:
        out[k, l] = v
    return out


def _convolve(arr: np.ndarray, cells, rational: bool, k_cap: int | None, l_cap: int | None) -> np.ndarray:
    """One more convolution with the law: shift-and-add over its support cells."""
    k_hi = arr.shape[0] + max(k for k, _, _ in cells)
    l_hi = arr.shape[1] + max(l for _, l, _ in cells)
    if k_cap is not None:
        k_hi = min(k_hi, k_cap + 1)
    if l_cap is not None:
        l_hi = min(l_hi, l_cap + 1)
    out = _zeros((k_hi, l_hi), rational)
    for k, l, v in cells:
        if k >= k_hi or l >= l_hi:
            continue
        nk = min(arr.shape[0], k_hi - k)
        nl = min(arr.shape[1], l_hi - l)
        out[k:k + nk, l:l + nl] += v * arr[:nk, :nl]
    return out


def _total(arr: np.ndarray, rational: bool):
    return sum(arr.ravel().tolist(), Fraction(0)) if rational else float(arr.sum())


def convolution_power(
    law: MarkedOffspringLaw,
    n: int,
    support_cap: int | tuple[int, int] | None = None,
    rational: bool | None = None,
) -> tuple[np.ndarray, object]:
    """Law of the sum of ``n`` i.i.d. copies of (clones, mutants).

    Returns ``(pmf, discarded)`` where ``pmf[k, l]`` is exact for every
    retained index and ``discarded`` is the mass beyond ``support_cap``
    (a clone-index cap, or a ``(clone_cap, mutant_cap)`` pair).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rational = _use_rational(law, rational)
    k_cap, l_cap = support_cap if isinstance(support_cap, tuple) else (support_cap, None)
    cells = _cells(law, rational)
    arr = _law_array(law, rational)
    if k_cap is not None or l_cap is not None:
        arr = arr[: None if k_cap is None else k_cap + 1, : None if l_cap is None else l_cap + 1]
    for _ in range(n - 1):
        arr = _convolve(arr, cells, rational, k_cap, l_cap)
    return arr, 1 - _total(arr, rational)


@dataclass
class JointPmfTable:
    """``table[n, l] = P_a(T_0 = n, M_1 = l)`` for ``n <= n_max``."""

    table: np.ndarray
    ancestors: int
    n_max: int
    truncation_bound: object
    law_id: str = ""

    @property
    def rational(self) -> bool:
        return self.table.dtype == object

    def prob(self, n: int, l: int):
        if n < self.table.shape[0] and l < self.table.shape[1]:
            return self.table[n, l]
        return Fraction(0) if self.rational else 0.0

    def entries(self) -> dict[tuple[int, int], object]:
        return {(int(n), int(l)): self.table[n, l] for n, l in zip(*np.nonzero(self.table != 0))}

    def total(self):
        return _total(self.table, self.rational)

    def as_float(self) -> np.ndarray:
        return self.table.astype(float)

    def marginal_T0(self) -> np.ndarray:
        return self.as_float().sum(axis=1)

    def mean_M1(self) -> float:
        """``E[M_1; T_0 <= n_max]`` (a lower bound for the full mean)."""
        t = self.as_float()
        return float((t.sum(axis=0) * np.arange(t.shape[1])).sum())

    def max_abs_diff(self, other: "JointPmfTable", n_max: int | None = None) -> float:
        n_max = min(self.n_max, other.n_max) if n_max is None else n_max
        a, b = self.as_float()[: n_max + 1], other.as_float()[: n_max + 1]
        cols = max(a.shape[1], b.shape[1])
        a = np.pad(a, ((0, 0), (0, cols - a.shape[1])))
        b = np.pad(b, ((0, 0), (0, cols - b.shape[1])))
        return float(np.max(np.abs(a - b), initial=0.0))

    def exactly_equal(self, other: "JointPmfTable", n_max: int | None = None) -> bool:
        n_max = min(self.n_max, other.n_max) if n_max is None else n_max
        mine = {k: v for k, v in self.entries().items() if k[0] <= n_max}
        theirs = {k: v for k, v in other.entries().items() if k[0] <= n_max}
        return mine == theirs

    def pgf(self, x: float, y: float) -> float:
        t = self.as_float()
        return float(np.sum(t * np.power(x, np.arange(t.shape[0]))[:, None] * np.power(y, np.arange(t.shape[1]))[None, :]))

    def write_csv(self, fh) -> None:
        fh.write(
            f"# schema={SCHEMA} ancestors={self.ancestors} n_max={self.n_max} "
            f"law={self.law_id} truncation_mass={self.truncation_bound}\n"
        )
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "l", "probability"])
        for (n, l), v in sorted(self.entries().items()):
            w.writerow([n, l, str(v) if self.rational else repr(float(v))])


def joint_law_T0_M1(
    law: MarkedOffspringLaw,
    ancestors: int,
    n_max: int,
    rational: bool | None = None,
) -> JointPmfTable:
    """``P_a(T_0 = n, M_1 = l) = (a / n) * pi^{*n}[n - a, l]`` for ``a <= n <= n_max``.

    The convolution powers are built incrementally; clone indices above
    ``n_max - a`` never feed back into retained entries and are dropped.
    """
    if ancestors < 1:
        raise ValueError("need at least one ancestor")
    rational = _use_rational(law, rational)
    a = ancestors
    if n_max < a:
        return JointPmfTable(_zeros((max(n_max, 0) + 1, 1), rational), a, n_max, Fraction(1) if rational else 1.0, law_hash(law))
    k_cap = n_max - a
    cells = _cells(law, rational)
    power = _law_array(law, rational)[: k_cap + 1]
    l_width = max(l for _, l, _ in cells) * n_max + 1
    table = _zeros((n_max + 1, l_width), rational)
    for n in range(1, n_max + 1):
        if n > 1:
            power = _convolve(power, cells, rational, k_cap, None)
        if n >= a and n - a < power.shape[0]:
            weight = Fraction(a, n) if rational else a / n
            row = power[n - a]
            table[n, : len(row)] = weight * row
    # drop all-zero trailing mutant columns
    nz = np.flatnonzero((table != 0).any(axis=0))
    table = table[:, : (nz.max() + 1 if nz.size else 1)]
    return JointPmfTable(table, a, n_max, 1 - _total(table, rational), law_hash(law))


def enumerate_genealogies(
    law: MarkedOffspringLaw,
    ancestors: int,
    size_cap: int,
    rational: bool | None = None,
) -> JointPmfTable:
    """Brute-force law of ``(T_0, M_1)`` restricted to ``T_0 <= size_cap``.

    Clone individuals are processed one at a time; each picks its
    (clones, mutants) pair from the law, adding the clones to the queue of
    unprocessed individuals. Every finished queue is a clone forest; the
    recursion sums the probabilities of all forests with at most
    ``size_cap`` individuals, merging identical (queue, budget) states.
    """
    if size_cap > ENUMERATION_CAP:
        raise ValueError(f"size_cap={size_cap} exceeds the enumeration guard {ENUMERATION_CAP}")
    if ancestors < 1:
        raise ValueError("need at least one ancestor")
    rational = _use_rational(law, rational)
    cells = _cells(law, rational)
    one = Fraction(1) if rational else 1.0

    @lru_cache(maxsize=None)
    def finish(pending: int, budget: int):
        # law of (individuals still to come, their mutant children) for `pending` queued clones
        if pending == 0:
            return {(0, 0): one}
        if pending > budget:
            return {}
        out: dict = {}
        for k, l, v in cells:
            for (s, m), w in finish(pending - 1 + k, budget - 1).items():
                key = (s + 1, m + l)
                out[key] = out.get(key, 0) + v * w
        return out

    dist = finish(ancestors, size_cap)
    l_width = max((m for _, m in dist), default=0) + 1
    table = _zeros((max(size_cap, 0) + 1, l_width), rational)
    for (s, m), w in dist.items():
        table[s, m] += w
    return JointPmfTable(table, ancestors, size_cap, 1 - _total(table, rational), law_hash(law))


def enumerate_two_levels(
    law: MarkedOffspringLaw,
    ancestors: int,
    size_cap: int,
    rational: bool | None = None,
) -> dict[tuple[int, int, int, int], object]:
    """Exact ``P_a(T_0, M_1, T_1, M_2)`` on ``T_0 + T_1 <= size_cap``.

    Type-1 individuals form a population founded by the ``M_1`` mutants, so
    the second level reuses the enumeration with ``M_1`` ancestors.
    """
    first = enumerate_genealogies(law, ancestors, size_cap, rational).entries()
    out = {}
    for (t0, m1), w in first.items():
        if m1 == 0:
            out[(t0, 0, 0, 0)] = w
            continue
        if t0 + m1 > size_cap:
            continue
        second = enumerate_genealogies(law, m1, size_cap - t0, rational).entries()
        for (t1, m2), w2 in second.items():
            out[(t0, m1, t1, m2)] = w * w2
    return out


def phi_fixed_point(
    law: MarkedOffspringLaw,
    x: float,
    y: float,
    tol: float = 1e-12,
    max_iter: int = 1_000_000,
) -> float:
    """Solve ``z = x g(z, y)`` by monotone iteration from ``z = 0``.

    The iterates increase to the smallest root, which is ``E_1[x^T_0 y^M_1]``.
    Iteration stops once the geometric error bound ``dz * rate / (1 - rate)``,
    with ``rate = x dg/dz``, drops below ``tol``.
    """
    if not (0 < x <= 1 and 0 < y <= 1):
        raise ValueError("x and y must lie in (0, 1]")
    if classify(law).clone_mean > 1:
        raise ValueError("clone process must be (sub)critical")
    z = 0.0
    for _ in range(max_iter):
        z_new = x * law.pgf(z, y)
        if z_new < z - 1e-15 or z_new > 1 + 1e-12:
            raise ConvergenceError(f"iteration left the monotone regime: {z} -> {z_new}")
        dz = z_new - z
        z = z_new
        rate = x * law.pgf_dx(z, y)
        if dz == 0 or (rate < 1 and dz * rate / (1 - rate) < tol):
            return z
    raise ConvergenceError(f"no convergence within {max_iter} iterations (last step {dz:.3g})")
