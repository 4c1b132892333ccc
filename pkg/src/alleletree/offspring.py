"""Offspring laws, binomial mutation marking and offspring sampling.

Probabilities are stored either as floats or as :class:`fractions.Fraction`
(rational mode). Rational laws keep every downstream quantity exact until a
float is explicitly requested.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np

Prob = Union[float, Fraction]

SUM_TOL = 1e-12


def _is_rational(values: Iterable[Prob]) -> bool:
    return all(isinstance(v, (Fraction, int)) for v in values)


def _check_total(total: Prob, what: str) -> None:
    if isinstance(total, Fraction):
        if total != 1:
            raise ValueError(f"{what} sums to {total}, expected exactly 1")
    elif abs(total - 1.0) > SUM_TOL:
        raise ValueError(f"{what} sums to {total!r}, expected 1 within {SUM_TOL}")


@dataclass(frozen=True)
class OffspringLaw:
    """Law of the total number of children, ``pmf[k] = P(xi = k)``."""

    pmf: tuple

    def __post_init__(self):
        pmf = tuple(self.pmf)
        if not pmf:
            raise ValueError("empty pmf")
        if any(v < 0 for v in pmf):
            raise ValueError("negative probability in pmf")
        if _is_rational(pmf):
            pmf = tuple(Fraction(v) for v in pmf)
        else:
            pmf = tuple(float(v) for v in pmf)
        # trailing zeros carry no information
        while len(pmf) > 1 and pmf[-1] == 0:
            pmf = pmf[:-1]
        _check_total(sum(pmf), "pmf")
        object.__setattr__(self, "pmf", pmf)

    @classmethod
    def from_mapping(cls, mapping: Mapping[int, Prob]) -> "OffspringLaw":
        if not mapping:
            raise ValueError("empty pmf")
        if any(k < 0 for k in mapping):
            raise ValueError("child counts must be nonnegative")
        zero = Fraction(0) if _is_rational(mapping.values()) else 0.0
        pmf = [zero] * (max(mapping) + 1)
        for k, v in mapping.items():
            pmf[k] += v
        return cls(tuple(pmf))

    @classmethod
    def truncated(cls, pmf: Callable[[int], float], k_max: int) -> tuple["OffspringLaw", float]:
        """Truncate an unbounded pmf at ``k_max`` and renormalise.

        Returns the law and the tail mass ``P(xi > k_max)`` that was removed.
        """
        head = [pmf(k) for k in range(k_max + 1)]
        total = sum(head)
        tail = 1 - total
        return cls(tuple(v / total for v in head)), tail

    @property
    def rational(self) -> bool:
        return isinstance(self.pmf[0], Fraction)

    @property
    def k_max(self) -> int:
        return len(self.pmf) - 1

    def mean(self) -> Prob:
        return sum(k * v for k, v in enumerate(self.pmf))

    def variance(self) -> Prob:
        m = self.mean()
        return sum((k - m) ** 2 * v for k, v in enumerate(self.pmf))

    def support(self) -> list[int]:
        return [k for k, v in enumerate(self.pmf) if v > 0]

    def as_float(self) -> "OffspringLaw":
        return OffspringLaw(tuple(float(v) for v in self.pmf))


def binary_law() -> OffspringLaw:
    """Critical binary branching: 0 or 2 children with probability 1/2 (variance 1)."""
    return OffspringLaw.from_mapping({0: Fraction(1, 2), 2: Fraction(1, 2)})


def capped_geometric_law() -> OffspringLaw:
    """Geometric(1/2) shape on {0..5} with the remaining mass at 6, tuned to mean 1.

    ``pmf[k] = (160/321) 2^-k`` for ``k <= 5`` and ``pmf[6] = 6/321``; both the
    total mass and the mean equal 1 exactly.
    """
    scale = Fraction(160, 321)
    mapping = {k: scale / 2**k for k in range(6)}
    mapping[6] = Fraction(6, 321)
    return OffspringLaw.from_mapping(mapping)


PRESETS: dict[str, Callable[[], OffspringLaw]] = {
    "binary": binary_law,
    "geometric": capped_geometric_law,
}


@dataclass(frozen=True)
class MarkedOffspringLaw:
    """Joint law of (clone children, mutant children).

    ``base`` and ``p`` are kept when the law was built by binomial marking;
    samplers use them to draw generation totals faster.
    """

    joint_pmf: Mapping[tuple[int, int], Prob]
    base: OffspringLaw | None = None
    p: Prob | None = None
    _cells: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        items = sorted((tuple(map(int, kl)), v) for kl, v in dict(self.joint_pmf).items() if v != 0)
        if not items:
            raise ValueError("empty joint pmf")
        for (k, l), v in items:
            if k < 0 or l < 0:
                raise ValueError("child counts must be nonnegative")
            if v < 0:
                raise ValueError("negative probability in joint pmf")
        values = [v for _, v in items]
        if _is_rational(values):
            items = [(kl, Fraction(v)) for kl, v in items]
        else:
            items = [(kl, float(v)) for kl, v in items]
        _check_total(sum(v for _, v in items), "joint pmf")
        object.__setattr__(self, "joint_pmf", dict(items))
        ks = np.array([kl[0] for kl, _ in items], dtype=np.int64)
        ls = np.array([kl[1] for kl, _ in items], dtype=np.int64)
        probs = np.array([float(v) for _, v in items])
        object.__setattr__(self, "_cells", (ks, ls, probs / probs.sum(), np.cumsum(probs)))

    @property
    def rational(self) -> bool:
        return isinstance(next(iter(self.joint_pmf.values())), Fraction)

    @property
    def cells(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Support as parallel arrays ``(clones, mutants, float probabilities)``."""
        return self._cells[:3]

    def prob(self, k: int, l: int) -> Prob:
        zero = Fraction(0) if self.rational else 0.0
        return self.joint_pmf.get((k, l), zero)

    def clone_mean(self) -> Prob:
        return sum(k * v for (k, _), v in self.joint_pmf.items())

    def mutant_mean(self) -> Prob:
        return sum(l * v for (_, l), v in self.joint_pmf.items())

    def total_mean(self) -> Prob:
        return self.clone_mean() + self.mutant_mean()

    def total_second_moment(self) -> Prob:
        return sum((k + l) ** 2 * v for (k, l), v in self.joint_pmf.items())

    def pgf(self, x: float, y: float) -> float:
        """``g(x, y) = E[x^clones y^mutants]``."""
        return float(sum(float(v) * x**k * y**l for (k, l), v in self.joint_pmf.items()))

    def pgf_dx(self, x: float, y: float) -> float:
        return float(sum(float(v) * k * x ** (k - 1) * y**l for (k, l), v in self.joint_pmf.items() if k > 0))

    def total_marginal(self) -> dict[int, Prob]:
        out: dict[int, Prob] = {}
        for (k, l), v in self.joint_pmf.items():
            out[k + l] = out.get(k + l, 0) + v
        return out

    def as_float(self) -> "MarkedOffspringLaw":
        return MarkedOffspringLaw(
            {kl: float(v) for kl, v in self.joint_pmf.items()},
            base=None if self.base is None else self.base.as_float(),
            p=None if self.p is None else float(self.p),
        )


def binomial_mark(base: OffspringLaw, p: Prob) -> MarkedOffspringLaw:
    """Mark each child independently as a mutant with probability ``p``.

    ``pi[k, l] = base[k + l] * C(k + l, k) * (1 - p)^k * p^l``.
    """
    if isinstance(p, str):
        p = Fraction(p)
    if not (0 <= p <= 1) or (isinstance(p, float) and math.isnan(p)):
        raise ValueError(f"mutation probability must lie in [0, 1], got {p!r}")
    if base.rational and isinstance(p, (int, Fraction)):
        p = Fraction(p)
        one = Fraction(1)
    else:
        base = base.as_float()
        p = float(p)
        one = 1.0
    joint: dict[tuple[int, int], Prob] = {}
    for total, w in enumerate(base.pmf):
        if w == 0:
            continue
        for l in range(total + 1):
            k = total - l
            v = w * math.comb(total, k) * (one - p) ** k * p**l
            if v != 0:
                joint[(k, l)] = v
    return MarkedOffspringLaw(joint, base=base, p=p)


@dataclass(frozen=True)
class Classification:
    clone_mean: Prob
    mutant_mean: Prob
    total_mean: Prob
    total_second_moment: Prob
    mutant_process_mean: Prob
    regime_flag: str
    degenerate: tuple[str, ...] = ()


def classify(law: MarkedOffspringLaw) -> Classification:
    """Moments of the marked law and the criticality of the mutant process.

    The mutant process ``(M_k)`` is Galton-Watson with mean
    ``E(xi_m) / (1 - E(xi_c))`` when clones are strictly sub-critical and
    infinite mean when ``E(xi_c) = 1``.
    """
    cm = law.clone_mean()
    mm = law.mutant_mean()
    degenerate = []
    if all(k == 0 for k, _ in law.joint_pmf):
        degenerate.append("no-clones")
    if all(l == 0 for _, l in law.joint_pmf):
        degenerate.append("no-mutants")

    if cm >= 1:
        # reported as infinite even for the degenerate no-mutant law, which is flagged above
        mpm: Prob = math.inf
        flag = "infinite-mean" if cm == 1 else "clone-supercritical"
    elif mm == 0:
        mpm = mm
        flag = "subcritical"
    else:
        mpm = mm / (1 - cm)
        flag = "subcritical" if mpm < 1 else ("critical" if mpm == 1 else "supercritical")
    return Classification(
        clone_mean=cm,
        mutant_mean=mm,
        total_mean=law.total_mean(),
        total_second_moment=law.total_second_moment(),
        mutant_process_mean=mpm,
        regime_flag=flag,
        degenerate=tuple(degenerate),
    )


def sample_offspring(law: MarkedOffspringLaw, rng: np.random.Generator, size: int | None = None):
    """Inverse-CDF draw(s) of (clones, mutants).

    With ``size=None`` a single ``(clones, mutants)`` tuple of ints is returned,
    otherwise two integer arrays of length ``size``.
    """
    ks, ls, _, cdf = law._cells
    u = rng.random(size)
    idx = np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), len(ks) - 1)
    if size is None:
        return int(ks[idx]), int(ls[idx])
    return ks[idx], ls[idx]


def parse_probability(value) -> Prob:
    """Accept floats, ints, and strings such as ``"0.25"`` or ``"1/4"``."""
    if isinstance(value, bool):
        raise ValueError(f"not a probability: {value!r}")
    if isinstance(value, (int, Fraction)):
        return Fraction(value)
    if isinstance(value, float):
        return value
    if isinstance(value, str):
        text = value.strip()
        if "/" in text:
            return Fraction(text)
        return float(text)
    raise ValueError(f"not a probability: {value!r}")


def law_from_pairs(pairs: Sequence) -> OffspringLaw:
    """Build a law from ``[[k, prob], ...]`` pairs (probabilities parsed leniently)."""
    if not pairs:
        raise ValueError("empty pmf")
    mapping: dict[int, Prob] = {}
    for item in pairs:
        k, v = item
        if int(k) != k:
            raise ValueError(f"child count must be an integer, got {k!r}")
        mapping[int(k)] = mapping.get(int(k), 0) + parse_probability(v)
    if not _is_rational(mapping.values()):
        mapping = {k: float(v) for k, v in mapping.items()}
    return OffspringLaw.from_mapping(mapping)
