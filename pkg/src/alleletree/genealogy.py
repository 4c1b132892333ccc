"""Marked Galton-Watson forests, trees of alleles and typed censuses.

Individuals are never stored. An allelic family started by ``m`` founders is
simulated generation by generation: the clone and mutant children of ``z``
individuals are drawn as one multinomial sum of ``z`` i.i.d. offspring draws.
A family therefore costs one draw per generation, and many families are
advanced in lockstep as numpy arrays.

The tree of alleles is then assembled level by level. Given a family with
``d`` mutant children, the sub-families they found are independent copies of
``(T_0, M_1)`` under a single ancestor, ranked by decreasing size with ties in
uniformly random order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .offspring import MarkedOffspringLaw, classify
from .stats import ChiSquare, chi2_two_sample
from .tree import AlleleTree, TypedCensus, UVertex

MAX_INDIVIDUALS = 10**8
MAX_LEVEL = 10**4


class TruncationError(RuntimeError):
    """A resource cap was hit; ``partial`` carries whatever was built so far."""

    def __init__(self, message: str, partial: dict | None = None):
        super().__init__(message)
        self.partial = partial or {}


@dataclass(frozen=True)
class Caps:
    max_individuals: int = MAX_INDIVIDUALS
    max_level: int = MAX_LEVEL

    def __post_init__(self):
        if self.max_individuals < 1 or self.max_level < 1:
            raise ValueError("caps must be positive")


def _generation(law: MarkedOffspringLaw, z: np.ndarray, rng: np.random.Generator):
    """Clone and mutant children of ``z`` individuals (elementwise)."""
    if law.base is not None and law.p is not None:
        pmf = np.array([float(v) for v in law.base.pmf])
        support = np.flatnonzero(pmf)
        if len(support) == 1:
            total = z * support[0]
        elif len(support) == 2:
            lo, hi = support
            total = z * lo + (hi - lo) * rng.binomial(z, pmf[hi] / (pmf[lo] + pmf[hi]))
        else:
            counts = rng.multinomial(z, pmf[support] / pmf[support].sum())
            total = counts @ support
        p = float(law.p)
        mutants = rng.binomial(total, p) if 0 < p < 1 else (total if p == 1 else np.zeros_like(total))
        return total - mutants, mutants
    ks, ls, probs = law.cells
    if len(ks) == 1:
        return z * ks[0], z * ls[0]
    counts = rng.multinomial(z, probs)
    return counts @ ks, counts @ ls


def sample_root_pairs(
    law: MarkedOffspringLaw,
    ancestors,
    rng: np.random.Generator,
    max_individuals: int = MAX_INDIVIDUALS,
    allow_truncation: bool = False,
):
    """Draw ``(T_0, M_1)`` for each entry of ``ancestors`` (which may be 0).

    Returns ``(T0, M1, truncated)`` int64/bool arrays. A family whose clone
    population exceeds ``max_individuals`` is stopped; this raises
    :class:`TruncationError` unless ``allow_truncation`` is set, in which case
    the partial counts are returned with ``truncated`` marking them.
    """
    a = np.atleast_1d(np.asarray(ancestors, dtype=np.int64))
    if np.any(a < 0):
        raise ValueError("ancestor counts must be nonnegative")
    T = a.copy()
    M = np.zeros_like(a)
    truncated = np.zeros(a.shape, dtype=bool)
    active = np.flatnonzero(a > 0)
    z = a[active]
    while active.size:
        clones, mutants = _generation(law, z, rng)
        T[active] += clones
        M[active] += mutants
        over = T[active] > max_individuals
        if over.any():
            truncated[active[over]] = True
            clones = np.where(over, 0, clones)
        keep = clones > 0
        active = active[keep]
        z = clones[keep]
    if truncated.any() and not allow_truncation:
        raise TruncationError(
            f"{int(truncated.sum())} families exceeded max_individuals={max_individuals}",
            {"T0": T, "M1": M, "truncated": truncated},
        )
    return T, M, truncated


def _rank_siblings(parent: np.ndarray, sizes: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Order grouping children by parent, decreasing size, random among ties."""
    return np.lexsort((rng.random(len(sizes)), -sizes, parent))


def simulate_allele_tree(
    law: MarkedOffspringLaw,
    ancestors: int,
    rng: np.random.Generator,
    caps: Caps = Caps(),
    depth: int | None = None,
) -> tuple[AlleleTree, TypedCensus]:
    """Simulate one tree of alleles and its typed census.

    With ``depth=None`` the simulation runs until no mutants remain and
    exceeding ``caps`` raises :class:`TruncationError`. With ``depth=k`` only
    levels ``0..k`` are built (the degrees at level ``k`` are still drawn).
    """
    if ancestors < 1:
        raise ValueError("need at least one ancestor")
    T0, M1, _ = sample_root_pairs(law, [ancestors], rng, caps.max_individuals)
    tree = AlleleTree(int(T0[0]), int(M1[0]), depth_limit=depth)
    total = int(T0[0])
    frontier: list[UVertex] = [()] if M1[0] > 0 else []
    frontier_deg = np.array([M1[0]], dtype=np.int64)[: len(frontier)]
    level = 0
    while frontier and (depth is None or level < depth):
        level += 1
        if level > caps.max_level:
            raise TruncationError(
                f"tree deeper than max_level={caps.max_level}",
                {"tree": tree, "census": tree.census(ancestors)},
            )
        n_kids = int(frontier_deg.sum())
        parent = np.repeat(np.arange(len(frontier)), frontier_deg)
        try:
            sizes, degrees, _ = sample_root_pairs(law, np.ones(n_kids, dtype=np.int64), rng, caps.max_individuals)
        except TruncationError as err:
            raise TruncationError(str(err), {"tree": tree, "census": tree.census(ancestors)}) from None
        total += int(sizes.sum())
        if total > caps.max_individuals:
            raise TruncationError(
                f"population exceeded max_individuals={caps.max_individuals}",
                {"tree": tree, "census": tree.census(ancestors)},
            )
        order = _rank_siblings(parent, sizes, rng)
        sizes, degrees, parent = sizes[order], degrees[order], parent[order]
        bounds = np.concatenate([[0], np.cumsum(frontier_deg)])
        next_frontier: list[UVertex] = []
        next_deg = []
        for i, u in enumerate(frontier):
            s, d = sizes[bounds[i]:bounds[i + 1]], degrees[bounds[i]:bounds[i + 1]]
            tree.set_children(u, s, d)
            for j in np.flatnonzero(d):
                next_frontier.append(u + (int(j) + 1,))
                next_deg.append(d[j])
        frontier = next_frontier
        frontier_deg = np.array(next_deg, dtype=np.int64)
    if depth is None or level < depth:
        tree.depth_limit = None
    census = tree.census(ancestors)
    return tree, census


def allele_tree_from_genealogy(forest) -> tuple[AlleleTree, TypedCensus]:
    """Tree of alleles of an explicit marked genealogy.

    ``forest`` is a list of ancestors; every individual is a list of children
    and every child is a pair ``(is_mutant, individual)``. Ties among sibling
    family sizes keep their order of appearance.
    """

    def family(founders):
        # size of the clonal family and the founders of its mutant sub-families
        size, mutant_founders, stack = 0, [], list(founders)
        while stack:
            ind = stack.pop()
            size += 1
            for is_mutant, child in ind:
                (mutant_founders if is_mutant else stack).append(child)
        return size, mutant_founders

    size, kids = family(forest)
    tree = AlleleTree(size, len(kids))
    pending = [((), kids)]
    while pending:
        u, founders = pending.pop()
        fams = [family([f]) for f in founders]
        order = sorted(range(len(fams)), key=lambda i: -fams[i][0])
        tree.set_children(u, [fams[i][0] for i in order], [len(fams[i][1]) for i in order])
        for j, i in enumerate(order, start=1):
            if fams[i][1]:
                pending.append((u + (j,), fams[i][1]))
    return tree, tree.census(len(forest))


def sample_census(
    law: MarkedOffspringLaw,
    ancestors,
    levels: int,
    rng: np.random.Generator,
    size: int | None = None,
    max_individuals: int = MAX_INDIVIDUALS,
    allow_truncation: bool = False,
):
    """Typed censuses of many independent populations.

    Returns ``(T, M, truncated)`` with ``T[:, k] = T_k`` for ``k < levels`` and
    ``M[:, k] = M_k`` for ``k <= levels``. Each type is simulated as one
    population founded by all ``M_k`` mutants of that type.
    """
    a = np.asarray(ancestors, dtype=np.int64)
    if size is not None:
        a = np.broadcast_to(a, (size,)).copy()
    a = np.atleast_1d(a)
    T = np.zeros((len(a), levels), dtype=np.int64)
    M = np.zeros((len(a), levels + 1), dtype=np.int64)
    trunc = np.zeros(len(a), dtype=bool)
    M[:, 0] = a
    for k in range(levels):
        T[:, k], M[:, k + 1], tr = sample_root_pairs(law, M[:, k], rng, max_individuals, allow_truncation)
        trunc |= tr
    return T, M, trunc


def _prefixes(pattern) -> list[UVertex]:
    out = set()
    for u in pattern:
        u = tuple(u)
        for i in range(len(u)):
            out.add(u[:i])
    return sorted(out, key=lambda v: (len(v), v))


def sample_pattern(
    law: MarkedOffspringLaw,
    ancestors: int,
    pattern,
    size: int,
    rng: np.random.Generator,
    max_individuals: int = MAX_INDIVIDUALS,
    allow_truncation: bool = False,
) -> dict:
    """Sizes and degrees at selected vertices for ``size`` independent trees.

    Only the vertices on paths to ``pattern`` are expanded. Returns a dict
    mapping each vertex to ``(sizes, degrees)`` arrays (0 where the vertex is
    absent) plus the key ``"truncated"``.
    """
    pattern = [tuple(u) for u in pattern]
    wanted = set(pattern) | set(_prefixes(pattern)) | {()}
    T0, M1, trunc = sample_root_pairs(law, np.full(size, ancestors), rng, max_individuals, allow_truncation)
    values: dict = {(): (T0, M1)}
    for u in _prefixes(pattern):
        if u not in values:
            continue
        deg = values[u][1]
        idx = [j for j in range(1, int(deg.max(initial=0)) + 1) if u + (j,) in wanted]
        for j in range(1, max((v[-1] for v in wanted if v[:-1] == u and v), default=0) + 1):
            values.setdefault(u + (j,), (np.zeros(size, dtype=np.int64), np.zeros(size, dtype=np.int64)))
        if not idx:
            continue
        parent = np.repeat(np.arange(size), deg)
        sizes, degrees, tr = sample_root_pairs(law, np.ones(len(parent), dtype=np.int64), rng, max_individuals, allow_truncation)
        np.logical_or.at(trunc, parent, tr)
        order = _rank_siblings(parent, sizes, rng)
        sizes, degrees, parent = sizes[order], degrees[order], parent[order]
        start = np.concatenate([[0], np.cumsum(deg)[:-1]])
        rank = np.arange(len(parent)) - start[parent] + 1
        for j in idx:
            sel = rank == j
            s = np.zeros(size, dtype=np.int64)
            d = np.zeros(size, dtype=np.int64)
            s[parent[sel]] = sizes[sel]
            d[parent[sel]] = degrees[sel]
            values[u + (j,)] = (s, d)
    out = {u: values[u] for u in wanted if u in values}
    out["truncated"] = trunc
    return out


@dataclass
class ResampleReport:
    """Per-cell chi-square comparison of ``M_2 | M_1 = m`` with ``m``-fold sums of ``M_1``."""

    samples: int
    cells: dict = field(default_factory=dict)
    skipped: dict = field(default_factory=dict)
    alpha: float = 0.01

    @property
    def passed(self) -> bool:
        return all(c.pvalue > self.alpha for c in self.cells.values())


def branching_resample_check(
    law: MarkedOffspringLaw,
    samples: int,
    rng: np.random.Generator,
    m_max: int = 10,
    min_cell: int = 500,
    alpha: float = 0.01,
) -> ResampleReport:
    """Check that the mutant counts ``(M_k)`` branch like a Galton-Watson chain.

    For each ``m`` with at least ``min_cell`` samples of ``M_1 = m`` under one
    ancestor, the observed ``M_2`` values are compared by a two-sample
    chi-square test with an equally large sample of sums of ``m`` fresh
    independent copies of ``M_1``.
    """
    if not classify(law).clone_mean < 1:
        raise ValueError("clone process must be strictly sub-critical")
    _, M, _ = sample_census(law, 1, 2, rng, size=samples)
    report = ResampleReport(samples=samples, alpha=alpha)
    m1, m2 = M[:, 1], M[:, 2]
    for m in range(1, m_max + 1):
        obs = m2[m1 == m]
        if obs.size == 0:
            continue
        if obs.size < min_cell:
            report.skipped[m] = int(obs.size)
            continue
        _, fresh, _ = sample_root_pairs(law, np.ones(obs.size * m, dtype=np.int64), rng)
        ref = fresh.reshape(obs.size, m).sum(axis=1)
        report.cells[m] = chi2_two_sample(obs, ref)
    return report
