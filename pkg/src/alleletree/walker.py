"""Random-walk construction of the allelic chain and the tree of alleles.

The clone walk ``S_n = a + sum_{i<=n} (clones_i - 1)`` is downward skip-free,
so its first passage below ``-j`` happens exactly at ``-j``. With
``sigma(j)`` the first time ``S`` hits ``-j`` and ``Sigma(j)`` the number of
mutants among the first ``sigma(j)`` steps:

* ``(sigma(0), Sigma(0))`` has the law of ``(T_0, M_1)``;
* the chain ``T~_0 + ... + T~_k = sigma(M~_1 + ... + M~_k)`` has the law of
  ``(T_k, M_{k+1})``;
* the excursion lengths ``lambda(j) = sigma(j) - sigma(j-1)`` are the sizes of
  the allelic families, family ``j`` owning the mutants with indices
  ``Sigma(j-1)+1 .. Sigma(j)`` (the root owns ``1 .. Sigma(0)``).

Steps are generated in blocks; a path is extended only while the current
passage target has not been reached.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .genealogy import Caps, TruncationError, _rank_siblings
from .offspring import MarkedOffspringLaw, sample_offspring
from .tree import AlleleTree, SCHEMA, TypedCensus

BLOCK = 256


@dataclass
class WalkState:
    """Walk position after ``steps_taken`` steps and the running mutant total."""

    position: int
    steps_taken: int = 0
    mutant_accumulator: int = 0
    running_min: int | None = None

    def __post_init__(self):
        if self.running_min is None:
            self.running_min = self.position


@dataclass
class WalkPath:
    """An explicit prefix of the walk: per-step clone and mutant counts."""

    ancestors: int
    clones: np.ndarray
    mutants: np.ndarray

    @property
    def positions(self) -> np.ndarray:
        return self.ancestors + np.cumsum(self.clones - 1)

    def passage_times(self, j_max: int) -> np.ndarray:
        """``sigma(0..j_max)`` as step counts (1-based); -1 where not reached."""
        runmin = np.minimum.accumulate(self.positions)
        depth = -runmin
        idx = np.searchsorted(depth, np.arange(j_max + 1), side="left")
        out = idx + 1
        out[idx >= len(depth)] = -1
        return out

    def mutants_by(self, steps: np.ndarray) -> np.ndarray:
        """``Sigma`` evaluated at the given step counts."""
        cum = np.concatenate([[0], np.cumsum(self.mutants)])
        return cum[steps]


def _draw_block(law, rng, n):
    return sample_offspring(law, rng, size=n)


def _path_until_stable(law, ancestors, rng, caps: Caps, levels: int | None, clones=None, mutants=None) -> tuple[WalkPath, list]:
    """Extend the walk until the chain target is reached ``levels`` times or for good.

    Returns the path and the list of targets ``J_0 = 0, J_1, ...`` whose
    passage times were reached (``J_{k+1} = Sigma(sigma(J_k))``).
    """
    given = clones is not None
    chunks_c = [] if not given else [np.asarray(clones, dtype=np.int64)]
    chunks_m = [] if not given else [np.asarray(mutants, dtype=np.int64)]
    pos, runmin, cum_m, steps = ancestors, ancestors, 0, 0
    targets = [0]
    done = False
    while not done:
        if given and chunks_c:
            c, m = chunks_c[0], chunks_m[0]
        else:
            if given:
                raise ValueError("supplied steps end before the walk reached its final passage time")
            c, m = _draw_block(law, rng, BLOCK)
            chunks_c.append(c)
            chunks_m.append(m)
        p = pos + np.cumsum(c - 1)
        rm = np.minimum(runmin, np.minimum.accumulate(p))
        cm = cum_m + np.cumsum(m)
        while True:
            J = targets[-1]
            hit = np.flatnonzero(rm <= -J)
            if hit.size == 0:
                break
            i = hit[0]
            nxt = int(cm[i])
            if nxt == J or (levels is not None and len(targets) >= levels):
                done = True
                break
            targets.append(nxt)
            if len(targets) > caps.max_level + 1:
                raise TruncationError(f"walk chain deeper than max_level={caps.max_level}", {"targets": targets})
        if given:
            chunks_c, chunks_m = [], []
            if not done:
                raise ValueError("supplied steps end before the walk reached its final passage time")
        pos, runmin, cum_m, steps = int(p[-1]), int(rm[-1]), int(cm[-1]), steps + len(c)
        if steps > caps.max_individuals and not done:
            raise TruncationError(f"walk exceeded max_individuals={caps.max_individuals} steps", {"targets": targets})
        if given:
            break
    if not given:
        clones_all = np.concatenate(chunks_c) if len(chunks_c) > 1 else chunks_c[0]
        mutants_all = np.concatenate(chunks_m) if len(chunks_m) > 1 else chunks_m[0]
    else:
        clones_all, mutants_all = np.asarray(clones, dtype=np.int64), np.asarray(mutants, dtype=np.int64)
    return WalkPath(ancestors, clones_all, mutants_all), targets


def walk_root_pair(law: MarkedOffspringLaw, ancestors: int, rng: np.random.Generator, caps: Caps = Caps()) -> tuple[int, int]:
    """``(sigma(0), Sigma(0))`` for one walk started at ``ancestors``."""
    chain = walk_chain(law, ancestors, 1, rng, caps)
    return chain[0]


def walk_chain(
    law: MarkedOffspringLaw,
    ancestors: int,
    levels: int | None,
    rng: np.random.Generator | None = None,
    caps: Caps = Caps(),
    steps: tuple | None = None,
) -> list[tuple[int, int]]:
    """The chain ``(T~_k, M~_{k+1})`` for ``k < levels`` (all levels if None).

    ``steps=(clones, mutants)`` replays a given step sequence instead of
    drawing one. The chain stops early once ``M~_{k+1} = 0``.
    """
    if ancestors < 1:
        raise ValueError("need at least one ancestor")
    clones, mutants = steps if steps is not None else (None, None)
    path, targets = _path_until_stable(law, ancestors, rng, caps, levels, clones, mutants)
    sig = path.passage_times(targets[-1])
    chain = []
    prev_t = 0
    n_levels = len(targets) if levels is None else min(len(targets), levels)
    for k in range(n_levels):
        t = int(sig[targets[k]])
        nxt = int(path.mutants_by(np.array([t]))[0])
        chain.append((t - prev_t, nxt - targets[k]))
        prev_t = t
        if nxt == targets[k]:
            break
    return chain


def walk_allele_tree(
    law: MarkedOffspringLaw,
    ancestors: int,
    rng: np.random.Generator | None = None,
    caps: Caps = Caps(),
    steps: tuple | None = None,
) -> AlleleTree:
    """Tree of alleles read off the excursions of one clone walk."""
    if ancestors < 1:
        raise ValueError("need at least one ancestor")
    clones, mutants = steps if steps is not None else (None, None)
    path, targets = _path_until_stable(law, ancestors, rng, caps, None, clones, mutants)
    J = targets[-1]
    sig = path.passage_times(J)
    Sig = path.mutants_by(sig)
    lam = np.diff(sig)
    delta = np.diff(Sig)
    tree = AlleleTree(int(sig[0]), int(Sig[0]))
    # family j >= 1 hangs under family min{i >= 0 : Sigma(i) >= j}
    parent = np.searchsorted(Sig, np.arange(1, J + 1), side="left")
    tie_rng = rng if rng is not None else np.random.default_rng(0)
    order = _rank_siblings(parent, lam, tie_rng)
    vertex = {0: ()}
    blocks: dict[int, list] = {}
    for idx in order:
        fam = int(idx) + 1
        par = int(parent[idx])
        blocks.setdefault(par, []).append(fam)
    # families are numbered breadth first, so parents are placed before children
    for par in sorted(blocks):
        fams = blocks[par]
        u = vertex[par]
        tree.set_children(u, lam[[f - 1 for f in fams]], delta[[f - 1 for f in fams]])
        for j, f in enumerate(fams, start=1):
            vertex[f] = u + (j,)
    return tree


def walk_census(chain, ancestors: int) -> TypedCensus:
    """Census from a walk chain ``[(T~_k, M~_{k+1}), ...]``."""
    T = [t for t, _ in chain]
    M = [m for _, m in chain]
    return TypedCensus.from_lists(T, M, ancestors)


def sample_walk_chains(
    law: MarkedOffspringLaw,
    ancestors: int,
    levels: int,
    size: int,
    rng: np.random.Generator,
    max_steps: int = 10**8,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``walk_chain`` for ``size`` independent walks.

    Returns ``(T, M)`` with ``T[:, k] = T~_k`` and ``M[:, k] = M~_k``
    (``M[:, 0] = ancestors``), ``k < levels``.
    """
    T = np.zeros((size, levels), dtype=np.int64)
    M = np.zeros((size, levels + 1), dtype=np.int64)
    M[:, 0] = ancestors
    pos = np.full(size, ancestors, dtype=np.int64)
    runmin = pos.copy()
    cum_m = np.zeros(size, dtype=np.int64)
    steps = np.zeros(size, dtype=np.int64)
    last_pass = np.zeros(size, dtype=np.int64)
    target = np.zeros(size, dtype=np.int64)
    level = np.zeros(size, dtype=np.int64)
    active = np.arange(size)
    block = 8
    while active.size:
        n = active.size
        c, m = sample_offspring(law, rng, size=n * block)
        c = c.reshape(n, block)
        m = m.reshape(n, block)
        p = pos[active, None] + np.cumsum(c - 1, axis=1)
        rm = np.minimum(runmin[active, None], np.minimum.accumulate(p, axis=1))
        cm = cum_m[active, None] + np.cumsum(m, axis=1)
        live = np.ones(n, dtype=bool)
        while True:
            reach = (rm <= -target[active, None]) & live[:, None]
            rows = np.flatnonzero(reach.any(axis=1))
            if rows.size == 0:
                break
            i = reach[rows].argmax(axis=1)
            r = active[rows]
            t_pass = steps[r] + i + 1
            sig_val = cm[rows, i]
            k = level[r]
            T[r, k] = t_pass - last_pass[r]
            M[r, k + 1] = sig_val - target[r]
            last_pass[r] = t_pass
            level[r] = k + 1
            finished = (sig_val == target[r]) | (level[r] >= levels)
            target[r] = sig_val
            live[rows[finished]] = False
        pos[active] = p[:, -1]
        runmin[active] = rm[:, -1]
        cum_m[active] = cm[:, -1]
        steps[active] += block
        if np.any(steps[active[live]] > max_steps):
            raise TruncationError(f"walk exceeded {max_steps} steps", {"T": T, "M": M})
        active = active[live]
        block = min(block * 2, 4096)
    return T, M


def write_walk_trace(fh, path: WalkPath) -> None:
    """Rows ``step,position,mutant_mark`` for debugging."""
    fh.write(f"# schema={SCHEMA} ancestors={path.ancestors}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["step", "position", "mutant_mark"])
    w.writerow([0, path.ancestors, 0])
    for n, (s, mk) in enumerate(zip(path.positions, path.mutants), start=1):
        w.writerow([n, int(s), int(mk)])


def walk_path(law: MarkedOffspringLaw, ancestors: int, rng: np.random.Generator, caps: Caps = Caps()) -> WalkPath:
    """Draw a walk up to its final passage time (for tracing)."""
    path, targets = _path_until_stable(law, ancestors, rng, caps, None)
    end = int(path.passage_times(targets[-1])[-1])
    return WalkPath(ancestors, path.clones[:end], path.mutants[:end])
