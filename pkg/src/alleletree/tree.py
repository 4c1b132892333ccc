"""Sparse trees indexed by the universal tree of integer sequences.

A vertex is a tuple of positive integers; ``()`` is the root. Trees store,
for every vertex with at least one child, the contiguous block of its
children's values, sorted so that sibling ``j`` is the ``j``-th largest.
Vertices missing from a tree have value 0.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

SCHEMA = 1

UVertex = tuple  # tuple[int, ...]


def parse_vertex(text: str) -> UVertex:
    """``"/"`` -> ``()``, ``"/1/2"`` or ``"1/2"`` -> ``(1, 2)``."""
    parts = [p for p in str(text).strip().split("/") if p]
    vertex = tuple(int(p) for p in parts)
    if any(j < 1 for j in vertex):
        raise ValueError(f"vertex entries must be >= 1: {text!r}")
    return vertex


def format_vertex(u: UVertex) -> str:
    return "/" + "/".join(str(j) for j in u)


class TreeInvariantError(AssertionError):
    pass


class _VertexTree:
    """Root value plus, per parent vertex, a sorted block of child values."""

    value_name = "size"

    def __init__(self, root_value):
        self.root_value = root_value
        self._children: dict[UVertex, np.ndarray] = {}

    def _set_children(self, u: UVertex, values: np.ndarray) -> None:
        if len(values):
            self._children[u] = values

    def value(self, u: UVertex):
        if not u:
            return self.root_value
        block = self._children.get(u[:-1])
        if block is None or u[-1] > len(block):
            return 0
        return block[u[-1] - 1]

    def __contains__(self, u: UVertex) -> bool:
        return not u or (u[:-1] in self._children and u[-1] <= len(self._children[u[:-1]]))

    def children(self, u: UVertex) -> np.ndarray:
        return self._children.get(tuple(u), np.empty(0))

    def n_children(self, u: UVertex) -> int:
        return len(self._children.get(tuple(u), ()))

    def vertices(self) -> Iterator[UVertex]:
        """Stored vertices in depth-first (lexicographic) order."""
        stack: list[UVertex] = [()]
        while stack:
            u = stack.pop()
            yield u
            n = self.n_children(u)
            stack.extend(u + (j,) for j in range(n, 0, -1))

    def __len__(self) -> int:
        return 1 + sum(len(b) for b in self._children.values())

    def depth(self) -> int:
        return max((len(u) + 1 for u in self._children), default=0)

    def level(self, k: int) -> list[UVertex]:
        return [u for u in self.vertices() if len(u) == k]

    def level_sums(self) -> list:
        sums = [self.root_value]
        for u, block in self._children.items():
            k = len(u) + 1
            while len(sums) <= k:
                sums.append(0)
            sums[k] += block.sum()
        return sums

    def _check_common(self) -> None:
        for u, block in self._children.items():
            if u and u not in self:
                raise TreeInvariantError(f"children stored under absent vertex {u}")
            if np.any(block <= 0):
                raise TreeInvariantError(f"non-positive child value under {u}")
            if np.any(np.diff(block) > 0):
                raise TreeInvariantError(f"siblings under {u} not in decreasing order")


class AlleleTree(_VertexTree):
    """Tree of alleles: per vertex the allelic sub-family size and outer degree."""

    def __init__(self, root_size: int, root_degree: int, depth_limit: int | None = None):
        super().__init__(int(root_size))
        self.root_degree = int(root_degree)
        # vertices at this level keep their degree but have no stored children
        self.depth_limit = depth_limit
        self._degrees: dict[UVertex, np.ndarray] = {}

    def set_children(self, u: UVertex, sizes, degrees) -> None:
        sizes = np.asarray(sizes, dtype=np.int64)
        degrees = np.asarray(degrees, dtype=np.int64)
        if len(sizes):
            self._children[tuple(u)] = sizes
            self._degrees[tuple(u)] = degrees

    def size(self, u: UVertex = ()) -> int:
        return int(self.value(tuple(u)))

    def degree(self, u: UVertex = ()) -> int:
        u = tuple(u)
        if not u:
            return self.root_degree
        block = self._degrees.get(u[:-1])
        if block is None or u[-1] > len(block):
            return 0
        return int(block[u[-1] - 1])

    def children_degrees(self, u: UVertex) -> np.ndarray:
        return self._degrees.get(tuple(u), np.empty(0, dtype=np.int64))

    def census(self, ancestors: int | None = None) -> "TypedCensus":
        """Level sums: ``T_k = sum of sizes`` and ``M_{k+1} = sum of degrees`` at level k."""
        T = [int(v) for v in self.level_sums()]
        M = [0] * (len(T) + 1)
        M[1] = self.root_degree
        for u, block in self._degrees.items():
            M[len(u) + 2] += int(block.sum())
        return TypedCensus.from_lists(T, M[1:], ancestors)

    def validate(self, ancestors: int | None = None) -> None:
        """Raise :class:`TreeInvariantError` if any structural invariant fails."""
        if self.root_value <= 0:
            raise TreeInvariantError("root size must be positive")
        if ancestors is not None and self.root_value < ancestors:
            raise TreeInvariantError("root family smaller than the number of ancestors")
        self._check_common()
        for u in self.vertices():
            stored = self.n_children(u)
            if self.degree(u) != stored:
                if stored != 0 or self.depth_limit is None or len(u) != self.depth_limit:
                    raise TreeInvariantError(f"degree({u})={self.degree(u)} but {stored} stored children")

    def rows(self) -> list[tuple[str, int, int]]:
        return [(format_vertex(u), self.size(u), self.degree(u)) for u in self.vertices()]

    def to_csv(self, replicate: int | None = None) -> str:
        buf = io.StringIO()
        write_tree_csv(buf, [(replicate, self)])
        return buf.getvalue()

    def to_json_obj(self) -> list[dict]:
        return [{"path": p, "size": s, "degree": d} for p, s, d in self.rows()]

    @classmethod
    def from_rows(cls, rows: Sequence[tuple]) -> "AlleleTree":
        """Rebuild a tree from ``(path, size, degree)`` rows in any order."""
        by_vertex = {parse_vertex(p): (int(s), int(d)) for p, s, d in rows}
        root = by_vertex.pop((), None)
        if root is None:
            raise ValueError("rows contain no root")
        tree = cls(*root)
        parents: dict[UVertex, list] = {}
        for u, sd in by_vertex.items():
            parents.setdefault(u[:-1], []).append((u[-1], sd))
        for u, kids in parents.items():
            kids.sort()
            if [j for j, _ in kids] != list(range(1, len(kids) + 1)):
                raise ValueError(f"children of {u} are not numbered 1..n")
            tree.set_children(u, [s for _, (s, _) in kids], [d for _, (_, d) in kids])
        return tree

    def __eq__(self, other) -> bool:
        return isinstance(other, AlleleTree) and self.rows() == other.rows()

    def __repr__(self) -> str:
        return f"AlleleTree(root={self.root_value}, degree={self.root_degree}, vertices={len(self)})"


@dataclass(frozen=True)
class TypedCensus:
    """Population ``T[k]`` and mutant count ``M[k]`` of each type ``k``.

    ``M[0]`` is the number of ancestors. When the process is extinct after the
    last listed type, ``len(M) == len(T)``; when the census was cut at a fixed
    depth, ``M`` carries one extra entry for the still-pending mutants.
    """

    T: tuple
    M: tuple

    @classmethod
    def from_lists(cls, T: list, M_from_1: list, ancestors: int | None = None) -> "TypedCensus":
        M = [ancestors] + list(M_from_1)
        while len(M) > len(T) and M[-1] == 0:
            M.pop()
        return cls(tuple(T), tuple(M))

    def with_ancestors(self, a: int) -> "TypedCensus":
        return TypedCensus(self.T, (a,) + self.M[1:])

    def pairs(self) -> list[tuple[int, int]]:
        """``(T_k, M_{k+1})`` for each listed type."""
        M = list(self.M) + [0] * (len(self.T) + 1 - len(self.M))
        return [(self.T[k], M[k + 1]) for k in range(len(self.T))]

    def rows(self) -> list[tuple[int, int, int]]:
        M = list(self.M) + [0] * (len(self.T) - len(self.M))
        return [(k, self.T[k], M[k]) for k in range(len(self.T))]


class CsbpTree(_VertexTree):
    """Tree-indexed CSBP masses with truncation metadata."""

    value_name = "mass"

    def __init__(self, root_mass: float, metadata: dict | None = None):
        super().__init__(float(root_mass))
        self.metadata = dict(metadata or {})

    def set_children(self, u: UVertex, masses) -> None:
        masses = np.asarray(masses, dtype=float)
        if len(masses):
            self._children[tuple(u)] = masses

    def mass(self, u: UVertex = ()) -> float:
        return float(self.value(tuple(u)))

    def validate(self) -> None:
        if not self.root_value > 0:
            raise TreeInvariantError("root mass must be positive")
        self._check_common()

    def rows(self) -> list[tuple[str, float]]:
        return [(format_vertex(u), self.mass(u)) for u in self.vertices()]

    def __repr__(self) -> str:
        return f"CsbpTree(root={self.root_value:.6g}, vertices={len(self)})"


def _fmt_real(v: float) -> str:
    return repr(float(v))


def write_tree_csv(fh, trees: Sequence[tuple[int | None, AlleleTree]], header: dict | None = None) -> None:
    """Vertex rows ``replicate,path,size,degree`` in depth-first order."""
    meta = {"schema": SCHEMA, **(header or {})}
    fh.write("# " + " ".join(f"{k}={v}" for k, v in meta.items()) + "\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["replicate", "path", "size", "degree"])
    for rep, tree in trees:
        for p, s, d in tree.rows():
            w.writerow(["" if rep is None else rep, p, s, d])


def write_csbp_csv(fh, trees: Sequence[tuple[int | None, CsbpTree]], header: dict | None = None) -> None:
    meta = {"schema": SCHEMA, **(header or {})}
    fh.write("# " + " ".join(f"{k}={v}" for k, v in meta.items()) + "\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["replicate", "path", "size"])
    for rep, tree in trees:
        for p, m in tree.rows():
            w.writerow(["" if rep is None else rep, p, _fmt_real(m)])


def write_census_csv(fh, censuses: Sequence[tuple[int | None, TypedCensus]], header: dict | None = None) -> None:
    meta = {"schema": SCHEMA, **(header or {})}
    fh.write("# " + " ".join(f"{k}={v}" for k, v in meta.items()) + "\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["replicate", "k", "T_k", "M_k"])
    for rep, census in censuses:
        for k, t, m in census.rows():
            w.writerow(["" if rep is None else rep, k, t, m])


def trees_to_json(trees: Sequence[tuple[int | None, AlleleTree]], header: dict | None = None) -> str:
    doc = {
        "schema": SCHEMA,
        **(header or {}),
        "trees": [{"replicate": rep, "vertices": tree.to_json_obj()} for rep, tree in trees],
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def read_tree_csv(text: str) -> dict[int | None, AlleleTree]:
    rows: dict = {}
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    for rec in csv.DictReader(lines):
        rep = int(rec["replicate"]) if rec["replicate"] else None
        rows.setdefault(rep, []).append((rec["path"], rec["size"], rec["degree"]))
    return {rep: AlleleTree.from_rows(r) for rep, r in rows.items()}
