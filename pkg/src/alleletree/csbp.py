"""Limit objects of the rescaled tree of alleles.

The Lévy measure ``nu(dy) = c (2 pi s2 y^3)^{-1/2} exp(-c^2 y / (2 s2)) dy``
(``s2`` the offspring variance) is infinite near 0 with ``int y nu(dy) = 1``.
``tau`` is the inverse-Gaussian subordinator with Lévy measure ``nu / c``:
``tau_x`` has mean ``x/c`` and shape ``x^2/s2``.

* the discrete-time CSBP steps ``Z_{k+1} | Z_k = y ~ tau_{c y}``;
* a tree-indexed CSBP gives each vertex ``u`` the atoms of a Poisson random
  measure with intensity ``Z_u nu`` as children, largest first.

Atoms are simulated above a cutoff ``epsilon``; the expected mass lost below
it, ``m_eps = int_0^eps y nu(dy)`` per unit of parent mass, is reported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .genealogy import TruncationError
from .tree import CsbpTree, UVertex

QUAD_TOL = 1e-10
ROOT_RTOL = 1e-12
MAX_NODES = 1_000_000
MAX_JUMPS = 50_000_000

_ASYMPTOTIC_S = 20.0


def _h(s: np.ndarray) -> np.ndarray:
    """``1 - sqrt(pi) s erfcx(s)``, with an asymptotic series where it cancels."""
    s = np.asarray(s, dtype=float)
    out = np.empty_like(s)
    small = s <= _ASYMPTOTIC_S
    out[small] = 1.0 - math.sqrt(math.pi) * s[small] * special.erfcx(s[small])
    r = 1.0 / (2.0 * s[~small] ** 2)
    # 1 - sqrt(pi) s erfcx(s) ~ sum_k (-1)^k (2k-1)!! r^{k+1}
    out[~small] = r * (1 - r * (1 - 3 * r * (1 - 5 * r * (1 - 7 * r * (1 - 9 * r)))))
    return out


@dataclass(frozen=True)
class LevyMeasure:
    """``nu`` for drift-rate ``c`` and offspring variance ``sigma2``."""

    c: float
    sigma2: float

    def __post_init__(self):
        if not (self.c > 0 and self.sigma2 > 0):
            raise ValueError("c and sigma2 must be positive")
        if not (math.isfinite(self.c) and math.isfinite(self.sigma2)):
            raise ValueError("c and sigma2 must be finite")
        # int (1 ^ y) nu(dy) < infinity: small-jump first moment plus the tail at 1
        small, _ = integrate.quad(lambda s: 2 * self.coef * math.exp(-self.beta * s * s), 0, 1, epsabs=QUAD_TOL)
        if not (math.isfinite(small) and math.isfinite(float(self.tail(1.0)))):
            raise ValueError("Levy measure fails the (1 ^ y) integrability check")

    @property
    def beta(self) -> float:
        return self.c**2 / (2 * self.sigma2)

    @property
    def coef(self) -> float:
        return self.c / math.sqrt(2 * math.pi * self.sigma2)

    def density(self, y):
        y = np.asarray(y, dtype=float)
        return self.coef * y**-1.5 * np.exp(-self.beta * y)

    def log_tail(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(y <= 0):
            raise ValueError("the tail of nu diverges at 0; need y > 0")
        s = np.sqrt(self.beta * y)
        return math.log(2 * self.coef) - self.beta * y - 0.5 * np.log(y) + np.log(_h(s))

    def tail(self, y):
        """``nu((y, inf))`` in closed form."""
        return np.exp(self.log_tail(y))

    def m_eps(self, eps: float) -> float:
        """``int_0^eps y nu(dy)``: expected mass per unit parent mass below ``eps``."""
        return float(special.erf(math.sqrt(self.beta * eps)))

    def second_moment_above(self, eps: float) -> float:
        """``int_eps^inf y^2 nu(dy)``."""
        full = self.sigma2 / self.c**2
        return full * float(special.gammaincc(1.5, self.beta * eps))

    def tail_quad(self, y: float) -> float:
        """Quadrature oracle for ``tail`` (substitution ``y = s^2``)."""
        if y <= 0:
            raise ValueError("need y > 0")
        f = lambda s: 2 * self.coef * s**-2 * math.exp(-self.beta * s * s)
        val, _ = integrate.quad(f, math.sqrt(y), np.inf, epsabs=1e-14, epsrel=1e-12, limit=200)
        return val


def cumulant(measure: LevyMeasure, q):
    """``kappa(q) = (sqrt(c^2 + 2 q s2) - c) / s2``."""
    q = np.asarray(q, dtype=float)
    if np.any(q < 0):
        raise ValueError("q must be >= 0")
    c, s2 = measure.c, measure.sigma2
    # rationalized form avoids cancellation for small q
    return 2 * q / (np.sqrt(c * c + 2 * q * s2) + c)


def cumulant_quad(measure: LevyMeasure, q: float) -> float:
    """``c^{-1} int (1 - e^{-q y}) nu(dy)`` by adaptive quadrature."""
    b, k = measure.beta, 2 * measure.coef / measure.c
    f = lambda s: k * -math.expm1(-q * s * s) / (s * s) * math.exp(-b * s * s) if s > 0 else k * q
    val, _ = integrate.quad(f, 0, np.inf, epsabs=QUAD_TOL, epsrel=1e-12, limit=200)
    return val


def levy_tail(measure: LevyMeasure, y):
    return measure.tail(y)


def tau_params(measure: LevyMeasure, x) -> tuple:
    """Mean and shape of the inverse-Gaussian ``tau_x``."""
    x = np.asarray(x, dtype=float)
    return x / measure.c, x * x / measure.sigma2


def theorem1_density(measure: LevyMeasure, x: float, y):
    """Density of ``tau_x``: ``x (2 pi s2 y^3)^{-1/2} exp(-(c y - x)^2 / (2 s2 y))``."""
    y = np.asarray(y, dtype=float)
    c, s2 = measure.c, measure.sigma2
    with np.errstate(divide="ignore", invalid="ignore"):
        d = x / np.sqrt(2 * math.pi * s2 * y**3) * np.exp(-((c * y - x) ** 2) / (2 * s2 * y))
    return np.where(y > 0, d, 0.0)


def tau_cdf(measure: LevyMeasure, x: float, y):
    """Closed-form CDF of ``tau_x`` (two normal CDFs, second term in log space)."""
    mu, lam = tau_params(measure, x)
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(lam / y)
        out = special.ndtr(r * (y / mu - 1)) + np.exp(2 * lam / mu + special.log_ndtr(-r * (y / mu + 1)))
    return np.where(y > 0, np.clip(out, 0.0, 1.0), 0.0)


def tau_cdf_quad(measure: LevyMeasure, x: float, y: float) -> float:
    """Quadrature oracle for ``tau_cdf`` (substitution ``y = s^2``)."""
    if y <= 0:
        return 0.0
    f = lambda s: 2 * s * float(theorem1_density(measure, x, s * s))
    mode = float(tau_params(measure, x)[0])
    pts = [p for p in (math.sqrt(mode),) if p < math.sqrt(y)]
    val, _ = integrate.quad(f, 0, math.sqrt(y), epsabs=1e-13, epsrel=1e-12, limit=400, points=pts or None)
    return val


def sample_tau(measure: LevyMeasure, x, rng: np.random.Generator, size=None):
    """Exact inverse-Gaussian draws of ``tau_x``.

    One squared normal and one uniform per draw: the smaller root ``X`` of
    the quadratic given by the normal is kept with probability
    ``mu / (mu + X)``, else ``mu^2 / X`` is returned. ``X`` is computed in a
    cancellation-free form so tiny masses stay positive.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("x must be positive")
    shape = x.shape if size is None else size
    mu, lam = tau_params(measure, x)
    mu = np.broadcast_to(mu, shape)
    lam = np.broadcast_to(lam, shape)
    y = rng.standard_normal(shape) ** 2
    w = mu * y / (2 * lam)
    small = mu / (1 + w + np.sqrt(w * w + 2 * w))
    u = rng.random(shape)
    out = np.where(u * (mu + small) <= mu, small, mu * mu / small)
    return out if size is not None or x.ndim else float(out)


def invert_tail(measure: LevyMeasure, log_v: np.ndarray, lo: float) -> np.ndarray:
    """Solve ``log nu_bar(y) = log_v`` for ``y >= lo`` by bisection in ``log y``."""
    log_v = np.asarray(log_v, dtype=float)
    a = np.full(log_v.shape, math.log(lo))
    b = np.full(log_v.shape, math.log(max(lo, 1.0)) + 1.0)
    for _ in range(200):
        up = measure.log_tail(np.exp(b)) > log_v
        if not up.any():
            break
        a = np.where(up, b, a)
        b = np.where(up, b + 2 * (b - math.log(lo) + 1), b)
    else:
        raise ArithmeticError("could not bracket the tail inverse")
    while True:
        width = b - a
        if not np.any(width > ROOT_RTOL):
            break
        mid = 0.5 * (a + b)
        above = measure.log_tail(np.exp(mid)) > log_v
        a = np.where(above, mid, a)
        b = np.where(above, b, mid)
    return np.exp(0.5 * (a + b))


def sample_atoms_batch(
    measure: LevyMeasure,
    masses,
    epsilon: float,
    top_j: int | None,
    rng: np.random.Generator,
):
    """Atoms above ``epsilon`` of independent PRMs with intensity ``mass * nu``.

    Returns ``(owner, rank, size, count)``: for each retained atom its
    parent index, its 1-based rank among the parent's atoms (largest first)
    and its size; ``count`` is the Poisson number of atoms per parent before
    the ``top_j`` cut.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    masses = np.asarray(masses, dtype=float)
    log_tail_eps = float(measure.log_tail(epsilon))
    count = rng.poisson(masses * math.exp(log_tail_eps))
    owner = np.repeat(np.arange(len(masses)), count)
    u = rng.random(len(owner))
    # the largest atoms come from the smallest uniforms
    order = np.lexsort((u, owner))
    owner, u = owner[order], u[order]
    start = np.concatenate([[0], np.cumsum(count)[:-1]]).astype(np.int64)
    rank = np.arange(len(owner)) - start[owner] + 1
    if top_j is not None:
        keep = rank <= top_j
        owner, u, rank = owner[keep], u[keep], rank[keep]
    size = invert_tail(measure, np.log(u) + log_tail_eps, epsilon) if len(u) else np.zeros(0)
    return owner, rank, size, count


def sample_atoms(measure: LevyMeasure, mass: float, epsilon: float, top_j: int | None, rng: np.random.Generator) -> np.ndarray:
    """Decreasing atoms above ``epsilon`` of a PRM with intensity ``mass * nu``."""
    if mass <= 0:
        raise ValueError("mass must be positive")
    if top_j == 0:
        return np.zeros(0)
    _, _, size, _ = sample_atoms_batch(measure, [mass], epsilon, top_j, rng)
    return size


def largest_atom_cdf(measure: LevyMeasure, mass: float, t):
    return np.exp(-mass * measure.tail(t))


def sample_csbp_chain(measure: LevyMeasure, z0, steps: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """``Z_0 = z0`` and ``Z_{k+1} ~ tau_{c Z_k}``; shape ``(steps+1,)`` or ``(size, steps+1)``."""
    if np.any(np.asarray(z0) <= 0):
        raise ValueError("z0 must be positive")
    n = 1 if size is None else size
    z = np.empty((n, steps + 1))
    z[:, 0] = z0
    for k in range(steps):
        z[:, k + 1] = sample_tau(measure, measure.c * z[:, k], rng, size=n)
    return z[0] if size is None else z


@dataclass(frozen=True)
class TauRoot:
    """Random root mass ``tau_x``."""

    x: float


def parse_root(text: str):
    """``"fixed:1.5"`` -> 1.5, ``"tau:1"`` -> ``TauRoot(1.0)``."""
    kind, _, val = str(text).partition(":")
    try:
        v = float(val)
    except ValueError:
        raise ValueError(f"bad root spec {text!r}; use fixed:<mass> or tau:<x>") from None
    if v <= 0:
        raise ValueError("root parameter must be positive")
    if kind == "fixed":
        return v
    if kind == "tau":
        return TauRoot(v)
    raise ValueError(f"bad root spec {text!r}; use fixed:<mass> or tau:<x>")


def _metadata(measure, epsilon, top_j, method, lost, dropped):
    return {
        "method": method,
        "epsilon": epsilon,
        "top_j": top_j,
        "m_eps": measure.m_eps(epsilon),
        "lost_mass_mean": lost,
        "dropped_by_top_j": dropped,
    }


def sample_tree(
    measure: LevyMeasure,
    root,
    depth: int,
    epsilon: float,
    rng: np.random.Generator,
    top_j: int | None = 64,
    max_nodes: int = MAX_NODES,
) -> CsbpTree:
    """Tree-indexed CSBP down to ``depth``; ``root`` is a mass or a :class:`TauRoot`.

    ``metadata["lost_mass_mean"][k]`` is the expected total mass of the
    sub-``epsilon`` atoms at level ``k+1``.
    """
    if depth < 0:
        raise ValueError("depth must be >= 0")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    root_mass = float(sample_tau(measure, root.x, rng)) if isinstance(root, TauRoot) else float(root)
    if root_mass <= 0:
        raise ValueError("root mass must be positive")
    m_eps = measure.m_eps(epsilon)
    lost, dropped = [], 0
    tree = CsbpTree(root_mass)
    level_v: list[UVertex] = [()]
    level_m = np.array([root_mass])
    nodes = 1
    for _ in range(depth):
        lost.append(float(level_m.sum()) * m_eps)
        owner, rank, size, count = sample_atoms_batch(measure, level_m, epsilon, top_j, rng)
        dropped += int(count.sum()) - len(size)
        nodes += len(size)
        if nodes > max_nodes:
            raise TruncationError(f"tree exceeds max_nodes={max_nodes}", {"tree": tree})
        bounds = np.concatenate([[0], np.cumsum(np.bincount(owner, minlength=len(level_v)))])
        next_v, next_m = [], []
        for i, u in enumerate(level_v):
            block = size[bounds[i]:bounds[i + 1]]
            if len(block):
                block = np.sort(block)[::-1]
                tree.set_children(u, block)
                next_v.extend(u + (j,) for j in range(1, len(block) + 1))
                next_m.append(block)
        if not next_v:
            break
        level_v, level_m = next_v, np.concatenate(next_m)
    tree.metadata = _metadata(measure, epsilon, top_j, "definition", lost, dropped)
    return tree


def sample_tree_pattern(
    measure: LevyMeasure,
    root,
    pattern,
    size: int,
    epsilon: float,
    rng: np.random.Generator,
    top_j: int | None = 64,
) -> dict:
    """Masses at selected vertices for ``size`` independent trees (0 if absent).

    Expands only the vertices on paths to ``pattern``; ``"root"`` holds the
    root masses.
    """
    pattern = [tuple(u) for u in pattern]
    wanted = {()} | {u[:i] for u in pattern for i in range(len(u) + 1)}
    if isinstance(root, TauRoot):
        z = sample_tau(measure, root.x, rng, size=size)
    else:
        z = np.full(size, float(root))
    values = {(): z}
    for level in range(max((len(u) for u in wanted), default=0)):
        for u in sorted(v for v in wanted if len(v) == level):
            parent = values[u]
            kids = [v for v in wanted if len(v) == level + 1 and v[:-1] == u]
            if not kids:
                continue
            j_max = max(v[-1] for v in kids)
            alive = np.flatnonzero(parent > 0)
            owner, rank, sz, _ = sample_atoms_batch(measure, parent[alive], epsilon, min(j_max, top_j or j_max), rng)
            for v in kids:
                out = np.zeros(size)
                sel = rank == v[-1]
                out[alive[owner[sel]]] = sz[sel]
                values[v] = out
    return {u: values[u] for u in wanted}


def sample_tree_via_subordinator(
    measure: LevyMeasure,
    x: float,
    depth: int,
    epsilon: float,
    rng: np.random.Generator,
    top_j: int | None = 64,
    max_jumps: int = MAX_JUMPS,
    max_nodes: int = MAX_NODES,
) -> CsbpTree:
    """Tree-indexed CSBP read off one path of the subordinator ``tau``.

    The root mass is the increment of ``tau`` over ``(0, x]`` (jumps above
    ``epsilon`` plus the mean ``x m_eps / c`` of the smaller ones). Vertices
    are then visited breadth first, largest sibling first, and vertex ``u``
    receives the next interval of length ``c Z_u``; its children are the
    jumps of ``tau`` falling in that interval, ranked by size. Disjoint
    intervals carry independent Poisson jumps of intensity
    ``(c Z_u) c^{-1} nu = Z_u nu``.
    """
    if depth < 0:
        raise ValueError("depth must be >= 0")
    if epsilon <= 0 or x <= 0:
        raise ValueError("epsilon and x must be positive")
    c = measure.c
    rate = math.exp(float(measure.log_tail(epsilon))) / c
    log_tail_eps = float(measure.log_tail(epsilon))
    m_eps = measure.m_eps(epsilon)
    horizon = 0.0
    times = np.zeros(0)
    sizes = np.zeros(0)

    def jumps_in(lo: float, hi: float) -> np.ndarray:
        nonlocal horizon, times, sizes
        if hi > horizon:
            # lay down jumps on (horizon, hi] with a margin for the next intervals
            new_h = hi + max(hi - horizon, 1.0)
            n = rng.poisson(rate * (new_h - horizon))
            if len(times) + n > max_jumps:
                raise TruncationError(f"subordinator path exceeds max_jumps={max_jumps}", {})
            t = np.sort(rng.uniform(horizon, new_h, size=n))
            s = invert_tail(measure, np.log(rng.random(n)) + log_tail_eps, epsilon) if n else np.zeros(0)
            times = np.concatenate([times, t])
            sizes = np.concatenate([sizes, s])
            horizon = new_h
        i, j = np.searchsorted(times, [lo, hi], side="right")
        return np.sort(sizes[i:j])[::-1]

    root_jumps = jumps_in(0.0, x)
    root_mass = float(root_jumps.sum()) + x * m_eps / c
    tree = CsbpTree(root_mass)
    cursor = x
    level_v: list[UVertex] = [()]
    level_m = [root_mass]
    lost, dropped, nodes = [], 0, 1
    for _ in range(depth):
        lost.append(float(sum(level_m)) * m_eps)
        next_v, next_m = [], []
        for u, z in zip(level_v, level_m):
            block = jumps_in(cursor, cursor + c * z)
            cursor += c * z
            if top_j is not None and len(block) > top_j:
                dropped += len(block) - top_j
                block = block[:top_j]
            if len(block):
                tree.set_children(u, block)
                next_v.extend(u + (j,) for j in range(1, len(block) + 1))
                next_m.extend(block.tolist())
        nodes += len(next_v)
        if nodes > max_nodes:
            raise TruncationError(f"tree exceeds max_nodes={max_nodes}", {"tree": tree})
        if not next_v:
            break
        level_v, level_m = next_v, next_m
    tree.metadata = _metadata(measure, epsilon, top_j, "subordinator", lost, dropped)
    tree.metadata["root_lost_mass_mean"] = x * m_eps / c
    return tree
