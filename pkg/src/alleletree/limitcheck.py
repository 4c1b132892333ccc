"""Paired experiments: rescaled Galton-Watson statistics against their limits.

Every check draws its replicates in fixed chunks from named sub-streams of a
master seed (see :mod:`alleletree.streams`), so a report depends only on its
arguments and not on the number of threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import csbp, streams
from .exact import enumerate_two_levels
from .genealogy import MAX_INDIVIDUALS, sample_census, sample_pattern, sample_root_pairs
from .offspring import MarkedOffspringLaw, OffspringLaw, binomial_mark, classify
from .stats import binomial_se, chi2_gof, chi2_two_sample, ks_1samp, ks_2samp, ks_threshold
from .tree import UVertex, format_vertex
from .walker import sample_walk_chains

ALPHA = 0.01
KS_TOLERANCE = 0.03
COLLAPSE_DELTA = 0.1
COLLAPSE_LEVEL = 0.05
MIN_TAIL_HITS = 100
TAIL_CHUNK = 1 << 18


@dataclass(frozen=True)
class Regime:
    """``a_n = max(1, round(n x))`` ancestors and mutation probability ``p_n = min(1, c/n)``."""

    n: int
    x: float
    c: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not self.c > 0:
            raise ValueError("c must be positive")
        if not self.x > 0:
            raise ValueError("x must be positive")

    @property
    def a_n(self) -> int:
        return max(1, round(self.n * self.x))

    @property
    def p_n(self) -> float:
        return min(1.0, self.c / self.n)

    def law(self, base: OffspringLaw) -> MarkedOffspringLaw:
        return binomial_mark(base.as_float(), self.p_n)

    def measure(self, base: OffspringLaw) -> csbp.LevyMeasure:
        return csbp.LevyMeasure(self.c, float(base.variance()))

    def as_dict(self) -> dict:
        return {"n": self.n, "x": self.x, "c": self.c, "a_n": self.a_n, "p_n": self.p_n}


@dataclass
class FitReport:
    """One statistical comparison.

    ``passed`` is ``None`` for report-only or inconclusive comparisons. With
    ``direction == "le"`` the check passes when ``statistic <= threshold``;
    with ``"ge"`` when ``statistic >= threshold`` (p-values).
    """

    name: str
    sample_sizes: tuple
    statistic: float
    threshold: float
    passed: bool | None
    direction: str = "le"
    metadata: dict = field(default_factory=dict)
    subreports: list = field(default_factory=list)
    raw: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.passed is not None and not self.subreports:
            ok = self.statistic <= self.threshold if self.direction == "le" else self.statistic >= self.threshold
            if ok != self.passed:
                raise ValueError(f"{self.name}: pass flag inconsistent with statistic vs threshold")

    @classmethod
    def combine(cls, name: str, subreports: list, metadata: dict | None = None, raw: dict | None = None) -> "FitReport":
        """Aggregate: fails if any gating subreport fails; ``None`` if none gated."""
        verdicts = [r.passed for r in subreports if r.passed is not None]
        passed = all(verdicts) if verdicts else None
        n_fail = sum(1 for v in verdicts if not v)
        sizes = tuple(sorted({s for r in subreports for s in r.sample_sizes}))
        return cls(name, sizes, float(n_fail), 0.0, passed, "le", metadata or {}, subreports, raw or {})

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "sample_sizes": list(self.sample_sizes),
            "statistic": self.statistic,
            "threshold": self.threshold,
            "direction": self.direction,
            "passed": self.passed,
            "metadata": self.metadata,
            "subreports": [r.to_dict() for r in self.subreports],
        }

    def lines(self, indent: int = 0) -> list[str]:
        verdict = {True: "PASS", False: "FAIL", None: "INFO"}[self.passed]
        op = "<=" if self.direction == "le" else ">="
        out = [f"{' ' * indent}[{verdict}] {self.name}: {self.statistic:.6g} {op} {self.threshold:.6g}"]
        for r in self.subreports:
            out.extend(r.lines(indent + 2))
        return out


def _ks_report(name, d, thr, sizes, **meta) -> FitReport:
    return FitReport(name, sizes, float(d), float(thr), bool(d <= thr), "le", meta)


def _require_critical(base: OffspringLaw) -> None:
    mean = float(base.mean())
    if abs(mean - 1) > 1e-12:
        raise ValueError(f"base law must be critical (mean {mean})")
    if not math.isfinite(float(base.variance())) or float(base.variance()) <= 0:
        raise ValueError("base law needs finite positive variance")


def _seed_meta(seed: int, keys: tuple, chunk: int = streams.CHUNK) -> dict:
    return {"master_seed": seed, "stream": list(keys), "chunk": chunk}


def root_samples(regime: Regime, base: OffspringLaw, replicates: int, seed: int, threads: int = 1, ancestors: int | None = None):
    """``(T_0, M_1)`` for ``replicates`` populations of ``a_n`` (or ``ancestors``) founders."""
    law = regime.law(base)
    a = regime.a_n if ancestors is None else ancestors

    def work(size, rng):
        T, M, tr = sample_root_pairs(law, np.full(size, a, dtype=np.int64), rng, MAX_INDIVIDUALS, allow_truncation=True)
        return T, M, tr

    return streams.concat(streams.map_chunks(work, replicates, seed, "root", regime.n, a, threads=threads))


def collapse_report(name, sizes_scaled, degrees_scaled, c, gate: bool = True, delta=COLLAPSE_DELTA, level=COLLAPSE_LEVEL) -> FitReport:
    """``P(|n^{-1} d - c n^{-2} A| > delta)`` against ``level``."""
    frac = float(np.mean(np.abs(degrees_scaled - c * sizes_scaled) > delta))
    passed = bool(frac <= level) if gate else None
    return FitReport(name, (len(sizes_scaled),), frac, level, passed, "le", {"delta": delta, "gated": gate})


def check_root_convergence(
    regime: Regime,
    base: OffspringLaw,
    replicates: int,
    seed: int,
    threads: int = 1,
    ks_tolerance: float = KS_TOLERANCE,
    gate_collapse: bool = True,
) -> FitReport:
    """KS of ``n^{-2} T_0`` against ``tau_x`` and the collapse of ``n^{-1} M_1`` onto ``c n^{-2} T_0``."""
    _require_critical(base)
    if replicates < 1:
        raise ValueError("need replicates")
    measure = regime.measure(base)
    T, M, tr = root_samples(regime, base, replicates, seed, threads)
    t = T / regime.n**2
    m = M / regime.n
    d = ks_1samp(t, lambda y: csbp.tau_cdf(measure, regime.x, y))
    subs = [
        _ks_report("ks n^-2 T0 vs tau_x", d, ks_tolerance, (replicates,), mc_band=ks_threshold(ALPHA, replicates)),
        collapse_report("collapse n^-1 M1 vs c n^-2 T0", t, m, regime.c, gate_collapse),
    ]
    meta = {**regime.as_dict(), **_seed_meta(seed, ("root", regime.n, regime.a_n)), "truncated": int(tr.sum())}
    return FitReport.combine("root", subs, meta, {"T0_scaled": t, "M1_scaled": m})


def trend_report(n_list, dists, replicates: int, alpha: float = ALPHA, **meta) -> FitReport:
    """KS distances along increasing ``n`` may rise by at most ``kstwobign.isf(alpha) / sqrt(replicates)``."""
    band = ks_threshold(alpha, replicates)
    worst = max((b - a for a, b in zip(dists, dists[1:])), default=0.0)
    meta = {"n_list": list(n_list), "ks": [float(d) for d in dists], "band": band, **meta}
    return FitReport("root-trend", (replicates,), float(worst), float(band), bool(worst <= band), "le", meta)


def check_root_trend(
    x: float,
    c: float,
    base: OffspringLaw,
    n_list,
    replicates: int,
    seed: int,
    threads: int = 1,
    alpha: float = ALPHA,
) -> FitReport:
    """KS distances of ``n^{-2} T_0`` vs ``tau_x`` should not increase along ``n_list``."""
    n_list = sorted(n_list)
    dists = [
        check_root_convergence(Regime(n, x, c), base, replicates, seed, threads, gate_collapse=False).subreports[0].statistic
        for n in n_list
    ]
    return trend_report(n_list, dists, replicates, alpha, x=x, c=c, master_seed=seed)


def check_degree_collapse(regime: Regime, base: OffspringLaw, replicates: int, seed: int, threads: int = 1) -> FitReport:
    """Root outer degree against root size: ``P(|n^{-1} d - c n^{-2} A| > 0.1) <= 0.05``."""
    _require_critical(base)
    T, M, tr = root_samples(regime, base, replicates, seed, threads)
    rep = collapse_report(f"degree collapse n={regime.n}", T / regime.n**2, M / regime.n, regime.c)
    rep.metadata.update({**regime.as_dict(), **_seed_meta(seed, ("root", regime.n, regime.a_n)), "truncated": int(tr.sum())})
    return rep


def tail_prediction(measure: csbp.LevyMeasure, t: float, m: float) -> float:
    """``c^{-1} nu_bar(min(t, m/c))``."""
    return float(measure.tail(min(t, m / measure.c))) / measure.c


def check_tail_limit(
    regime: Regime,
    base: OffspringLaw,
    replicates: int,
    grid,
    seed: int,
    threads: int = 1,
    n_se: float = 3.0,
    chunk: int = TAIL_CHUNK,
) -> FitReport:
    """``n P_1(n^{-2} T_0 > t or n^{-1} M_1 > m)`` against ``c^{-1} nu_bar(min(t, m/c))``.

    Tested pointwise at the grid cells; cells with fewer than
    ``MIN_TAIL_HITS`` hits are inconclusive. ``m = inf`` gives the
    ``T_0``-only tail.
    """
    _require_critical(base)
    grid = [(float(t), float(m)) for t, m in grid]
    if any(t <= 0 or m <= 0 for t, m in grid):
        raise ValueError("grid points must be bounded away from 0")
    law = regime.law(base)
    n = regime.n
    measure = regime.measure(base)

    def work(size, rng):
        T, M, tr = sample_root_pairs(law, np.ones(size, dtype=np.int64), rng, MAX_INDIVIDUALS, allow_truncation=True)
        hits = [int(np.count_nonzero((T > t * n * n) | (M > m * n))) for t, m in grid]
        return np.array(hits + [int(tr.sum())])

    parts = streams.map_chunks(work, replicates, seed, "tail", n, threads=threads, chunk=chunk)
    counts = np.sum(parts, axis=0)
    hits, truncated = counts[:-1], int(counts[-1])
    subs = []
    for (t, m), h in zip(grid, hits):
        pred = tail_prediction(measure, t, m)
        est = n * h / replicates
        se = n * binomial_se(pred / n, replicates)
        dev = abs(est - pred) / se
        passed = bool(dev <= n_se) if h >= MIN_TAIL_HITS else None
        subs.append(FitReport(
            f"tail t={t:g} m={m:g}", (replicates,), float(dev), n_se, passed, "le",
            {"hits": int(h), "estimate": float(est), "prediction": pred, "se": float(se), "inconclusive": bool(h < MIN_TAIL_HITS),
             "note": "pointwise test at a continuity point"},
        ))
    meta = {**regime.as_dict(), "ancestors": 1, **_seed_meta(seed, ("tail", n), chunk), "truncated": truncated}
    return FitReport.combine("tail", subs, meta)


def check_census_chain(
    regime: Regime,
    base: OffspringLaw,
    levels: int,
    replicates: int,
    seed: int,
    threads: int = 1,
    alpha: float = ALPHA,
    collapse_floor: float = 0.1,
) -> FitReport:
    """Per-level two-sample KS of ``n^{-2} T_k`` against ``Z_{k+1}`` with ``Z_0 = x / c``.

    Extinction (``T_k = 0``) and the mutant collapse are reported without a
    verdict; the limit chain never hits 0.
    """
    _require_critical(base)
    if not 1 <= levels <= 4:
        raise ValueError("levels must be in 1..4")
    law = regime.law(base)
    measure = regime.measure(base)
    n, a = regime.n, regime.a_n

    def gw(size, rng):
        T, M, tr = sample_census(law, a, levels, rng, size=size, allow_truncation=True)
        return T, M, tr

    def chain(size, rng):
        return csbp.sample_csbp_chain(measure, regime.x / regime.c, levels, rng, size=size)

    T, M, tr = streams.concat(streams.map_chunks(gw, replicates, seed, "census", n, a, levels, threads=threads))
    Z = streams.concat(streams.map_chunks(chain, replicates, seed, "chain", levels, threads=threads))
    subs = []
    for k in range(levels):
        t = T[:, k] / n**2
        d = ks_2samp(t, Z[:, k + 1])
        thr = ks_threshold(alpha, replicates, replicates)
        subs.append(_ks_report(f"level {k} ks n^-2 T_k vs Z_{k + 1}", d, thr, (replicates, replicates)))
        delta_n = 1.0 / n**2
        subs.append(FitReport(
            f"level {k} extinction", (replicates,), float(np.mean(T[:, k] == 0)), float(np.mean(Z[:, k + 1] < delta_n)),
            None, "le", {"P(T_k=0)": float(np.mean(T[:, k] == 0)), "P(Z<1/n^2)": float(np.mean(Z[:, k + 1] < delta_n))},
        ))
        live = t > collapse_floor
        if live.any():
            ratio = (M[live, k + 1] / n) / (regime.c * t[live])
            subs.append(FitReport(
                f"level {k} collapse ratio", (int(live.sum()),), float(np.mean(np.abs(ratio - 1))), COLLAPSE_DELTA,
                None, "le", {"floor": collapse_floor, "median_ratio": float(np.median(ratio))},
            ))
    meta = {**regime.as_dict(), "levels": levels, **_seed_meta(seed, ("census", n, a, levels)), "truncated": int(tr.sum())}
    raw = {f"T{k}_scaled": T[:, k] / n**2 for k in range(levels)}
    raw.update({f"Z{k + 1}": Z[:, k + 1] for k in range(levels)})
    return FitReport.combine("census", subs, meta, raw)


def check_tree_convergence(
    regime: Regime,
    base: OffspringLaw,
    pattern,
    replicates: int,
    seed: int,
    threads: int = 1,
    limit_replicates: int | None = None,
    epsilon: float = 1e-3,
    top_j: int = 64,
    alpha: float = ALPHA,
    ks_tolerance: float = KS_TOLERANCE,
    gate_collapse: bool = True,
    two_sample_size: int | None = None,
) -> FitReport:
    """Finite-dimensional comparison of ``n^{-2} A_u`` with the tree-indexed CSBP.

    The limit tree has root ``tau_x``. The root is also tested one-sample
    against the closed-form law of ``tau_x``. Non-root sizes below
    ``epsilon`` are set to 0 before the two-sample test, which uses the
    first ``two_sample_size`` Galton-Watson replicates (all by default).
    """
    _require_critical(base)
    pattern = sorted({tuple(u) for u in pattern}, key=lambda v: (len(v), v))
    if any(len(u) > 2 or any(j > 4 for j in u) for u in pattern):
        raise ValueError("pattern vertices must have depth <= 2 and indices <= 4")
    law = regime.law(base)
    measure = regime.measure(base)
    n, a = regime.n, regime.a_n
    L = limit_replicates or replicates
    K = min(two_sample_size or replicates, replicates)

    def gw(size, rng):
        out = sample_pattern(law, a, pattern, size, rng, allow_truncation=True)
        return {format_vertex(u): np.stack(out[u]) for u in out if u != "truncated"} | {"truncated": out["truncated"]}

    def limit(size, rng):
        out = csbp.sample_tree_pattern(measure, csbp.TauRoot(regime.x), pattern, size, epsilon, rng, top_j)
        return {format_vertex(u): v for u, v in out.items()}

    G = streams.concat(streams.map_chunks(gw, replicates, seed, "tree", n, a, threads=threads), axis=-1)
    Z = streams.concat(streams.map_chunks(limit, L, seed, "csbp-tree", threads=threads))
    subs = []
    raw = {}
    for u in pattern:
        key = format_vertex(u)
        sizes, degrees = G[key]
        s = sizes / n**2
        raw[f"A{key}"] = s
        if not sizes.any():
            subs.append(FitReport(f"vertex {key} ks", (replicates, L), 0.0, 0.0, None, "le", {"inconclusive": "no data"}))
            continue
        if u == ():
            d1 = ks_1samp(s, lambda y: csbp.tau_cdf(measure, regime.x, y))
            subs.append(_ks_report(f"vertex {key} ks vs tau_x cdf", d1, ks_tolerance, (replicates,)))
        # the limit side drops atoms below epsilon, so censor the same way
        censored = (s if u == () else np.where(s < epsilon, 0.0, s))[:K]
        d = ks_2samp(censored, Z[key])
        subs.append(_ks_report(f"vertex {key} ks vs csbp tree", d, ks_threshold(alpha, len(censored), L), (len(censored), L)))
        subs.append(collapse_report(f"vertex {key} degree collapse", s, degrees / n, regime.c, gate_collapse))
    meta = {
        **regime.as_dict(), "pattern": [format_vertex(u) for u in pattern], "epsilon": epsilon, "top_j": top_j,
        "m_eps": measure.m_eps(epsilon), **_seed_meta(seed, ("tree", n, a)), "truncated": int(G["truncated"].sum()),
    }
    return FitReport.combine("tree", subs, meta, raw)


def _joint_rows(T, M, cap: int) -> np.ndarray:
    rows = np.stack([T[:, 0], M[:, 1], T[:, 1], M[:, 2]], axis=1)
    over = rows[:, 0] + rows[:, 2] > cap
    rows[over] = -1
    return rows


def check_construction_equivalence(
    law: MarkedOffspringLaw,
    ancestors: int,
    replicates: int,
    seed: int,
    threads: int = 1,
    cap: int = 30,
    oracle_cap: int = 12,
    alpha: float = ALPHA,
) -> FitReport:
    """Walk and direct constructions give the same law of ``(T_0, M_1, T_1, M_2)``.

    Outcomes with ``T_0 + T_1 > cap`` are merged into one cell. Each side is
    also tested against the exact enumerated law on ``T_0 + T_1 <= oracle_cap``.
    """
    if classify(law).clone_mean >= 1:
        raise ValueError("equivalence check needs a clone-subcritical law")

    def walk(size, rng):
        return sample_walk_chains(law, ancestors, 2, size, rng)

    def direct(size, rng):
        T, M, _ = sample_census(law, ancestors, 2, rng, size=size)
        return T, M

    Tw, Mw = streams.concat(streams.map_chunks(walk, replicates, seed, "walk", ancestors, threads=threads))
    Td, Md = streams.concat(streams.map_chunks(direct, replicates, seed, "direct", ancestors, threads=threads))
    rw, rd = _joint_rows(Tw, Mw, cap), _joint_rows(Td, Md, cap)
    two = chi2_two_sample(rw, rd)
    subs = [FitReport("walk vs direct chi2 p-value", (replicates, replicates), two.pvalue, alpha, bool(two.pvalue >= alpha), "ge",
                      {"statistic": two.statistic, "dof": two.dof})]
    exact = enumerate_two_levels(law.as_float(), ancestors, oracle_cap)
    cells = sorted(exact)
    probs = np.array([float(exact[c]) for c in cells] + [max(0.0, 1 - sum(float(v) for v in exact.values()))])
    index = {c: i for i, c in enumerate(cells)}
    for name, rows in (("walk", rw), ("direct", rd)):
        obs = np.zeros(len(cells) + 1)
        for r, cnt in zip(*np.unique(rows, axis=0, return_counts=True)):
            obs[index.get(tuple(int(v) for v in r), len(cells))] += cnt
        g = chi2_gof(obs, probs)
        subs.append(FitReport(f"{name} vs exact chi2 p-value", (replicates,), g.pvalue, alpha, bool(g.pvalue >= alpha), "ge",
                              {"statistic": g.statistic, "dof": g.dof, "oracle_cap": oracle_cap}))
    meta = {"ancestors": ancestors, "cap": cap, "master_seed": seed}
    return FitReport.combine(f"equivalence a={ancestors}", subs, meta)


def check_csbp_equivalence(
    measure: csbp.LevyMeasure,
    x: float,
    replicates: int,
    seed: int,
    epsilon: float = 1e-3,
    top_j: int = 64,
    alpha: float = ALPHA,
    threads: int = 1,
) -> FitReport:
    """Definition-based and subordinator-based trees agree on root and level-1 statistics.

    The subordinator root carries only the mean of its sub-``epsilon`` jumps,
    so ``epsilon`` must be small enough for that to be invisible to KS.
    """
    stats_of = {
        "root": lambda t: t.mass(()),
        "largest child": lambda t: t.mass((1,)),
        "level-1 sum": lambda t: float(t.children(()).sum()),
        "level-1 count": lambda t: t.n_children(()),
    }

    def run(sampler) -> Callable:
        def work(size, rng):
            trees = [sampler(rng) for _ in range(size)]
            return {k: np.array([f(t) for t in trees], dtype=float) for k, f in stats_of.items()}
        return work

    defn = run(lambda rng: csbp.sample_tree(measure, csbp.TauRoot(x), 1, epsilon, rng, top_j))
    sub = run(lambda rng: csbp.sample_tree_via_subordinator(measure, x, 1, epsilon, rng, top_j))
    A = streams.concat(streams.map_chunks(defn, replicates, seed, "csbp-def", threads=threads, chunk=1024))
    B = streams.concat(streams.map_chunks(sub, replicates, seed, "csbp-sub", threads=threads, chunk=1024))
    thr = ks_threshold(alpha, replicates, replicates)
    subs = [_ks_report(f"{k} ks", ks_2samp(A[k], B[k]), thr, (replicates, replicates)) for k in stats_of]
    meta = {"c": measure.c, "sigma2": measure.sigma2, "x": x, "epsilon": epsilon, "top_j": top_j, "master_seed": seed}
    return FitReport.combine("csbp-equiv", subs, meta)


def ks_utility_selfcheck(seed: int = 0, size: int = 20_000, alpha: float = ALPHA) -> FitReport:
    """Uniform draws pass against the uniform CDF; shifted draws fail."""
    rng = streams.generator(seed, "ks-selfcheck")
    u = rng.random(size)
    cdf = lambda y: np.clip(y, 0, 1)
    thr = ks_threshold(alpha, size)
    same = _ks_report("uniform vs uniform", ks_1samp(u, cdf), thr, (size,))
    d_shift = ks_1samp(u + 0.05, cdf)
    shifted = FitReport("shifted uniform rejected", (size,), d_shift, thr, bool(d_shift > thr), "ge")
    return FitReport.combine("ks-selfcheck", [same, shifted])

