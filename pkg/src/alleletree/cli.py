"""Command-line interface: ``alleletree {simulate,exact,csbp,verify,replay}``.

Exit codes: 0 success, 1 verification failure, 2 usage or config error,
3 resource cap hit (partial outputs are written and flagged).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy

from . import __version__, csbp, exact, limitcheck, streams
from .config import ConfigError, echo, load_config, load_law_file
from .genealogy import Caps, TruncationError, simulate_allele_tree
from .offspring import OffspringLaw, binary_law, binomial_mark
from .tree import SCHEMA, trees_to_json, write_census_csv, write_csbp_csv, write_tree_csv
from .walker import walk_allele_tree, walk_path, write_walk_trace

OUT_ENV = "ALLELETREE_OUT"
SUITES = ("root", "tail", "census", "tree", "equivalence", "csbp-equiv", "all")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_CAP = 0, 1, 2, 3

VERIFY_DEFAULTS = {
    "base_pmf": binary_law(),
    "x": 1.0,
    "c": 1.0,
    "n": 256,
    "n_list": [64, 256, 1024],
    "replicates": 20_000,
    "alpha": 0.01,
    "epsilon": 1e-3,
    "top_j": 64,
    "master_seed": 20_061_031,
    "pattern": [(), (1,)],
    "ks_tolerance": 0.03,
    "tail_n": 512,
    "tail_replicates": 10_000_000,
    "tail_grid": [(1.0, 1.0), (0.5, 2.0), (2.0, 0.5)],
    "census_levels": 2,
    "collapse_n": 1024,
    "equivalence_replicates": 1_000_000,
    "equivalence_ancestors": [1, 2, 3],
    "p": Fraction(1, 2),
    "csbp_replicates": 10_000,
}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- plumbing


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


class Outputs:
    """Collects output files so the manifest can digest them."""

    def __init__(self, directory: Path):
        self.dir = directory
        self.digests: dict[str, str] = {}

    def write(self, name: str, text: str) -> None:
        data = text.encode()
        (self.dir / name).write_bytes(data)
        self.digests[name] = hashlib.sha256(data).hexdigest()

    def manifest(self, command: str, cfg: dict, started: float, status: str, threads: int, extra: dict | None = None) -> None:
        doc = {
            "schema": SCHEMA,
            "command": command,
            "config": echo(cfg),
            "master_seed": cfg.get("master_seed"),
            "version": __version__,
            "threads": threads,
            "status": status,
            "wall_time_s": round(time.perf_counter() - started, 3),
            "outputs": dict(sorted(self.digests.items())),
            **(extra or {}),
        }
        (self.dir / "manifest.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _render(writer, *args, **kwargs) -> str:
    buf = io.StringIO()
    writer(buf, *args, **kwargs)
    return buf.getvalue()


def _overrides(args, names) -> dict:
    return {k: getattr(args, k, None) for k in names}


def _config(args, defaults: dict, names) -> dict:
    """``defaults < law file < config file < command line``."""
    base = dict(defaults)
    if getattr(args, "law", None):
        law, p = load_law_file(args.law)
        base["base_pmf"] = law
        if p is not None:
            base["p"] = p
    cfg = load_config(args.config, _overrides(args, names), base)
    for alias, key in (("seed", "master_seed"), ("mutation_p", "p")):
        if alias in cfg:
            cfg[key] = cfg.pop(alias)
    return cfg


def _marked(cfg: dict):
    if "p" not in cfg:
        raise UsageError("mutation probability missing: give --p, mutation_p in --law, or p in --config")
    base: OffspringLaw = cfg["base_pmf"]
    p = cfg["p"]
    if isinstance(p, float) and base.rational:
        base = base.as_float()
    return binomial_mark(base, p)


def _map_replicates(fn, n: int, threads: int):
    if threads <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n)))


# ---------------------------------------------------------------- simulate


SIM_KEYS = ("base_pmf", "p", "ancestors", "replicates", "seed", "construction", "format", "max_individuals", "trace")


def cmd_simulate(args) -> int:
    started = time.perf_counter()
    defaults = {"base_pmf": binary_law(), "ancestors": 1, "replicates": 1, "master_seed": 0,
                "construction": "direct", "format": "csv", "max_individuals": Caps().max_individuals, "trace": False}
    cfg = _config(args, defaults, SIM_KEYS)
    law = _marked(cfg)
    a, seed, how = cfg["ancestors"], cfg["master_seed"], cfg["construction"]
    caps = Caps(max_individuals=cfg["max_individuals"])

    def one(i):
        rng = streams.replicate_generator(seed, i, "simulate", how)
        try:
            if how == "walk":
                tree = walk_allele_tree(law, a, rng, caps)
                return tree, tree.census(a), None
            tree, census = simulate_allele_tree(law, a, rng, caps)
            return tree, census, None
        except TruncationError as err:
            part = err.partial.get("tree")
            return part, err.partial.get("census"), str(err)

    results = _map_replicates(one, cfg["replicates"], args.threads)
    out = Outputs(_out_dir(args))
    truncated = [i for i, (_, _, e) in enumerate(results) if e]
    header = {"construction": how, "ancestors": a, "seed": seed}
    if truncated:
        header["truncated_replicates"] = ",".join(map(str, truncated))
    trees = [(i, t) for i, (t, _, _) in enumerate(results) if t is not None]
    if cfg["format"] == "json":
        out.write("trees.json", trees_to_json(trees, header))
    else:
        out.write("trees.csv", _render(write_tree_csv, trees, header))
    cens = [(i, c) for i, (_, c, _) in enumerate(results) if c is not None]
    out.write("census.csv", _render(write_census_csv, cens, header))
    if cfg["trace"] and how == "walk" and not truncated:
        rng = streams.replicate_generator(seed, 0, "simulate", how)
        out.write("walk_trace.csv", _render(write_walk_trace, walk_path(law, a, rng, caps)))
    status = "truncated" if truncated else "ok"
    out.manifest("simulate", cfg, started, status, args.threads, {"truncated_replicates": truncated})
    if truncated:
        for i in truncated:
            print(f"replicate {i}: {results[i][2]}", file=sys.stderr)
        return EXIT_CAP
    if not args.quiet:
        print(f"wrote {len(results)} trees to {out.dir}")
    return EXIT_OK


# ---------------------------------------------------------------- exact


EXACT_KEYS = ("base_pmf", "p", "ancestors", "n_max", "rational", "oracle")


def cmd_exact(args) -> int:
    started = time.perf_counter()
    defaults = {"base_pmf": binary_law(), "ancestors": 1, "n_max": 8, "rational": False, "oracle": "none"}
    cfg = _config(args, defaults, EXACT_KEYS)
    if args.enumerate:
        cfg["oracle"] = "enumerate"
    law = _marked(cfg)
    rational = cfg["rational"]
    if rational and not law.rational:
        raise UsageError("--rational needs exact fractions for the pmf and p (e.g. \"1/2\")")
    a, n_max = cfg["ancestors"], cfg["n_max"]
    out = Outputs(_out_dir(args))
    if n_max < a:
        print(f"warning: n_max={n_max} < ancestors={a}; T_0 >= a so the table is empty", file=sys.stderr)
    table = exact.joint_law_T0_M1(law, a, n_max, rational)
    out.write("joint_law.csv", _render(table.write_csv))
    code, extra = EXIT_OK, {}
    if cfg["oracle"] == "enumerate" and n_max >= a:
        oracle = exact.enumerate_genealogies(law, a, n_max, rational)
        out.write("joint_law_enumerated.csv", _render(oracle.write_csv))
        diff = table.max_abs_diff(oracle)
        same = table.exactly_equal(oracle) if rational else diff <= 1e-12
        extra = {"oracle_max_abs_diff": diff, "oracle_agrees": bool(same)}
        print(f"oracle max |difference| = {diff:.3g} ({'agree' if same else 'DISAGREE'})")
        code = EXIT_OK if same else EXIT_FAIL
    out.manifest("exact", cfg, started, "ok" if code == EXIT_OK else "failed", args.threads, extra)
    return code


# ---------------------------------------------------------------- csbp


CSBP_KEYS = ("c", "sigma2", "depth", "epsilon", "top_j", "method", "root", "replicates", "seed", "steps")


def cmd_csbp(args) -> int:
    started = time.perf_counter()
    defaults = {"c": 1.0, "sigma2": 1.0, "depth": 2, "epsilon": 1e-3, "top_j": 64, "method": "definition",
                "root": "tau:1", "replicates": 1, "master_seed": 0, "steps": 3}
    cfg = _config(args, defaults, CSBP_KEYS)
    measure = csbp.LevyMeasure(cfg["c"], cfg["sigma2"])
    try:
        root = csbp.parse_root(cfg["root"])
    except ValueError as exc:
        raise ConfigError(str(exc), key="root") from None
    if cfg["method"] == "subordinator" and not isinstance(root, csbp.TauRoot):
        raise UsageError("--method subordinator builds its own root: use --root tau:<x>")
    seed, eps, top_j, depth = cfg["master_seed"], cfg["epsilon"], cfg["top_j"], cfg["depth"]

    def one(i):
        rng = streams.replicate_generator(seed, i, "csbp", cfg["method"])
        if cfg["method"] == "subordinator":
            tree = csbp.sample_tree_via_subordinator(measure, root.x, depth, eps, rng, top_j)
        else:
            tree = csbp.sample_tree(measure, root, depth, eps, rng, top_j)
        tree.validate()
        chain = csbp.sample_csbp_chain(measure, tree.mass(()), cfg["steps"], rng)
        return tree, chain

    results = _map_replicates(one, cfg["replicates"], args.threads)
    out = Outputs(_out_dir(args))
    header = {"method": cfg["method"], "root": cfg["root"], "epsilon": eps, "top_j": top_j,
              "m_eps": repr(measure.m_eps(eps)), "seed": seed}
    out.write("csbp_tree.csv", _render(write_csbp_csv, [(i, t) for i, (t, _) in enumerate(results)], header))
    buf = io.StringIO()
    buf.write(f"# schema={SCHEMA} c={cfg['c']} sigma2={cfg['sigma2']} seed={seed}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["replicate", "k", "mass"])
    for i, (_, chain) in enumerate(results):
        for k, z in enumerate(chain):
            w.writerow([i, k, repr(float(z))])
    out.write("csbp_chain.csv", buf.getvalue())
    meta = [t.metadata for t, _ in results]
    out.manifest("csbp", cfg, started, "ok", args.threads, {"tree_metadata": meta})
    return EXIT_OK


# ---------------------------------------------------------------- verify


VERIFY_KEYS = ("base_pmf", "x", "c", "n", "n_list", "replicates", "alpha", "epsilon", "top_j", "seed", "pattern")


def _plan(suite: str, cfg: dict) -> list[tuple[str, int, float]]:
    """Planned (check, replicates, estimated seconds on one core)."""
    R, n = cfg["replicates"], cfg["n"]
    gw = lambda reps, nn, a=None: reps * nn * 4e-7
    plans = {
        "root": [(f"root n={m}", R, gw(R, m)) for m in cfg["n_list"]],
        "tail": [("tail", cfg["tail_replicates"], cfg["tail_replicates"] * 3e-6)],
        "census": [("census", R, gw(R, n) * cfg["census_levels"] + R * 1e-6)],
        "tree": [("tree", R, gw(R, n) * (1 + len(cfg["pattern"])) + cfg["csbp_replicates"] * 2e-4),
                 (f"degree collapse n={cfg['collapse_n']}", R, gw(R, cfg["collapse_n"]))],
        "equivalence": [(f"equivalence a={a}", cfg["equivalence_replicates"], cfg["equivalence_replicates"] * a * 5e-6)
                        for a in cfg["equivalence_ancestors"]],
        "csbp-equiv": [("csbp-equiv", cfg["csbp_replicates"], cfg["csbp_replicates"] * 2.5e-3)],
    }
    if suite == "all":
        return [row for s in SUITES[:-1] for row in plans[s]]
    return plans[suite]


def _run_suite(suite: str, cfg: dict, threads: int) -> list:
    base, seed, R = cfg["base_pmf"], cfg["master_seed"], cfg["replicates"]
    x, c = cfg["x"], cfg["c"]
    regime = limitcheck.Regime(cfg["n"], x, c)
    if suite == "root":
        reports = [limitcheck.check_root_convergence(limitcheck.Regime(m, x, c), base, R, seed, threads,
                                                     cfg["ks_tolerance"], gate_collapse=(m == cfg["collapse_n"]))
                   for m in sorted(cfg["n_list"])]
        if regime.n not in cfg["n_list"]:
            reports.append(limitcheck.check_root_convergence(regime, base, R, seed, threads, cfg["ks_tolerance"], False))
        dists = [r.subreports[0].statistic for r in reports[: len(cfg["n_list"])]]
        reports.append(limitcheck.trend_report(sorted(cfg["n_list"]), dists, R, cfg["alpha"], x=x, c=c))
        return reports
    if suite == "tail":
        return [limitcheck.check_tail_limit(limitcheck.Regime(cfg["tail_n"], x, c), base, cfg["tail_replicates"],
                                            cfg["tail_grid"], seed, threads)]
    if suite == "census":
        return [limitcheck.check_census_chain(regime, base, cfg["census_levels"], R, seed, threads, cfg["alpha"])]
    if suite == "tree":
        L = cfg["csbp_replicates"]
        return [
            limitcheck.check_tree_convergence(regime, base, cfg["pattern"], R, seed, threads, L, cfg["epsilon"],
                                              cfg["top_j"], cfg["alpha"], cfg["ks_tolerance"], gate_collapse=False,
                                              two_sample_size=L),
            limitcheck.check_degree_collapse(limitcheck.Regime(cfg["collapse_n"], x, c), base, R, seed, threads),
        ]
    if suite == "equivalence":
        law = binomial_mark(base, cfg["p"])
        return [limitcheck.check_construction_equivalence(law, a, cfg["equivalence_replicates"], seed, threads,
                                                          alpha=cfg["alpha"])
                for a in cfg["equivalence_ancestors"]]
    if suite == "csbp-equiv":
        measure = csbp.LevyMeasure(c, float(base.variance()))
        return [limitcheck.check_csbp_equivalence(measure, x, cfg["csbp_replicates"], seed, cfg["epsilon"],
                                                  cfg["top_j"], cfg["alpha"], threads)]
    raise UsageError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")


def _raw_csv(reports) -> str:
    buf = io.StringIO()
    buf.write(f"# schema={SCHEMA}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["check", "statistic", "replicate", "value"])
    for r in reports:
        for name, values in r.raw.items():
            for i, v in enumerate(np.asarray(values).tolist()):
                w.writerow([r.name, name, i, repr(float(v))])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def cmd_verify(args) -> int:
    started = time.perf_counter()
    cfg = _config(args, VERIFY_DEFAULTS, VERIFY_KEYS)
    suites = list(SUITES[:-1]) if args.suite == "all" else [args.suite]
    if args.dry_run:
        rows = _plan(args.suite, cfg)
        for name, reps, secs in rows:
            print(f"{name:28s} replicates={reps:>10d}  est. {secs:8.1f} s")
        print(f"{'total':28s} {'':21s} est. {sum(s for _, _, s in rows):8.1f} s (one core)")
        return EXIT_OK
    reports = []
    for s in suites:
        reports.extend(_run_suite(s, cfg, args.threads))
    doc = {
        "schema": SCHEMA,
        "suite": args.suite,
        "reports": [_jsonable(r.to_dict()) for r in reports],
        "environment": {"alleletree": __version__, "python": platform.python_version(),
                        "numpy": np.__version__, "scipy": scipy.__version__},
    }
    out = Outputs(_out_dir(args))
    out.write("report.json", json.dumps(doc, indent=1, sort_keys=True) + "\n")
    out.write("raw_statistics.csv", _raw_csv(reports))
    failed = any(r.passed is False for r in reports)
    out.manifest("verify", {**cfg, "suite": args.suite}, started, "failed" if failed else "ok", args.threads)
    if not args.quiet:
        for r in reports:
            print("\n".join(r.lines()))
    return EXIT_FAIL if failed else EXIT_OK


# ---------------------------------------------------------------- replay


def cmd_replay(args) -> int:
    """Rerun the command recorded in a manifest with its merged config."""
    try:
        doc = json.loads(Path(args.manifest).read_text())
        command, cfg = doc["command"], dict(doc["config"])
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"not a manifest: {exc}", args.manifest) from None
    extra = {}
    if command == "verify":
        extra["suite"] = cfg.pop("suite")
    tmp = Path(_out_dir(args)) / ".replay-config.json"
    tmp.write_text(json.dumps(cfg))
    try:
        argv = [command, "--config", str(tmp), "--threads", str(args.threads)]
        if args.out:
            argv += ["--out", args.out]
        if extra:
            argv.insert(1, extra["suite"])
        return main(argv)
    finally:
        tmp.unlink(missing_ok=True)


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON config file")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or .)")
    common.add_argument("--threads", type=int, default=1, help="worker threads (outputs do not depend on it)")
    common.add_argument("-q", "--quiet", action="store_true")

    law = argparse.ArgumentParser(add_help=False)
    law.add_argument("--law", help="law file with base_pmf pairs and mutation_p")
    law.add_argument("--base", dest="base_pmf", help="preset base law: binary or geometric")
    law.add_argument("--p", help="mutation probability (decimal or num/den)")

    parser = argparse.ArgumentParser(prog="alleletree", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common, law], help="simulate trees of alleles")
    s.add_argument("--ancestors", type=int)
    s.add_argument("--replicates", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--construction", choices=["direct", "walk"])
    s.add_argument("--format", choices=["csv", "json"])
    s.add_argument("--max-individuals", dest="max_individuals", type=int)
    s.add_argument("--trace", action="store_true", default=None, help="also write the walk trace of replicate 0")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("exact", parents=[common, law], help="tabulate the exact law of (T0, M1)")
    e.add_argument("--ancestors", type=int)
    e.add_argument("--n-max", dest="n_max", type=int)
    e.add_argument("--rational", action="store_true", default=None)
    e.add_argument("--oracle", choices=["none", "enumerate"])
    e.add_argument("--enumerate", action="store_true", help="shorthand for --oracle enumerate")
    e.set_defaults(func=cmd_exact)

    c = sub.add_parser("csbp", parents=[common], help="sample tree-indexed CSBPs and chains")
    c.add_argument("--c", type=float)
    c.add_argument("--sigma2", type=float)
    c.add_argument("--depth", type=int)
    c.add_argument("--epsilon", type=float)
    c.add_argument("--top-j", dest="top_j", type=int)
    c.add_argument("--method", choices=["definition", "subordinator"])
    c.add_argument("--root", help="fixed:<mass> or tau:<x>")
    c.add_argument("--replicates", type=int)
    c.add_argument("--steps", type=int, help="length of the CSBP chain started at the root mass")
    c.add_argument("--seed", type=int)
    c.set_defaults(func=cmd_csbp)

    v = sub.add_parser("verify", parents=[common], help="run verification suites")
    v.add_argument("suite", choices=SUITES)
    v.add_argument("--dry-run", action="store_true", help="print the plan without sampling")
    v.add_argument("--base", dest="base_pmf")
    v.add_argument("--replicates", type=int)
    v.add_argument("--n", type=int)
    v.add_argument("--seed", type=int)
    v.set_defaults(func=cmd_verify)

    r = sub.add_parser("replay", help="rerun the command recorded in a manifest")
    r.add_argument("manifest")
    r.add_argument("--out")
    r.add_argument("--threads", type=int, default=1)
    r.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TruncationError as exc:
        print(f"resource cap: {exc}", file=sys.stderr)
        return EXIT_CAP
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
