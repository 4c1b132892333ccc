"""Law files and experiment configs (YAML or JSON) with located error messages."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import yaml

from .offspring import PRESETS, OffspringLaw, law_from_pairs, parse_probability
from .tree import parse_vertex


class ConfigError(ValueError):
    """Invalid configuration; ``where`` names the file, line and key when known."""

    def __init__(self, message: str, source: str | None = None, line: int | None = None, key: str | None = None):
        where = ":".join(str(p) for p in (source, line) if p is not None)
        prefix = f"{where}: " if where else ""
        keypart = f"key '{key}': " if key else ""
        super().__init__(f"{prefix}{keypart}{message}")
        self.source, self.line, self.key = source, line, key


@dataclass
class Document:
    data: dict
    text: str
    source: str

    def line_of(self, key: str) -> int | None:
        pat = re.compile(rf'^\s*["\']?{re.escape(key)}["\']?\s*:', re.M)
        m = pat.search(self.text)
        return self.text.count("\n", 0, m.start()) + 1 if m else None

    def error(self, key: str, message: str) -> ConfigError:
        return ConfigError(message, self.source, self.line_of(key), key)


def load_document(path: str | Path) -> Document:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read: {exc.strerror}", str(path)) from None
    if not text.strip():
        raise ConfigError("file is empty", str(path))
    try:
        if path.suffix == ".json":
            data = json.loads(text)
        else:
            data = yaml.safe_load(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, str(path), exc.lineno) from None
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(str(getattr(exc, "problem", exc)), str(path), mark.line + 1 if mark else None) from None
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping of keys to values", str(path))
    return Document(data, text, str(path))


def parse_base(value: Any) -> OffspringLaw:
    """A preset name or a list of ``[k, probability]`` pairs."""
    if isinstance(value, str):
        if value in PRESETS:
            return PRESETS[value]()
        raise ValueError(f"unknown preset {value!r}; choose from {sorted(PRESETS)} or give [k, prob] pairs")
    if isinstance(value, dict):
        value = list(value.items())
    if not isinstance(value, (list, tuple)) or not value:
        raise ValueError("base_pmf must be a non-empty list of [k, probability] pairs")
    pairs = []
    for item in value:
        if not isinstance(item, (list, tuple)) or len(item) != 2:
            raise ValueError(f"expected a [k, probability] pair, got {item!r}")
        k, v = item
        if isinstance(k, bool) or not isinstance(k, int) and not (isinstance(k, str) and k.isdigit()):
            raise ValueError(f"offspring number must be a nonnegative integer, got {k!r}")
        pairs.append((int(k), parse_probability(v)))
    return law_from_pairs(pairs)


def load_law_file(path: str | Path) -> tuple[OffspringLaw, Any]:
    """Read ``base_pmf`` and optional ``mutation_p`` from a law file."""
    doc = load_document(path)
    for key in doc.data:
        if key not in ("base_pmf", "mutation_p"):
            raise doc.error(key, "unknown key in law file (expected base_pmf, mutation_p)")
    if "base_pmf" not in doc.data:
        raise ConfigError("missing required key", doc.source, None, "base_pmf")
    try:
        base = parse_base(doc.data["base_pmf"])
    except (ValueError, TypeError) as exc:
        raise doc.error("base_pmf", str(exc)) from None
    p = doc.data.get("mutation_p")
    if p is not None:
        try:
            p = parse_probability(p)
        except (ValueError, TypeError) as exc:
            raise doc.error("mutation_p", str(exc)) from None
    return base, p


def _positive(kind):
    def conv(v):
        if isinstance(v, bool):
            raise ValueError("expected a number")
        out = kind(v)
        if kind is int and out != float(v):
            raise ValueError(f"expected an integer, got {v!r}")
        if not out > 0:
            raise ValueError(f"must be positive, got {v!r}")
        return out
    return conv


def _int_list(v):
    if not isinstance(v, (list, tuple)) or not v:
        raise ValueError("expected a non-empty list")
    return [_positive(int)(x) for x in v]


def _pattern(v):
    if not isinstance(v, (list, tuple)):
        raise ValueError("expected a list of vertex paths like \"/1/2\"")
    return [parse_vertex(x) if isinstance(x, str) else tuple(int(j) for j in x) for x in v]


def _probability(v):
    p = parse_probability(v)
    if not 0 <= p <= 1:
        raise ValueError("must lie in [0, 1]")
    return p


def _seed(v):
    if isinstance(v, bool) or int(v) != v or int(v) < 0:
        raise ValueError("expected a nonnegative integer")
    return int(v)


def _nonneg_int(v):
    if isinstance(v, bool) or int(v) != v or int(v) < 0:
        raise ValueError("expected a nonnegative integer")
    return int(v)


def _top_j(v):
    return None if v is None else _nonneg_int(v)


def _alpha(v):
    a = float(v)
    if not 0 < a < 1:
        raise ValueError("must lie in (0, 1)")
    return a


def _grid(v):
    if not isinstance(v, (list, tuple)) or not v:
        raise ValueError("expected a list of [t, m] points")
    out = []
    for item in v:
        t, m = item
        out.append((_positive(float)(t), _positive(float)(m)))
    return out


def _choice(*options):
    def conv(v):
        if v not in options:
            raise ValueError(f"expected one of {list(options)}, got {v!r}")
        return v
    return conv


def _bool(v):
    if not isinstance(v, bool):
        raise ValueError("expected true or false")
    return v


SCHEMA: dict[str, Callable] = {
    "base_pmf": parse_base,
    "mutation_p": _probability,
    "p": _probability,
    "ancestors": _positive(int),
    "replicates": _positive(int),
    "x": _positive(float),
    "c": _positive(float),
    "sigma2": _positive(float),
    "n": _positive(int),
    "n_list": _int_list,
    "alpha": _alpha,
    "epsilon": _positive(float),
    "top_j": _top_j,
    "master_seed": _seed,
    "seed": _seed,
    "pattern": _pattern,
    "construction": _choice("direct", "walk"),
    "format": _choice("csv", "json"),
    "depth": _nonneg_int,
    "levels": _positive(int),
    "n_max": _nonneg_int,
    "rational": _bool,
    "oracle": _choice("none", "enumerate"),
    "method": _choice("definition", "subordinator"),
    "root": str,
    "steps": _nonneg_int,
    "ks_tolerance": _positive(float),
    "tail_grid": _grid,
    "tail_replicates": _positive(int),
    "tail_n": _positive(int),
    "equivalence_replicates": _positive(int),
    "equivalence_ancestors": _int_list,
    "csbp_replicates": _positive(int),
    "census_levels": _positive(int),
    "collapse_n": _positive(int),
    "max_individuals": _positive(int),
    "trace": _bool,
}


def validate(values: dict, doc: Document | None = None, source: str = "command line") -> dict:
    """Convert every known key; unknown keys are errors."""
    out = {}
    for key, raw in values.items():
        if key not in SCHEMA:
            msg = "unknown key"
            if doc is not None:
                raise doc.error(key, msg)
            raise ConfigError(msg, source, None, key)
        try:
            out[key] = SCHEMA[key](raw)
        except (ValueError, TypeError, ZeroDivisionError) as exc:
            if doc is not None:
                raise doc.error(key, str(exc)) from None
            raise ConfigError(str(exc), source, None, key) from None
    return out


def load_config(path: str | Path | None, overrides: dict | None = None, defaults: dict | None = None) -> dict:
    """``defaults < file < overrides``; ``None`` overrides are ignored."""
    merged = dict(defaults or {})
    if path is not None:
        doc = load_document(path)
        merged.update(validate(doc.data, doc))
    given = {k: v for k, v in (overrides or {}).items() if v is not None}
    merged.update(validate(given))
    return merged


def echo(cfg: dict) -> dict:
    """JSON-safe copy of a merged config for manifests."""
    from .tree import format_vertex

    def conv(k, v):
        if isinstance(v, OffspringLaw):
            return [[i, str(p)] for i, p in enumerate(v.pmf) if p]
        if k == "pattern":
            return [format_vertex(u) for u in v]
        if isinstance(v, tuple):
            return list(v)
        if hasattr(v, "numerator") and not isinstance(v, (int, bool)):
            return str(v)
        return v

    return {k: conv(k, v) for k, v in sorted(cfg.items())}
