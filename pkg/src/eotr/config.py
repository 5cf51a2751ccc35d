"""Experiment configuration files.

A configuration is a TOML document. Top-level keys: ``name``, ``pipeline``,
``seed``, ``output_dir``. Tables: ``[marginals.<label>]``, ``[cost]``,
``[epsilon]``, ``[solver]`` and one optional table per pipeline holding
its options, plus an array ``[[assert]]`` of assertions. See the README for
the full schema. Every error raised while reading a file is a
:class:`ConfigError` carrying the line and column of the offending entry.
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

from .costs import COST_KINDS, CostModel
from .measures import DENSITY_KINDS, DensitySpec, atom_measure, grid_measure

__all__ = [
    "PIPELINES",
    "ConfigError",
    "MarginalSpec",
    "Assertion",
    "ExperimentConfig",
    "load_config",
    "parse_config",
]

PIPELINES = ("sweep", "fit", "debiased", "gap-audit", "dim", "blocks-audit", "stability",
             "derivative", "oracle", "alexandrov")

# pipeline -> option table -> allowed keys
_OPTIONS = {
    "fit": {"window"},
    "debiased": {"window"},
    "gap-audit": {"r", "trials", "base_points", "laplace_min", "laplace_max", "laplace_count",
                  "laplace_floor", "resolvent_samples"},
    "dim": {"min", "max", "count"},
    "blocks-audit": set(),
    "stability": {"M", "K", "resolvent_samples"},
    "derivative": {"instances", "size", "eps", "h", "small_eps"},
    "oracle": {"instances", "min_n", "max_n", "eps"},
    "alexandrov": {"functions", "points", "r_min", "r_max", "count"},
    "sweep": set(),
}
_TOP = {"name", "pipeline", "seed", "output_dir", "marginals", "cost", "epsilon", "solver",
        "assert"}
_MARGINAL_KEYS = {"kind", "lower", "upper", "segment", "n", "point", "intercept", "slope",
                  "center", "width"}
_COST_KEYS = {"kind", "dim", "p", "coeffs"}
_EPS_KEYS = {"min", "max", "count", "spacing"}
_SOLVER_KEYS = {"tol", "max_iter", "eps_scaling"}
_ASSERT_KEYS = {"metric", "op", "bound"}
ASSERT_OPS = ("within", "<=", ">=", "==")


class ConfigError(ValueError):
    """Invalid configuration; ``line`` and ``column`` are 1-based when known."""

    def __init__(self, message, path=None, line=None, column=None):
        self.path, self.line, self.column = path, line, column
        where = str(path) if path else "<config>"
        if line is not None:
            where += f":{line}:{column or 1}"
        super().__init__(f"{where}: {message}")
        self.message = message


class _Locator:
    """Maps (table path, key) to the position of its definition in the source text."""

    _header = re.compile(r"^\s*\[\[?\s*([^\]]+?)\s*\]\]?\s*(#.*)?$")
    _assign = re.compile(r"^(\s*)([A-Za-z0-9_\-\"'.]+)\s*=")

    def __init__(self, text):
        self.entries = []  # (table tuple, key, line, column, array index)
        table, counts = (), {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            m = self._header.match(raw)
            if m:
                table = tuple(p.strip().strip("\"'") for p in m.group(1).split("."))
                idx = None
                if raw.lstrip().startswith("[["):
                    idx = counts.get(table, 0)
                    counts[table] = idx + 1
                self.entries.append((table, None, lineno, raw.index("[") + 1, idx))
                continue
            m = self._assign.match(raw)
            if m:
                key = tuple(p.strip("\"'") for p in m.group(2).split("."))
                last = self.entries[-1][4] if self.entries and self.entries[-1][0] == table else None
                self.entries.append((table + key[:-1], key[-1], lineno, len(m.group(1)) + 1,
                                     last))

    def find(self, table=(), key=None, index=None):
        best = None
        for t, k, line, col, idx in self.entries:
            if t == tuple(table) and k == key and (index is None or idx == index):
                return line, col
            if key is not None and k is None and t == tuple(table) + (key,):
                return line, col
            if best is None and t == tuple(table) and key is not None and k is None:
                best = (line, col)
        return best or (None, None)


@dataclass(frozen=True)
class MarginalSpec:
    """A density (or atom) together with its resolution."""

    label: str
    density: DensitySpec | None
    n: int
    point: tuple | None = None

    def build(self):
        if self.point is not None:
            return atom_measure(self.point)
        return grid_measure(self.density, self.n)

    @property
    def dim(self) -> int:
        if self.point is not None:
            return len(self.point)
        return self.density.lower.size


@dataclass(frozen=True)
class Assertion:
    metric: str
    op: str
    bound: object
    line: int | None = None

    def margin(self, value: float) -> float:
        """Signed distance to failure; negative when the assertion fails."""
        if self.op == "within":
            lo, hi = self.bound
            return min(value - lo, hi - value)
        if self.op == "<=":
            return self.bound - value
        if self.op == ">=":
            return value - self.bound
        return 0.0 - abs(value - self.bound)

    def describe(self) -> str:
        if self.op == "within":
            return f"{self.metric} within [{self.bound[0]:g}, {self.bound[1]:g}]"
        return f"{self.metric} {self.op} {self.bound:g}"


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Parsed and validated experiment description."""

    name: str
    pipeline: str
    marginals: dict
    cost: CostModel | None
    epsilon: np.ndarray | None
    solver: dict
    seed: int
    output_dir: str
    options: dict = field(default_factory=dict)
    assertions: tuple = ()
    raw: dict = field(default_factory=dict)
    path: str | None = None

    @property
    def source(self) -> MarginalSpec:
        return self.marginals["source"]

    @property
    def target(self) -> MarginalSpec | None:
        return self.marginals.get("target")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", path) from exc
    return parse_config(text, path)


_TOML_POS = re.compile(r"\(at line (\d+), column (\d+)\)")


def parse_config(text: str, path=None) -> ExperimentConfig:
    """Parse TOML text into an :class:`ExperimentConfig`."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = _TOML_POS.search(str(exc))
        msg = _TOML_POS.sub("", str(exc)).strip()
        line, col = (int(m.group(1)), int(m.group(2))) if m else (None, None)
        raise ConfigError(f"TOML syntax error: {msg}", path, line, col) from exc
    loc = _Locator(text)

    def fail(message, table=(), key=None, index=None):
        line, col = loc.find(table, key, index)
        raise ConfigError(message, path, line, col)

    def unknown(mapping, allowed, table, index=None):
        for key in mapping:
            if key not in allowed:
                fail(f"unknown key {key!r}" + (f" in [{'.'.join(table)}]" if table else "")
                     + f"; expected one of {sorted(allowed)}", table, key, index)

    def number(mapping, key, table, default=None, kind=float, positive=False):
        if key not in mapping:
            if default is None:
                fail(f"missing required key {key!r}", table, None)
            return default
        value = mapping[key]
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        if kind is int:
            ok = isinstance(value, int) and not isinstance(value, bool)
        if not ok:
            fail(f"{key!r} must be {'an integer' if kind is int else 'a number'}", table, key)
        if positive and not value > 0:
            fail(f"{key!r} must be positive", table, key)
        return kind(value)

    top_known = _TOP | set(_OPTIONS)
    unknown(raw, top_known, ())
    for key in ("name", "pipeline"):
        if not isinstance(raw.get(key), str) or not raw.get(key):
            fail(f"missing or non-string {key!r}", (), key if key in raw else None)
    pipeline = raw["pipeline"]
    if pipeline not in PIPELINES:
        fail(f"unknown pipeline {pipeline!r}; expected one of {list(PIPELINES)}", (), "pipeline")
    seed = number(raw, "seed", (), default=0, kind=int)
    output_dir = raw.get("output_dir", f"eotr-out/{raw['name']}")
    if not isinstance(output_dir, str):
        fail("'output_dir' must be a string", (), "output_dir")

    marginals = {}
    for label, spec in (raw.get("marginals") or {}).items():
        table = ("marginals", label)
        if not isinstance(spec, dict):
            fail(f"marginal {label!r} must be a table", ("marginals",), label)
        unknown(spec, _MARGINAL_KEYS, table)
        kind = spec.get("kind", "uniform")
        if "point" in spec or kind == "atom":
            point = spec.get("point")
            if not isinstance(point, list) or not point:
                fail("atom marginals need a 'point' list", table, "point" if "point" in spec else None)
            marginals[label] = MarginalSpec(label, None, 1, tuple(float(v) for v in point))
            continue
        if kind not in DENSITY_KINDS:
            fail(f"unknown density kind {kind!r}; expected one of {list(DENSITY_KINDS)}",
                 table, "kind")
        n = number(spec, "n", table, kind=int)
        if n < 2:
            fail("'n' must be at least 2", table, "n")
        params = {k: spec[k] for k in ("intercept", "slope", "center", "width") if k in spec}
        if "segment" in spec:
            seg = spec["segment"]
            if not (isinstance(seg, list) and len(seg) == 2):
                fail("'segment' must hold two endpoints", table, "segment")
            density = DensitySpec.segment(seg[0], seg[1], kind, **params)
        else:
            if "lower" not in spec or "upper" not in spec:
                fail("box marginals need 'lower' and 'upper'", table, None)
            density = DensitySpec.box(spec["lower"], spec["upper"], kind, **params)
        try:
            density.check()
        except ValueError as exc:
            fail(str(exc), table, "kind" if "kind" in spec else None)
        marginals[label] = MarginalSpec(label, density, n)

    cost = None
    if "cost" in raw:
        spec = raw["cost"]
        unknown(spec, _COST_KEYS, ("cost",))
        kind = spec.get("kind")
        if kind not in COST_KINDS:
            fail(f"unknown cost kind {kind!r}; expected one of {list(COST_KINDS)}", ("cost",),
                 "kind" if "kind" in spec else None)
        dim = number(spec, "dim", ("cost",), default=1, kind=int, positive=True)
        try:
            if kind == "polynomial-custom":
                cost = CostModel.polynomial(spec.get("coeffs", []), dim)
            else:
                cost = CostModel(kind, dim, p=number(spec, "p", ("cost",), default=2.0))
        except ValueError as exc:
            fail(str(exc), ("cost",), "kind")

    eps = None
    if "epsilon" in raw:
        spec = raw["epsilon"]
        unknown(spec, _EPS_KEYS, ("epsilon",))
        lo = number(spec, "min", ("epsilon",), positive=True)
        hi = number(spec, "max", ("epsilon",), positive=True)
        count = number(spec, "count", ("epsilon",), default=8, kind=int)
        if not lo < hi:
            fail("epsilon 'min' must be smaller than 'max'", ("epsilon",), "min")
        if count < 2:
            fail("epsilon 'count' must be at least 2", ("epsilon",), "count")
        spacing = spec.get("spacing", "log")
        if spacing not in ("log", "linear"):
            fail("epsilon 'spacing' must be 'log' or 'linear'", ("epsilon",), "spacing")
        eps = (np.geomspace(hi, lo, count) if spacing == "log" else np.linspace(hi, lo, count))

    solver = {}
    if "solver" in raw:
        spec = raw["solver"]
        unknown(spec, _SOLVER_KEYS, ("solver",))
        if "tol" in spec:
            solver["tol"] = number(spec, "tol", ("solver",), positive=True)
        if "max_iter" in spec:
            solver["max_iter"] = number(spec, "max_iter", ("solver",), kind=int, positive=True)
        if "eps_scaling" in spec:
            f = number(spec, "eps_scaling", ("solver",))
            if not 0 < f < 1:
                fail("'eps_scaling' must lie in (0, 1)", ("solver",), "eps_scaling")
            solver["eps_scaling"] = f

    options = {}
    for pipe, allowed in _OPTIONS.items():
        if pipe in raw:
            if not isinstance(raw[pipe], dict):
                fail(f"[{pipe}] must be a table", (), pipe)
            unknown(raw[pipe], allowed, (pipe,))
            if pipe != pipeline:
                fail(f"options table [{pipe}] does not belong to pipeline {pipeline!r}", (pipe,))
            options = dict(raw[pipe])

    assertions = []
    for k, spec in enumerate(raw.get("assert", [])):
        table = ("assert",)
        if not isinstance(spec, dict):
            fail("[[assert]] entries must be tables", table)
        unknown(spec, _ASSERT_KEYS, table, index=k)
        if not isinstance(spec.get("metric"), str):
            fail("assertion needs a string 'metric'", table, None, k)
        op = spec.get("op", "within")
        if op not in ASSERT_OPS:
            fail(f"unknown comparator {op!r}; expected one of {list(ASSERT_OPS)}", table, "op", k)
        bound = spec.get("bound")
        if op == "within":
            good = (isinstance(bound, list) and len(bound) == 2
                    and all(isinstance(v, (int, float)) for v in bound) and bound[0] <= bound[1])
            bound = tuple(float(v) for v in bound) if good else None
        else:
            good = isinstance(bound, (int, float)) and not isinstance(bound, bool)
            bound = float(bound) if good else None
        if not good:
            fail("'bound' must be a number, or [lo, hi] with lo <= hi for 'within'",
                 table, "bound" if "bound" in spec else None, k)
        line, _ = loc.find(table, "metric", k)
        assertions.append(Assertion(spec["metric"], op, bound, line))

    needs_pair = pipeline in ("sweep", "fit", "debiased", "gap-audit", "blocks-audit",
                              "stability")
    if needs_pair:
        if "source" not in marginals:
            fail(f"pipeline {pipeline!r} needs a [marginals.source] table", ("marginals",))
        if cost is None:
            fail(f"pipeline {pipeline!r} needs a [cost] table", ())
        for spec in marginals.values():
            if spec.dim != cost.dim:
                fail(f"marginal {spec.label!r} lives in R^{spec.dim} but the cost is on "
                     f"R^{cost.dim}", ("marginals", spec.label))
    if pipeline in ("sweep", "fit", "debiased", "blocks-audit", "stability") and eps is None:
        fail(f"pipeline {pipeline!r} needs an [epsilon] table", ())
    if pipeline == "dim" and not marginals:
        fail("pipeline 'dim' needs at least one [marginals.<label>] table", ())

    return ExperimentConfig(raw["name"], pipeline, marginals, cost, eps, solver, seed,
                            output_dir, options, tuple(assertions), raw,
                            str(path) if path else None)
