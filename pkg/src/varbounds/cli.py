"""Config-driven command line: declare a model, mean function, reference
parameters, and bound methods in a YAML file; run computations; emit pretty
tables and CSV.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure (the
message names the failing method and parameter point).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import yaml

from .bounds import BarankinSearch, MethodSpec, METHODS, TestPointSet, evaluate_bound
from .errors import ConfigurationError, ConstraintRankError, DataError, \
    KernelEvaluationError, NaturalSpaceError, StencilError, VarBoundsError
from .harness import format_float, phi_estimator, constant_estimator, \
    reduction_experiment, semicontinuity_scan, validate_bounds, write_csv
from .models import BUILTIN_FAMILIES, MeanFunction, constant_mean, expfam_mean, \
    identity_mean, make_model, polynomial_mean

_NUMERICAL_ERRORS = (NaturalSpaceError, KernelEvaluationError, StencilError,
                     ConstraintRankError, DataError, np.linalg.LinAlgError,
                     FloatingPointError)


def _require_keys(section: dict, allowed: set[str], path: str) -> None:
    if not isinstance(section, dict):
        raise ConfigurationError(f"{path}: expected a mapping, got {type(section).__name__}")
    unknown = set(section) - allowed
    if unknown:
        raise ConfigurationError(f"{path}: unknown keys {sorted(unknown)}")


@dataclass(frozen=True)
class ModelConfig:
    family: str
    params: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        _require_keys(d, {"family"} | {k for _, p in BUILTIN_FAMILIES.values() for k in p},
                      "model")
        if "family" not in d:
            raise ConfigurationError("model.family: required")
        family = d["family"]
        if family not in BUILTIN_FAMILIES:
            raise ConfigurationError(
                f"model.family: unknown family {family!r}; known: {sorted(BUILTIN_FAMILIES)}")
        params = {k: v for k, v in d.items() if k != "family"}
        allowed = set(BUILTIN_FAMILIES[family][1])
        bad = set(params) - allowed
        if bad:
            raise ConfigurationError(f"model: keys {sorted(bad)} not valid for {family!r}")
        return cls(family=family, params=params)

    def to_dict(self) -> dict:
        return {"family": self.family, **self.params}


_MEAN_BUILTINS = ("identity", "constant", "expfam-mean")


@dataclass(frozen=True)
class MeanConfig:
    builtin: str | None = "identity"
    component: int = 0
    constant: float = 0.0
    polynomial: tuple | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "MeanConfig":
        _require_keys(d, {"builtin", "component", "constant", "polynomial"}, "mean_function")
        poly = d.get("polynomial")
        builtin = d.get("builtin")
        if poly is not None and builtin is not None:
            raise ConfigurationError(
                "mean_function: give either builtin or polynomial, not both")
        if poly is None and builtin is None:
            builtin = "identity"
        if builtin is not None and builtin not in _MEAN_BUILTINS:
            raise ConfigurationError(
                f"mean_function.builtin: unknown {builtin!r}; known: {_MEAN_BUILTINS}")
        if poly is not None and (not isinstance(poly, list) or not poly):
            raise ConfigurationError("mean_function.polynomial: expected a nonempty list")
        return cls(builtin=builtin, component=int(d.get("component", 0)),
                   constant=float(d.get("constant", 0.0)),
                   polynomial=tuple(float(c) for c in poly) if poly is not None else None)

    def to_dict(self) -> dict:
        if self.polynomial is not None:
            d: dict = {"polynomial": list(self.polynomial)}
        else:
            d = {"builtin": self.builtin}
        if self.component:
            d["component"] = self.component
        if self.builtin == "constant":
            d["constant"] = self.constant
        return d


@dataclass(frozen=True)
class GridSpec:
    start: float
    stop: float
    count: int

    def expand(self) -> list[tuple]:
        return [(float(v),) for v in np.linspace(self.start, self.stop, self.count)]


@dataclass(frozen=True)
class MCConfig:
    samples: int = 100_000
    seed: int = 1234

    @classmethod
    def from_dict(cls, d: dict) -> "MCConfig":
        _require_keys(d, {"samples", "seed"}, "mc")
        samples = int(d.get("samples", 100_000))
        if samples < 2:
            raise ConfigurationError("mc.samples: must be >= 2")
        return cls(samples=samples, seed=int(d.get("seed", 1234)))

    def to_dict(self) -> dict:
        return {"samples": self.samples, "seed": self.seed}


@dataclass(frozen=True)
class OutputConfig:
    path: str | None = None
    format: str = "pretty"

    @classmethod
    def from_dict(cls, d: dict) -> "OutputConfig":
        _require_keys(d, {"path", "format"}, "output")
        fmt = d.get("format", "pretty")
        if fmt not in ("pretty", "csv"):
            raise ConfigurationError(f"output.format: must be csv or pretty, got {fmt!r}")
        return cls(path=d.get("path"), format=fmt)

    def to_dict(self) -> dict:
        d: dict = {"format": self.format}
        if self.path is not None:
            d["path"] = self.path
        return d


_METHOD_OPTIONS: dict[str, set[str]] = {
    "crb": set(),
    "expfam_crb": set(),
    "constrained_crb": {"constraint"},
    "bhattacharyya": {"indices"},
    "expfam_moment": {"indices"},
    "hcrb": {"points"},
    "barankin_approx": {"max_points", "restarts", "initial_step", "halvings",
                        "radius", "lower", "upper", "initial_points"},
}


def _method_from_dict(d: dict, pos: int) -> MethodSpec:
    path = f"methods[{pos}]"
    _require_keys(d, {"name"} | set().union(*_METHOD_OPTIONS.values()), path)
    if "name" not in d:
        raise ConfigurationError(f"{path}.name: required")
    name = d["name"]
    if name not in METHODS:
        raise ConfigurationError(f"{path}.name: unknown method {name!r}; known: {METHODS}")
    opts = {k: v for k, v in d.items() if k != "name"}
    bad = set(opts) - _METHOD_OPTIONS[name]
    if bad:
        raise ConfigurationError(f"{path}: options {sorted(bad)} not valid for {name!r}")
    if "indices" in opts:
        try:
            opts["indices"] = [tuple(int(e) for e in p) for p in opts["indices"]]
        except TypeError as exc:
            raise ConfigurationError(f"{path}.indices: expected a list of index lists") from exc
    if "points" in opts:
        try:
            opts["points"] = [[float(v) for v in p] for p in opts["points"]]
        except TypeError as exc:
            raise ConfigurationError(f"{path}.points: expected a list of parameter vectors") from exc
    if "initial_points" in opts:
        opts["initial_points"] = [[float(v) for v in p] for p in opts["initial_points"]]
    return MethodSpec(name=name, options=opts)


def _method_to_dict(spec: MethodSpec) -> dict:
    d: dict = {"name": spec.name}
    for k, v in spec.options.items():
        if k == "indices":
            d[k] = [list(p) for p in v]
        else:
            d[k] = v
    return d


@dataclass(frozen=True)
class RunConfig:
    """Parsed configuration document.  Unknown keys are rejected everywhere
    and to_dict/from_dict round-trips to the identity."""

    model: ModelConfig
    mean_function: MeanConfig = MeanConfig()
    x0: tuple | GridSpec = (0.0,)
    methods: tuple = ()
    mc: MCConfig = MCConfig()
    output: OutputConfig = OutputConfig()
    radii: tuple | None = None
    estimator: dict | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        _require_keys(d, {"model", "mean_function", "x0", "methods", "mc", "output",
                          "radii", "estimator"}, "config")
        if "model" not in d:
            raise ConfigurationError("model: required section")
        model = ModelConfig.from_dict(d["model"])
        mean = MeanConfig.from_dict(d.get("mean_function", {"builtin": "identity"}))

        raw_x0 = d.get("x0", [0.0])
        if isinstance(raw_x0, dict):
            _require_keys(raw_x0, {"grid"}, "x0")
            grid = raw_x0.get("grid")
            _require_keys(grid, {"start", "stop", "count"}, "x0.grid")
            for key in ("start", "stop", "count"):
                if key not in grid:
                    raise ConfigurationError(f"x0.grid.{key}: required")
            count = int(grid["count"])
            if count < 2:
                raise ConfigurationError("x0.grid.count: must be >= 2")
            x0: tuple | GridSpec = GridSpec(float(grid["start"]), float(grid["stop"]), count)
        elif isinstance(raw_x0, (list, tuple)):
            if not raw_x0:
                raise ConfigurationError("x0: must not be empty")
            x0 = tuple(float(v) for v in raw_x0)
        else:
            raise ConfigurationError("x0: expected a vector or a grid spec")

        raw_methods = d.get("methods", [])
        if not isinstance(raw_methods, list):
            raise ConfigurationError("methods: expected a list")
        methods = tuple(_method_from_dict(m, i) for i, m in enumerate(raw_methods))

        mc = MCConfig.from_dict(d.get("mc", {}))
        output = OutputConfig.from_dict(d.get("output", {}))

        radii = d.get("radii")
        if radii is not None:
            if not isinstance(radii, list) or not radii:
                raise ConfigurationError("radii: expected a nonempty list of positive reals")
            radii = tuple(float(r) for r in radii)
            if any(r <= 0 for r in radii):
                raise ConfigurationError("radii: all radii must be positive")

        estimator = d.get("estimator")
        if estimator is not None:
            _require_keys(estimator, {"builtin", "component", "value"}, "estimator")
            if estimator.get("builtin") not in ("suffstat", "constant"):
                raise ConfigurationError(
                    "estimator.builtin: must be 'suffstat' or 'constant'")
        return cls(model=model, mean_function=mean, x0=x0, methods=methods, mc=mc,
                   output=output, radii=radii, estimator=estimator)

    def to_dict(self) -> dict:
        d: dict = {"model": self.model.to_dict(),
                   "mean_function": self.mean_function.to_dict()}
        if isinstance(self.x0, GridSpec):
            d["x0"] = {"grid": {"start": self.x0.start, "stop": self.x0.stop,
                                "count": self.x0.count}}
        else:
            d["x0"] = list(self.x0)
        d["methods"] = [_method_to_dict(m) for m in self.methods]
        d["mc"] = self.mc.to_dict()
        d["output"] = self.output.to_dict()
        if self.radii is not None:
            d["radii"] = list(self.radii)
        if self.estimator is not None:
            d["estimator"] = dict(self.estimator)
        return d


def load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path!r}: {exc}") from exc
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}" if mark is not None else ""
        raise ConfigurationError(f"invalid YAML in {path!r}{where}: {exc}") from exc
    if raw is None:
        raise ConfigurationError(f"config {path!r} is empty")
    return RunConfig.from_dict(raw)


def build_mean(cfg: RunConfig, model) -> MeanFunction:
    mc = cfg.mean_function
    if mc.polynomial is not None:
        if model.param_dim != 1:
            raise ConfigurationError(
                "mean_function.polynomial: only available for scalar parameters")
        return polynomial_mean(mc.polynomial)
    if mc.builtin == "identity":
        return identity_mean(mc.component)
    if mc.builtin == "constant":
        return constant_mean(mc.constant)
    return expfam_mean(model, mc.component)


def _expand_x0(cfg: RunConfig, model) -> list[tuple]:
    if isinstance(cfg.x0, GridSpec):
        if model.param_dim != 1:
            raise ConfigurationError("x0.grid: only available for scalar parameters")
        return cfg.x0.expand()
    if len(cfg.x0) != model.param_dim:
        raise ConfigurationError(
            f"x0: length {len(cfg.x0)} does not match the family dimension {model.param_dim}")
    return [cfg.x0]


def _print_table(header: Sequence[str], rows: Sequence[Sequence]) -> None:
    cells = [[f"{v:.6g}" if isinstance(v, float) else str(v) for v in row] for row in rows]
    widths = [max(len(h), *(len(r[i]) for r in cells)) if cells else len(h)
              for i, h in enumerate(header)]
    print("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    print("  ".join("-" * w for w in widths))
    for row in cells:
        print("  ".join(c.ljust(w) for c, w in zip(row, widths)))


def _emit(cfg: RunConfig, header, rows, summary: str | None = None) -> None:
    if cfg.output.path:
        write_csv(cfg.output.path, header, rows)
    if cfg.output.format == "pretty":
        _print_table(header, rows)
    elif not cfg.output.path:
        # csv format with no path: write csv text to stdout
        print(",".join(header))
        for row in rows:
            print(",".join(format_float(v) if isinstance(v, (int, float))
                           and not isinstance(v, bool) else str(v) for v in row))
    if summary:
        print(summary)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_run(cfg: RunConfig) -> int:
    model = make_model(cfg.model.family, **cfg.model.params)
    gamma = build_mean(cfg, model)
    if not cfg.methods:
        raise ConfigurationError("methods: at least one method is required for run")
    points = _expand_x0(cfg, model)
    dim = model.param_dim
    header = [f"x{k}" for k in range(dim)] + ["method", "value", "gram_rank",
                                              "condition_number", "mc_standard_error"]
    rows = []
    for x0 in points:
        for spec in cfg.methods:
            try:
                res = evaluate_bound(model, gamma, np.asarray(x0), spec,
                                     mc_samples=cfg.mc.samples, seed=cfg.mc.seed)
            except _NUMERICAL_ERRORS as exc:
                print(f"numerical failure in method {spec.name!r} at x0={list(x0)}: {exc}",
                      file=sys.stderr)
                return 3
            rows.append(list(x0) + [spec.name, res.value,
                                    res.diagnostics.get("gram_rank", ""),
                                    res.diagnostics.get("condition_number", ""),
                                    res.diagnostics.get("mc_standard_error", "")])
    _emit(cfg, header, rows)
    return 0


def _cmd_scan(cfg: RunConfig) -> int:
    model = make_model(cfg.model.family, **cfg.model.params)
    gamma = build_mean(cfg, model)
    if not isinstance(cfg.x0, GridSpec):
        raise ConfigurationError("x0: scan requires a grid spec")
    spec = cfg.methods[0] if cfg.methods else MethodSpec("barankin_approx", {})
    grid = [np.asarray(x) for x in cfg.x0.expand()]
    try:
        report = semicontinuity_scan(model, gamma, grid, spec.name, spec.options,
                                     mc_samples=cfg.mc.samples, seed=cfg.mc.seed)
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure in method {spec.name!r} during scan: {exc}",
              file=sys.stderr)
        return 3
    if cfg.output.path:
        report.write_csv(cfg.output.path)
    header = ["x0", "value"]
    rows = [[x[0], v] for x, v in zip(report.grid, report.values)]
    if cfg.output.format == "pretty":
        _print_table(header, rows)
    print(f"largest downward jump: {report.largest_downward_jump:.6g}")
    return 0


def _cmd_reduce(cfg: RunConfig) -> int:
    model = make_model(cfg.model.family, **cfg.model.params)
    gamma = build_mean(cfg, model)
    if cfg.radii is None:
        raise ConfigurationError("radii: required for reduce")
    if isinstance(cfg.x0, GridSpec):
        raise ConfigurationError("x0: reduce requires a single parameter vector")
    search_opts = {}
    for spec in cfg.methods:
        if spec.name == "barankin_approx":
            search_opts = dict(spec.options)
            break
    if "initial_points" in search_opts and search_opts["initial_points"] is not None:
        search_opts["initial_points"] = TestPointSet(search_opts["initial_points"])
    try:
        report = reduction_experiment(model, gamma, np.asarray(cfg.x0),
                                      cfg.radii, BarankinSearch(**search_opts),
                                      mc_samples=cfg.mc.samples, seed=cfg.mc.seed)
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure in method 'barankin_approx' at x0={list(cfg.x0)}: {exc}",
              file=sys.stderr)
        return 3
    if cfg.output.path:
        report.write_csv(cfg.output.path)
    if cfg.output.format == "pretty":
        _print_table(["radius", "value"], [[r, v] for r, v in
                                           zip(report.radii, report.values)])
    print(f"spread across radii: {report.spread:.6g}")
    return 0


def _cmd_validate(cfg: RunConfig) -> int:
    model = make_model(cfg.model.family, **cfg.model.params)
    if cfg.estimator is None:
        raise ConfigurationError("estimator: required for validate")
    if cfg.estimator["builtin"] == "suffstat":
        est = phi_estimator(model, int(cfg.estimator.get("component", 0)))
    else:
        est = constant_estimator(float(cfg.estimator.get("value", 0.0)))
    if not cfg.methods:
        raise ConfigurationError("methods: at least one method is required for validate")
    points = _expand_x0(cfg, model)
    header = [f"x{k}" for k in range(model.param_dim)] + \
        ["method", "bound", "variance", "se_variance", "margin", "satisfied"]
    rows = []
    ok = True
    for x0 in points:
        try:
            report = validate_bounds(model, est, np.asarray(x0), cfg.methods,
                                     n=cfg.mc.samples, seed=cfg.mc.seed)
        except _NUMERICAL_ERRORS as exc:
            print(f"numerical failure during validate at x0={list(x0)}: {exc}",
                  file=sys.stderr)
            return 3
        ok = ok and report.all_satisfied
        for r in report.rows():
            rows.append(list(x0) + [r["method"], r["bound"], r["variance"],
                                    r["se_variance"], r["margin"], r["satisfied"]])
    _emit(cfg, header, rows)
    print("all bounds dominated" if ok else "DOMINANCE VIOLATION", flush=True)
    return 0 if ok else 3


def list_models() -> str:
    lines = ["built-in families:"]
    for name, (factory, params) in BUILTIN_FAMILIES.items():
        model = factory()
        hyper = ", ".join(f"{k} (default {v})" for k, v in params.items()) or "none"
        closed = "yes" if model.closed_moments is not None else "no"
        lines.append(f"  {name:<18} hyperparameters: {hyper:<24} "
                     f"natural space: {model.natural_space_desc:<12} "
                     f"closed-form moments: {closed}")
    return "\n".join(lines)


def _cmd_models() -> int:
    print(list_models())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="varbounds",
        description="Lower bounds on estimator variance via likelihood-ratio "
                    "kernel projections")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("run", "evaluate configured bounds at the reference parameter(s)"),
            ("scan", "evaluate a bound over a reference-parameter grid"),
            ("reduce", "search with test points confined to balls of several radii"),
            ("validate", "check bounds against Monte Carlo estimator variance")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to a YAML config file")
        p.add_argument("--output", help="override output.path")
        p.add_argument("--seed", type=int, help="override mc.seed")
        p.add_argument("--format", choices=("csv", "pretty"), help="override output.format")
    sub.add_parser("models", help="list built-in model families")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "models":
        return _cmd_models()
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, mc=replace(cfg.mc, seed=args.seed))
        if args.output is not None:
            cfg = replace(cfg, output=replace(cfg.output, path=args.output))
        if args.format is not None:
            cfg = replace(cfg, output=replace(cfg.output, format=args.format))
        handler = {"run": _cmd_run, "scan": _cmd_scan, "reduce": _cmd_reduce,
                   "validate": _cmd_validate}[args.command]
        return handler(cfg)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except VarBoundsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
