"""``liftpde`` command line: solve, play, sweep and the verification runs.

Every run writes its effective configuration and a schema tag next to the
numbers.  Exit codes: 0 ok, 2 bad configuration, 3 solver did not converge,
4 censored Monte Carlo trajectories.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import artifacts
from ._accel import BACKEND, worker_count
from .dpp import SchemeParams, ValueField, coefficients, solve_fixed_point
from .game import DEFAULT_STEP_CAP, ProjectedGame, Strategy
from .geometry import DomainShape, build_grid
from .kernel import quadrature_weights
from .verify import (BUILTIN_BOUNDARIES, builtin_boundary, constants_crosscheck, eps_sweep,
                     lifted_dpp_residual, pde_residual, quadratic_test)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NOT_CONVERGED = 3
EXIT_CENSORED = 4

COMMANDS = ("solve", "play", "sweep", "verify-lift", "verify-pde", "crosscheck")
STRATEGIES = ("greedy_max", "greedy_min", "random_move", "pull_toward")

log = logging.getLogger("liftpde")


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass
class RunConfig:
    command: str
    domain: str = "box1d:0,1"
    p: float = 2.0
    eps: float | None = None
    eps_list: list[float] | None = None
    ratio: float | None = 8.0
    h: float | None = None
    boundary: str = "linear_ramp"
    boundary_params: dict = field(default_factory=dict)
    tol: float = 1e-10
    max_iter: int = 500_000
    init: str = "lower_barrier"
    seed: int = 0
    x0: list[float] | None = None
    s0: float = 0.0
    strategy_i: str = "greedy_max"
    strategy_ii: str = "greedy_min"
    target_i: list[float] | None = None
    target_ii: list[float] | None = None
    mode: str = "lattice"
    noise: str = "snap"
    n_trajectories: int = 1000
    step_cap: int = DEFAULT_STEP_CAP
    keep_states: int = 100
    dump_trajectories: int = 100
    n_samples: int = 200
    lift_L: float = 1.0
    test_point: list[float] | None = None
    workers: int | None = None
    dump_weights: bool = False
    out: str = "out"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def parse_domain(text: str) -> DomainShape:
    """``box1d:0,1``, ``box2d:0,1,0,1`` (lo,hi per axis) or ``ball2d:0,0,1`` (center..., radius)."""
    m = re.fullmatch(r"\s*(box|ball)(\d+)d\s*:\s*(.+)", str(text))
    if not m:
        raise ConfigError("domain", f"cannot parse {text!r}; expected e.g. box1d:0,1 or ball2d:0,0,1")
    kind, n = m.group(1), int(m.group(2))
    try:
        vals = [float(v) for v in m.group(3).split(",")]
    except ValueError:
        raise ConfigError("domain", f"non-numeric entry in {text!r}") from None
    if n < 1:
        raise ConfigError("domain", "dimension must be at least 1")
    try:
        if kind == "box":
            if len(vals) != 2 * n:
                raise ConfigError("domain", f"box{n}d needs {2 * n} numbers (lo,hi per axis), got {len(vals)}")
            return DomainShape.box(vals[0::2], vals[1::2])
        if len(vals) != n + 1:
            raise ConfigError("domain", f"ball{n}d needs {n + 1} numbers (center, radius), got {len(vals)}")
        return DomainShape.ball(vals[:n], vals[n])
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("domain", str(exc)) from None


def _coerce(name: str, value: Any) -> Any:
    f = FIELDS[name]
    kind = str(f.type)
    if value is None:
        if "None" in kind:
            return None
        raise ConfigError(name, "may not be null")
    try:
        if kind.startswith("list"):
            if isinstance(value, str):
                value = [v for v in value.split(",") if v.strip()]
            if not isinstance(value, (list, tuple)):
                raise TypeError
            return [float(v) for v in value]
        if kind.startswith("dict"):
            if not isinstance(value, dict):
                raise TypeError
            return dict(value)
        if kind.startswith("bool"):
            if isinstance(value, str):
                if value.lower() in ("1", "true", "yes", "on"):
                    return True
                if value.lower() in ("0", "false", "no", "off"):
                    return False
                raise TypeError
            if not isinstance(value, bool):
                raise TypeError
            return value
        if kind.startswith("int"):
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            return int(value)
        if kind.startswith("float"):
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(name, f"invalid value {value!r} (expected {kind})") from None


def validate(cfg: RunConfig) -> DomainShape:
    """Check every field before any compute; returns the parsed domain."""
    if cfg.command not in COMMANDS:
        raise ConfigError("command", f"unknown command {cfg.command!r}")
    shape = parse_domain(cfg.domain)
    n = shape.n
    try:
        coefficients(cfg.p, n)
    except ValueError as exc:
        raise ConfigError("p", str(exc)) from None
    if not math.isfinite(cfg.p):
        raise ConfigError("p", "must be finite")
    if cfg.command == "sweep":
        if not cfg.eps_list:
            raise ConfigError("eps_list", "sweep needs a nonempty eps_list")
        if any(not e > 0 for e in cfg.eps_list):
            raise ConfigError("eps_list", "entries must be positive")
        if any(b >= a for a, b in zip(cfg.eps_list, cfg.eps_list[1:])):
            raise ConfigError("eps_list", "must be strictly decreasing")
        if cfg.h is not None:
            raise ConfigError("h", "sweep takes ratio, not a fixed h")
    elif cfg.command == "crosscheck":
        if cfg.eps_list is not None and any(not e > 0 for e in cfg.eps_list):
            raise ConfigError("eps_list", "entries must be positive")
    else:
        if cfg.eps is None:
            raise ConfigError("eps", f"{cfg.command} needs eps")
        if not cfg.eps > 0:
            raise ConfigError("eps", "must be positive")
    if cfg.h is not None:
        if not cfg.h > 0:
            raise ConfigError("h", "must be positive")
    elif cfg.ratio is None or not cfg.ratio > 0:
        raise ConfigError("ratio", "must be positive (or give h)")
    if cfg.boundary not in BUILTIN_BOUNDARIES:
        raise ConfigError("boundary", f"unknown boundary {cfg.boundary!r}; choose from {', '.join(BUILTIN_BOUNDARIES)}")
    allowed = {"constant": {"c"}, "affine": {"a", "b"}, "linear_ramp": {"f0", "f1", "axis"}}.get(cfg.boundary, set())
    for k, v in cfg.boundary_params.items():
        if k not in allowed:
            raise ConfigError(f"boundary_params.{k}", f"not a parameter of {cfg.boundary}")
        if k == "a":
            if not isinstance(v, (list, tuple)) or len(v) != n:
                raise ConfigError("boundary_params.a", f"needs a list of {n} numbers")
        elif k == "axis":
            if not isinstance(v, int) or not 0 <= v < n:
                raise ConfigError("boundary_params.axis", f"must be an integer in [0, {n})")
        elif isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"boundary_params.{k}", "must be a number")
    try:
        builtin_boundary(cfg.boundary, shape, **cfg.boundary_params)
    except ValueError as exc:
        raise ConfigError("boundary", str(exc)) from None
    if not cfg.tol > 0:
        raise ConfigError("tol", "must be positive")
    if cfg.max_iter < 1:
        raise ConfigError("max_iter", "must be >= 1")
    if cfg.init not in ("lower_barrier", "upper_barrier"):
        raise ConfigError("init", "must be lower_barrier or upper_barrier")
    if cfg.seed < 0:
        raise ConfigError("seed", "must be nonnegative")
    for name in ("x0", "target_i", "target_ii", "test_point"):
        v = getattr(cfg, name)
        if v is not None and len(v) != n:
            raise ConfigError(name, f"needs {n} coordinates")
    for name in ("strategy_i", "strategy_ii"):
        if getattr(cfg, name) not in STRATEGIES:
            raise ConfigError(name, f"must be one of {', '.join(STRATEGIES)}")
    if cfg.strategy_i == "pull_toward" and cfg.target_i is None:
        raise ConfigError("target_i", "pull_toward needs a target")
    if cfg.strategy_ii == "pull_toward" and cfg.target_ii is None:
        raise ConfigError("target_ii", "pull_toward needs a target")
    if cfg.mode not in ("lattice", "continuum"):
        raise ConfigError("mode", "must be lattice or continuum")
    if cfg.noise not in ("snap", "kernel"):
        raise ConfigError("noise", "must be snap or kernel")
    for name in ("n_trajectories", "step_cap", "n_samples"):
        if getattr(cfg, name) < 1:
            raise ConfigError(name, "must be >= 1")
    for name in ("keep_states", "dump_trajectories"):
        if getattr(cfg, name) < 0:
            raise ConfigError(name, "must be >= 0")
    if not cfg.lift_L > 0:
        raise ConfigError("lift_L", "must be positive")
    if cfg.workers is not None and cfg.workers < 1:
        raise ConfigError("workers", "must be >= 1")
    if cfg.x0 is not None and cfg.command == "play" and not shape.contains(np.array([cfg.x0]))[0]:
        raise ConfigError("x0", "must lie inside the domain")
    return shape


def load_config_file(path) -> dict:
    """JSON or YAML mapping of field names to values."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config", f"file {str(path)!r} not found")
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() in (".yaml", ".yml"):
        import yaml

        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError("config", f"YAML error: {exc}") from None
    else:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"JSON error: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a mapping")
    return data


def parse_config(command: str, file_values: dict | None = None, flag_values: dict | None = None) -> RunConfig:
    """Merge file values with flag overrides (flags win) and validate."""
    merged: dict[str, Any] = {}
    for source, values in (("config", file_values or {}), ("flag", flag_values or {})):
        for k, v in values.items():
            key = k.replace("-", "_")
            if key == "command" or key not in FIELDS:
                raise ConfigError(f"{source}.{k}" if source == "config" else k, "unknown key")
            if v is None and source == "flag":
                continue
            merged[key] = _coerce(key, v)
    cfg = RunConfig(command=command, **merged)
    validate(cfg)
    return cfg


# -- pipelines --------------------------------------------------------------


def _grid_for(cfg: RunConfig, shape: DomainShape, eps: float):
    h = cfg.h if cfg.h is not None else eps / cfg.ratio
    return build_grid(shape, h, eps)


def _solve(cfg: RunConfig, shape: DomainShape, oracle):
    grid = _grid_for(cfg, shape, cfg.eps)
    weights = quadrature_weights(grid)
    params = SchemeParams.for_grid(cfg.p, grid, tol_fixed_point=cfg.tol, max_iterations=cfg.max_iter)
    res = solve_fixed_point(ValueField.from_boundary(grid, oracle.boundary), params, weights, cfg.init)
    return grid, weights, params, res


def _solve_meta(params, res, grid) -> dict:
    return {
        "p": params.p,
        "eps": params.eps,
        "h": grid.h,
        "alpha": params.alpha,
        "beta": params.beta,
        "tol": params.tol_fixed_point,
        "iterations": res.iterations,
        "final_residual": res.final_residual,
        "error_estimate": res.error_estimate,
        "converged": res.converged,
        "grid": grid.describe(),
    }


def _strategy(kind: str, target, field_):
    if kind == "greedy_max":
        return Strategy.greedy_max(field_)
    if kind == "greedy_min":
        return Strategy.greedy_min(field_)
    if kind == "random_move":
        return Strategy.random_move()
    return Strategy.pull_toward(target)


def run(cfg: RunConfig) -> int:
    shape = validate(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    config = cfg.to_dict()
    oracle = builtin_boundary(cfg.boundary, shape, **cfg.boundary_params)
    common = {"backend": BACKEND}

    if cfg.command == "sweep":
        if oracle.solution is None or not oracle.valid_for(cfg.p):
            log.warning("boundary %s has no known solution for p=%g on this domain; "
                        "errors are measured against its closed form", cfg.boundary, cfg.p)
        exact = oracle.solution or oracle.boundary
        rep = eps_sweep(shape, oracle.boundary, cfg.p, cfg.eps_list, cfg.ratio, exact,
                        tol=cfg.tol, max_iterations=cfg.max_iter)
        header = ["eps", "h", "core_sup_error", "iters", "residual", "wall_ms"]
        artifacts.write_csv(out / "sweep.csv", header,
                            ([r.eps, r.h, r.core_sup_error, r.iterations, r.residual, round(r.wall_ms, 3)]
                             for r in rep.rows))
        rows = [{k: v for k, v in dataclasses.asdict(r).items() if k != "wall_ms"} for r in rep.rows]
        artifacts.write_json(out / "sweep.json", artifacts.with_schema(
            config, **common, rows=rows, core_margin=rep.core_margin, decreasing=rep.decreasing,
            nonincreasing_within_2tol=rep.nonincreasing, all_converged=rep.all_converged,
            oracle_exact=oracle.valid_for(cfg.p)))
        for r in rep.rows:
            print(f"eps={r.eps:<8g} h={r.h:<10.4g} core_err={r.core_sup_error:.3e} iters={r.iterations}")
        return EXIT_OK if rep.all_converged else EXIT_NOT_CONVERGED

    if cfg.command == "crosscheck":
        n = shape.n
        x = np.array(cfg.test_point if cfg.test_point is not None else [0.3] * n)
        eps_list = cfg.eps_list or [0.05, 0.035, 0.025]
        ratio = cfg.ratio if cfg.ratio is not None else 64
        rep = constants_crosscheck(cfg.p, n, quadratic_test(n), x, eps_list, ratio=ratio)
        artifacts.write_json(out / "crosscheck.json", artifacts.with_schema(
            config, **common, test_function="quadratic", x=x.tolist(), ratio=ratio, **rep.to_dict()))
        print(f"average: fit={rep.average_coefficient:.6g} exact={rep.average_expected:.6g} "
              f"rel={rep.average_rel_error:.3e}")
        print(f"tilt:    fit={rep.tilt_coefficient:.6g} exact={rep.tilt_expected:.6g} rel={rep.tilt_rel_error:.3e}")
        return EXIT_OK

    grid, weights, params, res = _solve(cfg, shape, oracle)
    meta = _solve_meta(params, res, grid)
    if cfg.dump_weights:
        artifacts.write_weights(out / "weights.csv", weights)
    if not res.converged:
        artifacts.write_json(out / "meta.json", artifacts.with_schema(config, **common, **meta))
        print(f"solver did not converge: residual {res.final_residual:.3e} after {res.iterations} iterations",
              file=sys.stderr)
        return EXIT_NOT_CONVERGED

    if cfg.command == "solve":
        artifacts.write_field(out / "field.csv", res.field)
        artifacts.write_json(out / "meta.json", artifacts.with_schema(config, **common, **meta))
        print(f"converged in {res.iterations} iterations, residual {res.final_residual:.3e}")
        return EXIT_OK

    if cfg.command == "verify-lift":
        rep = lifted_dpp_residual(res.field, params, cfg.n_samples, cfg.lift_L, cfg.seed)
        shifted = lifted_dpp_residual(res.field, params, cfg.n_samples, cfg.lift_L, cfg.seed,
                                      nodes=rep.nodes, s_values=rep.s + 1.0)
        payload = {
            "max_residual": rep.max_residual,
            "n_samples": int(rep.residuals.size),
            "h_s": rep.h_s,
            "s_shift_max_difference": float(np.abs(shifted.residuals - rep.residuals).max()),
            "solve": meta,
        }
        artifacts.write_json(out / "lift_residual.json", artifacts.with_schema(config, **common, **payload))
        print(f"lifted residual {rep.max_residual:.3e} over {rep.residuals.size} samples")
        return EXIT_OK

    if cfg.command == "verify-pde":
        try:
            rep = pde_residual(res.field, params)
        except ValueError as exc:
            raise ConfigError("ratio", str(exc)) from None
        payload = {"max_residual": rep.max_residual, "n_nodes": int(rep.nodes.size), "solve": meta}
        artifacts.write_json(out / "pde_residual.json", artifacts.with_schema(config, **common, **payload))
        print(f"pde residual {rep.max_residual:.3e} over {rep.nodes.size} core nodes")
        return EXIT_OK

    # play
    x0 = np.array(cfg.x0) if cfg.x0 is not None else np.mean(np.stack(shape.bounds), axis=0)
    game = ProjectedGame(res.field, params, weights, mode=cfg.mode, noise=cfg.noise, boundary_fn=oracle.boundary)
    sI = _strategy(cfg.strategy_i, cfg.target_i, res.field)
    sII = _strategy(cfg.strategy_ii, cfg.target_ii, res.field)
    workers = cfg.workers or worker_count()
    est = game.simulate(x0, cfg.s0, sI, sII, cfg.n_trajectories, cfg.seed, cfg.step_cap, workers)
    start = game._start(x0)
    v_at = float(res.field.values[start]) if cfg.mode == "lattice" else None
    payload = {**est.to_dict(), "x0": x0.tolist(), "s0": cfg.s0, "value_at_x0": v_at,
               "strategies": [sI.describe(), sII.describe()], "solve": meta}
    artifacts.write_json(out / "estimate.json", artifacts.with_schema(config, **common, **payload))
    from .kernel import derive_seed

    records = []
    for i in range(min(cfg.dump_trajectories, cfg.n_trajectories)):
        t = game.run_trajectory(x0, cfg.s0, sI, sII, derive_seed(cfg.seed, i), cfg.step_cap)
        records.append({"index": i, **t.to_record(cfg.keep_states)})
    artifacts.write_jsonl(out / "trajectories.jsonl", records)
    print(f"mean {est.mean:.6f} +/- {est.standard_error:.2e}  mean_tau {est.mean_tau:.1f}  "
          f"censored {est.n_censored}")
    return EXIT_CENSORED if est.n_censored else EXIT_OK


# -- argument parsing -------------------------------------------------------


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _param(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    k, v = text.split("=", 1)
    try:
        return k.strip(), json.loads(v)
    except json.JSONDecodeError:
        raise argparse.ArgumentTypeError(f"value of {k!r} is not valid JSON: {v!r}") from None


def _strategy_arg(text: str) -> tuple[str, list[float] | None]:
    kind, _, rest = text.partition(":")
    return kind, (_float_list(rest) if rest else None)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="liftpde", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON or YAML file of settings; flags override it")
        sp.add_argument("--domain", help="box1d:0,1 | box2d:lo1,hi1,lo2,hi2 | ball2d:cx,cy,r")
        sp.add_argument("--p", type=float)
        sp.add_argument("--eps", type=float)
        sp.add_argument("--eps-list", type=_float_list)
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--ratio", type=float, help="eps/h")
        g.add_argument("--h", type=float)
        sp.add_argument("--boundary", help=", ".join(BUILTIN_BOUNDARIES))
        sp.add_argument("--boundary-param", type=_param, action="append", metavar="KEY=JSON")
        sp.add_argument("--tol", type=float)
        sp.add_argument("--max-iter", type=int)
        sp.add_argument("--init", choices=("lower_barrier", "upper_barrier"))
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
        sp.add_argument("--workers", type=int)
        sp.add_argument("--dump-weights", action="store_const", const=True)
        if name == "play":
            sp.add_argument("--x0", type=_float_list)
            sp.add_argument("--s0", type=float)
            sp.add_argument("--strategy-i", type=_strategy_arg, help="greedy_max | random_move | pull_toward:x,..")
            sp.add_argument("--strategy-ii", type=_strategy_arg)
            sp.add_argument("--mode", choices=("lattice", "continuum"))
            sp.add_argument("--noise", choices=("snap", "kernel"))
            sp.add_argument("--n-trajectories", type=int)
            sp.add_argument("--step-cap", type=int)
            sp.add_argument("--keep-states", type=int)
            sp.add_argument("--dump-trajectories", type=int)
        if name == "verify-lift":
            sp.add_argument("--n-samples", type=int)
            sp.add_argument("--lift-L", type=float, dest="lift_L")
        if name == "crosscheck":
            sp.add_argument("--test-point", type=_float_list)
    return parser


def _flags(ns: argparse.Namespace) -> dict:
    skip = {"command", "config", "verbose", "boundary_param", "strategy_i", "strategy_ii"}
    flags = {k: v for k, v in vars(ns).items() if k not in skip}
    if ns.boundary_param:
        flags["boundary_params"] = dict(ns.boundary_param)
    for who in ("i", "ii"):
        choice = getattr(ns, f"strategy_{who}", None)
        if choice is not None:
            flags[f"strategy_{who}"] = choice[0]
            if choice[1] is not None:
                flags[f"target_{who}"] = choice[1]
    return flags


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        file_values = load_config_file(ns.config) if ns.config else {}
        cfg = parse_config(ns.command, file_values, _flags(ns))
        return run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
