"""Command line entry point: ``sbm <experiment> --config FILE [--seed N] [--paths N] [--out DIR]``.

Exit status is 0 when every verdict passes, 1 when some verdict fails,
2 for an invalid configuration and 3 when a simulated path fails.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from importlib import resources

from . import __version__
from .coeff import BranchingSpec
from .distfn import DistFnConfig
from .errors import ConfigError, PathFailure
from .grid import GridSpec, initial_field
from .spde import snapshot_steps, solver_diagnostics

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_PATH = 0, 1, 2, 3

EXPERIMENT_NAMES = (
    "simulate", "staged-convergence", "mass-law", "martingale", "hoelder", "moments",
    "distfn-transform", "mass-sde", "uniqueness", "particles-vs-spde", "gadgets", "acceptance",
)

# experiments whose verdicts rest on a two-sample KS test
_KS_EXPERIMENTS = ("staged-convergence", "mass-law", "distfn-transform", "mass-sde", "particles-vs-spde")
MIN_KS_PATHS = 100


@dataclass
class ExperimentConfig:
    experiment: str
    master_seed: int
    paths: int
    grid: dict
    dt: float
    T: float
    spec: dict
    initial: dict
    out: str = "sbm-out"
    snapshots: list | None = None
    options: dict = field(default_factory=dict)
    paths_override: int | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object", "config")
        known = {f for f in cls.__dataclass_fields__ if f != "paths_override"}
        extra = sorted(set(d) - known)
        if extra:
            raise ConfigError(f"unknown config field(s) {extra}", extra[0])
        missing = [k for k in ("experiment", "master_seed", "paths", "grid", "dt", "T", "spec", "initial") if k not in d]
        if missing:
            raise ConfigError(f"missing config field {missing[0]!r}", missing[0])
        return cls(**{k: d[k] for k in known if k in d})

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("paths_override")
        return d


def default_config() -> dict:
    with resources.files("sbm").joinpath("data/default_config.json").open() as fh:
        return json.load(fh)


def load_config(path: str | None) -> dict:
    if path is None:
        return default_config()
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed JSON in {path}: {e}", "config") from None
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}", "config") from None


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def validate(cfg: ExperimentConfig) -> list[str]:
    """Every violated precondition as ``"field: message"``; nothing is run."""
    out = []

    def bad(fld, msg):
        out.append(f"{fld}: {msg}")

    if cfg.experiment not in EXPERIMENT_NAMES:
        bad("experiment", f"unknown experiment {cfg.experiment!r}")
    if not _is_int(cfg.master_seed) or not 0 <= cfg.master_seed < 2 ** 64:
        bad("master_seed", "must be an integer in [0, 2^64)")
    paths = cfg.paths_override if cfg.paths_override is not None else cfg.paths
    if not _is_int(paths) or paths < 1:
        bad("paths", "must be a positive integer")
    if not _num(cfg.dt) or cfg.dt <= 0:
        bad("dt", "must be a positive number")
    if not _num(cfg.T) or cfg.T < 0:
        bad("T", "must be a nonnegative number")
    grid = spec = None
    try:
        if not isinstance(cfg.grid, dict):
            raise ConfigError("grid must be an object with left, right, nx", "grid")
        grid = GridSpec(**cfg.grid)
    except TypeError as e:
        bad("grid", str(e))
    except ConfigError as e:
        bad(e.field or "grid", str(e))
    try:
        spec = BranchingSpec.from_dict(cfg.spec if isinstance(cfg.spec, dict) else {})
    except ConfigError as e:
        bad(e.field or "spec", str(e))
    if grid is not None:
        try:
            initial_field(cfg.initial, grid)
        except ConfigError as e:
            bad(e.field or "initial", str(e))
    if grid is not None and spec is not None and _num(cfg.dt) and cfg.dt > 0 and _num(cfg.T) and cfg.T >= 0:
        for msg, fld in solver_diagnostics(grid, cfg.dt, cfg.T, spec):
            bad(fld, msg)
        if cfg.experiment in ("mass-sde", "uniqueness") and spec.n:
            try:
                DistFnConfig(grid, cfg.dt, cfg.T, spec)
            except ConfigError as e:
                bad(e.field or "spec", str(e))
        if cfg.snapshots is not None:
            try:
                snapshot_steps(cfg.snapshots, cfg.dt, cfg.T)
            except ConfigError as e:
                bad("snapshots", str(e))
    if not isinstance(cfg.options, dict):
        bad("options", "must be an object keyed by experiment name")
    else:
        for k, v in cfg.options.items():
            if k not in EXPERIMENT_NAMES:
                bad(f"options.{k}", "not an experiment name")
            elif not isinstance(v, dict):
                bad(f"options.{k}", "must be an object")
        ks = _KS_EXPERIMENTS if cfg.experiment == "acceptance" else (cfg.experiment,)
        for name in ks:
            if name not in _KS_EXPERIMENTS:
                continue
            n = cfg.paths_override if cfg.paths_override is not None else cfg.options.get(name, {}).get("paths", cfg.paths)
            if _is_int(n) and n < MIN_KS_PATHS:
                bad(f"options.{name}.paths", f"two-sample tests need at least {MIN_KS_PATHS} paths, got {n}")
    return out


def _write_json(path, obj) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def run(cfg: ExperimentConfig, log=print) -> int:
    """Run one experiment; writes manifest.json, summary.json and data/*.csv under ``cfg.out``."""
    from .experiments import EXPERIMENTS, Writer

    os.makedirs(cfg.out, exist_ok=True)
    manifest = {"config": cfg.to_dict(), "master_seed": cfg.master_seed, "code_version": __version__,
                "experiment": cfg.experiment, "status": "started"}
    if cfg.paths_override is not None:
        manifest["paths_override"] = cfg.paths_override
    mpath = os.path.join(cfg.out, "manifest.json")
    _write_json(mpath, manifest)
    t0 = time.perf_counter()
    try:
        problems = validate(cfg)
        if problems:
            manifest.update(status="invalid-config", diagnostics=problems)
            for p in problems:
                log(f"config error: {p}", file=sys.stderr)
            return EXIT_CONFIG
        try:
            verdicts = EXPERIMENTS[cfg.experiment](cfg, Writer(cfg.out))
        except ConfigError as e:
            manifest.update(status="invalid-config", diagnostics=[f"{e.field}: {e}"])
            log(f"config error: {e.field}: {e}", file=sys.stderr)
            return EXIT_CONFIG
        except PathFailure as e:
            manifest.update(status="path-failure", diagnostics=[str(e)],
                            failure={"path": e.path, "step": e.step, "cell": e.cell})
            log(f"path failure: {e}", file=sys.stderr)
            return EXIT_PATH
        ok = all(v.passed for v in verdicts)
        _write_json(os.path.join(cfg.out, "summary.json"),
                    {"experiment": cfg.experiment, "all_passed": ok, "verdicts": [v.to_dict() for v in verdicts]})
        for v in verdicts:
            log(v.line())
        manifest["status"] = "passed" if ok else "failed"
        return EXIT_OK if ok else EXIT_FAIL
    finally:
        manifest["elapsed_seconds"] = round(time.perf_counter() - t0, 3)
        _write_json(mpath, manifest)


def build_config(args) -> ExperimentConfig:
    d = load_config(args.config)
    if isinstance(d, dict):
        d = dict(d, experiment=args.experiment)
        if args.seed is not None:
            d["master_seed"] = args.seed
        if args.out is not None:
            d["out"] = args.out
    cfg = ExperimentConfig.from_dict(d)
    cfg.paths_override = args.paths
    return cfg


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="sbm", description=__doc__.splitlines()[0])
    ap.add_argument("experiment", choices=EXPERIMENT_NAMES)
    ap.add_argument("--config", help="JSON config (default: the shipped default config)")
    ap.add_argument("--seed", type=int, help="override master_seed")
    ap.add_argument("--paths", type=int, help="override every path count in the config")
    ap.add_argument("--out", help="output directory")
    args = ap.parse_args(argv)
    try:
        cfg = build_config(args)
    except ConfigError as e:
        print(f"config error: {e.field}: {e}", file=sys.stderr)
        out = args.out or "sbm-out"
        os.makedirs(out, exist_ok=True)
        _write_json(os.path.join(out, "manifest.json"),
                    {"status": "invalid-config", "experiment": args.experiment, "code_version": __version__,
                     "diagnostics": [f"{e.field}: {e}"], "config_file": args.config})
        return EXIT_CONFIG
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
