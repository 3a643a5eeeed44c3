"""Command-line front end.

    smdg run1d|run2d|convergence|energy|order-check [--config cfg.json] [--seed N]
         [--samples N] [--out DIR] [--threads N] [--levels 20,40,80] [--set key=value]
         [--dump-fields]

Config files are flat JSON objects whose keys are :class:`ExperimentConfig`
fields (plus ``threads`` and ``levels``).  Precedence, lowest first: built-in
defaults, ``SMDG_SEED`` (seed only), the config file, ``--set``, dedicated flags.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DivergenceError, SMDGError, WellPosednessError
from .mc_harness import (ConvergenceReport, ExperimentConfig, build_discretization, convergence_study,
                         energy_history, fmt, monte_carlo, run_sample)
from .sde_taylor import gbm_strong_errors

COMMANDS = ("run1d", "run2d", "convergence", "energy", "order-check")
CONFIG_KEYS = {f.name for f in dataclasses.fields(ExperimentConfig)}
RUN_KEYS = {"threads", "levels"}
ORDER_KEYS = {"drift", "vol", "x0", "final_time", "levels", "samples", "substeps", "root_seed"}

EXIT_FAILURE = 1
EXIT_UNKNOWN_KEY = 2
EXIT_INVALID = 3
EXIT_ILL_POSED = 4
EXIT_DIVERGED = 5


class UnknownKeyError(ConfigurationError):
    pass


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _parse_levels(val):
    if isinstance(val, str):
        val = [int(v) for v in val.split(",") if v.strip()]
    return [tuple(v) if isinstance(v, list) else int(v) for v in val]


def load_settings(path: str | None, overrides: list[str] | None = None) -> dict:
    """Merge the JSON file and ``key=value`` overrides, rejecting unknown keys."""
    settings = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigurationError(f"config {path} must be a flat JSON object")
        settings.update(data)
    for item in overrides or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        settings[key.strip()] = _parse_value(val)
    for key, val in settings.items():
        if isinstance(val, (dict, list)) and key != "levels":
            raise ConfigurationError(f"config must be flat; key {key!r} holds a nested value")
    return settings


def _check_keys(settings: dict, allowed: set):
    unknown = sorted(set(settings) - allowed)
    if unknown:
        raise UnknownKeyError(f"unknown config key(s): {', '.join(unknown)}; allowed: {', '.join(sorted(allowed))}")


def resolve_seed(settings: dict, flag: int | None, env=os.environ) -> int | None:
    if flag is not None:
        return flag
    if "root_seed" in settings:
        return settings["root_seed"]
    if env.get("SMDG_SEED"):
        try:
            return int(env["SMDG_SEED"])
        except ValueError:
            raise ConfigurationError(f"SMDG_SEED must be an integer, got {env['SMDG_SEED']!r}") from None
    return None


def parse_config(command: str, settings: dict, seed: int | None = None, samples: int | None = None,
                 env=os.environ) -> tuple[ExperimentConfig, dict]:
    """Build the validated config for ``command`` and the run options (threads, levels)."""
    _check_keys(settings, CONFIG_KEYS | RUN_KEYS)
    cfg = {k: v for k, v in settings.items() if k in CONFIG_KEYS}
    run = {k: v for k, v in settings.items() if k in RUN_KEYS}
    if command == "run2d":
        cfg.setdefault("problem", "maxwell2d")
    if cfg.get("problem", "maxwell1d").startswith("maxwell2d"):
        cfg.setdefault("final_time", 0.1)
        cfg.setdefault("nt", cfg.get("nx", 20))
    root_seed = resolve_seed(settings, seed, env)
    if root_seed is not None:
        cfg["root_seed"] = root_seed
    if samples is not None:
        cfg["samples"] = samples
    config = ExperimentConfig(**cfg)
    if command == "run1d" and config.dimension != 1:
        raise ConfigurationError("run1d needs a 1D problem")
    if command == "run2d" and config.dimension != 2:
        raise ConfigurationError("run2d needs a 2D problem")
    return config, run


# -- output ------------------------------------------------------------------


def _comment(config_hash: str, root_seed: int) -> str:
    return f"# config_hash={config_hash} root_seed={root_seed}\n"


class OutputSet:
    """Collects written files so they can be removed if the run fails."""

    def __init__(self, out: Path, config_hash: str, root_seed: int):
        self.out = out
        self.header = _comment(config_hash, root_seed)
        self.paths: list[Path] = []

    def write(self, name: str, body: str, comment: bool = True) -> Path:
        path = self.out / name
        self.paths.append(path)
        with open(path, "w", newline="\n") as fh:
            fh.write((self.header if comment else "") + body)
        return path

    def cleanup(self):
        for p in self.paths:
            p.unlink(missing_ok=True)


def _single_level_table(res, config: ExperimentConfig) -> ConvergenceReport:
    rms, se = res.rms, res.rms_se
    return ConvergenceReport(config.dimension, res.field_names, [(config.nx, config.ny, config.nt)],
                             {f: [rms[f]] for f in res.field_names}, {f: [se[f]] for f in res.field_names},
                             config.samples, config.root_seed)


def fields_csv(config: ExperimentConfig, X: np.ndarray) -> str:
    """Coefficient dump; 2D modes are ordered ``lx * (k + 1) + ly``."""
    disc = build_discretization(config)
    parts = disc.split(X)
    lines = ["field,ix,mode,value" if config.dimension == 1 else "field,ix,iy,mode,value"]
    for name, coeffs in zip(disc.problem.field_names, parts):
        for idx in np.ndindex(coeffs.shape):
            lines.append(",".join([name] + [str(i) for i in idx] + [fmt(coeffs[idx])]))
    return "\n".join(lines) + "\n"


def _run(args, outputs: OutputSet, config: ExperimentConfig, run: dict) -> dict:
    threads = args.threads or run.get("threads", 1)
    summary = {}
    if args.command in ("run1d", "run2d"):
        res = monte_carlo(config, threads=threads)
        report = _single_level_table(res, config)
        outputs.write("table.csv", report.to_csv())
        outputs.write("table_se.csv", report.se_csv())
        outputs.write("energy.csv", energy_history(config, result=res).to_csv())
        summary["rms"] = {f: fmt(v) for f, v in res.rms.items()}
    elif args.command == "convergence":
        levels = _parse_levels(args.levels if args.levels is not None
                               else run.get("levels", [config.nx, 2 * config.nx, 4 * config.nx]))
        report = convergence_study(config, levels, threads=threads)
        outputs.write("table.csv", report.to_csv())
        outputs.write("table_se.csv", report.se_csv())
        summary["rates"] = {f: [fmt(r) for r in v] for f, v in report.rates.items()}
    elif args.command == "energy":
        hist = energy_history(config, threads=threads)
        outputs.write("energy.csv", hist.to_csv())
        summary["final_mean_energy"] = fmt(hist.mean_energy[-1])
    if args.dump_fields:
        state = run_sample(config, 0, keep_state=True).final_state
        outputs.write("fields.csv", fields_csv(config, state))
    return summary


def _order_check(args, settings: dict) -> tuple[dict, dict]:
    _check_keys(settings, ORDER_KEYS)
    opts = {"drift": 0.5, "vol": 0.5, "x0": 1.0, "final_time": 1.0,
            "levels": [16, 32, 64, 128, 256], "samples": 1000, "substeps": 4, "root_seed": 0}
    opts.update(settings)
    seed = resolve_seed(settings, args.seed)
    if seed is not None:
        opts["root_seed"] = seed
    if args.samples is not None:
        opts["samples"] = args.samples
    if args.levels is not None:
        opts["levels"] = _parse_levels(args.levels)
    if len(opts["levels"]) < 2 or opts["samples"] < 1:
        raise ConfigurationError("order-check needs at least two levels and one sample")
    return opts, gbm_strong_errors(opts["drift"], opts["vol"], opts["x0"], opts["final_time"],
                                   tuple(opts["levels"]), opts["samples"], opts["substeps"], opts["root_seed"])


def _order_csv(res: dict) -> str:
    lines = ["Nt,tau,rms_e_taylor2,rms_e_euler"]
    for i, n in enumerate(res["levels"]):
        lines.append(f"{n},{fmt(res['tau'][i])},{fmt(res['taylor2'][i])},{fmt(res['euler'][i])}")
    return "\n".join(lines) + "\n"


def _hash(obj: dict) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smdg", description="DG solvers for stochastic Maxwell equations.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="flat JSON config file")
    p.add_argument("--seed", type=int, help="root seed (overrides config and SMDG_SEED)")
    p.add_argument("--samples", type=int, help="Monte Carlo sample count")
    p.add_argument("--out", default=".", help="output directory (created if missing)")
    p.add_argument("--threads", type=int, help="worker threads for sample chunks")
    p.add_argument("--levels", help="comma-separated Nx ladder (convergence) or step counts (order-check)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="inline config override, repeatable")
    p.add_argument("--dump-fields", action="store_true", help="also write sample 0's final coefficients")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    outputs = None
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigurationError("--seed must be non-negative")
        if args.threads is not None and args.threads < 1:
            raise ConfigurationError("--threads must be at least 1")
        settings = load_settings(args.config, args.set)
        start = time.perf_counter()
        if args.command == "order-check":
            opts, res = _order_check(args, settings)
            config_echo, config_hash, root_seed = opts, _hash(opts), opts["root_seed"]
            out.mkdir(parents=True, exist_ok=True)
            outputs = OutputSet(out, config_hash, root_seed)
            outputs.write("table.csv", _order_csv(res))
            summary = {"slope_taylor2": fmt(res["slope_taylor2"]), "slope_euler": fmt(res["slope_euler"])}
            print(f"slope taylor2 {summary['slope_taylor2']}  euler {summary['slope_euler']}")
        else:
            config, run = parse_config(args.command, settings, args.seed, args.samples)
            config_echo, config_hash, root_seed = config.to_dict(), config.config_hash(), config.root_seed
            out.mkdir(parents=True, exist_ok=True)
            outputs = OutputSet(out, config_hash, root_seed)
            summary = _run(args, outputs, config, run)
        manifest = {
            "command": args.command,
            "config": config_echo,
            "config_hash": config_hash,
            "root_seed": root_seed,
            "version": metadata.version("artifact"),
            "runtime_seconds": round(time.perf_counter() - start, 3),
            "outputs": [str(p) for p in outputs.paths] + [str(out / "manifest.json")],
            "summary": summary,
        }
        outputs.write("manifest.json", json.dumps(manifest, indent=2) + "\n", comment=False)
        for p in outputs.paths:
            print(p)
        return 0
    except BaseException as exc:
        if outputs is not None:
            outputs.cleanup()
        if isinstance(exc, UnknownKeyError):
            code = EXIT_UNKNOWN_KEY
        elif isinstance(exc, WellPosednessError):
            code = EXIT_ILL_POSED
        elif isinstance(exc, DivergenceError):
            code = EXIT_DIVERGED
        elif isinstance(exc, (ValueError, TypeError)):
            code = EXIT_INVALID
        elif isinstance(exc, SMDGError):
            code = EXIT_FAILURE
        elif isinstance(exc, (KeyboardInterrupt, SystemExit)):
            raise
        else:
            code = EXIT_FAILURE
        kind = type(exc).__name__
        print(f"smdg: error ({kind}): {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
