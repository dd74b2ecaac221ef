"""Command-line runner: single runs, comparison sweeps, offline solves.

    fedco run   --config exp.yaml --out DIR [--seed N]
    fedco sweep --config exp.yaml --axis controller=dynamite,fedavg --out DIR [--jobs J]
    fedco solve --instance inst.yaml [--gpu-mode]

Every run directory receives metrics.csv (one row per executed round),
manifest.json (the fully resolved config; rerunning from it reproduces
metrics.csv byte-for-byte), and summary.json.  Errors print one
machine-parsable line ``fedco-error[<category>]: reason`` and exit nonzero
(2 config, 3 feasibility, 4 guard, 1 other).  ``FEDCO_OUT`` overrides the
output directory; no other environment variable is consulted.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from ._backend import BACKEND_NAME
from .bounds import AssumptionParams, BoundObjective, DataStats
from .config import ExperimentConfig, parse_config, run_experiment, validate_config
from .errors import ConfigError, FeasibilityError, FedcoError, GuardError
from .optimizer import brute_force_opt, coopt_fl, gpu_closed_form, uniform_closed_form
from .resources import Budget, ClientProfile, feasibility_check, stats_from_profiles
from .simulation import metrics_to_csv

EXIT_CONFIG = 2
EXIT_FEASIBILITY = 3
EXIT_GUARD = 4
EXIT_OTHER = 1

AXIS_KEYS = ("controller", "sampling", "buffer", "K", "budget", "seed")


def _fail(category: str, message: str, code: int) -> "int":
    print(f"fedco-error[{category}]: {message}".replace("\n", " "), file=sys.stderr)
    return code


def _write_run(cfg: ExperimentConfig, out_dir: Path) -> dict:
    rows = run_experiment(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.csv").write_text(metrics_to_csv(rows))
    manifest = {
        "config": cfg.raw,
        "seed": cfg.seed,
        "code_version": __version__,
        "kernel_backend": BACKEND_NAME,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if rows:
        last = rows[-1]
        summary = {
            "rounds_executed": len(rows),
            "final_accuracy": last["test_acc"],
            "final_train_loss": last["train_loss"],
            "total_cost": last["cum_cost"],
            "total_time_s": last["sim_time_s"],
            "stopped_early": len(rows) < int(cfg.section("federation")["K"]),
        }
    else:
        summary = {
            "rounds_executed": 0,
            "final_accuracy": None,
            "final_train_loss": None,
            "total_cost": 0.0,
            "total_time_s": 0.0,
            "stopped_early": int(cfg.section("federation")["K"]) > 0,
        }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def cmd_run(args: argparse.Namespace) -> int:
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_overrides(run={"seed": int(args.seed)})
    summary = _write_run(cfg, Path(args.out))
    print(json.dumps(summary, sort_keys=True))
    return 0


def _parse_axis(spec: str) -> tuple[str, list]:
    if "=" not in spec:
        raise ConfigError(f"axis spec {spec!r} must look like key=v1,v2")
    key, _, raw = spec.partition("=")
    key = key.strip()
    values = [v.strip() for v in raw.split(",") if v.strip()]
    if key not in AXIS_KEYS:
        raise ConfigError(f"axis key {key!r} not one of {AXIS_KEYS}")
    if not values:
        raise ConfigError("axis grid is empty")
    if key in ("buffer", "K", "seed"):
        return key, [int(v) for v in values]
    if key == "budget":
        pairs = []
        for v in values:
            r, _, th = v.partition(":")
            pairs.append((float(r), float(th)))
        return key, pairs
    return key, values


def _axis_override(cfg: ExperimentConfig, key: str, value) -> ExperimentConfig:
    if key == "controller":
        return cfg.with_overrides(controller={"kind": value})
    if key == "sampling":
        return cfg.with_overrides(sampling=value)
    if key == "buffer":
        return cfg.with_overrides(clients={"buffer": value})
    if key == "K":
        return cfg.with_overrides(federation={"K": value})
    if key == "seed":
        return cfg.with_overrides(run={"seed": value})
    R, theta = value
    return cfg.with_overrides(budget={"R": R, "theta": theta})


def _sweep_point(payload: tuple[dict, str, object, str]) -> tuple[str, dict]:
    raw, key, value, out = payload
    cfg = _axis_override(ExperimentConfig(raw=raw), key, value)
    label = f"{key}={value}" if not isinstance(value, tuple) else f"{key}={value[0]}x{value[1]}"
    summary = _write_run(cfg, Path(out) / label.replace("/", "_"))
    return label, summary


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = parse_config(args.config)
    key, values = _parse_axis(args.axis)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payloads = [(cfg.raw, key, v, str(out)) for v in values]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_point, payloads))
    else:
        results = [_sweep_point(p) for p in payloads]
    lines = ["point,rounds_executed,final_accuracy,final_train_loss,total_cost,total_time_s"]
    for label, s in results:
        lines.append(
            f"{label},{s['rounds_executed']},{s['final_accuracy']},"
            f"{s['final_train_loss']},{s['total_cost']},{s['total_time_s']}"
        )
    (out / "comparison.csv").write_text("\n".join(lines) + "\n")
    print((out / "comparison.csv").read_text(), end="")
    return 0


def _load_instance(path: str) -> tuple[Budget, list[ClientProfile], AssumptionParams, float, int]:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigError("instance file must be a mapping")
    try:
        b = raw["budget"]
        budget = Budget(R=float(b["R"]), theta=float(b["theta"]), a=float(b["a"]),
                        b=float(b["b"]), K=int(b["K"]))
        p = raw["params"]
        params = AssumptionParams(
            rho=float(p["rho"]), beta=float(p["beta"]), c=float(p["c"]),
            delta=float(p["delta"]), eta=float(p["eta"]),
            mu=float(p.get("mu", 1.0)), mu_G=float(p.get("mu_G", 1.0)),
        )
        profiles = [
            ClientProfile(
                p=float(c["p"]), t_u=float(c["t_u"]), D=int(c["D"]), M=float(c["M"]),
                B=int(c["B"]) if "B" in c else None,
                t_c=float(c["t_c"]) if "t_c" in c else None,
            )
            for c in raw["clients"]
        ]
        G0 = float(raw.get("G0", 1.0))
        tau_max = int(raw.get("tau_max", 8))
    except KeyError as e:
        raise ConfigError(f"instance missing field {e}") from e
    return budget, profiles, params, G0, tau_max


def cmd_solve(args: argparse.Namespace) -> int:
    budget, profiles, params, G0, tau_max = _load_instance(args.instance)
    rep = feasibility_check(budget, profiles)
    if not rep.feasible:
        raise FeasibilityError("; ".join(rep.violations))
    stats = stats_from_profiles(profiles)
    objective = BoundObjective(params=params, stats=stats, gap=G0, horizon=budget.K)

    rows = []
    res = uniform_closed_form(budget, profiles, params, G0, tau_max)
    rows.append(("uniform-closed-form", res))
    res = coopt_fl(objective, profiles, budget, tau_max)
    rows.append(("coopt-fl", res))
    if args.gpu_mode:
        if any(c.t_c is None for c in profiles):
            raise ConfigError("--gpu-mode needs t_c on every client")
        rows.append(("gpu-closed-form", gpu_closed_form(budget, profiles, params, G0, tau_max)))
    try:
        rows.append(("brute-force", brute_force_opt(objective, profiles, budget, tau_max)))
    except GuardError as e:
        print(f"# brute-force skipped: {e}")

    print(f"{'solver':<20} {'tau':>3}  {'objective':>14}  s / binding")
    for name, r in rows:
        alloc = " ".join(
            f"{int(si)}[{flag.split('-')[0]}]" for si, flag in zip(r.s, r.binding)
        )
        print(f"{name:<20} {r.tau:>3}  {r.objective_value:>14.8g}  {alloc}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedco", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"fedco {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    default_out = os.environ.get("FEDCO_OUT")
    run_p = sub.add_parser("run", help="execute one experiment")
    run_p.add_argument("--config", required=True)
    run_p.add_argument("--out", required=default_out is None, default=default_out)
    run_p.add_argument("--seed", type=int, default=None)
    run_p.set_defaults(fn=cmd_run)

    sweep_p = sub.add_parser("sweep", help="one run per grid point on one axis")
    sweep_p.add_argument("--config", required=True)
    sweep_p.add_argument("--axis", required=True)
    sweep_p.add_argument("--out", required=default_out is None, default=default_out)
    sweep_p.add_argument("--jobs", type=int, default=1)
    sweep_p.set_defaults(fn=cmd_sweep)

    solve_p = sub.add_parser("solve", help="offline (tau, s) solvers side by side")
    solve_p.add_argument("--instance", required=True)
    solve_p.add_argument("--gpu-mode", action="store_true")
    solve_p.set_defaults(fn=cmd_solve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        return _fail("config", str(e), EXIT_CONFIG)
    except FeasibilityError as e:
        return _fail("feasibility", str(e), EXIT_FEASIBILITY)
    except GuardError as e:
        return _fail("guard", str(e), EXIT_GUARD)
    except FileNotFoundError as e:
        return _fail("config", str(e), EXIT_CONFIG)
    except FedcoError as e:
        return _fail("error", str(e), EXIT_OTHER)


if __name__ == "__main__":
    sys.exit(main())
