"""Command line interface.

Subcommands:
    gains     resolve a config's gain pipeline (lambda -> k, threshold, c, alpha)
    simulate  run a config's experiment, writing traces and reports
    verify    run the acceptance suite (quick or full)
    sweep     cartesian expansion of a config's sweep section

Exit codes: 0 success, 1 check failure, 2 config error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .acceptance import verify_suite
from .errors import ConfigError, ExtPidError
from .experiment import expand_sweep, load_config, resolve_gains, run_experiment
from .gain_manifold import compute_alpha, omega_lambda_threshold


def _read_config(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _cmd_gains(args) -> int:
    cfg = _read_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    config = load_config(cfg)
    pairs, c = resolve_gains(config)
    out = {"order": config.plant.n, "c": c, "setpoint": config.y_star, "gains": []}
    if config.bounds is not None:
        out["lambda_n_threshold"] = omega_lambda_threshold(config.plant.n, config.bounds, c)
        out["bounds"] = {
            "L": config.bounds.L,
            "b_low": config.bounds.b_low,
            "b_high": config.bounds.b_high,
        }
    for lam, gains in pairs:
        entry = {"k": list(gains.k), "b_low": gains.b_low}
        if lam is not None:
            entry["lambda"] = list(lam.lam)
            if config.bounds is not None:
                try:
                    entry["alpha"] = compute_alpha(lam, config.bounds, c)
                except ExtPidError:
                    entry["alpha"] = None
        out["gains"].append(entry)
    text = json.dumps(out, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "gains.json").write_text(text + "\n")
    print(text)
    return 0


def _cmd_simulate(args) -> int:
    cfg = _read_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    ok, manifest = run_experiment(cfg, args.out)
    print(
        f"wrote {manifest['n_traces']} trace(s) to {args.out}; "
        f"checks {'passed' if ok else 'FAILED'}"
    )
    return 0 if ok else 1


def _cmd_verify(args) -> int:
    return verify_suite(args.level)


def _cmd_sweep(args) -> int:
    cfg = _read_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    worst = 0
    for name, sub in expand_sweep(cfg):
        ok, manifest = run_experiment(sub, Path(args.out) / name)
        print(f"{name}: {manifest['n_traces']} trace(s), checks "
              f"{'passed' if ok else 'FAILED'}")
        worst = max(worst, 0 if ok else 1)
    return worst


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="extpid",
        description="Extended PID gain manifolds: tuning, simulation, certification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gains = sub.add_parser("gains", help="resolve gains/threshold/alpha from a config")
    p_gains.add_argument("--config", required=True)
    p_gains.add_argument("--out", default=None)
    p_gains.add_argument("--seed", type=int, default=None)
    p_gains.set_defaults(fn=_cmd_gains)

    p_sim = sub.add_parser("simulate", help="run an experiment config")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.set_defaults(fn=_cmd_simulate)

    p_ver = sub.add_parser("verify", help="run the acceptance suite")
    p_ver.add_argument("--level", choices=("quick", "full"), default="quick")
    p_ver.set_defaults(fn=_cmd_verify)

    p_sweep = sub.add_parser("sweep", help="expand and run a sweep config")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--seed", type=int, default=None)
    p_sweep.set_defaults(fn=_cmd_sweep)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ExtPidError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
