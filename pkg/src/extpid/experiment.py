"""Batch experiment runner: config parsing, pipeline assembly, artifacts.

A config is a JSON file with nested sections (plant, setpoint, mode, gains,
observer, horizon, integrator, initial_states, checks).  Field names are the
contract; see ``configs/`` for examples.  For each gain sample x initial
state the runner simulates, applies the requested certificate checks, and
writes CSV traces, a structured text report, plot-ready long-form CSV, and a
manifest recording seeds and every derived constant.  Given identical config
and seeds the bundle is byte-identical except for the timestamp, which lives
only in the manifest.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from . import __version__
from .analysis import (
    assumption_grid_check,
    check_error_bound,
    fit_rate,
    lyapunov_check,
    to_w_coordinates,
)
from .controllers import (
    OBSERVER_BASED,
    STATE_DERIVATIVE_FEEDBACK,
    ControllerState,
    ObserverConfig,
    epsilon_star,
    hurwitz_beta,
    solve_lyapunov_Q,
)
from .errors import ConfigError, ExtPidError
from .gain_manifold import (
    GainVector,
    LambdaVector,
    UncertaintyBounds,
    c0_upper_bound,
    compute_alpha,
    effective_bounds,
    lambda_to_gains,
    omega_lambda_threshold,
    sample_omega,
)
from .plants import PlantModel, PresetParams, derived_bounds, make_preset
from .simulator import (
    IntegratorPolicy,
    assemble_closed_loop,
    integrate,
    write_long_form_csv,
    write_trace_csv,
)

__all__ = ["ExperimentConfig", "load_config", "resolve_gains", "run_experiment", "expand_sweep"]

_KNOWN_CHECKS = ("lyapunov", "error_bound", "fit_rate", "assumption_grid")


@dataclass
class ExperimentConfig:
    """Validated, resolved experiment description."""

    raw: dict
    plant: PlantModel
    y_star: float
    mode: str
    bounds: Optional[UncertaintyBounds]
    c: Optional[float]
    gain_spec: dict
    observer_spec: Optional[dict]
    horizon: float
    policy: IntegratorPolicy
    initial_states: np.ndarray  # (B, n)
    checks: tuple
    output_points: int
    seed: int


def _need(cfg: dict, key: str, path: str):
    if key not in cfg:
        raise ConfigError(f"{path}{key}: missing required field")
    return cfg[key]


def load_config(cfg: dict) -> ExperimentConfig:
    """Validate a raw config dict; error messages carry the field path."""
    if not isinstance(cfg, dict):
        raise ConfigError(": config root must be an object")
    seed = int(cfg.get("seed", 0))

    plant_cfg = _need(cfg, "plant", "")
    try:
        known = {f for f in PresetParams.__dataclass_fields__}
        extra = set(plant_cfg) - known
        if extra:
            raise ConfigError(f"plant.{sorted(extra)[0]}: unknown field")
        plant = make_preset(PresetParams(**plant_cfg))
    except TypeError as exc:
        raise ConfigError(f"plant: {exc}") from exc
    except ExtPidError as exc:
        raise ConfigError(f"plant: {exc}") from exc

    y_star = float(cfg.get("setpoint", 0.0))
    mode = cfg.get("mode", STATE_DERIVATIVE_FEEDBACK)
    if mode not in (STATE_DERIVATIVE_FEEDBACK, OBSERVER_BASED):
        raise ConfigError(f"mode: unknown mode {mode!r}")

    unc = cfg.get("uncertainty", "derived")
    if unc == "derived":
        try:
            bounds = effective_bounds(derived_bounds(plant), y_star)
        except ExtPidError as exc:
            raise ConfigError(f"uncertainty: {exc}") from exc
    elif unc is None:
        bounds = None
    else:
        try:
            bounds = effective_bounds(
                UncertaintyBounds(
                    L=float(_need(unc, "L", "uncertainty.")),
                    b_low=float(_need(unc, "b_low", "uncertainty.")),
                    b_high=float(_need(unc, "b_high", "uncertainty.")),
                    M=unc.get("M"),
                ),
                y_star,
            )
        except ExtPidError as exc:
            raise ConfigError(f"uncertainty: {exc}") from exc

    c_cfg = cfg.get("c", "auto")
    if c_cfg == "auto":
        c = None  # resolved lazily (certified upper bound for the plant order)
    else:
        c = float(c_cfg)

    gain_spec = _need(cfg, "gains", "")
    if not isinstance(gain_spec, dict) or not (
        "k" in gain_spec or "lambda" in gain_spec or "sample" in gain_spec
    ):
        raise ConfigError("gains: need one of 'k', 'lambda', or 'sample'")

    observer_spec = cfg.get("observer")
    if mode == OBSERVER_BASED and observer_spec is None:
        raise ConfigError("observer: required in observer_based mode")
    if mode != OBSERVER_BASED and observer_spec is not None:
        raise ConfigError("observer: only valid in observer_based mode")
    if observer_spec == "auto":
        observer_spec = {"beta": "auto", "epsilon": "auto"}

    horizon = float(cfg.get("horizon", 10.0))
    if horizon <= 0.0:
        raise ConfigError("horizon: must be positive")

    integ = cfg.get("integrator", {})
    try:
        policy = IntegratorPolicy(
            method=integ.get("method", "rk45"),
            dt=integ.get("dt"),
            rtol=float(integ.get("rtol", 1e-9)),
            atol=float(integ.get("atol", 1e-9)),
            dt_min=float(integ.get("dt_min", 1e-12)),
            escape_norm_threshold=float(integ.get("escape_norm_threshold", 1e8)),
        )
    except ValueError as exc:
        raise ConfigError(f"integrator: {exc}") from exc

    init = cfg.get("initial_states", {"states": [[0.0] * plant.n]})
    if "states" in init:
        states = np.asarray(init["states"], dtype=float)
        if states.ndim != 2 or states.shape[1] != plant.n:
            raise ConfigError(f"initial_states.states: need shape (B, {plant.n})")
    elif "ball_radius" in init:
        radius = float(init["ball_radius"])
        count = int(_need(init, "count", "initial_states."))
        rng = np.random.default_rng(int(init.get("seed", seed)))
        dirs = rng.normal(size=(count, plant.n))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        radii = radius * rng.uniform(0.0, 1.0, size=count) ** (1.0 / plant.n)
        states = dirs * radii[:, None]
    else:
        raise ConfigError("initial_states: need 'states' or 'ball_radius'")

    checks = tuple(cfg.get("checks", ()))
    for name in checks:
        if name not in _KNOWN_CHECKS:
            raise ConfigError(f"checks: unknown check {name!r} (known: {_KNOWN_CHECKS})")

    return ExperimentConfig(
        raw=cfg,
        plant=plant,
        y_star=y_star,
        mode=mode,
        bounds=bounds,
        c=c,
        gain_spec=gain_spec,
        observer_spec=observer_spec,
        horizon=horizon,
        policy=policy,
        initial_states=states,
        checks=checks,
        output_points=int(cfg.get("output_points", 1000)),
        seed=seed,
    )


def resolve_gains(config: ExperimentConfig):
    """Gain list [(LambdaVector | None, GainVector)] plus the resolved c."""
    spec = config.gain_spec
    c = config.c
    if c is None:
        c = c0_upper_bound(config.plant.n)
    if "k" in spec:
        k = [float(v) for v in spec["k"]]
        if len(k) != config.plant.n + 1:
            raise ConfigError(f"gains.k: need {config.plant.n + 1} entries")
        return [(None, GainVector(config.plant.n, tuple(k), float(spec.get("b_low", 1.0))))], c
    if "lambda" in spec:
        lam = LambdaVector(tuple(float(v) for v in spec["lambda"]))
        if lam.n != config.plant.n:
            raise ConfigError(f"gains.lambda: need {config.plant.n + 1} entries")
        b_low = float(spec.get("b_low", config.bounds.b_low if config.bounds else 1.0))
        return [(lam, lambda_to_gains(lam, b_low))], c
    sample = spec["sample"]
    if config.bounds is None:
        raise ConfigError("gains.sample: needs uncertainty bounds")
    pairs = sample_omega(
        config.plant.n,
        config.bounds,
        c,
        seed=int(sample.get("seed", config.seed)),
        count=int(_need(sample, "count", "gains.sample.")),
        window=float(sample.get("window", 10.0)),
    )
    return pairs, c


def _resolve_observer(config: ExperimentConfig, lam, gains, c):
    spec = config.observer_spec
    beta = spec.get("beta", "auto")
    if beta == "auto":
        beta = hurwitz_beta(config.plant.n)
    else:
        beta = tuple(float(b) for b in beta)
    eps = spec.get("epsilon", "auto")
    extras = {}
    if eps == "auto":
        if lam is None or config.bounds is None:
            raise ConfigError(
                "observer.epsilon: 'auto' needs lambda-sourced gains and bounds"
            )
        cert = solve_lyapunov_Q(beta)
        eps_star, beta_rate = epsilon_star(lam, gains, config.bounds, c, cert)
        eps = 0.9 * eps_star
        extras = {"epsilon_star": eps_star, "beta_rate": beta_rate}
    else:
        eps = float(eps)
    zhat0 = spec.get("zhat0")
    return ObserverConfig(beta=beta, epsilon=eps, zhat0=zhat0), extras


def _run_checks(config, trace, lam, gains, alpha, c):
    results = []
    needs_lam = {"lyapunov", "error_bound"} & set(config.checks)
    if needs_lam and (lam is None or alpha is None):
        raise ConfigError(
            f"checks: {sorted(needs_lam)} need lambda-sourced gains inside the manifold"
        )
    for name in config.checks:
        if name == "lyapunov":
            w = to_w_coordinates(trace, lam, gains, config.plant)
            rep = lyapunov_check(w, alpha)
        elif name == "error_bound":
            rep = check_error_bound(trace, c, alpha, config.plant, gains, config.bounds)
        elif name == "fit_rate":
            rate = fit_rate(trace)
            results.append(
                ("fit_rate", rate is not None and rate > 0.0, {"alpha_hat": rate})
            )
            continue
        else:  # assumption_grid
            rep = assumption_grid_check(config.plant, config.bounds, y_star=config.y_star)
            results.append(
                (
                    "assumption_grid",
                    rep.passed,
                    {
                        "min_input_gain": rep.min_input_gain,
                        "max_gap_ratio": rep.max_gap_ratio,
                        "max_envelope_ratio": rep.max_envelope_ratio,
                    },
                )
            )
            continue
        results.append(
            (rep.name, rep.passed, {"violations": rep.violations, "worst_margin": rep.worst_margin, **rep.constants})
        )
    return results


def run_experiment(cfg: dict, out_dir, max_workers: int = 4):
    """Run the full pipeline for one config; returns (all_passed, manifest)."""
    config = load_config(cfg)
    out = Path(out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    gain_pairs, c = resolve_gains(config)

    constants = {"c": c}
    tasks = []
    for gi, (lam, gains) in enumerate(gain_pairs):
        alpha = None
        threshold = None
        observer = None
        obs_extras = {}
        if lam is not None and config.bounds is not None:
            threshold = omega_lambda_threshold(config.plant.n, config.bounds, c)
            try:
                alpha = compute_alpha(lam, config.bounds, c)
            except ExtPidError:
                alpha = None
        if config.mode == OBSERVER_BASED:
            observer, obs_extras = _resolve_observer(config, lam, gains, c)
        controller = ControllerState(0.0, config.mode, gains)
        loop = assemble_closed_loop(config.plant, controller, config.y_star, observer)
        constants[f"gain_{gi:03d}"] = {
            "lambda": None if lam is None else list(lam.lam),
            "k": list(gains.k),
            "alpha": alpha,
            "lambda_n_threshold": threshold,
            **({"observer_epsilon": observer.epsilon} if observer else {}),
            **obs_extras,
        }
        for si, x0 in enumerate(config.initial_states):
            tasks.append((gi, si, loop, lam, gains, alpha, x0))

    def _work(task):
        gi, si, loop, lam, gains, alpha, x0 = task
        trace = integrate(
            loop,
            loop.initial_state(x0),
            config.horizon,
            policy=config.policy,
            n_output=config.output_points,
        )
        checks = [] if trace.escaped else _run_checks(config, trace, lam, gains, alpha, c)
        if trace.escaped:
            checks = [("escape", False, trace.escape.as_dict())]
        return gi, si, trace, checks

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        results = sorted(pool.map(_work, tasks), key=lambda r: (r[0], r[1]))

    report_lines = []
    traces = []
    all_passed = True
    for gi, si, trace, checks in results:
        name = f"trace_g{gi:03d}_s{si:03d}"
        write_trace_csv(trace, out / "traces" / f"{name}.csv")
        traces.append(trace)
        if trace.escaped:
            report_lines.append(
                f"{name} escape flagged reason={trace.escape.reason} "
                f"bracket=({trace.escape.time_last_accepted:.6g},"
                f"{trace.escape.time_bracket_end:.6g})"
            )
        for check_name, passed, info in checks:
            all_passed &= bool(passed) or check_name == "escape"
            info_str = " ".join(
                f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                for k, v in info.items()
                if v is not None
            )
            report_lines.append(
                f"{name} {check_name} {'PASS' if passed else 'FAIL'} {info_str}"
            )
    write_long_form_csv(traces, out / "plot_long.csv")
    (out / "report.txt").write_text("\n".join(report_lines) + "\n")

    manifest = {
        "config": cfg,
        "constants": constants,
        "versions": {
            "extpid": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "seed": config.seed,
        "n_traces": len(traces),
        "all_checks_passed": bool(all_passed),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return all_passed, manifest


def _set_path(cfg: dict, dotted: str, value):
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def expand_sweep(cfg: dict):
    """Cartesian expansion of the 'sweep' section: {dotted.path: [values]}."""
    sweep = cfg.get("sweep")
    if not sweep:
        return [("single", cfg)]
    paths = sorted(sweep)
    combos = [[]]
    for p in paths:
        vals = sweep[p]
        if not isinstance(vals, list) or not vals:
            raise ConfigError(f"sweep.{p}: need a non-empty list")
        combos = [prev + [(p, v)] for prev in combos for v in vals]
    out = []
    for i, combo in enumerate(combos):
        sub = json.loads(json.dumps(cfg))
        del sub["sweep"]
        for p, v in combo:
            _set_path(sub, p, v)
        out.append((f"sweep_{i:03d}", sub))
    return out
