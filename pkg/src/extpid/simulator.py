"""Closed-loop assembly, integration, escape detection, and trace recording.

The augmented state is [x0, x] for state-derivative feedback and
[x0, x, zhat] for observer-based runs, where x0 integrates the regulation
error.  Integration is explicit: fixed-step classic RK4 or the adaptive
Dormand-Prince 5(4) pair with PI-free elementary step control.  Escape is
declared when the state norm crosses a threshold or the adaptive step
collapses; the escape time is reported as a bracket (last accepted, first
failed).  Traces are sampled on a uniform output grid, independent of the
internal steps, by capping steps at grid points.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .controllers import (
    OBSERVER_BASED,
    STATE_DERIVATIVE_FEEDBACK,
    ControllerState,
    ObserverConfig,
    observer_derivative,
    observer_pid_control,
    pid_control,
)
from .errors import ArityError, EvaluationError, IntegrationBudgetError
from .plants import PlantModel

__all__ = [
    "AugmentedState",
    "EscapeInfo",
    "Trace",
    "IntegratorPolicy",
    "ClosedLoop",
    "assemble_closed_loop",
    "integrate",
    "integrate_batch",
    "write_trace_csv",
    "write_long_form_csv",
]


@dataclass(frozen=True)
class AugmentedState:
    """Structured view of one augmented state vector."""

    x0: float
    x: np.ndarray
    zhat: Optional[np.ndarray] = None

    def pack(self) -> np.ndarray:
        parts = [np.atleast_1d(self.x0), np.asarray(self.x, dtype=float)]
        if self.zhat is not None:
            parts.append(np.asarray(self.zhat, dtype=float))
        return np.concatenate(parts)

    @staticmethod
    def unpack(vec: np.ndarray, n: int, observer: bool) -> "AugmentedState":
        vec = np.asarray(vec, dtype=float)
        zh = vec[1 + n : 1 + 2 * n] if observer else None
        return AugmentedState(x0=float(vec[0]), x=vec[1 : 1 + n], zhat=zh)


@dataclass(frozen=True)
class EscapeInfo:
    reason: str  # "norm_threshold" | "step_collapse" | "nonfinite"
    time_last_accepted: float
    time_bracket_end: float

    def as_dict(self) -> dict:
        return {
            "reason": self.reason,
            "time_last_accepted": self.time_last_accepted,
            "time_bracket_end": self.time_bracket_end,
        }


@dataclass
class Trace:
    """Uniformly sampled closed-loop record."""

    times: np.ndarray
    states: np.ndarray  # (N, dim)
    y: np.ndarray
    e: np.ndarray
    u: np.ndarray
    escape: Optional[EscapeInfo] = None
    meta: dict = field(default_factory=dict)

    @property
    def escaped(self) -> bool:
        return self.escape is not None


@dataclass(frozen=True)
class IntegratorPolicy:
    """Fixed RK4 (set ``dt``) or embedded adaptive RK45 (tolerances)."""

    method: str = "rk45"
    dt: Optional[float] = None
    rtol: float = 1e-9
    atol: float = 1e-9
    dt_min: float = 1e-12
    escape_norm_threshold: float = 1e8
    max_steps: int = 5_000_000

    def __post_init__(self):
        if self.method not in ("rk45", "rk4"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.method == "rk4" and (self.dt is None or self.dt <= 0.0):
            raise ValueError("rk4 needs a positive fixed dt")


@dataclass(frozen=True)
class ClosedLoop:
    """Autonomous right-hand side over the augmented state, plus output maps."""

    plant: PlantModel
    controller: ControllerState
    y_star: float
    observer: Optional[ObserverConfig] = None

    @property
    def n(self) -> int:
        return self.plant.n

    @property
    def dim(self) -> int:
        return 1 + self.n + (self.n if self.observer is not None else 0)

    def control(self, s: np.ndarray):
        s = np.asarray(s, dtype=float)
        x0 = s[..., 0]
        x = s[..., 1 : 1 + self.n]
        e = self.y_star - self.plant.output(x)
        cs = self.controller.with_integral(x0)
        if self.observer is not None:
            return observer_pid_control(cs, e, s[..., 1 + self.n :])
        # derivative terms are read from Phi(x): e^(i) = -z_{i+1}
        z = self.plant.phi(x)
        return pid_control(cs, e, -z[..., 1:])

    def rhs(self, t: float, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        x = s[..., 1 : 1 + self.n]
        e = self.y_star - self.plant.output(x)
        u = self.control(s)
        out = np.empty_like(s)
        out[..., 0] = e
        out[..., 1 : 1 + self.n] = self.plant.dynamics(x, u)
        if self.observer is not None:
            out[..., 1 + self.n :] = observer_derivative(
                self.observer, s[..., 1 + self.n :], e
            )
        return out

    def outputs(self, states: np.ndarray):
        x = states[..., 1 : 1 + self.n]
        y = self.plant.output(x)
        return y, self.y_star - y, self.control(states)

    def initial_state(self, x_plant) -> np.ndarray:
        x_plant = np.asarray(x_plant, dtype=float)
        if x_plant.shape[-1] != self.n:
            raise ArityError(f"plant state must have length {self.n}")
        parts = [np.zeros(x_plant.shape[:-1] + (1,)), x_plant]
        if self.observer is not None:
            e0 = self.y_star - self.plant.output(x_plant)
            z0 = np.zeros(x_plant.shape[:-1] + (self.n,))
            if self.observer.zhat0 is not None:
                z0[...] = np.asarray(self.observer.zhat0, dtype=float)
            else:
                z0[..., 0] = e0
            parts.append(z0)
        return np.concatenate(parts, axis=-1)


def assemble_closed_loop(
    plant: PlantModel,
    controller_state: ControllerState,
    y_star: float,
    observer_cfg: Optional[ObserverConfig] = None,
) -> ClosedLoop:
    """Build the autonomous field; validates order and mode consistency."""
    if controller_state.gains.n != plant.n:
        raise ArityError(
            f"gain order {controller_state.gains.n} != plant order {plant.n}"
        )
    if controller_state.mode == OBSERVER_BASED:
        if observer_cfg is None:
            raise ArityError("observer mode needs an ObserverConfig")
        if observer_cfg.n != plant.n:
            raise ArityError(f"observer order {observer_cfg.n} != plant order {plant.n}")
    elif controller_state.mode == STATE_DERIVATIVE_FEEDBACK:
        if observer_cfg is not None:
            raise ArityError("observer config given but mode is state feedback")
    else:
        raise ArityError(f"unknown mode {controller_state.mode!r}")
    return ClosedLoop(
        plant=plant,
        controller=controller_state,
        y_star=float(y_star),
        observer=observer_cfg,
    )


# Dormand-Prince 5(4) tableau; 5th-order solution is propagated
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])


def _norm_exceeded(y: np.ndarray, threshold: float) -> bool:
    return bool(not np.all(np.isfinite(y)) or np.max(np.abs(y)) > threshold)


def _integrate_core(rhs, s0, t0, t_end, policy: IntegratorPolicy, grid):
    """Shared stepping loop; returns (sample times, sample states, escape).

    Samples exactly at grid points by capping steps there.  The controller
    step size is kept separately from the (possibly grid-capped) effective
    step so caps do not pollute step-size adaptation.
    """
    t = float(t0)
    y = np.array(s0, dtype=float)
    if not np.all(np.isfinite(y)):
        raise EvaluationError("non-finite initial state")
    adaptive = policy.method == "rk45"
    h_ctrl = policy.dt if not adaptive else min(1e-3, (t_end - t0) / 10.0)
    ts = [t]
    ys = [y.copy()]
    gi = 1
    escape = None
    steps = 0
    t_scale = max(1.0, abs(t_end))
    while t < t_end - 1e-14 * t_scale:
        steps += 1
        if steps > policy.max_steps:
            raise IntegrationBudgetError(
                f"exceeded {policy.max_steps} steps at t = {t:.6g}"
            )
        t_next = grid[gi] if gi < len(grid) else t_end
        h = min(h_ctrl, t_next - t)
        with np.errstate(all="ignore"):
            if adaptive:
                ks = []
                for i in range(7):
                    yi = y
                    if i:
                        incr = _DP_A[i][0] * ks[0]
                        for a, k in zip(_DP_A[i][1:], ks[1:]):
                            if a != 0.0:
                                incr = incr + a * k
                        yi = y + h * incr
                    ks.append(np.asarray(rhs(t + _DP_C[i] * h, yi), dtype=float))
                y_new = y + h * sum(b * k for b, k in zip(_DP_B5, ks) if b != 0.0)
                y_err = h * sum(
                    (b5 - b4) * k for b5, b4, k in zip(_DP_B5, _DP_B4, ks)
                )
                scale = policy.atol + policy.rtol * np.maximum(np.abs(y), np.abs(y_new))
                ratio = np.abs(y_err) / scale
                enorm = float(np.max(ratio)) if np.all(np.isfinite(ratio)) else np.inf
            else:
                k1 = np.asarray(rhs(t, y), dtype=float)
                k2 = np.asarray(rhs(t + h / 2, y + h / 2 * k1), dtype=float)
                k3 = np.asarray(rhs(t + h / 2, y + h / 2 * k2), dtype=float)
                k4 = np.asarray(rhs(t + h, y + h * k3), dtype=float)
                y_new = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
                enorm = 0.0
        if enorm <= 1.0:
            t_prev = t
            t, y = t + h, y_new
            while gi < len(grid) and t >= grid[gi] - 1e-12 * t_scale:
                ts.append(t)
                ys.append(y.copy())
                gi += 1
            if _norm_exceeded(y, policy.escape_norm_threshold):
                reason = "norm_threshold" if np.all(np.isfinite(y)) else "nonfinite"
                if ts[-1] != t:
                    ts.append(t)
                    ys.append(y.copy())
                escape = EscapeInfo(reason, t_prev, t)
                break
            if adaptive:
                fac = 5.0 if enorm == 0.0 else min(5.0, max(0.2, 0.9 * enorm**-0.2))
                h_prop = h * fac
                h_ctrl = max(h_ctrl, h_prop) if h < h_ctrl else h_prop
        else:
            fac = min(1.0, max(0.2, 0.9 * enorm**-0.2)) if np.isfinite(enorm) else 0.2
            h_ctrl = h * fac
            if h_ctrl < policy.dt_min:
                escape = EscapeInfo("step_collapse", t, t + h)
                break
    return np.array(ts), np.array(ys), escape


def integrate(
    loop: ClosedLoop,
    state0,
    t_end: float,
    policy: IntegratorPolicy = IntegratorPolicy(),
    n_output: int = 1000,
    t0: float = 0.0,
) -> Trace:
    """Integrate one augmented initial state until ``t_end`` or escape.

    ``state0`` is the full augmented vector (see ``ClosedLoop.initial_state``).
    The trace is sampled on a uniform grid of ``n_output`` points after t0;
    if escape is flagged the trace ends at the last accepted step.
    """
    if t_end <= t0:
        raise ValueError("t_end must exceed t0")
    if loop.observer is not None and loop.observer.epsilon < 10.0 * policy.dt_min:
        warnings.warn(
            "observer gain is within 10x of the minimum step; "
            "fast dynamics may be unresolved",
            RuntimeWarning,
            stacklevel=2,
        )
    grid = np.linspace(t0, t_end, n_output + 1)
    ts, ys, escape = _integrate_core(loop.rhs, state0, t0, t_end, policy, grid)
    with np.errstate(all="ignore"):
        y, e, u = loop.outputs(ys)
    meta = {
        "plant": loop.plant.name,
        "order": loop.n,
        "mode": loop.controller.mode,
        "y_star": loop.y_star,
        "gains": list(loop.controller.gains.k),
        "policy": {
            "method": policy.method,
            "dt": policy.dt,
            "rtol": policy.rtol,
            "atol": policy.atol,
        },
        "t_end": t_end,
    }
    if loop.observer is not None:
        meta["observer"] = {
            "beta": list(loop.observer.beta),
            "epsilon": loop.observer.epsilon,
        }
    return Trace(times=ts, states=ys, y=y, e=e, u=u, escape=escape, meta=meta)


def integrate_batch(
    loop: ClosedLoop,
    states0: np.ndarray,
    t_end: float,
    policy: IntegratorPolicy = IntegratorPolicy(),
    n_output: int = 1000,
    t0: float = 0.0,
):
    """Integrate a batch of initial states (B, dim) in one stepping loop.

    Error control takes the max over the batch, so all members share the
    accepted steps.  Intended for escape-free certificate runs; any member
    escaping aborts the batch with the global escape info.  Returns
    (times (N,), states (N, B, dim), escape).
    """
    states0 = np.asarray(states0, dtype=float)
    if states0.ndim != 2 or states0.shape[1] != loop.dim:
        raise ArityError(f"expected batch of shape (B, {loop.dim})")
    grid = np.linspace(t0, t_end, n_output + 1)
    return _integrate_core(loop.rhs, states0, t0, t_end, policy, grid)


def _state_columns(n: int, observer: bool):
    cols = ["t", "x0"] + [f"x_{i}" for i in range(1, n + 1)]
    if observer:
        cols += [f"zhat_{i}" for i in range(1, n + 1)]
    return cols + ["y", "e", "u"]


def write_trace_csv(trace: Trace, path) -> None:
    """Columns t, x0, x_1..x_n, [zhat_1..zhat_n], y, e, u; escape info in a
    trailing comment line and in a sidecar .summary.json record."""
    n = trace.meta["order"]
    observer = "observer" in trace.meta
    cols = _state_columns(n, observer)
    body = np.column_stack(
        [trace.times, trace.states, trace.y, trace.e, trace.u]
    )
    lines = [",".join(cols)]
    for row in body:
        lines.append(",".join(f"{v:.17g}" for v in row))
    if trace.escape is not None:
        esc = trace.escape
        lines.append(
            f"# escape: reason={esc.reason} last_accepted={esc.time_last_accepted:.17g}"
            f" bracket_end={esc.time_bracket_end:.17g}"
        )
    else:
        lines.append("# escape: none")
    path = str(path)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    summary = {
        "samples": int(trace.times.size),
        "t_final": float(trace.times[-1]),
        "final_error": float(trace.e[-1]),
        "max_abs_error": float(np.max(np.abs(trace.e))),
        "escape": trace.escape.as_dict() if trace.escape else None,
        "meta": trace.meta,
    }
    with open(path.rsplit(".", 1)[0] + ".summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_long_form_csv(traces, path) -> None:
    """Plot-ready long-form CSV (series, t, value) for y, e, u per trace."""
    lines = ["series,t,value"]
    for idx, trace in enumerate(traces):
        for name, arr in (("y", trace.y), ("e", trace.e), ("u", trace.u)):
            series = f"trace{idx:03d}.{name}"
            for t, v in zip(trace.times, arr):
                lines.append(f"{series},{t:.17g},{v:.17g}")
    with open(str(path), "w") as fh:
        fh.write("\n".join(lines) + "\n")
