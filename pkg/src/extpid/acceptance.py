"""Acceptance suite: every shipped claim, run end to end with pinned
tolerances.

Each criterion is a self-contained callable returning a CriterionResult;
``verify_suite`` drives them and prints one pass/fail line per criterion.
The ``quick`` level runs the sub-minute algebra/counterexample subset; the
``full`` level runs everything.

Certificate-grade fixtures use tiny nonlinearity amplitudes on purpose: the
certified lambda_n threshold grows like (L c^2)^2 and the conditioning bound
c is large (about 8e2 at order 2, 2e4 at order 3), so amplitudes are chosen
to keep the certified gain window inside the range an explicit integrator
can traverse.  The inequalities being certified are exercised all the same.
Large-amplitude behavior is covered by the empirical convergence criteria.
"""

from __future__ import annotations

import math
import sys
import time
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .analysis import (
    charpoly_residuals,
    check_error_bound,
    fit_rate,
    lyapunov_check,
    omega_monotonicity_check,
    to_w_coordinates,
)
from .controllers import (
    OBSERVER_BASED,
    STATE_DERIVATIVE_FEEDBACK,
    ControllerState,
    ObserverConfig,
    epsilon_star,
    hurwitz_beta,
    companion_from_beta,
    solve_lyapunov_Q,
)
from .errors import ExtPidError
from .gain_manifold import (
    GainVector,
    LambdaVector,
    UncertaintyBounds,
    build_P,
    c0_upper_bound,
    compute_alpha,
    compute_d,
    effective_bounds,
    in_omega1,
    lambda_to_gains,
    omega_lambda_threshold,
    sample_omega,
    semiglobal_bounds,
)
from .plants import PresetParams, derived_bounds, make_preset, slow_saturation
from .simulator import (
    IntegratorPolicy,
    Trace,
    assemble_closed_loop,
    integrate,
    integrate_batch,
)

__all__ = ["CriterionResult", "CRITERIA", "run_criterion", "verify_suite"]


@dataclass
class CriterionResult:
    cid: int
    name: str
    passed: bool
    runtime_s: float
    details: str


# certificate-grade trig fixtures; amplitudes calibrated per order (see
# module docstring), drift/input-gain ripple both nonzero so the
# setpoint-dependent cross term is exercised
_MICRO_AMP = {1: 1e-7, 2: 1e-7, 3: 1e-10}


def micro_normal_form(n: int):
    amp = _MICRO_AMP[n]
    return make_preset(
        PresetParams("normal_form", n=n, amp_a=amp, amp_b=amp, b_center=1.5)
    )


def _ball_states(rng, count: int, radius: float, n: int) -> np.ndarray:
    dirs = rng.normal(size=(count, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return dirs * (radius * rng.uniform(0.0, 1.0, size=count) ** (1.0 / n))[:, None]


def _sample_lambdas(rng, n: int, count: int, lam_n_max: float = 1e3) -> np.ndarray:
    """count tuples uniform in the box, last coordinate log-uniform."""
    lo = 2 * n + 2
    out = np.empty((count, n + 1))
    for i in range(n):
        out[:, i] = rng.uniform(2 * i + 2, 2 * i + 3, size=count)
    out[:, n] = np.exp(rng.uniform(np.log(lo), np.log(lam_n_max), size=count))
    return out


def _traces_from_batch(loop, times, states, policy) -> list:
    traces = []
    y, e, u = loop.outputs(states)
    meta = {
        "plant": loop.plant.name,
        "order": loop.n,
        "mode": loop.controller.mode,
        "y_star": loop.y_star,
        "gains": list(loop.controller.gains.k),
        "policy": {"method": policy.method, "dt": policy.dt, "rtol": policy.rtol,
                   "atol": policy.atol},
        "t_end": float(times[-1]),
    }
    for b in range(states.shape[1]):
        traces.append(
            Trace(
                times=times,
                states=states[:, b, :],
                y=y[:, b],
                e=e[:, b],
                u=u[:, b],
                escape=None,
                meta=dict(meta),
            )
        )
    return traces


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------


def criterion_1() -> CriterionResult:
    """Manifold algebra on 10^3 seeded tuples per order 1..4."""
    worst = {"dsum": 0.0, "dlin": 0.0, "charpoly": 0.0}
    dn_ok = True
    for n in range(1, 5):
        rng = np.random.default_rng(100 + n)
        lams = _sample_lambdas(rng, n, 1000)
        r = np.arange(n + 1)[None, :, None]
        P = (-lams[:, None, :]) ** (r - n)
        diff = lams[:, :, None] - lams[:, None, :]
        idx = np.arange(n + 1)
        diff[:, idx, idx] = 1.0
        d = lams**n / diff.prod(axis=2)
        worst["dsum"] = max(worst["dsum"], float(np.abs(d.sum(axis=1) - 1.0).max()))
        dn = d[:, -1]
        dn_ok &= bool(np.all((dn > 0.0) & (dn < float((2 * n + 2) ** n))))
        e_last = np.zeros(n + 1)
        e_last[-1] = 1.0
        d_lin = np.linalg.solve(P, np.broadcast_to(e_last, (1000, n + 1))[..., None])[
            ..., 0
        ]
        rel = np.linalg.norm(d - d_lin, axis=1) / np.linalg.norm(d_lin, axis=1)
        worst["dlin"] = max(worst["dlin"], float(rel.max()))
        for row in lams[:: max(1, 1000 // 250)]:  # charpoly residual, 250 per order
            lv = LambdaVector(tuple(row))
            g = lambda_to_gains(lv, 1.0)
            worst["charpoly"] = max(worst["charpoly"], charpoly_residuals(g, 1.0, lv))
    passed = (
        worst["dsum"] <= 1e-9
        and dn_ok
        and worst["dlin"] <= 1e-10
        and worst["charpoly"] <= 1e-9
    )
    return CriterionResult(
        1,
        "manifold algebra",
        passed,
        0.0,
        f"worst |sum(d)-1|={worst['dsum']:.3g}, closed-vs-solve rel="
        f"{worst['dlin']:.3g}, charpoly residual={worst['charpoly']:.3g}, "
        f"d_n in (0,(2n+2)^n): {dn_ok}",
    )


def criterion_2() -> CriterionResult:
    """Determinant identity (prod lambda)^n det P = prod_{i<j}(lambda_i - lambda_j)."""
    worst = 0.0
    for n in range(1, 5):
        rng = np.random.default_rng(100 + n)  # same samples as criterion 1
        lams = _sample_lambdas(rng, n, 1000)
        r = np.arange(n + 1)[None, :, None]
        P = (-lams[:, None, :]) ** (r - n)
        lhs = lams.prod(axis=1) ** n * np.linalg.det(P)
        rhs = np.ones(1000)
        for i in range(n + 1):
            for j in range(i + 1, n + 1):
                rhs *= lams[:, i] - lams[:, j]
        worst = max(worst, float(np.max(np.abs(lhs - rhs) / np.abs(rhs))))
    return CriterionResult(
        2, "determinant identity", worst <= 1e-9, 0.0, f"worst relative error={worst:.3g}"
    )


def criterion_3() -> CriterionResult:
    """Double integrator against the matrix-exponential closed form."""
    plant = make_preset(PresetParams("normal_form", n=2, amp_a=0.0, amp_b=0.0, b_center=1.0))
    lam = LambdaVector((2.5, 4.5, 7.0))
    gains = lambda_to_gains(lam, 1.0)
    y_star = 1.0
    loop = assemble_closed_loop(
        plant, ControllerState(0.0, STATE_DERIVATIVE_FEEDBACK, gains), y_star
    )
    trace = integrate(loop, loop.initial_state(np.zeros(2)), 5.0, n_output=1000)
    k = gains.array
    A = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, 1.0], [k[0], -k[1], -k[2]]])
    b = np.array([y_star, 0.0, k[1] * y_star])
    s_eq = np.linalg.solve(A, -b)
    idx = np.linspace(0, trace.times.size - 1, 100).astype(int)
    worst = 0.0
    s0 = trace.states[0]
    for i in idx:
        s_exact = s_eq + expm(A * trace.times[i]) @ (s0 - s_eq)
        worst = max(worst, abs((y_star - s_exact[1]) - trace.e[i]))
    return CriterionResult(
        3, "linear sanity vs expm", worst <= 1e-6, 0.0, f"max |e - e_exact|={worst:.3g}"
    )


def criterion_4() -> CriterionResult:
    """Certified runs on the trig normal-form fixtures, n in {2, 3}:
    no escape, pointwise exponential error bound, quadratic decrease."""
    y_star = 1.0
    msgs = []
    ok = True
    for n in (2, 3):
        plant = micro_normal_form(n)
        bounds = effective_bounds(derived_bounds(plant), y_star)
        c = c0_upper_bound(n)
        pairs = sample_omega(n, bounds, c, seed=40 + n, count=2, window=1.5)
        states = _ball_states(np.random.default_rng(41 + n), 20, 10.0, n)
        policy = IntegratorPolicy()
        for lam, gains in pairs:
            alpha = compute_alpha(lam, bounds, c)
            loop = assemble_closed_loop(
                plant, ControllerState(0.0, STATE_DERIVATIVE_FEEDBACK, gains), y_star
            )
            init = np.stack([loop.initial_state(x) for x in states])
            times, traj, escape = integrate_batch(loop, init, 20.0, policy)
            if escape is not None:
                ok = False
                msgs.append(f"n={n}: unexpected escape {escape.reason}")
                continue
            worst_bound = -np.inf
            worst_lyap = -np.inf
            for trace in _traces_from_batch(loop, times, traj, policy):
                rep_b = check_error_bound(trace, c, alpha, plant, gains, bounds)
                w = to_w_coordinates(trace, lam, gains, plant)
                rep_l = lyapunov_check(w, alpha, tol_abs=1e-6, tol_rel=1e-3)
                ok &= rep_b.passed and rep_l.passed
                worst_bound = max(worst_bound, rep_b.worst_margin)
                worst_lyap = max(worst_lyap, rep_l.worst_margin)
            msgs.append(
                f"n={n} lam_n={lam.lam[-1]:.3g} alpha={alpha:.3g}: "
                f"bound margin {worst_bound:.3g}, decrease margin {worst_lyap:.3g}"
            )
    return CriterionResult(4, "certified normal-form runs", ok, 0.0, "; ".join(msgs))


def criterion_5() -> CriterionResult:
    """Classical PID on the strict- and pure-feedback fixtures: empirical
    convergence from a radius-100 ball."""
    y_star = 1.0
    lam = LambdaVector((2.5, 4.5, 7.0))
    msgs = []
    ok = True
    policy = IntegratorPolicy()
    for kind in ("strict_feedback2", "pure_feedback2"):
        plant = make_preset(PresetParams(kind))
        b_low = derived_bounds(plant).b_low
        gains = lambda_to_gains(lam, b_low)
        loop = assemble_closed_loop(
            plant, ControllerState(0.0, STATE_DERIVATIVE_FEEDBACK, gains), y_star
        )
        states = _ball_states(np.random.default_rng(50), 20, 100.0, 2)
        init = np.stack([loop.initial_state(x) for x in states])
        times, traj, escape = integrate_batch(loop, init, 20.0, policy)
        if escape is not None:
            ok = False
            msgs.append(f"{kind}: unexpected escape")
            continue
        traces = _traces_from_batch(loop, times, traj, policy)
        worst_end = max(abs(t.e[-1]) for t in traces)
        rates = [fit_rate(t) for t in traces]
        rate_ok = all(r is not None and r > 0.0 for r in rates)
        ok &= worst_end <= 1e-6 and rate_ok
        msgs.append(
            f"{kind}: worst |e(20)|={worst_end:.3g}, min alpha_hat="
            f"{min(r for r in rates if r is not None):.3g}"
        )
    return CriterionResult(5, "classical PID convergence", ok, 0.0, "; ".join(msgs))


def criterion_6() -> CriterionResult:
    """Finite escape of the counterexample under classical PID, with the
    running lower bound on the saturating coordinate."""
    eps_unc = 0.1
    plant = make_preset(PresetParams("escape_counterexample", eta=1.0, eps_unc=eps_unc))
    gains = GainVector(2, (1.0, 1.0, 0.0), 1.0)  # (k_i, k_p, k_d) = (1, 1, 0)
    loop = assemble_closed_loop(
        plant, ControllerState(0.0, STATE_DERIVATIVE_FEEDBACK, gains), 0.0
    )
    trace = integrate(loop, loop.initial_state(np.zeros(2)), 0.6, n_output=1000)
    if not trace.escaped:
        return CriterionResult(6, "finite escape", False, 0.0, "no escape detected")
    bracket_end = trace.escape.time_bracket_end
    slack = slow_saturation(trace.states[:, 2], 1.0) - trace.times / (2.0 * eps_unc)
    ok = bracket_end <= 0.44 and float(slack.min()) >= -1e-6
    return CriterionResult(
        6,
        "finite escape",
        ok,
        0.0,
        f"escape reason={trace.escape.reason}, bracket=({trace.escape.time_last_accepted:.4g},"
        f"{bracket_end:.4g}), min running-bound slack={slack.min():.3g}",
    )


# step budget for criterion 7, derived from its 60 s runtime bound at an
# optimistic 1e5 accepted steps per second
_C7_STEP_BUDGET = 6_000_000


def criterion_7() -> CriterionResult:
    """Observer-based runs at the certified gain eps = 0.9 eps*.

    The certified eps* is computed honestly; if the stability-limited step
    count for the three required runs exceeds the criterion's own runtime
    budget, the criterion fails with the blocking analysis.
    """
    y_star = 1.0
    n = 2
    plant = micro_normal_form(n)
    bounds = effective_bounds(derived_bounds(plant), y_star)
    c = c0_upper_bound(n)
    lam = LambdaVector((2.5, 4.5, 7.0))
    assert lam.array[-1] > omega_lambda_threshold(n, bounds, c)
    gains = lambda_to_gains(lam, bounds.b_low)
    beta = (2.0, 1.0)
    cert = solve_lyapunov_Q(beta)
    eps_star, beta_rate = epsilon_star(lam, gains, bounds, c, cert)
    eps = 0.9 * eps_star
    spectral = float(np.abs(np.linalg.eigvals(companion_from_beta(beta))).max())
    h_stab = 2.8 * eps / spectral
    required_steps = int(20.0 / h_stab * (2 + 2))  # two starts at eps, one at eps/2
    if required_steps > _C7_STEP_BUDGET:
        return CriterionResult(
            7,
            "observer certificate runs",
            False,
            0.0,
            f"infeasible at the certified gain: c={c:.4g}, k={tuple(round(v, 3) for v in gains.k)}, "
            f"alpha={compute_alpha(lam, bounds, c):.4g}, eps*={eps_star:.4g}, "
            f"eps=0.9eps*={eps:.4g}; explicit integration needs ~{required_steps:.3g} "
            f"steps (stability limit {h_stab:.3g}s/step) vs budget {_C7_STEP_BUDGET:.2g} "
            f"derived from the 60 s criterion bound. The conditioning constant c enters "
            f"eps* quadratically through c1 ~ sqrt(n) b c max(k), so no admissible "
            f"fixture brings eps* into integrable range at order 2.",
        )
    # feasible: run the stated checks
    details = []
    ok = True
    for zhat0 in (None, tuple([0.0] * n)):
        obs = ObserverConfig(beta=beta, epsilon=eps, zhat0=zhat0)
        loop = assemble_closed_loop(
            plant, ControllerState(0.0, OBSERVER_BASED, gains), y_star, obs
        )
        trace = integrate(loop, loop.initial_state(np.array([2.0, -1.0])), 20.0)
        ok &= not trace.escaped and abs(trace.e[-1]) <= 1e-5
        ok &= _xi_envelope_ok(trace, plant, lam, gains, c, cert, beta_rate, eps)
        details.append(f"zhat0={zhat0}: |e(20)|={abs(trace.e[-1]):.3g}")
    obs = ObserverConfig(beta=beta, epsilon=eps / 2.0)
    loop = assemble_closed_loop(
        plant, ControllerState(0.0, OBSERVER_BASED, gains), y_star, obs
    )
    trace = integrate(loop, loop.initial_state(np.array([2.0, -1.0])), 20.0)
    ok &= not trace.escaped and abs(trace.e[-1]) <= 1e-5
    details.append(f"halved eps: |e(20)|={abs(trace.e[-1]):.3g}")
    return CriterionResult(7, "observer certificate runs", ok, 0.0, "; ".join(details))


def _xi_envelope_ok(trace, plant, lam, gains, c, cert, beta_rate, eps) -> bool:
    """Pointwise check of the scaled observer-error envelope bound."""
    w = to_w_coordinates(trace, lam, gains, plant)
    n = plant.n
    zhat = trace.states[:, 1 + n :]
    powers = eps ** (n - np.arange(1, n + 1))
    xi = (w.ybar[:, 1:] + zhat) / powers[None, :]
    xi_norm = np.linalg.norm(xi, axis=1)
    y0 = np.linalg.norm(w.ybar[0])
    rhs = (
        (c * y0 + math.sqrt(cert.lam_max) * xi_norm[0])
        * np.exp(-beta_rate * trace.times)
        / math.sqrt(cert.lam_min)
    )
    return bool(np.all(xi_norm <= rhs * (1.0 + 1e-9) + 1e-12))


def criterion_8() -> CriterionResult:
    """Semi-global constants: hand-checked (L0, b0) and stabilization of the
    normal-form presets from the radius-1 ball with gains above the
    resulting threshold (illustrative conditioning constant c = 5)."""
    c = 5.0
    tau_bounds = UncertaintyBounds(
        L=1.0, b_low=1.0, b_high=1.0, tau1=lambda r: r + 2.0, tau2=lambda r: r
    )
    L0, b0 = semiglobal_bounds(1.0, 0.0, tau_bounds, c)
    hand_ok = abs(L0 - 3.0) <= 1e-12 and abs(b0 - 27.0) <= 1e-12
    semi = UncertaintyBounds(L=L0, b_low=1.0, b_high=b0)
    thr = omega_lambda_threshold(2, semi, c)
    msgs = [f"L0={L0:.6g}, b0={b0:.6g}, threshold={thr:.6g}"]
    ok = hand_ok
    for n in (1, 2):
        plant = micro_normal_form(n)
        (lam, gains), = sample_omega(n, semi, c, seed=80 + n, count=1, window=1.05)
        dt = 2.5 / lam.array[-1]  # explicit stability limit for the fast mode
        policy = IntegratorPolicy(method="rk4", dt=dt)
        loop = assemble_closed_loop(
            plant, ControllerState(0.0, STATE_DERIVATIVE_FEEDBACK, gains), 0.0
        )
        states = _ball_states(np.random.default_rng(81 + n), 3, 1.0, n)
        init = np.stack([loop.initial_state(x) for x in states])
        times, traj, escape = integrate_batch(loop, init, 8.0, policy, n_output=400)
        if escape is not None:
            ok = False
            msgs.append(f"n={n}: unexpected escape")
            continue
        _, e, _ = loop.outputs(traj)
        worst = float(np.abs(e[-1]).max())
        ok &= worst <= 1e-4
        msgs.append(f"n={n} lam_n={lam.lam[-1]:.4g}: worst |e(8)|={worst:.3g}")
    return CriterionResult(8, "semi-global constants", ok, 0.0, "; ".join(msgs))


def criterion_9() -> CriterionResult:
    """Manifold monotonicity in (L, b_high), plus a witness when reversed."""
    strong = UncertaintyBounds(L=1.0, b_low=1.0, b_high=2.0)
    weak = UncertaintyBounds(L=0.5, b_low=1.0, b_high=1.0)
    contained, _ = omega_monotonicity_check(2, strong, weak, c=5.0, count=1000, seed=90)
    reversed_contained, witness = omega_monotonicity_check(
        2, weak, strong, c=5.0, count=1000, seed=91
    )
    ok = contained and not reversed_contained and witness is not None
    wit = f"lambda_n={witness.lam[-1]:.4g}" if witness is not None else "none found"
    return CriterionResult(
        9,
        "manifold monotonicity",
        ok,
        0.0,
        f"contained={contained}; reversed-roles witness: {wit}",
    )


def criterion_10() -> CriterionResult:
    """Lyapunov-equation solver residual and quadrature cross-check."""
    worst_resid = 0.0
    worst_quad = 0.0
    for n in range(1, 5):
        beta = hurwitz_beta(n)
        cert = solve_lyapunov_Q(beta)
        B = companion_from_beta(beta)
        worst_resid = max(
            worst_resid, float(np.linalg.norm(B.T @ cert.Q + cert.Q @ B + np.eye(n)))
        )
        ts = np.linspace(0.0, 40.0, 2001)  # composite Simpson, smooth decaying integrand
        vals = np.empty((ts.size, n, n))
        for i, t in enumerate(ts):
            E = expm(B * t)
            vals[i] = E.T @ E
        h = ts[1] - ts[0]
        weights = np.ones(ts.size)
        weights[1:-1:2] = 4.0
        weights[2:-1:2] = 2.0
        Q_quad = h / 3.0 * np.tensordot(weights, vals, axes=1)
        worst_quad = max(worst_quad, float(np.linalg.norm(cert.Q - Q_quad)))
    ok = worst_resid <= 1e-10 and worst_quad <= 1e-6
    return CriterionResult(
        10,
        "Lyapunov equation solver",
        ok,
        0.0,
        f"worst residual={worst_resid:.3g}, worst quadrature gap={worst_quad:.3g}",
    )


CRITERIA = {
    1: criterion_1,
    2: criterion_2,
    3: criterion_3,
    4: criterion_4,
    5: criterion_5,
    6: criterion_6,
    7: criterion_7,
    8: criterion_8,
    9: criterion_9,
    10: criterion_10,
}

_QUICK = (1, 2, 3, 6, 9, 10)


def run_criterion(cid: int) -> CriterionResult:
    start = time.perf_counter()
    try:
        result = CRITERIA[cid]()
    except ExtPidError as exc:  # a raised error is a failed criterion
        result = CriterionResult(cid, CRITERIA[cid].__name__, False, 0.0, f"error: {exc}")
    result.runtime_s = time.perf_counter() - start
    return result


def verify_suite(level: str = "quick", stream=None) -> int:
    """Run the acceptance criteria; prints one line per criterion and
    returns a nonzero exit status on any failure."""
    if level not in ("quick", "full"):
        raise ValueError(f"unknown level {level!r}")
    stream = stream or sys.stdout
    cids = _QUICK if level == "quick" else tuple(sorted(CRITERIA))
    failures = 0
    for cid in cids:
        res = run_criterion(cid)
        failures += 0 if res.passed else 1
        stream.write(
            f"[{'PASS' if res.passed else 'FAIL'}] criterion {res.cid:2d} "
            f"({res.runtime_s:6.2f}s) {res.name}: {res.details}\n"
        )
    stream.write(
        f"{'all criteria passed' if failures == 0 else f'{failures} criteria failed'}"
        f" at level {level}\n"
    )
    return 0 if failures == 0 else 1
