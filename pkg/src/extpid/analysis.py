"""Certificate verification on recorded traces.

The closed loop is analyzed in the diagonalizing coordinates: the augmented
output vector Ybar = (y_0, ..., y_n) with y_0 = -int(e) - F(x*)/(k_0 G(x*)),
y_1 = -e and y_{i+1} = z_{i+1} is mapped through P^-1 to wbar, where
V = 0.5 ||wbar||^2 must decay at the certified rate.  This module builds the
w-coordinates, checks the quadratic decrease and the pointwise exponential
error bound, fits an empirical decay rate from the error envelope, and runs
the grid/monotonicity checks on plants and manifolds.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import CertificateUnavailableError, InvalidBoundsError, UnsupportedPlantError
from .gain_manifold import (
    GainVector,
    LambdaVector,
    UncertaintyBounds,
    build_P,
    omega_lambda_threshold,
    sample_omega,
)
from .plants import PlantModel
from .simulator import Trace

__all__ = [
    "WCoordinates",
    "CertificateReport",
    "to_w_coordinates",
    "lyapunov_check",
    "check_error_bound",
    "fit_rate",
    "assumption_grid_check",
    "GridCheckReport",
    "omega_monotonicity_check",
    "charpoly_residuals",
]


@dataclass(frozen=True)
class WCoordinates:
    """Per-sample diagonalized coordinates wbar = P^-1 Ybar."""

    times: np.ndarray
    w: np.ndarray  # (N, n+1)
    ybar: np.ndarray  # (N, n+1)
    reconstruction_residual: float  # max over samples of ||P w - Ybar|| / (1 + ||Ybar||)


@dataclass(frozen=True)
class CertificateReport:
    """Outcome of one certificate check; reproducible from trace + constants."""

    name: str
    passed: bool
    violations: int
    worst_margin: float  # positive means violated by that much
    constants: dict


def to_w_coordinates(
    trace: Trace,
    lam: LambdaVector,
    gains: GainVector,
    plant: PlantModel,
) -> WCoordinates:
    """Assemble Ybar from the trace and map through P^-1.

    The integral state is shifted by the constant -F(x*)/(k_0 G(x*)), with
    x* taken from the plant's known equilibrium preimage of (y*, 0, ..., 0).
    """
    if plant.x_star is None:
        raise UnsupportedPlantError(
            f"plant {plant.name!r} exposes no equilibrium preimage x*"
        )
    y_star = trace.meta["y_star"]
    x_star = plant.x_star(y_star)
    f_star, g_star = plant.fg(np.asarray(x_star, dtype=float))
    shift = float(f_star) / (gains.k0 * float(g_star))
    n = plant.n
    x = trace.states[:, 1 : 1 + n]
    z = plant.phi(x)
    ybar = np.empty((trace.times.size, n + 1))
    ybar[:, 0] = -trace.states[:, 0] - shift
    ybar[:, 1] = -trace.e
    ybar[:, 2:] = z[:, 1:]
    P = build_P(lam)
    w = np.linalg.solve(P, ybar.T).T
    recon = np.linalg.norm(w @ P.T - ybar, axis=1) / (
        1.0 + np.linalg.norm(ybar, axis=1)
    )
    return WCoordinates(
        times=trace.times.copy(),
        w=w,
        ybar=ybar,
        reconstruction_residual=float(recon.max()),
    )


def lyapunov_check(
    w: WCoordinates,
    alpha: float,
    tol_abs: float = 1e-6,
    tol_rel: float = 1e-3,
    min_samples: int = 200,
) -> CertificateReport:
    """Check dV/dt <= -2 alpha V with V = 0.5 ||wbar||^2.

    The derivative is taken by centered differences on the output grid, which
    validates the integrated trajectory end to end rather than the algebra
    alone; tolerances absorb the discretization error.
    """
    if w.times.size < min_samples:
        raise CertificateUnavailableError(
            f"need at least {min_samples} samples, got {w.times.size}"
        )
    V = 0.5 * np.sum(w.w**2, axis=1)
    dV = (V[2:] - V[:-2]) / (w.times[2:] - w.times[:-2])
    margins = dV + 2.0 * alpha * V[1:-1] - tol_abs - tol_rel * V[1:-1]
    violations = int(np.sum(margins > 0.0))
    return CertificateReport(
        name="lyapunov_decrease",
        passed=violations == 0,
        violations=violations,
        worst_margin=float(margins.max()),
        constants={"alpha": alpha, "tol_abs": tol_abs, "tol_rel": tol_rel},
    )


def check_error_bound(
    trace: Trace,
    c: float,
    alpha: float,
    plant: PlantModel,
    gains: GainVector,
    bounds: UncertaintyBounds,
) -> CertificateReport:
    """Pointwise check of the exponential regulation-error bound

        |e(t)| <= c e^{-alpha t} (||Phi(x(0)) - z*|| + tau1(|y*|)/(k_0 b_low))

    with multiplicative slack 1.0 (the bound must hold as stated).
    """
    if bounds.tau1 is None:
        raise InvalidBoundsError("error bound needs the tau1 envelope")
    y_star = trace.meta["y_star"]
    n = plant.n
    z0 = plant.phi(trace.states[0, 1 : 1 + n])
    z_target = np.zeros(n)
    z_target[0] = y_star
    amplitude = float(np.linalg.norm(z0 - z_target)) + bounds.tau1(abs(y_star)) / (
        gains.k0 * bounds.b_low
    )
    rhs = c * np.exp(-alpha * trace.times) * amplitude
    margins = np.abs(trace.e) - rhs
    violations = int(np.sum(margins > 0.0))
    return CertificateReport(
        name="error_bound",
        passed=violations == 0,
        violations=violations,
        worst_margin=float(margins.max()),
        constants={"c": c, "alpha": alpha, "amplitude": amplitude},
    )


def fit_rate(trace: Trace) -> Optional[float]:
    """Fitted exponential decay rate of the error envelope, or None.

    The envelope is the running maximum of |e| over the remaining horizon
    (|e| oscillates through zero, so a raw log fit is undefined); the rate is
    the least-squares slope of its log over the last half of the horizon.
    Returns None (fit unavailable) for escaping or non-decaying traces.
    """
    if trace.escaped:
        return None
    env = np.maximum.accumulate(np.abs(trace.e)[::-1])[::-1]
    half = trace.times.size // 2
    t_fit, env_fit = trace.times[half:], env[half:]
    mask = env_fit > 0.0
    if mask.sum() < 10:
        return None
    if env_fit[mask][-1] >= abs(trace.e[0]) > 0.0:
        return None  # |e| never got below its initial value
    a = np.column_stack([t_fit[mask], np.ones(int(mask.sum()))])
    slope = np.linalg.lstsq(a, np.log(env_fit[mask]), rcond=None)[0][0]
    if not np.isfinite(slope):
        return None
    return float(-slope)


@dataclass(frozen=True)
class GridCheckReport:
    min_input_gain: float
    max_gap_ratio: float
    max_envelope_ratio: Optional[float]
    passed: bool
    points: int


def assumption_grid_check(
    plant: PlantModel,
    bounds: UncertaintyBounds,
    region: float = 50.0,
    grid_size: int = 10_000,
    y_star: float = 0.0,
) -> GridCheckReport:
    """Desk-scale stand-in for the all-of-state-space conditions.

    On a centered mesh with about ``grid_size`` points and half-width
    ``region``: the worst input gain min G, the worst gap ratio
    ||H(x) - H(x*)|| / ||Phi(x) - Phi(x*)|| (excluding points within 1e-6 of
    the target fiber), and the worst envelope ratio ||H|| / tau1(||Phi||).
    Passes iff min G >= b_low, gap ratio <= L, envelope ratio <= 1.
    """
    if plant.x_star is None:
        raise UnsupportedPlantError("grid check needs the equilibrium preimage x*")
    n = plant.n
    per_axis = max(2, int(round(grid_size ** (1.0 / n))))
    axes = [np.linspace(-region, region, per_axis) for _ in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    x_star = np.asarray(plant.x_star(y_star), dtype=float)
    F, G = plant.fg(pts)
    z = plant.phi(pts)
    F_star, G_star = plant.fg(x_star)
    z_star = plant.phi(x_star)
    gap_H = np.hypot(F - float(F_star), G - float(G_star))
    gap_phi = np.linalg.norm(z - z_star, axis=-1)
    keep = gap_phi > 1e-6
    ratios = gap_H[keep] / gap_phi[keep]
    max_gap = float(ratios.max()) if ratios.size else 0.0
    min_gain = float(G.min())
    env = None
    if bounds.tau1 is not None:
        norm_H = np.hypot(F, G)
        tau_vals = np.array([bounds.tau1(v) for v in np.linalg.norm(z, axis=-1)])
        env = float((norm_H / tau_vals).max())
    tol = 1e-12
    passed = (
        min_gain >= bounds.b_low * (1.0 - tol)
        and max_gap <= bounds.L * (1.0 + tol) + tol
        and (env is None or env <= 1.0 + tol)
    )
    return GridCheckReport(
        min_input_gain=min_gain,
        max_gap_ratio=max_gap,
        max_envelope_ratio=env,
        passed=bool(passed),
        points=pts.shape[0],
    )


def omega_monotonicity_check(
    n: int,
    bounds_strong: UncertaintyBounds,
    bounds_weak: UncertaintyBounds,
    c: float,
    count: int = 1000,
    seed: int = 0,
):
    """Containment of the stronger-uncertainty manifold in the weaker one.

    Samples from the manifold of ``bounds_strong`` and checks each against
    the threshold of ``bounds_weak``.  Returns (contained, witness) where the
    witness is the first sampled tuple that falls outside (None if
    contained).  Requires matching b_low.
    """
    if bounds_strong.b_low != bounds_weak.b_low:
        raise InvalidBoundsError("manifold comparison requires matching b_low")
    thr_weak = omega_lambda_threshold(n, bounds_weak, c)
    for lv, _ in sample_omega(n, bounds_strong, c, seed=seed, count=count):
        if lv.array[-1] <= thr_weak:
            return False, lv
    return True, None


def charpoly_residuals(gains: GainVector, b_low: float, lam: LambdaVector) -> float:
    """Scaled residuals of the closed-loop characteristic polynomial at the
    prescribed roots: max_i |p(-lambda_i)| / (1 + lambda_i^{n+1}) for
    p(s) = s^{n+1} + sum b_low k_i s^i.

    Also asserts the similarity A P = P diag(-lambda) for the companion
    matrix A with last row (-b_low k_0, ..., -b_low k_n), to within
    1e-8 ||A|| ||P||.
    """
    arr = lam.array
    n = lam.n
    coeffs = np.concatenate(([1.0], b_low * gains.array[::-1]))  # descending powers
    vals = np.polyval(coeffs, -arr)
    residual = float(np.max(np.abs(vals) / (1.0 + arr ** (n + 1))))
    A = np.zeros((n + 1, n + 1))
    A[:-1, 1:] = np.eye(n)
    A[-1, :] = -b_low * gains.array
    P = build_P(lam)
    mismatch = np.linalg.norm(A @ P - P @ np.diag(-arr))
    limit = 1e-8 * np.linalg.norm(A) * np.linalg.norm(P)
    if mismatch > limit:
        raise CertificateUnavailableError(
            f"companion similarity residual {mismatch:g} exceeds {limit:g}"
        )
    return residual
