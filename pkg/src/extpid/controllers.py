"""Extended PID law, high-gain differential observer, and the observer
certificate constants.

The control law is u = k_1 e + k_0 int(e) + sum_{i>=2} k_i e^(i-1), fed with
true error derivatives (state-derivative feedback) or with the observer
estimates zhat_2..zhat_n.  The observer is the epsilon-scaled linear chain

    d zhat_i = zhat_{i+1} + beta_i / eps^i * (e - zhat_1),  i < n
    d zhat_n = beta_n / eps^n * (e - zhat_1),

Hurwitz in the scaled coordinates.  Certificate constants (Q, c1, c2,
epsilon*, decay rate) quantify how small eps must be for the combined
quadratic function to keep decaying.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import (
    ArityError,
    InvalidBoundsError,
    NoPositiveDefiniteSolutionError,
)
from .gain_manifold import GainVector, LambdaVector, UncertaintyBounds, compute_alpha

__all__ = [
    "STATE_DERIVATIVE_FEEDBACK",
    "OBSERVER_BASED",
    "ControllerState",
    "ObserverConfig",
    "ObserverCertificate",
    "pid_control",
    "hurwitz_beta",
    "companion_from_beta",
    "observer_derivative",
    "observer_pid_control",
    "solve_lyapunov_Q",
    "epsilon_star",
    "observer_decay_rate",
]

STATE_DERIVATIVE_FEEDBACK = "state_derivative_feedback"
OBSERVER_BASED = "observer_based"


@dataclass(frozen=True)
class ControllerState:
    """Value threaded through the integrator; the integral starts at 0 and is
    integrated as part of the augmented ODE, never accumulated here."""

    integral: float
    mode: str
    gains: GainVector

    def with_integral(self, integral: float) -> "ControllerState":
        return replace(self, integral=integral)


def pid_control(state: ControllerState, e: float, e_derivs) -> float:
    """u = k_1 e + k_0 integral + sum_{i=2..n} k_i e^(i-1).

    ``e_derivs`` holds (e', ..., e^(n-1)); for a relative-degree-n plant
    these equal -z_2, ..., -z_n.
    """
    if state.mode != STATE_DERIVATIVE_FEEDBACK:
        raise ArityError(f"pid_control requires mode {STATE_DERIVATIVE_FEEDBACK!r}")
    k = state.gains.array
    d = np.atleast_1d(np.asarray(e_derivs, dtype=float))
    if d.shape[-1] != state.gains.n - 1:
        raise ArityError(
            f"expected {state.gains.n - 1} error derivatives, got {d.shape[-1]}"
        )
    u = k[1] * e + k[0] * state.integral
    if state.gains.n >= 2:
        u = u + (k[2:] * d).sum(axis=-1)
    return u


def hurwitz_beta(n: int) -> tuple:
    """Binomial observer coefficients: s^n + beta_1 s^(n-1) + ... + beta_n
    = (s + 1)^n, all roots at -1."""
    if n < 1:
        raise ValueError("order must be >= 1")
    return tuple(float(math.comb(n, i)) for i in range(1, n + 1))


def companion_from_beta(beta) -> np.ndarray:
    """Matrix with -beta in the first column and an upper shift, whose
    characteristic polynomial is s^n + beta_1 s^(n-1) + ... + beta_n."""
    beta = np.asarray(beta, dtype=float)
    n = beta.size
    B = np.zeros((n, n))
    B[:, 0] = -beta
    B[: n - 1, 1:] = np.eye(n - 1)
    return B


def _is_hurwitz(B: np.ndarray) -> bool:
    return bool(np.all(np.linalg.eigvals(B).real < 0.0))


@dataclass(frozen=True)
class ObserverConfig:
    """Observer coefficients beta, gain eps > 0, and initial state.

    ``zhat0 = None`` selects the default (e(0), 0, ..., 0), which removes the
    largest peaking term from the zhat_1 mismatch.
    """

    beta: tuple
    epsilon: float
    zhat0: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        if self.epsilon <= 0.0:
            raise InvalidBoundsError(f"observer gain must be positive, got {self.epsilon}")
        if not _is_hurwitz(companion_from_beta(self.beta)):
            raise InvalidBoundsError(f"beta {self.beta} is not Hurwitz")
        if self.zhat0 is not None:
            z0 = tuple(float(v) for v in self.zhat0)
            if len(z0) != len(self.beta):
                raise ArityError("zhat0 length must match beta length")
            object.__setattr__(self, "zhat0", z0)

    @property
    def n(self) -> int:
        return len(self.beta)

    def initial_state(self, e0: float) -> np.ndarray:
        if self.zhat0 is not None:
            return np.asarray(self.zhat0, dtype=float)
        z0 = np.zeros(self.n)
        z0[0] = e0
        return z0


def observer_derivative(cfg: ObserverConfig, zhat, e):
    """Right-hand side of the observer chain driven by the innovation
    e - zhat_1."""
    if cfg.epsilon <= 0.0:
        raise InvalidBoundsError("observer gain must be positive")
    zhat = np.asarray(zhat, dtype=float)
    if zhat.shape[-1] != cfg.n:
        raise ArityError(f"expected observer state of length {cfg.n}")
    innov = e - zhat[..., 0]
    out = np.empty_like(zhat)
    for i in range(cfg.n - 1):
        out[..., i] = zhat[..., i + 1] + cfg.beta[i] / cfg.epsilon ** (i + 1) * innov
    out[..., cfg.n - 1] = cfg.beta[-1] / cfg.epsilon**cfg.n * innov
    return out


def observer_pid_control(state: ControllerState, e: float, zhat) -> float:
    """u = k_1 e + k_0 integral + sum_{i=2..n} k_i zhat_i (zhat_1 unused)."""
    if state.mode != OBSERVER_BASED:
        raise ArityError(f"observer_pid_control requires mode {OBSERVER_BASED!r}")
    k = state.gains.array
    zhat = np.asarray(zhat, dtype=float)
    if zhat.shape[-1] != state.gains.n:
        raise ArityError(f"expected observer state of length {state.gains.n}")
    u = k[1] * e + k[0] * state.integral
    if state.gains.n >= 2:
        u = u + (k[2:] * zhat[..., 1:]).sum(axis=-1)
    return u


@dataclass(frozen=True)
class ObserverCertificate:
    """Q solves B^T Q + Q B = -I; c1/c2/epsilon_star/beta_rate quantify the
    certified decay of the combined quadratic function (filled in by
    :func:`epsilon_star`)."""

    Q: np.ndarray
    c1: Optional[float] = None
    c2: Optional[float] = None
    epsilon_star: Optional[float] = None
    beta_rate: Optional[float] = None

    @property
    def lam_max(self) -> float:
        return float(np.linalg.eigvalsh(self.Q)[-1])

    @property
    def lam_min(self) -> float:
        return float(np.linalg.eigvalsh(self.Q)[0])


def solve_lyapunov_Q(beta) -> ObserverCertificate:
    """Solve B^T Q + Q B = -I by stacking the matrix equation; the solution
    is symmetrized exactly and must be positive definite (all leading
    principal minors > 0)."""
    B = companion_from_beta(beta)
    if not _is_hurwitz(B):
        raise NoPositiveDefiniteSolutionError(
            f"beta {tuple(beta)} is not Hurwitz; no positive definite solution"
        )
    n = B.shape[0]
    eye = np.eye(n)
    lhs = np.kron(eye, B.T) + np.kron(B.T, eye)
    q = np.linalg.solve(lhs, -eye.ravel())
    Q = q.reshape(n, n)
    Q = 0.5 * (Q + Q.T)
    for k in range(1, n + 1):
        if np.linalg.det(Q[:k, :k]) <= 0.0:
            raise NoPositiveDefiniteSolutionError("solution is not positive definite")
    resid = np.linalg.norm(B.T @ Q + Q @ B + eye)
    if resid > 1e-9:
        raise NoPositiveDefiniteSolutionError(f"residual too large: {resid:g}")
    return ObserverCertificate(Q=Q)


def observer_decay_rate(
    alpha: float, c1: float, c2: float, Q: np.ndarray, epsilon: float
) -> float:
    """Largest rate beta with combined-function derivative <= -2 beta V0 at
    the given eps: the 2x2 form [[alpha, -c1/2], [-c1/2, 1/eps - c2]] weighted
    by max(1/2, lam_max(Q))."""
    lam_max = float(np.linalg.eigvalsh(Q)[-1])
    form = np.array([[alpha, -c1 / 2.0], [-c1 / 2.0, 1.0 / epsilon - c2]])
    lam_min_form = float(np.linalg.eigvalsh(form)[0])
    if lam_min_form <= 0.0:
        raise InvalidBoundsError(
            f"eps = {epsilon:g} is not certified (combined form not negative definite)"
        )
    return lam_min_form / (2.0 * max(0.5, lam_max))


def epsilon_star(
    lam,
    gains: GainVector,
    bounds: UncertaintyBounds,
    c: float,
    cert: ObserverCertificate,
) -> tuple:
    """Observer gain threshold eps* = 1 / (c2 + c1^2 / (2 alpha)) with

        c1 = sqrt(n) b_high c max(k_2..k_n)
             + 2 lam_max(Q) (L c + b_high sqrt(n+1) lambda_n / b_low)
        c2 = 2 sqrt(n) b_high lam_max(Q) max(k_2..k_n).

    For any eps < eps*, the cross-term form -alpha ||w||^2 + c1 ||w|| ||xi||
    - (1/eps - c2) ||xi||^2 is negative definite.  Returns (eps*, beta_rate)
    with beta_rate evaluated at the auto default eps = 0.9 eps*; use
    :func:`observer_decay_rate` for other eps.  eps* is capped at 1, where
    the scaled-coordinate bounds are valid.
    """
    lv = lam if isinstance(lam, LambdaVector) else LambdaVector(tuple(lam))
    alpha = compute_alpha(lv, bounds, c)  # raises if outside the manifold
    n = lv.n
    lam_max = cert.lam_max
    k = gains.array
    k_max = float(k[2:].max()) if n >= 2 else 0.0
    c1 = math.sqrt(n) * bounds.b_high * c * k_max + 2.0 * lam_max * (
        bounds.L * c + bounds.b_high * math.sqrt(n + 1) * lv.array[-1] / bounds.b_low
    )
    c2 = 2.0 * math.sqrt(n) * bounds.b_high * lam_max * k_max
    eps_star = min(1.0, 1.0 / (c2 + c1 * c1 / (2.0 * alpha)))
    beta_rate = observer_decay_rate(alpha, c1, c2, cert.Q, 0.9 * eps_star)
    return eps_star, beta_rate
