"""Stabilizing gain manifold for extended PID control.

An order-n plant is stabilized by n+2 gains (k_0, ..., k_n) obtained from an
eigenvalue tuple lambda = (lambda_0, ..., lambda_n) through Vieta's formulas:

    k_i = e_{n+1-i}(lambda) / b_low,

so that s^{n+1} + sum_i b_low * k_i * s^i = prod_i (s + lambda_i).  The tuple
ranges over the open unbounded box

    Omega_1 = { 2 < lambda_i - 2i < 3  (i < n),  lambda_n > 2n + 2 },

further restricted by a lower bound on lambda_n that depends on the model
uncertainty (Lipschitz constant L, input-gain envelope [b_low, b_high]) and on
a conditioning constant c.  This module constructs the diagonalizing matrix P,
its inverse's last column d, certified upper bounds for the conditioning
constants, the lambda_n threshold, manifold samplers, and the certified
quadratic-decay rate alpha.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .errors import (
    CertificateUnavailableError,
    DuplicateEigenvalueError,
    InvalidBoundsError,
    SemiGlobalUnsupportedError,
)

__all__ = [
    "LambdaVector",
    "GainVector",
    "ManifoldConstants",
    "UncertaintyBounds",
    "in_omega1",
    "build_P",
    "compute_d",
    "det_lower_bound",
    "c0_upper_bound",
    "manifold_constants",
    "lambda_to_gains",
    "omega_lambda_threshold",
    "sample_omega",
    "compute_alpha",
    "effective_bounds",
    "semiglobal_bounds",
]

_DUPLICATE_RTOL = 1e-9


@dataclass(frozen=True)
class LambdaVector:
    """An (n+1)-tuple of strictly positive, pairwise distinct eigenvalue
    parameters.  ``n`` is the plant order; the closed loop places its poles
    at -lambda_i."""

    lam: tuple

    def __post_init__(self):
        lam = tuple(float(v) for v in self.lam)
        object.__setattr__(self, "lam", lam)
        if len(lam) < 2:
            raise ValueError("need at least two entries (order n >= 1)")
        if any(v <= 0.0 for v in lam):
            raise ValueError(f"entries must be strictly positive, got {lam}")
        arr = np.asarray(lam)
        diff = np.abs(arr[:, None] - arr[None, :])
        scale = np.maximum(arr[:, None], arr[None, :])
        np.fill_diagonal(diff, np.inf)
        if np.any(diff <= _DUPLICATE_RTOL * scale):
            raise DuplicateEigenvalueError(f"coincident entries in {lam}")

    @property
    def n(self) -> int:
        return len(self.lam) - 1

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.lam, dtype=float)


@dataclass(frozen=True)
class GainVector:
    """Extended PID gains (k_0, ..., k_n).

    k_0 multiplies the error integral, k_1 the error, and k_{i+1} the i-th
    error derivative.  For n = 2 this is the classical PID triple in the
    order (k_i, k_p, k_d).  ``b_low`` records the input-gain floor used in
    the lambda -> k map.  Serializes as the flat list k_0..k_n.
    """

    n: int
    k: tuple
    b_low: float

    def __post_init__(self):
        object.__setattr__(self, "k", tuple(float(v) for v in self.k))
        if len(self.k) != self.n + 1:
            raise ValueError(f"expected {self.n + 1} gains, got {len(self.k)}")

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.k, dtype=float)

    @property
    def k0(self) -> float:
        return self.k[0]


@dataclass(frozen=True)
class UncertaintyBounds:
    """Model-uncertainty description used for gain selection.

    ``L`` bounds the gap growth ||H(x) - H(x*)|| <= L ||Phi(x) - Phi(x*)||
    of the pair H = (F, G); ``b_low``/``b_high`` sandwich the input gain G.
    The optional increasing envelopes satisfy ||Phi(x)|| <= tau1(||x||),
    ||H(x)|| <= tau1(||Phi(x)||) and ||H(x) - H(x*)|| <= tau2(||Phi - Phi*||)
    with limsup_{rho->0} tau2(rho)/rho finite.  ``M`` optionally bounds the
    drift magnitude at the target fiber (|F(x*)| <= M + L |y*|).
    """

    L: float
    b_low: float
    b_high: float
    tau1: Optional[Callable[[float], float]] = None
    tau2: Optional[Callable[[float], float]] = None
    M: Optional[float] = None

    def __post_init__(self):
        if not (0.0 < self.b_low <= self.b_high):
            raise InvalidBoundsError(
                f"need 0 < b_low <= b_high, got ({self.b_low}, {self.b_high})"
            )
        if self.L < 0.0:
            raise InvalidBoundsError(f"need L >= 0, got {self.L}")

    def validate_envelopes(self, probe_radius: float = 10.0) -> None:
        """Spot-check monotonicity of tau1/tau2 and finiteness of
        limsup tau2(rho)/rho on a decreasing sample sequence."""
        for name, fn in (("tau1", self.tau1), ("tau2", self.tau2)):
            if fn is None:
                continue
            pts = np.linspace(0.0, probe_radius, 64)
            vals = np.array([fn(float(p)) for p in pts])
            if np.any(np.diff(vals) < -1e-12 * (1.0 + np.abs(vals[:-1]))):
                raise InvalidBoundsError(f"{name} is not nondecreasing")
        if self.tau2 is not None:
            rhos = probe_radius * 2.0 ** -np.arange(4, 40)
            ratios = np.array([self.tau2(float(r)) / r for r in rhos])
            if not np.all(np.isfinite(ratios)) or ratios.max() > 1e12:
                raise InvalidBoundsError("tau2(rho)/rho appears unbounded as rho -> 0")

    def f_star_bound(self, y_star: float) -> float:
        """Certified bound on |F(x*)| for the setpoint ``y_star``."""
        if self.tau1 is not None:
            return float(self.tau1(abs(y_star)))
        if self.M is not None:
            return float(self.M + self.L * abs(y_star))
        raise InvalidBoundsError(
            "bounding |F(x*)| needs tau1 or M in the uncertainty bounds"
        )


@dataclass(frozen=True)
class ManifoldConstants:
    """Per-tuple diagonalization data plus per-order certified constants.

    ``P`` has column j equal to ((-lambda_j)^-n, ..., (-lambda_j)^-1, 1)^T;
    ``d`` is the last column of P^-1; ``c0_upper`` dominates the four
    conditioning suprema over Omega_1; ``det_lower`` is a certified positive
    lower bound on |det P| over Omega_1 (depends on n only).
    """

    P: np.ndarray
    d: np.ndarray
    c0_upper: float
    det_lower: float


def in_omega1(lam: LambdaVector) -> bool:
    """Membership predicate for the open box Omega_1 (strict inequalities)."""
    arr = lam.array
    n = lam.n
    i = np.arange(n)
    box = np.all((arr[:n] - 2 * i > 2.0) & (arr[:n] - 2 * i < 3.0))
    return bool(box and arr[n] > 2 * n + 2)


def _as_array(lam) -> np.ndarray:
    if isinstance(lam, LambdaVector):
        return lam.array
    return LambdaVector(tuple(lam)).array  # runs validation


def build_P(lam) -> np.ndarray:
    """Diagonalizing matrix: P[r, j] = (-lambda_j)^(r-n), r = 0..n.

    The last row is all ones; columns are geometric in -1/lambda_j, so P is a
    (flipped, scaled) Vandermonde matrix and is invertible for pairwise
    distinct entries.
    """
    arr = _as_array(lam)
    n = arr.size - 1
    r = np.arange(n + 1)[:, None]
    return (-arr[None, :]) ** (r - n)


def compute_d(lam) -> np.ndarray:
    """Last column of P^-1 in closed form: d_i = lambda_i^n / prod_{j != i}
    (lambda_i - lambda_j).  Agrees with solving P d = e_last to 1e-10
    relative (see tests); the entries sum to 1 because the last row of P is
    all ones."""
    arr = _as_array(lam)
    n = arr.size - 1
    diff = arr[:, None] - arr[None, :]
    np.fill_diagonal(diff, 1.0)
    return arr**n / diff.prod(axis=1)


def det_lower_bound(n: int) -> float:
    """Certified positive lower bound on |det P| over Omega_1.

    From the Vandermonde factorization, lambda_n^n (prod_{i<n} lambda_i)^n
    |det P| >= prod_{i<n} (lambda_n - (2i+3)) >= (lambda_n / (2n+2))^n, and
    prod_{i<n} lambda_i < prod_{i<n} (2i+3), giving the closed form below.
    """
    if n < 1:
        raise ValueError("order must be >= 1")
    box_prod = 1.0
    for i in range(n):
        box_prod *= 2 * i + 3
    return float(((2 * n + 2) * box_prod) ** (-n))


def _batch_condition_quantities(L: np.ndarray):
    """The four Omega_1 conditioning quantities, vectorized over a batch of
    eigenvalue tuples L with shape (B, n+1).

    Returns (||P||, ||P|| ||P^-1||, sqrt(n)(2n+1) d_n, max_i (2n+1) n
    lambda_n |d_i|) as arrays of shape (B,).
    """
    B, m = L.shape
    n = m - 1
    r = np.arange(m)[None, :, None]
    P = (-L[:, None, :]) ** (r - n)
    sv = np.linalg.svd(P, compute_uv=False)
    norm_P = sv[:, 0]
    norm_Pinv = 1.0 / sv[:, -1]
    diff = L[:, :, None] - L[:, None, :]
    idx = np.arange(m)
    diff[:, idx, idx] = 1.0
    d = L**n / diff.prod(axis=2)
    q1 = norm_P
    q2 = norm_P * norm_Pinv
    q3 = np.sqrt(n) * (2 * n + 1) * d[:, -1]
    q4 = ((2 * n + 1) * n * L[:, -1:] * np.abs(d[:, :-1])).max(axis=1)
    return q1, q2, q3, q4


# grid resolution and safety factor per order; safety covers the variation of
# the (smooth, well-separated) quantities across one grid cell
_C0_GRID = {1: (201, 201, 1.05), 2: (61, 101, 1.10), 3: (21, 41, 1.15), 4: (11, 25, 1.25)}


@lru_cache(maxsize=None)
def c0_upper_bound(n: int, lam_max: float = 1e6) -> float:
    """Certified upper bound for the conditioning constant c_0 = max of the
    four suprema over Omega_1 (operator norm of P, its condition number, and
    two weighted bounds on the entries of d).

    The box coordinates lambda_0..lambda_{n-1} are compact and gridded up to
    a 1e-6 inset from the boundary (where the suprema are approached); the
    unbounded lambda_n axis is swept on a log grid to the cutoff ``lam_max``.
    Beyond the cutoff, d_n < (lambda_n/(lambda_n-(2n+1)))^n and
    lambda_n |d_i| <= (2n+1)^n lambda_n/(lambda_n-(2n+1)) are monotone
    decreasing in lambda_n, so their tail contribution is evaluated at the
    cutoff; the P-norm quantities shrink entrywise as lambda_n grows.  The
    grid maximum is inflated by a per-order safety factor.  Overestimation is
    harmless: a larger c only raises the lambda_n threshold.
    """
    if n < 1:
        raise ValueError("order must be >= 1")
    box_pts, lamn_pts, safety = _C0_GRID.get(n, (9, 21, 1.5))
    eps = 1e-6
    lo = 2 * n + 2
    axes = [np.linspace(2 * i + 2 + eps, 2 * i + 3 - eps, box_pts) for i in range(n)]
    axes.append(lo + np.logspace(np.log10(eps), np.log10(lam_max - lo), lamn_pts))
    mesh = np.meshgrid(*axes, indexing="ij")
    batch = np.stack([m.ravel() for m in mesh], axis=1)
    best = 0.0
    for chunk in np.array_split(batch, max(1, batch.shape[0] // 200_000)):
        for q in _batch_condition_quantities(chunk):
            best = max(best, float(q.max()))
    tail_ratio = lam_max / (lam_max - (2 * n + 1))
    tail_c3 = np.sqrt(n) * (2 * n + 1) * tail_ratio**n
    tail_c4 = (2 * n + 1) * n * (2 * n + 1) ** n * tail_ratio
    return float(safety * max(best, tail_c3, tail_c4))


def manifold_constants(lam, c0: Optional[float] = None) -> ManifoldConstants:
    """Bundle P, d and the per-order certified constants for one tuple."""
    lv = lam if isinstance(lam, LambdaVector) else LambdaVector(tuple(lam))
    return ManifoldConstants(
        P=build_P(lv),
        d=compute_d(lv),
        c0_upper=float(c0) if c0 is not None else c0_upper_bound(lv.n),
        det_lower=det_lower_bound(lv.n),
    )


def lambda_to_gains(lam, b_low: float) -> GainVector:
    """Map an eigenvalue tuple to gains via elementary symmetric polynomials:
    k_0 = prod(lambda)/b_low, ..., k_n = sum(lambda)/b_low."""
    if b_low <= 0.0:
        raise InvalidBoundsError(f"need b_low > 0, got {b_low}")
    arr = _as_array(lam)
    coeffs = np.poly(-arr)  # monic coefficients of prod (s + lambda_i)
    k = coeffs[::-1][: arr.size] / b_low
    return GainVector(n=arr.size - 1, k=tuple(k), b_low=float(b_low))


def omega_lambda_threshold(n: int, bounds: UncertaintyBounds, c: float) -> float:
    """Strict lower bound on lambda_n.  A tuple in Omega_1 whose last entry
    exceeds max(2n+2, (L c^2 + (b_high-b_low) c / b_low)^2 + L c^2) is in the
    certified manifold for these bounds."""
    m = bounds.L * c * c + (bounds.b_high - bounds.b_low) * c / bounds.b_low
    return float(max(2 * n + 2, m * m + bounds.L * c * c))


def sample_omega(
    n: int,
    bounds: UncertaintyBounds,
    c: float,
    seed: int,
    count: int,
    window: float = 10.0,
) -> list:
    """Deterministically sample ``count`` (LambdaVector, GainVector) pairs.

    Box coordinates are uniform in their Omega_1 intervals; lambda_n is
    log-uniform in (threshold, window * threshold].  The unbounded manifold
    needs a finite sampling window; ``window`` (default 10) is the
    configurable cutoff factor.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    rng = np.random.default_rng(seed)
    thr = omega_lambda_threshold(n, bounds, c)
    out = []
    for _ in range(count):
        coords = [rng.uniform(2 * i + 2, 2 * i + 3) for i in range(n)]
        u = rng.uniform(0.0, 1.0)
        coords.append(thr * window ** (1.0 - u))
        lv = LambdaVector(tuple(coords))
        out.append((lv, lambda_to_gains(lv, bounds.b_low)))
    return out


def compute_alpha(lam, bounds: UncertaintyBounds, c: float) -> float:
    """Certified quadratic decay rate: the smallest eigenvalue of

        [[1, -m], [-m, lambda_n - L c^2]],   m = L c^2 + (b_high-b_low) c / b_low.

    Positive whenever lambda_n > m^2 + L c^2.  Downstream, the decay in the
    original coordinates is ||Ybar(t)|| <= c e^{-alpha t} ||Ybar(0)||.
    """
    lv = lam if isinstance(lam, LambdaVector) else LambdaVector(tuple(lam))
    arr = lv.array
    thr = omega_lambda_threshold(lv.n, bounds, c)
    if not in_omega1(lv) or arr[-1] <= thr:
        raise CertificateUnavailableError(
            f"lambda_n = {arr[-1]:.6g} not above threshold {thr:.6g} "
            f"(or tuple outside the Omega_1 box)"
        )
    m = bounds.L * c * c + (bounds.b_high - bounds.b_low) * c / bounds.b_low
    quad = np.array([[1.0, -m], [-m, arr[-1] - bounds.L * c * c]])
    alpha = float(np.linalg.eigvalsh(quad)[0])
    if alpha <= 0.0:
        raise CertificateUnavailableError("decay-rate form is not positive definite")
    return alpha


def effective_bounds(bounds: UncertaintyBounds, y_star: float) -> UncertaintyBounds:
    """Fold the setpoint-dependent cross term into the Lipschitz constant.

    The drift seen by the closed loop is a_t = F(x) - F(x*) G(x) / G(x*),
    bounded by L (b_low + |F(x*)|) / b_low * ||Phi(x) - Phi(x*)|| when G
    varies.  For a constant input gain (b_low == b_high) the cross term
    vanishes and L is returned unchanged.
    """
    if bounds.b_high == bounds.b_low:
        return bounds
    factor = (bounds.b_low + bounds.f_star_bound(y_star)) / bounds.b_low
    return replace(bounds, L=bounds.L * factor)


def semiglobal_bounds(
    R: float,
    y_star: float,
    bounds: UncertaintyBounds,
    c: float,
    rho_grid: int = 1000,
) -> tuple:
    """Setpoint- and radius-dependent constants (L0, b0) for semi-global gain
    selection from the function-valued envelopes:

        R0 = tau1(R) + |y*| + tau1(|y*|)
        L0 = sup_{0 < rho <= R0} ((tau1(|y*|) + b_low) / b_low) tau2(rho)/rho
        b0 = tau1(c R0 + |y*|)

    The supremum is evaluated on a log grid of rho (tau2 is an opaque user
    function); the rho -> 0 limit is estimated from the three smallest grid
    points.  Feed (L0, b_low, b0) back into ``omega_lambda_threshold``.
    """
    if bounds.tau1 is None or bounds.tau2 is None:
        raise SemiGlobalUnsupportedError("semi-global constants need tau1 and tau2")
    if R < 0.0:
        raise ValueError("R must be >= 0")
    tau1, tau2 = bounds.tau1, bounds.tau2
    R0 = float(tau1(R) + abs(y_star) + tau1(abs(y_star)))
    factor = (tau1(abs(y_star)) + bounds.b_low) / bounds.b_low
    rhos = R0 * np.logspace(-9.0, 0.0, rho_grid)
    ratios = np.array([tau2(float(r)) / r for r in rhos])
    zero_limit = ratios[:3].max()
    L0 = float(factor * max(ratios.max(), zero_limit))
    b0 = float(tau1(c * R0 + abs(y_star)))
    return L0, b0
