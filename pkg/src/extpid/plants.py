"""Evaluable SISO affine nonlinear plants and benchmark presets.

Every plant exposes the pieces the rest of the pipeline needs: the vector
field (x, u) -> xdot, the output map, the coordinate map Phi (first component
equal to the output), and the pair H = (F, G) where F is the n-th output
drift and G the input gain in the chained coordinates.  Presets additionally
carry certified uncertainty bounds derived from amplitude arithmetic, a known
equilibrium preimage x*(y*), and a record of which structural assumptions
hold.

All callables broadcast over leading axes (state is the last axis), so a
batch of states can be evaluated in one call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .errors import BoundsUnknownError, EvaluationError, PlantConstructionError
from .gain_manifold import UncertaintyBounds

__all__ = [
    "PlantModel",
    "PresetParams",
    "make_preset",
    "eval_plant",
    "derived_bounds",
    "slow_saturation",
    "slow_saturation_deriv",
]


@dataclass(frozen=True)
class PresetParams:
    """Numeric knobs for the benchmark presets.

    kind == "normal_form":      order ``n``, drift amplitude ``amp_a``,
                                input-gain ripple ``amp_b`` around ``b_center``
    kind == "strict_feedback2": second-stage amplitude ``amp``
    kind == "pure_feedback2":   fixed trigonometric instance (no knobs)
    kind == "escape_counterexample": slope decay exponent ``eta`` and
                                unknown scale ``eps_unc`` in (0, 1]
    """

    kind: str
    n: int = 2
    amp_a: float = 1.0
    amp_b: float = 0.4
    b_center: float = 1.5
    amp: float = 0.5
    eta: float = 1.0
    eps_unc: float = 0.1


@dataclass(frozen=True)
class PlantModel:
    """Immutable evaluable plant; all members are pure functions."""

    n: int
    name: str
    dynamics: Callable  # (x, u) -> xdot
    output: Callable  # x -> y
    phi: Callable  # x -> z, z[..., 0] == output(x)
    fg: Callable  # x -> (F, G)
    assumption_status: dict = field(default_factory=dict)
    x_star: Optional[Callable] = None  # y* -> state with Phi(x*) = (y*, 0, ...)
    preset: Optional[PresetParams] = None
    bounds_factory: Optional[Callable] = None


def eval_plant(plant: PlantModel, x, u):
    """Evaluate everything at (x, u): returns (xdot, y, z, F, G)."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise EvaluationError(f"non-finite state {x!r}")
    F, G = plant.fg(x)
    return plant.dynamics(x, u), plant.output(x), plant.phi(x), F, G


def derived_bounds(plant: PlantModel) -> UncertaintyBounds:
    """Certified uncertainty bounds for a preset plant.

    Opaque user plants raise; callers must supply bounds themselves.
    """
    if plant.bounds_factory is None:
        raise BoundsUnknownError(f"plant {plant.name!r} has no derivable bounds")
    return plant.bounds_factory()


# ---------------------------------------------------------------------------
# slowly saturating odd shape used by the escape counterexample
# ---------------------------------------------------------------------------

_E = math.e


def _cubic_coeffs(eta: float):
    # odd cubic p(x) = a x + b x^3 matching value 1 and slope eta/e at x = e
    b = (eta - 1.0) / (2.0 * _E**3)
    a = (3.0 - eta) / (2.0 * _E)
    return a, b


def slow_saturation(x, eta: float = 1.0):
    """Odd function with f(0) = 0, f' > 0, |f| < 2 and
    f(x) = 2 - (log x)^(-eta) for x >= e; on (-e, e) it is the odd cubic
    matching value and slope at the junction."""
    x = np.asarray(x, dtype=float)
    a, b = _cubic_coeffs(eta)
    ax = np.abs(x)
    with np.errstate(all="ignore"):
        outer = np.sign(x) * (2.0 - np.log(np.maximum(ax, _E)) ** (-eta))
        inner = a * x + b * x**3
    return np.where(ax >= _E, outer, inner)


def slow_saturation_deriv(x, eta: float = 1.0):
    """Derivative of :func:`slow_saturation`; equals
    eta / (|x| log^(1+eta)|x|) for |x| >= e."""
    x = np.asarray(x, dtype=float)
    a, b = _cubic_coeffs(eta)
    ax = np.abs(x)
    with np.errstate(all="ignore"):
        outer = eta / (np.maximum(ax, _E) * np.log(np.maximum(ax, _E)) ** (1.0 + eta))
        inner = a + 3.0 * b * x**2
    return np.where(ax >= _E, outer, inner)


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------


def _normal_form(p: PresetParams) -> PlantModel:
    n, amp_a, amp_b, b_center = p.n, p.amp_a, p.amp_b, p.b_center
    if n < 1:
        raise PlantConstructionError("normal_form requires n >= 1")
    if amp_a < 0.0 or amp_b < 0.0:
        raise PlantConstructionError("normal_form requires amp_a >= 0 and amp_b >= 0")
    if b_center - amp_b <= 0.0:
        raise PlantConstructionError(
            f"normal_form requires b_center - amp_b > 0, got {b_center - amp_b}"
        )

    def a_fn(x):
        return amp_a * (0.5 * np.sin(x[..., 0]) + 0.3 * np.cos(x[..., n - 1]))

    def b_fn(x):
        return b_center + amp_b * np.sin(x.sum(axis=-1))

    def dynamics(x, u):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        out[..., : n - 1] = x[..., 1:]
        out[..., n - 1] = a_fn(x) + b_fn(x) * np.asarray(u)
        return out

    def output(x):
        return np.asarray(x, dtype=float)[..., 0]

    def phi(x):
        return np.asarray(x, dtype=float).copy()

    def fg(x):
        x = np.asarray(x, dtype=float)
        return a_fn(x), b_fn(x)

    b_low, b_high = b_center - amp_b, b_center + amp_b
    lip_a = 0.8 * amp_a  # amplitude-sum bound on ||grad a||
    lip_b = math.sqrt(n) * amp_b
    lip_gap = math.hypot(lip_a, lip_b)  # Euclidean gap of the pair (a, b)
    sup_a = 0.8 * amp_a

    def bounds_factory():
        return UncertaintyBounds(
            L=lip_gap,
            b_low=b_low,
            b_high=b_high,
            tau1=lambda r: r + sup_a + b_high,
            tau2=lambda r: lip_gap * r,
            M=sup_a,
        )

    return PlantModel(
        n=n,
        name=f"normal_form_n{n}",
        dynamics=dynamics,
        output=output,
        phi=phi,
        fg=fg,
        assumption_status={
            "relative_degree": f"uniform, input gain in [{b_low:g}, {b_high:g}]",
            "gap_lipschitz": f"holds globally with constant {lip_gap:.6g}",
            "coordinate_map": "identity; growth condition and global invertibility hold",
        },
        x_star=lambda y_star: np.concatenate(([float(y_star)], np.zeros(n - 1))),
        preset=p,
        bounds_factory=bounds_factory,
    )


def _strict_feedback2(p: PresetParams) -> PlantModel:
    amp = p.amp
    if amp < 0.0:
        raise PlantConstructionError("strict_feedback2 requires amp >= 0")
    # f1 = sin(x1) (slope bound 1), f2 = amp * cos(x1 + x2)
    lip = max(1.0, amp * math.sqrt(2.0))
    lip_tilde = math.sqrt(4.0 * lip**2 + (lip + lip**2) ** 2)

    def dynamics(x, u):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        out[..., 0] = np.sin(x[..., 0]) + x[..., 1]
        out[..., 1] = amp * np.cos(x[..., 0] + x[..., 1]) + np.asarray(u)
        return out

    def output(x):
        return np.asarray(x, dtype=float)[..., 0]

    def phi(x):
        x = np.asarray(x, dtype=float)
        return np.stack([x[..., 0], np.sin(x[..., 0]) + x[..., 1]], axis=-1)

    def fg(x):
        x = np.asarray(x, dtype=float)
        z2 = np.sin(x[..., 0]) + x[..., 1]
        F = np.cos(x[..., 0]) * z2 + amp * np.cos(x[..., 0] + x[..., 1])
        return F, np.ones_like(F)

    def bounds_factory():
        return UncertaintyBounds(
            L=lip_tilde,
            b_low=1.0,
            b_high=1.0,
            tau1=lambda r: lip * r + amp + 1.0,
            tau2=lambda r: lip_tilde * r,
            M=amp,
        )

    return PlantModel(
        n=2,
        name="strict_feedback2",
        dynamics=dynamics,
        output=output,
        phi=phi,
        fg=fg,
        assumption_status={
            "relative_degree": "uniform, input gain identically 1",
            "gap_lipschitz": f"holds globally with constant {lip_tilde:.6g}",
            "coordinate_map": "triangular Jacobian with unit determinant; "
            "global invertibility holds",
        },
        x_star=lambda y_star: np.array([float(y_star), -math.sin(float(y_star))]),
        preset=p,
        bounds_factory=bounds_factory,
    )


# fixed trigonometric instance for the pure-feedback preset
_PF_A1 = 0.3  # amplitude of d f1 / d x1
_PF_A2 = 0.2  # ripple of d f1 / d x2 around 1
_PF_F2A, _PF_F2B = 0.4, 0.3
_PF_GA = 0.2  # ripple of the input channel around 1


def _pf_alpha_inf() -> float:
    # smallest stretching of the coordinate map along any direction:
    # inf over theta1 in [-A1, A1], theta2 in [1-A2, 1+A2] of the smallest
    # singular value of [[1, 0], [theta1, theta2]]
    t1 = np.linspace(-_PF_A1, _PF_A1, 41)
    t2 = np.linspace(1.0 - _PF_A2, 1.0 + _PF_A2, 41)
    T1, T2 = np.meshgrid(t1, t2)
    tr = 1.0 + T1**2 + T2**2
    det = T2**2
    lam_min = (tr - np.sqrt(tr**2 - 4.0 * det)) / 2.0
    return float(np.sqrt(lam_min.min()))


def _pure_feedback2(p: PresetParams) -> PlantModel:
    def f1(x1, x2):
        return x2 + _PF_A1 * np.sin(x1) + _PF_A2 * np.sin(x2)

    def d1f1(x1):
        return _PF_A1 * np.cos(x1)

    def d2f1(x2):
        return 1.0 + _PF_A2 * np.cos(x2)

    def f2(x1, x2):
        return _PF_F2A * np.cos(x1) + _PF_F2B * np.sin(x2)

    def g_fn(x1, x2):
        return 1.0 + _PF_GA * np.sin(x1 + x2)

    def dynamics(x, u):
        x = np.asarray(x, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        out = np.empty_like(x)
        out[..., 0] = f1(x1, x2)
        out[..., 1] = f2(x1, x2) + g_fn(x1, x2) * np.asarray(u)
        return out

    def output(x):
        return np.asarray(x, dtype=float)[..., 0]

    def phi(x):
        x = np.asarray(x, dtype=float)
        return np.stack([x[..., 0], f1(x[..., 0], x[..., 1])], axis=-1)

    def fg(x):
        x = np.asarray(x, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        F = d1f1(x1) * f1(x1, x2) + d2f1(x2) * f2(x1, x2)
        return F, d2f1(x2) * g_fn(x1, x2)

    # amplitude arithmetic for the certified gap constant
    d2_max = 1.0 + _PF_A2
    lip_f1 = math.hypot(_PF_A1, d2_max)
    lip_f2 = math.hypot(_PF_F2A, _PF_F2B)
    lip_d2 = _PF_A2  # slope bound of d2f1
    sup_f2 = _PF_F2A + _PF_F2B
    g_max = 1.0 + _PF_GA
    lip_g = _PF_GA * math.sqrt(2.0)
    beta_F = _PF_A1 * lip_f1 + d2_max * lip_f2 + lip_d2 * sup_f2
    beta_G = lip_d2 * g_max + d2_max * lip_g
    alpha_inf = _pf_alpha_inf()
    lip_gap = math.hypot(beta_F, beta_G) / alpha_inf
    b_low = (1.0 - _PF_A2) * (1.0 - _PF_GA)
    b_high = d2_max * g_max
    sup_F_at_fiber = d2_max * sup_f2  # first term vanishes where f1 = 0

    def x_star(y_star):
        y = float(y_star)
        c = _PF_A1 * math.sin(y)
        hi = (abs(c) + _PF_A2) / (1.0 - _PF_A2) + 1.0
        root = brentq(lambda v: v + c + _PF_A2 * math.sin(v), -hi, hi, xtol=1e-14)
        return np.array([y, root])

    def bounds_factory():
        return UncertaintyBounds(
            L=lip_gap,
            b_low=b_low,
            b_high=b_high,
            tau1=lambda r: (1.0 + lip_f1) * r + sup_F_at_fiber + b_high + 1.0,
            tau2=lambda r: lip_gap * r,
            M=sup_F_at_fiber,
        )

    return PlantModel(
        n=2,
        name="pure_feedback2",
        dynamics=dynamics,
        output=output,
        phi=phi,
        fg=fg,
        assumption_status={
            "relative_degree": f"uniform, input gain in [{b_low:g}, {b_high:g}]",
            "gap_lipschitz": f"holds globally with constant {lip_gap:.6g} "
            f"(direction infimum {alpha_inf:.6g} evaluated on a grid)",
            "second_derivative": f"curvature of the first channel bounded by "
            f"{max(_PF_A1, _PF_A2):g} (recorded, not propagated)",
            "coordinate_map": "global invertibility holds (second channel slope "
            f">= {1.0 - _PF_A2:g})",
        },
        x_star=x_star,
        preset=p,
        bounds_factory=bounds_factory,
    )


def _escape_counterexample(p: PresetParams) -> PlantModel:
    eta, eps_unc = p.eta, p.eps_unc
    if not (0.0 < eps_unc <= 1.0):
        raise PlantConstructionError(
            f"escape_counterexample requires 0 < eps_unc <= 1, got {eps_unc}"
        )
    if not (0.0 < eta < 3.0):
        raise PlantConstructionError(
            f"escape_counterexample requires 0 < eta < 3 "
            f"(odd-cubic slope positivity at 0), got {eta}"
        )
    # positivity of the junction cubic's slope on (0, e): affine in x^2 with
    # positive endpoint values, checked explicitly anyway
    a, b = _cubic_coeffs(eta)
    xs = np.linspace(0.0, _E, 257)
    if np.min(a + 3.0 * b * xs**2) <= 0.0:
        raise PlantConstructionError("junction cubic slope is not positive on (0, e)")

    def dynamics(x, u):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        out[..., 0] = eps_unc * slow_saturation(x[..., 1], eta)
        out[..., 1] = (1.0 + np.asarray(u)) / (
            eps_unc * slow_saturation_deriv(x[..., 1], eta)
        )
        return out

    def output(x):
        return np.asarray(x, dtype=float)[..., 0]

    def phi(x):
        x = np.asarray(x, dtype=float)
        return np.stack(
            [x[..., 0], eps_unc * slow_saturation(x[..., 1], eta)], axis=-1
        )

    def fg(x):
        x = np.asarray(x, dtype=float)
        one = np.ones_like(x[..., 0])
        return one, one.copy()

    def bounds_factory():
        return UncertaintyBounds(
            L=0.0,
            b_low=1.0,
            b_high=1.0,
            tau1=lambda r: r + 2.0,
            tau2=lambda r: r,
            M=1.0,
        )

    return PlantModel(
        n=2,
        name="escape_counterexample",
        dynamics=dynamics,
        output=output,
        phi=phi,
        fg=fg,
        assumption_status={
            "relative_degree": "uniform, input gain identically 1",
            "gap_lipschitz": "H is constant: gap is identically zero",
            "coordinate_map": "inverse-Jacobian growth exceeds the admissible "
            f"rate by the factor log^{eta:g}; global invertibility fails "
            "(second coordinate is bounded)",
        },
        x_star=lambda y_star: np.array([float(y_star), 0.0]),
        preset=p,
        bounds_factory=bounds_factory,
    )


_PRESETS = {
    "normal_form": _normal_form,
    "strict_feedback2": _strict_feedback2,
    "pure_feedback2": _pure_feedback2,
    "escape_counterexample": _escape_counterexample,
}


def make_preset(params: PresetParams) -> PlantModel:
    """Construct a benchmark plant; raises PlantConstructionError naming the
    violated inequality for bad parameters."""
    try:
        builder = _PRESETS[params.kind]
    except KeyError:
        raise PlantConstructionError(
            f"unknown preset kind {params.kind!r}; choose from {sorted(_PRESETS)}"
        ) from None
    return builder(params)
