"""Coefficient arithmetic of the variable-step DLN family.

Everything here works on plain numbers and on array-like vectors supporting
``+``, scalar ``*`` and an inner product, so the same functions serve scalar
ODEs, ``numpy`` state vectors and finite-element coefficient vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DlnCoefficients",
    "beta_bounds",
    "blend_alpha",
    "blend_beta",
    "blend_star",
    "check_theta",
    "coefficients",
    "g_identity_residual",
    "g_identity_terms",
    "g_norm_sq",
    "step_variability",
    "t_beta",
]

InnerProduct = Callable[[np.ndarray, np.ndarray], float]


def _dot(u, v) -> float:
    return float(np.vdot(np.asarray(u), np.asarray(v)).real)


def check_theta(theta: float) -> float:
    theta = float(theta)
    if not (0.0 <= theta <= 1.0) or math.isnan(theta):
        raise ValueError(f"theta must lie in [0, 1], got {theta!r}")
    return theta


def step_variability(k_n: float, k_nm1: float) -> float:
    """Return ``(k_n - k_nm1) / (k_n + k_nm1)``, always inside (-1, 1)."""
    if not (k_n > 0 and k_nm1 > 0):
        raise ValueError(f"time steps must be positive, got k_n={k_n!r}, k_nm1={k_nm1!r}")
    return (k_n - k_nm1) / (k_n + k_nm1)


@dataclass(frozen=True)
class DlnCoefficients:
    """All per-step numbers of one DLN step.

    Triples are ordered by the time level they multiply:
    index 0 -> ``t_{n-1}``, 1 -> ``t_n``, 2 -> ``t_{n+1}``.
    ``star`` holds the weights ``(w0, w1)`` of the explicit blend
    ``w1 * y_n + w0 * y_{n-1}``.
    """

    theta: float
    k_n: float
    k_nm1: float
    alpha: tuple[float, float, float]
    beta: tuple[float, float, float]
    gamma: tuple[float, float, float]
    eps: float
    khat: float
    star: tuple[float, float]

    @property
    def k_be(self) -> float:
        """Step of the equivalent backward-Euler-like solve."""
        return self.beta[2] / self.alpha[2] * self.khat

    @property
    def old_weights(self) -> tuple[float, float]:
        """Pre-filter weights ``(c0, c1)`` with ``y_old = c1*y_n + c0*y_{n-1}``."""
        a0, a1, a2 = self.alpha
        b0, b1, b2 = self.beta
        return (b0 - a0 * b2 / a2, b1 - a1 * b2 / a2)

    @property
    def ratio(self) -> float:
        return self.k_n / self.k_nm1


def coefficients(theta: float, k_n: float, k_nm1: float) -> DlnCoefficients:
    """Evaluate the DLN coefficient table for steps ``k_n`` (new) and ``k_nm1``."""
    theta = check_theta(theta)
    eps = step_variability(k_n, k_nm1)

    a2 = 0.5 * (theta + 1.0)
    a1 = -theta
    a0 = 0.5 * (theta - 1.0)

    d2 = (1.0 + eps * theta) ** 2
    c = (1.0 - theta * theta) / d2
    e = eps * eps * theta * (1.0 - theta * theta) / d2
    b2 = 0.25 * (1.0 + c + e + theta)
    b1 = 0.5 * (1.0 - c)
    b0 = 0.25 * (1.0 + c - e - theta)

    g1 = -math.sqrt(theta * (1.0 - theta * theta)) / (math.sqrt(2.0) * (1.0 + eps * theta))
    g2 = -0.5 * (1.0 - eps) * g1
    g0 = -0.5 * (1.0 + eps) * g1

    khat = a2 * k_n - a0 * k_nm1
    r = k_n / k_nm1
    star = (b0 - b2 * r, b2 * (1.0 + r) + b1)

    return DlnCoefficients(
        theta=theta,
        k_n=float(k_n),
        k_nm1=float(k_nm1),
        alpha=(a0, a1, a2),
        beta=(b0, b1, b2),
        gamma=(g0, g1, g2),
        eps=eps,
        khat=khat,
        star=star,
    )


def beta_bounds(theta: float) -> tuple[tuple[float, float], tuple[float, float], tuple[float, float]]:
    """Open intervals containing ``beta_0, beta_1, beta_2`` for every ``eps`` in (-1, 1).

    Only meaningful for ``theta < 1``.
    """
    theta = check_theta(theta)
    if theta >= 1.0:
        raise ValueError("beta bounds are only defined for theta in [0, 1)")
    t = theta
    b2 = ((2 + t + t * t) / (4 * (1 + t)), (1 + t) / (2 * (1 - t)))
    b1 = (-t / (1 - t), t / (1 + t))
    b0 = ((1 - 2 * t - t * t) / (2 * (1 - t) * (1 + t)), (2 - t + t * t) / (4 * (1 - t)))
    return b0, b1, b2


def _combine(weights: Sequence[float], ys: Sequence) -> np.ndarray:
    if len(weights) != len(ys):
        raise ValueError(f"expected {len(weights)} levels, got {len(ys)}")
    arrs = [np.asarray(y, dtype=float) for y in ys]
    shape = arrs[0].shape
    for a in arrs[1:]:
        if a.shape != shape:
            raise ValueError(f"dimension mismatch: {a.shape} vs {shape}")
    out = weights[0] * arrs[0]
    for w, a in zip(weights[1:], arrs[1:]):
        out = out + w * a
    return out


def blend_alpha(ys: Sequence, coeffs: DlnCoefficients) -> np.ndarray:
    """``sum_l alpha_l y_{n-1+l}`` for ``ys = (y_{n-1}, y_n, y_{n+1})``."""
    return _combine(coeffs.alpha, ys)


def blend_beta(ys: Sequence, coeffs: DlnCoefficients) -> np.ndarray:
    """``sum_l beta_l y_{n-1+l}`` for ``ys = (y_{n-1}, y_n, y_{n+1})``."""
    return _combine(coeffs.beta, ys)


def blend_gamma(ys: Sequence, coeffs: DlnCoefficients) -> np.ndarray:
    return _combine(coeffs.gamma, ys)


def blend_star(ys: Sequence, coeffs: DlnCoefficients) -> np.ndarray:
    """Explicit second-order extrapolation to ``t_{n,beta}`` from ``ys = (y_{n-1}, y_n)``."""
    return _combine(coeffs.star, ys)


def t_beta(ts: Sequence[float], coeffs: DlnCoefficients) -> float:
    """Weighted time ``sum_l beta_l t_{n-1+l}`` of the one-leg evaluation."""
    t0, t1, t2 = (float(t) for t in ts)
    if not (t0 < t1 < t2):
        raise ValueError(f"time levels must be strictly increasing, got {ts!r}")
    b0, b1, b2 = coeffs.beta
    return b0 * t0 + b1 * t1 + b2 * t2


def g_norm_sq(pair: Sequence, theta: float, inner: InnerProduct = _dot) -> float:
    """Squared G-norm ``(1+theta)/4 |u|^2 + (1-theta)/4 |v|^2`` of ``pair = (u, v)``."""
    theta = check_theta(theta)
    u, v = pair
    if np.shape(u) != np.shape(v):
        raise ValueError(f"dimension mismatch: {np.shape(u)} vs {np.shape(v)}")
    return 0.25 * (1.0 + theta) * inner(u, u) + 0.25 * (1.0 - theta) * inner(v, v)


def g_identity_terms(ys: Sequence, coeffs: DlnCoefficients, inner: InnerProduct = _dot) -> dict[str, float]:
    """Both sides of the G-stability identity for ``ys = (y_{n-1}, y_n, y_{n+1})``.

    Returns ``lhs = (y_alpha, y_beta)``, ``g_new``, ``g_old`` and the numerical
    dissipation ``dissipation = |y_gamma|^2``; the identity reads
    ``lhs == g_new - g_old + dissipation``.
    """
    ym1, y0, y1 = ys
    ya = blend_alpha(ys, coeffs)
    yb = blend_beta(ys, coeffs)
    yg = blend_gamma(ys, coeffs)
    return {
        "lhs": inner(ya, yb),
        "g_new": g_norm_sq((y1, y0), coeffs.theta, inner),
        "g_old": g_norm_sq((y0, ym1), coeffs.theta, inner),
        "dissipation": inner(yg, yg),
    }


def g_identity_residual(ys: Sequence, theta: float, k_n: float, k_nm1: float,
                        inner: InnerProduct = _dot) -> float:
    """Absolute defect of the G-stability identity for one step."""
    terms = g_identity_terms(ys, coefficients(theta, k_n, k_nm1), inner)
    return abs(terms["lhs"] - (terms["g_new"] - terms["g_old"] + terms["dissipation"]))
