"""Manufactured Taylor-Green solutions with a time factor and per-member amplitudes.

Member ``j`` has velocity ``(1 + delta_j) T(t) U(x, y)`` with
``U = (-cos(pi x) sin(pi y), sin(pi x) cos(pi y))`` and the member-independent
pressure ``P(t) Pi(x, y)``, ``Pi = -(cos(2 pi x) + cos(2 pi y)) / 4``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PI = math.pi
_EXP_LIMIT = 700.0
VARIANTS = ("sin", "lindberg1", "lindberg2")


def _lindberg_phases(omega: float, t):
    scale = 10.0 ** omega
    et = np.exp(-np.asarray(t, dtype=float))
    g1 = scale * (t + 2.0 * et - 2.0)
    g2 = scale * (1.0 - et - t * et)
    dg1 = scale * (1.0 - 2.0 * et)
    dg2 = scale * t * et
    return g1, g2, dg1, dg2


def lindberg_time_factor(which: int, omega: float, t, derivative: bool = False):
    """``G_1 = e^{g1}(cos g2 + sin g2)`` or ``G_2 = e^{g1}(cos g2 - sin g2)``.

    ``g1 = 10^omega (t + 2 e^{-t} - 2)`` and ``g2 = 10^omega (1 - e^{-t} - t e^{-t})``.
    Raises ``OverflowError`` when ``e^{g1}`` would overflow.
    """
    if which not in (1, 2):
        raise ValueError(f"which must be 1 or 2, got {which!r}")
    if np.any(np.asarray(t) < 0):
        raise ValueError("time must be non-negative")
    g1, g2, dg1, dg2 = _lindberg_phases(omega, t)
    if np.any(g1 > _EXP_LIMIT):
        raise OverflowError(f"exponent {np.max(g1):.4g} too large for the Lindberg factor")
    e = np.exp(g1)
    G1 = e * (np.cos(g2) + np.sin(g2))
    G2 = e * (np.cos(g2) - np.sin(g2))
    if not derivative:
        return G1 if which == 1 else G2
    # G1' = g1' G1 + g2' G2,  G2' = g1' G2 - g2' G1
    return dg1 * G1 + dg2 * G2 if which == 1 else dg1 * G2 - dg2 * G1


@dataclass
class ManufacturedSolution:
    """Exact velocity, pressure, gradients and induced forcing for every member."""

    variant: str = "sin"
    omega: float = 10.0
    nu: float = 5e-3
    deltas: Sequence[float] = field(default_factory=lambda: [0.0])

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        self.deltas = np.asarray(self.deltas, dtype=float)

    @property
    def J(self) -> int:
        return len(self.deltas)

    def scale(self, j: int) -> float:
        return 1.0 + float(self.deltas[j])

    # time factors
    def T(self, t):
        if self.variant == "sin":
            return np.sin(self.omega * t)
        return lindberg_time_factor(int(self.variant[-1]), self.omega, t)

    def dT(self, t):
        if self.variant == "sin":
            return self.omega * np.cos(self.omega * t)
        return lindberg_time_factor(int(self.variant[-1]), self.omega, t, derivative=True)

    def P(self, t):
        return np.sin(self.omega * t) ** 2 if self.variant == "sin" else self.T(t)

    # fields
    def velocity(self, j: int, x, y, t):
        a = self.scale(j) * self.T(t)
        return -a * np.cos(PI * x) * np.sin(PI * y), a * np.sin(PI * x) * np.cos(PI * y)

    def velocity_grad(self, j: int, x, y, t) -> np.ndarray:
        """``[component][direction]`` array of shape ``(2, 2, *x.shape)``."""
        a = self.scale(j) * self.T(t) * PI
        ss = np.sin(PI * x) * np.sin(PI * y)
        cc = np.cos(PI * x) * np.cos(PI * y)
        return np.array([[a * ss, -a * cc], [a * cc, -a * ss]])

    def pressure(self, j: int, x, y, t):
        return -0.25 * (np.cos(2 * PI * x) + np.cos(2 * PI * y)) * self.P(t)

    def forcing(self, j: int, x, y, t):
        """``u_t + (u.grad)u - nu lap u + grad p`` of member ``j``."""
        s = self.scale(j)
        T = self.T(t)
        lin = s * self.dT(t) + 2.0 * PI ** 2 * self.nu * s * T
        # (U.grad)U = -grad Pi = -(pi/2)(sin 2 pi x, sin 2 pi y)
        quad = 0.5 * PI * (self.P(t) - (s * T) ** 2)
        return (-lin * np.cos(PI * x) * np.sin(PI * y) + quad * np.sin(2 * PI * x),
                lin * np.sin(PI * x) * np.cos(PI * y) + quad * np.sin(2 * PI * y))

    def kinetic_energy(self, j: int, t) -> float:
        """``1/2 ||u_j(., t)||^2`` on the unit square."""
        return 0.25 * (self.scale(j) * self.T(t)) ** 2


@dataclass(frozen=True)
class PerturbationSet:
    """Sorted amplitudes ``delta_1 <= ... <= delta_J`` drawn uniformly from ``[-bound, bound]``."""

    J: int
    bound: float
    seed: int = 0

    @property
    def values(self) -> np.ndarray:
        if self.J < 1 or self.bound < 0:
            raise ValueError("need J >= 1 and a non-negative bound")
        rng = np.random.default_rng(self.seed)
        return np.sort(rng.uniform(-self.bound, self.bound, self.J))
