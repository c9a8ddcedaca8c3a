"""Error norms over time, convergence rates and energy/dissipation bookkeeping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..dln_core import DlnCoefficients
from ..fem2d.spaces import TaylorHood
from .manufactured import ManufacturedSolution


def rate(e_coarse: float, e_fine: float) -> float:
    """Observed order ``log2(e_coarse / e_fine)`` for a halving of ``k`` and ``h``."""
    if not (e_coarse > 0 and e_fine > 0):
        raise ValueError("errors must be positive to form a rate")
    return math.log2(e_coarse / e_fine)


@dataclass
class ErrorReport:
    """Per-member errors: max-in-time L2 and H1 velocity errors and the time-summed pressure error."""

    h: float
    u_l2: np.ndarray
    u_h1: np.ndarray
    p_l2: np.ndarray

    COLUMNS = ("u_inf0", "u_inf1", "p_20")

    def column(self, name: str) -> np.ndarray:
        return {"u_inf0": self.u_l2, "u_inf1": self.u_h1, "p_20": self.p_l2}[name]

    def mean(self, name: str) -> float:
        return float(np.mean(self.column(name)))

    def max(self, name: str) -> float:
        return float(np.max(self.column(name)))

    def block(self, which: str) -> dict[str, float]:
        """Values for ``member_1``, ``member_J``, ``average`` or ``max``."""
        if which == "member_1":
            return {c: float(self.column(c)[0]) for c in self.COLUMNS}
        if which == "member_J":
            return {c: float(self.column(c)[-1]) for c in self.COLUMNS}
        if which == "average":
            return {c: self.mean(c) for c in self.COLUMNS}
        if which == "max":
            return {c: self.max(c) for c in self.COLUMNS}
        raise ValueError(f"unknown block {which!r}")


class ErrorAccumulator:
    """Collects errors level by level against the exact solution.

    The pressure sum uses ``weight * ||p(t) - p_h||^2`` per call, so constant
    steps pass ``k`` at every level and variable steps pass
    ``k_n + k_{n-1}`` at the blended points.
    """

    def __init__(self, spaces: TaylorHood, exact: ManufacturedSolution):
        self.spaces = spaces
        self.exact = exact
        J = exact.J
        self.u_l2 = np.zeros(J)
        self.u_h1 = np.zeros(J)
        self.p_sq = np.zeros(J)

    def add_velocity(self, t: float, u: np.ndarray) -> None:
        S, ex = self.spaces, self.exact
        for j in range(ex.J):
            vel = lambda x, y, j=j: ex.velocity(j, x, y, t)
            grad = lambda x, y, j=j: ex.velocity_grad(j, x, y, t)
            l2 = S.l2_error(u[j], vel)
            self.u_l2[j] = max(self.u_l2[j], l2)
            self.u_h1[j] = max(self.u_h1[j], math.hypot(l2, S.h1_seminorm_error(u[j], grad)))

    def add_pressure(self, t: float, p: np.ndarray, weight: float) -> None:
        S, ex = self.spaces, self.exact
        for j in range(ex.J):
            self.p_sq[j] += weight * S.pressure_l2_error(p[j], lambda x, y, j=j: ex.pressure(j, x, y, t)) ** 2

    def report(self) -> ErrorReport:
        return ErrorReport(self.spaces.mesh.h, self.u_l2.copy(), self.u_h1.copy(), np.sqrt(self.p_sq))


def rate_table(reports: Sequence[ErrorReport], block: str) -> list[dict]:
    """Rows ``{h, <col>, rate_<col>}`` with rates between consecutive meshes (NaN for the first)."""
    rows = []
    for i, rep in enumerate(reports):
        vals = rep.block(block)
        row = {"block": block, "h": rep.h}
        for c in ErrorReport.COLUMNS:
            row[c] = vals[c]
            row[f"rate_{c}"] = (rate(reports[i - 1].block(block)[c], vals[c]) if i else float("nan"))
        rows.append(row)
    return rows


@dataclass
class EnergyRow:
    t: float
    k: float
    energy_mean: float
    energy_max: float
    exact_mean: float
    exact_max: float
    vd_mean: float
    vd_max: float
    nd_mean: float
    nd_max: float

    @property
    def error_mean(self) -> float:
        return abs(self.exact_mean - self.energy_mean)

    @property
    def error_max(self) -> float:
        return abs(self.exact_max - self.energy_max)

    HEADER = ("t", "k", "energy_mean", "energy_max", "exact_energy_mean", "exact_energy_max",
              "energy_error_mean", "energy_error_max", "viscous_dissipation_mean",
              "viscous_dissipation_max", "numerical_dissipation_mean", "numerical_dissipation_max")

    def as_csv(self) -> list:
        return [repr(float(v)) for v in (self.t, self.k, self.energy_mean, self.energy_max,
                                         self.exact_mean, self.exact_max, self.error_mean,
                                         self.error_max, self.vd_mean, self.vd_max,
                                         self.nd_mean, self.nd_max)]


@dataclass
class EnergyDiagnostics:
    """Kinetic energy, viscous dissipation rate and numerical dissipation per accepted level."""

    spaces: TaylorHood
    nu: float
    exact: Optional[ManufacturedSolution] = None
    rows: list[EnergyRow] = field(default_factory=list)

    def record(self, t: float, c: DlnCoefficients, u_nm1: np.ndarray, u_n: np.ndarray,
               u_np1: np.ndarray) -> EnergyRow:
        """Append the row for the level ``u_np1`` produced by the step with coefficients ``c``."""
        M, K = self.spaces.mass, self.spaces.stiffness
        g0, g1, g2 = c.gamma
        comb = g0 * u_nm1 + g1 * u_n + g2 * u_np1
        E = np.array([0.5 * float(u @ (M @ u)) for u in u_np1])
        vd = np.array([self.nu * float(u @ (K @ u)) for u in u_np1])
        nd = np.array([max(float(d @ (M @ d)), 0.0) for d in comb]) / c.khat
        if self.exact is not None:
            ex = np.array([self.exact.kinetic_energy(j, t) for j in range(self.exact.J)])
        else:
            ex = np.full(len(E), np.nan)
        row = EnergyRow(t, c.k_n, E.mean(), E.max(), ex.mean(), ex.max(),
                        vd.mean(), vd.max(), nd.mean(), nd.max())
        self.rows.append(row)
        return row
