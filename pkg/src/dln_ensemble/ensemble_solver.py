"""One DLN-Ensemble time step for J Navier-Stokes systems sharing a single matrix.

Each member's convection is split into an implicit part driven by the
ensemble mean of the extrapolated velocities and an explicit fluctuation
term, so every member sees the same saddle-point matrix.  The matrix is
factored once per step and the J right-hand sides are solved together.

Velocity and pressure states are stored as arrays of shape ``(J, n)``.
Boundary values are taken from ``NsePhysics.boundary`` (zero when absent).
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .adaptivity import InstabilityError
from .dln_core import DlnCoefficients, coefficients
from .fem2d.linalg import SingularMatrix, SolverCounters, grid_nested_dissection, lu_factor, solve_many
from .fem2d.spaces import TaylorHood

logger = logging.getLogger(__name__)

VectorField = Callable[[int, np.ndarray, np.ndarray, float], tuple]
ScalarField = Callable[[int, np.ndarray, np.ndarray, float], np.ndarray]


@dataclass
class NsePhysics:
    """Viscosity, per-member forcing ``f(j, x, y, t) -> (f1, f2)`` and Dirichlet data."""

    nu: float
    forcing: Optional[VectorField] = None
    boundary: Optional[VectorField] = None

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError(f"viscosity must be positive, got {self.nu}")


@dataclass
class EnsembleState:
    """Two consecutive levels of every member: ``u_nm1, u_n`` (J, n_velocity), ``p_nm1, p_n`` (J, n_pressure)."""

    u_nm1: np.ndarray
    u_n: np.ndarray
    p_nm1: np.ndarray
    p_n: np.ndarray
    t_nm1: float
    t_n: float

    def __post_init__(self):
        self.u_nm1 = np.atleast_2d(np.asarray(self.u_nm1, dtype=float))
        self.u_n = np.atleast_2d(np.asarray(self.u_n, dtype=float))
        self.p_nm1 = np.atleast_2d(np.asarray(self.p_nm1, dtype=float))
        self.p_n = np.atleast_2d(np.asarray(self.p_n, dtype=float))
        if self.u_nm1.shape != self.u_n.shape or self.p_nm1.shape != self.p_n.shape:
            raise ValueError("the two stored levels must have matching shapes")
        if self.u_n.shape[0] != self.p_n.shape[0] or self.u_n.shape[0] < 1:
            raise ValueError("velocity and pressure must hold the same J >= 1 members")
        if not self.t_n > self.t_nm1:
            raise ValueError("t_n must exceed t_nm1")

    @property
    def J(self) -> int:
        return self.u_n.shape[0]

    @property
    def k_nm1(self) -> float:
        return self.t_n - self.t_nm1

    def check_spaces(self, spaces: TaylorHood) -> None:
        if self.u_n.shape[1] != spaces.n_velocity or self.p_n.shape[1] != spaces.n_pressure:
            raise ValueError("state dimensions do not match the finite element spaces")

    def permuted(self, order: Sequence[int]) -> "EnsembleState":
        order = np.asarray(order)
        return EnsembleState(self.u_nm1[order], self.u_n[order], self.p_nm1[order],
                             self.p_n[order], self.t_nm1, self.t_n)


@dataclass
class CflIndicator:
    """Raw per-member CFL-like quantities; the unknown domain constant is not applied."""

    values: np.ndarray
    ratio_factor: float
    degenerate: bool = False

    @property
    def max(self) -> float:
        return float(np.max(self.values)) if len(self.values) else 0.0


@dataclass
class StepInfo:
    t: float
    k: float
    energies: np.ndarray
    cfl: CflIndicator
    factorizations: int
    solved_columns: int
    assembly_time: float
    factor_time: float
    solve_time: float


def star_blend(state: EnsembleState, c: DlnCoefficients) -> np.ndarray:
    """Per-member extrapolations ``u_{n,*}``, shape (J, n_velocity)."""
    w0, w1 = c.star
    return w1 * state.u_n + w0 * state.u_nm1


def ensemble_mean_star(state: EnsembleState, c: DlnCoefficients) -> np.ndarray:
    return star_blend(state, c).mean(axis=0)


def cfl_indicator(state: EnsembleState, c: DlnCoefficients, spaces: TaylorHood, nu: float,
                  h: Optional[float] = None) -> CflIndicator:
    """``khat/(h nu) * ||grad(u_{j,*} - <u>_*)||^2`` per member and ``((1+eps theta)/(1-eps))^2``."""
    h = spaces.mesh.h if h is None else h
    stars = star_blend(state, c)
    fluct = stars - stars.mean(axis=0)
    K = spaces.stiffness
    vals = np.array([max(float(d @ (K @ d)), 0.0) for d in fluct]) * c.khat / (h * nu)
    gap = 1.0 - c.eps
    degenerate = gap < 1e-8
    ratio = math.inf if degenerate else ((1.0 + c.eps * c.theta) / gap) ** 2
    if degenerate:
        logger.warning("step ratio makes eps=%.12g degenerate in the CFL indicator", c.eps)
    return CflIndicator(vals, ratio, degenerate)


def _check_finite(*arrays: np.ndarray, where: str) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise InstabilityError(f"non-finite values detected {where}")


class EnsembleSolver:
    """Holds the time-independent operators and instrumentation for repeated steps."""

    def __init__(self, spaces: TaylorHood, physics: NsePhysics, theta: float,
                 counters: Optional[SolverCounters] = None):
        self.spaces = spaces
        self.physics = physics
        self.theta = theta
        self.counters = counters if counters is not None else SolverCounters()
        self.assembly_time = 0.0
        S = spaces
        self.f_idx, self.b_idx = S.free_velocity, S.bnd_velocity
        self.M, self.K, self.B = S.mass, S.stiffness, S.divergence
        self.B_f = self.B[:, self.f_idx].tocsr()
        self.B_b = self.B[:, self.b_idx].tocsr()
        self.mean_col = sp.csr_matrix(S.pressure_mean[:, None])
        bx = S.node_coords[S.bnd_nodes]
        self._bnd_xy = (bx[:, 0], bx[:, 1])
        self.order = self._saddle_order()

    def _saddle_order(self) -> np.ndarray:
        """Nested-dissection order of (free velocity, pressure, multiplier) unknowns."""
        S = self.spaces
        pts = np.vstack([S.node_coords[self.f_idx % S.n_nodes], S.mesh.vertices, [[0.0, 0.0]]])
        ij = np.rint(pts * 2 * S.mesh.m).astype(int)
        nf, npr = len(self.f_idx), S.n_pressure
        rank = np.r_[np.zeros(nf, int), np.ones(npr + 1, int)]
        last = np.zeros(nf + npr + 1, bool)
        last[-1] = True
        return grid_nested_dissection(ij[:, 0], ij[:, 1], rank, last)

    # -- data -------------------------------------------------------------------
    def boundary_values(self, J: int, t: float) -> np.ndarray:
        """Dirichlet values at the boundary velocity dofs, shape (J, n_bnd)."""
        out = np.zeros((J, len(self.b_idx)))
        if self.physics.boundary is None:
            return out
        x, y = self._bnd_xy
        for j in range(J):
            g1, g2 = self.physics.boundary(j, x, y, t)
            out[j] = np.concatenate([np.broadcast_to(g1, x.shape), np.broadcast_to(g2, x.shape)])
        return out

    def loads(self, J: int, t: float) -> np.ndarray:
        out = np.zeros((J, self.spaces.n_velocity))
        if self.physics.forcing is None:
            return out
        for j in range(J):
            out[j] = self.spaces.load_vector(lambda x, y, j=j: self.physics.forcing(j, x, y, t))
        return out

    # -- linear algebra -----------------------------------------------------------
    def _saddle(self, A_ff: sp.csr_matrix) -> sp.csr_matrix:
        return sp.bmat([[A_ff, -self.B_f.T, None],
                        [-self.B_f, None, self.mean_col],
                        [None, self.mean_col.T, None]], format="csc")

    def _solve(self, A: sp.csr_matrix, rhs_vel: np.ndarray, bnd: np.ndarray,
               div_rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray, float, float]:
        """Solve the constrained system for all members with one factorization.

        ``rhs_vel`` (J, n_velocity) is the full momentum right-hand side,
        ``bnd`` (J, n_bnd) the boundary values of the unknown velocity and
        ``div_rhs`` (J, n_pressure) the right-hand side of ``-B_f u_f``.
        Returns velocity (J, n_velocity), pressure (J, n_pressure) and the
        factor/solve times of this call.

        Momentum rows are divided by the mean diagonal of ``A`` so that the
        velocity and pressure blocks have comparable size whatever the step;
        this keeps threshold pivoting on the diagonal.  The pressure unknown
        is scaled back afterwards.
        """
        f, b = self.f_idx, self.b_idx
        nf, npr = len(f), self.spaces.n_pressure
        t0 = time.perf_counter()
        A_f = A[f]
        A_ff, A_fb = A_f[:, f], A_f[:, b]
        scale = float(np.mean(np.abs(A_ff.diagonal())))
        K = self._saddle((A_ff / scale).tocsr())
        J = rhs_vel.shape[0]
        R = np.zeros((nf + npr + 1, J))
        R[:nf] = (rhs_vel[:, f] - (A_fb @ bnd.T).T).T / scale
        R[nf:nf + npr] = (div_rhs + (self.B_b @ bnd.T).T).T
        self.assembly_time += time.perf_counter() - t0
        f0, s0 = self.counters.factor_time, self.counters.solve_time
        F = lu_factor(K, self.counters, self.order)
        try:
            X = solve_many(F, R)
            X = self._refine(K, F, R, X)
        except SingularMatrix as exc:
            # finite data but a non-finite solution: the run has blown up
            raise InstabilityError(str(exc)) from exc
        u = np.empty((J, self.spaces.n_velocity))
        u[:, f] = X[:nf].T
        u[:, b] = bnd
        p = scale * X[nf:nf + npr].T
        return u, p, self.counters.factor_time - f0, self.counters.solve_time - s0

    def _refine(self, K, F, R, X, rtol: float = 1e-10):
        """One step of iterative refinement when the threshold-pivoted solve is not accurate enough."""
        scale = np.maximum(np.abs(R).max(axis=0), 1e-300)
        res = R - K @ X
        if np.all(np.abs(res).max(axis=0) <= rtol * scale):
            return X
        X = X + solve_many(F, res)
        res = R - K @ X
        bad = np.abs(res).max(axis=0) / scale
        if np.any(bad > rtol):
            logger.warning("saddle solve residual %.3e after refinement", float(bad.max()))
        return X

    # -- the step ---------------------------------------------------------------
    def _common(self, state: EnsembleState, k_n: float):
        state.check_spaces(self.spaces)
        _check_finite(state.u_n, state.u_nm1, state.p_n, state.p_nm1, where="in the input state")
        c = coefficients(self.theta, k_n, state.k_nm1)
        t0 = time.perf_counter()
        stars = star_blend(state, c)
        mean = stars.mean(axis=0)
        N = self.spaces.convection(mean)
        fluct = self.spaces.convection_actions(stars - mean, stars)
        t_b = c.beta[2] * (state.t_n + k_n) + c.beta[1] * state.t_n + c.beta[0] * state.t_nm1
        load = self.loads(state.J, t_b) - fluct
        g_new = self.boundary_values(state.J, state.t_n + k_n)
        self.assembly_time += time.perf_counter() - t0
        return c, N, load, g_new

    def step(self, state: EnsembleState, k_n: float, refactorized: bool = False
             ) -> tuple[EnsembleState, StepInfo]:
        if not k_n > 0:
            raise ValueError("k_n must be positive")
        asm0 = self.assembly_time
        c, N, load, g_new = self._common(state, k_n)
        a0, a1, a2 = c.alpha
        b0, b1, b2 = c.beta
        nu, M, K = self.physics.nu, self.M, self.K
        b = self.b_idx
        t0 = time.perf_counter()
        known_beta = b1 * state.u_n + b0 * state.u_nm1
        div_known = -(self.B @ known_beta.T).T
        if refactorized:
            # pre-filter, backward-Euler-like solve at t_beta with step k_be, post-filter
            k_be = c.k_be
            w0, w1 = c.old_weights
            u_old = w1 * state.u_n + w0 * state.u_nm1
            A = (M / k_be + nu * K + N).tocsr()
            rhs = load + (M @ u_old.T).T / k_be
            bnd = b2 * g_new + known_beta[:, b]
            self.assembly_time += time.perf_counter() - t0
            w, P, tf, ts = self._solve(A, rhs, bnd, np.zeros((state.J, self.spaces.n_pressure)))
            u_new = (w - known_beta) / b2
        else:
            A = ((a2 / c.khat) * M + b2 * (nu * K + N)).tocsr()
            known_alpha = a1 * state.u_n + a0 * state.u_nm1
            rhs = load - (M @ known_alpha.T).T / c.khat - ((nu * K + N) @ known_beta.T).T
            self.assembly_time += time.perf_counter() - t0
            # -B(b2 u_new + known) = 0  ->  -B_f u_f = B_b g + B known / b2
            u_new, P, tf, ts = self._solve(A, rhs, g_new, -div_known / b2)
        p_new = (P - b1 * state.p_n - b0 * state.p_nm1) / b2
        _check_finite(u_new, p_new, where=f"after the step to t={state.t_n + k_n:.6g}")
        new = EnsembleState(state.u_n, u_new, state.p_n, p_new, state.t_n, state.t_n + k_n)
        energies = np.array([0.5 * float(u @ (M @ u)) for u in u_new])
        info = StepInfo(new.t_n, k_n, energies,
                        cfl_indicator(state, c, self.spaces, nu),
                        1, state.J, self.assembly_time - asm0, tf, ts)
        return new, info


def dln_ensemble_step(state: EnsembleState, physics: NsePhysics, spaces: TaylorHood, theta: float,
                      k_n: float, solver: Optional[EnsembleSolver] = None) -> EnsembleState:
    """Direct path: unknowns are ``u_{n+1}`` and the blended pressure, ``p_{n+1}`` is post-extracted."""
    solver = solver or EnsembleSolver(spaces, physics, theta)
    return solver.step(state, k_n)[0]


def refactorized_ensemble_step(state: EnsembleState, physics: NsePhysics, spaces: TaylorHood,
                               theta: float, k_n: float,
                               solver: Optional[EnsembleSolver] = None) -> EnsembleState:
    """Pre-filter, backward-Euler-like solve at ``t_{n,beta}``, post-filter."""
    solver = solver or EnsembleSolver(spaces, physics, theta)
    return solver.step(state, k_n, refactorized=True)[0]


def semi_implicit_dln_step(u_nm1: np.ndarray, u_n: np.ndarray, p_nm1: np.ndarray, p_n: np.ndarray,
                           t_nm1: float, t_n: float, k_n: float, physics: NsePhysics,
                           spaces: TaylorHood, theta: float) -> tuple[np.ndarray, np.ndarray]:
    """Single-system linearly implicit DLN step, assembled independently of the ensemble path.

    Unknowns are ``u_{n+1}`` (all dofs, Dirichlet rows replaced by identity)
    and ``p_{n+1}``; the convecting field is ``u_{n,*}``.
    """
    c = coefficients(theta, k_n, t_n - t_nm1)
    a0, a1, a2 = c.alpha
    b0, b1, b2 = c.beta
    w0, w1 = c.star
    nu = physics.nu
    S = spaces
    u_star = w1 * u_n + w0 * u_nm1
    L = nu * S.stiffness + S.convection(u_star)
    A = ((a2 / c.khat) * S.mass + b2 * L).tolil()
    u_known_a = a1 * u_n + a0 * u_nm1
    u_known_b = b1 * u_n + b0 * u_nm1
    p_known_b = b1 * p_n + b0 * p_nm1
    t_b = b2 * (t_n + k_n) + b1 * t_n + b0 * t_nm1
    f = np.zeros(S.n_velocity) if physics.forcing is None else S.load_vector(
        lambda x, y: physics.forcing(0, x, y, t_b))
    B = S.divergence
    rhs_u = f - S.mass @ u_known_a / c.khat - L @ u_known_b + B.T @ p_known_b
    G = -b2 * B.T.tolil()
    bnd = S.bnd_velocity
    g = np.zeros(len(bnd))
    if physics.boundary is not None:
        xy = S.node_coords[S.bnd_nodes]
        g1, g2 = physics.boundary(0, xy[:, 0], xy[:, 1], t_n + k_n)
        g = np.concatenate([np.broadcast_to(g1, len(xy)), np.broadcast_to(g2, len(xy))])
    for r, val in zip(bnd, g):
        A.rows[r], A.data[r] = [r], [1.0]
        G.rows[r], G.data[r] = [], []
        rhs_u[r] = val
    m = S.pressure_mean[:, None]
    K = sp.bmat([[A.tocsr(), G.tocsr(), None],
                 [b2 * B, None, sp.csr_matrix(m)],
                 [None, sp.csr_matrix(m.T), None]], format="csc")
    rhs = np.concatenate([rhs_u, -B @ u_known_b, [0.0]])
    x = lu_factor(K).solve(rhs)
    return x[:S.n_velocity], x[S.n_velocity:S.n_velocity + S.n_pressure]


def initialize_from_exact(velocity: VectorField, pressure: ScalarField, spaces: TaylorHood,
                          J: int, t0: float, k0: float) -> EnsembleState:
    """Interpolate member ``j``'s exact solution at ``t0`` and ``t0 + k0``."""
    def level(t):
        u = np.array([spaces.interpolate_velocity(lambda x, y, j=j: velocity(j, x, y, t))
                      for j in range(J)])
        p = np.array([spaces.interpolate_pressure(lambda x, y, j=j: pressure(j, x, y, t))
                      for j in range(J)])
        return u, p

    u0, p0 = level(t0)
    u1, p1 = level(t0 + k0)
    return EnsembleState(u0, u1, p0, p1, t0, t0 + k0)


STEP_CSV_HEADER = ("t", "k", "energy_mean", "energy_max", "cfl_max", "factorizations", "solved_columns",
                   "assembly_time", "factor_time", "solve_time")


def write_step_csv(infos: Sequence[StepInfo], path: str | Path) -> Path:
    """Per-step diagnostics; member energies follow the fixed columns as ``energy_<j>``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    J = len(infos[0].energies) if infos else 0
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*STEP_CSV_HEADER, *(f"energy_{j + 1}" for j in range(J))])
        for s in infos:
            w.writerow([repr(s.t), repr(s.k), repr(float(np.mean(s.energies))),
                        repr(float(np.max(s.energies))), repr(s.cfl.max), s.factorizations,
                        s.solved_columns, repr(s.assembly_time), repr(s.factor_time),
                        repr(s.solve_time), *(repr(float(e)) for e in s.energies)])
    return path
