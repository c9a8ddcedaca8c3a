"""Variable-step DLN integrator for initial value problems ``y' = g(t, y)``.

Two step realizations are provided: :func:`dln_step` solves the one-leg
equation for ``y_{n+1}`` directly, :func:`refactorized_step` runs a
pre-filter, a backward-Euler-like implicit solve at ``t_{n,beta}`` and a
post-filter.  Both use Newton's method on the respective unknown.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .dln_core import blend_beta, coefficients, t_beta

__all__ = [
    "History",
    "IvpProblem",
    "NonConvergence",
    "NonlinearSolveOptions",
    "RefactorizedResult",
    "dln_step",
    "integrate",
    "one_leg_residual",
    "refactorized_step",
]


class NonConvergence(RuntimeError):
    """Newton iteration failed to reach the requested residual."""

    def __init__(self, iterations: int, residual: float):
        super().__init__(f"Newton did not converge after {iterations} iterations "
                         f"(residual {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


@dataclass
class IvpProblem:
    dimension: int
    rhs: Callable[[float, np.ndarray], np.ndarray]
    jacobian: Optional[Callable[[float, np.ndarray], np.ndarray]] = None

    def g(self, t: float, y: np.ndarray) -> np.ndarray:
        out = np.atleast_1d(np.asarray(self.rhs(t, y), dtype=float))
        if out.shape != (self.dimension,):
            raise ValueError(f"rhs returned shape {out.shape}, expected ({self.dimension},)")
        return out


@dataclass
class NonlinearSolveOptions:
    tolerance: float = 1e-12
    max_iterations: int = 50
    jacobian_mode: str = "analytic"

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.jacobian_mode not in ("analytic", "finite-difference"):
            raise ValueError(f"unknown jacobian_mode {self.jacobian_mode!r}")


@dataclass
class History:
    """The two most recent levels ``(t_{n-1}, y_{n-1})`` and ``(t_n, y_n)``."""

    t_nm1: float
    y_nm1: np.ndarray
    t_n: float
    y_n: np.ndarray

    def __post_init__(self):
        self.y_nm1 = np.atleast_1d(np.asarray(self.y_nm1, dtype=float))
        self.y_n = np.atleast_1d(np.asarray(self.y_n, dtype=float))
        if not self.t_n > self.t_nm1:
            raise ValueError("history times must be strictly increasing")

    @property
    def k_nm1(self) -> float:
        return self.t_n - self.t_nm1

    def advance(self, t_new: float, y_new: np.ndarray) -> "History":
        return History(self.t_n, self.y_n, t_new, y_new)


@dataclass
class RefactorizedResult:
    t: float
    y: np.ndarray
    y_be: np.ndarray
    k_be: float


def _jacobian(problem: IvpProblem, t: float, y: np.ndarray, opts: NonlinearSolveOptions) -> np.ndarray:
    if problem.jacobian is not None and opts.jacobian_mode == "analytic":
        return np.atleast_2d(np.asarray(problem.jacobian(t, y), dtype=float))
    g0 = problem.g(t, y)
    jac = np.empty((problem.dimension, problem.dimension))
    sqrt_eps = math.sqrt(np.finfo(float).eps)
    for i in range(problem.dimension):
        h = sqrt_eps * (1.0 + abs(y[i]))
        yp = y.copy()
        yp[i] += h
        jac[:, i] = (problem.g(t, yp) - g0) / h
    return jac


def _newton(residual: Callable[[np.ndarray], np.ndarray],
            jac: Callable[[np.ndarray], np.ndarray],
            x0: np.ndarray, scale: float, opts: NonlinearSolveOptions) -> np.ndarray:
    x = x0.copy()
    r = residual(x)
    target = opts.tolerance * scale
    for it in range(opts.max_iterations):
        dx = np.linalg.solve(jac(x), -r)
        x = x + dx
        r = residual(x)
        if np.linalg.norm(r) <= target and np.linalg.norm(dx) <= target:
            return x
    raise NonConvergence(opts.max_iterations, float(np.linalg.norm(r)))


def one_leg_residual(problem: IvpProblem, history: History, t_new: float,
                     y_new: np.ndarray, theta: float) -> np.ndarray:
    """``sum alpha y - khat g(t_beta, sum beta y)`` for a candidate ``y_{n+1}``."""
    c = coefficients(theta, t_new - history.t_n, history.k_nm1)
    ys = (history.y_nm1, history.y_n, y_new)
    a0, a1, a2 = c.alpha
    tb = t_beta((history.t_nm1, history.t_n, t_new), c)
    return a0 * ys[0] + a1 * ys[1] + a2 * ys[2] - c.khat * problem.g(tb, blend_beta(ys, c))


def dln_step(problem: IvpProblem, history: History, k_n: float, theta: float,
             opts: Optional[NonlinearSolveOptions] = None) -> tuple[float, np.ndarray]:
    """Advance one DLN step of size ``k_n`` by solving the one-leg equation for ``y_{n+1}``."""
    opts = opts or NonlinearSolveOptions()
    if not k_n > 0:
        raise ValueError("k_n must be positive")
    c = coefficients(theta, k_n, history.k_nm1)
    a0, a1, a2 = c.alpha
    b0, b1, b2 = c.beta
    t_new = history.t_n + k_n
    tb = t_beta((history.t_nm1, history.t_n, t_new), c)
    y_nm1, y_n = history.y_nm1, history.y_n
    known_a = a0 * y_nm1 + a1 * y_n
    known_b = b0 * y_nm1 + b1 * y_n

    def residual(y):
        return known_a + a2 * y - c.khat * problem.g(tb, known_b + b2 * y)

    def jac(y):
        return a2 * np.eye(problem.dimension) - c.khat * b2 * _jacobian(problem, tb, known_b + b2 * y, opts)

    y_new = _newton(residual, jac, y_n, 1.0 + np.linalg.norm(y_n), opts)
    return t_new, y_new


def refactorized_step(problem: IvpProblem, history: History, k_n: float, theta: float,
                      opts: Optional[NonlinearSolveOptions] = None) -> RefactorizedResult:
    """Advance one DLN step through pre-filter, BE-like solve at ``t_{n,beta}``, post-filter."""
    opts = opts or NonlinearSolveOptions()
    if not k_n > 0:
        raise ValueError("k_n must be positive")
    c = coefficients(theta, k_n, history.k_nm1)
    b0, b1, b2 = c.beta
    t_new = history.t_n + k_n
    tb = t_beta((history.t_nm1, history.t_n, t_new), c)
    w0, w1 = c.old_weights
    y_old = w1 * history.y_n + w0 * history.y_nm1
    k_be = c.k_be

    def residual(w):
        return w - y_old - k_be * problem.g(tb, w)

    def jac(w):
        return np.eye(problem.dimension) - k_be * _jacobian(problem, tb, w, opts)

    y_be = _newton(residual, jac, y_old, 1.0 + np.linalg.norm(history.y_n), opts)
    y_new = (y_be - b1 * history.y_n - b0 * history.y_nm1) / b2
    return RefactorizedResult(t_new, y_new, y_be, k_be)


@dataclass
class Trajectory:
    t: list[float] = field(default_factory=list)
    y: list[np.ndarray] = field(default_factory=list)

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.t), np.vstack(self.y)


def integrate(problem: IvpProblem, t0: float, y0, y1, grid: Sequence[float], theta: float,
              opts: Optional[NonlinearSolveOptions] = None, *, k0: float,
              refactorized: bool = False) -> Trajectory:
    """Run DLN from levels ``y0`` at ``t0`` and ``y1`` at ``t0 + k0`` over the steps in ``grid``.

    Each entry of ``grid`` produces one new level, so an empty grid returns
    the two starting levels unchanged.
    """
    hist = History(t0, y0, t0 + k0, y1)
    traj = Trajectory([hist.t_nm1, hist.t_n], [hist.y_nm1, hist.y_n])
    for k in grid:
        if refactorized:
            res = refactorized_step(problem, hist, k, theta, opts)
            t_new, y_new = res.t, res.y
        else:
            t_new, y_new = dln_step(problem, hist, k, theta, opts)
        traj.t.append(t_new)
        traj.y.append(y_new)
        hist = hist.advance(t_new, y_new)
    return traj
