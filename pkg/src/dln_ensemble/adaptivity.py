"""Local-truncation-error estimation and step-size control for DLN runs.

The estimator compares the DLN solution with an explicit AB2-like predictor
assembled from DLN divided differences of the four most recent levels.  The
controller is the classical cube-root law with growth capped at 1.5 and
shrinkage floored at 0.2 per step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .dln_core import DlnCoefficients, blend_alpha, coefficients, t_beta

logger = logging.getLogger(__name__)

__all__ = [
    "AdaptiveConfig",
    "InsufficientHistory",
    "InstabilityError",
    "LteEstimate",
    "RunReport",
    "StallError",
    "StepRecord",
    "ab2_like_predict",
    "adaptive_loop",
    "estimator_factor",
    "g_coefficient",
    "lte_estimate",
    "next_step",
    "r_coefficient",
]

GROW_CAP = 1.5
SHRINK_FLOOR = 0.2


class InsufficientHistory(ValueError):
    pass


class StallError(RuntimeError):
    """A rejection asked for a step below ``k_min``."""


class InstabilityError(FloatingPointError):
    """Raised by steppers when the discrete solution is no longer finite."""


@dataclass
class AdaptiveConfig:
    tol: float = 1e-4
    kappa: float = 0.95
    k_min: float = 1e-6
    k_max: float = 1e-4
    grow_cap: float = GROW_CAP
    shrink_floor: float = SHRINK_FLOOR
    # "accept": take the step at k_min and keep going; "raise": StallError
    on_stall: str = "accept"

    def __post_init__(self):
        if not (0 < self.k_min <= self.k_max):
            raise ValueError(f"need 0 < k_min <= k_max, got {self.k_min}, {self.k_max}")
        if not (0 < self.kappa <= 1):
            raise ValueError(f"safety factor must lie in (0, 1], got {self.kappa}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.on_stall not in ("accept", "raise"):
            raise ValueError(f"unknown on_stall policy {self.on_stall!r}")


@dataclass(frozen=True)
class LteEstimate:
    value: float
    per_member: tuple[float, ...]


def _history_coefficients(ts: Sequence[float], theta: float) -> tuple[DlnCoefficients, DlnCoefficients]:
    t3, t2, t1, t0 = ts  # t_{n-3}, t_{n-2}, t_{n-1}, t_n
    c_nm1 = coefficients(theta, t0 - t1, t1 - t2)
    c_nm2 = coefficients(theta, t1 - t2, t2 - t3)
    return c_nm1, c_nm2


def ab2_like_predict(ys: Sequence, ts: Sequence[float], k_n: float, theta: float) -> np.ndarray:
    """Explicit AB2-like value at ``t_n + k_n``.

    Parameters
    ----------
    ys
        Four levels ``(y_{n-3}, y_{n-2}, y_{n-1}, y_n)``, oldest first.
    ts
        Their times, strictly increasing.
    k_n
        The step to predict over.
    theta
        DLN parameter used to produce the levels.
    """
    if len(ys) < 4 or len(ts) < 4:
        raise InsufficientHistory("the AB2-like predictor needs four previous levels")
    ys = [np.asarray(y, dtype=float) for y in ys[-4:]]
    ts = [float(t) for t in ts[-4:]]
    c_nm1, c_nm2 = _history_coefficients(ts, theta)
    tb1 = t_beta(ts[1:4], c_nm1)
    tb2 = t_beta(ts[0:3], c_nm2)
    slope1 = blend_alpha(ys[1:4], c_nm1) / c_nm1.khat
    slope2 = blend_alpha(ys[0:3], c_nm2) / c_nm2.khat
    t_n = ts[3]
    t_new = t_n + k_n
    s = t_new + t_n
    return ys[3] + k_n / (2.0 * (tb1 - tb2)) * ((s - 2.0 * tb2) * slope1 - (s - 2.0 * tb1) * slope2)


def g_coefficient(c_n: DlnCoefficients, tau_n: Optional[float] = None) -> float:
    """Leading error constant of the DLN step ending at ``t_{n+1}``."""
    tau = c_n.ratio if tau_n is None else tau_n
    if tau == 0:
        raise ZeroDivisionError("step ratio must be non-zero")
    a0, _, a2 = c_n.alpha
    b0, _, b2 = c_n.beta
    inv = 1.0 / tau
    return (0.5 - a0 / (2.0 * a2) * inv) * (b2 - b0 * inv) ** 2 + a0 / (6.0 * a2) * inv ** 3 - 1.0 / 6.0


def r_coefficient(c_nm1: DlnCoefficients, c_nm2: DlnCoefficients, tau_n: float,
                  tau_nm1: Optional[float] = None, tau_nm2: Optional[float] = None) -> float:
    """Error constant of the AB2-like predictor.

    ``c_nm1`` and ``c_nm2`` are the coefficient records of the steps ending at
    ``t_n`` and ``t_{n-1}``; the ratios default to the ones stored in them.
    """
    t1 = c_nm1.ratio if tau_nm1 is None else tau_nm1
    t2 = c_nm2.ratio if tau_nm2 is None else tau_nm2
    if 0 in (tau_n, t1, t2):
        raise ZeroDivisionError("step ratios must be non-zero")
    i0, i1, i2 = 1.0 / tau_n, 1.0 / t1, 1.0 / t2
    b0m1, _, b2m1 = c_nm1.beta
    b0m2, _, b2m2 = c_nm2.beta
    first = 3.0 * i0 * (1.0 - b2m2 * i1 + b0m2 * i2 * i1) * (1.0 - b2m1 * i0 + b0m1 * i1 * i0)
    second = 3.0 * i0 * (1.0 + i0 - b2m2 * i1 * i0 + b0m2 * i2 * i1 * i0) * (-b2m1 + b0m1 * i1)
    return (2.0 + first + second) / 12.0


def estimator_factor(ts: Sequence[float], k_n: float, theta: float) -> float:
    """``|G| / |G + R|`` for the step of size ``k_n`` after levels at ``ts``."""
    c_nm1, c_nm2 = _history_coefficients([float(t) for t in ts[-4:]], theta)
    c_n = coefficients(theta, k_n, c_nm1.k_n)
    g = g_coefficient(c_n)
    r = r_coefficient(c_nm1, c_nm2, c_n.ratio)
    return abs(g) / abs(g + r)


def _euclid(v: np.ndarray) -> float:
    return float(np.linalg.norm(v))


def lte_estimate(y_dln: Sequence, y_ab2: Sequence, g: float, r: float,
                 norm: Callable[[np.ndarray], float] = _euclid) -> LteEstimate:
    """Relative LTE estimate, maximized over ensemble members.

    ``y_dln`` and ``y_ab2`` hold one vector per member.  ``norm`` defaults to the
    Euclidean norm; finite-element callers pass the mass-weighted L2 norm.
    """
    factor = abs(g) / abs(g + r)
    vals = []
    for yd, ya in zip(y_dln, y_ab2, strict=True):
        yd = np.asarray(yd, dtype=float)
        den = norm(yd)
        if den == 0.0 or not math.isfinite(den):
            raise ZeroDivisionError("DLN solution has zero (or non-finite) norm; relative estimate undefined")
        vals.append(factor * norm(yd - np.asarray(ya, dtype=float)) / den)
    return LteEstimate(max(vals), tuple(vals))


def controller_factor(estimate: float, config: AdaptiveConfig) -> float:
    if estimate < 0:
        raise ValueError("estimate must be non-negative")
    if estimate == 0.0:
        return config.grow_cap
    raw = config.kappa * (config.tol / estimate) ** (1.0 / 3.0)
    return min(config.grow_cap, max(config.shrink_floor, raw))


def next_step(k_n: float, estimate: float, config: AdaptiveConfig) -> float:
    """Proposed next step, clamped to ``[k_min, k_max]``."""
    k = k_n * controller_factor(estimate, config)
    return min(config.k_max, max(config.k_min, k))


@dataclass
class StepRecord:
    n: int
    t: float
    k: float
    estimate: float
    accepted: bool
    rejections: int
    forced: bool = False


@dataclass
class RunReport:
    records: list[StepRecord] = field(default_factory=list)
    times: list[float] = field(default_factory=list)
    steps: int = 0
    rejections: int = 0
    forced_accepts: int = 0
    aborted: bool = False
    abort_reason: str = ""
    final_states: list[Any] = field(default_factory=list)

    @property
    def total_cost(self) -> int:
        return self.steps + self.rejections

    @property
    def step_sizes(self) -> np.ndarray:
        return np.diff(np.asarray(self.times))

    def accepted(self) -> list[StepRecord]:
        return [r for r in self.records if r.accepted]

    CSV_HEADER = ("n", "t", "k_n", "estimate", "accepted", "rejections", "forced")

    def csv_rows(self):
        for r in self.records:
            yield (r.n, r.t, r.k, r.estimate, int(r.accepted), r.rejections, int(r.forced))


StepFn = Callable[[Any, Any, float, float, float], Any]


def adaptive_loop(step: StepFn, states: Sequence[Any], times: Sequence[float], t_end: float,
                  theta: float, config: AdaptiveConfig,
                  members: Callable[[Any], Sequence[np.ndarray]] = lambda s: s,
                  norm: Callable[[np.ndarray], float] = _euclid,
                  on_accept: Optional[Callable[[Any, float, float, Optional[LteEstimate]], None]] = None,
                  max_attempts: int = 10_000_000) -> RunReport:
    """Drive ``step`` from ``t = times[-1]`` to ``t_end`` with LTE-based step control.

    Parameters
    ----------
    step
        ``step(state_nm1, state_n, t_nm1, t_n, k) -> state_{n+1}``.  Must raise
        :class:`InstabilityError` when the new state is not finite.
    states, times
        At least two starting levels.  Until four levels exist, steps of size
        ``k_min`` are taken and accepted without estimation.
    members
        Maps a state to the per-member vectors entering the estimator.
    on_accept
        Called as ``on_accept(state, t, k, estimate)`` after each accepted step.
    """
    if len(states) < 2 or len(states) != len(times):
        raise InsufficientHistory("need at least two starting levels with matching times")
    hist = list(states[-4:])
    ts = [float(t) for t in times[-4:]]
    report = RunReport(times=list(ts))
    n = len(ts) - 1
    k = config.k_min
    rejections_here = 0
    force_next = False
    scale_end = max(abs(t_end), 1.0) * 1e-13
    attempts = 0

    while ts[-1] < t_end - scale_end:
        attempts += 1
        if attempts > max_attempts:
            raise RuntimeError("adaptive loop exceeded max_attempts")
        k_try = min(k, t_end - ts[-1])
        try:
            new = step(hist[-2], hist[-1], ts[-2], ts[-1], k_try)
        except InstabilityError as exc:
            report.aborted = True
            report.abort_reason = str(exc)
            logger.warning("run aborted at t=%.6g: %s", ts[-1], exc)
            break

        est = None
        if len(hist) >= 4:
            ab2 = [ab2_like_predict([members(s)[j] for s in hist[-4:]], ts[-4:], k_try, theta)
                   for j in range(len(members(new)))]
            c_nm1, c_nm2 = _history_coefficients(ts[-4:], theta)
            c_n = coefficients(theta, k_try, c_nm1.k_n)
            try:
                est = lte_estimate(members(new), ab2, g_coefficient(c_n),
                                   r_coefficient(c_nm1, c_nm2, c_n.ratio), norm)
            except ZeroDivisionError:
                est = LteEstimate(math.inf, ())

        if est is None or est.value < config.tol or force_next or k_try <= config.k_min:
            forced = est is not None and not est.value < config.tol
            if forced:
                report.forced_accepts += 1
                logger.warning("accepting step at t=%.6g with k=%.3g despite estimate %.3g >= tol",
                               ts[-1], k_try, est.value)
            n += 1
            report.records.append(StepRecord(n, ts[-1] + k_try, k_try,
                                             est.value if est else float("nan"),
                                             True, rejections_here, forced))
            t_new = ts[-1] + k_try
            hist = (hist + [new])[-4:]
            ts = (ts + [t_new])[-4:]
            report.times.append(t_new)
            report.steps += 1
            if on_accept is not None:
                on_accept(new, t_new, k_try, est)
            rejections_here = 0
            force_next = False
            k = config.k_min if est is None else next_step(k_try, est.value, config)
        else:
            report.records.append(StepRecord(n + 1, ts[-1] + k_try, k_try, est.value,
                                             False, rejections_here + 1))
            report.rejections += 1
            rejections_here += 1
            k_new = k_try * controller_factor(est.value, config)
            if k_new < config.k_min:
                if config.on_stall == "raise":
                    raise StallError(f"rejection at t={ts[-1]:.6g} requests k={k_new:.3g} < k_min")
                k_new = config.k_min
                force_next = True
            k = k_new

    report.final_states = hist
    return report
