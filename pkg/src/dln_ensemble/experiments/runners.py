"""Convergence, efficiency and adaptive-versus-constant experiments on Taylor-Green problems."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..adaptivity import AdaptiveConfig, InstabilityError, RunReport, adaptive_loop
from ..dln_core import coefficients
from ..ensemble_solver import (EnsembleSolver, EnsembleState, NsePhysics, StepInfo,
                               initialize_from_exact, write_step_csv)
from ..fem2d.linalg import SolverCounters
from ..fem2d.spaces import TaylorHood, build_spaces
from .config import ExperimentConfig
from .diagnostics import EnergyDiagnostics, ErrorAccumulator, ErrorReport, EnergyRow, rate_table
from .manufactured import ManufacturedSolution, PerturbationSet

logger = logging.getLogger(__name__)


def _physics(ms: ManufacturedSolution) -> NsePhysics:
    return NsePhysics(ms.nu, ms.forcing, ms.velocity)


def _write_csv(path: Path, header: Sequence[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow(r)
    return path


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


@dataclass
class ConstantRun:
    errors: Optional[ErrorReport]
    infos: list[StepInfo]
    counters: SolverCounters
    assembly_time: float
    wall_time: float
    steps: int
    aborted: bool = False
    abort_reason: str = ""
    energy: list[EnergyRow] = field(default_factory=list)
    final_time: float = math.nan


def run_constant(spaces: TaylorHood, ms: ManufacturedSolution, theta: float, k: float,
                 t0: float, t_end: float, *, refactorized: bool = True, errors: bool = True,
                 energy: bool = False) -> ConstantRun:
    """Fixed-step ensemble run from exact data at ``t0`` and ``t0 + k``.

    Pressure errors follow the constant-step form ``sum_n k ||p_n - p_n^h||^2``
    over all levels, including the two starting levels.
    """
    n_total = int(round((t_end - t0) / k))
    if n_total < 2 or not math.isclose(n_total * k, t_end - t0, rel_tol=1e-9):
        raise ValueError("the interval must hold at least two whole steps of size k")
    solver = EnsembleSolver(spaces, _physics(ms), theta)
    state = initialize_from_exact(ms.velocity, ms.pressure, spaces, ms.J, t0, k)
    acc = ErrorAccumulator(spaces, ms) if errors else None
    diag = EnergyDiagnostics(spaces, ms.nu, ms) if energy else None
    if acc is not None:
        for t, u, p in ((state.t_nm1, state.u_nm1, state.p_nm1), (state.t_n, state.u_n, state.p_n)):
            acc.add_velocity(t, u)
            acc.add_pressure(t, p, k)
    infos: list[StepInfo] = []
    aborted, reason = False, ""
    start = time.perf_counter()
    for n in range(1, n_total):
        t_new = t0 + (n + 1) * k
        step_k = t_new - state.t_n
        try:
            new, info = solver.step(state, step_k, refactorized=refactorized)
        except InstabilityError as exc:
            aborted, reason = True, str(exc)
            logger.warning("constant run aborted at t=%.6g: %s", state.t_n, exc)
            break
        infos.append(info)
        if diag is not None:
            c = coefficients(theta, step_k, state.k_nm1)
            diag.record(new.t_n, c, state.u_nm1, state.u_n, new.u_n)
        if acc is not None:
            acc.add_velocity(new.t_n, new.u_n)
            acc.add_pressure(new.t_n, new.p_n, k)
        state = new
    wall = time.perf_counter() - start
    return ConstantRun(acc.report() if acc is not None else None, infos, solver.counters,
                       solver.assembly_time, wall, len(infos), aborted, reason,
                       diag.rows if diag is not None else [], state.t_n)


# -- convergence ---------------------------------------------------------------------

CONVERGENCE_HEADER = ("block", "h", "u_inf0", "rate_u_inf0", "u_inf1", "rate_u_inf1", "p_20", "rate_p_20")


def run_convergence(config: ExperimentConfig) -> list[ErrorReport]:
    """Errors and rates on the mesh sequence with ``k = h / 2`` over ``[t0, t_end]``."""
    deltas = PerturbationSet(config.j[0], config.delta_bound, config.seed).values
    ms = ManufacturedSolution("sin", config.omega, 1.0 / config.re, deltas)
    reports = []
    for m in config.mesh:
        spaces = build_spaces(m)
        run = run_constant(spaces, ms, config.theta, 0.5 / m, config.t0, config.t_end,
                           refactorized=config.refactorized)
        if run.aborted:
            raise InstabilityError(f"convergence run on m={m} aborted: {run.abort_reason}")
        logger.info("m=%d average L2 error %.4e", m, run.errors.mean("u_inf0"))
        reports.append(run.errors)
    if config.out_dir is not None:
        rows = []
        for block in ("member_1", "member_J", "average", "max"):
            for r in rate_table(reports, block):
                rows.append([_fmt(r[c]) for c in CONVERGENCE_HEADER])
        _write_csv(Path(config.out_dir) / "convergence.csv", CONVERGENCE_HEADER, rows)
        member_rows = []
        for rep in reports:
            for j in range(len(rep.u_l2)):
                member_rows.append([_fmt(rep.h), j + 1, _fmt(deltas[j]), _fmt(rep.u_l2[j]),
                                    _fmt(rep.u_h1[j]), _fmt(rep.p_l2[j])])
        _write_csv(Path(config.out_dir) / "convergence_members.csv",
                   ("h", "member", "delta", "u_inf0", "u_inf1", "p_20"), member_rows)
    return reports


# -- efficiency ------------------------------------------------------------------------

EFFICIENCY_HEADER = ("J", "steps", "factorizations", "solved_columns", "assembly_time", "factor_time",
                     "backsolve_time", "linear_solve_time", "wall_time", "u_inf0_mean", "u_inf1_mean",
                     "p_20_mean", "u_inf0_max", "u_inf1_max", "p_20_max")


@dataclass
class EfficiencyRow:
    J: int
    run: ConstantRun

    @property
    def linear_solve_time(self) -> float:
        return self.run.counters.factor_time + self.run.counters.solve_time

    def as_csv(self) -> list[str]:
        c, e = self.run.counters, self.run.errors
        return [_fmt(v) for v in (self.J, self.run.steps, c.factorizations, c.solved_columns,
                                  self.run.assembly_time, c.factor_time, c.solve_time,
                                  self.linear_solve_time, self.run.wall_time,
                                  e.mean("u_inf0"), e.mean("u_inf1"), e.mean("p_20"),
                                  e.max("u_inf0"), e.max("u_inf1"), e.max("p_20"))]


def run_efficiency(config: ExperimentConfig) -> list[EfficiencyRow]:
    """Timing per phase and errors for each ensemble size in ``config.j`` on ``config.mesh[0]``."""
    spaces = build_spaces(config.mesh[0])
    k = 0.5 / config.mesh[0]
    out = []
    for J in config.j:
        deltas = PerturbationSet(J, config.delta_bound, config.seed).values
        ms = ManufacturedSolution("sin", config.omega, 1.0 / config.re, deltas)
        run = run_constant(spaces, ms, config.theta, k, config.t0, config.t_end,
                           refactorized=config.refactorized)
        if run.aborted:
            raise InstabilityError(f"efficiency run with J={J} aborted: {run.abort_reason}")
        out.append(EfficiencyRow(J, run))
        if config.out_dir is not None:
            write_step_csv(run.infos, Path(config.out_dir) / f"efficiency_steps_J{J}.csv")
    if config.out_dir is not None:
        _write_csv(Path(config.out_dir) / "efficiency.csv", EFFICIENCY_HEADER, [r.as_csv() for r in out])
    return out


# -- adaptive --------------------------------------------------------------------------

SUMMARY_HEADER = ("method", "theta", "steps", "rejections", "total_cost", "forced_accepts", "aborted",
                  "final_time", "final_energy_error_mean", "final_energy_error_max", "min_step",
                  "max_estimate_accepted")


@dataclass
class AdaptiveResult:
    report: RunReport
    energy: list[EnergyRow]
    constant: Optional[ConstantRun]
    infos: list[StepInfo]
    k_min: float

    @property
    def final_energy_error(self) -> float:
        return self.energy[-1].error_mean if self.energy else math.nan

    @property
    def constant_final_energy_error(self) -> float:
        if self.constant is None or not self.constant.energy:
            return math.nan
        return self.constant.energy[-1].error_mean


def _summary_row(method: str, theta: float, steps: int, rejections: int, forced: int, aborted: bool,
                 final_time: float, energy: list[EnergyRow], k_min_seen: float, max_est: float):
    last = energy[-1] if energy else None
    return [_fmt(v) for v in (method, theta, steps, rejections, steps + rejections, forced, aborted,
                              final_time, last.error_mean if last else math.nan,
                              last.error_max if last else math.nan, k_min_seen, max_est)]


def run_adaptive(config: ExperimentConfig, matched_constant: bool = True) -> AdaptiveResult:
    """Adaptive ensemble run on a Lindberg-factor problem plus a constant run of equal total cost."""
    deltas = PerturbationSet(config.j[0], config.delta_bound, config.seed).values
    ms = ManufacturedSolution(config.variant, config.omega, 1.0 / config.re, deltas)
    spaces = build_spaces(config.mesh[0])
    solver = EnsembleSolver(spaces, _physics(ms), config.theta)
    acfg = AdaptiveConfig(tol=config.tol, kappa=config.kappa, k_min=config.kmin, k_max=config.kmax)
    theta, M = config.theta, spaces.mass
    t0, t_end = config.t0, config.t_end
    start = initialize_from_exact(ms.velocity, ms.pressure, spaces, ms.J, t0, config.kmin)
    levels = [(start.u_nm1, start.p_nm1), (start.u_n, start.p_n)]
    times = [start.t_nm1, start.t_n]
    diag = EnergyDiagnostics(spaces, ms.nu, ms)
    infos: list[StepInfo] = []
    last_info: dict = {}
    accepted = {"levels": list(levels), "times": list(times)}

    def step(l_nm1, l_n, t_nm1, t_n, k):
        st = EnsembleState(l_nm1[0], l_n[0], l_nm1[1], l_n[1], t_nm1, t_n)
        new, info = solver.step(st, k, refactorized=config.refactorized)
        last_info["info"] = info
        return new.u_n, new.p_n

    def on_accept(level, t, k, est):
        prev, ts = accepted["levels"], accepted["times"]
        c = coefficients(theta, k, ts[-1] - ts[-2])
        diag.record(t, c, prev[-2][0], prev[-1][0], level[0])
        infos.append(last_info["info"])
        accepted["levels"] = [prev[-1], level]
        accepted["times"] = [ts[-1], t]

    def mass_norm(v):
        return math.sqrt(max(float(v @ (M @ v)), 0.0))

    report = adaptive_loop(step, levels, times, t_end, theta, acfg,
                           members=lambda level: list(level[0]), norm=mass_norm,
                           on_accept=on_accept)
    constant = None
    if matched_constant:
        k_const = (t_end - t0) / report.total_cost
        constant = run_constant(spaces, ms, theta, k_const, t0, t_end,
                                refactorized=config.refactorized, errors=False, energy=True)
    result = AdaptiveResult(report, diag.rows, constant, infos, config.kmin)
    if config.out_dir is not None:
        out = Path(config.out_dir)
        _write_csv(out / "adaptive_steps.csv", RunReport.CSV_HEADER,
                   ([_fmt(v) for v in r] for r in report.csv_rows()))
        _write_csv(out / "adaptive_energy.csv", EnergyRow.HEADER, (r.as_csv() for r in diag.rows))
        write_step_csv(infos, out / "adaptive_solver_steps.csv")
        acc = report.accepted()
        est = [r.estimate for r in acc if not math.isnan(r.estimate)]
        rows = [_summary_row("adaptive", theta, report.steps, report.rejections, report.forced_accepts,
                             report.aborted, report.times[-1], diag.rows,
                             float(np.min(report.step_sizes)), max(est) if est else math.nan)]
        if constant is not None:
            _write_csv(out / "constant_energy.csv", EnergyRow.HEADER,
                       (r.as_csv() for r in constant.energy))
            rows.append(_summary_row("constant", theta, constant.steps + 1, 0, 0, constant.aborted,
                                     constant.final_time, constant.energy,
                                     (t_end - t0) / report.total_cost, math.nan))
        _write_csv(out / "adaptive_summary.csv", SUMMARY_HEADER, rows)
    return result
