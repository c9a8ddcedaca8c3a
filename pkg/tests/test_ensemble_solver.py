import math

import numpy as np
import pytest

from dln_ensemble.adaptivity import InstabilityError
from dln_ensemble.dln_core import coefficients, g_identity_terms, t_beta
from dln_ensemble.ensemble_solver import (EnsembleSolver, EnsembleState, NsePhysics, cfl_indicator,
                                          dln_ensemble_step, ensemble_mean_star, initialize_from_exact,
                                          refactorized_ensemble_step, semi_implicit_dln_step,
                                          write_step_csv)
from dln_ensemble.experiments.manufactured import ManufacturedSolution
from dln_ensemble.fem2d import build_spaces

THETA = 2 / 3


@pytest.fixture(scope="module")
def S():
    return build_spaces(4)


def bubble(a, b=0.0):
    """Velocity vanishing on the boundary, with a shape parameter ``b``."""
    def f(x, y):
        s = np.sin(np.pi * x) ** 2, np.sin(np.pi * y) ** 2
        return (a * s[0] * np.sin(2 * np.pi * y) + b * s[0] * s[1],
                -a * np.sin(2 * np.pi * x) * s[1] + b * x * s[0] * s[1])
    return f


def bubble_state(S, amps, shapes, t=0.0, k=0.01):
    u0 = np.array([S.interpolate_velocity(bubble(a, b)) for a, b in zip(amps, shapes)])
    u1 = 0.97 * u0
    p = np.zeros((len(amps), S.n_pressure))
    return EnsembleState(u0, u1, p, p.copy(), t, t + k)


def tg_problem(S, J=3, nu=5e-3, k=0.01):
    ms = ManufacturedSolution("sin", omega=10, nu=nu, deltas=np.linspace(-0.01, 0.01, J))
    phys = NsePhysics(nu, ms.forcing, ms.velocity)
    return ms, phys, initialize_from_exact(ms.velocity, ms.pressure, S, J, 0.1, k)


def test_state_validation(S):
    u = np.zeros((2, S.n_velocity))
    p = np.zeros((2, S.n_pressure))
    with pytest.raises(ValueError):
        EnsembleState(u, u, p, p, 1.0, 1.0)
    with pytest.raises(ValueError):
        EnsembleState(u, u[:1], p, p, 0.0, 1.0)
    with pytest.raises(ValueError):
        NsePhysics(0.0)
    st = EnsembleState(u, u, p, p, 0.0, 0.5)
    assert st.J == 2 and st.k_nm1 == 0.5
    with pytest.raises(ValueError):
        st.check_spaces(build_spaces(3))


def test_mean_star_examples(S):
    c = coefficients(THETA, 0.1, 0.1)
    u = np.ones((2, S.n_velocity))
    st = EnsembleState(u, np.stack([2 * u[0], 4 * u[0]]), np.zeros((2, S.n_pressure)),
                       np.zeros((2, S.n_pressure)), 0.0, 0.1)
    # the extrapolation is exact for data linear in time, evaluated at t_beta
    s = (t_beta([0.0, 0.1, 0.2], c) - 0.1) / 0.1
    assert np.allclose(ensemble_mean_star(st, c), 0.5 * ((2 + s) + (4 + 3 * s)), atol=1e-14)


def test_zero_solution_persists(S):
    st = bubble_state(S, [0.0, 0.0], [0.0, 0.0])
    new, info = EnsembleSolver(S, NsePhysics(1e-2), THETA).step(st, 0.01)
    assert np.abs(new.u_n).max() == 0.0 and np.abs(new.p_n).max() < 1e-14
    assert np.all(info.energies == 0)


def test_identical_members_stay_identical_and_match_single_run(S):
    ms, phys, st1 = tg_problem(S, J=1)
    stJ = EnsembleState(*(np.repeat(a, 2, axis=0) for a in (st1.u_nm1, st1.u_n, st1.p_nm1, st1.p_n)),
                        st1.t_nm1, st1.t_n)
    ms2 = ManufacturedSolution("sin", omega=10, nu=5e-3, deltas=[ms.deltas[0]] * 2)
    solJ = EnsembleSolver(S, NsePhysics(5e-3, ms2.forcing, ms2.velocity), THETA)
    sol1 = EnsembleSolver(S, phys, THETA)
    for k in (0.01, 0.015, 0.008):
        stJ, _ = solJ.step(stJ, k)
        st1, _ = sol1.step(st1, k)
        assert np.abs(stJ.u_n[0] - stJ.u_n[1]).max() <= 1e-12 * np.abs(stJ.u_n).max()
        assert np.allclose(stJ.u_n[0], st1.u_n[0], rtol=0, atol=1e-12 * np.abs(st1.u_n).max())


def test_single_member_equals_semi_implicit_step(S):
    ms, phys, st = tg_problem(S, J=1)
    for k in (0.01, 0.02):
        new = dln_ensemble_step(st, phys, S, THETA, k)
        u, p = semi_implicit_dln_step(st.u_nm1[0], st.u_n[0], st.p_nm1[0], st.p_n[0],
                                      st.t_nm1, st.t_n, k, phys, S, THETA)
        assert np.abs(new.u_n[0] - u).max() <= 1e-11 * np.abs(u).max()
        assert np.abs(new.p_n[0] - p).max() <= 1e-11 * np.abs(p).max()
        st = new


def test_refactorized_path_matches_direct(S):
    ms, phys, st = tg_problem(S, J=3)
    a = dln_ensemble_step(st, phys, S, 2 / math.sqrt(5), 0.013)
    b = refactorized_ensemble_step(st, phys, S, 2 / math.sqrt(5), 0.013)
    assert np.abs(a.u_n - b.u_n).max() <= 1e-11 * np.abs(a.u_n).max()
    assert np.abs(a.p_n - b.p_n).max() <= 1e-10 * np.abs(a.p_n).max()


def test_member_permutation_equivariance(S):
    ms, phys, st = tg_problem(S, J=3)
    sol = EnsembleSolver(S, phys, THETA)
    a, _ = sol.step(st, 0.01)
    order = [2, 0, 1]
    perm_ms = ManufacturedSolution("sin", omega=10, nu=5e-3, deltas=ms.deltas[order])
    b, _ = EnsembleSolver(S, NsePhysics(5e-3, perm_ms.forcing, perm_ms.velocity), THETA).step(
        st.permuted(order), 0.01)
    assert np.allclose(a.u_n[order], b.u_n, atol=1e-13 * np.abs(a.u_n).max())


def test_blended_velocity_is_discretely_divergence_free(S):
    ms, phys, st = tg_problem(S, J=2)
    k = 0.012
    new = dln_ensemble_step(st, phys, S, THETA, k)
    c = coefficients(THETA, k, st.k_nm1)
    b0, b1, b2 = c.beta
    u_beta = b2 * new.u_n + b1 * st.u_n + b0 * st.u_nm1
    assert np.abs(S.divergence @ u_beta.T).max() < 1e-12


@pytest.mark.parametrize("J", [1, 3])
def test_discrete_energy_balance(S, J):
    # no forcing, no-slip walls: the G-identity turns the step into an exact energy balance
    nu = 1e-2
    st = bubble_state(S, np.linspace(1.0, 1.3, J), np.linspace(0.0, 0.5, J))
    sol = EnsembleSolver(S, NsePhysics(nu), THETA)
    inner = lambda a, b: float(a @ (S.mass @ b))
    for k in (0.01, 0.02, 0.013):
        c = coefficients(THETA, k, st.k_nm1)
        new, _ = sol.step(st, k)
        stars = c.star[1] * st.u_n + c.star[0] * st.u_nm1
        fluct = S.convection_actions(stars - stars.mean(axis=0), stars)
        for j in range(J):
            ys = (st.u_nm1[j], st.u_n[j], new.u_n[j])
            terms = g_identity_terms(ys, c, inner)
            u_beta = c.beta[0] * ys[0] + c.beta[1] * ys[1] + c.beta[2] * ys[2]
            lhs = (terms["g_new"] - terms["g_old"] + terms["dissipation"]) / c.khat
            rhs = -nu * float(u_beta @ (S.stiffness @ u_beta)) - float(u_beta @ fluct[j])
            assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-12)
            if J == 1:
                assert terms["g_new"] <= terms["g_old"] + 1e-15
        st = new


def test_counters_one_factorization_per_step(S):
    ms, phys, st = tg_problem(S, J=4)
    sol = EnsembleSolver(S, phys, THETA)
    for n in range(3):
        st, info = sol.step(st, 0.01, refactorized=bool(n % 2))
        assert info.factorizations == 1 and info.solved_columns == 4
    assert sol.counters.factorizations == 3
    assert sol.counters.solved_columns >= 12


def test_cfl_indicator(S):
    st = bubble_state(S, [1.0, 1.0], [0.0, 0.0])
    c = coefficients(THETA, 0.01, 0.01)
    ind = cfl_indicator(st, c, S, 1e-2)
    assert ind.max == 0.0 and ind.ratio_factor == pytest.approx(1.0) and not ind.degenerate
    st = bubble_state(S, [1.0, 2.0], [0.0, 0.0])
    ind = cfl_indicator(st, c, S, 1e-2)
    assert ind.values[0] == pytest.approx(ind.values[1]) and ind.max > 0
    c2 = coefficients(THETA, 0.03, 0.01)
    eps = 0.5
    assert cfl_indicator(st, c2, S, 1e-2).ratio_factor == pytest.approx(((1 + eps * THETA) / (1 - eps)) ** 2)


def test_initialize_from_exact(S):
    ms, phys, st = tg_problem(S, J=2, k=0.02)
    assert st.t_nm1 == 0.1 and st.t_n == pytest.approx(0.12)
    assert S.l2_error(st.u_n[1], lambda x, y: ms.velocity(1, x, y, 0.12)) < 1e-2
    assert abs(S.pressure_mean @ st.p_n[0]) < 1e-14


def test_non_finite_state_raises(S):
    st = bubble_state(S, [1.0], [0.0])
    st.u_n[0, 3] = np.nan
    with pytest.raises(InstabilityError):
        EnsembleSolver(S, NsePhysics(1e-2), THETA).step(st, 0.01)


def test_bad_step_size(S):
    st = bubble_state(S, [1.0], [0.0])
    with pytest.raises(ValueError):
        EnsembleSolver(S, NsePhysics(1e-2), THETA).step(st, 0.0)


def test_step_csv(S, tmp_path):
    ms, phys, st = tg_problem(S, J=2)
    sol = EnsembleSolver(S, phys, THETA)
    infos = []
    for _ in range(2):
        st, info = sol.step(st, 0.01)
        infos.append(info)
    lines = write_step_csv(infos, tmp_path / "steps.csv").read_text().splitlines()
    assert lines[0].split(",")[-2:] == ["energy_1", "energy_2"]
    assert len(lines) == 3
