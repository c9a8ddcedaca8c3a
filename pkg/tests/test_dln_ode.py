import math

import numpy as np
import pytest

from dln_ensemble.dln_core import blend_alpha, blend_beta, blend_star, coefficients, t_beta
from dln_ensemble.dln_ode import (History, IvpProblem, NonConvergence, NonlinearSolveOptions,
                                  dln_step, integrate, one_leg_residual, refactorized_step)

PATTERN = np.array([1.0, 1.7, 0.6, 1.2, 0.9])


def patterned_grid(h, t_end=1.0):
    """Bounded-ratio non-uniform grid: a fixed step pattern scaled by ``h``."""
    base = np.tile(PATTERN, int(math.ceil(t_end / (h * PATTERN.sum()))) + 1) * h
    t = np.concatenate([[0.0], np.cumsum(base)])
    return t[t <= t_end + 1e-12]


def consistency_errors(theta, h):
    """Max defects of the three blends applied to samples of a smooth function."""
    u = lambda t: np.sin(2 * t) + np.exp(0.5 * t)
    du = lambda t: 2 * np.cos(2 * t) + 0.5 * np.exp(0.5 * t)
    t = patterned_grid(h)
    eb = es = ea = 0.0
    for n in range(1, len(t) - 1):
        ts = t[n - 1:n + 2]
        c = coefficients(theta, ts[2] - ts[1], ts[1] - ts[0])
        ys = [np.atleast_1d(u(s)) for s in ts]
        tb = t_beta(ts, c)
        eb = max(eb, abs(blend_beta(ys, c)[0] - u(tb)))
        es = max(es, abs(blend_star(ys[:2], c)[0] - u(tb)))
        ea = max(ea, abs(blend_alpha(ys, c)[0] / c.khat - du(tb)))
    return eb, es, ea


@pytest.mark.parametrize("theta", [2 / 3, 2 / math.sqrt(5)])
def test_blends_are_second_order_consistent(theta):
    coarse = consistency_errors(theta, 0.02)
    fine = consistency_errors(theta, 0.01)
    for e_c, e_f in zip(coarse, fine):
        assert 1.9 <= math.log2(e_c / e_f) <= 2.1


def decay(lam=-1.0):
    return IvpProblem(1, lambda t, y: lam * y, lambda t, y: np.array([[lam]]))


def test_second_order_on_linear_decay():
    errs = []
    for N in (20, 40, 80, 160):
        k = 1.0 / N
        tr = integrate(decay(), 0.0, [1.0], [math.exp(-k)], [k] * (N - 1), 2 / 3, k0=k)
        errs.append(abs(tr.y[-1][0] - math.exp(-1.0)))
        assert tr.t[-1] == pytest.approx(1.0)
    slopes = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all((slopes > 1.9) & (slopes < 2.1))


def test_second_order_on_variable_grid():
    prob = IvpProblem(2, lambda t, y: np.array([y[1], -y[0]]))
    exact = lambda t: np.array([math.sin(t), math.cos(t)])
    errs = []
    for h in (0.02, 0.01, 0.005):
        t = patterned_grid(h)
        tr = integrate(prob, 0.0, exact(0.0), exact(t[1]), np.diff(t)[1:], 2 / math.sqrt(5),
                       NonlinearSolveOptions(jacobian_mode="finite-difference"), k0=t[1])
        errs.append(np.abs(tr.y[-1] - exact(tr.t[-1])).max())
    assert 1.8 < math.log2(errs[0] / errs[1]) < 2.2
    assert 1.8 < math.log2(errs[1] / errs[2]) < 2.2


def test_empty_grid_returns_start_levels():
    tr = integrate(decay(), 0.0, [1.0], [0.9], [], 0.5, k0=0.1)
    t, y = tr.as_arrays()
    assert np.allclose(t, [0.0, 0.1]) and np.allclose(y[:, 0], [1.0, 0.9])


@pytest.mark.parametrize("theta", [0.0, 0.4, 2 / 3, 1.0])
def test_refactorized_matches_direct_on_nonlinear_problem(theta):
    prob = IvpProblem(2, lambda t, y: np.array([-y[0] ** 3 + math.sin(t), y[0] * y[1] - 0.5 * y[1]]))
    hist = History(0.0, np.array([1.0, 0.5]), 0.07, np.array([0.97, 0.52]))
    for k in (0.03, 0.07, 0.2):
        t1, y1 = dln_step(prob, hist, k, theta)
        res = refactorized_step(prob, hist, k, theta)
        assert res.t == t1
        assert np.allclose(res.y, y1, rtol=1e-11, atol=1e-13)
        c = coefficients(theta, k, hist.k_nm1)
        assert res.k_be == pytest.approx(c.beta[2] / c.alpha[2] * c.khat)
        assert np.abs(one_leg_residual(prob, hist, t1, y1, theta)).max() < 1e-11


def test_finite_difference_jacobian_agrees_with_analytic():
    prob = IvpProblem(1, lambda t, y: -5 * y + y ** 2, lambda t, y: np.array([[-5 + 2 * y[0]]]))
    hist = History(0.0, [0.3], 0.1, [0.2])
    _, a = dln_step(prob, hist, 0.1, 0.5)
    _, b = dln_step(prob, hist, 0.1, 0.5, NonlinearSolveOptions(jacobian_mode="finite-difference"))
    assert np.allclose(a, b, atol=1e-11)


def test_newton_failure_is_reported():
    prob = IvpProblem(1, lambda t, y: np.exp(50 * y))
    with pytest.raises(NonConvergence):
        dln_step(prob, History(0.0, [0.0], 0.1, [0.5]), 1.0, 0.5,
                 NonlinearSolveOptions(max_iterations=3, jacobian_mode="finite-difference"))


def test_bad_inputs():
    with pytest.raises(ValueError):
        History(0.1, [0.0], 0.1, [0.0])
    with pytest.raises(ValueError):
        dln_step(decay(), History(0.0, [1.0], 0.1, [0.9]), 0.0, 0.5)
    with pytest.raises(ValueError):
        NonlinearSolveOptions(jacobian_mode="secant")
    with pytest.raises(ValueError):
        IvpProblem(2, lambda t, y: y[:1]).g(0.0, np.zeros(2))
