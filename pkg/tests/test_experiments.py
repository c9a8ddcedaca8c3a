import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dln_ensemble.experiments import (ErrorReport, ManufacturedSolution, PerturbationSet, build_config,
                                      lindberg_time_factor, rate, rate_table, read_config_file)
from dln_ensemble.experiments.cli import main
from dln_ensemble.experiments.config import parse_int_list, parse_real


def fd_residual(ms, j, x, y, t, h=1e-4):
    """``u_t + (u.grad)u - nu lap u + grad p`` by central differences of the exact fields."""
    u = lambda x, y, t: np.array(ms.velocity(j, x, y, t))
    p = lambda x, y: ms.pressure(j, x, y, t)
    ht = h * 1e-2
    ut = (u(x, y, t + ht) - u(x, y, t - ht)) / (2 * ht)
    ux = (u(x + h, y, t) - u(x - h, y, t)) / (2 * h)
    uy = (u(x, y + h, t) - u(x, y - h, t)) / (2 * h)
    lap = (u(x + h, y, t) + u(x - h, y, t) + u(x, y + h, t) + u(x, y - h, t) - 4 * u(x, y, t)) / h ** 2
    px = (p(x + h, y) - p(x - h, y)) / (2 * h)
    py = (p(x, y + h) - p(x, y - h)) / (2 * h)
    v = u(x, y, t)
    return ut + v[0] * ux + v[1] * uy - ms.nu * lap + np.array([px, py])


@pytest.mark.parametrize("variant,omega,t", [("sin", 10.0, 0.37), ("lindberg2", 3.1, 1.595),
                                             ("lindberg1", 3.1, 1.59)])
def test_forcing_matches_finite_differences(variant, omega, t):
    ms = ManufacturedSolution(variant, omega, 5e-3, deltas=[-0.05, 0.08])
    r = np.random.default_rng(3)
    x, y = r.uniform(0.05, 0.95, (2, 100))
    for j in range(2):
        f = np.array(ms.forcing(j, x, y, t))
        fd = fd_residual(ms, j, x, y, t)
        scale = max(1.0, np.abs(f).max())
        assert np.abs(f - fd).max() <= 5e-6 * scale


def test_forcing_scaling_structure():
    # member forcing splits into a part linear in s and a quadratic part in s
    ms = ManufacturedSolution("sin", 10.0, 1e-2, deltas=[0.0, 0.1, -0.2])
    x, y, t = np.array([0.3]), np.array([0.6]), 0.2
    f = [np.array(ms.forcing(j, x, y, t)).ravel() for j in range(3)]
    s = np.array([1.0, 1.1, 0.8])
    # fit a + b s + c s^2 through three members, then check a pure-pressure intercept
    V = np.vander(s, 3, increasing=True)
    coef = np.linalg.solve(V, np.array(f))
    P = math.sin(10 * t) ** 2
    assert np.allclose(coef[0], 0.5 * math.pi * P * np.array([math.sin(2 * math.pi * 0.3),
                                                           math.sin(2 * math.pi * 0.6)]))


def test_velocity_is_solenoidal_and_gradient_consistent():
    ms = ManufacturedSolution("sin", 10.0, 1e-2, deltas=[0.3])
    x, y, t, h = 0.21, 0.73, 0.4, 1e-6
    g = ms.velocity_grad(0, x, y, t)
    assert g[0, 0] + g[1, 1] == pytest.approx(0.0, abs=1e-14)
    fd = (np.array(ms.velocity(0, x + h, y, t)) - np.array(ms.velocity(0, x - h, y, t))) / (2 * h)
    assert np.allclose(g[:, 0], fd, atol=1e-8)


def test_kinetic_energy_closed_form():
    ms = ManufacturedSolution("sin", 10.0, 1e-2, deltas=[0.0, 0.2])
    t = 0.13
    # 1/2 int (cos^2 sin^2 + sin^2 cos^2) = 1/4
    assert ms.kinetic_energy(0, t) == pytest.approx(0.25 * math.sin(10 * t) ** 2)
    x, w = np.polynomial.legendre.leggauss(12)
    x, w = 0.5 * (x + 1), 0.5 * w
    X, Y = np.meshgrid(x, x, indexing="ij")
    u1, u2 = ms.velocity(1, X, Y, t)
    assert ms.kinetic_energy(1, t) == pytest.approx(0.5 * float(np.sum(np.outer(w, w) * (u1 ** 2 + u2 ** 2))),
                                                    rel=1e-12)


def test_lindberg_start_and_profile():
    assert lindberg_time_factor(1, 3.1, 0.0) == pytest.approx(1.0)
    assert lindberg_time_factor(2, 3.1, 0.0) == pytest.approx(1.0)
    # qualitative landmarks of the stiff profiles
    assert lindberg_time_factor(2, 3.1, 1.598) == pytest.approx(16, rel=0.15)
    assert lindberg_time_factor(2, 3.1, 1.602) == pytest.approx(-700, rel=0.15)
    assert lindberg_time_factor(1, 3.1, 1.6015) == pytest.approx(300, rel=0.15)
    assert lindberg_time_factor(1, 3.1, 1.6032) == pytest.approx(-200, rel=0.15)


@pytest.mark.parametrize("which", [1, 2])
def test_lindberg_derivative(which):
    t, h = 1.597, 1e-8
    fd = (lindberg_time_factor(which, 3.1, t + h) - lindberg_time_factor(which, 3.1, t - h)) / (2 * h)
    assert lindberg_time_factor(which, 3.1, t, derivative=True) == pytest.approx(fd, rel=1e-5)


def test_lindberg_guards():
    with pytest.raises(OverflowError):
        lindberg_time_factor(1, 3.1, 3.0)
    with pytest.raises(ValueError):
        lindberg_time_factor(3, 3.1, 1.0)
    with pytest.raises(ValueError):
        ManufacturedSolution("cos")


def test_perturbations_sorted_deterministic_bounded():
    a = PerturbationSet(10, 0.1, 7).values
    assert np.all(np.diff(a) >= 0) and np.all(np.abs(a) <= 0.1)
    assert np.array_equal(a, PerturbationSet(10, 0.1, 7).values)
    assert not np.array_equal(a, PerturbationSet(10, 0.1, 8).values)
    with pytest.raises(ValueError):
        PerturbationSet(0, 0.1).values


def test_rate_examples():
    assert rate(4.0, 1.0) == 2.0
    assert rate(3.3456e-3, 8.0196e-4) == pytest.approx(2.0607, abs=1e-4)
    with pytest.raises(ValueError):
        rate(0.0, 1.0)


def test_error_report_blocks_and_rate_table():
    reps = [ErrorReport(1 / 8, np.array([4.0, 8.0]), np.array([2.0, 2.0]), np.array([1.0, 3.0])),
            ErrorReport(1 / 16, np.array([1.0, 2.0]), np.array([1.0, 1.0]), np.array([0.5, 0.5]))]
    assert reps[0].block("average") == {"u_inf0": 6.0, "u_inf1": 2.0, "p_20": 2.0}
    assert reps[0].block("max")["p_20"] == 3.0 and reps[0].block("member_J")["u_inf0"] == 8.0
    rows = rate_table(reps, "average")
    assert math.isnan(rows[0]["rate_u_inf0"]) and rows[1]["rate_u_inf0"] == pytest.approx(2.0)
    assert rows[1]["rate_p_20"] == pytest.approx(2.0)
    with pytest.raises(ValueError):
        reps[0].block("median")


@settings(max_examples=50)
@given(st.floats(1e-8, 1.0), st.floats(0.1, 4.0))
def test_rate_inverts_power_law(e, p):
    assert rate(e * 2 ** p, e) == pytest.approx(p, rel=1e-9)


def test_parse_values():
    assert parse_real("2/3") == pytest.approx(2 / 3)
    assert parse_real("2/sqrt5") == pytest.approx(2 / math.sqrt(5))
    assert parse_real("2/sqrt(5)") == pytest.approx(2 / math.sqrt(5))
    assert parse_real("1e-4") == 1e-4
    assert parse_int_list("8, 16,32") == [8, 16, 32] and parse_int_list(4) == [4]


def test_config_layers(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("# comment\ntheta = 2/sqrt5\nmesh = 4,8\ndelta-bound = 0.05\n")
    vals = read_config_file(f)
    cfg = build_config("converge", vals, {"mesh": "2,4", "re": None})
    assert cfg.theta == pytest.approx(2 / math.sqrt(5)) and cfg.mesh == [2, 4]
    assert cfg.delta_bound == 0.05 and cfg.re == 200.0 and cfg.nu == pytest.approx(5e-3)
    ad = build_config("adaptive")
    assert ad.variant == "lindberg2" and ad.mesh == [50] and ad.kmin == 1e-6 and ad.kmax == 1e-4
    f.write_text("bogus = 1\n")
    with pytest.raises(ValueError):
        read_config_file(f)
    with pytest.raises(ValueError):
        build_config("converge", {}, {"theta": "1.0"})


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_cli_converge(tmp_path, capsys):
    assert main(["converge", "--mesh", "2,4", "--j", "2", "--t-end", "0.5", "--out-dir", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "convergence.csv")
    assert len(rows) == 8 and {r["block"] for r in rows} == {"member_1", "member_J", "average", "max"}
    assert len(read_csv(tmp_path / "convergence_members.csv")) == 4
    assert "E[u_inf0]" in capsys.readouterr().out


def test_cli_efficiency(tmp_path):
    assert main(["efficiency", "--mesh", "4", "--j", "1,3", "--t-end", "0.25", "--direct",
                 "--out-dir", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "efficiency.csv")
    assert [int(r["J"]) for r in rows] == [1, 3]
    assert rows[0]["factorizations"] == rows[1]["factorizations"] == rows[0]["steps"]
    assert (tmp_path / "efficiency_steps_J3.csv").exists()


def test_cli_adaptive_smoke(tmp_path):
    assert main(["adaptive", "--mesh", "3", "--j", "2", "--t-end", "1.5812", "--out-dir", str(tmp_path)]) == 0
    summary = read_csv(tmp_path / "adaptive_summary.csv")
    assert [r["method"] for r in summary] == ["adaptive", "constant"]
    assert int(summary[0]["total_cost"]) == int(summary[1]["steps"])
    steps = read_csv(tmp_path / "adaptive_steps.csv")
    assert all(float(r["estimate"]) < 1e-4 for r in steps if r["accepted"] == "1" and r["estimate"] != "nan")
