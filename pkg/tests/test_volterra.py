import numpy as np
import pytest
from scipy import integrate, stats
from sklearn.base import clone

from gmb_stopping import GmpModel
from gmb_stopping.exceptions import ConfigurationError, ConvergenceError, PreconditionError
from gmb_stopping.gmp_kernel import GmLaw
from gmb_stopping.mc_solver import default_grid, solve
from gmb_stopping.pathsim import simulate
from gmb_stopping.priors import DiracPrior, GaussianPrior, TruncatedGaussianPrior, drift
from gmb_stopping.timechange import build
from gmb_stopping.validation import boundary_error
from gmb_stopping.volterra import (
    VolterraBoundary,
    build_dirac_gain,
    build_gaussian_gain,
    default_s_grid,
    fixed_point_defect,
    gain_for_prior,
    gaussian_drift_coefficients,
    ou_marginal,
    ou_marginal_numeric,
    picard_solve,
    truncated_expectation,
)
from oracles import shepp_constant
from test_gmp_kernel import fig2

TOL = 1e-6


@pytest.fixture(scope="module")
def bm_tc():
    return build(GmpModel.brownian())


@pytest.fixture(scope="module")
def shepp(bm_tc):
    gain = build_dirac_gain(bm_tc, 0.0)
    return gain, picard_solve(gain, tol=TOL)


@pytest.fixture(scope="module")
def gauss_bm(bm_tc):
    gain = build_gaussian_gain(bm_tc, GaussianPrior(0.0, 0.5))
    return gain, picard_solve(gain, tol=TOL)


# -- truncated expectation ------------------------------------------------------------


def test_truncated_expectation_examples():
    std = GmLaw(0.0, 1.0)
    assert truncated_expectation(std, 0.0, 0.0) == pytest.approx(-0.3989423, abs=1e-7)
    assert truncated_expectation(GmLaw(0.3, 0.49), 1.2, -50.0) == pytest.approx(0.9, abs=1e-14)
    assert truncated_expectation(GmLaw(0.3, 0.49), 1.2, 50.0) == 0.0
    assert truncated_expectation(GmLaw(0.3, 0.0), 1.0, 0.2) == pytest.approx(0.7)
    assert truncated_expectation(GmLaw(0.3, 0.0), 1.0, 0.4) == 0.0


@pytest.mark.parametrize("mu,var,c,b", [(0.2, 0.5, 1.0, 0.4), (-1.0, 2.0, 0.0, -0.5), (0.0, 0.01, 0.3, 0.1)])
def test_truncated_expectation_quadrature(mu, var, c, b):
    sd = np.sqrt(var)
    ref = integrate.quad(lambda g: (c - g) * stats.norm.pdf(g, mu, sd), b, np.inf, epsabs=1e-14)[0]
    assert truncated_expectation(GmLaw(mu, var), c, b) == pytest.approx(ref, abs=1e-12)


# -- gains --------------------------------------------------------------------------


def test_dirac_gain_bm(bm_tc):
    gain = build_dirac_gain(bm_tc, 0.7)
    s = np.linspace(0, 0.99, 12)
    np.testing.assert_allclose(gain.B_curve(s), 1 / (1 - s), rtol=1e-12)
    np.testing.assert_allclose(gain.A_curve(s), 0.7, rtol=1e-12)
    assert gain.terminal_value == pytest.approx(0.7)
    assert build_dirac_gain(bm_tc, 0.0).terminal_value == 0.0
    # induced drift B (A - G) is the classical bridge drift
    G = 0.2
    np.testing.assert_allclose(gain.B_curve(s) * (gain.A_curve(s) - G), (0.7 - G) / (1 - s), rtol=1e-12)


def test_dirac_gain_scaled_bm():
    tc = build(GmpModel.brownian(T=4.0))
    gain = build_dirac_gain(tc, 0.25)
    s = np.linspace(0, 0.9, 5)
    np.testing.assert_allclose(gain.A_curve(s), 2.0 * 0.25, rtol=1e-12)
    assert gain.terminal_value == pytest.approx(0.5)


def _d5(f, s, h):
    return (-f(s + 2 * h) + 8 * f(s + h) - 8 * f(s - h) + f(s - 2 * h)) / (12 * h)


def _drift_from_derivatives(tc, s, G, pin_drift, h=1e-4):
    # dG = a0' ds + a1' Y ds + a1 dY with Y = (G - a0)/a1 and dY = pin_drift(s, Y) ds + dW;
    # derivatives of a0, a1 by five-point differences of the tabulated maps
    a0p = _d5(tc.a0, s, h)
    a1p = _d5(tc.a1, s, h)
    a0, a1 = tc.a0(s), tc.a1(s)
    y = (G - a0) / a1
    return a0p + a1p * y + a1 * pin_drift(s, y)


@pytest.mark.parametrize("panel", ["2a", "2b", "2c"])
def test_dirac_gain_recomputation(panel):
    tc = build(fig2(panel))
    z = 0.3
    gain = build_dirac_gain(tc, z)
    s = np.linspace(0.05, 0.95, 10)
    pin = lambda s, y: (z - y) / (1 - s)
    for G in (-0.5, 0.8):
        ref = _drift_from_derivatives(tc, s, G, pin)
        np.testing.assert_allclose(gain.B_curve(s) * (gain.A_curve(s) - G), ref, rtol=1e-7, atol=1e-8)


def test_gaussian_gain_recomputation(ou):
    tc = build(ou)
    theta, g2 = 0.2, 0.5
    gain = build_gaussian_gain(tc, GaussianPrior(theta, g2))
    prior = GaussianPrior(theta, g2)
    s = np.linspace(0.05, 0.95, 10)
    pin = lambda s, y: np.array([drift(prior, float(si), float(yi), tc.y0) for si, yi in zip(s, np.broadcast_to(y, s.shape))])
    for G in (-0.5, 0.8):
        ref = _drift_from_derivatives(tc, s, G, pin)
        np.testing.assert_allclose(gain.B_curve(s) * (gain.A_curve(s) - G), ref, rtol=1e-7, atol=1e-8)
    assert np.all(gain.B_curve(np.linspace(0, 1, 101)) > 0)


def test_gaussian_drift_coefficients_limits(bm_tc):
    a, b = gaussian_drift_coefficients(0.0, 0.4, 0.0)
    s = np.linspace(0, 0.99, 7)
    np.testing.assert_allclose(a(s), 0.0)
    _, b1 = gaussian_drift_coefficients(0.3, 1.0 - 1e-9, 0.0)
    np.testing.assert_allclose(b1(s), 0.0, atol=1e-8)


def test_gaussian_gain_rejects_wide_prior(bm_tc, ou):
    with pytest.raises(ConfigurationError, match="variance < 1"):
        build_gaussian_gain(bm_tc, GaussianPrior(0.0, 1.5))
    with pytest.raises(ConfigurationError):
        build_gaussian_gain(bm_tc, DiracPrior(0.0))
    # a1 increasing: beta > 0
    with pytest.raises(ConfigurationError, match="a1'"):
        build_gaussian_gain(build(GmpModel.ornstein_uhlenbeck(beta=1.0)), GaussianPrior(0.0, 0.3))
    with pytest.raises(ConfigurationError):
        gain_for_prior(bm_tc, TruncatedGaussianPrior(0.0, 0.5, 0.0))


# -- marginals ------------------------------------------------------------------------


def test_ou_marginal_identity_and_bridge_law(bm_tc):
    gain = build_dirac_gain(bm_tc, 0.4)
    law = ou_marginal(gain, 0.3, 1.1, 0.3)
    assert (float(law.mean), float(law.variance)) == pytest.approx((1.1, 0.0), abs=1e-15)
    s, g, u = 0.2, -0.3, 0.7
    law = ou_marginal(gain, s, g, u)
    assert float(law.mean) == pytest.approx(g * (1 - u) / (1 - s) + 0.4 * (u - s) / (1 - s), abs=1e-12)
    assert float(law.variance) == pytest.approx((1 - u) * (u - s) / (1 - s), abs=1e-12)
    num = ou_marginal_numeric(gain, s, g, u)
    assert (num.mean, num.variance) == pytest.approx((float(law.mean), float(law.variance)), abs=1e-9)


@pytest.mark.parametrize("case", ["dirac", "gaussian"])
def test_ou_marginal_closed_vs_numeric(ou, case):
    tc = build(ou)
    gain = build_dirac_gain(tc, -0.2) if case == "dirac" else build_gaussian_gain(tc, GaussianPrior(0.1, 0.4))
    for s, g, u in [(0.0, 0.0, 0.5), (0.3, 0.6, 0.9), (0.6, -0.4, 0.97)]:
        a, b = ou_marginal(gain, s, g, u), ou_marginal_numeric(gain, s, g, u)
        assert float(a.mean) == pytest.approx(b.mean, abs=1e-9)
        assert float(a.variance) == pytest.approx(b.variance, abs=1e-9)


def test_ou_marginal_vs_simulation(ou):
    tc = build(ou)
    prior = GaussianPrior(0.1, 0.4, "original")
    gain = gain_for_prior(tc, prior)
    s, u, g = 0.25, 0.8, 0.3
    t_s, t_u = float(tc.t_of_s(s)), float(tc.t_of_s(u))
    n = 100_000
    batch = simulate(ou, prior, np.array([t_s, t_u, 1.0]), n, seed=11, start=(t_s, g))
    x = batch.paths[:, 1]
    law = ou_marginal(gain, s, g, u)
    assert abs(x.mean() - float(law.mean)) < 3 * np.sqrt(float(law.variance) / n)
    assert abs(x.var(ddof=1) - float(law.variance)) < 3 * float(law.variance) * np.sqrt(2 / (n - 1))


def test_ou_marginal_domain(bm_tc):
    gain = build_dirac_gain(bm_tc, 0.0)
    with pytest.raises(PreconditionError):
        ou_marginal(gain, 0.5, 0.0, 1.0)
    with pytest.raises(PreconditionError):
        ou_marginal(gain, 0.6, 0.0, 0.5)


# -- Picard solutions ------------------------------------------------------------------


def test_shepp_constant(shepp):
    _, sol = shepp
    sel = sol.s_grid <= 0.95
    ratio = sol.b_values[sel] / np.sqrt(1 - sol.s_grid[sel])
    assert np.ptp(ratio) < 0.01
    assert np.median(ratio) == pytest.approx(shepp_constant(), abs=1e-6)
    assert np.max(np.abs(sol.b_values[sel] - 0.8399 * np.sqrt(1 - sol.s_grid[sel]))) <= 0.01


def test_shepp_terminal_anchor_and_outputs(shepp):
    _, sol = shepp
    assert sol(1.0) == pytest.approx(0.0, abs=1e-12)
    assert sol(0.9999) == pytest.approx(shepp_constant() * 0.01, abs=1e-6)
    np.testing.assert_allclose(sol.b_y, sol.b_values, atol=1e-13)
    np.testing.assert_allclose(sol.t_grid, sol.s_grid, atol=1e-13)
    assert len(sol.history) == len(sol.defects) == sol.iterations


def test_dirac_defects_monotone(shepp):
    _, sol = shepp
    d = np.array(sol.defects)
    assert np.all(np.diff(d[3:]) <= 0)


def test_gaussian_updates_monotone(gauss_bm):
    # the solver's residual is the update of the preconditioned map
    _, sol = gauss_bm
    h = np.array(sol.history)
    assert np.all(np.diff(h[3:]) <= 0)


@pytest.mark.parametrize("which", ["shepp", "gauss_bm"])
def test_fixed_point_defect(which, request):
    gain, sol = request.getfixturevalue(which)
    assert sol.residual <= 2 * TOL
    assert fixed_point_defect(gain, sol) <= 2 * TOL


@pytest.mark.parametrize("which", ["shepp", "gauss_bm"])
def test_grid_refinement(which, request):
    gain, sol = request.getfixturevalue(which)
    fine = picard_solve(gain, s_grid=default_s_grid(400), tol=TOL)
    assert np.max(np.abs(fine(sol.s_grid) - sol.b_values)) < 5 * TOL
    # extra nodes in the last decade leave b(0) alone
    w = np.sqrt(1 - sol.s_grid)
    mids = 1 - (0.5 * (w[1:] + w[:-1])) ** 2
    sg = np.sort(np.concatenate([sol.s_grid, mids[mids > 0.9]]))
    assert abs(picard_solve(gain, s_grid=sg, tol=TOL).b_values[0] - sol.b_values[0]) < TOL
    tv = lambda x: np.sum(np.abs(np.diff(np.append(x.b_values, x.terminal_value))))
    assert tv(sol) == pytest.approx(tv(fine), abs=5 * TOL)


def test_gaussian_boundary_above_terminal_mean(gauss_bm):
    gain, sol = gauss_bm
    mz, _ = gain.pin_moments(sol.s_grid, sol.b_y)
    # stopping at 1 is admissible, so b(s) >= E_{s,b(s)}[G_1]
    assert np.all(sol.b_values >= mz - 1e-9)
    assert sol.b_values[0] == pytest.approx(0.6916864493, abs=1e-8)
    assert sol(1.0) == pytest.approx(gain.terminal_value, abs=1e-12)


def test_picard_errors(bm_tc):
    gain = build_dirac_gain(bm_tc, 0.0)
    with pytest.raises(ConvergenceError) as info:
        picard_solve(gain, max_iter=3)
    assert info.value.residual is not None and info.value.residual > 0
    with pytest.raises(PreconditionError):
        picard_solve(gain, damping=0.0)
    with pytest.raises(PreconditionError):
        picard_solve(gain, tol=-1)
    with pytest.raises(PreconditionError):
        picard_solve(gain, s_grid=np.array([0.0, 0.5, 1.0]))
    with pytest.raises(PreconditionError):
        picard_solve(gain, case="gaussian_prior")


def test_estimator(bm):
    est = VolterraBoundary(bm, DiracPrior(0.0, "original"), n_grid=100)
    assert clone(est).get_params()["n_grid"] == 100
    est.fit()
    X = np.array([[0.0, 0.9], [0.0, 0.8], [0.5, 0.0]])
    np.testing.assert_array_equal(est.predict(X), [True, False, False])
    assert est.boundary(0.0) == pytest.approx(shepp_constant(), abs=1e-6)


@pytest.mark.slow
def test_gaussian_cross_check_vs_mc(bm, gauss_bm):
    _, sol = gauss_bm
    g = default_grid(N=200, M=150, K=60_000, bounds=(-1.0, 2.0), seed=0)
    res = solve(bm, GaussianPrior(0.0, 0.5, "original"), g)
    err = boundary_error(res, sol, bm)
    assert err["single_boundary"]
    assert err["sup_error"] <= 0.1
