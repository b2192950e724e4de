import dataclasses
import logging

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from gmb_stopping import GmpModel, PreconditionError
from gmb_stopping import gmp_kernel as K
from gmb_stopping import mc_solver
from gmb_stopping.mc_solver import (
    McStoppingSolver,
    SolverGrid,
    default_grid,
    extract_boundary,
    interpolate_value,
    policy_value,
    solve,
)
from gmb_stopping.priors import DiracPrior, GaussianPrior, TruncatedGaussianPrior, convert_frame, posterior
from gmb_stopping.timechange import build
from gmb_stopping.validation import dirac_bound_check, ordering_check
from oracles import bridge_dp

# exact discrete-exercise value of the Brownian bridge on the N = 50 log grid (bridge_dp oracle)
DP_V00_N50 = 0.3567811411891957


@pytest.fixture(scope="module")
def small_ou():
    model = GmpModel.ornstein_uhlenbeck(beta=-1.0, zeta=1.0)
    grid = default_grid(N=30, M=40, K=400, bounds=(-2.0, 2.0), seed=3)
    return model, grid, solve(model, GaussianPrior(0.2, 0.4, "original"), grid)


# -- grids ------------------------------------------------------------------------


def test_default_grid_examples():
    g = default_grid(N=10, M=4, K=5)
    assert g.t_grid[10] == 1.0
    assert g.t_grid[5] == pytest.approx(np.log(1 + 5 * (np.e - 1) / 10), abs=1e-15)
    assert g.t_grid[5] == pytest.approx(0.620115, abs=1e-6)
    np.testing.assert_allclose(g.x_grid, [-3, -1.5, 0, 1.5, 3])
    d = default_grid()
    assert (d.N, d.M, d.K, d.x_grid[0], d.x_grid[-1]) == (1000, 1000, 10_000, -3.0, 3.0)


def test_default_grid_rescaled():
    g = default_grid(T=2.5, N=10, M=4, K=5)
    np.testing.assert_allclose(g.t_grid, 2.5 * default_grid(N=10, M=4, K=5).t_grid, rtol=1e-15)
    assert g.t_grid[-1] == 2.5


def test_grid_validation():
    with pytest.raises(PreconditionError):
        SolverGrid(np.array([0.0, 1.0]), np.linspace(-1, 1, 5), 10)
    with pytest.raises(PreconditionError):
        SolverGrid(np.array([0.1, 0.5, 1.0]), np.linspace(-1, 1, 5), 10)
    with pytest.raises(PreconditionError):
        SolverGrid(np.linspace(0, 1, 4), np.array([0.0, 1.0, 0.5]), 10)
    with pytest.raises(PreconditionError):
        SolverGrid(np.linspace(0, 1, 4), np.linspace(-1, 1, 5), 0)


def test_solve_preconditions(bm):
    g = default_grid(N=5, M=5, K=10)
    with pytest.raises(PreconditionError):
        solve(bm, DiracPrior(0.0), g)
    with pytest.raises(PreconditionError):
        solve(GmpModel.brownian(x0=5.0), DiracPrior(0.0, "original"), g)
    with pytest.raises(PreconditionError):
        solve(GmpModel.brownian(T=2.0), DiracPrior(0.0, "original"), g)


# -- interpolation ------------------------------------------------------------------


def test_interpolate_value_examples():
    xg = np.linspace(-3, 3, 7)
    row = np.array([0.1, 0.3, 0.2, 0.5, 1.1, 2.0, 3.0])
    assert interpolate_value(row, 0.0, xg) == 0.5
    assert interpolate_value(row, 0.5, xg) == pytest.approx(0.8)
    assert interpolate_value(xg, 4.0, xg) == pytest.approx(4.0)
    # below the grid the edge slope would drop under the gain; the floor wins
    assert interpolate_value(row, -5.0, xg) == pytest.approx(-0.3)
    assert interpolate_value(np.full(7, 0.2), -9.0, xg) == pytest.approx(0.2)
    assert interpolate_value(np.full(7, 0.2), 9.0, xg) == 9.0


# -- solve invariants ------------------------------------------------------------------


def test_terminal_slice_and_dominance(small_ou):
    _, grid, res = small_ou
    assert res.V.shape == res.D.shape == (31, 41)
    np.testing.assert_array_equal(res.V[-1], grid.x_grid)
    assert res.D[-1].all()
    assert np.all(res.V >= grid.x_grid)
    np.testing.assert_array_equal(res.D, res.V == grid.x_grid)
    assert res.meta["n_fallback_cells"] == 0


def test_supermartingale_statistical(small_ou):
    # a fresh estimate of E[V_{i+1}] must not exceed V_{i,j} by more than 3 SE
    model, grid, res = small_ou
    tc = build(model)
    bprior = convert_frame(GaussianPrior(0.2, 0.4, "original"), tc)
    a, b = tc.terminal_affine
    rng = np.random.default_rng(99)
    n = 4000
    for i in (0, 10, 25):
        step = K.bridge_step(model, grid.t_grid[i], grid.t_grid[i + 1])
        for j in (5, 20, 35):
            x = grid.x_grid[j]
            s, y = tc.to_bridge_coords(grid.t_grid[i], x)
            pins = a + b * posterior(bprior, float(s), float(y), tc.y0).ppf(rng.random(n))
            nxt = step.mean(x, pins) + np.sqrt(step.variance) * rng.standard_normal(n)
            v = interpolate_value(res.V[i + 1], nxt, grid.x_grid)
            assert v.mean() <= res.V[i, j] + 3 * v.std(ddof=1) / np.sqrt(n) + 3 * np.nan_to_num(res.stderr[i, j])


@pytest.mark.parametrize("crn", [True, False])
def test_workers_bit_identical(crn, bm):
    g = default_grid(N=12, M=40, K=300, seed=5)
    prior = TruncatedGaussianPrior(0.0, 0.5, 0.0, np.inf, "original")
    r1 = solve(bm, prior, g, workers=1, common_random_numbers=crn)
    r3 = solve(bm, prior, g, workers=3, common_random_numbers=crn)
    np.testing.assert_array_equal(r1.V, r3.V)
    np.testing.assert_array_equal(r1.D, r3.D)
    r_other = solve(bm, prior, dataclasses.replace(g, seed=6), workers=1, common_random_numbers=crn)
    assert not np.array_equal(r1.V, r_other.V)


def test_fallback_cells_marked_stopping(bm, monkeypatch, caplog):
    real = mc_solver.posterior

    def broken(prior, s, y, y0, strict=True):
        post = real(prior, s, y, y0, strict)
        bad = np.asarray(y) > 1.0
        return dataclasses.replace(post, log_psi=np.where(bad, -np.inf, post.log_psi))

    monkeypatch.setattr(mc_solver, "posterior", broken)
    g = default_grid(N=6, M=20, K=100, bounds=(-2, 2))
    with caplog.at_level(logging.WARNING, logger="gmb_stopping.mc_solver"):
        res = solve(bm, GaussianPrior(0.0, 0.5, "original"), g)
    assert res.meta["n_fallback_cells"] > 0
    assert res.D[:-1, g.x_grid > 1.0].all()
    assert any("marked stopping" in r.message for r in caplog.records)


def test_variance_cap_warning(bm, caplog):
    g = default_grid(N=6, M=20, K=50)
    with caplog.at_level(logging.WARNING, logger="gmb_stopping.mc_solver"):
        res = solve(bm, GaussianPrior(0.0, 2.0, "original"), g, variance_cap=0.5)
    assert len(res.meta["sup_posterior_variance"]) == 6
    assert res.meta["sup_posterior_variance"][0] == pytest.approx(2.0)
    assert any("exceeds cap" in r.message for r in caplog.records)


# -- boundary extraction -------------------------------------------------------------


def _result(D, xg=None):
    D = np.asarray(D, dtype=bool)
    if len(D) < 3:
        # pad with terminal-like all-stopping slices
        D = np.vstack([D, np.ones((3 - len(D), D.shape[1]), dtype=bool)])
    xg = np.linspace(0, 1, D.shape[1]) if xg is None else xg
    t = np.linspace(0, 1, D.shape[0])
    grid = SolverGrid(t, xg, 1)
    V = np.where(D, xg, xg + 1.0)
    return mc_solver.SolveResult(V, D, grid, {}, {})


def test_boundary_all_stopping():
    b = extract_boundary(_result(np.ones((4, 5))))
    assert b.single_boundary and b.side == "upper"
    assert all(iv == [(0.0, 1.0)] for iv in b.intervals)


def test_boundary_upper_threshold_midpoints():
    D = [[0, 0, 0, 1, 1], [0, 0, 1, 1, 1], [1, 1, 1, 1, 1]]
    b = extract_boundary(_result(D))
    assert b.single_boundary and b.side == "upper"
    assert b.intervals[0] == [(0.625, 1.0)]
    np.testing.assert_allclose(b.thresholds(), [0.625, 0.375, 0.0])
    assert b.n_components().tolist() == [1, 1, 1]


def test_boundary_lower_side():
    b = extract_boundary(_result([[1, 1, 0, 0, 0], [1, 1, 1, 1, 1]]))
    assert b.single_boundary and b.side == "lower"


def test_boundary_two_intervals():
    b = extract_boundary(_result([[1, 0, 0, 0, 1], [1, 1, 1, 1, 1]]))
    assert not b.single_boundary and b.side is None
    assert b.intervals[0] == [(0.0, 0.125), (0.875, 1.0)]
    assert b.n_components().max() == 2


def test_boundary_interior_run_and_mixed_sides():
    assert not extract_boundary(_result([[0, 1, 1, 0, 0], [1, 1, 1, 1, 1]])).single_boundary
    assert not extract_boundary(_result([[0, 0, 0, 1, 1], [1, 1, 0, 0, 0], [1] * 5])).single_boundary


def test_boundary_empty_slice_is_neutral():
    b = extract_boundary(_result([[0, 0, 0, 0, 0], [0, 0, 0, 1, 1], [1] * 5]))
    assert b.single_boundary and b.side == "upper"
    assert b.intervals[0] == []
    assert np.isnan(b.thresholds()[0])


def test_boundary_rows_are_sorted_and_inside():
    b = extract_boundary(_result([[1, 0, 1, 0, 1], [1] * 5]))
    for runs in b.intervals:
        for (lo1, hi1), (lo2, _) in zip(runs, runs[1:]):
            assert hi1 <= lo2
        assert all(0.0 <= lo < hi <= 1.0 for lo, hi in runs)
    assert len(list(b.to_rows())) == 5


# -- policy value ---------------------------------------------------------------------


def test_policy_all_stopping(bm):
    res = _result(np.ones((5, 7)), np.linspace(-1, 1, 7))
    m, se = policy_value(res, GmpModel.brownian(x0=0.0), DiracPrior(0.0, "original"), 500)
    assert (m, se) == (0.0, 0.0)
    m, se = policy_value(res, GmpModel.brownian(x0=0.4), GaussianPrior(0, 1, "original"), 500)
    assert (m, se) == (0.4, 0.0)


def test_policy_never_early_is_terminal_mean(bm):
    D = np.zeros((5, 7), dtype=bool)
    D[-1] = True
    res = _result(D, np.linspace(-3, 3, 7))
    n = 20_000
    m, se = policy_value(res, bm, GaussianPrior(0.3, 0.5, "original"), n, seed=1)
    assert abs(m - 0.3) < 4 * np.sqrt(0.5 / n)


# -- against the exact discrete problem ------------------------------------------------


def test_dp_oracle_value():
    v, _ = bridge_dp(default_grid(N=50, M=200, K=1).t_grid)
    assert v == pytest.approx(DP_V00_N50, abs=1e-12)


def test_mc_value_vs_dp_oracle(bm):
    g = default_grid(N=50, M=200, K=20_000)
    res = solve(bm, DiracPrior(0.0, "original"), g)
    # upward max-bias of the MC envelope plus its own noise
    assert DP_V00_N50 - 0.002 < res.value_at(0.0, 0.0) < DP_V00_N50 + 0.006


def test_mc_boundary_vs_dp_oracle(bm):
    g = default_grid(N=200, M=200, K=8000)
    _, thr = bridge_dp(g.t_grid)
    res = solve(bm, DiracPrior(0.0, "original"), g)
    b = extract_boundary(res)
    assert b.single_boundary and b.side == "upper"
    sel = g.t_grid <= 0.9
    assert np.max(np.abs(b.thresholds()[sel] - thr[sel])) <= 0.05


# -- invariants on small grids ------------------------------------------------------------


def test_ordering_small(bm):
    g = default_grid(N=30, M=40, K=800, seed=1)
    r1 = solve(bm, GaussianPrior(0.0, 0.5, "original"), g)
    r2 = solve(bm, GaussianPrior(0.5, 0.5, "original"), g)
    assert ordering_check(r1, r2, lr_ordered=True)["passed"]
    rev = ordering_check(r2, r1, lr_ordered=False)
    assert not rev["passed"] and rev["n_violations"] > 0
    assert {"t", "x", "V1", "V2"} <= set(rev["violating_cells"][0])


def test_dirac_bound_small(bm):
    g = default_grid(N=30, M=40, K=800, seed=2)
    rt = solve(bm, TruncatedGaussianPrior(0.0, 0.5, 0.0, np.inf, "original"), g)
    rd = solve(bm, DiracPrior(0.0, "original"), g)
    assert dirac_bound_check(rt, rd)["passed"]


# -- estimator API --------------------------------------------------------------------


def test_estimator_api(bm):
    est = McStoppingSolver(bm, DiracPrior(0.0, "original"), n_time=20, n_space=30, n_samples=300)
    params = est.get_params()
    assert params["n_time"] == 20 and params["seed"] == 0
    twin = clone(est)
    assert twin.get_params()["n_space"] == 30 and not hasattr(twin, "result_")
    with pytest.raises(NotFittedError):
        est.predict([[0.0, 0.0]])
    est.fit()
    X = np.array([[0.0, 2.5], [0.0, -1.0], [1.0, -2.0]])
    np.testing.assert_array_equal(est.predict(X), [True, False, True])
    v = est.value(X)
    assert np.all(v >= X[:, 1])
    assert v[2] == pytest.approx(-2.0)
    assert est.boundary_.single_boundary
    est.set_params(n_samples=100)
    assert est.n_samples == 100


def test_estimator_needs_model():
    with pytest.raises(PreconditionError):
        McStoppingSolver().fit()
