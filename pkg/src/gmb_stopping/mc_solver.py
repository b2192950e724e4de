"""Backward-induction Monte Carlo solver for the value and decision matrices.

For each interior cell ``(t_i, x_j)`` the continuation value is estimated by
drawing ``K`` pins from the posterior pinning law, one exact bridge step per
pin towards ``t_{i+1}``, and averaging the interpolated next-slice value.
Slices run backwards; cells within a slice are processed in fixed blocks so
results do not depend on the number of worker threads.
"""

from __future__ import annotations

import logging
import time as _time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import gmp_kernel as kernel
from .exceptions import PreconditionError
from .pathsim import iter_blocks
from .priors import convert_frame, posterior
from .timechange import build

log = logging.getLogger(__name__)

CELL_BLOCK = 16
DEFAULT_BOUNDS = (-3.0, 3.0)


@dataclass(frozen=True)
class SolverGrid:
    """Time grid ``t_0 = 0 < ... < t_N = T``, space grid and sample size."""

    t_grid: np.ndarray
    x_grid: np.ndarray
    K: int
    seed: int = 0

    def __post_init__(self):
        t = np.asarray(self.t_grid, dtype=float)
        x = np.asarray(self.x_grid, dtype=float)
        object.__setattr__(self, "t_grid", t)
        object.__setattr__(self, "x_grid", x)
        if t.ndim != 1 or len(t) < 3 or np.any(np.diff(t) <= 0) or t[0] != 0.0:
            raise PreconditionError("t_grid must be strictly increasing from 0 with N >= 2")
        if x.ndim != 1 or len(x) < 3 or np.any(np.diff(x) <= 0):
            raise PreconditionError("x_grid must be strictly increasing with M >= 2")
        if int(self.K) < 1:
            raise PreconditionError("K must be >= 1")

    @property
    def N(self):
        return len(self.t_grid) - 1

    @property
    def M(self):
        return len(self.x_grid) - 1

    def describe(self):
        return {
            "N": self.N,
            "M": self.M,
            "K": int(self.K),
            "seed": int(self.seed),
            "T": float(self.t_grid[-1]),
            "x_bounds": [float(self.x_grid[0]), float(self.x_grid[-1])],
        }


def default_grid(T=1.0, N=1000, M=1000, K=10_000, bounds=DEFAULT_BOUNDS, seed=0):
    """Log-spaced times ``t_i = T ln(1 + i (e - 1) / N)`` and a uniform space grid."""
    i = np.arange(N + 1)
    t = T * np.log1p(i * (np.e - 1.0) / N)
    t[0], t[-1] = 0.0, T
    lo, hi = bounds
    x = lo + np.arange(M + 1) * (hi - lo) / M
    x[-1] = hi
    return SolverGrid(t, x, int(K), int(seed))


@dataclass
class SolveResult:
    V: np.ndarray
    D: np.ndarray
    grid: SolverGrid
    prior: dict
    model: dict
    stderr: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def value_at(self, t, x):
        i = _nearest_index(self.grid.t_grid, t)
        return float(interpolate_value(self.V[i], x, self.grid.x_grid))


@dataclass(frozen=True)
class Boundary:
    """Stopping intervals per time slice.

    ``side`` is ``"upper"`` when every slice stops on a single interval
    reaching the top of the domain, ``"lower"`` for the mirror case, and
    ``None`` otherwise.
    """

    t_grid: np.ndarray
    intervals: list
    single_boundary: bool
    side: str = None

    def thresholds(self):
        """Single threshold per slice (nan where the slice never stops)."""
        out = np.full(len(self.t_grid), np.nan)
        for i, iv in enumerate(self.intervals):
            if iv:
                out[i] = iv[0][0] if self.side != "lower" else iv[-1][1]
        return out

    def n_components(self):
        return np.array([len(iv) for iv in self.intervals])

    def to_rows(self):
        return [(float(t), lo, hi) for t, iv in zip(self.t_grid, self.intervals) for lo, hi in iv]


def _nearest_index(grid, v):
    k = np.clip(np.searchsorted(grid, v), 1, len(grid) - 1)
    return np.where(np.abs(v - grid[k - 1]) <= np.abs(grid[k] - v), k - 1, k)


def interpolate_value(row, x, x_grid):
    """Piecewise-linear value in ``x``; edge-slope extrapolation floored at the gain."""
    x = np.asarray(x, dtype=float)
    v = np.interp(x, x_grid, row)
    lo = x < x_grid[0]
    hi = x > x_grid[-1]
    if np.any(lo):
        slope = (row[1] - row[0]) / (x_grid[1] - x_grid[0])
        v = np.where(lo, row[0] + slope * (x - x_grid[0]), v)
    if np.any(hi):
        slope = (row[-1] - row[-2]) / (x_grid[-1] - x_grid[-2])
        v = np.where(hi, row[-1] + slope * (x - x_grid[-1]), v)
    return np.maximum(v, x)


def _slice_block(ctx, i, cols, u, eps, next_row):
    tc, bprior, step, a_end, b_end, grid = ctx
    x = grid.x_grid[cols]
    s, y = tc.to_bridge_coords(grid.t_grid[i], x)
    with np.errstate(all="ignore"):
        post = posterior(bprior, float(s), y, tc.y0, strict=False)
        pins = a_end + b_end * np.asarray(post.ppf(u), dtype=float)
    pins = np.broadcast_to(pins, (len(cols), grid.K))
    nxt = step.mean(x[:, None], pins) + np.sqrt(step.variance) * eps
    samples = interpolate_value(next_row, nxt, grid.x_grid)
    cont = samples.mean(axis=1)
    se = samples.std(axis=1, ddof=1) / np.sqrt(grid.K) if grid.K > 1 else np.zeros(len(cols))
    failed = ~np.isfinite(np.asarray(post.log_psi)) | ~np.isfinite(cont)
    return cont, se, failed


def solve(model, prior, grid, workers=1, common_random_numbers=True, variance_cap=None):
    """Value matrix ``V`` and decision matrix ``D`` on ``grid`` (original coordinates).

    ``prior`` is the terminal law in the original frame.  With
    ``common_random_numbers`` every cell of slice ``i`` shares the uniforms
    and normals of the stream ``(seed, i)``; otherwise cell ``(i, j)`` has
    its own stream ``(seed, i, j)``.  Cells whose posterior underflows are
    marked stopping.
    """
    if prior.frame != "original":
        raise PreconditionError("solve expects a prior in the original frame")
    if abs(grid.t_grid[-1] - model.T) > 1e-12 * max(1.0, model.T):
        raise PreconditionError("time grid must end at the model horizon")
    if not grid.x_grid[0] <= model.x0 <= grid.x_grid[-1]:
        raise PreconditionError("x0 must lie inside the space grid")
    start = _time.perf_counter()
    tc = build(model)
    bprior = convert_frame(prior, tc)
    a_end, b_end = tc.terminal_affine
    N, M, K = grid.N, grid.M, grid.K
    xg = grid.x_grid

    V = np.empty((N + 1, M + 1))
    SE = np.full((N + 1, M + 1), np.nan)
    V[N] = xg
    n_fallback = 0
    sup_var = []
    blocks = [np.arange(lo, min(lo + CELL_BLOCK, M + 1)) for lo in range(0, M + 1, CELL_BLOCK)]
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for i in range(N - 1, -1, -1):
            step = kernel.bridge_step(model, grid.t_grid[i], grid.t_grid[i + 1])
            ctx = (tc, bprior, step, a_end, b_end, grid)
            if common_random_numbers:
                rng = np.random.default_rng([grid.seed, i])
                u_all = rng.random(K)
                eps_all = rng.standard_normal(K)

            def run(cols, i=i, ctx=ctx):
                if common_random_numbers:
                    u, eps = u_all, eps_all
                else:
                    u = np.empty((len(cols), K))
                    eps = np.empty((len(cols), K))
                    for r, j in enumerate(cols):
                        rng_j = np.random.default_rng([grid.seed, i, int(j)])
                        u[r] = rng_j.random(K)
                        eps[r] = rng_j.standard_normal(K)
                return _slice_block(ctx, i, cols, u, eps, V[i + 1])

            outs = list(pool.map(run, blocks)) if pool else [run(c) for c in blocks]
            cont = np.concatenate([o[0] for o in outs])
            SE[i] = np.concatenate([o[1] for o in outs])
            failed = np.concatenate([o[2] for o in outs])
            if np.any(failed):
                n_fallback += int(failed.sum())
                log.warning("slice %d: %d cells with unusable posterior marked stopping", i, failed.sum())
                cont = np.where(failed, -np.inf, cont)
            V[i] = np.maximum(xg, cont)
            if variance_cap is not None:
                s, y = tc.to_bridge_coords(grid.t_grid[i], xg)
                v = float(np.nanmax(posterior(bprior, float(s), y, tc.y0, strict=False).var()))
                sup_var.append(v)
                if v > variance_cap:
                    log.warning("slice %d: posterior variance %.4g exceeds cap %.4g", i, v, variance_cap)
    finally:
        if pool:
            pool.shutdown()
    D = V == xg
    meta = {
        "seed": int(grid.seed),
        "K": int(K),
        "workers": int(workers),
        "common_random_numbers": bool(common_random_numbers),
        "n_fallback_cells": n_fallback,
        "Tbar": tc.Tbar,
        "runtime_seconds": _time.perf_counter() - start,
    }
    if sup_var:
        meta["sup_posterior_variance"] = sup_var[::-1]
    return SolveResult(V, D, grid, prior.describe(), model.describe(), SE, meta)


def extract_boundary(result):
    """Maximal runs of stopping cells per slice, with run edges at node midpoints.

    Slices that are all stopping or all continuation say nothing about the
    side and are skipped by the single-boundary test.
    """
    xg = result.grid.x_grid
    M = len(xg) - 1
    intervals = []
    sides = set()
    single = True
    for row in result.D:
        d = np.concatenate([[False], row, [False]]).astype(int)
        starts = np.nonzero(np.diff(d) == 1)[0]
        ends = np.nonzero(np.diff(d) == -1)[0] - 1
        runs = []
        for a, b in zip(starts, ends):
            lo = xg[0] if a == 0 else 0.5 * (xg[a - 1] + xg[a])
            hi = xg[-1] if b == M else 0.5 * (xg[b] + xg[b + 1])
            runs.append((float(lo), float(hi)))
        intervals.append(runs)
        if not runs:
            # boundary lies outside the window on this slice
            continue
        if len(runs) != 1:
            single = False
            continue
        a, b = starts[0], ends[0]
        if a == 0 and b == M:
            continue
        if b == M:
            sides.add("upper")
        elif a == 0:
            sides.add("lower")
        else:
            single = False
    if len(sides) > 1:
        single = False
    side = (sides.pop() if sides else "upper") if single else None
    return Boundary(result.grid.t_grid.copy(), intervals, single, side)


def policy_value(result, model, prior, n_paths, seed=0):
    """Mean and standard error of ``X_tau`` under the first-entry rule read off ``D``."""
    times = result.grid.t_grid
    xg = result.grid.x_grid
    D = result.D
    payoffs = []
    for paths, _ in iter_blocks(model, prior, times, n_paths, seed):
        j = _nearest_index(xg, paths)
        stop = D[np.arange(len(times))[None, :], j]
        stop[:, -1] = True
        first = np.argmax(stop, axis=1)
        payoffs.append(paths[np.arange(len(paths)), first])
    pay = np.concatenate(payoffs)
    se = float(np.std(pay, ddof=1) / np.sqrt(len(pay))) if len(pay) > 1 else 0.0
    return float(np.mean(pay)), se


class McStoppingSolver(BaseEstimator):
    """Estimator wrapper around :func:`solve`.

    ``fit()`` runs the backward induction; ``predict(X)`` returns the stop
    decision at rows ``(t, x)`` of ``X`` (nearest cell) and ``value(X)`` the
    interpolated value.
    """

    def __init__(
        self,
        model=None,
        prior=None,
        n_time=200,
        n_space=200,
        n_samples=2000,
        x_bounds=DEFAULT_BOUNDS,
        seed=0,
        n_workers=1,
        common_random_numbers=True,
    ):
        self.model = model
        self.prior = prior
        self.n_time = n_time
        self.n_space = n_space
        self.n_samples = n_samples
        self.x_bounds = x_bounds
        self.seed = seed
        self.n_workers = n_workers
        self.common_random_numbers = common_random_numbers

    def fit(self, X=None, y=None):
        if self.model is None or self.prior is None:
            raise PreconditionError("model and prior must be set before fit")
        grid = default_grid(self.model.T, self.n_time, self.n_space, self.n_samples, self.x_bounds, self.seed)
        self.result_ = solve(self.model, self.prior, grid, self.n_workers, self.common_random_numbers)
        self.boundary_ = extract_boundary(self.result_)
        return self

    def _cells(self, X):
        X = check_array(X, ensure_min_features=2)
        g = self.result_.grid
        return _nearest_index(g.t_grid, X[:, 0]), X

    def predict(self, X):
        check_is_fitted(self, "result_")
        i, X = self._cells(X)
        j = _nearest_index(self.result_.grid.x_grid, X[:, 1])
        return self.result_.D[i, j]

    def value(self, X):
        check_is_fitted(self, "result_")
        i, X = self._cells(X)
        return np.array([interpolate_value(self.result_.V[a], x, self.result_.grid.x_grid) for a, x in zip(i, X[:, 1])])
