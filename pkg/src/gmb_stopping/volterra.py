"""Free-boundary integral equations for Gaussian and Dirac terminal laws.

In gain coordinates ``G_s = a0(s) + a1(s) Y_s`` the conditioned process is a
time-inhomogeneous Ornstein-Uhlenbeck process ``dG = rate (level - G) ds +
a1 dW``.  Its stopping boundary ``b`` solves

    b(s) = E_{s,b(s)}[G_1] - int_s^1 rate(u) E[(level(u) - G_u) 1(G_u >= b(u))] du

which is solved by damped Picard iteration.  The time integral is computed
with Gauss-Legendre nodes after the substitution
``u = s + (1 - s) sin^2(pi tau / 2)``, which removes the square-root
behaviour of the integrand at both ends; ``b`` between collocation nodes is
interpolated as a function of ``w = sqrt(1 - s)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline
from scipy.special import ndtr
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigurationError, ConvergenceError, PreconditionError
from .gmp_kernel import GmLaw
from .priors import DiracPrior, GaussianPrior, to_frame

log = logging.getLogger(__name__)

CASES = ("gaussian_prior", "dirac_prior")
TOL = 1e-6
MAX_ITER = 500
DAMPING = 0.7
N_QUAD = 48


@dataclass(frozen=True)
class OuGain:
    """Coefficients of ``dG = B (A - G) ds + a1 dW`` and the pin law of the case.

    ``pin_moments(s, y)`` gives the mean and variance of the bridge-frame
    pinning point given ``Y_s = y``.
    """

    case: str
    tc: object
    A_curve: object
    B_curve: object
    vol_curve: object
    terminal_value: float
    pin_moments: object

    def a0(self, s):
        return self.tc.a0(s)

    def a1(self, s):
        return self.vol_curve(s)


def build_dirac_gain(tc, zstar):
    """Gain dynamics of a bridge pinned at bridge-frame value ``zstar``.

    ``B = 1/(1-s) - a1'/a1`` and ``A = (a0' - (a1'/a1) a0 + (a1 z + a0)/(1-s)) / B``.
    """
    zstar = float(zstar)

    def B(s):
        s = np.asarray(s, dtype=float)
        return 1.0 / (1.0 - s) - tc.a1_log_slope(s)

    def A(s):
        s = np.asarray(s, dtype=float)
        k = tc.a1_log_slope(s)
        a0 = tc.a0(s)
        num = (tc.a0_prime(s) - k * a0) * (1.0 - s) + tc.a1(s) * zstar + a0
        return num / (1.0 - (1.0 - s) * k)

    def moments(s, y):
        return np.full(np.shape(y), zstar), np.zeros(np.shape(y))

    a_end, b_end = tc.terminal_affine
    return OuGain("dirac_prior", tc, A, B, tc.a1, a_end + b_end * zstar, moments)


def gaussian_drift_coefficients(theta, g2, y0):
    """``(a, b)`` with information drift ``a(s) + b(s) y`` under a ``N(theta, g2)`` pin.

    ``a = (g_s^2 / (1-s)) (theta/g2 - y0)`` and ``b = (g_s^2 / (1-s) - 1) / (1-s)``
    where ``g_s^2`` is the posterior variance.
    """
    c = 1.0 / g2 - 1.0

    def a(s):
        s = np.asarray(s, dtype=float)
        return (theta / g2 - y0) / (1.0 + (1.0 - s) * c)

    def b(s):
        s = np.asarray(s, dtype=float)
        return -c / (1.0 + (1.0 - s) * c)

    return a, b


def build_gaussian_gain(tc, prior, y0=None):
    """Gain dynamics under a Gaussian terminal law ``N(theta, g2)`` (bridge frame).

    The information drift is ``a(s) + b(s) y`` with ``q = 1 / (1 + (1-s)(1/g2 - 1))``,
    ``a = q (theta/g2 - y0)`` and ``b = -(1/g2 - 1) q``.  Requires ``g2 < 1``,
    ``a1`` non-increasing and a strictly negative total rate.
    """
    prior = to_frame(prior, tc, "bridge")
    if not isinstance(prior, GaussianPrior) or np.ndim(prior.loc):
        raise ConfigurationError("gaussian gain needs a scalar gaussian prior")
    theta, g2 = prior.loc, prior.variance
    y0 = tc.y0 if y0 is None else float(y0)
    if not g2 < 1.0:
        raise ConfigurationError(f"gaussian gain needs prior variance < 1 in the bridge frame, got {g2}")
    s_chk = np.linspace(0.0, 1.0, 2001)
    if np.max(tc.a1_prime(s_chk)) > 1e-12 * np.max(tc.a1(s_chk)):
        raise ConfigurationError("gaussian gain needs a1'(s) <= 0 on [0, 1]")
    drift_a, drift_b = gaussian_drift_coefficients(theta, g2, y0)

    def rate(s):
        # B in dG = (A + B G) ds; the OU rate is -B
        return tc.a1_log_slope(s) + drift_b(s)

    def Bt(s):
        return -rate(s)

    def At(s):
        s = np.asarray(s, dtype=float)
        a0 = tc.a0(s)
        A = tc.a0_prime(s) - rate(s) * a0 + tc.a1(s) * drift_a(s)
        return -A / rate(s)

    if np.max(rate(s_chk)) >= 0:
        raise ConfigurationError("gaussian gain needs B(s) = a1'/a1 + b(s) < 0 on [0, 1]")

    def moments(s, y):
        s = np.asarray(s, dtype=float)
        var = 1.0 / (1.0 / (1.0 - s) + 1.0 / g2 - 1.0)
        mean = var * (np.asarray(y, dtype=float) / (1.0 - s) + theta / g2 - y0)
        return mean, var * np.ones(np.shape(mean))

    return OuGain("gaussian_prior", tc, At, Bt, tc.a1, float(At(1.0)), moments)


def _marginal(gain, s, g, u, a0s, a1s, a0u, a1u):
    # G_u given G_s = g: mix the bridge from (s, y) to (1, Z) over the pin law
    y = (g - a0s) / a1s
    mz, vz = gain.pin_moments(s, y)
    w = (u - s) / (1.0 - s)
    my = y * (1.0 - w) + mz * w
    vy = (u - s) * (1.0 - u) / (1.0 - s) + w * w * vz
    return a0u + a1u * my, a1u * a1u * vy


def ou_marginal(gain, s, g, u):
    """Law of ``G_u`` given ``G_s = g`` for ``s <= u < 1`` (closed form)."""
    s, u = np.asarray(s, dtype=float), np.asarray(u, dtype=float)
    if np.any(u >= 1.0) or np.any(s > u) or np.any(s < 0):
        raise PreconditionError("ou_marginal needs 0 <= s <= u < 1")
    tc = gain.tc
    m, v = _marginal(gain, s, np.asarray(g, dtype=float), u, tc.a0(s), tc.a1(s), tc.a0(u), tc.a1(u))
    return GmLaw(m, np.maximum(v, 0.0))


def ou_marginal_numeric(gain, s, g, u):
    """Same law via quadrature of the linear SDE coefficients (independent route)."""
    if not 0.0 <= s <= u < 1.0:
        raise PreconditionError("ou_marginal needs 0 <= s <= u < 1")
    if s == u:
        return GmLaw(float(g), 0.0)
    B = lambda r: float(gain.B_curve(r))
    logphi = lambda r: -integrate.quad(B, r, u, epsabs=1e-13, epsrel=1e-12)[0]
    drift = lambda r: float(gain.B_curve(r) * gain.A_curve(r)) * np.exp(logphi(r))
    vol = lambda r: float(gain.vol_curve(r)) ** 2 * np.exp(2.0 * logphi(r))
    mean = np.exp(logphi(s)) * g + integrate.quad(drift, s, u, epsabs=1e-13, epsrel=1e-11)[0]
    var = integrate.quad(vol, s, u, epsabs=1e-13, epsrel=1e-11)[0]
    return GmLaw(mean, var)


def truncated_expectation(law, c, b):
    """``E[(c - G) 1(G >= b)]`` for ``G ~ N(mean, variance)``."""
    mu = np.asarray(law.mean, dtype=float)
    sd = np.sqrt(np.asarray(law.variance, dtype=float))
    c = np.asarray(c, dtype=float)
    b = np.asarray(b, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = (b - mu) / sd
        val = (c - mu) * ndtr(-d) - sd * np.exp(-0.5 * d * d) / np.sqrt(2.0 * np.pi)
    degenerate = (c - mu) * (mu >= b)
    val = np.where(sd > 0, val, degenerate)
    # far tails: exp underflows to zero while (c - mu) * 0 stays finite
    return np.where(np.isnan(val), 0.0, val)


def default_s_grid(n=200):
    """Collocation nodes uniform in ``w = sqrt(1 - s)``, from ``s = 0`` up to (excluding) 1."""
    w = np.linspace(1.0, 0.0, n + 1)[:-1]
    return 1.0 - w * w


@dataclass
class BoundarySolution:
    s_grid: np.ndarray
    b_values: np.ndarray
    iterations: int
    residual: float
    terminal_value: float
    case: str = ""
    history: list = None
    t_grid: np.ndarray = None
    b_y: np.ndarray = None
    defects: list = None

    def __call__(self, s):
        """Boundary in gain coordinates, interpolated in ``sqrt(1 - s)``."""
        return _interpolant(self.s_grid, self.b_values, self.terminal_value)(np.asarray(s, dtype=float))

    def rows(self):
        return zip(self.s_grid, self.t_grid, self.b_values, self.b_y, self.b_values)


def _interpolant(s_grid, b, anchor):
    w = np.concatenate([[0.0], np.sqrt(1.0 - s_grid)[::-1]])
    vals = np.concatenate([[anchor], b[::-1]])
    spline = CubicSpline(w, vals)
    return lambda s: spline(np.sqrt(np.clip(1.0 - s, 0.0, 1.0)))


class _Scheme:
    """Precomputed quadrature nodes and coefficient values for one grid."""

    def __init__(self, gain, s_grid, n_quad):
        tc = gain.tc
        self.gain = gain
        self.s = s_grid
        tau, wq = np.polynomial.legendre.leggauss(n_quad)
        tau, wq = 0.5 * (tau + 1.0), 0.5 * wq
        frac = np.sin(0.5 * np.pi * tau) ** 2
        jac = 0.5 * np.pi * np.sin(np.pi * tau)
        span = (1.0 - s_grid)[:, None]
        self.u = s_grid[:, None] + span * frac
        self.u = np.minimum(self.u, np.nextafter(1.0, 0.0))
        self.wu = span * jac * wq
        self.a0s, self.a1s = tc.a0(s_grid), tc.a1(s_grid)
        uf = self.u.ravel()
        self.a0u = tc.a0(uf).reshape(self.u.shape)
        self.a1u = tc.a1(uf).reshape(self.u.shape)
        self.rate = gain.B_curve(uf).reshape(self.u.shape)
        self.level = gain.A_curve(uf).reshape(self.u.shape)
        a_end, b_end = tc.terminal_affine
        self.a_end, self.b_end = a_end, b_end
        # slope of E_{s,b}[G_1] in b (the pin mean is affine in y)
        m1, _ = gain.pin_moments(s_grid, np.ones_like(s_grid))
        m0, _ = gain.pin_moments(s_grid, np.zeros_like(s_grid))
        self.slope = b_end * (m1 - m0) / self.a1s

    def step(self, b):
        """Preconditioned map ``(RHS(b) - d b) / (1 - d)``, same fixed points as RHS."""
        rhs = self.rhs(b)
        return b + (rhs - b) / (1.0 - self.slope), rhs

    def rhs(self, b):
        gain = self.gain
        s = self.s
        b_at = _interpolant(s, b, gain.terminal_value)
        bu = b_at(self.u)
        mean, var = _marginal(
            gain, s[:, None], b[:, None], self.u, self.a0s[:, None], self.a1s[:, None], self.a0u, self.a1u
        )
        te = truncated_expectation(GmLaw(mean, np.maximum(var, 0.0)), self.level, bu)
        integral = np.sum(self.rate * te * self.wu, axis=1)
        mz, _ = gain.pin_moments(s, (b - self.a0s) / self.a1s)
        return self.a_end + self.b_end * mz - integral


def picard_solve(gain, case=None, s_grid=None, tol=TOL, max_iter=MAX_ITER, damping=DAMPING, n_quad=N_QUAD):
    """Damped Picard iteration for the boundary, started at the terminal anchor.

    The iterated map is ``(RHS(b) - d b) / (1 - d)`` with ``d`` the exact
    slope of ``E_{s,b}[G_1]`` in ``b``; it has the same fixed points as the
    right-hand side but contracts near ``s = 1``, where ``d -> 1`` for
    Gaussian priors.  For Dirac priors ``d = 0`` and the map is the
    right-hand side itself.  Stops when the sup-norm update of the map drops
    below ``tol``; ``residual`` is the defect ``sup |RHS(b) - b|``.
    """
    case = gain.case if case is None else case
    if case != gain.case:
        raise PreconditionError(f"gain was built for {gain.case}, not {case}")
    if not tol > 0 or not 0 < damping <= 1:
        raise PreconditionError("need tol > 0 and damping in (0, 1]")
    s_grid = default_s_grid() if s_grid is None else np.asarray(s_grid, dtype=float)
    if np.any(np.diff(s_grid) <= 0) or s_grid[0] < 0 or s_grid[-1] >= 1:
        raise PreconditionError("s_grid must be strictly increasing inside [0, 1)")
    scheme = _Scheme(gain, s_grid, n_quad)
    b = np.full(len(s_grid), gain.terminal_value)
    history, defects = [], []
    for it in range(1, max_iter + 1):
        new, rhs = scheme.step(b)
        upd = float(np.max(np.abs(new - b)))
        res = float(np.max(np.abs(rhs - b)))
        history.append(upd)
        defects.append(res)
        log.debug("picard iteration %d update %.3e defect %.3e", it, upd, res)
        if not np.isfinite(upd):
            raise ConvergenceError("picard iteration produced non-finite values", upd)
        if upd < tol:
            b = new
            res = float(np.max(np.abs(scheme.rhs(b) - b)))
            break
        b = b + damping * (new - b)
    else:
        raise ConvergenceError(f"picard iteration did not converge in {max_iter} steps", history[-1])
    tc = gain.tc
    return BoundarySolution(
        s_grid=s_grid,
        b_values=b,
        iterations=it,
        residual=res,
        terminal_value=gain.terminal_value,
        case=case,
        history=history,
        t_grid=tc.t_of_s(s_grid),
        b_y=(b - tc.a0(s_grid)) / tc.a1(s_grid),
        defects=defects,
    )


def fixed_point_defect(gain, sol, n_quad=N_QUAD):
    """Sup-norm of ``RHS(b) - b`` for a given solution."""
    scheme = _Scheme(gain, sol.s_grid, n_quad)
    return float(np.max(np.abs(scheme.rhs(sol.b_values) - sol.b_values)))


def gain_for_prior(tc, prior):
    prior = to_frame(prior, tc, "bridge")
    if isinstance(prior, DiracPrior):
        return build_dirac_gain(tc, prior.z)
    if isinstance(prior, GaussianPrior):
        return build_gaussian_gain(tc, prior)
    raise ConfigurationError(f"no integral equation for {prior.kind} priors")


class VolterraBoundary(BaseEstimator):
    """Estimator wrapper: ``fit()`` solves for the boundary, ``predict(X)``
    returns the stop decision at rows ``(t, x)``."""

    def __init__(self, model=None, prior=None, n_grid=200, tol=TOL, max_iter=MAX_ITER, damping=DAMPING):
        self.model = model
        self.prior = prior
        self.n_grid = n_grid
        self.tol = tol
        self.max_iter = max_iter
        self.damping = damping

    def fit(self, X=None, y=None):
        from .timechange import build

        self.tc_ = build(self.model)
        self.gain_ = gain_for_prior(self.tc_, self.prior)
        self.solution_ = picard_solve(
            self.gain_, s_grid=default_s_grid(self.n_grid), tol=self.tol, max_iter=self.max_iter, damping=self.damping
        )
        return self

    def boundary(self, t):
        check_is_fitted(self, "solution_")
        return self.solution_(self.tc_.s_of_t(np.asarray(t, dtype=float)))

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        return X[:, 1] >= self.boundary(X[:, 0])
