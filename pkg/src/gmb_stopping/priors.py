"""Terminal densities, posterior pinning laws and related diagnostics.

A prior is the law of the terminal value, either in the bridge frame (law of
``Y_1``) or in the original frame (law of ``X_T``).  Given ``Y_s = y`` the
pinning point has density proportional to

    phi(z; y, 1 - s) / phi(z; y0, 1) * nu(z)

whose normalising constant is the Radon-Nikodym density ``psi(s, y)``.  Every
prior family here is closed under that update, so a posterior is again a
prior of the same kind (with batched parameters when ``y`` is an array).
All density ratios are evaluated in log space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, stats
from scipy.special import log_ndtr, logsumexp, ndtr, ndtri, ndtri_exp

from .exceptions import (
    ConfigurationError,
    ImpossibleStateError,
    IndeterminateOrderError,
    PreconditionError,
)

FRAMES = ("bridge", "original")
LR_GRID = 2048
LR_TIE = 1e-12
_LOG_2PI = np.log(2.0 * np.pi)


def _norm_logpdf(z, mean, var):
    d = np.asarray(z, dtype=float) - mean
    with np.errstate(over="ignore"):
        return -0.5 * (_LOG_2PI + np.log(var)) - 0.5 * d * d / var


def _safe_uniform(u):
    u = np.asarray(u, dtype=float)
    return np.clip(u, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))


# -- truncated standard normal helpers --------------------------------------


def _log_mass(a, b):
    """``log(Phi(b) - Phi(a))`` for standardised bounds ``a < b``."""
    a, b = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float))
    out = np.empty(a.shape)
    right = a > 0
    left = b < 0
    mid = ~(right | left)
    with np.errstate(divide="ignore"):
        la, lb = log_ndtr(-a[right]), log_ndtr(-b[right])
        out[right] = la + np.log1p(-np.exp(lb - la))
        la, lb = log_ndtr(a[left]), log_ndtr(b[left])
        out[left] = lb + np.log1p(-np.exp(la - lb))
        out[mid] = np.log(ndtr(b[mid]) - ndtr(a[mid]))
    return out


def _std_logpdf(x):
    return -0.5 * _LOG_2PI - 0.5 * x * x


def _truncnorm_ppf(u, a, b):
    """Quantile of the standard normal truncated to ``[a, b]`` (log-space inversion)."""
    u, a, b = np.broadcast_arrays(_safe_uniform(u), np.asarray(a, float), np.asarray(b, float))
    # mirror right-tail problems into the left tail, where log_ndtr is accurate
    with np.errstate(invalid="ignore"):
        flip = (a > 0) | (ndtr(a) + u * (ndtr(b) - ndtr(a)) > 0.5)
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    uu = np.where(flip, 1.0 - u, u)
    with np.errstate(divide="ignore"):
        logp = np.logaddexp(log_ndtr(lo), np.log(uu) + _log_mass(lo, hi))
    x = ndtri_exp(np.minimum(logp, 0.0))
    x = np.clip(x, lo, hi)
    return np.where(flip, -x, x)


_TAIL = 5.0
_GL_X, _GL_W = np.polynomial.legendre.leggauss(64)


def _tail_offset_moments(a, b):
    """Mean and variance of ``W - a`` for a standard normal ``W`` truncated to ``[a, b]``, ``a > 0`` large.

    The density of ``e = W - a`` is proportional to ``exp(-a e - e^2 / 2)``;
    integrating it directly avoids the cancellation in ``lambda(a) - a``.
    """
    span = np.minimum(b - a, 60.0 / a)[..., None]
    e = 0.5 * span * (_GL_X + 1.0)
    f = np.exp(-a[..., None] * e - 0.5 * e * e) * _GL_W
    i0 = f.sum(-1)
    m = (e * f).sum(-1) / i0
    return m, np.maximum((e * e * f).sum(-1) / i0 - m * m, 0.0)


def _truncnorm_moments(mean, var, lower, upper):
    mean, var, lower, upper = np.broadcast_arrays(*(np.asarray(v, float) for v in (mean, var, lower, upper)))
    sd = np.sqrt(var)
    a = (lower - mean) / sd
    b = (upper - mean) / sd
    logz = _log_mass(a, b)
    with np.errstate(invalid="ignore", over="ignore"):
        la = np.exp(_std_logpdf(a) - logz)
        lb = np.exp(_std_logpdf(b) - logz)
        ta = np.where(np.isfinite(a), a * la, 0.0)
        tb = np.where(np.isfinite(b), b * lb, 0.0)
        m = mean + sd * (la - lb)
        v = var * (1.0 + ta - tb - (la - lb) ** 2)
    shape = m.shape
    m, v, a, b, sd, lower, upper, var = (np.atleast_1d(np.array(u, float)) for u in (m, v, a, b, sd, lower, upper, var))
    # windows far in a tail: measure from the near bound instead
    right = a > _TAIL
    left = b < -_TAIL
    if np.any(right):
        em, ev = _tail_offset_moments(a[right], b[right])
        m[right] = lower[right] + sd[right] * em
        v[right] = var[right] * ev
    if np.any(left):
        em, ev = _tail_offset_moments(-b[left], -a[left])
        m[left] = upper[left] - sd[left] * em
        v[left] = var[left] * ev
    if not shape:
        return float(m[0]), float(max(v[0], 0.0))
    return m.reshape(shape), np.maximum(v, 0.0).reshape(shape)


# -- Gaussian product / ratio identity ----------------------------------------


def _gaussian_ratio_product_log(f1, f2, f3):
    (t1, v1), (t2, v2), (t3, v3) = f1, f2, f3
    prec = 1.0 / v1 + 1.0 / v2 - 1.0 / v3
    if np.any(np.asarray(prec) <= 0):
        raise PreconditionError("1/g1^2 + 1/g2^2 - 1/g3^2 must be positive")
    var = 1.0 / prec
    theta = var * (t1 / v1 + t2 / v2 - t3 / v3)
    c = t1**2 / (2 * v1) + t2**2 / (2 * v2) - t3**2 / (2 * v3) - theta**2 / (2 * var)
    log_scale = 0.5 * (np.log(v3) - np.log(v1) - np.log(v2) + np.log(var)) - c
    return log_scale, theta, var


def gaussian_ratio_product(f1, f2, f3):
    """Write ``f1 * f2 / f3`` of normal densities as ``scale * Normal(theta, var)``.

    Each argument is a ``(mean, variance)`` pair.  Returns
    ``(scale, theta, var)``.
    """
    log_scale, theta, var = _gaussian_ratio_product_log(f1, f2, f3)
    return np.exp(log_scale), theta, var


# -- priors -------------------------------------------------------------------


class Prior:
    """Base class for terminal laws.  Parameters may carry a batch shape."""

    kind = "abstract"
    atomic = False

    def __init__(self, frame):
        if frame not in FRAMES:
            raise ConfigurationError(f"frame must be one of {FRAMES}, got {frame!r}")
        self.frame = frame

    def _posterior(self, s, y, y0):  # pragma: no cover - abstract
        raise NotImplementedError

    def with_frame(self, frame):
        out = self.affine(0.0, 1.0)
        out.frame = frame
        return out

    def __repr__(self):
        return f"{type(self).__name__}({self.describe()})"


class DiracPrior(Prior):
    kind = "dirac"
    atomic = True

    def __init__(self, z, frame="bridge"):
        super().__init__(frame)
        self.z = float(z)

    def describe(self):
        return {"kind": self.kind, "frame": self.frame, "z": self.z}

    def affine(self, shift, scale):
        return DiracPrior(shift + scale * self.z, self.frame)

    @property
    def atoms(self):
        return np.array([self.z]), np.array([1.0])

    def mean(self):
        return self.z

    def var(self):
        return 0.0

    def ppf(self, u):
        return np.full(np.shape(u), self.z)

    def cdf(self, z):
        return (np.asarray(z) >= self.z).astype(float)

    def window(self):
        return self.z, self.z

    def _posterior(self, s, y, y0):
        log_psi = _norm_logpdf(self.z, y, 1.0 - s) - _norm_logpdf(self.z, y0, 1.0)
        return self, log_psi


class DiscretePrior(Prior):
    """Finite mixture of atoms; ``weights`` may be batched as ``(..., n_atoms)``."""

    kind = "discrete"
    atomic = True

    def __init__(self, points, weights, frame="bridge", _validate=True):
        super().__init__(frame)
        points = np.asarray(points, dtype=float)
        weights = np.asarray(weights, dtype=float)
        if _validate:
            order = np.argsort(points)
            points, weights = points[order], weights[..., order]
            if points.ndim != 1 or len(points) == 0:
                raise ConfigurationError("discrete prior needs a non-empty list of points")
            if np.any(np.diff(points) <= 0):
                raise ConfigurationError("discrete prior points must be distinct")
            if np.any(weights < 0):
                raise ConfigurationError("discrete prior weights must be non-negative")
            if abs(weights.sum() - 1.0) > 1e-12:
                raise ConfigurationError(f"discrete prior weights sum to {weights.sum()}, not 1")
        self.points = points
        self.weights = weights

    def describe(self):
        return {
            "kind": self.kind,
            "frame": self.frame,
            "points": self.points.tolist(),
            "weights": np.asarray(self.weights).tolist(),
        }

    def affine(self, shift, scale):
        return DiscretePrior(shift + scale * self.points, self.weights, self.frame, _validate=False)

    @property
    def atoms(self):
        return self.points, self.weights

    def mean(self):
        return np.sum(self.weights * self.points, axis=-1)

    def var(self):
        m = self.mean()
        return np.sum(self.weights * (self.points - np.asarray(m)[..., None]) ** 2, axis=-1)

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        cw = np.cumsum(self.weights, axis=-1)
        if cw.ndim == 1:
            idx = np.searchsorted(cw, u, side="right")
        else:
            idx = np.sum(u[..., None] >= cw[..., None, :], axis=-1)
        return self.points[np.minimum(idx, len(self.points) - 1)]

    def cdf(self, z):
        z = np.asarray(z, dtype=float)
        return np.sum(self.weights * (z[..., None] >= self.points), axis=-1)

    def window(self):
        return float(self.points[0]), float(self.points[-1])

    def _posterior(self, s, y, y0):
        y = np.asarray(y, dtype=float)
        with np.errstate(divide="ignore"):
            logw = (
                np.log(self.weights)
                + _norm_logpdf(self.points, y[..., None], 1.0 - s)
                - _norm_logpdf(self.points, y0, 1.0)
            )
        log_psi = logsumexp(logw, axis=-1)
        w = np.exp(logw - log_psi[..., None])
        return DiscretePrior(self.points, w, self.frame, _validate=False), log_psi


class GaussianPrior(Prior):
    kind = "gaussian"

    def __init__(self, mean, var, frame="bridge"):
        super().__init__(frame)
        if np.any(np.asarray(var) <= 0):
            raise ConfigurationError("gaussian prior variance must be positive")
        self.loc = mean if np.ndim(mean) else float(mean)
        self.variance = var if np.ndim(var) else float(var)

    def describe(self):
        return {"kind": self.kind, "frame": self.frame, "mean": self.loc, "variance": self.variance}

    def affine(self, shift, scale):
        return GaussianPrior(shift + scale * self.loc, scale**2 * self.variance, self.frame)

    def mean(self):
        return self.loc

    def var(self):
        return self.variance

    def logpdf(self, z):
        return _norm_logpdf(np.asarray(z, float), self.loc, self.variance)

    def ppf(self, u):
        u = _safe_uniform(u)
        loc = np.asarray(self.loc)
        sd = np.sqrt(np.asarray(self.variance))
        if loc.ndim:
            loc, sd = loc[..., None], sd[..., None]
        return loc + sd * ndtri(u)

    def cdf(self, z):
        return ndtr((np.asarray(z, float) - self.loc) / np.sqrt(self.variance))

    def window(self, q=1e-16):
        half = -ndtri(q) * np.sqrt(self.variance)
        return self.loc - half, self.loc + half

    def _posterior(self, s, y, y0):
        log_psi, theta, var = _gaussian_ratio_product_log(
            (y, 1.0 - s), (self.loc, self.variance), (y0, 1.0)
        )
        theta = np.asarray(theta, dtype=float)
        return GaussianPrior(theta, np.broadcast_to(var, theta.shape).copy() if theta.ndim else var,
                             self.frame), log_psi


class TruncatedGaussianPrior(Prior):
    """Normal ``(mean, var)`` restricted to ``[lower, upper]`` and renormalised."""

    kind = "truncated_gaussian"

    def __init__(self, mean, var, lower=-np.inf, upper=np.inf, frame="bridge"):
        super().__init__(frame)
        if np.any(np.asarray(var) <= 0):
            raise ConfigurationError("truncated gaussian variance must be positive")
        if not lower < upper:
            raise ConfigurationError(f"truncation bounds need lower < upper, got {lower}, {upper}")
        self.loc = mean if np.ndim(mean) else float(mean)
        self.variance = var if np.ndim(var) else float(var)
        self.lower = float(lower)
        self.upper = float(upper)

    def describe(self):
        return {
            "kind": self.kind,
            "frame": self.frame,
            "mean": self.loc,
            "variance": self.variance,
            "lower": self.lower,
            "upper": self.upper,
        }

    def affine(self, shift, scale):
        return TruncatedGaussianPrior(
            shift + scale * self.loc,
            scale**2 * self.variance,
            shift + scale * self.lower,
            shift + scale * self.upper,
            self.frame,
        )

    def _std_bounds(self):
        sd = np.sqrt(self.variance)
        return (self.lower - self.loc) / sd, (self.upper - self.loc) / sd

    def log_mass(self):
        return _log_mass(*self._std_bounds())

    def mean(self):
        return _truncnorm_moments(self.loc, self.variance, self.lower, self.upper)[0]

    def var(self):
        return _truncnorm_moments(self.loc, self.variance, self.lower, self.upper)[1]

    def logpdf(self, z):
        z = np.asarray(z, float)
        inside = (z >= self.lower) & (z <= self.upper)
        with np.errstate(divide="ignore"):
            return np.where(inside, _norm_logpdf(z, self.loc, self.variance) - self.log_mass(), -np.inf)

    def ppf(self, u):
        a, b = self._std_bounds()
        loc = np.asarray(self.loc)
        sd = np.sqrt(np.asarray(self.variance))
        if loc.ndim:
            loc, sd, a, b = loc[..., None], sd[..., None], a[..., None], b[..., None]
        return np.clip(loc + sd * _truncnorm_ppf(u, a, b), self.lower, self.upper)

    def cdf(self, z):
        z = np.clip(np.asarray(z, float), self.lower, self.upper)
        sd = np.sqrt(self.variance)
        a, _ = self._std_bounds()
        with np.errstate(divide="ignore"):
            return np.exp(_log_mass(a, (z - self.loc) / sd) - self.log_mass()) * (z > self.lower)

    def window(self, q=1e-15):
        return float(self.ppf(q)), float(self.ppf(1.0 - q))

    def _posterior(self, s, y, y0):
        log_scale, theta, var = _gaussian_ratio_product_log(
            (y, 1.0 - s), (self.loc, self.variance), (y0, 1.0)
        )
        theta = np.asarray(theta, dtype=float)
        var = np.broadcast_to(var, theta.shape).copy() if theta.ndim else float(var)
        post = TruncatedGaussianPrior(theta, var, self.lower, self.upper, self.frame)
        return post, log_scale + post.log_mass() - self.log_mass()


class TabulatedPrior(Prior):
    """Density tabulated on a grid, linear in between and zero outside.

    A prior carries a 1-D ``grid``; a batched posterior carries 2-D
    ``grid``/``density`` arrays (one row per conditioning state).
    """

    kind = "tabulated"

    def __init__(self, grid, density, frame="bridge", _validate=True):
        super().__init__(frame)
        grid = np.asarray(grid, dtype=float)
        density = np.asarray(density, dtype=float)
        if _validate:
            if grid.ndim != 1 or grid.shape != density.shape or len(grid) < 2:
                raise ConfigurationError("tabulated prior needs matching 1-D grid and density")
            if np.any(np.diff(grid) <= 0):
                raise ConfigurationError("tabulated prior grid must be strictly increasing")
            if np.any(density < 0):
                raise ConfigurationError("tabulated prior density must be non-negative")
            total = np.trapezoid(density, grid)
            if abs(total - 1.0) > 1e-6:
                raise ConfigurationError(f"tabulated density integrates to {total}, not 1")
            density = density / total
        self.grid = grid
        self.density = density

    @classmethod
    def from_csv(cls, path, frame="bridge"):
        data = np.genfromtxt(path, delimiter=",", comments="#")
        data = data[~np.isnan(data).any(axis=1)]
        return cls(data[:, 0], data[:, 1], frame)

    @classmethod
    def from_logpdf(cls, logpdf, lo, hi, n=4096, frame="bridge"):
        grid = np.linspace(lo, hi, n)
        dens = np.exp(logpdf(grid))
        return cls(grid, dens / np.trapezoid(dens, grid), frame)

    def describe(self):
        return {"kind": self.kind, "frame": self.frame, "n_grid": int(self.grid.shape[-1])}

    def affine(self, shift, scale):
        return TabulatedPrior(shift + scale * self.grid, self.density / scale, self.frame, _validate=False)

    def _cum(self):
        g, d = self.grid, self.density
        inc = 0.5 * (d[..., 1:] + d[..., :-1]) * np.diff(g, axis=-1)
        c = np.concatenate([np.zeros(d.shape[:-1] + (1,)), np.cumsum(inc, axis=-1)], axis=-1)
        return c / c[..., -1:]

    def mean(self):
        return np.trapezoid(self.grid * self.density, self.grid, axis=-1)

    def var(self):
        m = np.asarray(self.mean())[..., None]
        return np.trapezoid((self.grid - m) ** 2 * self.density, self.grid, axis=-1)

    def logpdf(self, z):
        with np.errstate(divide="ignore"):
            return np.log(np.interp(z, self.grid, self.density, left=0.0, right=0.0))

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        cum = self._cum()
        if cum.ndim == 1:
            return np.interp(u, cum, self.grid)
        out = np.empty(np.broadcast_shapes(u.shape, cum.shape[:-1] + (1,)))
        u = np.broadcast_to(u, out.shape)
        for i in np.ndindex(cum.shape[:-1]):
            out[i] = np.interp(u[i], cum[i], self.grid[i])
        return out

    def cdf(self, z):
        return np.interp(z, self.grid, self._cum(), left=0.0, right=1.0)

    def window(self):
        return float(self.grid[0]), float(self.grid[-1])

    def _posterior(self, s, y, y0):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        base = self.grid
        lo, hi = base[0], base[-1]
        n = len(base)
        grids = np.broadcast_to(base, y.shape + (n,)).copy()
        dens = np.broadcast_to(self.density, y.shape + (n,)).copy()
        if s > 0:
            # effective kernel in z: centre (y - (1 - s) y0) / s, sd sqrt((1 - s) / s)
            tau = np.sqrt((1.0 - s) / s)
            if tau < 8.0 * np.min(np.diff(base)):
                centre = np.clip((y - (1.0 - s) * y0) / s, lo, hi)
                wlo = np.maximum(lo, centre - 12.0 * tau)
                whi = np.minimum(hi, centre + 12.0 * tau)
                frac = np.linspace(0.0, 1.0, n)
                grids = wlo[:, None] + (whi - wlo)[:, None] * frac
                dens = np.interp(grids, base, self.density)
        with np.errstate(divide="ignore"):
            logw = np.log(dens) + _norm_logpdf(grids, y[:, None], 1.0 - s) - _norm_logpdf(grids, y0, 1.0)
        lmax = np.max(logw, axis=-1, keepdims=True)
        with np.errstate(invalid="ignore"):
            w = np.exp(logw - lmax)
            z = np.trapezoid(w, grids, axis=-1)
            log_psi = lmax[:, 0] + np.log(z)
            w = w / z[:, None]
        return TabulatedPrior(grids, w, self.frame, _validate=False), log_psi


# -- frame conversion, psi, posterior ------------------------------------------


def convert_frame(prior, tc):
    """Map a prior between the bridge frame and the original frame.

    ``X_T = a0(1) + a1(1) Y_1``, so the original-frame density is
    ``nu((z - a0(1)) / a1(1)) / a1(1)``.
    """
    a, b = tc.terminal_affine
    if prior.frame == "original":
        out = prior.affine(-a / b, 1.0 / b)
        out.frame = "bridge"
    else:
        out = prior.affine(a, b)
        out.frame = "original"
    return out


def to_frame(prior, tc, frame):
    return prior if prior.frame == frame else convert_frame(prior, tc)


def _check_s(s):
    if not 0.0 <= s < 1.0:
        raise PreconditionError(f"s must lie in [0, 1), got {s}")


def _check_bridge(prior):
    if prior.frame != "bridge":
        raise PreconditionError("prior must be in the bridge frame; use convert_frame first")


@dataclass(frozen=True)
class Posterior:
    """Law of the pinning point given ``Y_s = y`` (``y`` may be an array)."""

    base: Prior
    s: float
    y: object
    y0: float
    dist: Prior
    log_psi: object

    @property
    def psi(self):
        return np.exp(self.log_psi)

    @property
    def atomic(self):
        return self.dist.atomic

    def mean(self):
        return self.dist.mean()

    def var(self):
        return self.dist.var()

    def ppf(self, u):
        return self.dist.ppf(u)

    def cdf(self, z):
        return self.dist.cdf(z)

    def window(self):
        return self.dist.window()

    @property
    def atoms(self):
        return self.dist.atoms

    def total_mass(self):
        """Integral (or sum) of the posterior density; 1 up to quadrature error."""
        d = self.dist
        if d.atomic:
            return np.sum(d.atoms[1], axis=-1)
        if isinstance(d, TabulatedPrior):
            return np.trapezoid(d.density, d.grid, axis=-1)
        lo, hi = d.window()
        z = np.linspace(lo, hi, 20001)
        return integrate.simpson(np.exp(d.logpdf(z)), x=z)


def posterior(prior, s, y, y0, strict=True):
    """Posterior pinning law ``nu_{s,y}`` of a bridge-frame prior.

    ``y0`` is the bridge-frame starting value of ``Y``.  With ``strict`` an
    :class:`ImpossibleStateError` is raised when ``psi`` underflows; otherwise
    such entries come back as ``nan``.
    """
    _check_s(s)
    _check_bridge(prior)
    dist, log_psi = prior._posterior(float(s), y, float(y0))
    if np.ndim(y) == 0 and np.ndim(log_psi):
        log_psi = log_psi.reshape(())[()]
        if isinstance(dist, TabulatedPrior):
            dist = TabulatedPrior(dist.grid[0], dist.density[0], dist.frame, _validate=False)
    if strict and not np.all(np.isfinite(log_psi)):
        raise ImpossibleStateError(f"posterior mass underflows at s={s}, y={y}")
    return Posterior(prior, float(s), y, float(y0), dist, log_psi)


def psi(prior, s, y, y0):
    """Radon-Nikodym density ``int phi(z; y, 1-s) / phi(z; y0, 1) nu(z) dz``."""
    return posterior(prior, s, y, y0).psi


def posterior_mean_var(post):
    """``(E[Z_{s,y}], Var[Z_{s,y}])``."""
    return post.mean(), post.var()


def drift(prior, s, y, y0):
    """Information drift ``(E[Z_{s,y}] - y) / (1 - s)``."""
    _check_s(s)
    post = posterior(prior, s, y, y0)
    return (post.mean() - np.asarray(y, float)) / (1.0 - s)


def sample_posterior(post, count, rng):
    """Draw ``count`` i.i.d. pinning points by inversion (one row per batched state)."""
    if count < 1:
        raise PreconditionError("count must be >= 1")
    shape = np.shape(post.log_psi) + (count,)
    return post.ppf(rng.random(shape))


# -- stochastic order ----------------------------------------------------------


def _support(p):
    if p.atomic:
        pts, w = p.atoms
        pts = pts[np.asarray(w) > 0]
        return float(pts[0]), float(pts[-1])
    if isinstance(p, TruncatedGaussianPrior):
        return p.lower, p.upper
    if isinstance(p, TabulatedPrior):
        nz = np.nonzero(p.density > 0)[0]
        return float(p.grid[nz[0]]), float(p.grid[nz[-1]])
    return -np.inf, np.inf


def _pairwise_monotone(l1, l2, tol=LR_TIE):
    """True iff ``l1[i] + l2[j] >= l1[j] + l2[i] - tol`` for all ``i < j``."""
    n = len(l1)
    for start in range(0, n, 256):
        i = np.arange(start, min(n, start + 256))
        left = l1[i, None] + l2[None, :]
        right = l1[None, :] + l2[i, None]
        upper = np.arange(n)[None, :] > i[:, None]
        if np.any((left < right - tol) & upper):
            return False
    return True


def lr_order_leq(p1, p2, n_grid=LR_GRID):
    """Likelihood-ratio order test ``p1 <=lr p2`` (``p2 / p1`` non-decreasing)."""
    if p1.frame != p2.frame:
        raise PreconditionError("priors must share a coordinate frame")
    if p1.atomic and p2.atomic:
        pts1, w1 = p1.atoms
        pts2, w2 = p2.atoms
        z = np.union1d(pts1, pts2)
        with np.errstate(divide="ignore"):
            l1 = np.log(np.array([w1[pts1 == v].sum() for v in z]))
            l2 = np.log(np.array([w2[pts2 == v].sum() for v in z]))
        return _pairwise_monotone(l1, l2)
    if p1.atomic or p2.atomic:
        # an atom facing a density: ordered only when the supports are separated
        return _support(p1)[1] <= _support(p2)[0] + LR_TIE
    lo = min(p1.window()[0], p2.window()[0])
    hi = max(p1.window()[1], p2.window()[1])
    z = np.linspace(lo, hi, n_grid)
    l1, l2 = p1.logpdf(z), p2.logpdf(z)
    if not np.any(np.isfinite(l1) & np.isfinite(l2)):
        raise IndeterminateOrderError("densities have no common support; ratio undefined")
    return _pairwise_monotone(l1, l2)


def single_boundary_condition(prior, y0, s_grid, y_grid):
    """Sign of ``Var[Z_{s,y}] - (1 - s)`` over a grid, plus per-slice variance suprema.

    ``status`` is ``"all_le"`` (drift non-increasing in ``y``), ``"all_ge"``
    or ``"mixed"``.
    """
    y_grid = np.asarray(y_grid, dtype=float)
    excess = []
    sup_var = []
    for s in np.asarray(s_grid, dtype=float):
        v = np.asarray(posterior(prior, s, y_grid, y0).var(), dtype=float)
        excess.append(v - (1.0 - s))
        sup_var.append(float(np.max(v)))
    excess = np.array(excess)
    max_excess = float(np.max(excess))
    max_deficit = float(np.max(-excess))
    if max_excess <= LR_TIE:
        status = "all_le"
    elif max_deficit <= LR_TIE:
        status = "all_ge"
    else:
        status = "mixed"
    return {
        "status": status,
        "max_excess": max_excess,
        "max_deficit": max_deficit,
        "worst_violation": min(max(max_excess, 0.0), max(max_deficit, 0.0)),
        "n_violations": int(np.sum(excess > LR_TIE)),
        "sup_var_per_slice": sup_var,
    }


# -- Wasserstein-1 ---------------------------------------------------------------


def wasserstein_1d(p1, p2, n_grid=20001):
    """Wasserstein-1 distance ``int |F1 - F2| dz`` between two scalar laws."""
    if p1.atomic and p2.atomic:
        (a, wa), (b, wb) = p1.atoms, p2.atoms
        return float(stats.wasserstein_distance(a, b, np.ravel(wa), np.ravel(wb)))
    lo = min(p1.window()[0], p2.window()[0])
    hi = max(p1.window()[1], p2.window()[1])
    z = np.linspace(lo, hi, n_grid)
    for p in (p1, p2):
        if p.atomic:
            z = np.union1d(z, p.atoms[0])
    mid = 0.5 * (z[1:] + z[:-1])
    return float(np.sum(np.abs(p1.cdf(mid) - p2.cdf(mid)) * np.diff(z)))


def wasserstein_lipschitz(prior, s, y_grid, y0):
    """Largest ``W1(nu_{s,y_k}, nu_{s,y_{k+1}}) / |y_{k+1} - y_k|`` over a grid."""
    y_grid = np.asarray(y_grid, dtype=float)
    posts = [posterior(prior, s, y, y0) for y in y_grid]
    ratios = [
        wasserstein_1d(posts[k], posts[k + 1]) / (y_grid[k + 1] - y_grid[k])
        for k in range(len(posts) - 1)
    ]
    return float(np.max(ratios))
