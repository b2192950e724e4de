"""Reduction of a Gauss-Markov process to a Brownian motion on unit time.

With ``h(t) = r1(t) / r2(t)`` and ``Tbar = h(T)`` the process satisfies
``X_t = G(s, Y_s)`` where ``s = h(t) / Tbar``, ``Y`` is a Brownian motion on
``[0, 1]`` and ``G(s, y) = a0(s) + a1(s) y`` is the gain function.
"""

from __future__ import annotations

import csv

import numpy as np
from scipy.interpolate import PchipInterpolator

from .exceptions import ConfigurationError, PreconditionError

DEFAULT_RESOLUTION = 4096
MAX_RESOLUTION = 1 << 18
ROUND_TRIP_TOL = 1e-10

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(12)


def _gl_integral(f, a, b):
    """Gauss-Legendre integral of ``f`` over ``[a, b]`` elementwise (short intervals)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    u = mid[..., None] + half[..., None] * _GL_NODES
    return half * np.sum(f(u) * _GL_WEIGHTS, axis=-1)


class TimeChange:
    """Tabulated time change and gain coefficients of a :class:`GmpModel`.

    Use :func:`build` to construct one.  Instances are immutable after
    construction and every query is a pure function.
    """

    def __init__(self, model, resolution=DEFAULT_RESOLUTION):
        if resolution < 2:
            raise PreconditionError(f"resolution must be >= 2, got {resolution}")
        self.model = model
        while True:
            self._tabulate(resolution)
            err = self.round_trip_error()
            if err < ROUND_TRIP_TOL or resolution >= MAX_RESOLUTION:
                break
            resolution *= 2
        self.resolution = resolution

    # -- integrands in original time -------------------------------------
    def _log_phi0(self, t):
        return self.model.beta.integral(0.0, t)

    def _h_rate(self, t):
        # h'(t) = zeta^2 / phi(0, t)^2
        return self.model.zeta(t) ** 2 * np.exp(-2.0 * self._log_phi0(t))

    def _alpha_rate(self, t):
        return self.model.alpha(t) * np.exp(-self._log_phi0(t))

    def _tabulate(self, resolution):
        T = self.model.T
        t = np.linspace(0.0, T, resolution)
        h_inc = _gl_integral(self._h_rate, t[:-1], t[1:])
        a_inc = _gl_integral(self._alpha_rate, t[:-1], t[1:])
        h = np.concatenate([[0.0], np.cumsum(h_inc)])
        if np.any(np.diff(h) <= 0):
            raise ConfigurationError("tabulated h(t) is not strictly increasing")
        self._t_tab = t
        self._h_tab = h
        self._ia_tab = np.concatenate([[0.0], np.cumsum(a_inc)])
        self.Tbar = float(h[-1])
        self._s_tab = h / self.Tbar
        self._s_tab[-1] = 1.0
        self._t_of_s_interp = PchipInterpolator(self._s_tab, t)

    # -- original-time functions ----------------------------------------
    def _index(self, t):
        k = np.searchsorted(self._t_tab, t, side="right") - 1
        return np.clip(k, 0, len(self._t_tab) - 2)

    def h(self, t):
        """``h(t) = int_0^t zeta^2 / phi(0, u)^2 du`` (vectorised)."""
        t = np.asarray(t, dtype=float)
        k = self._index(t)
        return self._h_tab[k] + _gl_integral(self._h_rate, self._t_tab[k], t)

    def phi0(self, t):
        """``phi(0, t)``."""
        return np.exp(self._log_phi0(np.asarray(t, dtype=float)))

    def m(self, t):
        """Mean of the process started at zero, ``m_{0,0}(t)``."""
        t = np.asarray(t, dtype=float)
        k = self._index(t)
        ia = self._ia_tab[k] + _gl_integral(self._alpha_rate, self._t_tab[k], t)
        return self.phi0(t) * ia

    def s_of_t(self, t):
        t = np.asarray(t, dtype=float)
        if np.any((t < 0) | (t > self.model.T * (1 + 1e-14))):
            raise PreconditionError(f"t must lie in [0, {self.model.T}]")
        return self.h(t) / self.Tbar

    def t_of_s(self, s):
        """Inverse time change: PCHIP guess plus two Newton corrections."""
        s = np.asarray(s, dtype=float)
        if np.any((s < 0) | (s > 1 + 1e-14)):
            raise PreconditionError("s must lie in [0, 1]")
        T = self.model.T
        target = s * self.Tbar
        t = np.clip(self._t_of_s_interp(s), 0.0, T)
        for _ in range(2):
            t = np.clip(t - (self.h(t) - target) / self._h_rate(t), 0.0, T)
        return t

    def round_trip_error(self):
        mid = 0.5 * (self._t_tab[1:] + self._t_tab[:-1])
        probe = np.concatenate([self._t_tab, mid])
        return float(np.max(np.abs(self.t_of_s(self.s_of_t(probe)) - probe)))

    # -- gain coefficients on unit time ---------------------------------
    def _dt_ds(self, t):
        return self.Tbar / self._h_rate(t)

    def a0(self, s):
        return self.m(self.t_of_s(s))

    def a1(self, s):
        return self.phi0(self.t_of_s(s)) * np.sqrt(self.Tbar)

    def a0_prime(self, s):
        # d/ds m(t(s)) with m' = alpha + beta m
        t = self.t_of_s(s)
        return (self.model.alpha(t) + self.model.beta(t) * self.m(t)) * self._dt_ds(t)

    def a1_prime(self, s):
        t = self.t_of_s(s)
        return self.model.beta(t) * self.phi0(t) * np.sqrt(self.Tbar) * self._dt_ds(t)

    def a1_log_slope(self, s):
        """``a1'(s) / a1(s)``."""
        t = self.t_of_s(s)
        return self.model.beta(t) * self._dt_ds(t)

    # -- coordinate maps -----------------------------------------------
    def to_bridge_coords(self, t, x):
        """Map ``(t, x)`` to ``(s, y)``."""
        t = np.asarray(t, dtype=float)
        s = self.s_of_t(t)
        y = (np.asarray(x, dtype=float) - self.m(t)) / (self.phi0(t) * np.sqrt(self.Tbar))
        return s, y

    def from_bridge_coords(self, s, y):
        """Map ``(s, y)`` back to ``(t, x)``."""
        return self.t_of_s(s), self.gain(s, y)

    def gain(self, s, y):
        """Gain ``G(s, y) = a0(s) + a1(s) y``."""
        s = np.asarray(s, dtype=float)
        if np.any((s < 0) | (s > 1 + 1e-14)):
            raise PreconditionError("s must lie in [0, 1]")
        t = self.t_of_s(s)
        return self.m(t) + self.phi0(t) * np.sqrt(self.Tbar) * np.asarray(y, dtype=float)

    @property
    def y0(self):
        """Starting point of the bridge-frame Brownian motion, ``x0 / sqrt(Tbar)``."""
        return self.model.x0 / np.sqrt(self.Tbar)

    @property
    def terminal_affine(self):
        """``(a0(1), a1(1))``: ``X_T = a0(1) + a1(1) Y_1``."""
        T = self.model.T
        return float(self.m(T)), float(self.phi0(T) * np.sqrt(self.Tbar))

    def to_csv(self, path):
        """Dump the tabulation (t, h, s, a0, a1) for debugging."""
        t = self._t_tab
        s = self._s_tab
        a0 = self.m(t)
        a1 = self.phi0(t) * np.sqrt(self.Tbar)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "h", "s", "a0", "a1"])
            for row in zip(t, self._h_tab, s, a0, a1):
                w.writerow([repr(float(v)) for v in row])


def build(model, resolution=DEFAULT_RESOLUTION):
    """Build the :class:`TimeChange` of ``model``."""
    return TimeChange(model, resolution)


def coefficient_bounds(tc, n=10001):
    """Grid suprema ``(A0, A0', A1, A1')`` of ``|a0|, |a0'|, a1, |a1'|`` on ``[0, 1]``."""
    s = np.linspace(0.0, 1.0, n)
    return (
        float(np.max(np.abs(tc.a0(s)))),
        float(np.max(np.abs(tc.a0_prime(s)))),
        float(np.max(tc.a1(s))),
        float(np.max(np.abs(tc.a1_prime(s)))),
    )
