"""Time-dependent coefficient curves for the Gauss-Markov SDE.

Each curve is a callable of time with a vectorised ``integral(a, b)``.  The
analytic kinds integrate in closed form; tabulated curves use a monotone
cubic (PCHIP) interpolant and its exact antiderivative.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator

from .exceptions import ConfigurationError

KINDS = ("constant", "sine", "tanh-step", "polynomial-smile", "tabulated")

_N_PARAMS = {"constant": 1, "sine": 2, "tanh-step": 4, "polynomial-smile": 4}


def _log_cosh(x):
    # log(cosh(x)) without overflow for large |x|
    return np.logaddexp(x, -x) - np.log(2.0)


@dataclass(frozen=True)
class CoefficientCurve:
    """A continuous coefficient function on a closed time interval.

    Parametrisations (``params`` order):

    * ``constant``: ``[c]`` gives ``c``
    * ``sine``: ``[amplitude, omega]`` gives ``amplitude * sin(omega * pi * t)``
    * ``tanh-step``: ``[base, half_jump, k, t0]`` gives
      ``base + half_jump * (1 + tanh(k * (t - t0)))``
    * ``polynomial-smile``: ``[level, scale, t0, power]`` gives
      ``level + (scale * (t - t0)) ** power``
    * ``tabulated``: ``[t_0, ..., t_n, v_0, ..., v_n]`` knots and values,
      interpolated with PCHIP.
    """

    kind: str
    params: tuple = ()
    domain: tuple = (0.0, 1.0)
    _interp: object = field(default=None, init=False, repr=False, compare=False)
    _antider: object = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown curve kind {self.kind!r}; expected one of {KINDS}")
        params = tuple(float(p) for p in self.params)
        object.__setattr__(self, "params", params)
        lo, hi = (float(d) for d in self.domain)
        if not hi > lo:
            raise ConfigurationError(f"curve domain must be a non-empty interval, got {self.domain}")
        object.__setattr__(self, "domain", (lo, hi))

        if self.kind == "tabulated":
            if len(params) < 4 or len(params) % 2:
                raise ConfigurationError("tabulated curve needs an even number (>= 4) of parameters")
            n = len(params) // 2
            t, v = np.array(params[:n]), np.array(params[n:])
            if np.any(np.diff(t) <= 0):
                raise ConfigurationError("tabulated curve times must be strictly increasing")
            if t[0] > lo + 1e-12 or t[-1] < hi - 1e-12:
                raise ConfigurationError(
                    f"tabulated curve covers [{t[0]}, {t[-1]}] but the domain is [{lo}, {hi}]"
                )
            interp = PchipInterpolator(t, v, extrapolate=True)
            object.__setattr__(self, "_interp", interp)
            object.__setattr__(self, "_antider", interp.antiderivative())
        elif len(params) != _N_PARAMS[self.kind]:
            raise ConfigurationError(
                f"{self.kind} curve takes {_N_PARAMS[self.kind]} parameters, got {len(params)}"
            )
        if self.kind == "polynomial-smile":
            power = params[3]
            if power < 0 or power != int(power):
                raise ConfigurationError("polynomial-smile power must be a non-negative integer")

    @classmethod
    def constant(cls, value, domain=(0.0, 1.0)):
        return cls("constant", (value,), domain)

    @classmethod
    def from_csv(cls, path, domain=(0.0, 1.0)):
        """Load a tabulated curve from a two-column ``time,value`` CSV file."""
        times, values = [], []
        with open(Path(path), newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().startswith("#"):
                    continue
                try:
                    t, v = float(row[0]), float(row[1])
                except ValueError:
                    # header line
                    continue
                times.append(t)
                values.append(v)
        return cls("tabulated", tuple(times) + tuple(values), domain)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        p = self.params
        if self.kind == "constant":
            return np.full_like(t, p[0])
        if self.kind == "sine":
            return p[0] * np.sin(p[1] * np.pi * t)
        if self.kind == "tanh-step":
            return p[0] + p[1] * (1.0 + np.tanh(p[2] * (t - p[3])))
        if self.kind == "polynomial-smile":
            return p[0] + (p[1] * (t - p[2])) ** int(p[3])
        return self._interp(t)

    def integral(self, a, b):
        """Exact integral of the curve over ``[a, b]`` (vectorised)."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        p = self.params
        if self.kind == "constant":
            return p[0] * (b - a)
        if self.kind == "sine":
            w = p[1] * np.pi
            if w == 0.0:
                return np.zeros(np.broadcast(a, b).shape)
            return p[0] / w * (np.cos(w * a) - np.cos(w * b))
        if self.kind == "tanh-step":
            base, half, k, t0 = p
            out = (base + half) * (b - a)
            if k != 0.0:
                out = out + half * (_log_cosh(k * (b - t0)) - _log_cosh(k * (a - t0))) / k
            return out
        if self.kind == "polynomial-smile":
            level, scale, t0, power = p
            n = int(power) + 1
            return level * (b - a) + scale ** (n - 1) * ((b - t0) ** n - (a - t0) ** n) / n
        return self._antider(b) - self._antider(a)

    def minimum_on_domain(self, n=4001):
        """Minimum over a dense grid of the domain (plus tabulation knots)."""
        t = np.linspace(*self.domain, n)
        if self.kind == "tabulated":
            knots = np.array(self.params[: len(self.params) // 2])
            t = np.concatenate([t, knots[(knots >= self.domain[0]) & (knots <= self.domain[1])]])
        return float(np.min(self(t)))

    def describe(self):
        return {"kind": self.kind, "params": list(self.params)}
