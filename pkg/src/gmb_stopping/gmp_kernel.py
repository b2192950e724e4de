"""Gaussian transition laws of the unconditioned Gauss-Markov process.

The process solves ``dX = (alpha(t) + beta(t) X) dt + zeta(t) dB`` on
``[0, T]`` with ``X_0 = x0``.  All quantities here are exact Gaussian
formulas; time integrals of ``alpha`` and ``zeta`` go through adaptive
Gauss-Kronrod quadrature (QUADPACK), integrals of ``beta`` are exact.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .curves import CoefficientCurve
from .exceptions import ConfigurationError, DegenerateIntervalError, PreconditionError

QUAD_RTOL = 1e-10
QUAD_LIMIT = 500
# negative variances closer than this to zero are treated as rounding noise
VARIANCE_CLAMP = 1e-12


@dataclass(frozen=True)
class GmpModel:
    """Coefficients, horizon and initial value of a Gauss-Markov process."""

    alpha: CoefficientCurve
    beta: CoefficientCurve
    zeta: CoefficientCurve
    T: float = 1.0
    x0: float = 0.0

    def __post_init__(self):
        if not self.T > 0:
            raise ConfigurationError(f"horizon T must be positive, got {self.T}")
        for name in ("alpha", "beta", "zeta"):
            curve = getattr(self, name)
            lo, hi = curve.domain
            if lo > 1e-12 or hi < self.T - 1e-12:
                raise ConfigurationError(
                    f"{name} curve domain {curve.domain} does not cover [0, {self.T}]"
                )
        if self.zeta.minimum_on_domain() <= 0:
            raise ConfigurationError("zeta must be strictly positive on [0, T]")

    @classmethod
    def brownian(cls, T=1.0, x0=0.0):
        dom = (0.0, T)
        return cls(
            CoefficientCurve.constant(0.0, dom),
            CoefficientCurve.constant(0.0, dom),
            CoefficientCurve.constant(1.0, dom),
            T,
            x0,
        )

    @classmethod
    def ornstein_uhlenbeck(cls, beta=-1.0, zeta=1.0, alpha=0.0, T=1.0, x0=0.0):
        dom = (0.0, T)
        return cls(
            CoefficientCurve.constant(alpha, dom),
            CoefficientCurve.constant(beta, dom),
            CoefficientCurve.constant(zeta, dom),
            T,
            x0,
        )

    def describe(self):
        return {
            "alpha": self.alpha.describe(),
            "beta": self.beta.describe(),
            "zeta": self.zeta.describe(),
            "T": self.T,
            "x0": self.x0,
        }


@dataclass(frozen=True)
class GmLaw:
    """A (possibly batched) Gaussian law."""

    mean: object
    variance: object

    @property
    def std(self):
        return np.sqrt(self.variance)


def _check_times(model, t, tp):
    if not (0.0 <= t <= tp <= model.T * (1 + 1e-14)):
        raise PreconditionError(f"need 0 <= t <= tp <= T={model.T}, got t={t}, tp={tp}")


def _quad(f, a, b):
    if b <= a:
        return 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, _ = integrate.quad(f, a, b, epsabs=1e-14, epsrel=QUAD_RTOL, limit=QUAD_LIMIT)
        except integrate.IntegrationWarning:
            # accept the best estimate; the panel limit was hit on a steep curve
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                val, _ = integrate.quad(f, a, b, epsabs=1e-14, epsrel=QUAD_RTOL, limit=4 * QUAD_LIMIT)
    return float(val)


def log_phi(model, t, tp):
    """``log phi(t, tp)``, the integral of beta over ``[t, tp]`` (vectorised, no checks)."""
    return model.beta.integral(t, tp)


def phi(model, t, tp):
    """Propagator ``exp(int_t^tp beta(u) du)``; exactly 1 when ``t == tp``."""
    _check_times(model, t, tp)
    if t == tp:
        return 1.0
    return float(np.exp(log_phi(model, t, tp)))


def _mean_shift(model, t, tp):
    # m_{t,0}(tp) = int_t^tp alpha(u) phi(u, tp) du
    return _quad(lambda u: model.alpha(u) * np.exp(log_phi(model, u, tp)), t, tp)


def mean(model, t, x, tp):
    """Conditional mean ``E[X_tp | X_t = x]``."""
    _check_times(model, t, tp)
    if t == tp:
        return x
    return phi(model, t, tp) * x + _mean_shift(model, t, tp)


def clamp_variance(v):
    """Clamp tiny negative variances to zero; larger negatives are an error."""
    if v < 0:
        if v < -VARIANCE_CLAMP:
            raise ArithmeticError(f"computed variance {v} is negative")
        return 0.0
    return v


def variance(model, t, tp):
    """Conditional variance ``Var[X_tp | X_t]``; zero iff ``t == tp``."""
    _check_times(model, t, tp)
    if t == tp:
        return 0.0
    v = _quad(lambda u: model.zeta(u) ** 2 * np.exp(2.0 * log_phi(model, u, tp)), t, tp)
    return clamp_variance(v)


def cov_factors(model, t):
    """Covariance factors ``(r1(t), r2(t))`` with ``Cov[X_t, X_t'] = r1(min) r2(max)``."""
    _check_times(model, 0.0, t)
    if t == 0:
        return 0.0, 1.0
    r2 = phi(model, 0.0, t)
    return variance(model, 0.0, t) / r2, r2


@dataclass(frozen=True)
class BridgeStep:
    """Precomputed scalars for the pinned transition from ``t`` to ``tp``.

    The law of ``X_tp`` given ``X_t = x`` and ``X_T = z`` is Gaussian with
    mean affine in ``(x, z)`` and variance independent of both.
    """

    t: float
    tp: float
    phi_step: float
    shift_step: float
    phi_end: float
    shift_end: float
    gain: float
    variance: float

    def mean(self, x, z):
        x = np.asarray(x, dtype=float)
        m_step = self.phi_step * x + self.shift_step
        m_end = self.phi_end * x + self.shift_end
        return m_step + self.gain * (np.asarray(z, dtype=float) - m_end)

    def law(self, x, z):
        m = self.mean(x, z)
        return GmLaw(m, np.full(np.shape(m), self.variance) if np.ndim(m) else self.variance)


def bridge_step(model, t, tp):
    """Scalars of the pinned transition ``t -> tp`` (see :class:`BridgeStep`)."""
    if t == tp:
        raise DegenerateIntervalError(f"bridge step needs t < tp, got t = tp = {t}")
    _check_times(model, t, tp)
    T = model.T
    v_step = variance(model, t, tp)
    v_end = variance(model, t, T)
    v_rest = variance(model, tp, T) if tp < T else 0.0
    cov = v_step * phi(model, tp, T)
    # Var = v_step - cov^2 / v_end, rewritten as a product so it stays >= 0
    var = v_step * v_rest / v_end
    return BridgeStep(
        t=t,
        tp=tp,
        phi_step=phi(model, t, tp),
        shift_step=_mean_shift(model, t, tp),
        phi_end=phi(model, t, T),
        shift_end=_mean_shift(model, t, T),
        gain=cov / v_end,
        variance=clamp_variance(var),
    )


def bridge_step_law(model, t, x, tp, z):
    """Law of ``X_tp`` given ``X_t = x`` and ``X_T = z`` (``x``, ``z`` broadcast)."""
    return bridge_step(model, t, tp).law(x, z)
