import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from gmb_stopping import CoefficientCurve, ConfigurationError

CURVES = [
    CoefficientCurve("constant", (1.5,)),
    CoefficientCurve("sine", (2.0, 10.0)),
    CoefficientCurve("tanh-step", (-10.0, 0.475, 100.0, 0.5)),
    CoefficientCurve("polynomial-smile", (0.25, 4.0, 0.5, 4)),
    CoefficientCurve("tabulated", (0.0, 0.3, 0.7, 1.0, 1.0, 2.0, 0.5, 1.5)),
]

unit = st.floats(0.0, 1.0, allow_nan=False)


@pytest.mark.parametrize("curve", CURVES, ids=lambda c: c.kind)
@given(a=unit, b=unit)
def test_integral_matches_quadrature(curve, a, b):
    ref = integrate.quad(curve, a, b, epsabs=1e-13, epsrel=1e-12, limit=200, points=[0.5])[0]
    assert curve.integral(a, b) == pytest.approx(ref, rel=1e-9, abs=1e-11)


def test_caption_parametrisations():
    t = np.array([0.0, 0.05, 0.5, 0.75])
    np.testing.assert_allclose(CURVES[1](t), 2 * np.sin(10 * np.pi * t))
    np.testing.assert_allclose(CURVES[2](t), -10 + 0.475 * (1 + np.tanh(100 * (t - 0.5))))
    np.testing.assert_allclose(CURVES[3](t), 0.25 + (4 * (t - 0.5)) ** 4)


def test_tanh_integral_no_overflow():
    c = CoefficientCurve("tanh-step", (0.0, 1.0, 1e4, 0.5))
    assert np.isfinite(c.integral(0.0, 1.0))
    assert c.integral(0.0, 1.0) == pytest.approx(1.0, abs=1e-3)


def test_tabulated_from_csv(tmp_path):
    p = tmp_path / "z.csv"
    p.write_text("t,value\n0,1\n0.5,2\n1,1\n")
    c = CoefficientCurve.from_csv(p)
    assert c(0.5) == pytest.approx(2.0)
    assert c.minimum_on_domain() == pytest.approx(1.0)


@pytest.mark.parametrize(
    "kind,params",
    [("sine", (1.0,)), ("nope", (1.0,)), ("tabulated", (0.0, 0.5, 1.0)), ("tabulated", (0.2, 1.0, 1.0, 1.0))],
)
def test_bad_curves_rejected(kind, params):
    with pytest.raises(ConfigurationError):
        CoefficientCurve(kind, params)


def test_smile_power_must_be_integer():
    with pytest.raises(ConfigurationError):
        CoefficientCurve("polynomial-smile", (0.25, 4.0, 0.5, 2.5))
