import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.polynomial import polynomial as P

from mvlab.model import (
    FLAT_INNER,
    PRESET_NAMES,
    ClampedSigma,
    ConstantSigma,
    Model,
    model_zero_crossings,
    preset,
    sigma_from_json,
    validate_assumptions,
    zero_crossing_number,
    zero_crossing_number_sampled,
)
from mvlab.polynomials import PiecewisePolynomial

PROBES = np.linspace(-3.1, 3.3, 20)


def _reference_vprime(name, x):
    x = np.asarray(x, dtype=float)
    if name == "SymmetricDoubleWell":
        return x**3 - x
    if name == "FlatBottomDoubleWell":
        a = np.abs(x)
        out = np.where(a >= 1, x**3 - x, 0.0)
        return np.where(a < FLAT_INNER, x**3 - FLAT_INNER**2 * x, out)
    if name == "AsymmetricDoubleWell":
        return x * (x - 1) * (x + 2)
    if name == "MultiWell":
        return x * (x - 1) * (x + 1) * (x - 2) * (x + 2)
    if name == "PerturbedDoubleWell":
        return x**3 - x + 0.1 * np.clip(x, -1, 1)
    raise AssertionError(name)


@pytest.mark.parametrize("name", PRESET_NAMES)
def test_presets_match_reference_formulas(name):
    m = preset(name, 1.0, 0.5)
    assert np.allclose(m.vprime(PROBES), _reference_vprime(name, PROBES), rtol=1e-14, atol=1e-14)


def test_preset_examples():
    dw = preset("SymmetricDoubleWell", 1.0, 0.5)
    assert dw.vprime(1.0) == 0.0
    assert dw.vprime(0.5) == pytest.approx(-0.375, abs=1e-15)
    fb = preset("FlatBottomDoubleWell", 1.0, 0.5)
    assert np.all(fb.vprime(np.linspace(31 / 32, 0.9999, 7)) == 0.0)
    mw = preset("MultiWell", 1.0, 0.5)
    assert mw.vprime(1.5) == pytest.approx(-3.28125, abs=1e-13)


def test_preset_errors():
    with pytest.raises(ValueError):
        preset("NoSuchWell", 1.0, 0.5)
    with pytest.raises(ValueError):
        preset("SymmetricDoubleWell", -1.0, 0.5)
    with pytest.raises(ValueError):
        preset("SymmetricDoubleWell", 1.0, 0.0)
    with pytest.raises(ValueError):
        preset("SymmetricDoubleWell", 1.0)


def test_perturbation_bound_is_enforced():
    f = PiecewisePolynomial((-math.inf, -1.0, 1.0, math.inf), ((-0.3,), (0.0, 0.3), (0.3,)))
    m = preset("PerturbedDoubleWell", 1.0, 0.5, f=f, f_bound=0.3)
    assert m.f_bound == 0.3
    with pytest.raises(ValueError):
        preset("PerturbedDoubleWell", 1.0, 0.5, f=f, f_bound=0.2)
    with pytest.raises(ValueError):
        preset("PerturbedDoubleWell", 1.0, 0.5, f=PiecewisePolynomial.polynomial([0.0, 0.1]))


def test_zero_crossing_examples():
    cubic = PiecewisePolynomial.polynomial([0.0, -1.0, 0.0, 1.0])
    assert zero_crossing_number(cubic, (-2.0, 2.0)) == 3
    assert model_zero_crossings(preset("FlatBottomDoubleWell", 1.0, 0.5)) == 3
    assert zero_crossing_number(PiecewisePolynomial.polynomial([0.0])) == 0
    assert zero_crossing_number(PiecewisePolynomial.polynomial([0.0, 1.0])) == 1


def test_zero_crossing_bracket_error_suggests_expansion():
    cubic = PiecewisePolynomial.polynomial([0.0, -1.0, 0.0, 1.0])
    with pytest.raises(ValueError, match="expand"):
        zero_crossing_number(cubic, (-0.5, 0.5))


@pytest.mark.parametrize("name", PRESET_NAMES)
def test_zero_crossing_odd_for_presets(name):
    z = model_zero_crossings(preset(name, 1.0, 0.5))
    assert z % 2 == 1
    assert z == (5 if name == "MultiWell" else 3)


@given(st.lists(st.floats(-2, 2), min_size=1, max_size=4, unique=True), st.floats(0.1, 3.0))
def test_zero_crossing_invariant_under_positive_weight(roots, s):
    roots = sorted(set(round(r, 2) for r in roots))
    f = PiecewisePolynomial.polynomial(P.polyfromroots(roots))
    z = zero_crossing_number(f)
    assert z == len(roots)
    x = np.linspace(-3, 3, 20001)
    weight = 1.0 / (s + np.sin(x) ** 2)
    assert zero_crossing_number_sampled(f(x) * weight) == z


def test_osl_for_cubic():
    rep = validate_assumptions(preset("SymmetricDoubleWell", 1.0, 0.5))
    osl = rep.items["one_sided_lipschitz"]
    assert osl.value == pytest.approx(1.0, abs=1e-12)
    assert osl.witness["sampled_sup"] <= 1.0
    assert rep.items["growth"].passed
    # |x^3 - x| / (1 + |x|^3) increases towards 1; on [-10, 10] its maximum is at x = 10
    assert rep.items["growth"].value == pytest.approx(990 / 1001, rel=1e-12)
    assert rep.all_passed


def test_sigma_bounds_constant():
    rep = validate_assumptions(preset("SymmetricDoubleWell", 1.0, 0.5))
    item = rep.items["sigma_bounds"]
    assert item.passed
    assert item.witness["sigma_lo"] == item.witness["sigma_hi"] == 0.5


def test_linear_drift_is_not_hyper_dissipative():
    rep = validate_assumptions(Model.from_coefficients([0.0, 1.0], 1.0, 1.0))
    assert not rep.items["hyper_dissipative"].passed


@pytest.mark.parametrize("name", PRESET_NAMES)
def test_presets_satisfy_assumptions(name):
    m = preset(name, 2.0, 0.7)
    rep = validate_assumptions(m)
    assert rep.all_passed, rep.to_json()
    assert m.constants.numeric


def test_clamped_sigma():
    s = ClampedSigma(PiecewisePolynomial.polynomial([0.5, 0.0, 1.0]), 0.5, 0.8)
    x = np.linspace(-2, 2, 9)
    assert np.all((s(x) >= 0.5) & (s(x) <= 0.8))
    assert s(0.0) == 0.5
    m = Model(PiecewisePolynomial.polynomial([0.0, -1.0, 0.0, 1.0]), 1.0, s)
    assert validate_assumptions(m).items["sigma_bounds"].passed
    assert m.is_symmetric()
    with pytest.raises(ValueError):
        ClampedSigma(PiecewisePolynomial.polynomial([1.0]), 0.0, 1.0)


def test_sigma_json_forms():
    assert sigma_from_json(0.3) == ConstantSigma(0.3)
    assert sigma_from_json({"type": "constant", "sigma2": 0.25}).value == pytest.approx(0.5)
    c = ClampedSigma(PiecewisePolynomial.polynomial([0.5, 0.1]), 0.4, 0.9)
    assert sigma_from_json(json.loads(json.dumps(c.to_json()))) == c


@pytest.mark.parametrize("name", PRESET_NAMES)
def test_model_json_roundtrip(name):
    m = preset(name, 2.5, 0.6)
    back = Model.from_json(json.loads(json.dumps(m.to_json())))
    assert back.vprime == m.vprime
    assert back.theta == m.theta and back.sigma == m.sigma
    assert back.constants == m.constants


def test_model_from_preset_reference():
    m = Model.from_json({"preset": "MultiWell", "theta": 3.0, "sigma2": 1.0})
    assert m.name == "MultiWell" and m.sigma.value == pytest.approx(1.0)


def test_symmetry_detection():
    assert preset("SymmetricDoubleWell", 1.0, 0.5).is_symmetric()
    assert preset("MultiWell", 1.0, 0.5).is_symmetric()
    assert not preset("AsymmetricDoubleWell", 1.0, 0.5).is_symmetric()


def test_model_json_accepts_null_for_unbounded_ends():
    m = Model.from_json({"vprime": [[None, None, [0.0, -1.0, 0.0, 1.0]]], "theta": 3.0, "sigma": 0.5})
    assert m.vprime == preset("SymmetricDoubleWell", 3.0, 0.5).vprime
