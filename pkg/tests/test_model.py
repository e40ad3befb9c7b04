import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unemp.errors import InvalidInputError, SingularEquilibriumError
from unemp.model import (
    BaselineParams,
    ModelParams,
    VacancyFunction,
    characteristic_coefficients,
    equilibrium,
    equilibrium_denominator,
    eval_vacancies,
    feasible_region_bound,
    jacobian_matrix,
    quadratic_roots,
    rhs_baseline,
    rhs_controlled,
    rhs_new_model,
    stability_analysis,
)

rate = st.floats(0.0, 1.0, allow_nan=False)
inflow = st.floats(0.0, 2e5, allow_nan=False)
small_kappa = st.floats(0.0, 1e-4, allow_nan=False)


@st.composite
def model_params(draw):
    return ModelParams(
        Lambda=draw(inflow), kappa=draw(small_kappa), alpha1=draw(rate), alpha2=draw(rate),
        gamma=draw(rate), omega=draw(inflow), delta=draw(rate), rho=draw(rate),
    )


def linear_system_oracle(p, v):
    # Lambda - (kv + a1) U + g E = 0 ;  omega + (kv + rho) U - (a2 + g + d) E = 0
    M = np.array([[-(p.kappa * v + p.alpha1), p.gamma],
                  [p.kappa * v + p.rho, -(p.alpha2 + p.gamma + p.delta)]])
    return np.linalg.solve(M, [-p.Lambda, -p.omega])


# --- parameters ------------------------------------------------------------

def test_params_reject_negative_and_nonfinite(table4):
    with pytest.raises(InvalidInputError):
        table4.replace(kappa=-1.0)
    with pytest.raises(InvalidInputError):
        table4.replace(rho=math.nan)
    with pytest.raises(InvalidInputError):
        BaselineParams(5000, 9e-6, 0.04, 0.05, 0.001, math.inf, 0.05)


def test_vacancy_requires_positive_frequency():
    with pytest.raises(InvalidInputError):
        VacancyFunction(1, 0, 0, 0, 0, 0, 0, w=0.0)


# --- right-hand sides ------------------------------------------------------

def test_rhs_origin_keeps_only_inflows(table4):
    assert tuple(rhs_new_model(table4, (0.0, 0.0), 0.0)) == (90000.0, 90000.0)


def test_rhs_term_by_term(table4):
    U, E, v = 464450.0, 6450694.0, 4848.0
    dU = 90000 - 0.000009 * U * v - 0.04 * U + 0.001 * E
    dE = 90000 + 0.000009 * U * v - 0.05 * E - 0.001 * E - 0.05 * E + 0.7161 * U
    got = rhs_new_model(table4, (U, E), v)
    assert got.U == pytest.approx(dU, rel=1e-12)
    assert got.E == pytest.approx(dE, rel=1e-12)


def test_rhs_at_equilibrium_vanishes(table4):
    eq = equilibrium(table4, 14780.0)
    d = rhs_new_model(table4, eq, 14780.0)
    assert abs(d.U) <= 1e-6 * table4.Lambda
    assert abs(d.E) <= 1e-6 * table4.omega


def test_rhs_rejects_nonfinite(table4):
    with pytest.raises(InvalidInputError):
        rhs_new_model(table4, (math.nan, 1.0), 1.0)
    with pytest.raises(InvalidInputError):
        rhs_controlled(table4, (1.0, 1.0), 1.0, math.inf, 0.0)


def test_controls_enter_additively(table4):
    assert tuple(rhs_controlled(table4, (0.0, 0.0), 1234.0, 40000.0, 0.0)) == (50000.0, 130000.0)


def test_u2_doubles_matching_term(table4):
    s, v = (1e5, 1e6), 1e4
    base = rhs_controlled(table4, s, v, 0.0, 0.0)
    boosted = rhs_controlled(table4, s, v, 0.0, 1.0)
    assert base.U - boosted.U == pytest.approx(table4.kappa * 1e5 * 1e4, rel=1e-12)
    assert boosted.E - base.E == pytest.approx(table4.kappa * 1e5 * 1e4, rel=1e-12)


def test_baseline_rhs_examples(table2):
    assert tuple(rhs_baseline(table2, (0.0, 0.0, 0.0))) == (5000.0, 0.0, 0.0)
    d = rhs_baseline(table2, (10000.0, 1000.0, 100.0))
    # 5000 - 9 - 400 + 1
    assert d.U == pytest.approx(4592.0, abs=1e-9)
    assert d.V == pytest.approx(0.05 * 1000 + 0.001 * 1000 - 0.05 * 100 + 0.007 * 10000, rel=1e-12)
    assert all(math.isfinite(x) for x in rhs_baseline(table2, (464450.0, 6450694.0, 9625.0)))


# --- vacancies -------------------------------------------------------------

def test_vacancy_at_zero(fourier):
    assert eval_vacancies(fourier, 0.0) == pytest.approx(11854.2, abs=1e-9)


def test_vacancy_term_by_term(fourier):
    t = 75.0
    w = 0.04009
    terms = [14780.0, -1262 * math.cos(w * t), -2006 * math.sin(w * t), 328.2 * math.cos(2 * w * t),
             -4700 * math.sin(2 * w * t), -1992 * math.cos(3 * w * t), 2.399 * math.sin(3 * w * t)]
    assert eval_vacancies(fourier, t) == pytest.approx(math.fsum(terms), rel=1e-9)


@given(st.floats(-1e4, 1e4), st.floats(-1e3, 1e3))
def test_constant_vacancy_everywhere(c, t):
    assert eval_vacancies(VacancyFunction.constant(c), t) == c


def test_vacancy_derivative_matches_difference(fourier):
    t, h = 40.0, 1e-4
    fd = (fourier(t + h) - fourier(t - h)) / (2 * h)
    assert fourier.derivative(t) == pytest.approx(fd, rel=1e-7)


# --- feasible region -------------------------------------------------------

def test_region_table4_non_informative(table4):
    r = feasible_region_bound(table4)
    assert r.alpha_m == pytest.approx(0.04 - 0.7161, abs=1e-15)
    assert not r.informative and not r.degenerate


def test_region_without_wage_channel(table4):
    r = feasible_region_bound(table4.replace(rho=0.0))
    assert r.alpha_m == pytest.approx(0.04)
    assert r.informative
    assert r.bound == pytest.approx(4.5e6, rel=1e-12)


def test_region_degenerate(table4):
    r = feasible_region_bound(table4.replace(alpha1=0.7161))
    assert r.degenerate and r.bound is None


# --- equilibrium -----------------------------------------------------------

@pytest.mark.parametrize("v", [0.0, 14780.0])
def test_equilibrium_matches_linear_oracle(table4, v):
    eq = equilibrium(table4, v)
    np.testing.assert_allclose(eq, linear_system_oracle(table4, v), rtol=1e-9)


def test_equilibrium_magnitude(table4):
    eq = equilibrium(table4, 14780.0)
    assert eq.U == pytest.approx(5.52e5, rel=1e-2)
    assert eq.E == pytest.approx(5.53e6, rel=1e-2)


def test_equilibrium_decoupled(table4):
    p = table4.replace(gamma=0.0, rho=0.0)
    assert equilibrium(p, 1000.0).U == p.Lambda / (p.kappa * 1000.0 + p.alpha1)


def test_equilibrium_singular(table4):
    p = table4.replace(alpha1=table4.rho, alpha2=0.0, delta=0.0)
    assert equilibrium_denominator(p, 14780.0) == 0.0
    with pytest.raises(SingularEquilibriumError):
        equilibrium(p, 14780.0)


# --- characteristic polynomial and stability ------------------------------

def test_coefficients_at_ten_thousand(table4):
    a1, a2 = characteristic_coefficients(table4, 1e4)
    assert a1 == pytest.approx(0.231, abs=1e-12)
    assert a2 == pytest.approx(0.0123239, abs=1e-12)


def test_coefficients_all_zero():
    p = ModelParams(0, 0, 0, 0, 0, 0, 0, 0)
    assert characteristic_coefficients(p, 123.0) == (0.0, 0.0)


def test_coefficients_are_trace_and_determinant(table4):
    M = jacobian_matrix(table4, 9625.0)
    a1, a2 = characteristic_coefficients(table4, 9625.0)
    assert a1 == pytest.approx(-np.trace(M), rel=1e-12)
    assert a2 == pytest.approx(np.linalg.det(M), rel=1e-10)
    assert a2 == pytest.approx(equilibrium_denominator(table4, 9625.0), rel=1e-12)


@pytest.mark.parametrize("v", [0.0, 4848.0, 9625.0, 14780.0, 1e6])
def test_table4_stable_for_nonnegative_v(table4, v):
    assert stability_analysis(table4, v).is_stable


def test_table4_eigenvalues_at_zero(table4):
    rep = stability_analysis(table4, 0.0)
    assert rep.a1_coeff == pytest.approx(0.141, abs=1e-12)
    assert rep.a2_coeff == pytest.approx(0.0033239, abs=1e-12)
    # oracle: quadratic formula written out
    disc = 0.141 ** 2 - 4 * 0.0033239
    roots = sorted([(-0.141 - math.sqrt(disc)) / 2, (-0.141 + math.sqrt(disc)) / 2])
    got = sorted(ev.real for ev in rep.eigenvalues)
    np.testing.assert_allclose(got, roots, rtol=1e-10)
    assert all(r < 0 for r in got)


def test_unstable_example():
    p = ModelParams(Lambda=0, kappa=0, alpha1=0, alpha2=0, gamma=1, omega=0, delta=0, rho=1)
    rep = stability_analysis(p, 0.0)
    assert rep.a2_coeff == pytest.approx(-1.0)
    assert not rep.is_stable
    assert max(ev.real for ev in rep.eigenvalues) > 0
    np.testing.assert_allclose(jacobian_matrix(p, 0.0), [[0, 1], [1, -1]])


def test_quadratic_roots_small_product():
    r1, r2 = quadratic_roots(-1e8, 1.0)
    assert sorted([r1.real, r2.real]) == pytest.approx([-1e8, -1e-8], rel=1e-12)


# --- properties ------------------------------------------------------------

@settings(max_examples=300, deadline=None)
@given(model_params(), st.floats(0.0, 1e5))
def test_property_equilibrium_residual(p, v):
    if abs(equilibrium_denominator(p, v)) <= 1e-10:
        return
    d = rhs_new_model(p, equilibrium(p, v), v)
    assert math.hypot(*d) <= 1e-8 * (p.Lambda + p.omega) + 1e-300


@settings(max_examples=300, deadline=None)
@given(model_params(), st.floats(0.0, 1e5))
def test_property_routh_hurwitz_agrees_with_eigenvalues(p, v):
    rep = stability_analysis(p, v)
    if rep.borderline:
        return
    oracle = bool(np.all(np.linalg.eigvals(jacobian_matrix(p, v)).real < 0))
    assert rep.is_stable == oracle == rep.eigen_stable


@given(model_params(), st.floats(0, 1e7), st.floats(0, 1e7), st.floats(0, 1e5))
def test_property_zero_controls_bit_identical(p, U, E, v):
    assert tuple(rhs_controlled(p, (U, E), v, 0.0, 0.0)) == tuple(rhs_new_model(p, (U, E), v))


@given(model_params(), st.floats(0, 1e7), st.floats(0, 1e7), st.floats(0, 1e5))
def test_property_dissipation(p, U, E, v):
    r = feasible_region_bound(p)
    if r.alpha_m <= 0:
        return
    d = rhs_new_model(p, (U, E), v)
    lhs = d.U + d.E
    rhs = p.Lambda + p.omega - r.alpha_m * (U + E)
    assert lhs <= rhs + 1e-9 * (abs(rhs) + p.kappa * U * v + p.gamma * E + 1.0)


@given(model_params(), st.floats(0, 1e7), st.floats(0, 1e7), st.floats(0, 1e5))
def test_property_mass_balance(p, U, E, v):
    d = rhs_new_model(p, (U, E), v)
    expected = p.Lambda + p.omega - p.alpha1 * U + p.rho * U - p.alpha2 * E - p.delta * E
    scale = p.Lambda + p.omega + p.kappa * U * v + (p.alpha1 + p.rho) * U + (p.alpha2 + p.delta + p.gamma) * E + 1.0
    assert d.U + d.E == pytest.approx(expected, abs=1e-12 * scale)
