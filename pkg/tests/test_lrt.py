"""Joint local likelihood-ratio test: hypotheses, null laws, projections."""

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chi2

from splinth import eigensys, family, fitter, lrt
from splinth.errors import ArgumentError, NumericError

UNIT_WEIGHT = lambda z: np.ones_like(z)


@pytest.fixture(scope="module")
def fitted(trig_sys):
    rng = np.random.default_rng(55)
    n = 400
    x = rng.random((n, 2))
    z = rng.random(n)
    y = x @ [1.0, -0.5] + np.sin(2 * np.pi * z) + 0.5 * rng.standard_normal(n)
    data = fitter.Dataset(y=y, X=x, Z=z)
    return data, fitter.fit(data, family.gaussian(), trig_sys, 2e-3)


# ------------------------------------------------------------------ #
#  hypothesis container
# ------------------------------------------------------------------ #

def test_constructors_build_the_expected_constraints():
    point = lrt.Hypothesis.point(np.array([1.0, 2.0]), 0.5, 0.3)
    assert point.case == lrt.CASE_I and point.k == 3
    np.testing.assert_array_equal(point.M, np.vstack([np.eye(2), np.zeros((1, 2))]))
    np.testing.assert_array_equal(point.Q, [0.0, 0.0, 1.0])
    np.testing.assert_array_equal(point.alpha, [1.0, 2.0, 0.5])

    subset = lrt.Hypothesis.subset_point(np.array([[1.0, -1.0]]), [0.0], 0.5, 0.3)
    assert subset.case == lrt.CASE_II and subset.k == 2

    combo = lrt.Hypothesis.combination(np.array([0.25, 0.5]), 1.0, 0.3)
    assert combo.case == lrt.CASE_III and combo.k == 1
    np.testing.assert_array_equal(combo.stacked, [[0.25, 0.5, 1.0]])


def test_hypothesis_validation():
    with pytest.raises(ArgumentError, match="z0"):
        lrt.Hypothesis(M=np.eye(1), Q=[1.0], alpha=[0.0], z0=0.0)
    with pytest.raises(ArgumentError, match="case"):
        lrt.Hypothesis(M=np.eye(1), Q=[1.0], alpha=[0.0], z0=0.5, case="IV")
    with pytest.raises(ArgumentError, match="row counts"):
        lrt.Hypothesis(M=np.eye(2), Q=[1.0], alpha=[0.0, 0.0], z0=0.5)
    with pytest.raises(ArgumentError, match="exceed"):
        lrt.Hypothesis(M=np.zeros((3, 1)), Q=np.ones(3), alpha=np.zeros(3), z0=0.5)
    with pytest.raises(ArgumentError, match="rank deficient"):
        lrt.Hypothesis(
            M=np.array([[1.0, 0.0], [1.0, 0.0]]), Q=[0.0, 0.0],
            alpha=[0.0, 0.0], z0=0.5,
        )


# ------------------------------------------------------------------ #
#  null laws
# ------------------------------------------------------------------ #

def test_mixture_cdf_is_a_proper_distribution():
    hyp = lrt.Hypothesis.point(np.array([0.0, 0.0]), 0.0, 0.5)
    law = lrt.null_law(hyp, 2, 0.75)
    assert law.kind == "mixture" and law.r == 2
    assert law.cdf(0.0) == 0.0
    assert law.cdf(-1.0) == 0.0
    ts = np.linspace(0.0, law.grid[-1], 300)
    vals = [law.cdf(t) for t in ts]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert vals[-1] > 0.999


def test_quantile_inverts_the_cdf():
    hyp = lrt.Hypothesis.point(np.array([0.0]), 0.0, 0.5)
    law = lrt.null_law(hyp, 1, 0.75)
    for q in (0.05, 0.5, 0.9, 0.95, 0.99):
        t = law.quantile(q)
        assert abs(law.cdf(t) - q) < 1e-3
    with pytest.raises(ArgumentError):
        law.quantile(1.0)
    with pytest.raises(ArgumentError):
        law.quantile(-0.1)


def test_pure_scaled_chi2_for_a_single_combination():
    hyp = lrt.Hypothesis.combination(np.array([0.5]), 0.0, 0.5)
    law = lrt.null_law(hyp, 1, 0.75)
    assert law.r == 0
    # c0 * chi2_1 quantiles, to grid-interpolation accuracy
    assert abs(law.quantile(0.95) - 0.75 * chi2.ppf(0.95, 1)) < 1e-6
    assert abs(law.quantile(0.95) - 2.881094) < 5e-6
    assert abs(law.cdf(1.0) - chi2.cdf(1.0 / 0.75, 1)) < 1e-6


def test_degenerate_weight_collapses_to_plain_chi2():
    hyp = lrt.Hypothesis.point(np.array([0.0, 0.0]), 0.0, 0.5)
    law = lrt.null_law(hyp, 2, 1.0)
    for q in (0.5, 0.9, 0.95, 0.99):
        assert abs(law.quantile(q) - chi2.ppf(q, 3)) < 1e-4


def test_convolution_matches_direct_simulation():
    hyp = lrt.Hypothesis.point(np.array([0.0]), 0.0, 0.5)
    law = lrt.null_law(hyp, 1, 0.75)
    rng = np.random.default_rng(314159)
    draws = np.sort(rng.chisquare(1, 10**6) + 0.75 * rng.chisquare(1, 10**6))
    emp = np.searchsorted(draws, law.grid, side="right") / draws.size
    assert np.max(np.abs(emp - law.cdf_values)) < 0.002


def test_case_ii_reduces_the_mixture_rank():
    hyp = lrt.Hypothesis.subset_point(np.array([[1.0, 0.0]]), [0.0], 0.0, 0.5)
    law = lrt.null_law(hyp, 2, 0.75)
    assert law.r == 1


def test_general_law_agrees_with_the_mixture_on_identity_projections():
    mix = lrt.null_law(lrt.Hypothesis.point(np.array([0.0]), 0.0, 0.5), 1, 0.75)
    gen = lrt.null_law(None, 1, 0.75, phi0=np.eye(2))
    assert gen.kind == "quadratic" and gen.mc_draws == 10**6
    assert abs(gen.quantile(0.95) / mix.quantile(0.95) - 1.0) < 0.02
    # deterministic internal stream: identical on repeat
    gen2 = lrt.null_law(None, 1, 0.75, phi0=np.eye(2))
    assert gen.quantile(0.95) == gen2.quantile(0.95)


def test_general_law_shifts_with_the_centering_term():
    base = lrt.null_law(None, 1, 0.75, phi0=np.eye(2), c_z0=0.0)
    moved = lrt.null_law(None, 1, 0.75, phi0=np.eye(2), c_z0=1.0)
    assert moved.quantile(0.95) > base.quantile(0.95)


def test_null_law_argument_guards():
    hyp = lrt.Hypothesis.point(np.array([0.0]), 0.0, 0.5)
    for c0 in (0.0, -0.5, 1.5):
        with pytest.raises(ArgumentError):
            lrt.null_law(hyp, 1, c0)
    with pytest.raises(ArgumentError, match="phi0"):
        lrt.null_law(None, 1, 0.75)
    with pytest.raises(ArgumentError):
        lrt.null_law(None, 1, 0.75, phi0=np.eye(3))
    with pytest.raises(ArgumentError, match="PSD"):
        lrt.null_law(None, 1, 0.75, phi0=np.array([[1.0, 0.0], [0.0, -1.0]]))


# ------------------------------------------------------------------ #
#  mixture weight
# ------------------------------------------------------------------ #

def test_mixture_weight_closed_form_for_the_periodic_system():
    for m in (2, 3, 4, 10):
        sysm = eigensys.build_trig(m, 1.0, 9)
        assert lrt.mixture_weight(sysm, 0.5) == 1.0 - 1.0 / (2 * m)


def test_mixture_weight_extrapolates_the_numeric_system():
    sysm = eigensys.build_bvp(2, UNIT_WEIGHT, 61, grid=2048)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        w = lrt.mixture_weight(sysm, 0.5)
    assert abs(w - 0.75) < 5e-3


def test_mixture_weight_warns_on_a_starved_basis():
    sysm = eigensys.build_bvp(2, UNIT_WEIGHT, 13, grid=512)
    with pytest.warns(UserWarning, match="not settled"):
        lrt.mixture_weight(sysm, 0.5)


# ------------------------------------------------------------------ #
#  projection matrix
# ------------------------------------------------------------------ #

def test_phi_lambda_case_i_is_the_identity(fitted, trig_sys):
    data, fit = fitted
    hyp = lrt.Hypothesis.point(np.array([1.0, -0.5]), 1.0, 0.5)
    phi = lrt.phi_lambda(fit, data, trig_sys, hyp)
    assert np.max(np.abs(phi - np.eye(3))) < 1e-8


def test_phi_lambda_case_iii_is_a_rank_one_projection(fitted, trig_sys):
    data, fit = fitted
    hyp = lrt.Hypothesis.combination(np.array([0.25, 0.5]), 0.0, 0.5)
    phi = lrt.phi_lambda(fit, data, trig_sys, hyp)
    np.testing.assert_allclose(phi, phi.T, atol=1e-14)
    assert np.min(np.linalg.eigvalsh(phi)) > -1e-8
    assert np.max(np.abs(phi @ phi - phi)) < 1e-8
    assert abs(np.trace(phi) - 1.0) < 1e-8


def test_phi_lambda_case_ii_is_a_projection_of_rank_k(fitted, trig_sys):
    data, fit = fitted
    hyp = lrt.Hypothesis.subset_point(np.array([[1.0, 0.0]]), [1.0], 1.0, 0.5)
    phi = lrt.phi_lambda(fit, data, trig_sys, hyp)
    assert np.max(np.abs(phi @ phi - phi)) < 1e-8
    assert abs(np.trace(phi) - hyp.k) < 1e-8


def test_phi_lambda_small_lambda_block_structure(fitted, trig_sys):
    # as lam -> 0 the smooth leg decouples: lower-right -> 1 for case III,
    # upper-left -> the projection onto the constrained theta rows for case II
    data, _ = fitted
    fit = fitter.fit(data, family.gaussian(), trig_sys, 1e-8)
    combo = lrt.Hypothesis.combination(np.array([0.25, 0.5]), 0.0, 0.5)
    phi3 = lrt.phi_lambda(fit, data, trig_sys, combo)
    assert phi3[2, 2] > 0.95
    subset = lrt.Hypothesis.subset_point(np.array([[1.0, 0.0]]), [1.0], 1.0, 0.5)
    phi2 = lrt.phi_lambda(fit, data, trig_sys, subset)
    assert np.max(np.abs(phi2[:2, :2] - np.diag([1.0, 0.0]))) < 0.15


def test_phi_lambda_checks_the_covariate_count(fitted, trig_sys):
    data, fit = fitted
    hyp = lrt.Hypothesis.combination(np.array([1.0]), 0.0, 0.5)
    with pytest.raises(ArgumentError):
        lrt.phi_lambda(fit, data, trig_sys, hyp)


# ------------------------------------------------------------------ #
#  statistic and full test
# ------------------------------------------------------------------ #

def test_statistic_vanishes_on_a_nonbinding_constraint(fitted, trig_sys):
    data, fit = fitted
    hyp = lrt.Hypothesis.point(fit.theta, fit.g_at(0.45), 0.45)
    stat = lrt.lrt_statistic(data, family.gaussian(), trig_sys, fit.lam, hyp)
    assert 0.0 <= stat < 1e-8


def test_statistic_grows_with_constraint_violation(fitted, trig_sys):
    data, fit = fitted
    near = lrt.Hypothesis.combination(np.array([1.0, 0.0]), fit.theta[0] + fit.g_at(0.5) + 0.05, 0.5)
    far = lrt.Hypothesis.combination(np.array([1.0, 0.0]), fit.theta[0] + fit.g_at(0.5) + 2.0, 0.5)
    s_near = lrt.lrt_statistic(data, family.gaussian(), trig_sys, fit.lam, near)
    s_far = lrt.lrt_statistic(data, family.gaussian(), trig_sys, fit.lam, far)
    assert 0.0 < s_near < s_far


@given(st.integers(0, 10_000))
@settings(max_examples=20)
def test_statistic_is_always_nonnegative(seed):
    rng = np.random.default_rng(seed)
    n = 50
    system = eigensys.build_trig(2, 1.0, 11)
    x = rng.random((n, 1))
    z = rng.random(n)
    y = 2.0 * x[:, 0] + np.cos(2 * np.pi * z) + 0.4 * rng.standard_normal(n)
    data = fitter.Dataset(y=y, X=x, Z=z)
    hyp = lrt.Hypothesis.combination(
        np.array([rng.standard_normal()]), rng.standard_normal(), rng.uniform(0.1, 0.9)
    )
    stat = lrt.lrt_statistic(data, family.gaussian(), system, 10.0 ** rng.uniform(-4, -1), hyp)
    assert stat >= 0.0


def test_full_test_reports_a_coherent_result(fitted, trig_sys):
    data, _ = fitted
    hyp = lrt.Hypothesis.point(np.array([1.0, -0.5]), 1.0, 0.5)
    res = lrt.test(data, family.gaussian(), trig_sys, hyp, lam_policy="rate")
    assert res.statistic >= 0.0
    assert 0.0 <= res.p_value <= 1.0
    assert res.reject == (res.p_value < 0.05)
    assert res.c0 == 0.75
    assert res.law.r == 2
    assert res.fit_constrained.constrained and not res.fit.constrained
    d = res.describe()
    assert d["null_law"]["quantile_95"] == res.law.quantile(0.95)


def test_gaussian_statistic_is_studentized(fitted, trig_sys):
    data, _ = fitted
    hyp = lrt.Hypothesis.point(np.array([1.0, -0.5]), 1.0, 0.5)
    lam = float(data.n) ** (-0.8)
    res = lrt.test(data, family.gaussian(), trig_sys, hyp, lam_policy="fixed", lam=lam)
    raw = lrt.lrt_statistic(data, family.gaussian(), trig_sys, lam, hyp)
    sigma2 = fitter.fit(data, family.gaussian(), trig_sys, lam).sigma2
    assert abs(res.statistic - raw / sigma2) < 1e-10


def test_logistic_statistic_is_not_studentized(trig_sys):
    rng = np.random.default_rng(77)
    n = 300
    x = rng.random((n, 1))
    z = rng.random(n)
    eta = x[:, 0]
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    data = fitter.Dataset(y=y, X=x, Z=z)
    lam = float(n) ** (-0.8)
    hyp = lrt.Hypothesis.combination(np.array([1.0]), 0.5, 0.5)
    res = lrt.test(data, family.logistic(), trig_sys, hyp, lam_policy="fixed", lam=lam)
    raw = lrt.lrt_statistic(data, family.logistic(), trig_sys, lam, hyp)
    assert abs(res.statistic - raw) < 1e-10


def test_far_off_rate_lambda_warns(fitted, trig_sys):
    data, _ = fitted
    hyp = lrt.Hypothesis.point(np.array([1.0, -0.5]), 1.0, 0.5)
    with pytest.warns(UserWarning, match="rate"):
        lrt.test(data, family.gaussian(), trig_sys, hyp, lam_policy="fixed", lam=10.0)


def test_level_validation(fitted, trig_sys):
    data, _ = fitted
    hyp = lrt.Hypothesis.point(np.array([1.0, -0.5]), 1.0, 0.5)
    with pytest.raises(ArgumentError):
        lrt.test(data, family.gaussian(), trig_sys, hyp, level=1.0)


def test_general_case_goes_through_the_quadratic_law(fitted, trig_sys):
    data, _ = fitted
    hyp = lrt.Hypothesis(
        M=np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]),
        Q=np.array([0.0, 0.0, 1.0]),
        alpha=np.array([1.0, -0.5, 1.0]),
        z0=0.5,
    )
    res = lrt.test(data, family.gaussian(), trig_sys, hyp, lam_policy="rate")
    assert res.law.kind == "quadratic"
    # structurally case I: the quadratic law should land near the mixture
    mix = lrt.null_law(
        lrt.Hypothesis.point(np.array([1.0, -0.5]), 1.0, 0.5), 2, 0.75
    )
    assert abs(res.law.quantile(0.95) / mix.quantile(0.95) - 1.0) < 0.02


def test_nesting_failure_raises(fitted, trig_sys):
    data, fit = fitted
    good = dataclasses_replace_objective(fit, fit.objective)
    bad_c = dataclasses_replace_objective(fit, fit.objective + 1e-3)
    with pytest.raises(NumericError, match="nesting"):
        lrt._statistic_from_fits(data.n, good, bad_c)


def dataclasses_replace_objective(fit, objective):
    import dataclasses

    return dataclasses.replace(fit, objective=objective)
