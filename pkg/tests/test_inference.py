"""Interval construction and the plug-in information quantities."""

import dataclasses
import math

import numpy as np
import pytest
from scipy.stats import norm

from splinth import eigensys, family, fitter, inference
from splinth.errors import ArgumentError, NumericError, UnsupportedError


@pytest.fixture(scope="module")
def wide_gauss(trig_sys):
    rng = np.random.default_rng(100)
    n = 5000
    x = rng.random((n, 1))
    z = rng.random(n)
    y = 2.0 * x[:, 0] + np.sin(2 * np.pi * z) + rng.standard_normal(n)
    data = fitter.Dataset(y=y, X=x, Z=z)
    lam, _ = fitter.select_lambda(data, family.gaussian(), trig_sys)
    return data, fitter.fit(data, family.gaussian(), trig_sys, lam)


@pytest.fixture(scope="module")
def logistic_flat(trig_sys):
    rng = np.random.default_rng(101)
    n = 5000
    data = fitter.Dataset(
        y=(rng.random(n) < 0.5).astype(float), X=rng.random((n, 1)), Z=rng.random(n)
    )
    lam, _ = fitter.select_lambda(data, family.logistic(), trig_sys)
    return data, fitter.fit(data, family.logistic(), trig_sys, lam)


# ------------------------------------------------------------------ #
#  efficient information
# ------------------------------------------------------------------ #

def test_omega_matches_the_uniform_design_value(wide_gauss, trig_sys):
    data, fit = wide_gauss
    om = inference.omega_hat(fit, data, trig_sys)
    assert om.shape == (1, 1)
    assert abs(om[0, 0] - 1.0 / 12.0) < 0.01


def test_omega_scales_with_the_fisher_weight(logistic_flat, trig_sys):
    # flat logistic signal: I(U) ~ 1/4, so Omega ~ Var(X)/4
    data, fit = logistic_flat
    om = inference.omega_hat(fit, data, trig_sys)
    assert abs(om[0, 0] - 0.25 / 12.0) < 0.004


def test_omega_flags_a_covariate_that_is_a_function_of_z(trig_sys):
    rng = np.random.default_rng(100)
    n = 2000
    z = rng.random(n)
    x = np.sin(2 * np.pi * z)[:, None]
    y = 2.0 * x[:, 0] + np.cos(2 * np.pi * z) + rng.standard_normal(n)
    data = fitter.Dataset(y=y, X=x, Z=z)
    lam, _ = fitter.select_lambda(data, family.gaussian(), trig_sys)
    fit = fitter.fit(data, family.gaussian(), trig_sys, lam)
    with pytest.raises(NumericError, match="near singular"):
        inference.omega_hat(fit, data, trig_sys)


def test_plugin_quantities_shapes(wide_gauss, trig_sys):
    data, fit = wide_gauss
    pq = inference.plugin_quantities(fit, data, trig_sys)
    assert pq.omega.shape == (1, 1)
    assert pq.gbar_coef.shape == (1, trig_sys.n_basis)
    # X independent of Z: G(z) = E[X] = 1/2, carried by the constant mode
    assert abs(pq.gbar_coef[0, 0] - 0.5) < 0.02
    assert np.max(np.abs(pq.gbar_coef[0, 1:])) < 0.05


def test_plugin_quantities_empty_without_covariates(trig_sys):
    rng = np.random.default_rng(5)
    data = fitter.Dataset(y=rng.random(200), X=None, Z=rng.random(200))
    fit = fitter.fit(data, family.gaussian(), trig_sys, 1e-3)
    pq = inference.plugin_quantities(fit, data, trig_sys)
    assert pq.omega.shape == (0, 0)
    assert pq.gbar_coef.shape == (0, trig_sys.n_basis)


# ------------------------------------------------------------------ #
#  joint confidence rectangles
# ------------------------------------------------------------------ #

def test_joint_ci_is_the_product_of_marginal_intervals(wide_gauss, trig_sys):
    data, fit = wide_gauss
    ci = inference.joint_ci(fit, data, trig_sys, z0=0.3)
    zq = norm.ppf(0.975)
    half_theta = zq * math.sqrt(fit.sigma2 * np.linalg.inv(ci.omega)[0, 0] / data.n)
    np.testing.assert_allclose(
        ci.theta_intervals[0],
        [fit.theta[0] - half_theta, fit.theta[0] + half_theta],
        rtol=1e-12,
    )
    half_g = zq * math.sqrt(fit.sigma2 * ci.sigma_z0_sq / (data.n * fit.h))
    np.testing.assert_allclose(
        ci.g_interval, [fit.g_at(0.3) - half_g, fit.g_at(0.3) + half_g], rtol=1e-12
    )
    assert ci.level == 0.95
    assert ci.h == fit.h


def test_joint_ci_uses_the_closed_form_variance_constant(wide_gauss, trig_sys):
    data, fit = wide_gauss
    ci = inference.joint_ci(fit, data, trig_sys, z0=0.7)
    want = eigensys.quadrature_Il(2, 2) / math.pi
    assert abs(ci.sigma_z0_sq - want) < 1e-10


def test_joint_ci_widens_with_the_level(wide_gauss, trig_sys):
    data, fit = wide_gauss
    om = np.eye(1) / 12.0
    lo = inference.joint_ci(fit, data, trig_sys, z0=0.3, level=0.9, omega=om)
    hi = inference.joint_ci(fit, data, trig_sys, z0=0.3, level=0.999, omega=om)
    assert np.diff(hi.g_interval) > np.diff(lo.g_interval)
    assert np.diff(hi.theta_intervals[0]) > np.diff(lo.theta_intervals[0])


def test_joint_ci_shrinks_like_root_n(wide_gauss, trig_sys):
    data, fit = wide_gauss
    om = np.eye(1) / 12.0
    doubled = fitter.Dataset(
        y=np.concatenate([data.y, data.y]),
        X=np.vstack([data.X, data.X]),
        Z=np.concatenate([data.Z, data.Z]),
    )
    ci1 = inference.joint_ci(fit, data, trig_sys, z0=0.3, omega=om)
    ci2 = inference.joint_ci(fit, doubled, trig_sys, z0=0.3, omega=om)
    ratio_theta = np.diff(ci2.theta_intervals[0]) / np.diff(ci1.theta_intervals[0])
    ratio_g = np.diff(ci2.g_interval) / np.diff(ci1.g_interval)
    np.testing.assert_allclose(ratio_theta, 1.0 / math.sqrt(2.0), rtol=1e-12)
    np.testing.assert_allclose(ratio_g, 1.0 / math.sqrt(2.0), rtol=1e-12)


def test_joint_ci_without_covariates(trig_sys):
    rng = np.random.default_rng(5)
    data = fitter.Dataset(y=np.sin(2 * np.pi * rng.random(300)), X=None, Z=rng.random(300))
    data = fitter.Dataset(y=data.y + 0.1 * rng.standard_normal(300), X=None, Z=data.Z)
    fit = fitter.fit(data, family.gaussian(), trig_sys, 1e-3)
    ci = inference.joint_ci(fit, data, trig_sys, z0=0.5)
    assert ci.theta_intervals.shape == (0, 2)
    assert ci.g_interval[0] < fit.g_at(0.5) < ci.g_interval[1]


def test_joint_ci_validates_z0_and_level(wide_gauss, trig_sys):
    data, fit = wide_gauss
    om = np.eye(1)
    for z0 in (0.0, 1.0, -0.3):
        with pytest.raises(ArgumentError):
            inference.joint_ci(fit, data, trig_sys, z0=z0, omega=om)
    with pytest.raises(ArgumentError):
        inference.joint_ci(fit, data, trig_sys, z0=0.5, level=1.0, omega=om)


# ------------------------------------------------------------------ #
#  prediction intervals
# ------------------------------------------------------------------ #

def test_prediction_interval_formula(wide_gauss, trig_sys):
    data, fit = wide_gauss
    x0, z0 = np.array([0.25]), 0.4
    got = inference.prediction_interval(fit, data, trig_sys, x0=x0, z0=z0)
    sz = eigensys.quadrature_Il(2, 2) / math.pi
    center = 0.25 * fit.theta[0] + fit.g_at(z0)
    half = norm.ppf(0.975) * math.sqrt(fit.sigma2 * sz / (data.n * fit.h) + fit.sigma2)
    np.testing.assert_allclose(got, [center - half, center + half], rtol=1e-12)
    # dominated by the noise term: length close to 2 * 1.96 * sigma
    assert abs((got[1] - got[0]) - 2 * norm.ppf(0.975) * math.sqrt(fit.sigma2)) < 0.05


def test_prediction_interval_zero_variance_degenerates(wide_gauss, trig_sys):
    data, fit = wide_gauss
    frozen = dataclasses.replace(fit, sigma2=0.0)
    got = inference.prediction_interval(frozen, data, trig_sys, x0=[0.0], z0=0.5)
    assert got[1] - got[0] == 0.0
    np.testing.assert_allclose(got, fit.g_at(0.5))


def test_prediction_interval_guards(wide_gauss, logistic_flat, trig_sys):
    data, fit = wide_gauss
    with pytest.raises(ArgumentError):
        inference.prediction_interval(fit, data, trig_sys, x0=[1.0, 2.0], z0=0.5)
    ldata, lfit = logistic_flat
    with pytest.raises(UnsupportedError):
        inference.prediction_interval(lfit, ldata, trig_sys, x0=[0.5], z0=0.5)
    bare = dataclasses.replace(fit, sigma2=None)
    with pytest.raises(NumericError):
        inference.prediction_interval(bare, data, trig_sys, x0=[0.5], z0=0.5)


# ------------------------------------------------------------------ #
#  conditional-mean intervals
# ------------------------------------------------------------------ #

def test_conditional_mean_ci_formula(logistic_flat, trig_sys):
    data, fit = logistic_flat
    x0, z0 = np.array([0.5]), 0.45
    om = np.eye(1) * 0.25 / 12.0
    got = inference.conditional_mean_ci(fit, data, trig_sys, x0=x0, z0=z0, omega=om)
    eta = 0.5 * fit.theta[0] + fit.g_at(z0)
    fp = float(fit.family.fisher_weight(eta))
    sz = eigensys.sigma_z0_sq(fit.handle(), z0)
    var = fp**2 * (0.5**2 / om[0, 0] / data.n + sz / (data.n * fit.h))
    center = 1.0 / (1.0 + math.exp(-eta))
    half = norm.ppf(0.975) * math.sqrt(var)
    np.testing.assert_allclose(got, [center - half, center + half], rtol=1e-10)
    assert got[0] < 0.5 < got[1]


def test_conditional_mean_ci_clips_to_the_unit_interval(logistic_flat, trig_sys):
    data, fit = logistic_flat
    om = np.eye(1) * 1e-8
    got = inference.conditional_mean_ci(
        fit, data, trig_sys, x0=[1.0], z0=0.5, omega=om
    )
    assert got[0] == 0.0 and got[1] == 1.0


def test_conditional_mean_ci_is_logistic_only(wide_gauss, trig_sys):
    data, fit = wide_gauss
    with pytest.raises(UnsupportedError):
        inference.conditional_mean_ci(fit, data, trig_sys, x0=[0.5], z0=0.5)


# ------------------------------------------------------------------ #
#  variance constant dispatch
# ------------------------------------------------------------------ #

def test_variance_constant_closed_form_vs_numeric(wide_gauss):
    data, fit = wide_gauss
    closed = inference.pointwise_variance_constant(fit, 0.5)
    assert abs(closed - eigensys.quadrature_Il(2, 2) / math.pi) < 1e-12
    # the logistic path falls back to the finite-lam approximant
    lfit = dataclasses.replace(fit, family=family.logistic())
    numeric = inference.pointwise_variance_constant(lfit, 0.5)
    assert abs(numeric - eigensys.sigma_z0_sq(fit.handle(), 0.5)) < 1e-14
