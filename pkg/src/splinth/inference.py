"""Joint confidence intervals, prediction intervals, and plug-in quantities.

The parametric and the pointwise smooth estimates are asymptotically
independent, so the joint confidence region at z0 is the product of the two
marginal intervals: theta_k +/- z * sqrt((Omega^-1)_kk / n) and
g(z0) +/- z * sqrt(sigma2_z0 / (n h)).  Everything here is a plug-in: Omega
from a weighted residual outer product after smoothing the covariates on Z,
sigma2_z0 from the eigensystem at the fitted smoothing parameter (closed
form for the Gaussian/trig case).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from . import eigensys, fitter
from .errors import ArgumentError, NumericError, UnsupportedError
from .family import GAUSSIAN, LOGISTIC, gaussian

OMEGA_MIN_EIG = 1e-10
BHAT_FLOOR = 1e-8


@dataclass(frozen=True)
class JointCI:
    """Joint confidence rectangle for (theta, g(z0)) at one z0."""

    theta_intervals: np.ndarray
    g_interval: np.ndarray
    level: float
    omega: np.ndarray
    sigma_z0_sq: float
    h: float


@dataclass(frozen=True)
class PluginQuantities:
    """Estimated Omega and the V-coefficients of the smoothed covariate
    means G_k, shared by the interval and test machinery."""

    omega: np.ndarray
    gbar_coef: np.ndarray


def _smooth_on_z(values: np.ndarray, z: np.ndarray, system) -> fitter.FitResult:
    """Penalized eigenbasis regression of a derived response on Z, with its
    own GCV-selected smoothing parameter."""
    data = fitter.Dataset(y=values, X=None, Z=z)
    lam, _ = fitter.select_lambda(data, gaussian(), system)
    return fitter.fit(data, gaussian(), system, lam)


def plugin_quantities(fit_result, data, system) -> PluginQuantities:
    """Compute Omega-hat and the coefficients of G-hat from a fitted model.

    G_k is estimated by smoothing I_i X_ik on Z and dividing by the smoothed
    Fisher weights B-hat (floored away from zero); Omega-hat is the weighted
    empirical outer product of the residual covariates X - G_hat(Z).
    """
    p = data.p
    if p == 0:
        return PluginQuantities(np.zeros((0, 0)), np.zeros((0, system.n_basis)))

    eta = fit_result.predictor(data.X, data.Z)
    iw = fit_result.family.fisher_weight(eta)

    b_fit = _smooth_on_z(iw, data.Z, system)
    num_fits = [_smooth_on_z(iw * data.X[:, k], data.Z, system) for k in range(p)]

    bhat_at = lambda z: np.maximum(b_fit.g_at(z), BHAT_FLOOR)
    ghat_at_data = np.column_stack(
        [nf.g_at(data.Z) for nf in num_fits]
    ) / bhat_at(data.Z)[:, None]

    x_res = data.X - ghat_at_data
    omega = (x_res * iw[:, None]).T @ x_res / data.n
    omega = 0.5 * (omega + omega.T)

    # V-projection of G-hat = num/B-hat onto the basis, by quadrature
    # against the system weight.
    xq, wq = eigensys.gauss_legendre_rule()
    gq = np.column_stack([nf.g_at(xq) for nf in num_fits]) / bhat_at(xq)[:, None]
    phi = system.basis_matrix(xq)
    wv = wq * system.weight(xq)
    gbar_coef = (gq * wv[:, None]).T @ phi

    return PluginQuantities(omega=omega, gbar_coef=gbar_coef)


def omega_hat(fit_result, data, system) -> np.ndarray:
    """Plug-in efficient information matrix for theta.

    Raises NumericError when the smallest eigenvalue falls below 1e-10,
    which means some X column is (nearly) a function of Z.
    """
    omega = plugin_quantities(fit_result, data, system).omega
    if omega.shape[0] and float(np.linalg.eigvalsh(omega).min()) < OMEGA_MIN_EIG:
        raise NumericError(
            "Omega estimate is near singular: a linear covariate is close to "
            "a deterministic function of Z"
        )
    return omega


def _family_scale(fit_result) -> float:
    """Variance multiplier for the unit-variance Gaussian convention."""
    if fit_result.family.kind != GAUSSIAN:
        return 1.0
    if fit_result.sigma2 is None:
        raise NumericError("fit carries no sigma2 estimate")
    return float(fit_result.sigma2)


def pointwise_variance_constant(fit_result, z0: float) -> float:
    """sigma2_z0 for the fitted system.

    Gaussian with the trig system: the closed-form lam -> 0 limit
    I2 sigma^(2-1/m)/pi.  Every other combination: the finite-lam
    approximant at the fitted smoothing parameter.
    """
    system = fit_result.system
    if system.kind == eigensys.KIND_TRIG and fit_result.family.kind == GAUSSIAN:
        i2 = eigensys.quadrature_Il(system.m, 2)
        return i2 * system.sigma ** (2.0 - 1.0 / system.m) / math.pi
    return eigensys.sigma_z0_sq(fit_result.handle(), z0)


def _check_z0_level(z0, level):
    z0 = float(z0)
    if not 0.0 < z0 < 1.0:
        raise ArgumentError(f"z0 must lie strictly inside (0,1), got {z0!r}")
    level = float(level)
    if not 0.0 < level < 1.0:
        raise ArgumentError(f"level must lie in (0,1), got {level!r}")
    return z0, level


def joint_ci(fit_result, data, system, z0, level=0.95, omega=None) -> JointCI:
    """Joint confidence rectangle for (theta, g(z0)).

    The rectangle is exactly the product of the marginal intervals; the
    diagonal limiting covariance is what licenses that construction.  A
    precomputed ``omega`` skips the internal smoothing passes.
    """
    z0, level = _check_z0_level(z0, level)
    if omega is None:
        omega = omega_hat(fit_result, data, system)
    scale = _family_scale(fit_result)
    zq = norm.ppf(0.5 * (1.0 + level))
    n = data.n

    p = data.p
    if p:
        omega_inv = np.linalg.inv(omega)
        half = zq * np.sqrt(scale * np.diag(omega_inv) / n)
        theta_iv = np.column_stack([fit_result.theta - half, fit_result.theta + half])
    else:
        theta_iv = np.zeros((0, 2))

    sz = pointwise_variance_constant(fit_result, z0)
    g_half = zq * math.sqrt(scale * sz / (n * fit_result.h))
    g_center = fit_result.g_at(z0)
    return JointCI(
        theta_intervals=theta_iv,
        g_interval=np.array([g_center - g_half, g_center + g_half]),
        level=level,
        omega=omega,
        sigma_z0_sq=sz,
        h=fit_result.h,
    )


def prediction_interval(fit_result, data, system, x0, z0, level=0.95) -> np.ndarray:
    """Gaussian prediction interval for a future response at (x0, z0).

    Half-width z * sqrt(sigma2 * sigma2_z0 / (n h) + sigma2): estimation
    variance of g(z0) plus noise.  The theta term is O(1/n), an order
    smaller, and is omitted.
    """
    if fit_result.family.kind != GAUSSIAN:
        raise UnsupportedError("prediction intervals are Gaussian-family only")
    z0, level = _check_z0_level(z0, level)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.size != data.p:
        raise ArgumentError(f"x0 has {x0.size} entries, expected p={data.p}")
    sigma2 = _family_scale(fit_result)
    sz = pointwise_variance_constant(fit_result, z0)
    center = float(x0 @ fit_result.theta) + fit_result.g_at(z0)
    zq = norm.ppf(0.5 * (1.0 + level))
    half = zq * math.sqrt(sigma2 * sz / (data.n * fit_result.h) + sigma2)
    return np.array([center - half, center + half])


def conditional_mean_ci(
    fit_result, data, system, x0, z0, level=0.95, omega=None
) -> np.ndarray:
    """Delta-method CI for the logistic conditional mean F(x0' theta + g(z0)).

    Variance F'(eta)^2 (x0' Omega^-1 x0 / n + sigma2_z0 / (n h)); the two
    terms add because the parametric and smooth parts are asymptotically
    independent.  Endpoints are clipped to [0,1].
    """
    if fit_result.family.kind != LOGISTIC:
        raise UnsupportedError("conditional-mean CIs are logistic-family only")
    z0, level = _check_z0_level(z0, level)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.size != data.p:
        raise ArgumentError(f"x0 has {x0.size} entries, expected p={data.p}")
    if omega is None:
        omega = omega_hat(fit_result, data, system)

    eta = float(x0 @ fit_result.theta) + fit_result.g_at(z0)
    fprime = float(fit_result.family.fisher_weight(eta))
    theta_term = float(x0 @ np.linalg.solve(omega, x0)) / data.n if data.p else 0.0
    sz = pointwise_variance_constant(fit_result, z0)
    var = fprime**2 * (theta_term + sz / (data.n * fit_result.h))
    zq = norm.ppf(0.5 * (1.0 + level))
    center = float(fit_result.family.mean(eta))
    half = zq * math.sqrt(var)
    return np.array([max(center - half, 0.0), min(center + half, 1.0)])
