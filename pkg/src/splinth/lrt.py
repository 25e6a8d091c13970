"""Joint local likelihood ratio test for M theta + Q g(z0) = alpha.

The statistic is -2n times the drop in the penalized criterion between the
constrained and the unconstrained fit.  Its null distribution is a mixture
chi2_r + c0 chi2_1 in the three structured cases (joint point, linear
subset plus point, single linear combination) and a Gaussian quadratic form
v' Phi0 v in general, with the mixture weight c0 depending on the
eigensystem only.  This is the semi-nonparametric version of the Wilks
phenomenon: the null law is pivotal.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import chi2

from . import eigensys, fitter, inference
from .errors import ArgumentError, NumericError, RankError
from .family import GAUSSIAN, Family

CASE_I = "I"
CASE_II = "II"
CASE_III = "III"
CASE_GENERAL = "general"

STAT_CLAMP = -1e-8
CDF_GRID = 2**14
MC_DRAWS = 10**6
NULL_LAW_SEED = 0x5EED_1A11
RANK_TOL = 1e-10


@dataclass(frozen=True)
class Hypothesis:
    """Joint linear constraint M theta + Q g(z0) = alpha.

    The stacked matrix (M | Q) must have full row rank k <= p+1.  ``case``
    selects the null law: "I" fixes all of theta and g(z0), "II" fixes
    r independent combinations of theta and g(z0), "III" fixes a single
    combination x0' theta + g(z0), anything else goes through the general
    quadratic-form law.
    """

    M: np.ndarray
    Q: np.ndarray
    alpha: np.ndarray
    z0: float
    case: str = CASE_GENERAL

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.M, dtype=float))
        q = np.atleast_1d(np.asarray(self.Q, dtype=float))
        a = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        if not 0.0 < float(self.z0) < 1.0:
            raise ArgumentError(f"z0 must lie in (0,1), got {self.z0!r}")
        if self.case not in (CASE_I, CASE_II, CASE_III, CASE_GENERAL):
            raise ArgumentError(f"unknown case tag {self.case!r}")
        k = m.shape[0]
        if q.shape != (k,) or a.shape != (k,):
            raise ArgumentError("M, Q, alpha row counts differ")
        if k > m.shape[1] + 1:
            raise ArgumentError(f"{k} constraint rows exceed p+1 = {m.shape[1] + 1}")
        stacked = np.hstack([m, q[:, None]])
        svals = np.linalg.svd(stacked, compute_uv=False)
        if svals.size == 0 or svals[-1] <= RANK_TOL * max(1.0, svals[0]):
            raise ArgumentError("(M | Q) is rank deficient; drop redundant rows")
        object.__setattr__(self, "M", m)
        object.__setattr__(self, "Q", q)
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "z0", float(self.z0))

    @property
    def k(self) -> int:
        return self.M.shape[0]

    @property
    def stacked(self) -> np.ndarray:
        """(M | Q), shape (k, p+1)."""
        return np.hstack([self.M, self.Q[:, None]])

    # -- common constructions ------------------------------------------ #

    @classmethod
    def point(cls, theta0, g0: float, z0: float) -> "Hypothesis":
        """Case I: theta = theta0 and g(z0) = g0 jointly."""
        theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
        p = theta0.size
        m = np.vstack([np.eye(p), np.zeros((1, p))])
        q = np.concatenate([np.zeros(p), [1.0]])
        return cls(M=m, Q=q, alpha=np.concatenate([theta0, [g0]]), z0=z0, case=CASE_I)

    @classmethod
    def subset_point(cls, d_mat, d_val, g0: float, z0: float) -> "Hypothesis":
        """Case II: D theta = d and g(z0) = g0."""
        d_mat = np.atleast_2d(np.asarray(d_mat, dtype=float))
        d_val = np.atleast_1d(np.asarray(d_val, dtype=float))
        r, p = d_mat.shape
        m = np.vstack([d_mat, np.zeros((1, p))])
        q = np.concatenate([np.zeros(r), [1.0]])
        return cls(M=m, Q=q, alpha=np.concatenate([d_val, [g0]]), z0=z0, case=CASE_II)

    @classmethod
    def combination(cls, x0, value: float, z0: float) -> "Hypothesis":
        """Case III: x0' theta + g(z0) = value."""
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        return cls(
            M=x0[None, :], Q=np.array([1.0]), alpha=np.array([float(value)]),
            z0=z0, case=CASE_III,
        )


@dataclass(eq=False)
class NullLaw:
    """Null distribution with tabulated cdf and interpolating quantiles."""

    kind: str
    r: int | None
    c0: float
    c_z0: float
    grid: np.ndarray = field(repr=False)
    cdf_values: np.ndarray = field(repr=False)
    mc_draws: int | None = None

    def cdf(self, t: float) -> float:
        if t <= 0.0:
            return float(self.cdf_values[0]) if t == 0.0 else 0.0
        return float(np.interp(t, self.grid, self.cdf_values))

    def quantile(self, q: float) -> float:
        if not 0.0 <= q < 1.0:
            raise ArgumentError(f"quantile level must lie in [0,1), got {q!r}")
        return float(np.interp(q, self.cdf_values, self.grid))

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "r": self.r,
            "c0": self.c0,
            "c_z0": self.c_z0,
            "mc_draws": self.mc_draws,
            "quantile_95": self.quantile(0.95),
        }


def _mixture_cdf_grid(r: int, c0: float):
    """Tabulate the cdf of chi2_r + c0 * chi2_1 (independent summands).

    Written as an expectation over the scaled chi2_1 leg:
    cdf(t) = sqrt(2/pi) * int_0^sqrt(t/c0) exp(-s^2/2) F_r(t - c0 s^2) ds,
    evaluated with a fixed Gauss-Legendre rule per grid point; for r = 0 the
    law is exactly c0 * chi2_1.
    """
    upper = c0 * chi2.ppf(1.0 - 1e-9, 1)
    if r > 0:
        upper += chi2.ppf(1.0 - 1e-9, r)
    grid = np.linspace(0.0, float(upper), CDF_GRID)
    if r == 0:
        values = chi2.cdf(grid / c0, 1)
        return grid, values

    nodes, wts = np.polynomial.legendre.leggauss(64)
    u = 0.5 * (nodes + 1.0)
    wu = 0.5 * wts
    s_top = np.sqrt(grid / c0)
    s = s_top[:, None] * u[None, :]
    integrand = np.exp(-0.5 * s**2) * chi2.cdf(grid[:, None] - c0 * s**2, r)
    values = math.sqrt(2.0 / math.pi) * s_top * (integrand @ wu)
    values[0] = 0.0
    return grid, np.clip(np.maximum.accumulate(values), 0.0, 1.0)


def _quadratic_form_mc(phi0: np.ndarray, c0: float, c_z0: float, draws: int):
    """Empirical cdf of v' Phi0 v, v ~ N((0,..,0,c_z0)', diag(I_p, c0))."""
    dim = phi0.shape[0]
    scale = max(float(np.max(np.abs(phi0))), 1.0)
    eigvals = np.linalg.eigvalsh(phi0)
    if eigvals.min() < -1e-8 * scale:
        raise ArgumentError(f"Phi0 is not PSD (min eigenvalue {eigvals.min():.3e})")
    rng = np.random.Generator(np.random.Philox(key=np.array([NULL_LAW_SEED, 0], dtype=np.uint64)))
    sd = np.ones(dim)
    sd[-1] = math.sqrt(c0)
    mean = np.zeros(dim)
    mean[-1] = c_z0
    block = rng.standard_normal((draws, dim)) * sd[None, :] + mean[None, :]
    vals = np.einsum("ij,jk,ik->i", block, phi0, block)
    vals.sort()
    cdf_values = np.arange(1, draws + 1, dtype=float) / draws
    return vals, cdf_values


def null_law(
    hyp: Hypothesis | None,
    p: int,
    c0: float,
    c_z0: float = 0.0,
    phi0: np.ndarray | None = None,
    mc_draws: int = MC_DRAWS,
) -> NullLaw:
    """Construct the null distribution for a hypothesis.

    Cases I/II/III give the mixture chi2_r + c0 chi2_1 with r = p, k-1, 0;
    the general case needs ``phi0`` (from :func:`phi_lambda`) and simulates
    the quadratic form.  ``c_z0`` defaults to 0, valid under undersmoothing.
    """
    if not 0.0 < c0 <= 1.0:
        raise ArgumentError(f"c0 must lie in (0, 1], got {c0!r}")
    case = CASE_GENERAL if hyp is None else hyp.case
    if case == CASE_GENERAL:
        if phi0 is None:
            raise ArgumentError("general-case null law requires phi0")
        phi0 = np.atleast_2d(np.asarray(phi0, dtype=float))
        if phi0.shape != (p + 1, p + 1):
            raise ArgumentError(f"phi0 must be ({p+1},{p+1}), got {phi0.shape}")
        grid, values = _quadratic_form_mc(phi0, c0, c_z0, mc_draws)
        return NullLaw(
            kind="quadratic", r=None, c0=c0, c_z0=c_z0,
            grid=grid, cdf_values=values, mc_draws=mc_draws,
        )
    r = {CASE_I: p, CASE_II: hyp.k - 1 if hyp is not None else p, CASE_III: 0}[case]
    grid, values = _mixture_cdf_grid(r, c0)
    return NullLaw(kind="mixture", r=r, c0=c0, c_z0=0.0, grid=grid, cdf_values=values)


def lrt_statistic(data, fam, system, lam, hyp) -> float:
    """-2n times the penalized-criterion drop under the constraint.

    Always nonnegative by nesting; values in [-1e-8, 0) are rounded to 0 and
    anything lower raises (it would mean one of the two solves failed).
    """
    fit_u = fitter.fit(data, fam, system, lam)
    fit_c = fitter.fit_constrained(data, fam, system, lam, hyp)
    return _statistic_from_fits(data.n, fit_u, fit_c)


def _statistic_from_fits(n, fit_u, fit_c) -> float:
    stat = -2.0 * n * (fit_c.objective - fit_u.objective)
    if stat < STAT_CLAMP:
        raise NumericError(
            f"constrained objective exceeds unconstrained by {-stat/(2*n):.3e}: "
            "nesting violated, solver failure"
        )
    return max(stat, 0.0)


def mixture_weight(system, z0: float, lam: float | None = None) -> float:
    """c0 for an eigensystem: 1 - 1/(2m) in closed form for the trig kind,
    the extrapolated Q2/Q1 limit for the numeric kind."""
    if system.kind == eigensys.KIND_TRIG:
        return 1.0 - 1.0 / (2.0 * system.m)
    lam0 = 1e-3 if lam is None else lam
    result = eigensys.c0(eigensys.kernel(system, lam0), z0)
    if not result.converged:
        warnings.warn(
            "c0 extrapolation has not settled; consider a larger basis "
            "or a larger starting lam"
        )
    return float(result)


def phi_lambda(fit_result, data, system, hyp, plugins=None) -> np.ndarray:
    """Finite-sample matrix whose limit drives the general-case null law.

    Assembles, for each constraint row j with weight q_j = Q_j, the
    quantities H_j = (Omega + Sigma_lam)^{-1} (M_j - q_j A(z0)) and
    T_j = q_j K(z0,z0) - A(z0)' H_j, the k x k matrix
    M_K = M H + Q T', and returns Lambda N' M_K^{-1} N Lambda', symmetrized,
    with Lambda = blockdiag(S^{-1/2}, K(z0,z0)^{1/2}) [[I, -A(z0)], [0, 1]].

    ``plugins`` (inference.PluginQuantities) supplies exact Omega and
    G-coefficients in simulation settings; otherwise both are estimated.
    """
    if plugins is None:
        plugins = inference.plugin_quantities(fit_result, data, system)
    omega = np.atleast_2d(plugins.omega)
    gbar = np.atleast_2d(plugins.gbar_coef)
    p = omega.shape[0]

    handle = fit_result.handle()
    shrink = handle.shrink
    s_mat = omega + (gbar * shrink[None, :]) @ gbar.T
    a0 = eigensys.riesz_A(handle, gbar, hyp.z0) if p else np.zeros(0)
    k00 = handle.eval(hyp.z0, hyp.z0)

    m_mat, q_vec = hyp.M, hyp.Q
    if m_mat.shape[1] != p:
        raise ArgumentError(f"hypothesis M has {m_mat.shape[1]} columns, expected {p}")

    rhs = m_mat.T - np.outer(a0, q_vec) if p else np.zeros((0, hyp.k))
    h_cols = np.linalg.solve(s_mat, rhs) if p else rhs
    t_vec = q_vec * k00 - (a0 @ h_cols if p else 0.0)
    m_k = m_mat @ h_cols + np.outer(q_vec, t_vec)

    svals = np.linalg.svd(m_k, compute_uv=False)
    if svals[-1] <= 1e-12 * max(1.0, svals[0]):
        raise RankError("M_K is singular: the hypothesis is degenerate at this design")

    if p:
        w_eig, u_eig = np.linalg.eigh(s_mat)
        if w_eig.min() <= 0:
            raise NumericError("Omega + Sigma_lam is not positive definite")
        s_inv_half = (u_eig / np.sqrt(w_eig)[None, :]) @ u_eig.T
    else:
        s_inv_half = np.zeros((0, 0))
    lam_mat = np.zeros((p + 1, p + 1))
    lam_mat[:p, :p] = s_inv_half
    if p:
        lam_mat[:p, p] = -s_inv_half @ a0
    lam_mat[p, p] = math.sqrt(k00)

    n_mat = hyp.stacked
    core = n_mat.T @ np.linalg.solve(m_k, n_mat)
    phi = lam_mat @ core @ lam_mat.T
    return 0.5 * (phi + phi.T)


@dataclass(eq=False)
class LrtResult:
    """Outcome of the joint local likelihood ratio test.

    ``statistic`` is what the null law is compared against; for the Gaussian
    family the raw criterion drop is studentized by the unconstrained fit's
    sigma2 (the unit-variance criterion leaves the noise scale free).
    """

    statistic: float
    p_value: float
    reject: bool
    level: float
    c0: float
    law: NullLaw
    lam: float
    fit: fitter.FitResult
    fit_constrained: fitter.FitResult

    def describe(self) -> dict:
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "reject": self.reject,
            "level": self.level,
            "c0": self.c0,
            "lam": self.lam,
            "null_law": self.law.describe(),
            "iterations": [self.fit.iterations, self.fit_constrained.iterations],
            "grad_norms": [self.fit.grad_norm, self.fit_constrained.grad_norm],
        }


def _resolve_lambda(data, fam, system, lam_policy, lam):
    if lam_policy == "fixed":
        if lam is None:
            raise ArgumentError("lam_policy 'fixed' requires lam")
        return float(lam)
    if lam_policy == "rate":
        m = system.m
        return float(data.n) ** (-2.0 * m / (2.0 * m + 1.0))
    if lam_policy == "gcv":
        lam_star, _ = fitter.select_lambda(data, fam, system)
        return lam_star
    raise ArgumentError(f"unknown lam policy {lam_policy!r}")


def test(
    data,
    fam: Family,
    system,
    hyp: Hypothesis,
    level: float = 0.95,
    lam_policy: str = "gcv",
    lam: float | None = None,
    c_z0: float = 0.0,
) -> LrtResult:
    """Run the joint local LRT and report statistic, p-value, and decision.

    The same lam (selected on the unconstrained problem) is used for both
    fits.  Rejects when p-value < 1 - level.
    """
    if not 0.0 < level < 1.0:
        raise ArgumentError(f"level must lie in (0,1), got {level!r}")
    lam_used = _resolve_lambda(data, fam, system, lam_policy, lam)

    m = system.m
    rate = float(data.n) ** (-2.0 * m / (2.0 * m + 1.0))
    if not (1e-2 * rate <= lam_used <= 1e2 * rate):
        warnings.warn(
            f"lam {lam_used:.3e} is far from the n^(-2m/(2m+1)) rate "
            f"{rate:.3e}; the null law may be off"
        )

    fit_u = fitter.fit(data, fam, system, lam_used)
    fit_c = fitter.fit_constrained(data, fam, system, lam_used, hyp)
    stat = _statistic_from_fits(data.n, fit_u, fit_c)
    if fam.kind == GAUSSIAN:
        if fit_u.sigma2 is None or fit_u.sigma2 <= 0:
            raise NumericError("cannot studentize: no positive sigma2 estimate")
        stat /= fit_u.sigma2

    c0_val = mixture_weight(system, hyp.z0, lam=None)
    if hyp.case == CASE_GENERAL:
        phi0 = phi_lambda(fit_u, data, system, hyp)
        law = null_law(hyp, data.p, c0_val, c_z0=c_z0, phi0=phi0)
    else:
        law = null_law(hyp, data.p, c0_val)

    p_value = 1.0 - law.cdf(stat)
    return LrtResult(
        statistic=stat,
        p_value=p_value,
        reject=bool(p_value < 1.0 - level),
        level=level,
        c0=c0_val,
        law=law,
        lam=lam_used,
        fit=fit_u,
        fit_constrained=fit_c,
    )
