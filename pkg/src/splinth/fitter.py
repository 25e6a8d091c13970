"""Penalized fitting of the partially linear model.

The smooth part is expanded in the truncated eigenbasis, which makes the
penalty diagonal and keeps the Newton system (p + N) x (p + N) regardless of
the sample size.  The same damped-Newton core serves the unconstrained fit,
the equality-constrained fit (via null-space reduction), and the weighted
working problems behind GCV.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import eigensys
from .eigensys import EigenSystem, KernelHandle
from .errors import ArgumentError, NumericError, RankError, SolverError
from .family import GAUSSIAN, Family

GRAD_TOL = 1e-9
STEP_TOL = 1e-12
MAX_ITER = 200
MAX_HALVINGS = 50
RIDGE = 1e-10
RANK_TOL = 1e-10
MIN_WORK_WEIGHT = 1e-10


@dataclass(frozen=True)
class Dataset:
    """Observed data: responses y, linear covariates X (n x p), and the
    scalar smooth covariate Z with entries in [0,1].  p = 0 is allowed."""

    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        z = np.asarray(self.Z, dtype=float)
        x = self.X
        x = np.zeros((y.size, 0)) if x is None else np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if y.ndim != 1 or z.ndim != 1 or x.ndim != 2:
            raise ArgumentError("y and Z must be 1-d, X must be 2-d")
        if not (y.size == z.size == x.shape[0]):
            raise ArgumentError(
                f"row counts differ: y {y.size}, X {x.shape[0]}, Z {z.size}"
            )
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
            raise ArgumentError("data contain non-finite entries")
        if z.size and (z.min() < 0.0 or z.max() > 1.0):
            raise ArgumentError("Z entries must lie in [0,1]")
        if y.size <= x.shape[1] + 1:
            raise ArgumentError("need n > p + 1 observations")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", x)
        object.__setattr__(self, "Z", z)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(eq=False)
class FitResult:
    """A converged penalized fit.

    ``theta`` is the linear coefficient vector, ``coef`` the eigenbasis
    coefficients of the smooth part.  ``trace_smoother`` is the trace of the
    working smoothing matrix at convergence; ``sigma2`` is filled for the
    Gaussian family only.
    """

    theta: np.ndarray
    coef: np.ndarray
    lam: float
    family: Family
    system: EigenSystem
    iterations: int
    grad_norm: float
    objective: float
    trace_smoother: float
    sigma2: float | None = None
    constrained: bool = False

    @property
    def h(self) -> float:
        """Bandwidth lam^(1/2m) of the fitted smoother."""
        return float(self.lam ** (1.0 / (2 * self.system.m)))

    def handle(self) -> KernelHandle:
        return eigensys.kernel(self.system, self.lam)

    def g_at(self, z):
        """Evaluate the fitted smooth part; scalar in, scalar out."""
        scalar = np.isscalar(z)
        vals = self.system.basis_matrix(z) @ self.coef
        return float(vals[0]) if scalar else vals

    def predictor(self, X, Z) -> np.ndarray:
        """Fitted linear predictor x' theta + g(z) for new covariates."""
        X = np.zeros((np.size(Z), 0)) if X is None else np.atleast_2d(np.asarray(X, dtype=float))
        return X @ self.theta + self.system.basis_matrix(Z) @ self.coef


def design_matrix(data: Dataset, system: EigenSystem) -> np.ndarray:
    """[X | Phi] with Phi the basis evaluated at the Z values."""
    return np.hstack([data.X, system.basis_matrix(data.Z)])


def _penalty_diag(data: Dataset, system: EigenSystem) -> np.ndarray:
    return np.concatenate([np.zeros(data.p), system.gamma])


def _null_dim(system: EigenSystem) -> int:
    gmax = max(float(system.gamma.max()), 1.0)
    return int(np.sum(system.gamma <= 1e-12 * gmax))


class _Problem:
    """Penalized criterion in reduced coordinates beta = offset + basis @ u.

    basis=None means the identity (unconstrained).  All quantities are per
    the averaged criterion: value = mean l - (lam/2) sum gamma c^2.
    """

    def __init__(self, data, fam, system, lam, offset=None, basis=None):
        self.y = data.y
        self.design = design_matrix(data, system)
        self.pen = _penalty_diag(data, system)
        self.lam = lam
        self.fam = fam
        self.n = data.n
        self.dim = self.design.shape[1] if basis is None else basis.shape[1]
        self.offset = offset
        self.basis = basis

    def full_beta(self, u):
        beta = u if self.basis is None else self.basis @ u
        return beta if self.offset is None else beta + self.offset

    def value(self, u):
        return self.value_full(self.full_beta(u))

    def value_full(self, beta):
        a = self.design @ beta
        return float(np.mean(self.fam.value(self.y, a)) - 0.5 * self.lam * np.dot(self.pen, beta**2))

    def grad(self, u):
        beta = self.full_beta(u)
        a = self.design @ beta
        g = self.design.T @ self.fam.grad(self.y, a) / self.n - self.lam * self.pen * beta
        return g if self.basis is None else self.basis.T @ g

    def neg_hess(self, u):
        beta = self.full_beta(u)
        a = self.design @ beta
        w = -self.fam.hess(self.y, a)
        c = (self.design * w[:, None]).T @ self.design / self.n + self.lam * np.diag(self.pen)
        return c if self.basis is None else self.basis.T @ c @ self.basis


def _solve_spd(mat: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Cholesky solve with a one-shot ridge fallback for singular systems."""
    try:
        return cho_solve(cho_factor(mat, lower=True), rhs)
    except LinAlgError:
        warnings.warn("singular Newton system; regularizing with 1e-10 * identity")
        return cho_solve(cho_factor(mat + RIDGE * np.eye(mat.shape[0]), lower=True), rhs)


def _newton(problem: _Problem, u0: np.ndarray, max_iter: int):
    """Damped Newton on the concave penalized criterion.

    The objective never decreases across accepted steps (step halving, at
    most MAX_HALVINGS).  Returns (u, iterations, grad max-norm) or raises
    SolverError carrying the last iterate.
    """
    u = u0.copy()
    val = problem.value(u)
    gnorm = math.inf
    for it in range(max_iter):
        g = problem.grad(u)
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        if gnorm < GRAD_TOL:
            return u, it, gnorm
        step = _solve_spd(problem.neg_hess(u), g)
        t = 1.0
        slack = 1e-12 * (1.0 + abs(val))
        accepted = False
        for _ in range(MAX_HALVINGS):
            cand = u + t * step
            cand_val = problem.value(cand)
            if cand_val >= val - slack:
                accepted = True
                break
            t *= 0.5
        if accepted:
            u, val = cand, max(cand_val, val)
        step_norm = float(np.max(np.abs(t * step))) if step.size else 0.0
        if step_norm < STEP_TOL:
            g = problem.grad(u)
            return u, it + 1, float(np.max(np.abs(g))) if g.size else 0.0
        if not accepted:
            raise SolverError(
                f"line search stalled at iteration {it} "
                f"(gradient max-norm {gnorm:.3e})",
                last_iterate=problem.full_beta(u),
            )
    raise SolverError(
        f"Newton did not converge in {max_iter} iterations "
        f"(gradient max-norm {gnorm:.3e})",
        last_iterate=problem.full_beta(u),
    )


def _smoother_trace(design, weights, pen, lam, n) -> float:
    """Trace of the working smoothing matrix A(lam).

    Equals the trace of (D'WD/n + lam P)^{-1} D'WD/n, computed on the small
    (p + N) system; exact, no stochastic estimation.
    """
    cw = (design * weights[:, None]).T @ design / n
    cpen = cw + lam * np.diag(pen)
    try:
        sol = cho_solve(cho_factor(cpen, lower=True), cw)
    except LinAlgError:
        sol = np.linalg.solve(cpen + RIDGE * np.eye(cpen.shape[0]), cw)
    return float(np.trace(sol))


def fit(
    data: Dataset,
    fam: Family,
    system: EigenSystem,
    lam: float,
    start: np.ndarray | None = None,
    max_iter: int = MAX_ITER,
) -> FitResult:
    """Maximize the penalized criterion by damped Newton.

    Converged when the gradient max-norm drops below 1e-9 or the step below
    1e-12.  For the Gaussian family this is the closed-form penalized
    least-squares solution (the first Newton step lands on it).

    Raises SolverError (with the last iterate attached) after ``max_iter``
    iterations without convergence.
    """
    if not (lam > 0 and math.isfinite(lam)):
        raise ArgumentError(f"lam must be positive and finite, got {lam!r}")
    fam.validate_response(data.y)
    if data.n <= data.p + _null_dim(system):
        raise ArgumentError("need n > p + dim(penalty null space)")

    problem = _Problem(data, fam, system, lam)
    u0 = np.zeros(problem.dim) if start is None else np.asarray(start, dtype=float)
    beta, iters, gnorm = _newton(problem, u0, max_iter)
    return _package(problem, data, fam, system, lam, beta, iters, gnorm, constrained=False)


def _package(problem, data, fam, system, lam, beta, iters, gnorm, constrained):
    p = data.p
    a = problem.design @ beta
    weights = -fam.hess(data.y, a)
    trace = _smoother_trace(problem.design, weights, problem.pen, lam, data.n)
    sigma2 = None
    if fam.kind == GAUSSIAN:
        rss = float(np.sum((data.y - a) ** 2))
        if trace < data.n:
            sigma2 = rss / (data.n - trace)
        else:
            warnings.warn("smoother trace >= n; sigma2 left unset")
    return FitResult(
        theta=beta[:p],
        coef=beta[p:],
        lam=float(lam),
        family=fam,
        system=system,
        iterations=iters,
        grad_norm=gnorm,
        objective=problem.value_full(beta),
        trace_smoother=trace,
        sigma2=sigma2,
        constrained=constrained,
    )


def fit_constrained(
    data: Dataset,
    fam: Family,
    system: EigenSystem,
    lam: float,
    hyp,
    start: np.ndarray | None = None,
    max_iter: int = MAX_ITER,
) -> FitResult:
    """Fit subject to M theta + Q g(z0) = alpha (see lrt.Hypothesis).

    The k x (p+N) constraint matrix [M | Q phi(z0)'] is reduced by an SVD:
    a particular solution plus an orthonormal null-space basis turn the
    problem into an unconstrained Newton run in p+N-k coordinates.  The
    constraint residual at return is below 1e-10 in max-norm.
    """
    if not (lam > 0 and math.isfinite(lam)):
        raise ArgumentError(f"lam must be positive and finite, got {lam!r}")
    fam.validate_response(data.y)

    m_mat = np.atleast_2d(np.asarray(hyp.M, dtype=float))
    q_vec = np.atleast_1d(np.asarray(hyp.Q, dtype=float))
    alpha = np.atleast_1d(np.asarray(hyp.alpha, dtype=float))
    k = m_mat.shape[0]
    if m_mat.shape[1] != data.p:
        raise ArgumentError(f"M has {m_mat.shape[1]} columns, expected p={data.p}")

    phi0 = system.basis_matrix(hyp.z0)[0]
    cons = np.hstack([m_mat, q_vec[:, None] * phi0[None, :]])
    u_svd, s_svd, vt_svd = np.linalg.svd(cons, full_matrices=True)
    rank = int(np.sum(s_svd > RANK_TOL * max(1.0, s_svd[0] if s_svd.size else 0.0)))
    if rank < k:
        raise RankError(f"constraint matrix has rank {rank} < {k} rows")

    offset = vt_svd[:k].T @ ((u_svd.T @ alpha) / s_svd[:k])
    nullbasis = vt_svd[k:].T

    problem = _Problem(data, fam, system, lam, offset=offset, basis=nullbasis)
    u0 = np.zeros(problem.dim) if start is None else np.asarray(start, dtype=float)
    u, iters, gnorm = _newton(problem, u0, max_iter)
    beta = problem.full_beta(u)

    residual = float(np.max(np.abs(cons @ beta - alpha)))
    if residual >= 1e-10:
        raise NumericError(f"constraint residual {residual:.3e} exceeds 1e-10")
    return _package(problem, data, fam, system, lam, beta, iters, gnorm, constrained=True)


@dataclass(frozen=True)
class GcvPoint:
    lam: float
    gcv: float
    trace: float
    skipped: bool = False


def default_lambda_grid(n: int, m: int, size: int = 40) -> np.ndarray:
    """40 log-spaced candidates bracketing the optimal-rate lam ~ n^(-2m/(2m+1))."""
    rate = float(n) ** (-2.0 * m / (2.0 * m + 1.0))
    return np.logspace(-10.0, 2.0, size) * rate


def select_lambda(
    data: Dataset,
    fam: Family,
    system: EigenSystem,
    grid: Sequence[float] | None = None,
) -> tuple[float, list[GcvPoint]]:
    """Choose lam on a grid by generalized cross-validation.

    Gaussian: GCV(lam) = n RSS / (n - trace A)^2 with the exact trace.
    Other families: the same score on the converged working least-squares
    problem (weights -l'', working response a + l'/weight).  Grid points
    where the trace reaches n, or where the inner fit fails, are skipped
    with a warning.  Returns the minimizer and the full table.
    """
    if grid is None:
        grid = default_lambda_grid(data.n, system.m)
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ArgumentError("lambda grid is empty")
    if np.any(np.diff(grid) <= 0):
        raise ArgumentError("lambda grid must be sorted ascending")
    if np.any(grid <= 0):
        raise ArgumentError("lambda grid entries must be positive")

    n = data.n
    design = np.hstack([data.X, system.basis_matrix(data.Z)])
    pen = _penalty_diag(data, system)
    table: list[GcvPoint] = []

    if fam.kind == GAUSSIAN:
        cw = design.T @ design / n
        b = design.T @ data.y / n
        yty = float(np.dot(data.y, data.y))
        for lam in grid:
            cpen = cw + lam * np.diag(pen)
            try:
                factor = cho_factor(cpen, lower=True)
            except LinAlgError:
                warnings.warn(f"lam={lam:.3e}: singular system; skipped")
                table.append(GcvPoint(float(lam), math.inf, math.nan, skipped=True))
                continue
            beta = cho_solve(factor, b)
            rss = yty - 2.0 * n * float(beta @ b) + n * float(beta @ cw @ beta)
            rss = max(rss, 0.0)
            trace = float(np.trace(cho_solve(factor, cw)))
            table.append(_score_point(lam, rss, trace, n, table))
    else:
        start = None
        for lam in grid:
            try:
                res = fit(data, fam, system, lam, start=start)
            except (SolverError, NumericError) as exc:
                warnings.warn(f"lam={lam:.3e}: fit failed ({exc}); skipped")
                table.append(GcvPoint(float(lam), math.inf, math.nan, skipped=True))
                continue
            beta = np.concatenate([res.theta, res.coef])
            start = beta
            a = design @ beta
            w = np.maximum(-fam.hess(data.y, a), MIN_WORK_WEIGHT)
            score = fam.grad(data.y, a)
            wrss = float(np.sum(score**2 / w))
            trace = _smoother_trace(design, w, pen, lam, n)
            table.append(_score_point(lam, wrss, trace, n, table))

    usable = [pt for pt in table if not pt.skipped]
    if not usable:
        raise NumericError("every lambda in the grid was skipped")
    best = min(usable, key=lambda pt: pt.gcv)
    return best.lam, table


def _score_point(lam, rss, trace, n, table) -> GcvPoint:
    if trace >= n:
        warnings.warn(f"lam={lam:.3e}: smoother trace {trace:.1f} >= n={n}; skipped")
        return GcvPoint(float(lam), math.inf, float(trace), skipped=True)
    gcv = n * rss / (n - trace) ** 2
    return GcvPoint(float(lam), float(gcv), float(trace))


def sigma2_hat(fit_result: FitResult, data: Dataset) -> float:
    """Gaussian noise variance estimate RSS / (n - trace A(lam))."""
    if fit_result.family.kind != GAUSSIAN:
        raise ArgumentError("sigma2_hat is defined for the Gaussian family only")
    resid = data.y - fit_result.predictor(data.X, data.Z)
    rss = float(np.sum(resid**2))
    denom = data.n - fit_result.trace_smoother
    if denom <= 0:
        raise NumericError(f"smoother trace {fit_result.trace_smoother:.1f} >= n={data.n}")
    return rss / denom


@dataclass(frozen=True)
class BahadurTruth:
    """True-model quantities needed by the Bahadur remainder diagnostic.

    All in V-coefficient form against the fitting eigensystem: ``g_coef`` are
    the coefficients of the true smooth part, ``gbar_coef`` row k holds the
    coefficients of G_k = E{I X_k | Z} / B(Z), and ``omega`` is the efficient
    information matrix E{I (X - G)(X - G)'}.
    """

    theta: np.ndarray
    g_coef: np.ndarray
    gbar_coef: np.ndarray
    omega: np.ndarray


def bahadur_diagnostic(fit_result: FitResult, data: Dataset, truth: BahadurTruth) -> float:
    """Norm of the remainder of the joint linearization (simulation use only).

    Assembles the leading term S_n = (1/n) sum_i eps_i R_{U_i} - P_lam f0 in
    coefficient space and returns || fhat - f0 - S_n || in the joint norm
    whose square is  th' (Omega + V(G,G')) th + 2 th' sum_nu c_nu V(G,h_nu)
    + sum_nu c_nu^2 (1 + lam gamma_nu).
    """
    system = fit_result.system
    lam = fit_result.lam
    gamma = system.gamma
    shrink = lam * gamma / (1.0 + lam * gamma)
    denom1 = 1.0 + lam * gamma

    theta0 = np.asarray(truth.theta, dtype=float)
    g_coef = np.asarray(truth.g_coef, dtype=float)
    gbar = np.atleast_2d(np.asarray(truth.gbar_coef, dtype=float))
    omega = np.atleast_2d(np.asarray(truth.omega, dtype=float))
    p = data.p
    if gbar.shape != (p, system.n_basis) or omega.shape != (p, p):
        raise ArgumentError("truth coefficient shapes do not match the problem")

    sig_lam = (gbar * shrink[None, :]) @ gbar.T
    s_mat = omega + sig_lam

    phi = system.basis_matrix(data.Z)
    a_coef = gbar / denom1[None, :]
    a_vals = phi @ a_coef.T
    x_curl = data.X - a_vals

    a0 = data.X @ theta0 + phi @ g_coef
    eps = fit_result.family.grad(data.y, a0)

    h_mat = x_curl @ np.linalg.inv(s_mat) if p else np.zeros((data.n, 0))
    t_mat = phi / denom1[None, :] - h_mat @ a_coef

    s_theta = h_mat.T @ eps / data.n
    s_g = t_mat.T @ eps / data.n

    v = gbar @ (shrink * g_coef)
    s_inv_v = np.linalg.solve(s_mat, v) if p else np.zeros(0)
    p_theta = -s_inv_v
    p_g = a_coef.T @ s_inv_v + shrink * g_coef

    d_theta = (fit_result.theta - theta0) - (s_theta - p_theta)
    d_g = (fit_result.coef - g_coef) - (s_g - p_g)

    v_gram = gbar @ gbar.T
    sq = (
        float(d_theta @ (omega + v_gram) @ d_theta)
        + 2.0 * float(d_theta @ (gbar @ d_g))
        + float(np.sum(d_g**2 * denom1))
    )
    return math.sqrt(max(sq, 0.0))
