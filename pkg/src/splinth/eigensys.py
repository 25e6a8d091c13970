"""Eigensystem of the penalized regression problem.

The smooth component lives in a Sobolev space of order ``m`` on [0,1] and is
expanded in a basis (h_nu, gamma_nu) that diagonalizes both bilinear forms at
once:

    V(f, g) = int_0^1 w(z) f(z) g(z) dz,      w = B * pi,
    J(f, g) = int_0^1 f^(m)(z) g^(m)(z) dz,

with V(h_mu, h_nu) = delta_mn and J(h_mu, h_nu) = gamma_mu * delta_mn.  Two
constructions are provided: the closed-form trigonometric system for a
constant weight (``build_trig``) and a finite-difference generalized
eigensolver for an arbitrary positive weight (``build_bvp``).

Everything downstream (reproducing kernel, smoothing operator, asymptotic
constants) is a diagonal operation on basis coefficients and lives here too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import sparse
from scipy.interpolate import CubicSpline
from scipy.linalg import eig_banded
from scipy.special import binom

from .errors import ArgumentError, NumericError

KIND_TRIG = "periodic-trig"
KIND_BVP = "numeric-bvp"

# Tail rule: retain N basis functions so that lam_min * gamma_N >= TAIL_CUT,
# which bounds the relative contribution of the dropped kernel tail by ~1e-4.
TAIL_CUT = 1e4
N_BASIS_CAP = 2000


def gauss_legendre_rule(subintervals: int = 32, nodes: int = 64):
    """Composite Gauss-Legendre rule on [0,1].

    Returns (x, w) with ``sum(w * f(x))`` approximating ``int_0^1 f``.  The
    default 32x64 rule integrates trigonometric polynomials far beyond the
    basis sizes used anywhere in the package.
    """
    if subintervals < 1 or nodes < 2:
        raise ArgumentError("need subintervals >= 1 and nodes >= 2")
    xg, wg = leggauss(nodes)
    edges = np.linspace(0.0, 1.0, subintervals + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    x = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
    w = (half[:, None] * wg[None, :]).ravel()
    return x, w


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Basis (h_nu, gamma_nu) diagonalizing V and J.

    Immutable after construction; safe to share across threads.  ``gamma`` is
    nondecreasing with gamma_0 possibly 0 (null space of the penalty).
    """

    m: int
    kind: str
    gamma: np.ndarray
    weight: Callable[[np.ndarray], np.ndarray]
    grid_size: int
    sigma: float | None = None
    _columns: Callable[[np.ndarray], np.ndarray] = field(repr=False, default=None)

    @property
    def n_basis(self) -> int:
        return self.gamma.size

    def basis_matrix(self, z) -> np.ndarray:
        """Evaluate all basis functions: returns shape (len(z), n_basis)."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        if z.ndim != 1:
            raise ArgumentError("z must be scalar or 1-d")
        return self._columns(z)

    def basis(self, nu: int, z):
        """Evaluate h_nu at z (scalar in, scalar out)."""
        if not 0 <= nu < self.n_basis:
            raise ArgumentError(f"basis index {nu} outside [0, {self.n_basis})")
        scalar = np.isscalar(z)
        out = self.basis_matrix(z)[:, nu]
        return float(out[0]) if scalar else out


def build_trig(m: int, sigma: float, n_basis: int) -> EigenSystem:
    """Closed-form eigensystem for constant weight w(z) = sigma^-2.

    h_0 = sigma, h_{2k-1} = sqrt(2) sigma sin(2 pi k z),
    h_{2k} = sqrt(2) sigma cos(2 pi k z);  gamma_0 = 0 and
    gamma_{2k-1} = gamma_{2k} = sigma^2 (2 pi k)^(2m).
    """
    if m < 1 or int(m) != m:
        raise ArgumentError(f"order m must be a positive integer, got {m!r}")
    if n_basis < 1:
        raise ArgumentError(f"n_basis must be >= 1, got {n_basis}")
    if not (sigma > 0 and math.isfinite(sigma)):
        raise ArgumentError(f"sigma must be positive and finite, got {sigma!r}")
    m = int(m)
    nu = np.arange(n_basis)
    k = (nu + 1) // 2
    gamma = sigma**2 * (2.0 * np.pi * k) ** (2 * m)
    gamma[0] = 0.0

    root2s = math.sqrt(2.0) * sigma

    def columns(z: np.ndarray) -> np.ndarray:
        out = np.empty((z.size, n_basis))
        out[:, 0] = sigma
        kk = np.arange(1, n_basis // 2 + 1)
        ang = 2.0 * np.pi * np.outer(z, kk)
        sin_part = root2s * np.sin(ang)
        cos_part = root2s * np.cos(ang)
        for j in range(1, n_basis):
            half = (j + 1) // 2 - 1
            out[:, j] = sin_part[:, half] if j % 2 == 1 else cos_part[:, half]
        return out

    w_const = sigma**-2
    return EigenSystem(
        m=m,
        kind=KIND_TRIG,
        gamma=gamma,
        weight=lambda z: np.full_like(np.asarray(z, dtype=float), w_const),
        grid_size=0,
        sigma=float(sigma),
        _columns=columns,
    )


def _difference_penalty(m: int, grid: int, dz: float) -> sparse.csr_matrix:
    """Banded discretization of J: dz^(1-2m) * D_m' D_m with D_m the m-th
    forward-difference matrix.  Leaving the boundary rows one-sided is the
    variational (natural) treatment of the free endpoint conditions."""
    stencil = np.array([(-1.0) ** (m - j) * binom(m, j) for j in range(m + 1)])
    rows = grid - m
    diags = [np.full(rows, stencil[j]) for j in range(m + 1)]
    d_mat = sparse.diags(diags, offsets=range(m + 1), shape=(rows, grid), format="csr")
    return (dz ** (1 - 2 * m)) * (d_mat.T @ d_mat)


def build_bvp(
    m: int,
    weight: Callable[[np.ndarray], np.ndarray],
    n_basis: int,
    grid: int = 2048,
) -> EigenSystem:
    """Numeric eigensystem for a general positive weight.

    Discretizes the order-2m differential eigenproblem with its natural
    (free) boundary conditions as a symmetric banded generalized eigenproblem
    against the diagonal weight, and returns the ``n_basis`` smallest
    eigenpairs, V-normalized so that int w h_nu^2 = 1.

    Parameters
    ----------
    m : Sobolev order (penalty differentiates m times).
    weight : positive function on [0,1], vectorized over numpy arrays.
    n_basis : number of eigenpairs to retain.
    grid : number of uniform discretization points, at least 512.
    """
    if m < 1 or int(m) != m:
        raise ArgumentError(f"order m must be a positive integer, got {m!r}")
    if n_basis < 1:
        raise ArgumentError(f"n_basis must be >= 1, got {n_basis}")
    if grid < 512:
        raise ArgumentError(f"grid must be >= 512, got {grid}")
    if n_basis > grid // 4:
        raise ArgumentError("n_basis too large for the grid; refine the grid")
    m = int(m)

    z = np.linspace(0.0, 1.0, grid)
    dz = z[1] - z[0]
    w_vals = np.asarray(weight(z), dtype=float)
    if w_vals.shape != z.shape or not np.all(np.isfinite(w_vals)) or w_vals.min() <= 0:
        raise ArgumentError("weight must be finite and positive on [0,1]")

    pen = _difference_penalty(m, grid, dz)
    tau = np.full(grid, dz)
    tau[0] = tau[-1] = 0.5 * dz
    v_diag = w_vals * tau
    scale = 1.0 / np.sqrt(v_diag)

    sym = sparse.diags(scale) @ pen @ sparse.diags(scale)
    sym = sym.tocsr()
    band = np.zeros((m + 1, grid))
    for k in range(m + 1):
        band[k, : grid - k] = sym.diagonal(-k)

    try:
        vals, vecs = eig_banded(
            band, lower=True, select="i", select_range=(0, n_basis - 1)
        )
    except Exception as exc:  # LinAlgError or LAPACK failure
        raise NumericError(f"banded eigensolver failed: {exc}") from exc

    # Null-space eigenvalues come back as roundoff of size eps * ||S||; the
    # operator norm grows like dz^(1-2m), so the tolerance must track it.
    tol = max(1e-8 * max(1.0, float(vals.max())),
              1e3 * np.finfo(float).eps * float(np.abs(band).max()))
    if vals.min() < -tol:
        raise NumericError(f"negative eigenvalue {vals.min():.3e} below -{tol:.1e}")
    gamma = np.where(np.abs(vals) <= tol, 0.0, vals)

    funcs = vecs * scale[:, None]
    peak = np.max(np.abs(funcs), axis=0)
    for j in range(n_basis):
        col = funcs[:, j]
        # Canonical sign: first near-peak value positive (stable choice; the
        # index of the absolute maximum ties between discrete extrema).
        lead = np.argmax(np.abs(col) >= 0.9 * peak[j])
        if col[lead] < 0:
            funcs[:, j] = -col
    splines = [CubicSpline(z, funcs[:, j]) for j in range(n_basis)]

    def columns(zq: np.ndarray) -> np.ndarray:
        out = np.empty((zq.size, n_basis))
        for j, sp in enumerate(splines):
            out[:, j] = sp(zq)
        return out

    vec_weight = lambda zz: np.asarray(weight(np.asarray(zz, dtype=float)), dtype=float)
    return EigenSystem(
        m=m,
        kind=KIND_BVP,
        gamma=gamma,
        weight=vec_weight,
        grid_size=grid,
        sigma=None,
        _columns=columns,
    )


@dataclass(frozen=True, eq=False)
class KernelHandle:
    """An eigensystem paired with a smoothing parameter lam > 0.

    Gives access to the reproducing kernel K(z, z') = sum_nu h_nu(z) h_nu(z')
    / (1 + lam gamma_nu) of the norm V + lam J, to the smoothing (bias)
    operator W_lam, and to the asymptotic constants that depend on lam only
    through the bandwidth h = lam^(1/2m).
    """

    system: EigenSystem
    lam: float

    def __post_init__(self):
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ArgumentError(f"lam must be positive and finite, got {self.lam!r}")

    @property
    def bandwidth(self) -> float:
        """h = lam^(1/2m), the effective kernel bandwidth."""
        return float(self.lam ** (1.0 / (2 * self.system.m)))

    @property
    def shrink(self) -> np.ndarray:
        """Diagonal factors lam*gamma/(1 + lam*gamma) of W_lam."""
        lg = self.lam * self.system.gamma
        return lg / (1.0 + lg)

    def kernel_coef(self, z: float) -> np.ndarray:
        """Basis coefficients of K_z: h_nu(z) / (1 + lam gamma_nu)."""
        z = _check_unit_interval(z, "z")
        phi = self.system.basis_matrix(z)[0]
        return phi / (1.0 + self.lam * self.system.gamma)

    def eval(self, z, z2) -> float:
        """K(z, z2), symmetric and positive on the diagonal."""
        z = _check_unit_interval(z, "z")
        z2 = _check_unit_interval(z2, "z2")
        phi = self.system.basis_matrix(np.array([z, z2]))
        denom = 1.0 + self.lam * self.system.gamma
        return float(np.dot(phi[0] / denom, phi[1]))


def _check_unit_interval(z, name: str) -> float:
    z = float(z)
    if not (0.0 <= z <= 1.0):
        raise ArgumentError(f"{name} must lie in [0,1], got {z!r}")
    return z


def kernel(system: EigenSystem, lam: float) -> KernelHandle:
    """Pair an eigensystem with a smoothing parameter."""
    return KernelHandle(system=system, lam=lam)


def w_lambda(handle: KernelHandle, coef) -> np.ndarray:
    """Apply W_lam to a function given by its basis coefficients.

    Diagonal in the eigenbasis: coefficient nu is multiplied by
    lam*gamma_nu / (1 + lam*gamma_nu).
    """
    coef = np.asarray(coef, dtype=float)
    if coef.shape != (handle.system.n_basis,):
        raise ArgumentError(
            f"coefficient vector has shape {coef.shape}, "
            f"expected ({handle.system.n_basis},)"
        )
    return handle.shrink * coef


def sigma_z0_sq(handle: KernelHandle, z0: float) -> float:
    """Finite-lam approximant of the pointwise asymptotic variance constant.

    Returns h * sum_nu h_nu(z0)^2 / (1 + lam gamma_nu)^2 with h the
    bandwidth; converges as lam -> 0 to a z0-free limit for the trig system.
    """
    z0 = _check_unit_interval(z0, "z0")
    phi = handle.system.basis_matrix(z0)[0]
    denom = 1.0 + handle.lam * handle.system.gamma
    return float(handle.bandwidth * np.sum(phi**2 / denom**2))


@dataclass(frozen=True)
class C0Result:
    """Extrapolated mixture weight with its convergence diagnostics.

    ``ratios[j]`` is Q2/Q1 at lam_j = lam0 * 4^-j; ``value`` extrapolates the
    tail of that sequence to lam -> 0.  ``converged`` is False when the ratio
    still moved by more than 1% relative at the finest lam, which usually
    means the basis is truncated too early for the requested lam range.
    """

    value: float
    lambdas: np.ndarray
    ratios: np.ndarray
    converged: bool

    def __float__(self) -> float:
        return self.value


_C0_MAX_LEVELS = 40
_C0_SETTLE_RTOL = 1e-6


def c0(handle: KernelHandle, z0: float, levels: int = 7) -> C0Result:
    """Mixture weight c0 = lim_{lam->0} Q2(lam,z0)/Q1(lam,z0).

    Q_l(lam, z0) = sum_nu h_nu(z0)^2 / (1 + lam gamma_nu)^l is evaluated on
    the geometric grid lam_j = handle.lam * 4^-j.  The ratio error is not
    geometric in lam: it oscillates in sign at coarse lam, then collapses
    roughly exponentially in 1/h, so the descent continues past ``levels``
    until successive ratios agree to 1e-6 relative or the dropped basis
    tail would pollute Q_l (lam * gamma_max < TAIL_CUT).  Aitken's
    delta-squared step is applied to the last three points only when their
    differences contract with a common sign; otherwise the finest ratio is
    already the best estimate.  For the trig system the limit is 1 - 1/(2m).
    """
    z0 = _check_unit_interval(z0, "z0")
    if levels < 3:
        raise ArgumentError("need at least 3 extrapolation levels")
    phi2 = handle.system.basis_matrix(z0)[0] ** 2
    gamma = handle.system.gamma
    gamma_max = float(gamma[-1])

    def ratio(lam: float) -> float:
        denom = 1.0 + lam * gamma
        return float(np.sum(phi2 / denom**2) / np.sum(phi2 / denom))

    lambdas = [handle.lam]
    ratios = [ratio(handle.lam)]
    while len(ratios) < _C0_MAX_LEVELS:
        lam = lambdas[-1] / 4.0
        if len(ratios) >= 3 and lam * gamma_max < TAIL_CUT:
            break
        lambdas.append(lam)
        ratios.append(ratio(lam))
        settled = abs(ratios[-1] - ratios[-2]) <= _C0_SETTLE_RTOL * max(
            abs(ratios[-1]), 1e-300
        )
        if len(ratios) >= levels and settled:
            break

    r1, r2, r3 = ratios[-3:]
    d1, d2 = r2 - r1, r3 - r2
    geometric = d1 * d2 > 0.0 and abs(d2) < abs(d1)
    if geometric and abs(d2 - d1) > 1e-14:
        value = r3 - d2**2 / (d2 - d1)
    else:
        value = r3
    converged = abs(ratios[-1] - ratios[-2]) <= 1e-2 * max(abs(ratios[-1]), 1e-300)
    return C0Result(
        value=float(value),
        lambdas=np.asarray(lambdas),
        ratios=np.asarray(ratios),
        converged=converged,
    )


def quadrature_Il(m: int, l: int) -> float:
    """I_l = int_0^inf (1 + x^(2m))^-l dx by adaptive composite quadrature.

    The substitution x = t/(1-t) maps to [0,1); subintervals are doubled
    until successive composite Gauss-Legendre values agree to 1e-10.  Closed
    form for cross-checks: I_1 = pi / (2m sin(pi/2m)), I_2 = (1 - 1/2m) I_1.
    """
    if m < 1 or int(m) != m:
        raise ArgumentError(f"order m must be a positive integer, got {m!r}")
    if l not in (1, 2):
        raise ArgumentError(f"l must be 1 or 2, got {l!r}")
    p = 2 * int(m)

    def integrand(t: np.ndarray) -> np.ndarray:
        x = t / (1.0 - t)
        return (1.0 + x**p) ** (-l) / (1.0 - t) ** 2

    prev = None
    for subs in (8, 16, 32, 64, 128, 256):
        x, w = gauss_legendre_rule(subintervals=subs, nodes=32)
        val = float(np.dot(w, integrand(x)))
        if prev is not None and abs(val - prev) < 1e-10:
            return val
        prev = val
    return prev


def riesz_A(handle: KernelHandle, gcoef, z) -> np.ndarray:
    """Representer A(z) of the weighted conditional means G.

    ``gcoef`` holds the V-coefficients of the p components of G, one row per
    component; A_k(z) = sum_nu gcoef[k,nu] h_nu(z) / (1 + lam gamma_nu).
    """
    gcoef = _check_gcoef(handle, gcoef)
    phi = handle.system.basis_matrix(z)[0]
    return gcoef @ (phi / (1.0 + handle.lam * handle.system.gamma))


def w_lambda_A(handle: KernelHandle, gcoef, z) -> np.ndarray:
    """(W_lam A)(z), the smoothing bias of the representer A."""
    gcoef = _check_gcoef(handle, gcoef)
    phi = handle.system.basis_matrix(z)[0]
    lg = handle.lam * handle.system.gamma
    return gcoef @ (phi * lg / (1.0 + lg) ** 2)


def _check_gcoef(handle: KernelHandle, gcoef) -> np.ndarray:
    gcoef = np.atleast_2d(np.asarray(gcoef, dtype=float))
    if gcoef.shape[1] != handle.system.n_basis:
        raise ArgumentError(
            f"G coefficient matrix has {gcoef.shape[1]} columns, "
            f"expected {handle.system.n_basis}"
        )
    return gcoef


def suggest_n_basis(m: int, lam_min: float, sigma: float = 1.0, cap: int = N_BASIS_CAP) -> int:
    """Smallest truncation N with lam_min * gamma_N >= 1e4 (trig growth law).

    Uses gamma ~ sigma^2 (2 pi k)^(2m); capped at ``cap``.  With this rule the
    dropped kernel tail contributes less than ~1e-4 relatively at any
    lam >= lam_min.
    """
    if not (lam_min > 0):
        raise ArgumentError(f"lam_min must be positive, got {lam_min!r}")
    target = TAIL_CUT / (lam_min * sigma**2)
    k = math.ceil(target ** (1.0 / (2 * m)) / (2.0 * math.pi))
    return int(min(max(2 * k + 1, 3), cap))
