"""Seeded Monte Carlo studies: correlation decay, interval coverage, test power.

Each replication owns a counter-based Philox stream keyed by
(base seed, replication index), so a study's report is bit-identical for
any worker-thread count and any scheduling order.  Failed replications
are excluded and counted; a study aborts when more than 1% fail.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import betaln, expit
from scipy.stats import gaussian_kde

from . import eigensys, fitter, inference, lrt
from .errors import ArgumentError, NumericError, SolverError, UnsupportedError
from .family import GAMMA, GAUSSIAN, LOGISTIC, Family, gamma, gaussian, logistic

MODEL_CASE_I = "example1-caseI"
MODEL_CASE_II = "example1-caseII"
MODEL_GAMMA = "gamma"
MODEL_LOGISTIC = "logistic"
MODELS = (MODEL_CASE_I, MODEL_CASE_II, MODEL_GAMMA, MODEL_LOGISTIC)

X_CORRELATED = "correlated"
X_INDEPENDENT = "independent"

LAM_GCV = "gcv"
LAM_FIXED = "fixed"
LAM_RATE = "rate"

MAX_FAIL_FRACTION = 0.01
THREADS_ENV = "SPLINTH_THREADS"

# stream lanes: datasets and future responses come from disjoint key spaces
_LANE_DATA = 0
_LANE_FUTURE = 1


def _beta_density(z, a, b):
    # exp/betaln instead of the Beta-function ratio: beta(30,17) underflows
    lz = np.log(np.clip(z, 1e-300, None))
    l1z = np.log(np.clip(1.0 - z, 1e-300, None))
    return np.exp((a - 1.0) * lz + (b - 1.0) * l1z - betaln(a, b))


def _beta_mixture(z):
    return 0.6 * _beta_density(z, 30.0, 17.0) + 0.4 * _beta_density(z, 3.0, 11.0)


def _logistic_printed(z):
    return 0.3e6 * (1.0 - z) ** 6 + 1.0e4 * (1.0 - z) ** 10 - 2.0


def _logistic_alt(z):
    return 0.3e6 * z**11 * (1.0 - z) ** 6 + 1.0e4 * z**3 * (1.0 - z) ** 10 - 2.0


G0_FUNCTIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "beta-mixture": _beta_mixture,
    "sin-pi": lambda z: np.sin(np.pi * z),
    "sin-2pi": lambda z: np.sin(2.0 * np.pi * z),
    "sin-2.8pi": lambda z: np.sin(2.8 * np.pi * z),
    "logistic-printed": _logistic_printed,
    "logistic-alt": _logistic_alt,
    "zero": lambda z: np.zeros_like(z),
}


def g0_function(tag: str) -> Callable[[np.ndarray], np.ndarray]:
    try:
        return G0_FUNCTIONS[tag]
    except KeyError:
        known = ", ".join(sorted(G0_FUNCTIONS))
        raise ArgumentError(f"unknown g0 descriptor {tag!r}; known: {known}") from None


@dataclass(frozen=True)
class SimDesign:
    """One simulation scenario: model, truth, sampling scheme, and budget.

    ``scale`` is the noise standard deviation for Gaussian models and the
    known shape alpha for the gamma model; it is unused by the logistic
    model.  ``g0`` is a descriptor tag resolved via :func:`g0_function`.
    """

    model: str
    n: int
    theta0: tuple[float, ...]
    g0: str
    x_design: str = X_CORRELATED
    scale: float = 1.0
    replications: int = 500
    base_seed: int = 0
    lam_policy: str = LAM_GCV
    lam: float | None = None
    m: int = 2
    n_basis: int = 61

    def __post_init__(self):
        if self.model not in MODELS:
            raise ArgumentError(f"unknown model {self.model!r}; known: {MODELS}")
        if self.x_design not in (X_CORRELATED, X_INDEPENDENT):
            raise ArgumentError(f"unknown covariate design {self.x_design!r}")
        if self.lam_policy not in (LAM_GCV, LAM_FIXED, LAM_RATE):
            raise ArgumentError(f"unknown lam policy {self.lam_policy!r}")
        if self.lam_policy == LAM_FIXED and (self.lam is None or not self.lam > 0):
            raise ArgumentError("lam policy 'fixed' requires a positive lam")
        theta0 = tuple(float(t) for t in np.atleast_1d(np.asarray(self.theta0, dtype=float)))
        if not all(math.isfinite(t) for t in theta0):
            raise ArgumentError("theta0 must be finite")
        if not (math.isfinite(self.scale) and self.scale >= 0):
            raise ArgumentError(f"scale must be finite and >= 0, got {self.scale!r}")
        if self.model == MODEL_GAMMA and not self.scale > 0:
            raise ArgumentError("gamma model needs a positive shape in `scale`")
        if self.n < 20:
            raise ArgumentError(f"n must be >= 20, got {self.n}")
        if self.replications < 1:
            raise ArgumentError(f"replications must be >= 1, got {self.replications}")
        g0_function(self.g0)
        object.__setattr__(self, "theta0", theta0)

    @property
    def p(self) -> int:
        return len(self.theta0)

    @property
    def family(self) -> Family:
        if self.model in (MODEL_CASE_I, MODEL_CASE_II):
            return gaussian()
        if self.model == MODEL_GAMMA:
            return gamma(self.scale)
        return logistic()

    def rate_lambda(self) -> float:
        return float(self.n) ** (-2.0 * self.m / (2.0 * self.m + 1.0))

    def as_dict(self) -> dict:
        return {
            "model": self.model,
            "n": self.n,
            "theta0": list(self.theta0),
            "g0": self.g0,
            "x_design": self.x_design,
            "scale": self.scale,
            "replications": self.replications,
            "base_seed": self.base_seed,
            "lam_policy": self.lam_policy,
            "lam": self.lam,
            "m": self.m,
            "n_basis": self.n_basis,
        }


# ------------------------------------------------------------------ #
#  named designs from the studies this package reproduces
# ------------------------------------------------------------------ #

def acc_design(n: int, replications: int = 500, base_seed: int = 0) -> SimDesign:
    """Correlation-decay study: theta0 = (8, -8), beta-mixture g0."""
    return SimDesign(
        model=MODEL_CASE_I, n=n, theta0=(8.0, -8.0), g0="beta-mixture",
        x_design=X_CORRELATED, scale=1.0, replications=replications,
        base_seed=base_seed,
    )


def coverage_design(
    n: int, case: str = "I", replications: int = 500, base_seed: int = 0
) -> SimDesign:
    """Prediction-interval study: scalar theta0 = 4; case II swaps in the
    nonperiodic sin(2.8 pi z) truth and the numeric eigensystem."""
    if case not in ("I", "II"):
        raise ArgumentError(f"case must be 'I' or 'II', got {case!r}")
    if case == "I":
        model, g0 = MODEL_CASE_I, "beta-mixture"
    else:
        model, g0 = MODEL_CASE_II, "sin-2.8pi"
    return SimDesign(
        model=model, n=n, theta0=(4.0,), g0=g0, x_design=X_CORRELATED,
        scale=1.0, replications=replications, base_seed=base_seed,
    )


def power_design(n: int, replications: int = 500, base_seed: int = 0) -> SimDesign:
    """Local-test power study: theta0 = -4, g0 = sin(pi z)."""
    return SimDesign(
        model=MODEL_CASE_I, n=n, theta0=(-4.0,), g0="sin-pi",
        x_design=X_CORRELATED, scale=1.0, replications=replications,
        base_seed=base_seed,
    )


def logistic_design(
    n: int,
    replications: int = 500,
    base_seed: int = 0,
    variant: str = "alt",
) -> SimDesign:
    """Conditional-mean CI study: theta0 = -0.5, independent covariates.

    ``variant`` picks the g0: "printed" is the published form, whose value
    near z=0 is ~3e5 and saturates the success probability; "alt" is the
    standard polynomial test function with the same coefficients.
    """
    if variant not in ("printed", "alt"):
        raise ArgumentError(f"variant must be 'printed' or 'alt', got {variant!r}")
    return SimDesign(
        model=MODEL_LOGISTIC, n=n, theta0=(-0.5,), g0=f"logistic-{variant}",
        x_design=X_INDEPENDENT, scale=1.0, replications=replications,
        base_seed=base_seed,
    )


def gamma_design(
    n: int, shape: float = 2.0, replications: int = 500, base_seed: int = 0
) -> SimDesign:
    return SimDesign(
        model=MODEL_GAMMA, n=n, theta0=(1.0,), g0="sin-2pi",
        x_design=X_INDEPENDENT, scale=shape, replications=replications,
        base_seed=base_seed,
    )


# ------------------------------------------------------------------ #
#  data generation
# ------------------------------------------------------------------ #

def _stream(base_seed: int, lane: int, rep: int) -> np.random.Generator:
    if rep < 0 or rep >= 2**48:
        raise ArgumentError(f"replication index out of range: {rep}")
    key = np.array([base_seed % 2**64, (lane << 48) | rep], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def generate(design: SimDesign, rep: int) -> fitter.Dataset:
    """Draw one replication's dataset, deterministically in (seed, rep)."""
    rng = _stream(design.base_seed, _LANE_DATA, rep)
    n, p = design.n, design.p
    z = rng.random(n)
    u = rng.random((n, p))
    if design.x_design == X_CORRELATED:
        x = (u + 0.2 * z[:, None]) / 1.2
    else:
        x = u
    eta = x @ np.asarray(design.theta0) + g0_function(design.g0)(z)
    fam = design.family
    if fam.kind == GAUSSIAN:
        y = eta + design.scale * rng.standard_normal(n)
    elif fam.kind == GAMMA:
        y = rng.gamma(shape=design.scale, scale=np.exp(-eta))
    else:
        y = (rng.random(n) < expit(eta)).astype(float)
    return fitter.Dataset(y=y, X=x, Z=z)


def design_omega(design: SimDesign) -> np.ndarray:
    """Exact efficient-information matrix where it has a closed form.

    Gaussian designs have I(U) = 1 under the unit-variance criterion and
    the gamma model has I(U) = alpha, so Omega reduces to a scaled
    Var(X - E[X|Z]): Var(U)/1.2^2 per coordinate when X = (U + 0.2 Z)/1.2,
    plain Var(U) when X and Z are independent.
    """
    if design.family.kind == LOGISTIC:
        raise UnsupportedError("no closed-form Omega for the logistic model")
    var = 1.0 / 12.0
    if design.x_design == X_CORRELATED:
        var /= 1.2**2
    info = design.scale if design.family.kind == GAMMA else 1.0
    return info * var * np.eye(design.p)


def eigensystem_for(design: SimDesign) -> eigensys.EigenSystem:
    """Eigensystem used to fit a design.

    Trig for the periodic Gaussian case and the gamma model
    (weight alpha means sigma = alpha^(-1/2)); the free-boundary numeric
    system for case II; a unit-weight trig pilot for the logistic model,
    which :func:`run_coverage_study` later replaces with the estimated-weight
    numeric system per replication.
    """
    if design.model == MODEL_CASE_II:
        return eigensys.build_bvp(
            design.m, lambda z: np.ones_like(z), design.n_basis
        )
    if design.model == MODEL_GAMMA:
        return eigensys.build_trig(design.m, design.scale**-0.5, design.n_basis)
    return eigensys.build_trig(design.m, 1.0, design.n_basis)


def _resolve_lam(design: SimDesign, data, fam, system) -> float:
    if design.lam_policy == LAM_FIXED:
        return float(design.lam)
    if design.lam_policy == LAM_RATE:
        return design.rate_lambda()
    lam, _ = fitter.select_lambda(data, fam, system)
    return lam


# ------------------------------------------------------------------ #
#  report plumbing
# ------------------------------------------------------------------ #

ACC = "acc"
COVERAGE = "coverage"
REJECTION = "rejection"


@dataclass(frozen=True)
class Cell:
    """One summary cell: an ACC value, a coverage proportion, or a
    rejection rate, with its Monte Carlo standard error."""

    kind: str
    value: float
    mcse: float
    n_used: int
    component: int | None = None
    x0: float | None = None
    z0: float | None = None
    mean_length: float | None = None

    def __post_init__(self):
        if self.kind in (COVERAGE, REJECTION) and not 0.0 <= self.value <= 1.0:
            raise ArgumentError(f"{self.kind} value {self.value!r} outside [0,1]")
        if self.mcse < 0:
            raise ArgumentError(f"negative MC standard error {self.mcse!r}")

    def as_row(self) -> dict:
        return {
            "kind": self.kind,
            "component": self.component,
            "x0": self.x0,
            "z0": self.z0,
            "value": self.value,
            "mcse": self.mcse,
            "mean_length": self.mean_length,
            "n_used": self.n_used,
        }


def _proportion_cell(count: int, total: int, **where) -> Cell:
    p_hat = count / total
    return Cell(
        value=p_hat, mcse=math.sqrt(p_hat * (1.0 - p_hat) / total),
        n_used=total, **where,
    )


@dataclass(eq=False)
class SimReport:
    """Study output: per-cell summaries plus replication bookkeeping."""

    study: str
    design: SimDesign
    cells: tuple[Cell, ...]
    replications: int
    excluded: tuple[int, ...]
    wall_clock: float

    @property
    def n_excluded(self) -> int:
        return len(self.excluded)

    def cell(self, **match) -> Cell:
        """The unique cell whose fields equal ``match`` (floats within 1e-9)."""
        def ok(c: Cell) -> bool:
            for k, v in match.items():
                have = getattr(c, k)
                if isinstance(v, float) and isinstance(have, float):
                    if abs(have - v) > 1e-9:
                        return False
                elif have != v:
                    return False
            return True

        found = [c for c in self.cells if ok(c)]
        if len(found) != 1:
            raise ArgumentError(f"{len(found)} cells match {match!r}")
        return found[0]

    def rows(self) -> list[dict]:
        base = {"study": self.study, "model": self.design.model, "n": self.design.n}
        return [base | c.as_row() for c in self.cells]

    def as_dict(self) -> dict:
        return {
            "study": self.study,
            "design": self.design.as_dict(),
            "cells": [c.as_row() for c in self.cells],
            "replications": self.replications,
            "excluded": list(self.excluded),
            "wall_clock": self.wall_clock,
        }


def _resolve_threads(threads: int | None) -> int:
    if threads is None:
        env = os.environ.get(THREADS_ENV, "")
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise ArgumentError(
                    f"{THREADS_ENV} must be an integer, got {env!r}"
                ) from None
        else:
            return 1
    if threads < 1:
        raise ArgumentError(f"thread count must be >= 1, got {threads}")
    return threads


def _run_replications(design: SimDesign, worker, threads: int | None):
    """Run ``worker(rep)`` for every replication, in rep order.

    Returns (payloads keyed by rep, excluded rep indices).  Solver and
    numeric failures are excluded; anything else propagates.  Aborts when
    more than MAX_FAIL_FRACTION of replications fail.
    """
    reps = design.replications

    def guarded(rep):
        try:
            return "ok", worker(rep)
        except (SolverError, NumericError) as exc:
            return "fail", str(exc)

    n_threads = _resolve_threads(threads)
    if n_threads == 1:
        outcomes = [guarded(rep) for rep in range(reps)]
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            outcomes = list(pool.map(guarded, range(reps)))

    payloads = {rep: out for rep, (tag, out) in enumerate(outcomes) if tag == "ok"}
    excluded = tuple(rep for rep, (tag, _) in enumerate(outcomes) if tag == "fail")
    if len(excluded) > MAX_FAIL_FRACTION * reps:
        first = outcomes[excluded[0]][1]
        raise NumericError(
            f"{len(excluded)} of {reps} replications failed "
            f"(> {MAX_FAIL_FRACTION:.0%}); first failure: {first}"
        )
    return payloads, excluded


def _require_study_budget(design: SimDesign, study: str):
    if design.replications < 100:
        raise ArgumentError(
            f"{study} needs replications >= 100 (and >= 2 for any sample "
            f"statistic to exist), got {design.replications}"
        )


# ------------------------------------------------------------------ #
#  studies
# ------------------------------------------------------------------ #

def default_acc_grid(points: int = 10) -> np.ndarray:
    """Evenly spaced z values spanning [0,1], endpoints included."""
    return np.linspace(0.0, 1.0, points)


def run_correlation_study(
    design: SimDesign,
    z_grid: Sequence[float] | None = None,
    threads: int | None = None,
) -> SimReport:
    """Absolute correlation, across replications, between each fitted theta
    coordinate and the fitted g at each grid point.

    The smooth enters centered (its weighted mean removed), matching the
    usual reporting convention that puts the intercept in the parametric
    part.  Without this the unpenalized constant component of g, which is
    nearly collinear with the covariate means, dominates the correlation
    with an O(1) artifact that no sample size removes.
    """
    _require_study_budget(design, "correlation study")
    grid = default_acc_grid() if z_grid is None else np.asarray(z_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or np.any((grid < 0) | (grid > 1)):
        raise ArgumentError("z_grid must be a nonempty vector inside [0,1]")
    if design.p == 0:
        raise ArgumentError("correlation study needs at least one linear covariate")

    system = eigensystem_for(design)
    fam = design.family
    xq, wq = eigensys.gauss_legendre_rule()
    wv = wq * system.weight(xq)
    wv /= wv.sum()

    def worker(rep):
        data = generate(design, rep)
        lam = _resolve_lam(design, data, fam, system)
        fit = fitter.fit(data, fam, system, lam)
        return fit.theta.copy(), fit.g_at(grid) - wv @ fit.g_at(xq)

    start = time.perf_counter()
    payloads, excluded = _run_replications(design, worker, threads)
    used = sorted(payloads)
    thetas = np.array([payloads[r][0] for r in used])
    gvals = np.array([payloads[r][1] for r in used])
    n_used = len(used)
    if n_used < 2:
        raise NumericError("fewer than 2 usable replications; ACC undefined")

    tc = thetas - thetas.mean(axis=0)
    gc = gvals - gvals.mean(axis=0)
    tn = np.linalg.norm(tc, axis=0)
    gn = np.linalg.norm(gc, axis=0)
    denom = np.outer(tn, gn)
    if np.any(denom == 0):
        raise NumericError("degenerate replication spread; ACC undefined")
    acc = np.abs(tc.T @ gc) / denom

    cells = []
    for k in range(design.p):
        for j, z0 in enumerate(grid):
            # large-sample se of a correlation coefficient
            se = (1.0 - acc[k, j] ** 2) / math.sqrt(max(n_used - 3, 1))
            cells.append(Cell(
                kind=ACC, value=float(acc[k, j]), mcse=se, n_used=n_used,
                component=k, z0=float(z0),
            ))
    return SimReport(
        study="correlation", design=design, cells=tuple(cells),
        replications=design.replications, excluded=excluded,
        wall_clock=time.perf_counter() - start,
    )


def _check_targets(design: SimDesign, targets) -> list[tuple[np.ndarray, float]]:
    out = []
    for t in targets:
        x0, z0 = t
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        if x0.shape != (design.p,):
            raise ArgumentError(f"target x0 {x0!r} does not match p={design.p}")
        if not 0.0 < float(z0) < 1.0:
            raise ArgumentError(f"target z0 must lie in (0,1), got {z0!r}")
        out.append((x0, float(z0)))
    if not out:
        raise ArgumentError("no targets given")
    return out


def _logistic_replication_system(design, data, pilot) -> eigensys.EigenSystem:
    """Estimated-weight numeric eigensystem for one logistic replication.

    Smooths the fitted Fisher weights on Z for B-hat, estimates the Z
    density with a Gaussian KDE, and solves the numeric eigenproblem with
    weight B-hat * pi-hat (floored away from zero).
    """
    fam = design.family
    lam0 = _resolve_lam(design, data, fam, pilot)
    pilot_fit = fitter.fit(data, fam, pilot, lam0)
    eta = pilot_fit.predictor(data.X, data.Z)
    b_fit = inference._smooth_on_z(fam.fisher_weight(eta), data.Z, pilot)
    kde = gaussian_kde(data.Z)

    def weight(z):
        w = np.maximum(b_fit.g_at(z), 1e-4) * np.maximum(kde(z), 1e-4)
        return w

    return eigensys.build_bvp(design.m, weight, design.n_basis)


def run_coverage_study(
    design: SimDesign,
    targets: Sequence[tuple],
    threads: int | None = None,
    level: float = 0.95,
) -> SimReport:
    """Coverage of the 95% interval at each (x0, z0) target.

    Gaussian designs get prediction intervals scored against a fresh
    response drawn at the target; the logistic design gets conditional-mean
    CIs scored against the true success probability, with the per-replication
    estimated-weight eigensystem.
    """
    _require_study_budget(design, "coverage study")
    pairs = _check_targets(design, targets)
    fam = design.family
    if fam.kind == GAMMA:
        raise UnsupportedError("coverage study covers gaussian and logistic designs")

    base_system = eigensystem_for(design)
    g0 = g0_function(design.g0)

    if fam.kind == GAUSSIAN:
        def worker(rep):
            data = generate(design, rep)
            lam = _resolve_lam(design, data, fam, base_system)
            fit = fitter.fit(data, fam, base_system, lam)
            future = _stream(design.base_seed, _LANE_FUTURE, rep)
            noise = future.standard_normal(len(pairs))
            hits, lengths = [], []
            for i, (x0, z0) in enumerate(pairs):
                lo, hi = inference.prediction_interval(
                    fit, data, base_system, x0=x0, z0=z0, level=level
                )
                y_new = float(x0 @ np.asarray(design.theta0)) + g0(np.array([z0]))[0] \
                    + design.scale * noise[i]
                hits.append(lo <= y_new <= hi)
                lengths.append(hi - lo)
            return np.array(hits, dtype=bool), np.array(lengths)
    else:
        def worker(rep):
            data = generate(design, rep)
            system = _logistic_replication_system(design, data, base_system)
            lam = _resolve_lam(design, data, fam, system)
            fit = fitter.fit(data, fam, system, lam)
            omega = inference.omega_hat(fit, data, system)
            hits, lengths = [], []
            for x0, z0 in pairs:
                lo, hi = inference.conditional_mean_ci(
                    fit, data, system, x0=x0, z0=z0, level=level, omega=omega
                )
                p0 = float(expit(x0 @ np.asarray(design.theta0) + g0(np.array([z0]))[0]))
                hits.append(lo <= p0 <= hi)
                lengths.append(hi - lo)
            return np.array(hits, dtype=bool), np.array(lengths)

    start = time.perf_counter()
    payloads, excluded = _run_replications(design, worker, threads)
    used = sorted(payloads)
    if not used:
        raise NumericError("no usable replications")
    hit_mat = np.array([payloads[r][0] for r in used])
    len_mat = np.array([payloads[r][1] for r in used])

    cells = []
    for i, (x0, z0) in enumerate(pairs):
        cell = _proportion_cell(
            int(hit_mat[:, i].sum()), len(used),
            kind=COVERAGE, x0=float(x0[0]) if design.p == 1 else None, z0=z0,
        )
        cells.append(replace(cell, mean_length=float(len_mat[:, i].mean())))
    return SimReport(
        study="coverage", design=design, cells=tuple(cells),
        replications=design.replications, excluded=excluded,
        wall_clock=time.perf_counter() - start,
    )


def power_hypotheses(
    x0_values: Sequence[float], z0_values: Sequence[float], value: float = 0.0
) -> list[lrt.Hypothesis]:
    """Case-III hypotheses x0 theta + g(z0) = value over a grid, scalar theta."""
    return [
        lrt.Hypothesis.combination(np.array([float(x0)]), value=value, z0=float(z0))
        for x0 in x0_values
        for z0 in z0_values
    ]


def run_power_study(
    design: SimDesign,
    hypotheses: Sequence[lrt.Hypothesis],
    threads: int | None = None,
    level: float = 0.95,
) -> SimReport:
    """Rejection rate of the local likelihood-ratio test per hypothesis."""
    _require_study_budget(design, "power study")
    hyps = list(hypotheses)
    if not hyps:
        raise ArgumentError("no hypotheses given")
    for hyp in hyps:
        if hyp.case != lrt.CASE_III:
            raise ArgumentError("power study expects case-III hypotheses")
        if hyp.M.shape[1] != design.p:
            raise ArgumentError(f"hypothesis M does not match p={design.p}")

    system = eigensystem_for(design)
    fam = design.family
    # c0 depends only on the eigensystem, so one null law serves all cells
    c0 = lrt.mixture_weight(system, hyps[0].z0)
    law = lrt.null_law(hyps[0], design.p, c0)
    threshold = law.quantile(level)

    def worker(rep):
        data = generate(design, rep)
        lam = _resolve_lam(design, data, fam, system)
        fit_u = fitter.fit(data, fam, system, lam)
        rejects = np.zeros(len(hyps), dtype=bool)
        for i, hyp in enumerate(hyps):
            fit_c = fitter.fit_constrained(data, fam, system, lam, hyp)
            stat = lrt._statistic_from_fits(data.n, fit_u, fit_c)
            if fam.kind == GAUSSIAN:
                if fit_u.sigma2 is None or fit_u.sigma2 <= 0:
                    raise NumericError("no positive sigma2 for studentizing")
                stat /= fit_u.sigma2
            rejects[i] = stat > threshold
        return rejects

    start = time.perf_counter()
    payloads, excluded = _run_replications(design, worker, threads)
    used = sorted(payloads)
    if not used:
        raise NumericError("no usable replications")
    rej = np.array([payloads[r] for r in used])

    cells = [
        _proportion_cell(
            int(rej[:, i].sum()), len(used),
            kind=REJECTION,
            x0=float(hyp.M[0, 0]) if design.p == 1 else None,
            z0=hyp.z0,
        )
        for i, hyp in enumerate(hyps)
    ]
    return SimReport(
        study="power", design=design, cells=tuple(cells),
        replications=design.replications, excluded=excluded,
        wall_clock=time.perf_counter() - start,
    )


# ------------------------------------------------------------------ #
#  remainder-decay diagnostic
# ------------------------------------------------------------------ #

def bahadur_design(n: int, replications: int = 50, base_seed: int = 0) -> SimDesign:
    """Design with fully closed-form truth for the remainder diagnostic.

    Independent covariates make G(z) = E[X|Z=z] = 1/2 exactly, so the
    population quantities have one-line eigenbasis expansions.
    """
    return SimDesign(
        model=MODEL_CASE_I, n=n, theta0=(2.0,), g0="sin-2pi",
        x_design=X_INDEPENDENT, scale=1.0, replications=replications,
        base_seed=base_seed, lam_policy=LAM_RATE,
    )


def bahadur_truth(design: SimDesign, system) -> fitter.BahadurTruth:
    if design.model != MODEL_CASE_I or design.g0 != "sin-2pi" \
            or design.x_design != X_INDEPENDENT or design.p != 1:
        raise UnsupportedError("closed-form truth only for the bahadur design")
    nb = system.n_basis
    g_coef = np.zeros(nb)
    g_coef[1] = 1.0 / math.sqrt(2.0)  # sin(2 pi z) = h_1 / sqrt(2)
    gbar_coef = np.zeros((1, nb))
    gbar_coef[0, 0] = 0.5  # G(z) = 1/2 = 0.5 h_0
    return fitter.BahadurTruth(
        theta=np.asarray(design.theta0),
        g_coef=g_coef,
        gbar_coef=gbar_coef,
        omega=design_omega(design),
    )


def run_bahadur_study(
    ns: Sequence[int] = (100, 400, 1600),
    replications: int = 50,
    base_seed: int = 0,
    threads: int | None = None,
) -> dict[int, np.ndarray]:
    """Remainder norms of the linearization, per sample size.

    Returns {n: vector of norms over replications}; the medians should
    shrink as n grows with lam on the n^(-2m/(2m+1)) rate.
    """
    out: dict[int, np.ndarray] = {}
    for n in ns:
        design = bahadur_design(n, replications=replications, base_seed=base_seed)
        system = eigensystem_for(design)
        truth = bahadur_truth(design, system)
        fam = design.family

        def worker(rep):
            data = generate(design, rep)
            lam = _resolve_lam(design, data, fam, system)
            fit = fitter.fit(data, fam, system, lam)
            return fitter.bahadur_diagnostic(fit, data, truth)

        payloads, _ = _run_replications(design, worker, threads)
        out[n] = np.array([payloads[r] for r in sorted(payloads)])
    return out
