"""Criterion functions for the three supported model families.

Each family supplies the per-observation criterion ``l(y; a)`` evaluated at a
linear predictor ``a``, its first three derivatives in ``a``, and the Fisher
weight ``-E[l''(Y; a)]``.  All entry points are vectorized over numpy arrays
and overflow-safe for large |a|.

The Gaussian family uses the unit-variance criterion -(y-a)^2/2; the unknown
noise variance is absorbed into the smoothing parameter during fitting and
estimated afterwards by the fitter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ArgumentError

GAUSSIAN = "gaussian"
GAMMA = "gamma"
LOGISTIC = "logistic"


@dataclass(frozen=True)
class Family:
    """A criterion family; construct via gaussian(), gamma(alpha), logistic().

    kind is one of "gaussian", "gamma", "logistic".  For the gamma family the
    known shape parameter is carried in ``shape``; the linear predictor is the
    log rate, so the conditional mean is shape * exp(-a).
    """

    kind: str
    shape: float | None = None

    def __post_init__(self):
        if self.kind not in (GAUSSIAN, GAMMA, LOGISTIC):
            raise ArgumentError(f"unknown family kind {self.kind!r}")
        if self.kind == GAMMA:
            if self.shape is None or not (self.shape > 0):
                raise ArgumentError("gamma family needs a positive shape")
        elif self.shape is not None:
            raise ArgumentError(f"{self.kind} family takes no shape parameter")

    # -- criterion and derivatives ------------------------------------- #

    def value(self, y, a):
        """l(y; a), dropping terms that depend on y alone."""
        y, a = self._broadcast(y, a)
        if self.kind == GAUSSIAN:
            return -0.5 * (y - a) ** 2
        if self.kind == GAMMA:
            return self.shape * a - y * np.exp(a)
        return y * a - np.logaddexp(0.0, a)

    def grad(self, y, a):
        """dl/da; at the true predictor this is the model residual."""
        y, a = self._broadcast(y, a)
        if self.kind == GAUSSIAN:
            return y - a
        if self.kind == GAMMA:
            return self.shape - y * np.exp(a)
        return y - expit(a)

    def hess(self, y, a):
        """d2l/da2, nonpositive everywhere (the criterion is concave)."""
        y, a = self._broadcast(y, a)
        if self.kind == GAUSSIAN:
            return -np.ones_like(a)
        if self.kind == GAMMA:
            return -y * np.exp(a)
        return -expit(a) * expit(-a)

    def third(self, y, a):
        """d3l/da3."""
        y, a = self._broadcast(y, a)
        if self.kind == GAUSSIAN:
            return np.zeros_like(a)
        if self.kind == GAMMA:
            return -y * np.exp(a)
        p = expit(a)
        return -p * expit(-a) * (1.0 - 2.0 * p)

    def fisher_weight(self, a):
        """-E[l''] at predictor a: 1, alpha, or p(1-p) for the logistic."""
        a = np.asarray(a, dtype=float)
        if self.kind == GAUSSIAN:
            return np.ones_like(a)
        if self.kind == GAMMA:
            return np.full_like(a, self.shape)
        return expit(a) * expit(-a)

    def mean(self, a):
        """Conditional mean of the response at predictor a."""
        a = np.asarray(a, dtype=float)
        if self.kind == GAUSSIAN:
            return a.copy()
        if self.kind == GAMMA:
            return self.shape * np.exp(-a)
        return expit(a)

    # -- support ------------------------------------------------------- #

    def validate_response(self, y) -> None:
        """Raise ArgumentError if any response lies outside the support."""
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise ArgumentError("responses must be finite")
        if self.kind == LOGISTIC and not np.all((y == 0.0) | (y == 1.0)):
            raise ArgumentError("logistic responses must be 0 or 1")
        if self.kind == GAMMA and not np.all(y > 0.0):
            raise ArgumentError("gamma responses must be positive")

    @staticmethod
    def _broadcast(y, a):
        y = np.asarray(y, dtype=float)
        a = np.asarray(a, dtype=float)
        return np.broadcast_arrays(y, a)

    def label(self) -> str:
        if self.kind == GAMMA:
            return f"gamma:{self.shape:g}"
        return self.kind


def gaussian() -> Family:
    return Family(GAUSSIAN)


def gamma(shape: float) -> Family:
    return Family(GAMMA, shape=float(shape))


def logistic() -> Family:
    return Family(LOGISTIC)


def parse_family(text: str) -> Family:
    """Parse a CLI family descriptor: gaussian | gamma:<alpha> | logistic."""
    if text == GAUSSIAN:
        return gaussian()
    if text == LOGISTIC:
        return logistic()
    if text.startswith("gamma"):
        _, sep, rest = text.partition(":")
        if not sep or not rest:
            raise ArgumentError("gamma family requires a shape: use gamma:<alpha>")
        try:
            shape = float(rest)
        except ValueError:
            raise ArgumentError(f"invalid gamma shape {rest!r} in {text!r}") from None
        return gamma(shape)
    raise ArgumentError(f"unknown family {text!r}; use gaussian, gamma:<alpha>, or logistic")
