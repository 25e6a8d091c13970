"""Shared fixtures and deterministic hypothesis settings."""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from splinth import eigensys, family, fitter

settings.register_profile(
    "suite",
    derandomize=True,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def trig_sys():
    """Workhorse periodic system, m=2, unit sigma."""
    return eigensys.build_trig(2, 1.0, 41)


@pytest.fixture(scope="session")
def small_trig():
    return eigensys.build_trig(2, 1.0, 25)


def make_gauss(n, p, seed, noise=0.3, theta=None):
    """Gaussian dataset with a sin(2 pi z) smooth part."""
    rng = np.random.default_rng(seed)
    x = rng.random((n, p)) if p else None
    z = rng.random(n)
    theta = np.arange(1, p + 1, dtype=float) if theta is None else np.asarray(theta)
    y = np.sin(2.0 * np.pi * z) + noise * rng.standard_normal(n)
    if p:
        y = y + x @ theta
    return fitter.Dataset(y=y, X=x, Z=z), theta


@pytest.fixture(scope="session")
def gauss_data():
    """(data, theta0) with n=120, p=2, seeded."""
    return make_gauss(120, 2, seed=42)


@pytest.fixture(scope="session")
def gauss_fit(gauss_data, small_trig):
    data, _ = gauss_data
    return fitter.fit(data, family.gaussian(), small_trig, 3e-4)
