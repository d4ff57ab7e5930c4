"""Shared fixtures: a coarse reference cell and small fitted models."""

import numpy as np
import pytest

from aesibatt.espm import CellModel, CellParameters
from aesibatt.library import ScalingParams, build_theta, enumerate_candidates


@pytest.fixture(scope="session")
def params():
    return CellParameters.reference()


@pytest.fixture(scope="session")
def coarse_params():
    """Faster grids for tests that sweep many steps."""
    return CellParameters.reference(N_r=15, N_x=12)


@pytest.fixture(scope="session")
def cell(params):
    return CellModel(params)


@pytest.fixture(scope="session")
def small_spec():
    """22-term polynomial pool (no extra nonlinearities)."""
    return enumerate_candidates(2, 1, extras=())


@pytest.fixture(scope="session")
def unit_scaling():
    return ScalingParams(mins=(-1.0,) * 6, maxs=(1.0,) * 6)


def planted_problem(spec, seed, n=2000, snr_db=20.0, coeffs=None):
    """Library regression with a known sparse ground truth at a target SNR."""
    names = spec.names
    if coeffs is None:
        coeffs = {"T1(e)": 0.8, "T1(I)": -0.5, "T1(e)*T1(cs_p)": 0.3}
    xi_true = np.zeros(len(names))
    for name, c in coeffs.items():
        xi_true[names.index(name)] = c
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, (n, 6))
    theta = build_theta(X, spec)
    clean = theta @ xi_true
    sigma = np.sqrt(np.mean(clean**2) / 10.0 ** (snr_db / 10.0))
    y = clean + rng.normal(0.0, sigma, n)
    return X, theta, y, xi_true
