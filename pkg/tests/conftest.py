import numpy as np
import pytest

from cryostef.constitutive import ScaledMaterial, calibrate_envelope


@pytest.fixture
def material():
    # reference soil data used throughout the experiments
    return ScaledMaterial(b=1.0, c_u=2.94e-2, c_f=2.21e-2, k_u=1.51e-2, k_f=2.06e-2)


@pytest.fixture
def unit_material():
    # c(u) = u and constant conductivity: the linear test mode
    return ScaledMaterial(b=1.0, c_u=1.0, c_f=1.0, k_u=1.0, k_f=1.0)


@pytest.fixture
def envelope_i():
    return calibrate_envelope(0.7, 0.1, -5.0)


@pytest.fixture
def envelope_ii():
    return calibrate_envelope(1.0, 0.01, -5.0)


@pytest.fixture
def envelope_iii():
    return calibrate_envelope(0.5, 0.75, -5.0, "two-condition")


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
