"""Shared fixtures: reference four-stage models for a vented and a sealed ARC test."""

import numpy as np
import pytest

from arcfit.kinetics import (
    CELSIUS_OFFSET,
    StageKinetics,
    ThermalModel,
)

HEAT_CAPACITY = 76.16  # J/K, lumped m_cell * c_p of the reference cell

OPEN_STAGING_C = (123.0, 161.0, 191.0, 221.0)
CLOSED_STAGING_C = (123.0, 151.0, 201.0, 221.0)


def make_open_model(heat_capacity=HEAT_CAPACITY):
    """Four-stage model fitted to the vented (open holder) ARC test."""
    staging = tuple(t + CELSIUS_OFFSET for t in OPEN_STAGING_C)
    gate = staging[-1]
    stages = (
        StageKinetics.first_order(A=3.23e15, E_a=2.495e-19, h=2894.0),
        StageKinetics.first_order(A=3.11e21, E_a=3.55e-19, h=2285.0),
        StageKinetics.autocatalytic(A=2.59e24, E_a=3.50e-19, h=1345.0, m=3.00, n=3.14, c0=0.04),
        StageKinetics.autocatalytic(A=1.00e8, E_a=1.56e-19, h=18224.0, m=0.0, n=3.14, c0=0.04,
                                    gate_temperature=gate),
    )
    return ThermalModel(stages, heat_capacity, staging)


def make_closed_model(heat_capacity=HEAT_CAPACITY):
    """Four-stage model fitted to the sealed-canister ARC test."""
    staging = tuple(t + CELSIUS_OFFSET for t in CLOSED_STAGING_C)
    gate = staging[-1]
    stages = (
        StageKinetics.first_order(A=1.261e17, E_a=2.697e-19, h=2133.0),
        StageKinetics.first_order(A=3.96e21, E_a=3.525e-19, h=3809.0),
        StageKinetics.autocatalytic(A=1.00e25, E_a=3.500e-19, h=1448.0, m=3.40, n=4.23, c0=0.04),
        StageKinetics.autocatalytic(A=1.00e8, E_a=1.556e-19, h=43994.0, m=0.0, n=6.56, c0=0.04,
                                    gate_temperature=gate),
    )
    return ThermalModel(stages, heat_capacity, staging)


@pytest.fixture(scope="session")
def open_model():
    return make_open_model()


@pytest.fixture(scope="session")
def closed_model():
    return make_closed_model()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
