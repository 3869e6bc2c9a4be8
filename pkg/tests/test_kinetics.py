import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from arcfit.errors import DomainError
from arcfit.kinetics import (
    BOLTZMANN_J_PER_K,
    ModelState,
    StageKinetics,
    ThermalModel,
    celsius_to_kelvin,
    concentration_shape,
    enthalpy_from_eta,
    rate_coefficient,
    stage_heat_rate,
    stage_rhs,
    temperature_rhs,
)

# Extended-precision (50-digit) evaluations of the Arrhenius coefficient,
# frozen as oracles for the reference parameter sets.
K_STAGE1_AT_396_15 = 4.988278608862029e-05
K_STAGE4_AT_494_15 = 1.2446883593478900e-02


class TestRateCoefficient:
    def test_reference_stage1_value(self):
        stage = StageKinetics.first_order(A=3.23e15, E_a=2.495e-19, h=2894.0)
        assert rate_coefficient(stage, 396.15) == pytest.approx(K_STAGE1_AT_396_15, rel=1e-12)

    def test_reference_stage4_value(self):
        stage = StageKinetics.autocatalytic(A=1e8, E_a=1.556e-19, h=0.0, m=0.0, n=3.14, c0=0.04)
        assert rate_coefficient(stage, 494.15) == pytest.approx(K_STAGE4_AT_494_15, rel=1e-12)

    def test_zero_activation_energy_gives_prefactor(self):
        stage = StageKinetics.first_order(A=1.0, E_a=1e-300, h=0.0)
        assert rate_coefficient(stage, 300.0) == pytest.approx(1.0)

    def test_nonpositive_temperature_rejected(self):
        stage = StageKinetics.first_order(A=1.0, E_a=1e-19, h=0.0)
        with pytest.raises(DomainError):
            rate_coefficient(stage, 0.0)
        with pytest.raises(DomainError):
            rate_coefficient(stage, -5.0)

    @given(st.floats(min_value=250.0, max_value=1200.0),
           st.floats(min_value=1.0, max_value=200.0))
    def test_strictly_increasing_in_temperature(self, T, dT):
        stage = StageKinetics.first_order(A=1e12, E_a=2e-19, h=0.0)
        assert rate_coefficient(stage, T + dT) > rate_coefficient(stage, T)

    @given(st.floats(min_value=1e-19, max_value=3.4e-19),
           st.floats(min_value=1e-21, max_value=1e-20))
    def test_strictly_decreasing_in_activation_energy(self, E_a, dE):
        lo = StageKinetics.first_order(A=1e12, E_a=E_a, h=0.0)
        hi = StageKinetics.first_order(A=1e12, E_a=E_a + dE, h=0.0)
        assert rate_coefficient(hi, 450.0) < rate_coefficient(lo, 450.0)


class TestConcentrationShape:
    @pytest.mark.parametrize("c, n, m, expected", [
        (1.0, 1.0, 0.0, 1.0),
        (0.5, 2.0, 1.0, 0.125),
        (0.04, 1.0, 1.0, 0.0384),
        (0.0, 0.0, 0.0, 1.0),   # 0**0 := 1
        (1.0, 2.0, 0.0, 1.0),
        (0.0, 0.0, 2.0, 1.0),
    ])
    def test_values(self, c, n, m, expected):
        assert concentration_shape(c, m=m, n=n) == pytest.approx(expected, rel=1e-15)

    def test_out_of_range_rejected(self):
        with pytest.raises(DomainError):
            concentration_shape(-0.01, m=0.0, n=1.0)
        with pytest.raises(DomainError):
            concentration_shape(1.01, m=0.0, n=1.0)

    @given(st.floats(min_value=0.0, max_value=1.0),
           st.floats(min_value=0.0, max_value=8.0),
           st.floats(min_value=0.0, max_value=8.0))
    def test_bounded_and_nonnegative(self, c, m, n):
        val = concentration_shape(c, m=m, n=n)
        assert 0.0 <= val <= 1.0


class TestStageRhs:
    def test_exhausted_consumption_is_zero(self):
        stage = StageKinetics.first_order(A=1e10, E_a=1e-19, h=100.0)
        assert stage_rhs(stage, c=0.0, T=400.0) == 0.0

    def test_complete_conversion_is_zero(self):
        stage = StageKinetics.autocatalytic(A=1e10, E_a=1e-19, h=100.0, m=1.0, n=1.0, c0=0.5)
        assert stage_rhs(stage, c=1.0, T=400.0) == 0.0

    def test_first_order_sign_and_magnitude(self):
        stage = StageKinetics.first_order(A=1.0, E_a=1e-300, h=0.0)
        assert stage_rhs(stage, c=0.5, T=300.0) == pytest.approx(-0.5)

    def test_conversion_is_positive(self):
        stage = StageKinetics.autocatalytic(A=1.0, E_a=1e-300, h=0.0, m=1.0, n=1.0, c0=0.1)
        assert stage_rhs(stage, c=0.5, T=300.0) > 0


class TestStageHeatRate:
    def test_gate_is_exact_zero_just_below(self):
        gate = 494.15
        stage = StageKinetics.autocatalytic(A=1e8, E_a=1.556e-19, h=18224.0, m=0.0, n=3.14,
                                            c0=0.04, gate_temperature=gate)
        for c in (0.04, 0.5, 1.0):
            assert stage_heat_rate(stage, c=c, T=gate - 0.001) == 0.0
        assert stage_heat_rate(stage, c=0.5, T=gate) > 0.0

    @given(st.floats(min_value=0.0, max_value=1.0),
           st.floats(min_value=1.0, max_value=193.0))
    def test_gate_exact_zero_for_all_temperatures_below(self, c, below):
        gate = 494.15
        stage = StageKinetics.autocatalytic(A=1e8, E_a=1.556e-19, h=18224.0, m=0.0, n=3.14,
                                            c0=0.04, gate_temperature=gate)
        assert stage_heat_rate(stage, c=c, T=gate - below) == 0.0

    def test_zero_enthalpy_gives_zero(self):
        stage = StageKinetics.first_order(A=1e10, E_a=1e-19, h=0.0)
        assert stage_heat_rate(stage, c=0.5, T=400.0) == 0.0

    def test_product_of_enthalpy_and_rate(self):
        # h=2894, |dc/dt| = 1e-4 -> 0.2894 W
        stage = StageKinetics.first_order(A=1e-4, E_a=1e-300, h=2894.0)
        assert stage_heat_rate(stage, c=1.0, T=400.0) == pytest.approx(0.2894)

    def test_heat_rate_nonnegative_for_both_directions(self):
        cons = StageKinetics.first_order(A=1e5, E_a=1e-19, h=10.0)
        conv = StageKinetics.autocatalytic(A=1e5, E_a=1e-19, h=10.0, m=1.0, n=2.0, c0=0.1)
        for c in np.linspace(0, 1, 7):
            assert stage_heat_rate(cons, c=c, T=450.0) >= 0.0
            assert stage_heat_rate(conv, c=c, T=450.0) >= 0.0


class TestTemperatureRhs:
    def test_all_exhausted_gives_zero(self, open_model):
        state = ModelState(c=np.array([0.0, 0.0, 1.0, 1.0]), T=500.0)
        assert temperature_rhs(open_model, state) == 0.0

    def test_single_stage_unit_rate(self):
        stage = StageKinetics.first_order(A=1e-4, E_a=1e-300, h=762000.0)
        model = ThermalModel([stage], heat_capacity=76.2, staging_temperatures=[300.0])
        state = ModelState(c=np.array([1.0]), T=400.0)
        assert temperature_rhs(model, state) == pytest.approx(1.0)

    def test_equals_sum_of_isolated_stage_terms(self, open_model):
        state = ModelState(c=open_model.initial_concentrations(), T=396.15)
        per_stage = [stage_heat_rate(s, c, state.T)
                     for s, c in zip(open_model.stages, state.c)]
        expected = sum(per_stage) / open_model.heat_capacity
        assert temperature_rhs(open_model, state) == pytest.approx(expected, rel=1e-15)
        assert temperature_rhs(open_model, state) > 0


class TestEnthalpyFromEta:
    def test_zero_eta(self):
        assert enthalpy_from_eta(0.0, 76.16, 400.0, 430.0) == 0.0

    def test_unit_case(self):
        assert enthalpy_from_eta(1.0, 1.0, 400.0, 438.0) == pytest.approx(38.0)

    def test_reference_inversion(self):
        # stage 1 of the open-test model: h = 2894 J over a 38 K span implies
        # eta * heat_capacity = 2894 / 38 = 76.157894... J/K
        eta_times_capacity = 2894.0 / 38.0
        assert eta_times_capacity == pytest.approx(76.15789473684211, rel=1e-12)
        assert enthalpy_from_eta(1.0, eta_times_capacity, 396.15, 434.15) == pytest.approx(2894.0)

    def test_invalid_span_rejected(self):
        with pytest.raises(DomainError):
            enthalpy_from_eta(1.0, 76.16, 430.0, 400.0)
        with pytest.raises(DomainError):
            enthalpy_from_eta(-0.1, 76.16, 400.0, 430.0)


class TestValidation:
    def test_stage_invariants(self):
        with pytest.raises(DomainError):
            StageKinetics.first_order(A=-1.0, E_a=1e-19, h=0.0)
        with pytest.raises(DomainError):
            StageKinetics.first_order(A=1.0, E_a=0.0, h=0.0)
        with pytest.raises(DomainError):
            StageKinetics.first_order(A=1.0, E_a=1e-19, h=-5.0)
        with pytest.raises(DomainError):
            StageKinetics.first_order(A=1.0, E_a=1e-19, h=0.0, c0=1.5)
        with pytest.raises(DomainError):
            StageKinetics(A=1.0, E_a=1e-19, h=0.0, m=1.0, n=1.0, c0=0.5,
                          direction="consumption")

    def test_model_staging_must_increase(self):
        stage = StageKinetics.first_order(A=1.0, E_a=1e-19, h=0.0)
        with pytest.raises(DomainError):
            ThermalModel([stage, stage], heat_capacity=10.0,
                         staging_temperatures=[400.0, 390.0])

    def test_gate_only_on_last_stage(self):
        gated = StageKinetics.first_order(A=1.0, E_a=1e-19, h=0.0, gate_temperature=450.0)
        plain = StageKinetics.first_order(A=1.0, E_a=1e-19, h=0.0)
        with pytest.raises(DomainError):
            ThermalModel([gated, plain], heat_capacity=10.0,
                         staging_temperatures=[400.0, 450.0])
        ThermalModel([plain, gated], heat_capacity=10.0,
                     staging_temperatures=[400.0, 450.0])
        with pytest.raises(DomainError):
            ThermalModel([plain, gated], heat_capacity=10.0,
                         staging_temperatures=[400.0, 460.0])

    def test_heat_budget(self):
        cons = StageKinetics.first_order(A=1.0, E_a=1e-19, h=100.0, c0=0.8)
        conv = StageKinetics.autocatalytic(A=1.0, E_a=1e-19, h=100.0, m=1.0, n=1.0, c0=0.04)
        assert cons.heat_budget == pytest.approx(80.0)
        assert conv.heat_budget == pytest.approx(96.0)

    def test_celsius_round_trip(self):
        assert celsius_to_kelvin(123.0) == pytest.approx(396.15)
