"""Multi-stage Arrhenius reaction kinetics and the lumped thermal model.

Each decomposition stage is a normalized-concentration ODE

    dc/dt = +/- c**n * (1 - c)**m * A * exp(-E_a / (k_B * T))

whose released heat h * |dc/dt| drives a single lumped temperature through
m_cell * c_p * dT/dt = sum of stage heat rates.  Activation energies are in
joules per molecule and pair with the Boltzmann constant; all temperatures
are kelvin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError

BOLTZMANN_J_PER_K = 1.380649e-23
CELSIUS_OFFSET = 273.15

CONSUMPTION = "consumption"
CONVERSION = "conversion"


def celsius_to_kelvin(value):
    """Convert a temperature (scalar or array) from Celsius to kelvin."""
    return np.asarray(value) + CELSIUS_OFFSET if np.ndim(value) else float(value) + CELSIUS_OFFSET


def kelvin_to_celsius(value):
    return np.asarray(value) - CELSIUS_OFFSET if np.ndim(value) else float(value) - CELSIUS_OFFSET


@dataclass(frozen=True)
class StageKinetics:
    """Kinetic and heat parameters of one decomposition stage.

    Parameters
    ----------
    A : float
        Frequency factor, 1/s.  Must be positive.
    E_a : float
        Activation energy, J per molecule (paired with the Boltzmann constant).
    h : float
        Reaction enthalpy, J: the heat budget scale of the stage.
    m, n : float
        Reaction orders of the ``(1-c)**m * c**n`` rate law.  ``m = 0`` gives an
        n-th-order law, ``m > 0`` an autocatalytic one.
    c0 : float
        Initial normalized concentration in [0, 1].
    direction : str
        ``"consumption"``: c decays toward 0 and the full reaction releases
        ``h * c0``.  ``"conversion"``: c grows toward 1 and the full reaction
        releases ``h * (1 - c0)``.  Consumption requires ``m = 0``.
    gate_temperature : float, optional
        If set, the stage contributes zero heat (exactly) while T is below this
        temperature.  The concentration still evolves; only heat is gated.
    """

    A: float
    E_a: float
    h: float
    m: float
    n: float
    c0: float
    direction: str
    gate_temperature: Optional[float] = None

    def __post_init__(self):
        if not self.A > 0:
            raise DomainError(f"frequency factor must be positive, got {self.A}")
        if not self.E_a > 0:
            raise DomainError(f"activation energy must be positive, got {self.E_a}")
        if self.h < 0:
            raise DomainError(f"reaction enthalpy must be non-negative, got {self.h}")
        if self.m < 0 or self.n < 0:
            raise DomainError(f"reaction orders must be non-negative, got m={self.m}, n={self.n}")
        if not 0.0 <= self.c0 <= 1.0:
            raise DomainError(f"initial concentration must lie in [0, 1], got {self.c0}")
        if self.direction not in (CONSUMPTION, CONVERSION):
            raise DomainError(f"direction must be 'consumption' or 'conversion', got {self.direction!r}")
        if self.direction == CONSUMPTION and self.m != 0.0:
            raise DomainError("consumption stages require m = 0 (n-th-order decay form)")
        if self.gate_temperature is not None and not self.gate_temperature > 0:
            raise DomainError("gate temperature must be positive")

    @property
    def sign(self) -> float:
        """Sign of dc/dt: -1 for consumption, +1 for conversion."""
        return -1.0 if self.direction == CONSUMPTION else 1.0

    @property
    def heat_budget(self) -> float:
        """Total heat released by the complete reaction, J."""
        fraction = self.c0 if self.direction == CONSUMPTION else 1.0 - self.c0
        return self.h * fraction

    @classmethod
    def first_order(cls, A, E_a, h, c0=1.0, gate_temperature=None):
        """A first-order decay stage (m=0, n=1, consumption)."""
        return cls(A=A, E_a=E_a, h=h, m=0.0, n=1.0, c0=c0,
                   direction=CONSUMPTION, gate_temperature=gate_temperature)

    @classmethod
    def autocatalytic(cls, A, E_a, h, m, n, c0, gate_temperature=None):
        """A conversion stage with the full c**n * (1-c)**m rate law."""
        return cls(A=A, E_a=E_a, h=h, m=m, n=n, c0=c0,
                   direction=CONVERSION, gate_temperature=gate_temperature)


@dataclass(frozen=True)
class ThermalModel:
    """An ordered set of stages plus the lumped thermal mass.

    ``staging_temperatures`` lists the fitting-window boundaries
    ``(T_start, T_1, ..., T_{N-1})`` in kelvin, strictly increasing; only the
    last stage may carry a heat gate, and the gate must equal ``T_{N-1}``.
    """

    stages: tuple[StageKinetics, ...]
    heat_capacity: float
    staging_temperatures: tuple[float, ...]

    def __init__(self, stages: Sequence[StageKinetics], heat_capacity: float,
                 staging_temperatures: Sequence[float]):
        object.__setattr__(self, "stages", tuple(stages))
        object.__setattr__(self, "heat_capacity", float(heat_capacity))
        object.__setattr__(self, "staging_temperatures", tuple(float(x) for x in staging_temperatures))
        self._validate()

    def _validate(self):
        n = len(self.stages)
        if n < 1:
            raise DomainError("a thermal model needs at least one stage")
        if not self.heat_capacity > 0:
            raise DomainError(f"heat capacity must be positive, got {self.heat_capacity}")
        if len(self.staging_temperatures) != n:
            raise DomainError(
                f"expected {n} staging temperatures (T_start plus {n - 1} boundaries), "
                f"got {len(self.staging_temperatures)}")
        diffs = np.diff(self.staging_temperatures)
        if n > 1 and not (diffs > 0).all():
            raise DomainError("staging temperatures must be strictly increasing")
        for i, stage in enumerate(self.stages):
            if stage.gate_temperature is None:
                continue
            if i != n - 1:
                raise DomainError(f"only the last stage may be gated, found gate on stage {i + 1}")
            if n == 1:
                raise DomainError("a single-stage model cannot carry a heat gate")
            if stage.gate_temperature != self.staging_temperatures[-1]:
                raise DomainError(
                    "the last stage's gate temperature must equal the last staging boundary")

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    @property
    def T_start(self) -> float:
        return self.staging_temperatures[0]

    def initial_concentrations(self) -> np.ndarray:
        return np.array([s.c0 for s in self.stages])

    def total_heat_budget(self) -> float:
        return sum(s.heat_budget for s in self.stages)


@dataclass
class ModelState:
    """Instantaneous state (c_1..c_N, T, t) of a thermal model."""

    c: np.ndarray
    T: float
    t: float = 0.0

    def __post_init__(self):
        self.c = np.atleast_1d(np.asarray(self.c, dtype=float)).copy()
        if ((self.c < 0) | (self.c > 1)).any():
            raise DomainError("concentrations must lie in [0, 1]")
        if not self.T > 0:
            raise DomainError(f"temperature must be positive, got {self.T}")


def rate_coefficient(stage: StageKinetics, T: float) -> float:
    """Arrhenius rate coefficient A * exp(-E_a / (k_B * T)), 1/s.

    Strictly increasing in T and strictly decreasing in E_a.
    """
    if not T > 0:
        raise DomainError(f"temperature must be positive, got {T}")
    return stage.A * math.exp(-stage.E_a / (BOLTZMANN_J_PER_K * T))


def concentration_shape(c: float, m: float, n: float) -> float:
    """The rate-law factor c**n * (1-c)**m, with 0**0 defined as 1."""
    if not 0.0 <= c <= 1.0:
        raise DomainError(f"concentration must lie in [0, 1], got {c}")
    cn = 1.0 if n == 0.0 else c ** n
    cm = 1.0 if m == 0.0 else (1.0 - c) ** m
    return cn * cm


def stage_rhs(stage: StageKinetics, c: float, T: float) -> float:
    """dc/dt of one stage, 1/s: negative for consumption, positive for conversion.

    The end states (c = 0 for consumption, c = 1 for conversion) are absorbing:
    the rate is zero there even when the bare rate law is not (m = 0 conversion),
    so integrated heat never exceeds the stage budget.
    """
    shape = concentration_shape(c, stage.m, stage.n)
    if stage.direction == CONSUMPTION and c <= 0.0:
        shape = 0.0
    elif stage.direction == CONVERSION and c >= 1.0:
        shape = 0.0
    return stage.sign * shape * rate_coefficient(stage, T)


def stage_heat_rate(stage: StageKinetics, c: float, T: float) -> float:
    """Heat release rate h * |dc/dt|, W.  Exactly zero below the gate temperature."""
    if stage.gate_temperature is not None and T < stage.gate_temperature:
        # Validate inputs even when gated so domain errors surface consistently.
        concentration_shape(c, stage.m, stage.n)
        if not T > 0:
            raise DomainError(f"temperature must be positive, got {T}")
        return 0.0
    return stage.h * abs(stage_rhs(stage, c, T))


def temperature_rhs(model: ThermalModel, state: ModelState) -> float:
    """Adiabatic dT/dt: the sum of stage heat rates over the heat capacity, K/s."""
    total = 0.0
    for stage, c in zip(model.stages, state.c):
        total += stage_heat_rate(stage, c, state.T)
    return total / model.heat_capacity


def enthalpy_from_eta(eta: float, heat_capacity: float, T_start: float, T_end: float) -> float:
    """Materialize a stage enthalpy h = eta * heat_capacity * (T_end - T_start), J."""
    if eta < 0:
        raise DomainError(f"eta must be non-negative, got {eta}")
    if not T_end > T_start:
        raise DomainError(f"stage temperature span must be positive, got [{T_start}, {T_end}]")
    return eta * heat_capacity * (T_end - T_start)
