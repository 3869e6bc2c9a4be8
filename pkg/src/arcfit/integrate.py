"""Adaptive implicit integration of the coupled (c_1..c_N, T) runaway system.

The stepper is TR-BDF2 (L-stable, one-step, embedded third-order error
estimate) with a damped Newton solve on the analytic Jacobian and a PI step
controller.  The system is stiff after heat spikes: exhausted stages keep huge
Jacobian eigenvalues even though nothing is happening, so an explicit method
would crawl forever.

Discontinuities are handled by event splitting: a step that carries the
temperature across a heat-gate threshold, or a concentration across its
absorbing boundary (0 for consumption, 1 for conversion), is redone so that it
lands on the crossing; the gate indicator or frozen-stage mask then flips
between steps, never inside one.  Per-stage delivered heat is bookkept exactly
from concentration increments, so gated stages show bitwise-zero heat below
their gate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, DomainError, IntegrationError
from .kinetics import (
    BOLTZMANN_J_PER_K,
    CELSIUS_OFFSET,
    CONSUMPTION,
    ModelState,
    ThermalModel,
)

# Detection rule for thermal runaway: first crossing of 180 degC.
TR_THRESHOLD_K = 180.0 + CELSIUS_OFFSET

# TR-BDF2 constants (gamma = 2 - sqrt(2)).
_GAMMA = 2.0 - math.sqrt(2.0)
_D = _GAMMA / 2.0                      # diagonal coefficient of both implicit solves
_W = math.sqrt(2.0) / 4.0              # second-order weights: (w, w, d)
_BHAT2 = (1.0 / 6.0) / (_GAMMA * (1.0 - _GAMMA))
_BHAT3 = 0.5 - _GAMMA * _BHAT2
_BHAT1 = 1.0 - _BHAT2 - _BHAT3
_ERR_W = (_W - _BHAT1, _W - _BHAT2, _D - _BHAT3)
_BDF_C1 = 1.0 / (_GAMMA * (2.0 - _GAMMA))
_BDF_C0 = (1.0 - _GAMMA) ** 2 / (_GAMMA * (2.0 - _GAMMA))

_MAX_EVENTS = 1000


@dataclass(frozen=True)
class IntegratorConfig:
    """Tolerances and controls of the adaptive stepper."""

    rel_tol: float = 1e-6
    abs_tol_c: float = 1e-9
    abs_tol_T: float = 1e-6
    max_step: float = 30.0
    min_step: float = 1e-10
    newton_max_iters: int = 10
    newton_tol: float = 0.01

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol_c", "abs_tol_T", "max_step", "min_step", "newton_tol"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        if self.min_step > self.max_step:
            raise DomainError("min_step must not exceed max_step")
        if self.newton_max_iters < 1:
            raise DomainError("newton_max_iters must be at least 1")


@dataclass(frozen=True)
class Environment:
    """Thermal surroundings: adiabatic, or an oven with lumped convection h*A."""

    kind: str
    oven_temperature: Optional[float] = None
    conv_coefficient_area: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("adiabatic", "oven"):
            raise ConfigError(f"environment kind must be 'adiabatic' or 'oven', got {self.kind!r}")
        if self.kind == "oven":
            if self.oven_temperature is None or not self.oven_temperature > 0:
                raise ConfigError("oven environments need a positive oven_temperature")
            if self.conv_coefficient_area is None or not self.conv_coefficient_area > 0:
                raise ConfigError("oven environments need a positive conv_coefficient_area")

    @classmethod
    def adiabatic(cls) -> "Environment":
        return cls(kind="adiabatic")

    @classmethod
    def oven(cls, oven_temperature: float, conv_coefficient_area: float) -> "Environment":
        return cls(kind="oven", oven_temperature=oven_temperature,
                   conv_coefficient_area=conv_coefficient_area)


@dataclass
class SimulationResult:
    """Trajectory samples plus runaway diagnostics.

    ``stage_heat[j, i]`` is the heat delivered by stage i up to time ``t[j]``
    (gated stages deliver nothing while closed).  ``tr_time`` is the first
    crossing of 180 degC of the underlying trajectory, or None.
    """

    t: np.ndarray
    T: np.ndarray
    dTdt: np.ndarray
    c: np.ndarray
    stage_heat: np.ndarray
    tr_time: Optional[float]
    peak_temperature: float
    dcdt: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if len(self.t) and not (np.diff(self.t) > 0).all():
            raise DomainError("sample times must be strictly increasing")

    @property
    def n_samples(self) -> int:
        return len(self.t)

    def to_csv(self, path):
        """Write samples as CSV with columns t_s, T_K, dTdt_Ks, c_1..c_N."""
        n_stages = self.c.shape[1]
        header = "t_s,T_K,dTdt_Ks," + ",".join(f"c_{i + 1}" for i in range(n_stages))
        data = np.column_stack([self.t, self.T, self.dTdt, self.c])
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for row in data:
                fh.write(",".join(repr(float(x)) for x in row) + "\n")

    def resample(self, times) -> "SimulationResult":
        """Cubic-Hermite interpolation of the trajectory onto the given times."""
        times = np.asarray(times, dtype=float)
        if len(times) == 0:
            raise DomainError("need at least one output time")
        if not (np.diff(times) > 0).all():
            raise DomainError("output times must be strictly increasing")
        if times[0] < self.t[0] - 1e-12 or times[-1] > self.t[-1] + 1e-12:
            raise DomainError(
                f"output times [{times[0]}, {times[-1]}] fall outside the "
                f"integrated span [{self.t[0]}, {self.t[-1]}]")
        times = np.clip(times, self.t[0], self.t[-1])

        y = np.column_stack([self.c, self.T])
        dy = np.column_stack([self.dcdt, self.dTdt])
        out = _hermite_series(self.t, y, dy, times)
        deriv = _hermite_series_derivative(self.t, y, dy, times)
        c_out = np.clip(out[:, :-1], 0.0, 1.0)
        T_out = out[:, -1]
        heat_out = np.empty((len(times), self.c.shape[1]))
        for i in range(self.c.shape[1]):
            heat_out[:, i] = np.interp(times, self.t, self.stage_heat[:, i])
        return SimulationResult(
            t=times, T=T_out, dTdt=deriv[:, -1], c=c_out, stage_heat=heat_out,
            tr_time=self.tr_time, peak_temperature=float(np.max(T_out)),
            dcdt=deriv[:, :-1])


class _System:
    """Stage-parameter arrays and masked RHS/Jacobian of one model + environment."""

    def __init__(self, model: ThermalModel, env: Environment):
        stages = model.stages
        self.n = len(stages)
        self.A = np.array([s.A for s in stages])
        self.E = np.array([s.E_a for s in stages])
        self.h = np.array([s.h for s in stages])
        self.m = np.array([s.m for s in stages])
        self.nn = np.array([s.n for s in stages])
        self.sign = np.array([s.sign for s in stages])
        self.gated = np.array([s.gate_temperature is not None for s in stages])
        self.gate_T = np.array([s.gate_temperature if s.gate_temperature is not None else np.inf
                                for s in stages])
        self.capacity = model.heat_capacity
        self.env = env
        self.frozen = np.zeros(self.n, dtype=bool)
        self.gate_open = np.zeros(self.n, dtype=bool)

    def set_masks_from_state(self, c, T):
        self.gate_open = self.gated & (T >= self.gate_T)
        lower = (self.sign < 0) & (c <= 0.0)
        upper = (self.sign > 0) & (c >= 1.0)
        self.frozen = lower | upper

    def rates(self, c, T):
        """Per-stage |dc/dt| with frozen stages masked to zero."""
        T_safe = max(T, 1e-3)
        k = self.A * np.exp(-self.E / (BOLTZMANN_J_PER_K * T_safe))
        cc = np.clip(c, 0.0, 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            f = np.where(self.nn == 0.0, 1.0, cc ** self.nn) \
                * np.where(self.m == 0.0, 1.0, (1.0 - cc) ** self.m)
        f = np.where(self.frozen, 0.0, f)
        return f * k

    def rhs(self, y):
        c, T = y[:-1], y[-1]
        r = self.rates(c, T)
        dc = self.sign * r
        q = self.h * r * (~self.gated | self.gate_open)
        dT = float(np.sum(q)) / self.capacity
        if self.env.kind == "oven":
            dT += self.env.conv_coefficient_area * (self.env.oven_temperature - T) / self.capacity
        out = np.empty(self.n + 1)
        out[:-1] = dc
        out[-1] = dT
        return out

    def jacobian(self, y):
        c, T = y[:-1], y[-1]
        T_safe = max(T, 1e-3)
        k = self.A * np.exp(-self.E / (BOLTZMANN_J_PER_K * T_safe))
        cc = np.clip(c, 1e-12, 1.0 - 1e-12)
        f = cc ** self.nn * (1.0 - cc) ** self.m
        df = (self.nn * cc ** (self.nn - 1.0) * (1.0 - cc) ** self.m
              - self.m * cc ** self.nn * (1.0 - cc) ** (self.m - 1.0))
        f = np.where(self.frozen, 0.0, f)
        df = np.where(self.frozen, 0.0, df)
        dk_dT = k * self.E / (BOLTZMANN_J_PER_K * T_safe ** 2)
        heat_on = (~self.gated | self.gate_open).astype(float)

        J = np.zeros((self.n + 1, self.n + 1))
        idx = np.arange(self.n)
        J[idx, idx] = self.sign * k * df
        J[idx, self.n] = self.sign * f * dk_dT
        J[self.n, idx] = self.h * heat_on * k * df / self.capacity
        J[self.n, self.n] = float(np.sum(self.h * heat_on * f * dk_dT)) / self.capacity
        if self.env.kind == "oven":
            J[self.n, self.n] -= self.env.conv_coefficient_area / self.capacity
        return J


def _hermite(t0, y0, f0, t1, y1, f1, t):
    """Cubic Hermite value on [t0, t1] at t (vector y)."""
    h = t1 - t0
    s = (t - t0) / h
    h00 = (1 + 2 * s) * (1 - s) ** 2
    h10 = s * (1 - s) ** 2
    h01 = s ** 2 * (3 - 2 * s)
    h11 = s ** 2 * (s - 1)
    return h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1


def _hermite_deriv(t0, y0, f0, t1, y1, f1, t):
    h = t1 - t0
    s = (t - t0) / h
    d00 = 6 * s * (s - 1) / h
    d10 = (1 - s) * (1 - 3 * s)
    d01 = -6 * s * (s - 1) / h
    d11 = s * (3 * s - 2)
    return d00 * y0 + d10 * f0 + d01 * y1 + d11 * f1


def _hermite_series(t_nodes, y_nodes, f_nodes, times):
    out = np.empty((len(times), y_nodes.shape[1]))
    j = np.clip(np.searchsorted(t_nodes, times, side="right") - 1, 0, len(t_nodes) - 2)
    for q, (tq, jq) in enumerate(zip(times, j)):
        out[q] = _hermite(t_nodes[jq], y_nodes[jq], f_nodes[jq],
                          t_nodes[jq + 1], y_nodes[jq + 1], f_nodes[jq + 1], tq)
    return out


def _hermite_series_derivative(t_nodes, y_nodes, f_nodes, times):
    out = np.empty((len(times), y_nodes.shape[1]))
    j = np.clip(np.searchsorted(t_nodes, times, side="right") - 1, 0, len(t_nodes) - 2)
    for q, (tq, jq) in enumerate(zip(times, j)):
        out[q] = _hermite_deriv(t_nodes[jq], y_nodes[jq], f_nodes[jq],
                                t_nodes[jq + 1], y_nodes[jq + 1], f_nodes[jq + 1], tq)
    return out


def _hermite_root(t0, v0, d0, t1, v1, d1, target):
    """Time in [t0, t1] where the Hermite cubic of a scalar crosses target."""
    lo, hi = t0, t1
    g_lo = v0 - target
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        g_mid = _hermite(t0, v0, d0, t1, v1, d1, mid) - target
        if (g_lo <= 0) == (g_mid <= 0):
            lo, g_lo = mid, g_mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * max(1.0, abs(t1)):
            break
    return 0.5 * (lo + hi)


class _Stepper:
    def __init__(self, system: _System, cfg: IntegratorConfig):
        self.sys = system
        self.cfg = cfg
        n = system.n
        self.scale_abs = np.array([cfg.abs_tol_c] * n + [cfg.abs_tol_T])
        self.err_prev = 1.0

    def _norm(self, v, y):
        scale = self.scale_abs + self.cfg.rel_tol * np.abs(y)
        return float(np.sqrt(np.mean((v / scale) ** 2)))

    def _solve_implicit(self, y_ref, dh, const, guess):
        """Solve z - dh*F(z) = const by damped Newton.  Returns z or None."""
        sys, cfg = self.sys, self.cfg
        z = guess.copy()
        g = z - dh * sys.rhs(z) - const
        g_norm = self._norm(g, y_ref)
        identity = np.eye(len(z))
        for _ in range(cfg.newton_max_iters):
            J = identity - dh * sys.jacobian(z)
            try:
                dz = np.linalg.solve(J, -g)
            except np.linalg.LinAlgError:
                return None
            if not np.isfinite(dz).all():
                return None
            lam = 1.0
            for _ in range(4):
                z_new = z + lam * dz
                g_new = z_new - dh * sys.rhs(z_new) - const
                g_new_norm = self._norm(g_new, y_ref)
                if np.isfinite(g_new_norm) and (g_new_norm < g_norm or g_norm == 0.0):
                    break
                lam *= 0.5
            else:
                return None
            step_norm = self._norm(lam * dz, y_ref)
            z, g, g_norm = z_new, g_new, g_new_norm
            if step_norm < cfg.newton_tol:
                return z
        return None

    def attempt(self, t, y, f, h):
        """One TR-BDF2 step of size h.  Returns (y1, f1, err_norm) or None."""
        sys = self.sys
        dh = _D * h
        # trapezoidal half-step to t + gamma*h
        const_tr = y + dh * f
        z = self._solve_implicit(y, dh, const_tr, y + _GAMMA * h * f)
        if z is None:
            return None
        f_z = sys.rhs(z)
        # BDF2 completion to t + h
        const_bdf = _BDF_C1 * z - _BDF_C0 * y
        y1 = self._solve_implicit(y, dh, const_bdf, z + (1.0 - _GAMMA) * h * f_z)
        if y1 is None:
            return None
        f1 = sys.rhs(y1)
        err_raw = h * (_ERR_W[0] * f + _ERR_W[1] * f_z + _ERR_W[2] * f1)
        # damp the estimate through (I - dh*J) so stiff components do not
        # trigger spurious rejections
        J = np.eye(len(y)) - dh * sys.jacobian(y1)
        try:
            err = np.linalg.solve(J, err_raw)
        except np.linalg.LinAlgError:
            err = err_raw
        return y1, f1, self._norm(err, y1)

    def propose_factor(self, err_norm, rejected):
        if rejected:
            return float(np.clip(0.9 * err_norm ** (-1.0 / 3.0), 0.2, 1.0))
        if err_norm == 0.0:
            return 5.0
        factor = 0.9 * err_norm ** (-0.2333) * self.err_prev ** 0.1333
        return float(np.clip(factor, 0.2, 5.0))


def _initial_step(system, cfg, y0, f0, t0, t_end, scale_abs):
    scale = scale_abs + cfg.rel_tol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    if d1 > 0:
        h0 = 0.01 * max(d0, 1.0) / d1
    else:
        h0 = cfg.max_step
    return float(np.clip(h0, cfg.min_step, min(cfg.max_step, t_end - t0)))


def integrate(model: ThermalModel, env: Environment, state0: ModelState, t_end: float,
              cfg: Optional[IntegratorConfig] = None,
              output_times: Optional[Sequence[float]] = None,
              terminate: Optional[Callable[[float, np.ndarray, float], bool]] = None,
              ) -> SimulationResult:
    """Integrate the coupled system from ``state0`` to ``t_end``.

    For oven environments the temperature equation gains the Newton
    heating/cooling term ``h*A * (T_oven - T) / heat_capacity``.  When
    ``output_times`` is given, the returned samples are cubic-Hermite
    interpolations at exactly those times; otherwise every accepted step is a
    sample.  ``terminate(t, c, T)``, when supplied, stops the run early after
    the first accepted step for which it returns True.

    Raises
    ------
    IntegrationError
        On step-size underflow; the exception carries the trajectory up to the
        last accepted step in its ``partial`` attribute.
    """
    if cfg is None:
        cfg = IntegratorConfig()
    if not isinstance(env, Environment):
        raise ConfigError("env must be an Environment")
    if len(state0.c) != model.n_stages:
        raise DomainError(f"state has {len(state0.c)} concentrations for "
                          f"{model.n_stages} stages")
    if not t_end > state0.t:
        raise DomainError(f"t_end={t_end} must exceed the initial time {state0.t}")

    system = _System(model, env)
    stepper = _Stepper(system, cfg)

    t = float(state0.t)
    y = np.empty(model.n_stages + 1)
    y[:-1] = np.clip(state0.c, 0.0, 1.0)
    y[-1] = state0.T
    system.set_masks_from_state(y[:-1], y[-1])
    f = system.rhs(y)

    ts = [t]
    ys = [y.copy()]
    fs = [f.copy()]
    heat = np.zeros(model.n_stages)
    heats = [heat.copy()]
    tr_time = None
    if y[-1] >= TR_THRESHOLD_K:
        tr_time = t

    h = _initial_step(system, cfg, y, f, t, t_end, stepper.scale_abs)
    n_events = 0
    t_close = 1e-12 * max(1.0, abs(t_end))

    while t < t_end - t_close:
        max_h = cfg.max_step
        if abs(f[-1]) > 1.0:
            # resolve the runaway spike: hard cap while the heating rate is high
            max_h = min(max_h, 1.0)
        h = min(h, max_h, t_end - t)
        attempt = stepper.attempt(t, y, f, h)
        if attempt is None:
            h *= 0.25
            if h < cfg.min_step:
                raise IntegrationError(
                    f"Newton failure at t={t:.6g} with step below min_step",
                    partial=_build_result(ts, ys, fs, heats, tr_time))
            continue
        y1, f1, err_norm = attempt
        if not np.isfinite(err_norm) or err_norm > 1.0:
            err_norm = err_norm if np.isfinite(err_norm) else 1e6
            h *= stepper.propose_factor(err_norm, rejected=True)
            if h < cfg.min_step:
                raise IntegrationError(
                    f"step-size underflow at t={t:.6g} (local error {err_norm:.3g})",
                    partial=_build_result(ts, ys, fs, heats, tr_time))
            continue

        # locate the earliest event inside (t, t+h], if any
        t1 = t + h
        event = _earliest_event(system, t, y, f, t1, y1, f1)
        if event is not None:
            n_events += 1
            if n_events > _MAX_EVENTS:
                raise IntegrationError(
                    "too many gate/boundary events; integration is not advancing",
                    partial=_build_result(ts, ys, fs, heats, tr_time))
            t_ev = event[0]
            if t_ev < t1 - 1e-12 * max(1.0, abs(t1)) and t_ev > t:
                # land the step on the crossing so masks only flip between steps
                redo = stepper.attempt(t, y, f, t_ev - t)
                if redo is not None:
                    y1, f1, _ = redo
                    t1 = t_ev

        # accept; clip before the heat bookkeeping so an overshot absorbing
        # boundary contributes exactly the remaining budget, and pin frozen
        # stages to their boundary so linear-solve roundoff cannot move them
        y1[:-1] = np.clip(y1[:-1], 0.0, 1.0)
        if system.frozen.any():
            y1[:-1][system.frozen] = np.where(system.sign[system.frozen] < 0, 0.0, 1.0)
        if tr_time is None and y[-1] < TR_THRESHOLD_K <= y1[-1]:
            tr_time = _hermite_root(t, y[-1], f[-1], t1, y1[-1], f1[-1], TR_THRESHOLD_K)
        heat_on = ~system.gated | system.gate_open
        heat = heat + system.h * np.abs(y1[:-1] - y[:-1]) * heat_on

        if event is not None:
            _, kind, idx = event
            if kind == "freeze":
                boundary = 0.0 if system.sign[idx] < 0 else 1.0
                delivered_on = heat_on[idx]
                # account the snap-to-boundary remainder before freezing
                if delivered_on:
                    heat[idx] += system.h[idx] * abs(boundary - y1[idx])
                y1[idx] = boundary
                system.frozen[idx] = True
            elif kind == "gate":
                system.gate_open[idx] = ~system.gate_open[idx]
            f1 = system.rhs(y1)

        err_for_controller = max(err_norm, 1e-10)
        t, y, f = t1, y1, f1
        ts.append(t)
        ys.append(y.copy())
        fs.append(f.copy())
        heats.append(heat.copy())
        h = h * stepper.propose_factor(err_for_controller, rejected=False)
        stepper.err_prev = err_for_controller

        if terminate is not None and terminate(t, y[:-1], y[-1]):
            break

    result = _build_result(ts, ys, fs, heats, tr_time)
    if output_times is not None:
        result = result.resample(output_times)
    return result


def _earliest_event(system, t0, y0, f0, t1, y1, f1):
    """(time, kind, stage_index) of the first gate/boundary crossing, or None."""
    best = None
    T0, T1 = y0[-1], y1[-1]
    dT0, dT1 = f0[-1], f1[-1]
    for i in range(system.n):
        if system.gated[i]:
            gate = system.gate_T[i]
            opened = system.gate_open[i]
            crosses_up = (not opened) and T0 < gate <= T1
            crosses_down = opened and T0 >= gate > T1
            if crosses_up or crosses_down:
                t_ev = _hermite_root(t0, T0, dT0, t1, T1, dT1, gate)
                if best is None or t_ev < best[0]:
                    best = (t_ev, "gate", i)
        if system.frozen[i]:
            continue
        boundary = 0.0 if system.sign[i] < 0 else 1.0
        c0, c1 = y0[i], y1[i]
        hit = (c1 <= boundary) if system.sign[i] < 0 else (c1 >= boundary)
        started_off = (c0 > boundary) if system.sign[i] < 0 else (c0 < boundary)
        if hit and started_off:
            t_ev = _hermite_root(t0, c0, f0[i], t1, c1, f1[i], boundary)
            if best is None or t_ev < best[0]:
                best = (t_ev, "freeze", i)
    return best


def _build_result(ts, ys, fs, heats, tr_time):
    Y = np.asarray(ys)
    F = np.asarray(fs)
    return SimulationResult(
        t=np.asarray(ts),
        T=Y[:, -1].copy(),
        dTdt=F[:, -1].copy(),
        c=Y[:, :-1].copy(),
        stage_heat=np.asarray(heats),
        tr_time=tr_time,
        peak_temperature=float(np.max(Y[:, -1])),
        dcdt=F[:, :-1].copy(),
    )


def simulate_adiabatic_arc(model: ThermalModel, T_start: float, t_end: float,
                           cfg: Optional[IntegratorConfig] = None,
                           output_times=None, terminate=None) -> SimulationResult:
    """Adiabatic self-heating from T_start with every stage at its initial concentration."""
    state0 = ModelState(c=model.initial_concentrations(), T=T_start, t=0.0)
    return integrate(model, Environment.adiabatic(), state0, t_end, cfg,
                     output_times=output_times, terminate=terminate)


def simulate_oven_test(model: ThermalModel, T_init: float, oven_temperature: float,
                       conv_coefficient_area: float, t_end: float,
                       cfg: Optional[IntegratorConfig] = None,
                       output_times=None) -> SimulationResult:
    """Cell at T_init placed in a constant-temperature oven with lumped convection."""
    env = Environment.oven(oven_temperature, conv_coefficient_area)
    state0 = ModelState(c=model.initial_concentrations(), T=T_init, t=0.0)
    return integrate(model, env, state0, t_end, cfg, output_times=output_times)
