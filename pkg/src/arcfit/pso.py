"""Bounded particle-swarm optimizer with reflective boundaries.

The swarm minimizes a black-box objective over a box.  Inertia and the
cognitive/social coefficients follow linear iteration schedules (exploration
early, exploitation late).  Random draws come from counter-based Philox
streams keyed by (seed, run, iteration), so results depend only on the
configuration and never on how objective evaluations are executed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .errors import DomainError

# Value assigned to failed or non-finite objective evaluations.
BAD_VALUE = 1e300


@dataclass(frozen=True)
class Bounds:
    """Per-dimension box constraints."""

    lower: np.ndarray
    upper: np.ndarray

    def __init__(self, lower, upper):
        object.__setattr__(self, "lower", np.atleast_1d(np.asarray(lower, dtype=float)))
        object.__setattr__(self, "upper", np.atleast_1d(np.asarray(upper, dtype=float)))
        if self.lower.shape != self.upper.shape:
            raise DomainError("lower and upper bounds must have the same length")
        if not (self.lower < self.upper).all():
            raise DomainError("each lower bound must be strictly below its upper bound")

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple]) -> "Bounds":
        lo, hi = zip(*pairs)
        return cls(lo, hi)

    @property
    def n_dimensions(self) -> int:
        return self.lower.size

    @property
    def span(self) -> np.ndarray:
        return self.upper - self.lower


@dataclass(frozen=True)
class PsoConfig:
    """Swarm size, iteration budget, coefficient schedules, and RNG seed.

    The coefficient schedules interpolate linearly from the ``*_start`` value at
    the first step to the ``*_end`` value at the last.  ``v_max_fraction`` caps
    each velocity component at that fraction of the dimension's span.
    """

    n_particles: int
    n_iterations: int
    w_start: float = 0.9
    w_end: float = 0.4
    c1_start: float = 2.5
    c1_end: float = 0.5
    c2_start: float = 0.5
    c2_end: float = 2.5
    seed: int = 0
    v_max_fraction: float = 0.2

    def __post_init__(self):
        if self.n_particles < 1 or self.n_iterations < 1:
            raise DomainError("particle and iteration counts must be at least 1")
        for name in ("w_start", "w_end", "c1_start", "c1_end", "c2_start", "c2_end"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be non-negative")
        if not 0.0 < self.v_max_fraction <= 1.0:
            raise DomainError("v_max_fraction must lie in (0, 1]")

    def coefficients(self, step_index: int) -> tuple[float, float, float]:
        """(w, c1, c2) for a 1-based step index."""
        if self.n_iterations > 1:
            frac = (step_index - 1) / (self.n_iterations - 1)
        else:
            frac = 0.0
        w = self.w_start + (self.w_end - self.w_start) * frac
        c1 = self.c1_start + (self.c1_end - self.c1_start) * frac
        c2 = self.c2_start + (self.c2_end - self.c2_start) * frac
        return w, c1, c2


@dataclass
class SwarmState:
    """Positions, velocities, and best-so-far bookkeeping of one swarm."""

    positions: np.ndarray
    velocities: np.ndarray
    best_positions: np.ndarray
    best_values: np.ndarray
    global_best_position: np.ndarray
    global_best_value: float
    iteration: int = 0


class PsoResult(NamedTuple):
    position: np.ndarray
    value: float
    history: np.ndarray
    n_evaluations: int


def _stream(seed: int, run_key: int, iteration: int) -> np.random.Generator:
    """Counter-based stream for one (run, iteration) slot.

    Using the iteration index as part of the Philox key gives every iteration
    an independent stream, so draws never depend on evaluation order or
    parallelism.
    """
    key = np.array([np.uint64(seed), np.uint64((run_key << 32) + iteration)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _evaluate(objective: Callable, positions: np.ndarray, vectorized: bool) -> np.ndarray:
    if vectorized:
        try:
            values = np.asarray(objective(positions), dtype=float)
        except Exception:
            values = np.array([_call_scalar(objective, row) for row in positions])
        if values.shape != (positions.shape[0],):
            raise DomainError(
                f"vectorized objective returned shape {values.shape}, "
                f"expected ({positions.shape[0]},)")
    else:
        values = np.array([_call_scalar(objective, row) for row in positions])
    return np.where(np.isfinite(values), values, BAD_VALUE)


def _call_scalar(objective, row):
    try:
        return float(objective(row))
    except Exception:
        return BAD_VALUE


def reflect(position: np.ndarray, velocity: np.ndarray, bounds: Bounds):
    """Mirror out-of-bounds coordinates back into the box, negating velocity.

    A coordinate beyond a bound is reflected about that bound; the matching
    velocity component flips sign once per reflection.  Repeats until every
    coordinate lies inside, so arbitrarily distant points fold back into
    [lower, upper] like a triangle wave.
    """
    x = np.array(position, dtype=float, copy=True)
    v = np.array(velocity, dtype=float, copy=True)
    lo, hi = np.broadcast_to(bounds.lower, x.shape), np.broadcast_to(bounds.upper, x.shape)
    while True:
        over = x > hi
        if over.any():
            x = np.where(over, 2.0 * hi - x, x)
            v = np.where(over, -v, v)
        under = x < lo
        if under.any():
            x = np.where(under, 2.0 * lo - x, x)
            v = np.where(under, -v, v)
        if not ((x > hi) | (x < lo)).any():
            return x, v


def initialize(bounds: Bounds, cfg: PsoConfig, objective: Callable,
               vectorized: bool = False, run_key: int = 0) -> SwarmState:
    """Sample the swarm uniformly over the box and evaluate initial bests.

    Dimensions that deserve log-uniform sampling (such as frequency factors)
    should be handed to the optimizer already log-scaled; uniform sampling in
    that scale is then log-uniform in the original variable.  Velocities start
    at zero.
    """
    rng = _stream(cfg.seed, run_key, 0)
    u = rng.random((cfg.n_particles, bounds.n_dimensions))
    positions = bounds.lower + u * bounds.span
    velocities = np.zeros_like(positions)
    values = _evaluate(objective, positions, vectorized)
    best_idx = int(np.argmin(values))
    return SwarmState(
        positions=positions,
        velocities=velocities,
        best_positions=positions.copy(),
        best_values=values.copy(),
        global_best_position=positions[best_idx].copy(),
        global_best_value=float(values[best_idx]),
        iteration=0,
    )


def step(state: SwarmState, bounds: Bounds, cfg: PsoConfig, objective: Callable,
         vectorized: bool = False, run_key: int = 0) -> SwarmState:
    """Advance the swarm one iteration; the recorded global best never worsens."""
    k = state.iteration + 1
    w, c1, c2 = cfg.coefficients(k)
    rng = _stream(cfg.seed, run_key, k)
    shape = state.positions.shape
    r1 = rng.random(shape)
    r2 = rng.random(shape)

    velocities = (w * state.velocities
                  + c1 * r1 * (state.best_positions - state.positions)
                  + c2 * r2 * (state.global_best_position - state.positions))
    v_max = cfg.v_max_fraction * bounds.span
    velocities = np.clip(velocities, -v_max, v_max)
    positions = state.positions + velocities
    positions, velocities = reflect(positions, velocities, bounds)

    values = _evaluate(objective, positions, vectorized)
    improved = values < state.best_values
    best_positions = np.where(improved[:, None], positions, state.best_positions)
    best_values = np.where(improved, values, state.best_values)
    best_idx = int(np.argmin(best_values))
    if best_values[best_idx] < state.global_best_value:
        global_best_position = best_positions[best_idx].copy()
        global_best_value = float(best_values[best_idx])
    else:
        global_best_position = state.global_best_position
        global_best_value = state.global_best_value

    return SwarmState(
        positions=positions,
        velocities=velocities,
        best_positions=best_positions,
        best_values=best_values,
        global_best_position=global_best_position,
        global_best_value=global_best_value,
        iteration=k,
    )


def optimize(bounds: Bounds, cfg: PsoConfig, objective: Callable,
             vectorized: bool = False, run_key: int = 0,
             callback: Optional[Callable[[SwarmState], None]] = None) -> PsoResult:
    """Run initialize + n_iterations steps.

    Returns the best position and value plus the global-best history, which has
    length ``n_iterations + 1`` and is non-increasing.
    """
    state = initialize(bounds, cfg, objective, vectorized, run_key)
    history = np.empty(cfg.n_iterations + 1)
    history[0] = state.global_best_value
    if callback is not None:
        callback(state)
    for k in range(1, cfg.n_iterations + 1):
        state = step(state, bounds, cfg, objective, vectorized, run_key)
        history[k] = state.global_best_value
        if callback is not None:
            callback(state)
    n_evaluations = cfg.n_particles * (cfg.n_iterations + 1)
    return PsoResult(state.global_best_position.copy(), state.global_best_value,
                     history, n_evaluations)
