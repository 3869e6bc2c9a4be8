"""ARC dataset ingestion, heat-rate estimation, staging, and synthetic data.

The on-disk format is a two-column CSV whose header names carry unit suffixes
(``t_s`` or ``t_min``; ``T_C`` or ``T_K``); lines starting with ``#`` are
comments, and ``# key: value`` comments carry dataset metadata.  Everything is
normalized to seconds and kelvin on load.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError, DomainError, ParseError
from .integrate import IntegratorConfig, simulate_adiabatic_arc
from .kinetics import CELSIUS_OFFSET, ThermalModel

# Heating rates are floored here (K/s) before any log10, so the loss stays
# finite through the calorimeter's quiescent periods.
RATE_FLOOR = 1e-8

_TIME_UNITS = {"s": 1.0, "min": 60.0}
_TEMPERATURE_UNITS = ("C", "K")


@dataclass(frozen=True)
class ArcDataset:
    """Time/temperature samples from one ARC run, plus the derived heat rate."""

    t: np.ndarray
    T: np.ndarray
    rate: Optional[np.ndarray] = None
    label: str = ""
    heat_capacity_hint: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float))
        object.__setattr__(self, "T", np.asarray(self.T, dtype=float))
        if self.rate is not None:
            object.__setattr__(self, "rate", np.asarray(self.rate, dtype=float))
        if self.t.ndim != 1 or self.t.shape != self.T.shape:
            raise DataError("time and temperature series must be 1-D and equally long")
        if self.n_samples == 0:
            raise DataError("dataset has no samples")
        if not (np.diff(self.t) > 0).all():
            raise DataError("sample times must be strictly increasing")
        if (self.T < 0).any():
            raise DataError("temperatures must be non-negative kelvin")
        if self.rate is not None and self.rate.shape != self.t.shape:
            raise DataError("rate series must align with the samples")

    @property
    def n_samples(self) -> int:
        return self.t.size

    @property
    def temperature_envelope(self) -> np.ndarray:
        """Running maximum of T: the monotone envelope used for staging."""
        return np.maximum.accumulate(self.T)

    def window(self, min_temperature=None, max_temperature=None) -> "ArcDataset":
        """Contiguous sub-dataset whose envelope lies in the given span."""
        env = self.temperature_envelope
        start = 0
        if min_temperature is not None:
            start = int(np.searchsorted(env, min_temperature, side="left"))
        stop = self.n_samples
        if max_temperature is not None:
            stop = int(np.searchsorted(env, max_temperature, side="right"))
        if stop - start < 1:
            raise DataError(
                f"temperature window [{min_temperature}, {max_temperature}] contains no samples")
        return replace(
            self,
            t=self.t[start:stop],
            T=self.T[start:stop],
            rate=None if self.rate is None else self.rate[start:stop],
        )


@dataclass(frozen=True)
class StagingConfig:
    """Stage-partition temperatures: T_start plus the N-1 inner boundaries, K."""

    T_start: float
    boundaries: tuple[float, ...]

    def __init__(self, T_start: float, boundaries: Sequence[float]):
        object.__setattr__(self, "T_start", float(T_start))
        object.__setattr__(self, "boundaries", tuple(float(b) for b in boundaries))
        seq = (self.T_start,) + self.boundaries
        if len(seq) > 1 and not (np.diff(seq) > 0).all():
            raise DomainError("staging temperatures must be strictly increasing")

    @classmethod
    def from_celsius(cls, T_start: float, boundaries: Sequence[float]) -> "StagingConfig":
        return cls(T_start + CELSIUS_OFFSET, [b + CELSIUS_OFFSET for b in boundaries])

    @property
    def n_stages(self) -> int:
        return len(self.boundaries) + 1

    def stage_span(self, stage_index: int, data_max: Optional[float] = None):
        """[lower, upper) temperature span of a 1-based stage index."""
        if not 1 <= stage_index <= self.n_stages:
            raise DomainError(f"stage index {stage_index} outside 1..{self.n_stages}")
        seq = (self.T_start,) + self.boundaries
        lower = seq[stage_index - 1]
        upper = seq[stage_index] if stage_index < self.n_stages else (
            data_max if data_max is not None else np.inf)
        return lower, upper

    def all_temperatures(self) -> tuple[float, ...]:
        return (self.T_start,) + self.boundaries


def _parse_header(cells, time_unit, temperature_unit, line_no):
    if len(cells) < 2:
        raise ParseError("header must name a time and a temperature column", line=line_no)
    t_name, T_name = cells[0].strip(), cells[1].strip()
    if time_unit is None:
        if "_" not in t_name or t_name.rsplit("_", 1)[1] not in _TIME_UNITS:
            raise ParseError(
                f"time column {t_name!r} does not declare a unit (t_s or t_min)", line=line_no)
        time_unit = t_name.rsplit("_", 1)[1]
    if temperature_unit is None:
        if "_" not in T_name or T_name.rsplit("_", 1)[1] not in _TEMPERATURE_UNITS:
            raise ParseError(
                f"temperature column {T_name!r} does not declare a unit (T_C or T_K)",
                line=line_no)
        temperature_unit = T_name.rsplit("_", 1)[1]
    if time_unit not in _TIME_UNITS:
        raise ConfigError(f"unknown time unit {time_unit!r}")
    if temperature_unit not in _TEMPERATURE_UNITS:
        raise ConfigError(f"unknown temperature unit {temperature_unit!r}")
    return time_unit, temperature_unit


def load_arc_csv(path, time_unit: Optional[str] = None,
                 temperature_unit: Optional[str] = None) -> ArcDataset:
    """Load an ARC CSV, normalizing to seconds and kelvin.

    Units come from the header suffixes unless overridden by the arguments.
    Duplicate timestamps are dropped (first occurrence wins); any remaining
    non-monotonic time is a data error.
    """
    label = ""
    heat_capacity_hint = None
    header_seen = False
    ts, Ts = [], []
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if ":" in body:
                    key, _, value = body.partition(":")
                    key, value = key.strip(), value.strip()
                    if key == "label":
                        label = value
                    elif key == "heat_capacity_J_per_K":
                        try:
                            heat_capacity_hint = float(value)
                        except ValueError:
                            raise ParseError(f"bad heat capacity {value!r}", line=line_no)
                continue
            cells = line.split(",")
            if not header_seen:
                time_unit, temperature_unit = _parse_header(
                    cells, time_unit, temperature_unit, line_no)
                header_seen = True
                continue
            if len(cells) < 2:
                raise ParseError("expected two comma-separated values", line=line_no)
            try:
                ts.append(float(cells[0]))
                Ts.append(float(cells[1]))
            except ValueError:
                raise ParseError(f"could not parse row {line!r}", line=line_no)
    if not header_seen:
        raise ParseError(f"{path}: no header row found")
    if not ts:
        raise DataError(f"{path}: no data rows")

    t = np.asarray(ts) * _TIME_UNITS[time_unit]
    T = np.asarray(Ts) + (CELSIUS_OFFSET if temperature_unit == "C" else 0.0)
    keep = np.concatenate([[True], np.diff(t) != 0.0])
    t, T = t[keep], T[keep]
    if (np.diff(t) <= 0).any():
        raise DataError(f"{path}: time is not strictly increasing after dropping duplicates")
    if not label:
        from pathlib import Path
        label = Path(path).stem
    return ArcDataset(t=t, T=T, label=label, heat_capacity_hint=heat_capacity_hint)


def write_arc_csv(dataset: ArcDataset, path) -> None:
    """Write the normalized two-column form; reloading reproduces the dataset."""
    with open(path, "w") as fh:
        if dataset.label:
            fh.write(f"# label: {dataset.label}\n")
        if dataset.heat_capacity_hint is not None:
            fh.write(f"# heat_capacity_J_per_K: {dataset.heat_capacity_hint!r}\n")
        fh.write("t_s,T_K\n")
        for t, T in zip(dataset.t, dataset.T):
            fh.write(f"{float(t)!r},{float(T)!r}\n")


def estimate_heat_rate(dataset: ArcDataset, window: int = 5) -> ArcDataset:
    """Fill the heat-rate series by centered local linear regression of T on t.

    The window is clipped one-sidedly at the ends.  Slopes are floored at
    RATE_FLOOR; the estimator is exact on affine T(t) for any window.
    """
    if window < 3 or window % 2 == 0:
        raise ConfigError(f"window must be an odd count of at least 3, got {window}")
    n = dataset.n_samples
    if window > n:
        raise ConfigError(f"window {window} exceeds the dataset length {n}")
    half = window // 2
    t, T = dataset.t, dataset.T
    rate = np.empty(n)
    for j in range(n):
        lo = max(0, j - half)
        hi = min(n, j + half + 1)
        tw = t[lo:hi] - t[lo:hi].mean()
        Tw = T[lo:hi] - T[lo:hi].mean()
        rate[j] = float(tw @ Tw) / float(tw @ tw)
    rate = np.maximum(rate, RATE_FLOOR)
    return replace(dataset, rate=rate)


def stage_mask(dataset: ArcDataset, staging: StagingConfig, stage_index: int) -> range:
    """Contiguous index range of one stage's samples.

    Stage i covers envelope temperatures in [T_{i-1}, T_i); the last stage is
    closed above.  The running-maximum envelope keeps the range contiguous on
    noisy data.
    """
    lower, upper = staging.stage_span(stage_index)
    env = dataset.temperature_envelope
    start = int(np.searchsorted(env, lower, side="left"))
    if stage_index < staging.n_stages:
        stop = int(np.searchsorted(env, upper, side="left"))
    else:
        stop = dataset.n_samples
    if stop <= start:
        raise DataError(f"stage {stage_index} has no samples in "
                        f"[{lower:.2f} K, {upper:.2f} K)")
    return range(start, stop)


def generate_synthetic(model: ThermalModel, T_start: Optional[float] = None,
                       sample_interval: float = 10.0, noise: float = 0.0,
                       seed: int = 0, t_end: Optional[float] = None,
                       cfg: Optional[IntegratorConfig] = None,
                       label: str = "synthetic") -> ArcDataset:
    """Simulate an adiabatic ARC run and sample it onto a uniform grid.

    With ``noise == 0`` the rate series is the simulator's exact dT/dt
    (floored); with noise, temperature increments are scaled by
    ``1 + noise * N(0, 1)`` draws and the rate is re-estimated from the noisy
    temperatures.  Without ``t_end`` the run stops once the heat still
    available at the current temperature can raise it by less than 0.02 K.
    """
    if noise < 0:
        raise ConfigError(f"noise must be non-negative, got {noise}")
    if not sample_interval > 0:
        raise ConfigError(f"sample interval must be positive, got {sample_interval}")
    if T_start is None:
        T_start = model.T_start

    terminate = None
    horizon = t_end
    if t_end is None:
        horizon = 1e9
        budgets = np.array([s.h for s in model.stages])
        bounds = np.array([0.0 if s.sign < 0 else 1.0 for s in model.stages])
        gates = np.array([s.gate_temperature if s.gate_temperature is not None else -np.inf
                          for s in model.stages])

        def terminate(t, c, T):
            active = T >= gates
            available = np.sum(budgets * np.abs(bounds - c) * active)
            return available < 0.02 * model.heat_capacity

    sim = simulate_adiabatic_arc(model, T_start, horizon, cfg, terminate=terminate)
    times = np.arange(0.0, sim.t[-1] + 1e-9, sample_interval)
    times = times[times <= sim.t[-1]]
    sampled = sim.resample(times)

    T = sampled.T.copy()
    if noise > 0:
        rng = np.random.default_rng(seed)
        increments = np.diff(T) * (1.0 + noise * rng.standard_normal(len(T) - 1))
        T = np.concatenate([[T[0]], T[0] + np.cumsum(increments)])
        dataset = ArcDataset(t=times, T=T, label=label,
                             heat_capacity_hint=model.heat_capacity)
        return estimate_heat_rate(dataset, window=5)
    rate = np.maximum(sampled.dTdt, RATE_FLOOR)
    return ArcDataset(t=times, T=T, rate=rate, label=label,
                      heat_capacity_hint=model.heat_capacity)
