"""Fitting loss: log10 heat-rate and temperature mismatch against ARC data.

Following the layered evaluation scheme, each stage's concentration ODE is
integrated along the dataset's measured temperature series T(t) rather than a
self-consistent simulation: the per-stage heat rates are summed pointwise into
a predicted dT/dt, and the predicted temperature is reconstructed by exact
heat bookkeeping (T0 plus delivered heat over capacity).  This keeps every
candidate evaluation cheap, smooth, and bounded, which is what a swarm of
thousands of particles needs.

Stages with m = 0 have closed-form trajectories given the cumulative rate
integral K(t); autocatalytic stages (m > 0) march interval-by-interval with
L-stable implicit substeps (compiled).  Batched evaluation over particles is
bit-identical to evaluating particles one at a time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numba
import numpy as np

from .data import RATE_FLOOR, ArcDataset, StagingConfig
from .errors import DataError, DomainError
from .integrate import IntegratorConfig
from .kinetics import BOLTZMANN_J_PER_K, StageKinetics, ThermalModel

# Loss assigned when an evaluation produces non-finite numbers.
LOSS_SENTINEL = 1e12

# Implicit-march controls: target concentration change per substep and the
# per-interval substep cap.
_DC_TARGET = 0.02
_MAX_SUBSTEPS = 64

_GAMMA = 2.0 - math.sqrt(2.0)
_D = _GAMMA / 2.0
_BDF_C1 = 1.0 / (_GAMMA * (2.0 - _GAMMA))
_BDF_C0 = (1.0 - _GAMMA) ** 2 / (_GAMMA * (2.0 - _GAMMA))


@dataclass(frozen=True)
class LossWeights:
    """Raw weights of the two loss terms: lambda1 on squared log10-rate error,
    lambda2 on squared temperature error (1/K^2)."""

    lambda1: float
    lambda2: float

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise DomainError("loss weights must be non-negative")
        if self.lambda1 == 0 and self.lambda2 == 0:
            raise DomainError("at least one loss weight must be positive")

    @classmethod
    def default_for(cls, dataset: ArcDataset) -> "LossWeights":
        """Scale-free defaults: both terms normalized by sample count, the
        temperature term additionally by the squared data span."""
        n = dataset.n_samples
        span = float(dataset.T.max() - dataset.T.min())
        span = max(span, 1.0)
        return cls(lambda1=1.0 / n, lambda2=1.0 / (n * span * span))


@dataclass(frozen=True)
class LayerContext:
    """Inputs of one layer's optimization: frozen stages and the restricted data.

    The dataset passed in is windowed to envelope temperatures in
    [T_start, T_n] (the last layer is open-ended above).
    """

    layer_index: int
    fixed_stages: tuple[StageKinetics, ...]
    staging: StagingConfig
    dataset: ArcDataset

    def __init__(self, layer_index: int, fixed_stages: Sequence[StageKinetics],
                 staging: StagingConfig, dataset: ArcDataset):
        if not 1 <= layer_index <= staging.n_stages:
            raise DomainError(f"layer index {layer_index} outside 1..{staging.n_stages}")
        if len(fixed_stages) != layer_index - 1:
            raise DomainError(
                f"layer {layer_index} needs {layer_index - 1} frozen stages, "
                f"got {len(fixed_stages)}")
        if dataset.rate is None:
            raise DataError("dataset needs a heat-rate series before fitting")
        upper = (staging.boundaries[layer_index - 1]
                 if layer_index < staging.n_stages else None)
        restricted = dataset.window(min_temperature=staging.T_start, max_temperature=upper)
        object.__setattr__(self, "layer_index", layer_index)
        object.__setattr__(self, "fixed_stages", tuple(fixed_stages))
        object.__setattr__(self, "staging", staging)
        object.__setattr__(self, "dataset", restricted)


@numba.njit(cache=True)
def _shape(c, m, n):
    cc = min(max(c, 0.0), 1.0)
    f = 1.0
    if n != 0.0:
        f *= cc ** n
    if m != 0.0:
        f *= (1.0 - cc) ** m
    return f


@numba.njit(cache=True)
def _shape_deriv(c, m, n):
    cc = min(max(c, 1e-15), 1.0 - 1e-15)
    df = 0.0
    if n != 0.0:
        df += n * cc ** (n - 1.0) * (1.0 - cc) ** m
    if m != 0.0:
        df -= m * cc ** n * (1.0 - cc) ** (m - 1.0)
    return df


@numba.njit(cache=True)
def _solve_growth(a, b, m, n):
    """Root of z - a*f(z) = b in [0, 1] for the conversion rate law."""
    if b >= 1.0:
        return 1.0
    if b < 0.0:
        b = 0.0
    # growth with f(1) > 0 (m == 0) can push the root past 1: absorb
    if 1.0 - a * _shape(1.0, m, n) - b < 0.0:
        return 1.0
    z = b
    converged = False
    for _ in range(12):
        g = z - a * _shape(z, m, n) - b
        if abs(g) < 1e-14:
            converged = True
            break
        dg = 1.0 - a * _shape_deriv(z, m, n)
        if dg <= 1e-12:
            break
        z_new = z - g / dg
        if z_new < 0.0 or z_new > 1.0:
            break
        if abs(z_new - z) < 1e-13:
            z = z_new
            converged = True
            break
        z = z_new
    if not converged:
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if mid - a * _shape(mid, m, n) - b <= 0.0:
                lo = mid
            else:
                hi = mid
        z = 0.5 * (lo + hi)
    return z


@numba.njit(cache=True)
def _march_autocatalytic(dt, k, m, n, c0):
    """Per-particle conversion trajectories for m > 0 (and continuous in m).

    Each data interval is split into substeps sized to the local concentration
    change; each substep is one L-stable TR-BDF2 scalar step with the rate
    coefficient interpolated linearly in time.
    """
    P, F = k.shape
    out = np.empty((P, F))
    for p in range(P):
        c = c0[p]
        mp = m[p]
        npp = n[p]
        out[p, 0] = c
        for j in range(F - 1):
            if c >= 1.0:
                out[p, j + 1] = 1.0
                continue
            k0 = k[p, j]
            k1 = k[p, j + 1]
            step = dt[j]
            est = _shape(c, mp, npp) * 0.5 * (k0 + k1) * step
            cap = (1.0 - c) * 1.5 + _DC_TARGET
            if est > cap:
                est = cap
            sub = 1 + int(est / _DC_TARGET)
            if sub > _MAX_SUBSTEPS:
                sub = _MAX_SUBSTEPS
            delta = step / sub
            for s in range(sub):
                fr0 = s / sub
                frg = fr0 + _GAMMA / sub
                fr1 = (s + 1.0) / sub
                ka = k0 + (k1 - k0) * fr0
                kg = k0 + (k1 - k0) * frg
                kb = k0 + (k1 - k0) * fr1
                # trapezoidal half-step to the gamma point
                b_tr = c + _D * delta * ka * _shape(c, mp, npp)
                z = _solve_growth(_D * delta * kg, b_tr, mp, npp)
                # BDF2 completion
                b_bdf = _BDF_C1 * z - _BDF_C0 * c
                c = _solve_growth(_D * delta * kb, b_bdf, mp, npp)
                if c >= 1.0:
                    c = 1.0
                    break
            out[p, j + 1] = c
    return out


def _cumulative_rate_integral(A, E, t, T):
    """K[p, j] = integral of A*exp(-E/(kB*T(tau))) dtau by trapezoid."""
    k = A[:, None] * np.exp(-E[:, None] / (BOLTZMANN_J_PER_K * T[None, :]))
    dt = np.diff(t)
    K = np.empty_like(k)
    K[:, 0] = 0.0
    np.cumsum(0.5 * (k[:, 1:] + k[:, :-1]) * dt[None, :], axis=1, out=K[:, 1:])
    return k, K


def _closed_form_m0(K, c0, n, sign):
    """c(t) for dc/dt = sign * c**n * k(t), any n >= 0, via the stable form
    c = c0 * exp(-log1p(u) / (n - 1)) with u = -sign * (n-1) * K * c0**(n-1)."""
    P, F = K.shape
    c0 = np.asarray(c0, dtype=float)
    n = np.asarray(n, dtype=float)
    out = np.empty((P, F))
    for p in range(P):
        if c0[p] <= 0.0:
            if sign[p] > 0 and n[p] == 0.0:
                out[p] = np.minimum(K[p], 1.0)
            else:
                out[p] = 0.0
            continue
        n1 = n[p] - 1.0
        if abs(n1) < 1e-9:
            if sign[p] > 0:
                cp = c0[p] * np.exp(np.minimum(K[p], 709.0))
            else:
                cp = c0[p] * np.exp(-K[p])
        else:
            u = -sign[p] * n1 * K[p] * c0[p] ** n1
            exhausted = u <= -1.0 + 1e-16
            safe_u = np.where(exhausted, 0.0, u)
            expo = -np.log1p(safe_u) / n1
            np.clip(expo, -745.0, 709.0, out=expo)
            cp = c0[p] * np.exp(expo)
            if sign[p] < 0:
                cp = np.where(exhausted, 0.0, cp)
            else:
                cp = np.where(exhausted, 1.0, cp)
        out[p] = np.clip(cp, 0.0, 1.0)
    return out


def _stage_series_batch(t, T, A, E, h, m, n, c0, sign, gate_temperature):
    """(q, w): pointwise heat rate [W] and delivered heat [J] of one stage batch.

    All parameter arrays have shape (P,); every particle in one call must share
    the routing property (m == 0 closed form versus m > 0 march) -- the caller
    splits mixed batches.
    """
    k, K = _cumulative_rate_integral(A, E, t, T)
    if (np.asarray(m) > 0).any():
        dt = np.diff(t)
        c = _march_autocatalytic(dt, k, np.asarray(m, float), np.asarray(n, float),
                                 np.asarray(c0, float))
    else:
        c = _closed_form_m0(K, c0, n, sign)

    cc = np.clip(c, 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        f = np.where(n[:, None] == 0.0, 1.0, cc ** n[:, None]) \
            * np.where(m[:, None] == 0.0, 1.0, (1.0 - cc) ** m[:, None])
        absorbed = np.where(sign[:, None] < 0, cc <= 0.0, cc >= 1.0)
        f = np.where(absorbed, 0.0, f)
        q = h[:, None] * f * k

    increments = h[:, None] * np.abs(np.diff(c, axis=1))
    if gate_temperature is not None:
        q = np.where(T[None, :] >= gate_temperature, q, 0.0)
        increments = np.where(T[None, 1:] >= gate_temperature, increments, 0.0)
    w = np.empty_like(q)
    w[:, 0] = 0.0
    np.cumsum(increments, axis=1, out=w[:, 1:])
    return q, w


def _stage_to_arrays(stage: StageKinetics, P: int = 1):
    ones = np.ones(P)
    return (stage.A * ones, stage.E_a * ones, stage.h * ones, stage.m * ones,
            stage.n * ones, stage.c0 * ones, stage.sign * ones, stage.gate_temperature)


class SeriesEvaluator:
    """Predicted heat-rate/temperature series against one dataset window.

    Frozen prefix stages are evaluated once at construction; candidate stages
    are batched over particles.  Stage heat rates accumulate left-to-right in
    stage order, so a cached prefix is bit-identical to full recomputation.
    """

    def __init__(self, dataset: ArcDataset, heat_capacity: float,
                 prefix_stages: Sequence[StageKinetics] = ()):
        if dataset.rate is None:
            raise DataError("dataset needs a heat-rate series before fitting")
        self.dataset = dataset
        self.capacity = float(heat_capacity)
        self.t = dataset.t
        self.T = dataset.T
        self.log_rate_data = np.log10(np.maximum(dataset.rate, RATE_FLOOR))
        self.q_prefix = np.zeros((1, dataset.n_samples))
        self.w_prefix = np.zeros((1, dataset.n_samples))
        for stage in prefix_stages:
            q, w = _stage_series_batch(self.t, self.T, *_stage_to_arrays(stage))
            self.q_prefix = self.q_prefix + q
            self.w_prefix = self.w_prefix + w

    def candidate_series(self, A, E, h, m, n, c0, sign, gate_temperature):
        """Total (q, w) of prefix plus a batch of candidate stages."""
        A = np.atleast_1d(np.asarray(A, dtype=float))
        E, h, m, n, c0, sign = (np.broadcast_to(np.asarray(x, dtype=float), A.shape).copy()
                                for x in (E, h, m, n, c0, sign))
        q = np.empty((A.size, self.t.size))
        w = np.empty_like(q)
        march = np.asarray(m) > 0.0
        for mask in (march, ~march):
            if mask.any():
                qs, ws = _stage_series_batch(self.t, self.T, A[mask], E[mask], h[mask],
                                             m[mask], n[mask], c0[mask], sign[mask],
                                             gate_temperature)
                q[mask] = qs
                w[mask] = ws
        return self.q_prefix + q, self.w_prefix + w

    def prefix_series(self):
        return self.q_prefix.copy(), self.w_prefix.copy()

    def losses(self, q_total, w_total, weights: LossWeights):
        """Squared-error loss per particle; non-finite evaluations get the sentinel."""
        rate_pred = q_total / self.capacity
        T_pred = self.T[0] + w_total / self.capacity
        log_rate_pred = np.log10(np.maximum(rate_pred, RATE_FLOOR))
        e_rate = log_rate_pred - self.log_rate_data[None, :]
        e_T = T_pred - self.T[None, :]
        loss = (weights.lambda1 * np.sum(e_rate * e_rate, axis=1)
                + weights.lambda2 * np.sum(e_T * e_T, axis=1))
        return np.where(np.isfinite(loss), loss, LOSS_SENTINEL)


def predicted_series(stages: Sequence[StageKinetics], dataset: ArcDataset,
                     heat_capacity: float):
    """(dT/dt, T) predicted along the dataset's measured temperatures."""
    evaluator = SeriesEvaluator(dataset, heat_capacity, prefix_stages=stages[:-1])
    q, w = evaluator.candidate_series(*_stage_to_arrays(stages[-1]))
    return q[0] / heat_capacity, dataset.T[0] + w[0] / heat_capacity


def full_loss(model: ThermalModel, dataset: ArcDataset, weights: LossWeights,
              cfg: Optional[IntegratorConfig] = None) -> float:
    """Loss of a complete model against a dataset.

    ``cfg`` is accepted for interface compatibility; the prescribed-temperature
    evaluation has fixed internal substep controls and does not use it.
    """
    evaluator = SeriesEvaluator(dataset, model.heat_capacity,
                                prefix_stages=model.stages[:-1])
    last = model.stages[-1]
    q, w = evaluator.candidate_series(*_stage_to_arrays(last))
    return float(evaluator.losses(q, w, weights)[0])


def layer_loss(theta: StageKinetics, ctx: LayerContext, heat_capacity: float,
               weights: LossWeights, cfg: Optional[IntegratorConfig] = None) -> float:
    """Loss of one candidate stage on top of the frozen prefix, per the layered
    scheme.  On the last layer the candidate's heat is gated below the last
    staging boundary."""
    if ctx.layer_index == ctx.staging.n_stages and ctx.staging.n_stages > 1:
        gate = ctx.staging.boundaries[-1]
        if theta.gate_temperature != gate:
            theta = replace(theta, gate_temperature=gate)
    evaluator = SeriesEvaluator(ctx.dataset, heat_capacity,
                                prefix_stages=ctx.fixed_stages)
    q, w = evaluator.candidate_series(*_stage_to_arrays(theta))
    return float(evaluator.losses(q, w, weights)[0])
