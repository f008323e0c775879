"""Deterministic noise-to-image sampler and its exact adjoint.

One reverse step from t to tn < t is

    x0_hat = (z_t - sqrt(1 - ab_t) * eps(z_t, t)) / sqrt(ab_t)
    z_tn   = sqrt(ab_tn) * x0_hat + sqrt(1 - ab_tn) * eps(z_t, t)

iterated down a step grid T, T - dt, ... and finishing on step 0, where
alpha_bar is defined as exactly 1 so the final state is x0_hat itself.
Whenever dt does not divide T the last jump is shortened to land on 0.

Everything here is a pure function of its inputs: identical calls produce
bit-identical outputs, and independent images can run in parallel.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .priors import NoiseSchedule, ScoreModel
from .tensor import Tensor3

__all__ = [
    "SamplerConfig",
    "step_grid",
    "generate",
    "generate_many",
    "generate_adjoint",
    "invert_ode",
    "invert_ode_many",
]


@dataclass(frozen=True)
class SamplerConfig:
    """Bundles the noise predictor, its schedule and the step increment."""

    model: ScoreModel
    schedule: NoiseSchedule
    delta_t: int

    def __post_init__(self):
        T = self.schedule.total_steps
        if not 1 <= self.delta_t <= T:
            raise ValueError(f"delta_t must lie in [1, {T}], got {self.delta_t}")
        bound = getattr(self.model, "schedule", None)
        if bound is not None and bound is not self.schedule:
            raise ValueError("model was built against a different schedule")


def step_grid(total_steps: int, delta_t: int) -> list[int]:
    """Visited steps T, T - dt, ... down to <= dt, then 0."""
    grid = list(range(total_steps, 0, -delta_t))
    grid.append(0)
    return grid


def _coefficients(schedule: NoiseSchedule, t: int, tn: int) -> tuple[float, float, float, float]:
    ab_t = schedule.alpha_bar_at(t)
    ab_tn = schedule.alpha_bar_at(tn)
    # z_tn = a * z_t + b * eps(z_t, t)
    a = np.sqrt(ab_tn / ab_t)
    b = np.sqrt(1.0 - ab_tn) - a * np.sqrt(1.0 - ab_t)
    return ab_t, ab_tn, a, b


def _check_finite(Z: np.ndarray, t: int) -> None:
    if not np.isfinite(Z).all():
        raise NumericError(f"non-finite sampler state at step t={t}")


def _run_flat(cfg: SamplerConfig, Z: np.ndarray, keep_states: bool = False):
    """Core recursion on a flat (n, d) batch. Optionally keeps per-step states."""
    grid = step_grid(cfg.schedule.total_steps, cfg.delta_t)
    states: list[np.ndarray] = []
    for t, tn in zip(grid[:-1], grid[1:]):
        if keep_states:
            states.append(Z)
        _, _, a, b = _coefficients(cfg.schedule, t, tn)
        eps = cfg.model._predict_flat(Z, t)
        Z = a * Z + b * eps
        _check_finite(Z, tn)
    return Z, grid, states


def generate(cfg: SamplerConfig, z_start: Tensor3) -> Tensor3:
    """Map terminal noise to a sample; deterministic in (cfg, z_start)."""
    out, _, _ = _run_flat(cfg, z_start.data.reshape(1, -1))
    return Tensor3(out.reshape(z_start.shape))


def generate_many(cfg: SamplerConfig, Z: np.ndarray) -> np.ndarray:
    """Vectorized `generate` over a stack shaped (n, h, w, c) or (n, d)."""
    flat = Z.reshape(Z.shape[0], -1).astype(np.float64)
    out, _, _ = _run_flat(cfg, flat)
    return out.reshape(Z.shape)


def generate_vjp_flat(cfg: SamplerConfig, Z: np.ndarray):
    """Forward pass plus a vector-Jacobian-product closure.

    Returns (output, vjp) where vjp(V) = (dG/dZ)^T V. The closure reuses
    the cached per-step states from this forward pass (at most T/dt
    arrays, per the design of the step grid).
    """
    out, grid, states = _run_flat(cfg, Z, keep_states=True)

    def vjp(V: np.ndarray) -> np.ndarray:
        G = V
        for i in range(len(grid) - 2, -1, -1):
            t, tn = grid[i], grid[i + 1]
            _, _, a, b = _coefficients(cfg.schedule, t, tn)
            G = a * G + b * cfg.model._adjoint_flat(states[i], t, G)
        return G

    return out, vjp


def generate_adjoint(cfg: SamplerConfig, z_start: Tensor3, v: Tensor3) -> Tensor3:
    """(dG/dz)^T v by reverse accumulation through the unrolled steps."""
    if v.shape != z_start.shape:
        raise ValueError("adjoint direction must match the input shape")
    _, vjp = generate_vjp_flat(cfg, z_start.data.reshape(1, -1))
    out = vjp(v.data.reshape(1, -1))
    return Tensor3(out.reshape(z_start.shape))


def _invert_flat(cfg: SamplerConfig, X: np.ndarray) -> np.ndarray:
    grid = step_grid(cfg.schedule.total_steps, cfg.delta_t)[::-1]
    Z = X
    for t, tn in zip(grid[:-1], grid[1:]):
        ab_t = cfg.schedule.alpha_bar_at(t)
        ab_tn = cfg.schedule.alpha_bar_at(tn)
        eps = cfg.model._predict_flat(Z, t)
        x0_hat = (Z - np.sqrt(1.0 - ab_t) * eps) / np.sqrt(ab_t)
        Z = np.sqrt(ab_tn) * x0_hat + np.sqrt(1.0 - ab_tn) * eps
        _check_finite(Z, tn)
    return Z


def invert_ode(cfg: SamplerConfig, x: Tensor3) -> Tensor3:
    """Run the generate recursion upward, recovering a terminal noise map.

    The standard deterministic-sampler inversion: the same update with the
    step roles swapped, using the predictor at the current (lower) step.
    generate(cfg, invert_ode(cfg, x)) approaches x as delta_t shrinks.
    """
    out = _invert_flat(cfg, x.data.reshape(1, -1))
    return Tensor3(out.reshape(x.shape))


def invert_ode_many(cfg: SamplerConfig, X: np.ndarray) -> np.ndarray:
    """Vectorized `invert_ode` over a stack shaped (n, h, w, c) or (n, d)."""
    flat = X.reshape(X.shape[0], -1).astype(np.float64)
    out = _invert_flat(cfg, flat)
    return out.reshape(X.shape)
