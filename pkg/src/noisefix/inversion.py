"""Gradient-based inversion of the sampler.

Fully blind: minimize ||G(z) - y||^2 over the terminal noise z from a
random normal start. Partially blind: the operator family is known but its
parameters are not, so minimize ||H_theta(G(z)) - y||^2 jointly over z and
theta, with the blur kernel living on a softmax simplex.

Losses are unnormalized sums of squares. Solvers run a fixed number of
iterations with Adam by default (plain gradient descent is available
behind the `optimizer` flag) and report the full loss trace; a non-finite
loss aborts with the last finite iterate and a diagnostic flag instead of
raising.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .degrade import (
    DIFFERENTIABLE_KINDS,
    conv2d,
    conv2d_input_adjoint,
    conv2d_kernel_adjoint,
    kernel_from_theta,
    kernel_from_theta_vjp,
    subsample,
    subsample_adjoint,
)
from .errors import ConfigError
from .optim import make_optimizer
from .sampler import SamplerConfig, generate_vjp_flat
from .tensor import Rng, Tensor3

__all__ = [
    "InversionReport",
    "invert_blind",
    "invert_partial",
    "partial_objective",
    "kernel_from_theta",
    "kernel_from_theta_vjp",
    "dump_loss_csv",
]


@dataclass(frozen=True)
class InversionReport:
    """Solver output: the inverted noise, optional operator parameters,
    the per-iteration loss trace (length iterations + 1; the last entry is
    the objective recomputed at the returned noise) and a divergence flag.
    """

    z_tilde: Tensor3
    theta_star: np.ndarray | None
    loss_trace: np.ndarray
    iterations: int
    diverged: bool = False


def dump_loss_csv(path, trace: np.ndarray) -> None:
    """Write the loss trace as (iteration, loss) rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss"])
        for i, value in enumerate(np.asarray(trace)):
            writer.writerow([i, repr(float(value))])


def invert_blind(y: Tensor3, cfg: SamplerConfig, iters: int, lr: float,
                 rng: Rng, optimizer: str = "adam") -> InversionReport:
    """Invert an image to terminal noise by minimizing ||G(z) - y||^2."""
    if iters < 1:
        raise ValueError("at least one iteration required")
    shape = y.shape
    Y = y.data.reshape(1, -1)
    Z = rng.standard_normal(Y.shape)
    opt = make_optimizer(optimizer, [Z.shape], lr)
    trace: list[float] = []
    diverged = False
    for _ in range(iters):
        X, vjp = generate_vjp_flat(cfg, Z)
        r = X - Y
        loss = float((r * r).sum())
        if not np.isfinite(loss):
            diverged = True
            break
        trace.append(loss)
        grad = 2.0 * vjp(r)
        (Z,) = opt.step([Z], [grad])
    if not diverged:
        X, _ = generate_vjp_flat(cfg, Z)
        final = float(((X - Y) ** 2).sum())
        if np.isfinite(final):
            trace.append(final)
        else:
            diverged = True
    return InversionReport(
        z_tilde=Tensor3(Z.reshape(shape)),
        theta_star=None,
        loss_trace=np.array(trace),
        iterations=len(trace) - 1,
        diverged=diverged,
    )


def _partial_forward(cfg: SamplerConfig, Z: np.ndarray, theta: np.ndarray,
                     h_kind: str, factor: int):
    """H_theta(G(z)) plus everything needed for both gradient blocks."""
    shape = cfg.model.shape
    X_flat, vjp = generate_vjp_flat(cfg, Z)
    x_img = X_flat.reshape(shape)
    kernel = kernel_from_theta(theta)
    hx = conv2d(x_img, kernel)
    if h_kind == "downsample":
        hx = subsample(hx, factor)
    return hx, x_img, kernel, vjp


def partial_objective(y: Tensor3, cfg: SamplerConfig, h_kind: str,
                      z: np.ndarray, theta: np.ndarray, factor: int = 2):
    """Joint objective ||H_theta(G(z)) - y||^2 with both gradient blocks.

    Returns (loss, grad_z, grad_theta); z may be flat or image-shaped and
    grad_z comes back with the same shape. Exposed for gradient checking.
    """
    if h_kind not in DIFFERENTIABLE_KINDS:
        raise ConfigError(f"unknown degradation family {h_kind!r}")
    z = np.asarray(z, dtype=np.float64)
    Z = z.reshape(1, -1)
    hx, x_img, kernel, vjp = _partial_forward(cfg, Z, theta, h_kind, factor)
    r = hx - y.data
    loss = float((r * r).sum())
    g_z, g_theta = _partial_gradients(cfg, r, x_img, kernel, theta, vjp,
                                      h_kind, factor)
    return loss, g_z.reshape(z.shape), g_theta


def _partial_gradients(cfg: SamplerConfig, residual: np.ndarray, x_img: np.ndarray,
                       kernel: np.ndarray, theta: np.ndarray, vjp,
                       h_kind: str, factor: int):
    shape = cfg.model.shape
    v = residual
    if h_kind == "downsample":
        v = subsample_adjoint(v, factor, x_img.shape)
    gx = conv2d_input_adjoint(v, kernel, shape)
    g_z = 2.0 * vjp(gx.reshape(1, -1))
    g_kernel = conv2d_kernel_adjoint(x_img, v, kernel.shape[0])
    g_theta = 2.0 * kernel_from_theta_vjp(theta, g_kernel)
    return g_z, g_theta


def invert_partial(y: Tensor3, cfg: SamplerConfig, h_kind: str, iters: int,
                   lr: float, rng: Rng, kernel_size: int = 5, factor: int = 2,
                   optimizer: str = "adam",
                   theta_init: str = "uniform") -> InversionReport:
    """Jointly invert noise and operator parameters for a known family.

    `h_kind` picks the family: `gaussian_blur` and `motion_blur` share the
    generic softmax kernel, `downsample` adds stride-`factor` subsampling.
    theta starts at zeros (a uniform kernel) unless `theta_init="random"`.
    """
    if h_kind not in DIFFERENTIABLE_KINDS:
        raise ConfigError(
            f"unknown degradation family {h_kind!r}; "
            f"expected one of {DIFFERENTIABLE_KINDS}"
        )
    if iters < 1:
        raise ValueError("at least one iteration required")
    if kernel_size % 2 == 0:
        raise ValueError("kernel size must be odd")
    shape = cfg.model.shape
    if shape is None:
        raise ValueError("partial inversion needs a model with a fixed shape")
    Z = rng.split(0).standard_normal((1, int(np.prod(shape))))
    if theta_init == "random":
        theta = rng.split(1).standard_normal(kernel_size * kernel_size)
    elif theta_init == "uniform":
        theta = np.zeros(kernel_size * kernel_size)
    else:
        raise ConfigError(f"unknown theta_init {theta_init!r}")
    Y = y.data
    opt = make_optimizer(optimizer, [Z.shape, theta.shape], lr)
    trace: list[float] = []
    diverged = False
    for _ in range(iters):
        hx, x_img, kernel, vjp = _partial_forward(cfg, Z, theta, h_kind, factor)
        if hx.shape != Y.shape:
            raise ValueError(
                f"operator output {hx.shape} does not match target {Y.shape}"
            )
        r = hx - Y
        loss = float((r * r).sum())
        if not np.isfinite(loss):
            diverged = True
            break
        trace.append(loss)
        g_z, g_theta = _partial_gradients(
            cfg, r, x_img, kernel, theta, vjp, h_kind, factor
        )
        Z, theta = opt.step([Z, theta], [g_z, g_theta])
    if not diverged:
        hx, _, _, _ = _partial_forward(cfg, Z, theta, h_kind, factor)
        final = float(((hx - Y) ** 2).sum())
        if np.isfinite(final):
            trace.append(final)
        else:
            diverged = True
    return InversionReport(
        z_tilde=Tensor3(Z.reshape(shape)),
        theta_star=theta,
        loss_trace=np.array(trace),
        iterations=len(trace) - 1,
        diverged=diverged,
    )
