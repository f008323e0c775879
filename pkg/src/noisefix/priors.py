"""Noise schedules and pluggable noise predictors.

Two predictor families are provided. `GaussianMixturePrior` is analytic:
for an isotropic Gaussian mixture the diffused marginal at step t is again
a mixture, so the noise prediction eps(x, t) and its input Jacobian have
closed forms, which makes every downstream stage exactly testable.
`MlpScore` is a small learned predictor loaded from a weight file, filling
the slot a trained network would occupy.

Both expose the same contract: `predict(x, t)` returns the noise estimate
with the shape of `x`, and `adjoint(x, t, v)` returns J^T v where
J = d eps / d x. Predictors are immutable and safe for concurrent use.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FileFormatError
from .tensor import Tensor3

__all__ = [
    "NoiseSchedule",
    "linear_schedule",
    "ScoreModel",
    "GaussianMixturePrior",
    "MlpScore",
    "load_mlp",
    "save_mlp",
    "load_gmm_components",
    "save_gmm_components",
    "MLP_MAGIC",
]

MLP_MAGIC = b"I2RM"


@dataclass(frozen=True)
class NoiseSchedule:
    """Diffusion time grid: per-step variances and their running products.

    `beta[i]` is the variance added at step i+1; `alpha_bar[i]` is the
    cumulative product of (1 - beta) up to that step. Step 0 is the clean
    endpoint with alpha_bar defined as exactly 1.
    """

    beta: np.ndarray
    alpha_bar: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if beta.ndim != 1 or beta.shape != ab.shape or beta.size < 2:
            raise ValueError("schedule needs matching 1-D beta/alpha_bar with T >= 2")
        if not ((beta > 0.0) & (beta < 1.0)).all():
            raise ValueError("every beta must lie strictly inside (0, 1)")
        if not (np.diff(ab) < 0.0).all():
            raise ValueError("alpha_bar must be strictly decreasing")
        beta.flags.writeable = False
        ab.flags.writeable = False
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha_bar", ab)

    @property
    def total_steps(self) -> int:
        return self.beta.size

    def alpha_bar_at(self, t: int) -> float:
        """alpha_bar at integer step t in [0, T], with step 0 mapped to 1."""
        if not 0 <= t <= self.total_steps:
            raise ValueError(f"step {t} outside [0, {self.total_steps}]")
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])


def linear_schedule(total_steps: int, beta_start: float = 1e-4,
                    beta_end: float = 0.02) -> NoiseSchedule:
    """Schedule with beta interpolated linearly, endpoints included."""
    if total_steps < 2:
        raise ValueError("total_steps must be at least 2")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    beta = np.linspace(beta_start, beta_end, total_steps)
    alpha_bar = np.cumprod(1.0 - beta)
    return NoiseSchedule(beta=beta, alpha_bar=alpha_bar)


class ScoreModel:
    """Base class for noise predictors.

    Subclasses implement the flat batched kernels `_predict_flat` and
    `_adjoint_flat` over (n, d) arrays; the public per-tensor methods wrap
    them. Predictors never mutate internal state in predict/adjoint.
    """

    shape: tuple[int, int, int] | None = None

    def _check(self, x: Tensor3) -> None:
        if self.shape is not None and x.shape != self.shape:
            raise ValueError(f"input shape {x.shape} does not match model {self.shape}")

    def predict(self, x: Tensor3, t: int) -> Tensor3:
        """Noise estimate eps(x, t), same shape as x."""
        self._check(x)
        out = self._predict_flat(x.data.reshape(1, -1), t)
        return Tensor3(out.reshape(x.shape))

    def adjoint(self, x: Tensor3, t: int, v: Tensor3) -> Tensor3:
        """(d eps / d x)^T v evaluated at (x, t)."""
        self._check(x)
        if v.shape != x.shape:
            raise ValueError("adjoint direction must match input shape")
        out = self._adjoint_flat(x.data.reshape(1, -1), t, v.data.reshape(1, -1))
        return Tensor3(out.reshape(x.shape))

    def _predict_flat(self, X: np.ndarray, t: int) -> np.ndarray:
        raise NotImplementedError

    def _adjoint_flat(self, X: np.ndarray, t: int, V: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class GaussianMixturePrior(ScoreModel):
    """Exact noise predictor for an isotropic Gaussian-mixture data prior.

    With data x ~ sum_i w_i N(mu_i, var_i I), the diffused marginal at step
    t is sum_i w_i N(sqrt(ab) mu_i, s_i^2 I) with s_i^2 = ab*var_i + 1 - ab.
    The predictor returns

        eps(x, t) = sqrt(1 - ab) * sum_i r_i(x) (x - sqrt(ab) mu_i) / s_i^2

    where r_i are the mixture responsibilities, computed with log-sum-exp;
    this equals -sqrt(1 - ab) * grad log p_t(x). The Jacobian is the
    diagonal term sum_i r_i/s_i^2 plus rank-K responsibility derivatives.
    """

    def __init__(self, weights, variances, means: np.ndarray,
                 shape: tuple[int, int, int], schedule: NoiseSchedule) -> None:
        w = np.asarray(weights, dtype=np.float64)
        var = np.asarray(variances, dtype=np.float64)
        means = np.asarray(means, dtype=np.float64)
        if w.ndim != 1 or w.size < 1:
            raise ValueError("weights must be a non-empty vector")
        if abs(float(w.sum()) - 1.0) > 1e-12:
            raise ValueError("mixture weights must sum to 1")
        if var.shape != w.shape or (var <= 0.0).any():
            raise ValueError("one positive variance per component required")
        h, wd, c = shape
        if means.shape != (w.size, h * wd * c):
            raise ValueError("means must be (K, h*w*c)")
        self.weights = w
        self.variances = var
        self.means = means
        self.shape = (h, wd, c)
        self.schedule = schedule
        self._log_w = np.log(w)
        self._dim = h * wd * c

    @classmethod
    def single(cls, mean: Tensor3, variance: float,
               schedule: NoiseSchedule) -> "GaussianMixturePrior":
        """Convenience one-component prior."""
        return cls([1.0], [variance], mean.data.reshape(1, -1), mean.shape, schedule)

    def _moments(self, t: int) -> tuple[float, np.ndarray, np.ndarray]:
        ab = self.schedule.alpha_bar_at(t)
        s2 = ab * self.variances + (1.0 - ab)
        centers = np.sqrt(ab) * self.means
        return ab, s2, centers

    def _log_joint(self, X: np.ndarray, t: int) -> np.ndarray:
        """Unnormalized per-component log densities, shape (n, K)."""
        _, s2, centers = self._moments(t)
        sq = (
            (X * X).sum(axis=1)[:, None]
            - 2.0 * X @ centers.T
            + (centers * centers).sum(axis=1)[None, :]
        )
        return self._log_w[None, :] - 0.5 * (
            self._dim * np.log(2.0 * np.pi * s2)[None, :] + sq / s2[None, :]
        )

    def responsibilities(self, x: Tensor3, t: int) -> np.ndarray:
        """Posterior component probabilities r_i(x) at step t."""
        logits = self._log_joint(x.data.reshape(1, -1), t)
        m = logits.max(axis=1, keepdims=True)
        p = np.exp(logits - m)
        return (p / p.sum(axis=1, keepdims=True))[0]

    def log_marginal_density(self, x: Tensor3, t: int) -> float:
        """log p_t(x) of the diffused mixture marginal."""
        logits = self._log_joint(x.data.reshape(1, -1), t)
        m = logits.max()
        return float(m + np.log(np.exp(logits - m).sum()))

    def _responsibilities_flat(self, X: np.ndarray, t: int) -> np.ndarray:
        logits = self._log_joint(X, t)
        m = logits.max(axis=1, keepdims=True)
        p = np.exp(logits - m)
        return p / p.sum(axis=1, keepdims=True)

    def _predict_flat(self, X: np.ndarray, t: int) -> np.ndarray:
        ab, s2, centers = self._moments(t)
        r = self._responsibilities_flat(X, t)
        rs = r / s2[None, :]
        return np.sqrt(1.0 - ab) * (X * rs.sum(axis=1)[:, None] - rs @ centers)

    def _adjoint_flat(self, X: np.ndarray, t: int, V: np.ndarray) -> np.ndarray:
        # J is symmetric (it is a scaled Hessian of log p_t), so J^T v = J v:
        #   J = sqrt(1-ab) [ (sum_i r_i/s_i^2) I + ubar ubar^T - sum_i r_i u_i u_i^T ]
        # with u_i = (x - c_i)/s_i^2 and ubar = sum_i r_i u_i.
        ab, s2, centers = self._moments(t)
        r = self._responsibilities_flat(X, t)
        rs = r / s2[None, :]
        ubar = X * rs.sum(axis=1)[:, None] - rs @ centers
        # <u_i, v> per sample and component
        dots = ((X * V).sum(axis=1)[:, None] - V @ centers.T) / s2[None, :]
        diag = rs.sum(axis=1)[:, None] * V
        outer = ubar * (ubar * V).sum(axis=1)[:, None]
        rd = r * dots
        mix = X * (rd / s2[None, :]).sum(axis=1)[:, None] - (rd / s2[None, :]) @ centers
        return np.sqrt(1.0 - ab) * (diag + outer - mix)


def _silu(u: np.ndarray) -> np.ndarray:
    return u / (1.0 + np.exp(-u))


def _silu_grad(u: np.ndarray) -> np.ndarray:
    s = 1.0 / (1.0 + np.exp(-u))
    return s * (1.0 + u * (1.0 - s))


class MlpScore(ScoreModel):
    """Small fully-connected noise predictor.

    The flattened input gets the normalized step t/T appended, passes
    through affine+SiLU layers (last layer affine only) and is reshaped
    back to the input shape. The adjoint is layer-wise reverse
    accumulation of the same pass.
    """

    def __init__(self, layers: list[tuple[np.ndarray, np.ndarray]],
                 total_steps: int,
                 shape: tuple[int, int, int] | None = None) -> None:
        if not layers:
            raise ValueError("at least one layer required")
        for i, (w, b) in enumerate(layers):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: weight/bias shapes inconsistent")
            if i > 0 and w.shape[1] != layers[i - 1][0].shape[0]:
                raise ValueError(
                    f"layer {i}: input dim {w.shape[1]} does not match "
                    f"previous output {layers[i - 1][0].shape[0]}"
                )
        in_dim = layers[0][0].shape[1]
        out_dim = layers[-1][0].shape[0]
        if out_dim != in_dim - 1:
            raise ValueError(
                f"last layer must emit in_dim-1 = {in_dim - 1} values, got {out_dim}"
            )
        self.layers = [(np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64))
                       for w, b in layers]
        self.total_steps = int(total_steps)
        self.shape = shape

    @property
    def expected_size(self) -> int:
        return self.layers[0][0].shape[1] - 1

    def _check(self, x: Tensor3) -> None:
        super()._check(x)
        if x.size != self.expected_size:
            raise ValueError(
                f"input has {x.size} values, network expects {self.expected_size}"
            )

    def _forward(self, X: np.ndarray, t: int):
        n = X.shape[0]
        a = np.concatenate([X, np.full((n, 1), t / self.total_steps)], axis=1)
        pre: list[np.ndarray] = []
        for i, (w, b) in enumerate(self.layers):
            z = a @ w.T + b
            if i < len(self.layers) - 1:
                pre.append(z)
                a = _silu(z)
            else:
                a = z
        return a, pre

    def _predict_flat(self, X: np.ndarray, t: int) -> np.ndarray:
        out, _ = self._forward(X, t)
        return out

    def _adjoint_flat(self, X: np.ndarray, t: int, V: np.ndarray) -> np.ndarray:
        _, pre = self._forward(X, t)
        g = V
        for i in range(len(self.layers) - 1, -1, -1):
            w, _ = self.layers[i]
            g = g @ w
            if i > 0:
                g = g * _silu_grad(pre[i - 1])
        return g[:, :-1]  # drop the appended time input


def save_mlp(path, layers: list[tuple[np.ndarray, np.ndarray]]) -> None:
    """Write an MLP weight file (magic I2RM, little-endian float32)."""
    with open(path, "wb") as fh:
        fh.write(MLP_MAGIC)
        fh.write(struct.pack("<I", len(layers)))
        for w, b in layers:
            out_dim, in_dim = w.shape
            fh.write(struct.pack("<II", in_dim, out_dim))
            fh.write(np.asarray(w, dtype="<f4").tobytes(order="C"))
            fh.write(np.asarray(b, dtype="<f4").tobytes(order="C"))


def load_mlp(path, total_steps: int,
             shape: tuple[int, int, int] | None = None) -> MlpScore:
    """Load an MLP weight file written by `save_mlp`."""
    raw = Path(path).read_bytes()
    if raw[:4] != MLP_MAGIC:
        raise FileFormatError(f"{path}: bad magic {raw[:4]!r}, expected {MLP_MAGIC!r}")
    pos = 4
    if len(raw) < pos + 4:
        raise FileFormatError(f"{path}: truncated layer count")
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    if count == 0:
        raise FileFormatError(f"{path}: network has no layers")
    layers: list[tuple[np.ndarray, np.ndarray]] = []
    for i in range(count):
        if len(raw) < pos + 8:
            raise FileFormatError(f"{path}: truncated header for layer {i}")
        in_dim, out_dim = struct.unpack_from("<II", raw, pos)
        pos += 8
        if in_dim == 0 or out_dim == 0:
            raise FileFormatError(f"{path}: layer {i} has a zero dimension")
        need = (in_dim * out_dim + out_dim) * 4
        if len(raw) < pos + need:
            raise FileFormatError(f"{path}: truncated payload for layer {i}")
        w = np.frombuffer(raw, dtype="<f4", count=in_dim * out_dim, offset=pos)
        pos += in_dim * out_dim * 4
        b = np.frombuffer(raw, dtype="<f4", count=out_dim, offset=pos)
        pos += out_dim * 4
        layers.append((w.astype(np.float64).reshape(out_dim, in_dim),
                       b.astype(np.float64)))
    if pos != len(raw):
        raise FileFormatError(f"{path}: {len(raw) - pos} trailing bytes")
    try:
        return MlpScore(layers, total_steps, shape)
    except ValueError as exc:
        raise FileFormatError(f"{path}: {exc}") from exc


def save_gmm_components(path, weights, variances, mean_tensors: list[Tensor3]) -> None:
    """Write a mixture prior description plus its mean tensors.

    The text file holds one component per line: weight, variance and the
    mean tensor path (relative to the description file).
    """
    from .io import write_tensor

    path = Path(path)
    lines = []
    for i, (w, var, mean) in enumerate(zip(weights, variances, mean_tensors)):
        name = f"{path.stem}_mean{i}.i2rt"
        write_tensor(mean, path.parent / name)
        lines.append(f"{float(w)!r} {float(var)!r} {name}\n")
    path.write_text("".join(lines))


def load_gmm_components(path):
    """Read a mixture prior description; returns (weights, variances, means, shape)."""
    from .io import read_tensor

    path = Path(path)
    weights: list[float] = []
    variances: list[float] = []
    means: list[np.ndarray] = []
    shape = None
    for ln, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise FileFormatError(f"{path}:{ln}: expected 'weight variance mean-path'")
        try:
            w, var = float(parts[0]), float(parts[1])
        except ValueError as exc:
            raise FileFormatError(f"{path}:{ln}: {exc}") from exc
        mean = read_tensor(path.parent / parts[2])
        if shape is None:
            shape = mean.shape
        elif mean.shape != shape:
            raise FileFormatError(f"{path}:{ln}: mean shape {mean.shape} != {shape}")
        weights.append(w)
        variances.append(var)
        means.append(mean.data.reshape(-1))
    if not weights:
        raise FileFormatError(f"{path}: no components found")
    return np.array(weights), np.array(variances), np.array(means), shape
