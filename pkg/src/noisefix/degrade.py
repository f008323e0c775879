"""Parametric forward operators H and synthetic blind degradations.

Linear operators (blurs, downsampling) are built from one primitive: 2-D
convolution with reflect padding, computed as a sum of shifted slices so
the adjoint is mechanical and exact. That exactness is what the transpose
tests and the joint image/operator solver rely on.

Non-linear degradations (quantization, streaks) have no adjoint and serve
as unknown-form inputs for the fully blind path. Additive Gaussian noise
can be appended to any operator via `noise_sigma`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapabilityError
from .tensor import Rng, Tensor3

__all__ = [
    "DegradationSpec",
    "KINDS",
    "DIFFERENTIABLE_KINDS",
    "gaussian_kernel",
    "motion_kernel",
    "kernel_from_theta",
    "kernel_from_theta_vjp",
    "conv2d",
    "conv2d_input_adjoint",
    "conv2d_kernel_adjoint",
    "subsample",
    "subsample_adjoint",
    "apply",
    "apply_adjoint_input",
    "apply_adjoint_theta",
    "spec_to_text",
    "spec_from_text",
]

KINDS = ("gaussian_blur", "motion_blur", "downsample", "quantize", "streaks",
         "additive_noise")
DIFFERENTIABLE_KINDS = ("gaussian_blur", "motion_blur", "downsample")


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

def _delta_kernel(size: int) -> np.ndarray:
    k = np.zeros((size, size))
    k[size // 2, size // 2] = 1.0
    return k


def gaussian_kernel(sigma: float, size: int) -> np.ndarray:
    """Normalized isotropic Gaussian kernel; sigma -> 0 degenerates to a delta."""
    if size % 2 == 0 or size < 1:
        raise ValueError(f"kernel size must be odd and positive, got {size}")
    if sigma <= 1e-12:
        return _delta_kernel(size)
    r = np.arange(size) - size // 2
    g = np.exp(-0.5 * (r / sigma) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def motion_kernel(angle_deg: float, length: float, size: int) -> np.ndarray:
    """Line kernel of the given length and orientation, bilinearly rasterized."""
    if size % 2 == 0 or size < 1:
        raise ValueError(f"kernel size must be odd and positive, got {size}")
    if length <= 1.0:
        return _delta_kernel(size)
    k = np.zeros((size, size))
    center = size // 2
    theta = np.deg2rad(angle_deg)
    d = np.array([np.sin(theta), np.cos(theta)])  # angle 0 runs horizontally
    n_samples = max(int(np.ceil(length * 8)), 2)
    for s in np.linspace(-(length - 1) / 2, (length - 1) / 2, n_samples):
        pos = np.array([center, center]) + s * d
        i0, j0 = int(np.floor(pos[0])), int(np.floor(pos[1]))
        fi, fj = pos[0] - i0, pos[1] - j0
        for di, dj, wgt in ((0, 0, (1 - fi) * (1 - fj)), (0, 1, (1 - fi) * fj),
                            (1, 0, fi * (1 - fj)), (1, 1, fi * fj)):
            ii, jj = i0 + di, j0 + dj
            if 0 <= ii < size and 0 <= jj < size:
                k[ii, jj] += wgt
    total = k.sum()
    if total <= 0.0:
        return _delta_kernel(size)
    return k / total


def kernel_from_theta(theta: np.ndarray) -> np.ndarray:
    """Softmax over theta reshaped to a square kernel: nonnegative, sums to 1.

    The differentiable stand-in for an unknown blur kernel in the joint
    image/operator solver; side length must be odd.
    """
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    size = int(round(np.sqrt(theta.size)))
    if size * size != theta.size:
        raise ValueError(f"theta length {theta.size} is not a perfect square")
    if size % 2 == 0:
        raise ValueError(f"kernel side must be odd, got {size}")
    e = np.exp(theta - theta.max())
    return (e / e.sum()).reshape(size, size)


def kernel_from_theta_vjp(theta: np.ndarray, g_kernel: np.ndarray) -> np.ndarray:
    """Backpropagate a kernel gradient through the softmax parameterization."""
    kappa = kernel_from_theta(theta).reshape(-1)
    g = np.asarray(g_kernel, dtype=np.float64).reshape(-1)
    return kappa * (g - float(kappa @ g))


# ---------------------------------------------------------------------------
# reflect-padded convolution and exact adjoints
# ---------------------------------------------------------------------------

def _pad_indices(dim: int, pad: int) -> np.ndarray:
    return np.pad(np.arange(dim), pad, mode="reflect")


def _reflect_pad(x: np.ndarray, pad: int) -> np.ndarray:
    return np.pad(x, ((pad, pad), (pad, pad), (0, 0)), mode="reflect")


def _reflect_fold(g_padded: np.ndarray, pad: int, shape) -> np.ndarray:
    """Adjoint of `_reflect_pad`: add every padded cell back onto its source."""
    h, w, c = shape
    tmp = np.zeros((h, w + 2 * pad, c))
    np.add.at(tmp, _pad_indices(h, pad), g_padded)
    out = np.zeros((w, h, c))
    np.add.at(out, _pad_indices(w, pad), tmp.transpose(1, 0, 2))
    return out.transpose(1, 0, 2)


def _check_kernel(x_shape, kernel: np.ndarray) -> int:
    kh, kw = kernel.shape
    if kh != kw or kh % 2 == 0:
        raise ValueError(f"kernel must be square with odd side, got {kernel.shape}")
    pad = kh // 2
    if pad >= x_shape[0] or pad >= x_shape[1]:
        raise ValueError(
            f"kernel {kh}x{kw} too large for image {x_shape[0]}x{x_shape[1]}"
        )
    return pad


def conv2d(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """True 2-D convolution with reflect padding, channel by channel."""
    pad = _check_kernel(x.shape, kernel)
    padded = _reflect_pad(x, pad)
    kf = kernel[::-1, ::-1]
    h, w, _ = x.shape
    out = np.zeros_like(x)
    for a in range(kernel.shape[0]):
        for b in range(kernel.shape[1]):
            if kf[a, b] != 0.0:
                out += kf[a, b] * padded[a:a + h, b:b + w]
    return out


def conv2d_input_adjoint(v: np.ndarray, kernel: np.ndarray, x_shape) -> np.ndarray:
    """Exact transpose of `conv2d` applied to v; returns an array shaped like x."""
    pad = _check_kernel(x_shape, kernel)
    kf = kernel[::-1, ::-1]
    h, w, c = x_shape
    g_padded = np.zeros((h + 2 * pad, w + 2 * pad, c))
    for a in range(kernel.shape[0]):
        for b in range(kernel.shape[1]):
            if kf[a, b] != 0.0:
                g_padded[a:a + h, b:b + w] += kf[a, b] * v
    return _reflect_fold(g_padded, pad, x_shape)


def conv2d_kernel_adjoint(x: np.ndarray, v: np.ndarray, size: int) -> np.ndarray:
    """Gradient of <v, conv2d(x, kernel)> with respect to a size x size kernel."""
    return _kernel_gradient(x, v, size)


def subsample(x: np.ndarray, factor: int) -> np.ndarray:
    return x[::factor, ::factor, :]


def subsample_adjoint(v: np.ndarray, factor: int, x_shape) -> np.ndarray:
    out = np.zeros(x_shape)
    out[::factor, ::factor, :] = v
    return out


# ---------------------------------------------------------------------------
# degradation specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DegradationSpec:
    """Description of one forward operator and its parameters.

    `noise_sigma` appends additive Gaussian noise (on the internal [-1, 1]
    value range) after the main operator. `theta` switches the blur kinds
    from their analytic kernels to the softmax parameterization, which is
    the form the joint solver differentiates.
    """

    kind: str
    sigma: float = 1.0
    kernel_size: int = 5
    angle: float = 0.0
    length: float = 5.0
    factor: int = 2
    levels: int = 8
    density: float = 0.3
    intensity: float = 0.8
    seed: int | None = None
    noise_sigma: float = 0.0
    theta: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown degradation kind {self.kind!r}")
        if self.kind in DIFFERENTIABLE_KINDS and self.kernel_size % 2 == 0:
            raise ValueError("kernel size must be odd")
        if self.kind == "downsample" and self.factor < 1:
            raise ValueError("downsample factor must be >= 1")
        if self.kind == "quantize" and self.levels < 2:
            raise ValueError("quantize needs at least 2 levels")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be non-negative")
        if self.kind == "streaks" and (self.density <= 0.0 or self.intensity < 0.0):
            raise ValueError("streaks need positive density and non-negative intensity")

    def kernel(self) -> np.ndarray:
        if self.theta is not None:
            return kernel_from_theta(self.theta)
        if self.kind == "gaussian_blur":
            return gaussian_kernel(self.sigma, self.kernel_size)
        if self.kind == "motion_blur":
            return motion_kernel(self.angle, self.length, self.kernel_size)
        if self.kind == "downsample":
            # antialias kernel tied to the factor; size 1 means a pure stride
            return gaussian_kernel(self.factor / 2.0, self.kernel_size)
        raise CapabilityError(f"{self.kind} has no kernel")


def _require_seed(spec: DegradationSpec, rng: Rng | None) -> Rng:
    if spec.seed is not None:
        return Rng(spec.seed)
    if rng is not None:
        return rng
    raise ValueError(f"{spec.kind} needs spec.seed or an rng argument")


def _quantize(x: np.ndarray, levels: int) -> np.ndarray:
    # uniform grid on [-1, 1] including both endpoints, rounding half-up
    s = (levels - 1) / 2.0
    idx = np.clip(np.floor((x + 1.0) * s + 0.5), 0, levels - 1)
    return idx / s - 1.0


def _streak_field(h: int, w: int, density: float, rng: Rng) -> np.ndarray:
    """Accumulated oriented line pattern in [0, 1], one channel."""
    field = np.zeros((h, w))
    n_streaks = max(1, int(round(density * w)))
    for _ in range(n_streaks):
        ci = float(rng.uniform(0, h))
        cj = float(rng.uniform(0, w))
        angle = np.deg2rad(float(rng.uniform(75.0, 105.0)))
        length = float(rng.uniform(h / 3.0, 2.0 * h / 3.0))
        d = np.array([np.sin(angle), np.cos(angle)])
        n_pts = max(int(np.ceil(length * 4)), 2)
        for s in np.linspace(-length / 2, length / 2, n_pts):
            pi, pj = ci + s * d[0], cj + s * d[1]
            i0, j0 = int(np.floor(pi)), int(np.floor(pj))
            fi, fj = pi - i0, pj - j0
            for di, dj, wgt in ((0, 0, (1 - fi) * (1 - fj)), (0, 1, (1 - fi) * fj),
                                (1, 0, fi * (1 - fj)), (1, 1, fi * fj)):
                ii, jj = i0 + di, j0 + dj
                if 0 <= ii < h and 0 <= jj < w:
                    field[ii, jj] += wgt * 0.25
    return np.clip(field, 0.0, 1.0)


def apply(spec: DegradationSpec, x: Tensor3, rng: Rng | None = None) -> Tensor3:
    """Run the forward operator on an image tensor."""
    data = x.data
    if spec.kind in DIFFERENTIABLE_KINDS:
        out = conv2d(data, spec.kernel())
        if spec.kind == "downsample":
            out = subsample(out, spec.factor)
    elif spec.kind == "quantize":
        out = _quantize(data, spec.levels)
    elif spec.kind == "streaks":
        base = _require_seed(spec, rng).split(0)
        field = _streak_field(x.height, x.width, spec.density, base)
        out = data + spec.intensity * field[:, :, None]
    elif spec.kind == "additive_noise":
        if spec.noise_sigma <= 0.0:
            raise ValueError("additive_noise spec needs noise_sigma > 0")
        out = data.copy()
    else:  # pragma: no cover - guarded by __post_init__
        raise ValueError(spec.kind)
    if spec.noise_sigma > 0.0:
        noise_rng = _require_seed(spec, rng).split(1)
        out = out + spec.noise_sigma * noise_rng.standard_normal(out.shape)
    return Tensor3(out)


def apply_adjoint_input(spec: DegradationSpec, x: Tensor3, v: np.ndarray) -> np.ndarray:
    """Transpose of the linear part of H applied to v, for differentiable kinds."""
    if spec.kind not in DIFFERENTIABLE_KINDS:
        raise CapabilityError(f"{spec.kind} is not differentiable")
    kernel = spec.kernel()
    if spec.kind == "downsample":
        v = subsample_adjoint(v, spec.factor, x.shape)
    return conv2d_input_adjoint(v, kernel, x.shape)


def apply_adjoint_theta(spec: DegradationSpec, x: Tensor3, v: np.ndarray) -> np.ndarray:
    """Gradient of <v, H_theta(x)> with respect to the softmax parameters."""
    if spec.kind not in DIFFERENTIABLE_KINDS:
        raise CapabilityError(f"{spec.kind} is not differentiable")
    if spec.theta is None:
        raise CapabilityError("spec carries no theta parameterization")
    if spec.kind == "downsample":
        v = subsample_adjoint(v, spec.factor, x.shape)
    g_kernel = _kernel_gradient(x.data, v, spec.kernel().shape[0])
    return kernel_from_theta_vjp(spec.theta, g_kernel)


def _kernel_gradient(x: np.ndarray, v: np.ndarray, size: int) -> np.ndarray:
    """Gradient of <v, conv2d(x, kernel)> with respect to the kernel entries."""
    pad = size // 2
    if pad >= x.shape[0] or pad >= x.shape[1]:
        raise ValueError("kernel too large for image")
    padded = _reflect_pad(x, pad)
    h, w, _ = x.shape
    gkf = np.empty((size, size))
    for a in range(size):
        for b in range(size):
            gkf[a, b] = float((padded[a:a + h, b:b + w] * v).sum())
    return gkf[::-1, ::-1]


# ---------------------------------------------------------------------------
# sidecar serialization (ground-truth bookkeeping for the CLI)
# ---------------------------------------------------------------------------

_TEXT_FIELDS = ("kind", "sigma", "kernel_size", "angle", "length", "factor",
                "levels", "density", "intensity", "seed", "noise_sigma")


def spec_to_text(spec: DegradationSpec) -> str:
    lines = ["# degradation sidecar; noise_sigma acts on the [-1, 1] value range"]
    for name in _TEXT_FIELDS:
        value = getattr(spec, name)
        if value is not None:
            lines.append(f"{name}={value}")
    return "\n".join(lines) + "\n"


def spec_from_text(text: str) -> DegradationSpec:
    fields: dict[str, object] = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _TEXT_FIELDS:
            raise ValueError(f"unknown sidecar key {key!r}")
        if key == "kind":
            fields[key] = value.strip()
        elif key in ("kernel_size", "factor", "levels", "seed"):
            fields[key] = int(value)
        else:
            fields[key] = float(value)
    if "kind" not in fields:
        raise ValueError("sidecar misses the degradation kind")
    return DegradationSpec(**fields)  # type: ignore[arg-type]
