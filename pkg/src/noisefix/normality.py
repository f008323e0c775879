"""Moment-based normality testing and the sliding-window defect scan.

The omnibus statistic combines the sample skewness g1 = m3 / m2^(3/2) and
excess kurtosis g2 = m4 / m2^2 - 3 (biased central moments, divide by n).
Each is mapped to an approximately standard normal variable using the
classical small-sample transforms: D'Agostino's (1970) transform for
skewness and the Anscombe-Glynn (1983) transform for kurtosis. Under the
null, K2 = z1^2 + z2^2 follows a chi-square with 2 degrees of freedom,
whose survival function is closed form: p = exp(-K2 / 2).

`scan_mask` slides k x k x c windows over a noise tensor, tests each
flattened window, and marks every position covered by a failing window.
Near-constant windows have essentially zero probability under N(0, I) and
fail automatically (p = 0, K2 = +inf).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateSampleError
from .tensor import Tensor3

__all__ = [
    "OmnibusResult",
    "DefectMask",
    "MIN_OMNIBUS_N",
    "skew_kurt",
    "omnibus_test",
    "window_offsets",
    "window_pvalues",
    "scan_mask",
    "tile_failure_rate",
]

MIN_OMNIBUS_N = 20          # below this the kurtosis transform is unreliable
_VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class OmnibusResult:
    """Statistics of one omnibus normality test.

    K2 = z1^2 + z2^2 and p = exp(-K2/2) always hold; degenerate samples
    carry the sentinels K2 = +inf, p = 0 with NaN moments.
    """

    g1: float
    g2: float
    z1: float
    z2: float
    k2: float
    p: float

    @property
    def degenerate(self) -> bool:
        return not np.isfinite(self.k2)


def _moments(V: np.ndarray):
    """Biased central moments m2, m3, m4 for each row of V."""
    centered = V - V.mean(axis=1, keepdims=True)
    m2 = (centered ** 2).mean(axis=1)
    m3 = (centered ** 3).mean(axis=1)
    m4 = (centered ** 4).mean(axis=1)
    return m2, m3, m4


def _skew_transform(g1: np.ndarray, n: int) -> np.ndarray:
    """D'Agostino (1970) normalization of sample skewness."""
    y = g1 * np.sqrt((n + 1.0) * (n + 3.0) / (6.0 * (n - 2.0)))
    beta2 = (3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0)
             / ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0)))
    w2 = -1.0 + np.sqrt(2.0 * (beta2 - 1.0))
    delta = 1.0 / np.sqrt(0.5 * np.log(w2))
    alpha = np.sqrt(2.0 / (w2 - 1.0))
    return delta * np.arcsinh(y / alpha)


def _kurt_transform(g2: np.ndarray, n: int) -> np.ndarray:
    """Anscombe-Glynn (1983) normalization of sample kurtosis."""
    b2 = g2 + 3.0
    mean_b2 = 3.0 * (n - 1.0) / (n + 1.0)
    var_b2 = (24.0 * n * (n - 2.0) * (n - 3.0)
              / ((n + 1.0) ** 2 * (n + 3.0) * (n + 5.0)))
    x = (b2 - mean_b2) / np.sqrt(var_b2)
    sqrt_beta1 = (6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0))
                  * np.sqrt(6.0 * (n + 3.0) * (n + 5.0) / (n * (n - 2.0) * (n - 3.0))))
    a = 6.0 + 8.0 / sqrt_beta1 * (2.0 / sqrt_beta1
                                  + np.sqrt(1.0 + 4.0 / sqrt_beta1 ** 2))
    denom = 1.0 + x * np.sqrt(2.0 / (a - 4.0))
    term = np.sign(denom) * np.cbrt((1.0 - 2.0 / a) / np.abs(denom))
    return ((1.0 - 2.0 / (9.0 * a)) - term) / np.sqrt(2.0 / (9.0 * a))


def skew_kurt(v) -> tuple[float, float]:
    """Sample skewness and excess kurtosis with divide-by-n moments."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    n = v.size
    if n < 8:
        raise ValueError(f"need at least 8 values, got {n}")
    m2, m3, m4 = _moments(v[None, :])
    if m2[0] <= _VARIANCE_FLOOR:
        raise DegenerateSampleError(
            f"sample variance {m2[0]:.3e} below {_VARIANCE_FLOOR:.0e}"
        )
    g1 = float(m3[0] / m2[0] ** 1.5)
    g2 = float(m4[0] / m2[0] ** 2 - 3.0)
    return g1, g2


def _omnibus_batch(V: np.ndarray):
    """Vectorized omnibus test over rows; degenerate rows get sentinels.

    Returns arrays (g1, g2, z1, z2, k2, p), each of length V.shape[0].
    """
    n = V.shape[1]
    if n < MIN_OMNIBUS_N:
        raise ValueError(f"sample too small: need n >= {MIN_OMNIBUS_N}, got {n}")
    m2, m3, m4 = _moments(V)
    ok = m2 > _VARIANCE_FLOOR
    m2_safe = np.where(ok, m2, 1.0)
    g1 = m3 / m2_safe ** 1.5
    g2 = m4 / m2_safe ** 2 - 3.0
    z1 = _skew_transform(g1, n)
    z2 = _kurt_transform(g2, n)
    k2 = z1 ** 2 + z2 ** 2
    p = np.exp(-0.5 * k2)
    nan = np.full_like(p, np.nan)
    g1 = np.where(ok, g1, nan)
    g2 = np.where(ok, g2, nan)
    z1 = np.where(ok, z1, nan)
    z2 = np.where(ok, z2, nan)
    k2 = np.where(ok, k2, np.inf)
    p = np.where(ok, p, 0.0)
    return g1, g2, z1, z2, k2, p


def omnibus_test(v) -> OmnibusResult:
    """Run the omnibus test on a flat sample of at least 20 values."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    g1, g2, z1, z2, k2, p = _omnibus_batch(v[None, :])
    return OmnibusResult(
        g1=float(g1[0]), g2=float(g2[0]), z1=float(z1[0]), z2=float(z2[0]),
        k2=float(k2[0]), p=float(p[0]),
    )


# ---------------------------------------------------------------------------
# sliding-window scan
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DefectMask:
    """Binary tensor marking noise positions covered by a failing window."""

    mask: Tensor3
    k: int
    stride: int
    alpha: float


def window_offsets(dim: int, k: int, stride: int) -> list[int]:
    """Stride-spaced window starts, with the final one snapped to the border."""
    offsets = list(range(0, dim - k + 1, stride))
    if offsets[-1] != dim - k:
        offsets.append(dim - k)
    return offsets


def _check_scan_args(z: Tensor3, k: int, stride: int) -> None:
    h, w, c = z.shape
    if k < 1 or k > min(h, w):
        raise ConfigError(f"window size {k} must lie in [1, {min(h, w)}]")
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    if c * k * k < MIN_OMNIBUS_N:
        raise ConfigError(
            f"window sample size c*k*k = {c * k * k} is below the omnibus "
            f"minimum of {MIN_OMNIBUS_N} values"
        )


def window_pvalues(z: Tensor3, k: int, stride: int):
    """P-values of every k x k x c window.

    Returns (row_offsets, col_offsets, P) with P shaped
    (len(row_offsets), len(col_offsets)).
    """
    _check_scan_args(z, k, stride)
    h, w, _ = z.shape
    rows = window_offsets(h, k, stride)
    cols = window_offsets(w, k, stride)
    data = z.data
    windows = np.stack([
        data[i:i + k, j:j + k, :].reshape(-1) for i in rows for j in cols
    ])
    *_, p = _omnibus_batch(windows)
    return rows, cols, p.reshape(len(rows), len(cols))


def scan_mask(z: Tensor3, k: int, stride: int, alpha: float) -> DefectMask:
    """Mark every position covered by a window with p below alpha."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    rows, cols, p = window_pvalues(z, k, stride)
    mask = np.zeros(z.shape)
    for a, i in enumerate(rows):
        for b, j in enumerate(cols):
            if p[a, b] < alpha:
                mask[i:i + k, j:j + k, :] = 1.0
    return DefectMask(mask=Tensor3(mask), k=k, stride=stride, alpha=alpha)


def tile_failure_rate(z: Tensor3, k: int, alpha: float) -> float:
    """Fraction of non-overlapping k x k x c tiles failing at level alpha."""
    _, _, p = window_pvalues(z, k, stride=k)
    return float((p < alpha).mean())
