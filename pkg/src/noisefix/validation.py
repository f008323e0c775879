"""Input validation helpers shared by the estimator and the CLI."""
from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .tensor import Tensor3

__all__ = ["as_tensor3", "check_in_range", "check_odd", "check_positive_int"]


def as_tensor3(x, name: str = "X") -> Tensor3:
    """Coerce a Tensor3 or array-like of rank 2/3 into a Tensor3."""
    if isinstance(x, Tensor3):
        return x
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim not in (2, 3):
        raise ValueError(f"{name} must be an image array of rank 2 or 3")
    return Tensor3(arr)


def check_positive_int(value, name: str) -> int:
    if int(value) != value or value < 1:
        raise ConfigError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_odd(value, name: str) -> int:
    value = check_positive_int(value, name)
    if value % 2 == 0:
        raise ConfigError(f"{name} must be odd, got {value}")
    return value


def check_in_range(value, low, high, name: str) -> float:
    value = float(value)
    if not low <= value <= high:
        raise ConfigError(f"{name} must lie in [{low}, {high}], got {value}")
    return value
