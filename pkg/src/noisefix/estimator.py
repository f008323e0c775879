"""Scikit-learn style front end for the restoration pipeline.

`NoiseSpaceRestorer` is a stateless transformer: `fit` only validates the
configuration, `transform` restores one image or a sequence of images.
It implements `get_params`/`set_params`, so it clones and composes with
scikit-learn pipelines and searches without importing scikit-learn here.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .priors import ScoreModel
from .rectify import RestoreParams, RestoreResult, restore
from .sampler import SamplerConfig
from .tensor import Tensor3
from .validation import as_tensor3, check_in_range, check_positive_int

__all__ = ["NoiseSpaceRestorer"]


class NoiseSpaceRestorer:
    """Restores degraded images by rectifying their inverted sampler noise.

    Parameters mirror the pipeline knobs: significance level `alpha`,
    window/tile side `k`, patch bank size, solver iterations and learning
    rate, sampler step jump via the model config, and the root `seed`.
    `mode` selects fully blind operation or a known operator family
    (`h_kind` in gaussian_blur / motion_blur / downsample).
    """

    def __init__(self, model: ScoreModel | None = None, schedule=None,
                 delta_t: int = 100, mode: str = "fully_blind",
                 h_kind: str | None = None, alpha: float = 0.05, k: int = 4,
                 bank_size: int = 50_000, iters: int = 150, lr: float = 1e-3,
                 stride: int = 1, seed: int = 0, optimizer: str = "adam",
                 kernel_size: int = 5, factor: int = 2,
                 theta_init: str = "uniform") -> None:
        self.model = model
        self.schedule = schedule
        self.delta_t = delta_t
        self.mode = mode
        self.h_kind = h_kind
        self.alpha = alpha
        self.k = k
        self.bank_size = bank_size
        self.iters = iters
        self.lr = lr
        self.stride = stride
        self.seed = seed
        self.optimizer = optimizer
        self.kernel_size = kernel_size
        self.factor = factor
        self.theta_init = theta_init

    # -- sklearn plumbing ---------------------------------------------------

    _param_names = (
        "model", "schedule", "delta_t", "mode", "h_kind", "alpha", "k",
        "bank_size", "iters", "lr", "stride", "seed", "optimizer",
        "kernel_size", "factor", "theta_init",
    )

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names}

    def set_params(self, **params) -> "NoiseSpaceRestorer":
        for name, value in params.items():
            if name not in self._param_names:
                raise ValueError(f"invalid parameter {name!r} for NoiseSpaceRestorer")
            setattr(self, name, value)
        return self

    # -- estimator API ------------------------------------------------------

    def _sampler_config(self) -> SamplerConfig:
        if self.model is None or self.schedule is None:
            raise ConfigError("restorer needs a score model and its schedule")
        return SamplerConfig(model=self.model, schedule=self.schedule,
                             delta_t=self.delta_t)

    def _restore_params(self) -> RestoreParams:
        return RestoreParams(
            alpha=check_in_range(self.alpha, 0.0, 1.0, "alpha"),
            k=check_positive_int(self.k, "k"),
            bank_size=check_positive_int(self.bank_size, "bank_size"),
            iters=check_positive_int(self.iters, "iters"),
            lr=float(self.lr),
            stride=check_positive_int(self.stride, "stride"),
            seed=int(self.seed),
            optimizer=self.optimizer,
            kernel_size=self.kernel_size,
            factor=self.factor,
            theta_init=self.theta_init,
        )

    def fit(self, X=None, y=None) -> "NoiseSpaceRestorer":
        """Validate the configuration; the pipeline itself is stateless."""
        self._sampler_config()
        self._restore_params()
        if self.mode not in ("fully_blind", "partial"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode == "partial" and self.h_kind is None:
            raise ConfigError("partial mode needs h_kind")
        self.is_fitted_ = True
        return self

    def restore_with_diagnostics(self, x) -> RestoreResult:
        """Restore one image and return every pipeline intermediate."""
        self.fit()
        return restore(
            as_tensor3(x), self._sampler_config(), self.mode,
            self._restore_params(), h_kind=self.h_kind,
        )

    def transform(self, X):
        """Restore an image or a sequence of images.

        A single Tensor3 or (h, w[, c]) array maps to one restored output
        of the same kind; a list is handled element-wise.
        """
        if isinstance(X, (list, tuple)):
            return [self.transform(x) for x in X]
        result = self.restore_with_diagnostics(X)
        if isinstance(X, Tensor3):
            return result.x_hat
        out = result.x_hat.data
        return out[:, :, 0] if np.asarray(X).ndim == 2 else out

    def fit_transform(self, X, y=None):
        return self.fit(X, y).transform(X)
