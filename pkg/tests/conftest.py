import numpy as np
import pytest

import noisefix as nf


@pytest.fixture(scope="session")
def small_schedule():
    return nf.linear_schedule(40, 1e-3, 0.05)


@pytest.fixture(scope="session")
def gmm_prior(small_schedule):
    """Three-component mixture on 4x4x1 tensors for generic checks."""
    dirs = nf.Rng(100).standard_normal((3, 16))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return nf.GaussianMixturePrior(
        [0.4, 0.3, 0.3], [1.0, 0.9, 1.1], 1.5 * dirs, (4, 4, 1), small_schedule
    )


@pytest.fixture(scope="session")
def gmm_sampler(gmm_prior, small_schedule):
    return nf.SamplerConfig(model=gmm_prior, schedule=small_schedule, delta_t=8)


def block_prototype_prior(schedule, *, height=16, width=16, channels=3,
                          components=8, detail_sigma=0.04, seed=9000):
    """Mixture of piecewise-constant block images: the structured prior used
    by the restoration experiments (strong edges, small per-pixel detail)."""
    protos = []
    rng = nf.Rng(seed)
    for _ in range(components):
        blocks = np.where(rng.standard_normal((height // 4, width // 4, channels)) > 0,
                          0.6, -0.6)
        img = np.repeat(np.repeat(blocks, 4, axis=0), 4, axis=1)
        protos.append(img.reshape(-1))
    means = np.stack(protos)
    return nf.GaussianMixturePrior(
        np.full(components, 1.0 / components),
        np.full(components, detail_sigma ** 2),
        means, (height, width, channels), schedule,
    )


@pytest.fixture(scope="session")
def restore_setup():
    """Structured prior plus sampler used by the end-to-end restoration tests."""
    schedule = nf.linear_schedule(1000, 0.005, 0.02)
    prior = block_prototype_prior(schedule)
    sampler = nf.SamplerConfig(model=prior, schedule=schedule, delta_t=100)
    return prior, sampler


def prior_draw(prior, seed):
    """One image from an isotropic mixture prior: pick a component, add detail."""
    rng = nf.Rng(seed)
    j = int(rng.integers(0, prior.weights.size))
    flat = prior.means[j] + np.sqrt(prior.variances[j]) * rng.standard_normal(
        prior.means.shape[1]
    )
    return nf.Tensor3(flat.reshape(prior.shape))
