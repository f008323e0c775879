import numpy as np
import pytest

import noisefix as nf
from noisefix.errors import NumericError
from noisefix.priors import NoiseSchedule, ScoreModel
from noisefix.sampler import step_grid


class ZeroModel(ScoreModel):
    def _predict_flat(self, X, t):
        return np.zeros_like(X)

    def _adjoint_flat(self, X, t, V):
        return np.zeros_like(V)


class CollapseModel(ScoreModel):
    """eps(z, t) = z / sqrt(1 - ab_t), which forces the clean estimate to 0."""

    def __init__(self, schedule):
        self.sched = schedule

    def _predict_flat(self, X, t):
        return X / np.sqrt(1.0 - self.sched.alpha_bar_at(t))

    def _adjoint_flat(self, X, t, V):
        return V / np.sqrt(1.0 - self.sched.alpha_bar_at(t))


class TestStepGrid:
    def test_divisible(self):
        assert step_grid(1000, 100) == list(range(1000, -1, -100))

    def test_shortened_final_jump(self):
        assert step_grid(10, 4) == [10, 6, 2, 0]

    def test_model_eval_count(self, gmm_sampler):
        # one predictor call per grid edge
        calls = []
        real = gmm_sampler.model._predict_flat

        def counting(X, t):
            calls.append(t)
            return real(X, t)

        gmm_sampler.model._predict_flat = counting
        try:
            nf.generate(gmm_sampler, nf.draw_standard_normal(nf.Rng(0), 4, 4, 1))
        finally:
            gmm_sampler.model._predict_flat = real
        assert len(calls) == len(step_grid(40, 8)) - 1

    def test_delta_t_bounds(self, gmm_prior, small_schedule):
        with pytest.raises(ValueError):
            nf.SamplerConfig(model=gmm_prior, schedule=small_schedule, delta_t=0)
        with pytest.raises(ValueError):
            nf.SamplerConfig(model=gmm_prior, schedule=small_schedule, delta_t=41)


class TestGenerate:
    def test_zero_model_is_scalar_map(self, small_schedule):
        cfg = nf.SamplerConfig(model=ZeroModel(), schedule=small_schedule, delta_t=7)
        z = nf.draw_standard_normal(nf.Rng(3), 4, 4, 1)
        out = nf.generate(cfg, z)
        scale = 1.0 / np.sqrt(small_schedule.alpha_bar_at(40))
        assert np.allclose(out.data, scale * z.data, rtol=1e-12)

    def test_collapse_model_returns_zero(self, small_schedule):
        cfg = nf.SamplerConfig(model=CollapseModel(small_schedule),
                               schedule=small_schedule, delta_t=7)
        z = nf.draw_standard_normal(nf.Rng(4), 4, 4, 1)
        assert np.abs(nf.generate(cfg, z).data).max() <= 1e-12

    def test_deterministic(self, gmm_sampler):
        z = nf.draw_standard_normal(nf.Rng(5), 4, 4, 1)
        a = nf.generate(gmm_sampler, z)
        b = nf.generate(gmm_sampler, z)
        assert np.array_equal(a.data, b.data)

    def test_generate_many_matches_loop(self, gmm_sampler):
        Z = nf.Rng(6).standard_normal((5, 4, 4, 1))
        batch = nf.generate_many(gmm_sampler, Z)
        for i in range(5):
            single = nf.generate(gmm_sampler, nf.Tensor3(Z[i]))
            assert np.allclose(batch[i], single.data, atol=1e-12)

    def test_moment_pushforward_single_gaussian(self):
        # single-component prior: target moments are exact; the terminal
        # signal-retention must be deep (stock 1000-step schedule) or the
        # pushforward mean keeps a sqrt(alpha_bar_T) shortfall
        sched = nf.linear_schedule(1000, 1e-4, 0.02)
        mu = np.full((4, 4, 1), 0.5)
        var = 1.3
        prior = nf.GaussianMixturePrior.single(nf.Tensor3(mu), var, sched)
        cfg = nf.SamplerConfig(model=prior, schedule=sched, delta_t=1)
        n = 4000
        Z = nf.Rng(7).standard_normal((n, 16))
        X = nf.generate_many(cfg, Z)
        se = np.sqrt(var / n)
        assert np.abs(X.mean(axis=0) - 0.5).max() <= 3.5 * se
        assert abs(X.var() / var - 1.0) <= 0.05

    def test_non_finite_state_reported(self, small_schedule):
        class ExplodingModel(ScoreModel):
            def _predict_flat(self, X, t):
                return np.full_like(X, np.inf)

            def _adjoint_flat(self, X, t, V):
                return V

        cfg = nf.SamplerConfig(model=ExplodingModel(), schedule=small_schedule,
                               delta_t=10)
        with pytest.raises(NumericError, match="step t="):
            nf.generate(cfg, nf.draw_standard_normal(nf.Rng(0), 2, 2, 1))


class TestGenerateAdjoint:
    def test_zero_model_adjoint_is_same_scalar(self, small_schedule):
        cfg = nf.SamplerConfig(model=ZeroModel(), schedule=small_schedule, delta_t=7)
        z = nf.draw_standard_normal(nf.Rng(8), 4, 4, 1)
        v = nf.draw_standard_normal(nf.Rng(9), 4, 4, 1)
        scale = 1.0 / np.sqrt(small_schedule.alpha_bar_at(40))
        out = nf.generate_adjoint(cfg, z, v)
        assert np.allclose(out.data, scale * v.data, rtol=1e-12)

    def test_matches_finite_differences(self, gmm_sampler):
        z = nf.draw_standard_normal(nf.Rng(10), 4, 4, 1)
        v = nf.draw_standard_normal(nf.Rng(11), 4, 4, 1)
        adj = nf.generate_adjoint(gmm_sampler, z, v).data.reshape(-1)
        h = 1e-6
        fd = np.zeros(16)
        flat = z.data.reshape(-1)
        for i in range(16):
            e = np.zeros(16)
            e[i] = h
            fp = nf.generate(gmm_sampler, nf.Tensor3((flat + e).reshape(4, 4, 1)))
            fm = nf.generate(gmm_sampler, nf.Tensor3((flat - e).reshape(4, 4, 1)))
            fd[i] = float(((fp.data - fm.data) / (2 * h) * v.data).sum())
        assert np.abs(adj - fd).max() <= 1e-4 * np.abs(adj).max()

    def test_linear_in_v(self, gmm_sampler):
        z = nf.draw_standard_normal(nf.Rng(12), 4, 4, 1)
        v1 = nf.draw_standard_normal(nf.Rng(13), 4, 4, 1)
        v2 = nf.draw_standard_normal(nf.Rng(14), 4, 4, 1)
        combo = nf.Tensor3(1.5 * v1.data + 0.25 * v2.data)
        lhs = nf.generate_adjoint(gmm_sampler, z, combo).data
        rhs = (1.5 * nf.generate_adjoint(gmm_sampler, z, v1).data
               + 0.25 * nf.generate_adjoint(gmm_sampler, z, v2).data)
        assert np.abs(lhs - rhs).max() <= 1e-10

    def test_transpose_identity(self, gmm_sampler):
        z = nf.draw_standard_normal(nf.Rng(15), 4, 4, 1)
        u = nf.draw_standard_normal(nf.Rng(16), 4, 4, 1)
        v = nf.draw_standard_normal(nf.Rng(17), 4, 4, 1)
        h = 1e-6
        fp = nf.generate(gmm_sampler, nf.Tensor3(z.data + h * u.data)).data
        fm = nf.generate(gmm_sampler, nf.Tensor3(z.data - h * u.data)).data
        ju = (fp - fm) / (2 * h)
        lhs = float((ju * v.data).sum())
        rhs = float((u.data * nf.generate_adjoint(gmm_sampler, z, v).data).sum())
        assert abs(lhs - rhs) <= 1e-6 * max(1.0, abs(lhs))


def fine_grid_schedule(total_steps):
    """Cosine-spaced signal-retention grid: equal per-step rotation angles,
    the spacing that keeps the inversion recursion's systematic shrinkage at
    its minimum for a given step count."""
    ts = np.arange(total_steps + 1) / total_steps
    f = np.cos((ts + 0.008) / 1.008 * np.pi / 2) ** 2
    ab = f[1:] / f[0]
    beta = 1.0 - np.concatenate([[ab[0]], ab[1:] / ab[:-1]])
    beta = np.clip(beta, 1e-8, 0.999)
    return NoiseSchedule(beta=beta, alpha_bar=np.cumprod(1.0 - beta))


@pytest.fixture(scope="module")
def roundtrip_sampler():
    sched = fine_grid_schedule(8000)
    dirs = nf.Rng(100).standard_normal((3, 16))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    prior = nf.GaussianMixturePrior([0.4, 0.3, 0.3], [1.0, 0.9, 1.1],
                                    1.5 * dirs, (4, 4, 1), sched)
    return nf.SamplerConfig(model=prior, schedule=sched, delta_t=1)


class TestInvertOde:
    def test_zero_model_exact_inverse(self, small_schedule):
        cfg = nf.SamplerConfig(model=ZeroModel(), schedule=small_schedule, delta_t=7)
        x = nf.draw_standard_normal(nf.Rng(18), 4, 4, 1)
        z = nf.invert_ode(cfg, x)
        back = nf.generate(cfg, z)
        assert np.abs(back.data - x.data).max() <= 1e-12

    def test_image_roundtrip(self, roundtrip_sampler):
        from conftest import prior_draw
        x = prior_draw(roundtrip_sampler.model, 200)
        back = nf.generate(roundtrip_sampler, nf.invert_ode(roundtrip_sampler, x))
        assert np.abs(back.data - x.data).max() <= 1e-3

    def test_noise_roundtrip(self, roundtrip_sampler):
        z = nf.draw_standard_normal(nf.Rng(300), 4, 4, 1)
        back = nf.invert_ode(roundtrip_sampler, nf.generate(roundtrip_sampler, z))
        rel = np.abs(back.data - z.data).max() / np.abs(z.data).max()
        assert rel <= 1e-3

    def test_refinement_gap_shrinks(self, gmm_prior, small_schedule):
        z = nf.draw_standard_normal(nf.Rng(19), 4, 4, 1)
        outs = {}
        for dt in (8, 4, 2, 1):
            cfg = nf.SamplerConfig(model=gmm_prior, schedule=small_schedule,
                                   delta_t=dt)
            outs[dt] = nf.generate(cfg, z).data
        gaps = [np.abs(outs[8] - outs[4]).max(),
                np.abs(outs[4] - outs[2]).max(),
                np.abs(outs[2] - outs[1]).max()]
        assert gaps[0] >= gaps[1] >= gaps[2]
