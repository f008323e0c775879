import numpy as np
import pytest

import noisefix as nf
from noisefix.errors import FileFormatError
from noisefix.priors import save_gmm_components, save_mlp


def central_diff_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


class TestSchedule:
    def test_two_step_product(self):
        s = nf.linear_schedule(2, 0.1, 0.1)
        assert np.allclose(s.alpha_bar, [0.9, 0.81])

    def test_stock_thousand_step_tail(self):
        # running product evaluated once and frozen
        s = nf.linear_schedule(1000, 1e-4, 0.02)
        assert s.alpha_bar[-1] == pytest.approx(4.0358297653e-05, rel=1e-8)

    def test_bounds_validation(self):
        with pytest.raises(ValueError):
            nf.linear_schedule(10, 0.5, 0.1)
        with pytest.raises(ValueError):
            nf.linear_schedule(1, 0.1, 0.2)
        with pytest.raises(ValueError):
            nf.linear_schedule(10, 0.0, 0.2)

    def test_alpha_bar_at_endpoints(self):
        s = nf.linear_schedule(10, 0.01, 0.02)
        assert s.alpha_bar_at(0) == 1.0
        assert s.alpha_bar_at(10) == s.alpha_bar[-1]
        with pytest.raises(ValueError):
            s.alpha_bar_at(11)


class TestGaussianMixturePrior:
    def test_standard_normal_closed_form(self, small_schedule):
        prior = nf.GaussianMixturePrior.single(
            nf.Tensor3(np.zeros((4, 4, 2))), 1.0, small_schedule
        )
        x = nf.draw_standard_normal(nf.Rng(0), 4, 4, 2)
        for t in (1, 17, 40):
            ab = small_schedule.alpha_bar_at(t)
            eps = prior.predict(x, t)
            assert np.allclose(eps.data, np.sqrt(1 - ab) * x.data, atol=1e-14)

    def test_single_component_general_closed_form(self, small_schedule):
        mu = nf.draw_standard_normal(nf.Rng(1), 4, 4, 2)
        var = 0.7
        prior = nf.GaussianMixturePrior.single(mu, var, small_schedule)
        x = nf.draw_standard_normal(nf.Rng(2), 4, 4, 2)
        t = 20
        ab = small_schedule.alpha_bar_at(t)
        s2 = ab * var + (1 - ab)
        expected = np.sqrt(1 - ab) * (x.data - np.sqrt(ab) * mu.data) / s2
        assert np.allclose(prior.predict(x, t).data, expected, atol=1e-13)

    def test_single_component_adjoint_scalar(self, small_schedule):
        mu = nf.draw_standard_normal(nf.Rng(1), 4, 4, 1)
        prior = nf.GaussianMixturePrior.single(mu, 0.5, small_schedule)
        x = nf.draw_standard_normal(nf.Rng(2), 4, 4, 1)
        v = nf.draw_standard_normal(nf.Rng(3), 4, 4, 1)
        t = 13
        ab = small_schedule.alpha_bar_at(t)
        s2 = ab * 0.5 + (1 - ab)
        out = prior.adjoint(x, t, v)
        assert np.allclose(out.data, np.sqrt(1 - ab) / s2 * v.data, atol=1e-13)

    def test_responsibilities_sum_to_one(self, gmm_prior):
        for seed in range(10):
            x = nf.draw_standard_normal(nf.Rng(seed), 4, 4, 1)
            for t in (1, 10, 40):
                r = gmm_prior.responsibilities(x, t)
                assert abs(r.sum() - 1.0) <= 1e-12

    def test_score_matches_density_gradient(self, gmm_prior, small_schedule):
        # eps must equal -sqrt(1-ab) * grad log p_t, checked by differences
        x = nf.draw_standard_normal(nf.Rng(5), 4, 4, 1)
        t = 15
        ab = small_schedule.alpha_bar_at(t)

        def logp(flat):
            return gmm_prior.log_marginal_density(nf.Tensor3(flat.reshape(4, 4, 1)), t)

        g = central_diff_grad(logp, x.data.reshape(-1))
        eps = gmm_prior.predict(x, t).data.reshape(-1)
        assert np.abs(eps + np.sqrt(1 - ab) * g).max() <= 1e-5 * np.abs(eps).max()

    def test_adjoint_matches_finite_differences(self, gmm_prior):
        x = nf.draw_standard_normal(nf.Rng(6), 4, 4, 1)
        v = nf.draw_standard_normal(nf.Rng(7), 4, 4, 1)
        t = 22

        def dotted(flat):
            eps = gmm_prior.predict(nf.Tensor3(flat.reshape(4, 4, 1)), t)
            return float((eps.data * v.data).sum())

        fd = central_diff_grad(dotted, x.data.reshape(-1))
        adj = gmm_prior.adjoint(x, t, v).data.reshape(-1)
        assert np.abs(adj - fd).max() <= 1e-6 * np.abs(adj).max()

    def test_adjoint_linear_in_v(self, gmm_prior):
        x = nf.draw_standard_normal(nf.Rng(8), 4, 4, 1)
        v1 = nf.draw_standard_normal(nf.Rng(9), 4, 4, 1)
        v2 = nf.draw_standard_normal(nf.Rng(10), 4, 4, 1)
        t = 30
        lhs = gmm_prior.adjoint(
            x, t, nf.Tensor3(2.0 * v1.data - 3.0 * v2.data)
        ).data
        rhs = (2.0 * gmm_prior.adjoint(x, t, v1).data
               - 3.0 * gmm_prior.adjoint(x, t, v2).data)
        assert np.abs(lhs - rhs).max() <= 1e-10

    def test_transpose_identity(self, gmm_prior):
        # <J u, v> == <u, J^T v> with J u from a directional difference
        x = nf.draw_standard_normal(nf.Rng(11), 4, 4, 1)
        u = nf.draw_standard_normal(nf.Rng(12), 4, 4, 1)
        v = nf.draw_standard_normal(nf.Rng(13), 4, 4, 1)
        t = 18
        h = 1e-6
        plus = gmm_prior.predict(nf.Tensor3(x.data + h * u.data), t).data
        minus = gmm_prior.predict(nf.Tensor3(x.data - h * u.data), t).data
        ju = (plus - minus) / (2 * h)
        lhs = float((ju * v.data).sum())
        rhs = float((u.data * gmm_prior.adjoint(x, t, v).data).sum())
        assert abs(lhs - rhs) <= 1e-8 * max(1.0, abs(lhs))

    def test_weight_validation(self, small_schedule):
        with pytest.raises(ValueError, match="sum to 1"):
            nf.GaussianMixturePrior([0.5, 0.6], [1.0, 1.0],
                                    np.zeros((2, 16)), (4, 4, 1), small_schedule)


class TestGmmPriorFile:
    def test_roundtrip(self, tmp_path, small_schedule):
        means = [nf.draw_standard_normal(nf.Rng(s), 3, 3, 1) for s in range(2)]
        save_gmm_components(tmp_path / "prior.txt", [0.25, 0.75], [1.0, 0.5], means)
        w, var, m, shape = nf.load_gmm_components(tmp_path / "prior.txt")
        assert np.allclose(w, [0.25, 0.75])
        assert np.allclose(var, [1.0, 0.5])
        assert shape == (3, 3, 1)
        assert np.allclose(m[1], means[1].data.reshape(-1).astype(np.float32))

    def test_rejects_garbage(self, tmp_path):
        p = tmp_path / "prior.txt"
        p.write_text("0.5 nope mean.i2rt\n")
        with pytest.raises(FileFormatError):
            nf.load_gmm_components(p)


class TestMlpScore:
    def _identity_layers(self, d):
        w = np.concatenate([np.eye(d), np.zeros((d, 1))], axis=1)
        return [(w, np.zeros(d))]

    def test_identity_network(self, tmp_path):
        d = 12
        p = tmp_path / "id.i2rm"
        save_mlp(p, self._identity_layers(d))
        model = nf.load_mlp(p, total_steps=40)
        x = nf.draw_standard_normal(nf.Rng(0), 3, 4, 1)
        for t in (1, 20, 40):
            assert np.allclose(model.predict(x, t).data, x.data, atol=1e-7)

    def test_file_roundtrip_two_layers(self, tmp_path):
        rng = nf.Rng(1)
        d = 6
        layers = [
            (rng.standard_normal((5, d + 1)), rng.standard_normal(5)),
            (rng.standard_normal((d, 5)), rng.standard_normal(d)),
        ]
        p = tmp_path / "net.i2rm"
        save_mlp(p, layers)
        model = nf.load_mlp(p, total_steps=40)
        assert model.expected_size == d
        for (w, b), (lw, lb) in zip(layers, model.layers):
            assert np.allclose(lw, w.astype(np.float32), atol=0)
            assert np.allclose(lb, b.astype(np.float32), atol=0)

    def test_adjoint_matches_finite_differences(self, tmp_path):
        rng = nf.Rng(2)
        d = 8
        layers = [
            (0.5 * rng.standard_normal((7, d + 1)), 0.1 * rng.standard_normal(7)),
            (0.5 * rng.standard_normal((d, 7)), 0.1 * rng.standard_normal(d)),
        ]
        p = tmp_path / "net.i2rm"
        save_mlp(p, layers)
        model = nf.load_mlp(p, total_steps=40)
        x = nf.draw_standard_normal(nf.Rng(3), 2, 4, 1)
        v = nf.draw_standard_normal(nf.Rng(4), 2, 4, 1)
        t = 10

        def dotted(flat):
            out = model.predict(nf.Tensor3(flat.reshape(2, 4, 1)), t)
            return float((out.data * v.data).sum())

        fd = central_diff_grad(dotted, x.data.reshape(-1))
        adj = model.adjoint(x, t, v).data.reshape(-1)
        assert np.abs(adj - fd).max() <= 1e-5 * max(np.abs(adj).max(), 1e-12)

    def test_mismatched_dims_rejected(self, tmp_path):
        rng = nf.Rng(5)
        layers = [
            (rng.standard_normal((5, 9)), rng.standard_normal(5)),
            (rng.standard_normal((8, 6)), rng.standard_normal(8)),  # 6 != 5
        ]
        p = tmp_path / "bad.i2rm"
        save_mlp(p, layers)
        with pytest.raises(FileFormatError, match="does not match"):
            nf.load_mlp(p, total_steps=40)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.i2rm"
        p.write_bytes(b"XXXX" + bytes(8))
        with pytest.raises(FileFormatError, match="magic"):
            nf.load_mlp(p, total_steps=40)

    def test_truncated_payload(self, tmp_path):
        d = 4
        p = tmp_path / "trunc.i2rm"
        save_mlp(p, self._identity_layers(d))
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(FileFormatError, match="truncated"):
            nf.load_mlp(p, total_steps=40)
