"""Drift networks, prior, schedule and diffusion coefficient checks."""

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from bridgesampler import autodiff as ad
from bridgesampler.autodiff import Tape
from bridgesampler.nets import (EMBED_DIM, MLP, BetaSchedule, DiffCoeff,
                                LearnablePrior, ParamStore, ScoreNet,
                                anneal_logdensity, time_embedding)
from bridgesampler.targets import make_gmm


class TestParamStore:
    def test_register_and_blocks(self):
        store = ParamStore()
        store.register("a.x", np.ones(3), "alpha")
        store.register("b.y", np.ones(2), "fixed")
        assert store.trainable_names() == ["a.x"]
        assert store.block_names("fixed") == ["b.y"]

    def test_duplicate_and_bad_block(self):
        store = ParamStore()
        store.register("a", 1.0, "nu")
        with pytest.raises(ValueError):
            store.register("a", 2.0, "nu")
        with pytest.raises(ValueError):
            store.register("b", 1.0, "sideways")

    def test_load_values_validates(self):
        store = ParamStore()
        store.register("a", np.zeros(3), "nu")
        with pytest.raises(KeyError):
            store.load_values({"missing": np.zeros(3)})
        with pytest.raises(ValueError):
            store.load_values({"a": np.zeros(4)})


class TestTimeEmbedding:
    def test_shape_and_range(self):
        emb = time_embedding(0.5)
        assert emb.shape == (EMBED_DIM,)
        assert np.all(np.abs(emb) <= 1.0)

    def test_distinct_times_distinct_embeddings(self):
        assert not np.allclose(time_embedding(0.1), time_embedding(0.9))


class TestMLP:
    def test_zero_final_layer_means_zero_output(self):
        store = ParamStore()
        mlp = MLP(store, "m", 5, 3, "nu", np.random.default_rng(0))
        out = mlp.apply(store.values, np.random.default_rng(1).standard_normal((7, 5)))
        assert np.array_equal(out, np.zeros((7, 3)))

    def test_gradient_matches_finite_differences(self):
        store = ParamStore()
        mlp = MLP(store, "m", 3, 2, "nu", np.random.default_rng(2), hidden=8)
        # unfreeze the zero final layer so every weight matters
        store.values["m.w2"] = np.random.default_rng(3).standard_normal((8, 2))
        x = np.random.default_rng(4).standard_normal((6, 3))

        def loss(values):
            return float(np.sum(mlp.apply(values, x) ** 2))

        with Tape() as tape:
            params = store.nodes(tape)
            tape.backward(ad.reduce_sum(ad.square(mlp.apply(params, x))))
            for name in ("m.w0", "m.b1", "m.w2"):
                fd = np.zeros_like(store.values[name])
                flat = fd.reshape(-1)
                for i in range(flat.size):
                    for sign in (1.0, -1.0):
                        vals = dict(store.values)
                        pert = store.values[name].copy().reshape(-1)
                        pert[i] += sign * 1e-6
                        vals[name] = pert.reshape(store.values[name].shape)
                        flat[i] += sign * loss(vals)
                fd /= 2e-6
                assert np.allclose(params[name].grad, fd, rtol=1e-5, atol=1e-7)


class TestScoreNet:
    def test_zero_initialization_gives_zero_control(self):
        store = ParamStore()
        net = ScoreNet(store, "c", 3, "nu", seed=0, T=8)
        x = np.random.default_rng(1).standard_normal((5, 3))
        out = net.apply(store.values, x, 4, np.ones((5, 3)))
        assert np.array_equal(out, np.zeros((5, 3)))

    def test_grid_matches_per_step_apply(self):
        store = ParamStore()
        net = ScoreNet(store, "c", 2, "nu", seed=0, T=4)
        rng = np.random.default_rng(5)
        for name in store.values:  # random weights so the net is nontrivial
            store.values[name] = rng.standard_normal(store.values[name].shape) * 0.3
        x_grid = rng.standard_normal((5, 6, 2))
        lang = rng.standard_normal((5, 6, 2))
        times = np.array([4, 3, 2, 1, 0])
        embs = np.stack([time_embedding(t / 4) for t in times])
        grid_out = net.apply_grid(store.values, x_grid, embs, lang)
        for k, t in enumerate(times):
            step_out = net.apply(store.values, x_grid[k], int(t), lang[k])
            assert np.allclose(grid_out[k], step_out, atol=1e-12)

    def test_output_clipped(self):
        store = ParamStore()
        net = ScoreNet(store, "c", 2, "nu", seed=0, T=4)
        store.values["c.trunk.w2"] = np.full((64, 2), 1e6)
        x = np.ones((3, 2))
        out = net.apply(store.values, x, 1, np.zeros((3, 2)))
        assert np.all(np.abs(out) <= 1e4)


class TestLearnablePrior:
    def test_log_density_matches_scipy(self):
        store = ParamStore()
        prior = LearnablePrior(store, "p", 3, "nu", sigma_init=0.7)
        store.values["p.mean"] = np.array([1.0, -2.0, 0.5])
        x = np.random.default_rng(0).standard_normal((10, 3))
        ref = multivariate_normal(mean=store.values["p.mean"],
                                  cov=0.49 * np.eye(3)).logpdf(x)
        assert np.allclose(prior.log_density(store.values, x), ref, atol=1e-10)

    def test_score_is_gradient_of_log_density(self):
        store = ParamStore()
        prior = LearnablePrior(store, "p", 2, "nu", sigma_init=1.3)
        x = np.array([[0.3, -1.2]])
        eps = 1e-6
        for i in range(2):
            xp, xm = x.copy(), x.copy()
            xp[0, i] += eps
            xm[0, i] -= eps
            fd = (prior.log_density(store.values, xp)
                  - prior.log_density(store.values, xm)) / (2 * eps)
            assert prior.score(store.values, x)[0, i] == pytest.approx(
                fd.item(), rel=1e-6)

    def test_entropy_matches_monte_carlo(self):
        store = ParamStore()
        prior = LearnablePrior(store, "p", 4, "nu", sigma_init=2.0)
        rng = np.random.default_rng(3)
        x = prior.sample(store.values, 200_000, rng)
        mc = -np.mean(prior.log_density(store.values, x))
        assert prior.entropy(store.values) == pytest.approx(mc, rel=1e-2)


class TestBetaSchedule:
    def test_endpoints_and_monotonicity(self):
        store = ParamStore()
        sched = BetaSchedule(store, "s", 6, "nu")
        etas = [float(ad.value_of(sched.eta(store.values, t)))
                for t in range(7)]
        assert etas[0] == 1.0
        assert etas[-1] == 0.0
        assert all(a >= b for a, b in zip(etas, etas[1:]))

    def test_uniform_init_is_linear(self):
        store = ParamStore()
        sched = BetaSchedule(store, "s", 4, "nu")
        assert float(ad.value_of(sched.eta(store.values, 1))) == pytest.approx(0.75)

    def test_grid_matches_scalar_eta(self):
        store = ParamStore()
        sched = BetaSchedule(store, "s", 5, "nu")
        store.values["s.raw"] = np.random.default_rng(1).standard_normal(5)
        times = np.arange(6)
        grid = sched.eta_grid(store.values, times)
        for t in times:
            assert grid[t] == pytest.approx(
                float(ad.value_of(sched.eta(store.values, int(t)))), abs=1e-12)

    def test_betas_sum_to_one(self):
        store = ParamStore()
        sched = BetaSchedule(store, "s", 8, "nu")
        store.values["s.raw"] = np.random.default_rng(2).standard_normal(8)
        assert float(np.sum(sched.betas(store.values))) == pytest.approx(1.0)


class TestAnnealedDensity:
    def test_endpoints_are_exact(self):
        store = ParamStore()
        prior = LearnablePrior(store, "p", 2, "nu")
        target = make_gmm(d=2, m=3, box_halfwidth=4.0, seed=0)
        x = np.random.default_rng(1).standard_normal((5, 2))
        ld1, sc1 = anneal_logdensity(target, prior, store.values, 1.0, x)
        assert np.array_equal(ld1, target.log_density(x))
        assert np.array_equal(sc1, target.score(x))
        ld0, sc0 = anneal_logdensity(target, prior, store.values, 0.0, x)
        assert np.array_equal(ad.value_of(ld0),
                              ad.value_of(prior.log_density(store.values, x)))

    def test_interpolation_score_is_density_gradient(self):
        store = ParamStore()
        prior = LearnablePrior(store, "p", 2, "nu", sigma_init=1.5)
        target = make_gmm(d=2, m=3, box_halfwidth=4.0, seed=0)
        x = np.array([[0.4, -0.9]])
        eta = 0.3
        eps = 1e-6
        _, score = anneal_logdensity(target, prior, store.values, eta, x)
        for i in range(2):
            xp, xm = x.copy(), x.copy()
            xp[0, i] += eps
            xm[0, i] -= eps
            fp, _ = anneal_logdensity(target, prior, store.values, eta, xp)
            fm, _ = anneal_logdensity(target, prior, store.values, eta, xm)
            fd = (np.asarray(ad.value_of(fp)).item()
                  - np.asarray(ad.value_of(fm)).item()) / (2 * eps)
            assert ad.value_of(score)[0, i] == pytest.approx(fd, rel=1e-5)


class TestDiffCoeff:
    def test_positive_for_any_gamma(self):
        store = ParamStore()
        diff = DiffCoeff(store, "d", 3, "nu", sigma_init=0.2)
        assert np.allclose(diff.sigma(store.values), 0.2)
        store.values["d.gamma"] = np.array([-50.0, 0.0, 50.0])
        assert np.all(diff.sigma(store.values) > 0.0)
