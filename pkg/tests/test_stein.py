import math

import numpy as np
import pytest

from novi import autodiff as ad
from novi import dgp
from novi import kernel as kn
from novi import nets
from novi import oracle
from novi import stein
from novi.errors import DimensionError, InputError


def affine(w, b):
    w = np.asarray(w, dtype=float)
    return nets.MlpParams([w.shape[1], w.shape[0]], nets.TANH, {"w0": w, "b0": np.asarray(b, dtype=float)})


def constant_net(c):
    c = np.asarray(c, dtype=float)
    return affine(np.zeros((c.size, c.size)), c)


def probe_mean(net, d, n, rng, dist=stein.GAUSSIAN):
    u = rng.standard_normal((n, d))
    v = stein.hutchinson_div(net, u, stein.draw_probes(rng, n, d, 1, dist))
    v = np.asarray(ad.value_of(v))
    return v.mean(), v.std(ddof=1) / math.sqrt(n)


class TestConfig:
    @pytest.mark.parametrize("kw", [{"lam": 0.0}, {"lam": -1.0}, {"num_probes": 0},
                                    {"probe_dist": "uniform"}, {"score_mode": "half"}])
    def test_invalid(self, kw):
        with pytest.raises(InputError):
            stein.RsdConfig(**kw)

    def test_defaults(self):
        cfg = stein.RsdConfig()
        assert (cfg.lam, cfg.num_probes, cfg.probe_dist, cfg.score_mode) == (10.0, 1, "gaussian", "attached")


class TestHutchinson:
    def test_identity_trace(self):
        rng = np.random.default_rng(0)
        mean, se = probe_mean(affine(np.eye(4), np.zeros(4)), 4, 100_000, rng)
        assert abs(mean - 4.0) <= 3 * se

    def test_constant_field(self):
        rng = np.random.default_rng(1)
        net = constant_net([1.0, 2.0, 3.0])
        v = stein.hutchinson_div(net, rng.standard_normal((5, 3)), stein.draw_probes(rng, 5, 3, 2))
        np.testing.assert_array_equal(ad.value_of(v), np.zeros(5))

    @pytest.mark.parametrize("dist", [stein.GAUSSIAN, stein.RADEMACHER])
    def test_random_affine_trace(self, dist):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((3, 3))
        mean, se = probe_mean(affine(a, rng.standard_normal(3)), 3, 100_000, rng, dist)
        assert abs(mean - np.trace(a)) <= 3 * se

    def test_multiple_probes_average(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((3, 3))
        probes = stein.draw_probes(rng, 2, 3, 4)
        v = ad.value_of(stein.hutchinson_div(affine(a, np.zeros(3)), np.zeros((2, 3)), probes))
        ref = np.einsum("kpi,ij,kpj->k", probes, a, probes) / 4
        np.testing.assert_allclose(v, ref, atol=1e-13)

    def test_probe_shape(self):
        with pytest.raises(DimensionError):
            stein.hutchinson_div(affine(np.eye(3), np.zeros(3)), np.zeros((2, 3)), np.zeros((2, 1, 4)))


class TestRsdEstimate:
    def test_zero_field(self):
        rng = np.random.default_rng(4)
        net = constant_net(np.zeros(3))
        val = stein.rsd_estimate(stein.RsdConfig(), rng.standard_normal((6, 3)), rng.standard_normal((6, 3)), net, rng)
        assert float(ad.value_of(val)) == 0.0

    def test_constant_field_single_sample(self):
        a, c, lam = np.array([1.0, -2.0]), np.array([0.3, 0.5]), 2.0
        cfg = stein.RsdConfig(lam=lam)
        val = stein.rsd_estimate(cfg, a[None], np.zeros((1, 2)), constant_net(c), np.random.default_rng(0))
        assert float(ad.value_of(val)) == pytest.approx(a @ c - lam * c @ c, abs=1e-15)

    def test_constant_field_maximum(self):
        a, lam = np.array([1.0, -2.0, 0.5]), 10.0
        best, arg = stein.optimal_value(a, lam)
        assert best == pytest.approx(a @ a / (4 * lam), rel=1e-15)
        cfg = stein.RsdConfig(lam=lam)
        val = stein.rsd_estimate(cfg, a[None], np.zeros((1, 3)), constant_net(arg), np.random.default_rng(0))
        assert float(ad.value_of(val)) == pytest.approx(best, rel=1e-14)
        with pytest.raises(InputError):
            stein.optimal_value(a, 0.0)

    def test_gradient_ascent_reaches_closed_form(self):
        a, lam = np.array([0.7, -1.1, 2.0]), 10.0
        cfg = stein.RsdConfig(lam=lam)
        c = np.zeros(3)
        rng = np.random.default_rng(5)
        for _ in range(200):
            with ad.Tape() as tape:
                cv = tape.var(c)
                net = affine(np.zeros((3, 3)), np.zeros(3)).with_params({"w0": np.zeros((3, 3)), "b0": cv})
                val = stein.rsd_estimate(cfg, a[None], np.zeros((1, 3)), net, rng)
                c = c + (1.0 / (4 * lam)) * ad.backward(val, cv)
        best, arg = stein.optimal_value(a, lam)
        np.testing.assert_allclose(c, arg, atol=1e-6)
        assert abs(float(ad.value_of(val)) - best) <= 1e-6

    def test_stein_identity_on_matched_gaussians(self):
        rng = np.random.default_rng(6)
        k, d = 20_000, 4
        u = rng.standard_normal((k, d))
        net = nets.init_mlp([d, 32, d], nets.SIGMOID, rng)
        cfg = stein.RsdConfig(lam=10.0)
        probes = stein.draw_probes(rng, k, d)
        st, reg = stein.stein_terms(cfg, -u, u, net, probes)
        assert abs(st.mean()) <= 4 * st.std(ddof=1) / math.sqrt(k)
        est = float(ad.value_of(stein.rsd_estimate(cfg, -u, u, net, probes=probes)))
        sd = (st - cfg.lam * reg).std(ddof=1) / math.sqrt(k)
        assert abs(est - (-cfg.lam * reg.mean())) <= 4 * sd

    def test_linear_in_scores(self):
        rng = np.random.default_rng(7)
        net = nets.init_mlp([3, 8, 3], nets.TANH, rng)
        u, s = rng.standard_normal((10, 3)), rng.standard_normal((10, 3))
        probes = stein.draw_probes(rng, 10, 3)
        cfg = stein.RsdConfig()

        def r(scores):
            return float(ad.value_of(stein.rsd_estimate(cfg, scores, u, net, probes=probes)))

        first = float(np.mean(np.sum(s * nets.discriminator_forward(net, u), 1)))
        assert r(2 * s) - r(0 * s) == pytest.approx(2 * first, abs=1e-12)
        assert r(s) - r(0 * s) == pytest.approx(first, abs=1e-12)

    def test_misaligned_rows(self):
        rng = np.random.default_rng(8)
        with pytest.raises(DimensionError):
            stein.rsd_estimate(stein.RsdConfig(), np.zeros((4, 3)), np.zeros((5, 3)), constant_net(np.zeros(3)), rng)

    def test_optimal_affine_field_gives_fisher_over_4lam(self):
        rng = np.random.default_rng(9)
        d, lam, k = 3, 10.0, 50_000
        aq = rng.standard_normal((d, d)) * 0.4 + np.eye(d)
        q = oracle.GaussianDist(rng.standard_normal(d) * 0.3, aq @ aq.T)
        p = oracle.GaussianDist(np.zeros(d), np.eye(d))
        pq, pp = np.linalg.inv(q.cov), np.linalg.inv(p.cov)
        # phi* = (s_p - s_q) / (2 lam), affine in u
        w = (pq - pp) / (2 * lam)
        b = (pp @ p.mean - pq @ q.mean) / (2 * lam)
        u = q.sample(rng, k)
        est = float(ad.value_of(stein.rsd_estimate(stein.RsdConfig(lam=lam), p.score(u), u, affine(w, b), rng)))
        target = oracle.gaussian_fisher_divergence(q, p) / (4 * lam)
        assert abs(est - target) <= 0.05 * target


class TestDiscriminatorObjective:
    def setup_method(self):
        rng = np.random.default_rng(10)
        self.net = nets.init_mlp([3, 6, 3], nets.SIGMOID, rng)
        self.u = rng.standard_normal((5, 3))
        self.s = rng.standard_normal((5, 3))
        self.probes = stein.draw_probes(rng, 5, 3, 2)
        self.cfg = stein.RsdConfig(lam=2.0)

    def test_is_negated_rsd(self):
        a = stein.discriminator_objective(self.cfg, self.s, self.u, self.net, probes=self.probes)
        b = stein.rsd_estimate(self.cfg, self.s, self.u, self.net, probes=self.probes)
        assert float(ad.value_of(a)) == -float(ad.value_of(b))

    def test_gradient_vs_fd(self):
        arrays = self.net.arrays()
        with ad.Tape() as tape:
            tn, leaves = self.net.taped(tape)
            names = list(leaves)
            grads = ad.backward(stein.discriminator_objective(self.cfg, self.s, self.u, tn, probes=self.probes),
                                [leaves[k] for k in names])
        for name, g in zip(names, grads):
            def f(val, name=name):
                a = dict(arrays)
                a[name] = val
                return float(ad.value_of(stein.discriminator_objective(
                    self.cfg, self.s, self.u, self.net.with_params(a), probes=self.probes)))
            fd = oracle.central_fd(f, arrays[name])
            assert np.linalg.norm(g - fd) <= 1e-4 * max(np.linalg.norm(fd), 1e-8), name

    def test_nonzero_gradient_at_zero_field(self):
        net = self.net.with_params({k: np.zeros_like(v) for k, v in self.net.params.items()})
        with ad.Tape() as tape:
            tn, leaves = net.taped(tape)
            g = ad.backward(stein.discriminator_objective(self.cfg, self.s, self.u, tn, probes=self.probes), leaves["b1"])
        np.testing.assert_allclose(g, -self.s.mean(axis=0), atol=1e-14)
        assert np.linalg.norm(g) > 0


def toy_setup(seed=11):
    """One-layer DGP with D_total = 4 and small generator/discriminator."""
    rng = np.random.default_rng(seed)
    z = np.linspace(-1, 1, 4)[:, None]
    state = dgp.init_state([dgp.LayerSpec(1, 1, 4)], rng, kn.RQ, noise_variance=0.1, z_init=z)
    x = rng.uniform(-1, 1, (6, 1))
    batch = dgp.Minibatch(x, np.sin(3 * x), 6)
    spec = nets.GeneratorSpec(noise_dim=3, out_dim=4, output_clamp=10.0)
    gen = nets.init_mlp([3, 8, 4], nets.PRELU, rng)
    disc = nets.init_mlp([4, 8, 4], nets.SIGMOID, rng)
    k = 5
    eps = rng.standard_normal((k, 3))
    probes = stein.draw_probes(rng, k, 4)
    lik_eps = dgp.draw_eps(state.specs, rng, 6, k, 3)
    return state, batch, spec, gen, disc, eps, probes, lik_eps


class TestGeneratorObjective:
    def _grads(self, cfg, state, batch, spec, gen, disc, eps, probes, lik_eps):
        def score_fn(u):
            if isinstance(u, ad.Var):
                return dgp.taped_posterior_score(state, batch, u, lik_eps)
            return dgp.posterior_score(state, batch, u, eps=lik_eps)

        with ad.Tape() as tape:
            tg, leaves = gen.taped(tape)
            names = list(leaves)
            obj = stein.generator_objective(cfg, spec, tg, disc, eps, score_fn, probes=probes)
            return float(ad.value_of(obj)), dict(zip(names, ad.backward(obj, [leaves[k] for k in names])))

    def test_zero_field_detached_has_zero_gradient(self):
        state, batch, spec, gen, disc, eps, probes, lik_eps = toy_setup()
        disc = disc.with_params({k: np.zeros_like(v) for k, v in disc.params.items()})
        cfg = stein.RsdConfig(score_mode=stein.DETACHED)
        val, grads = self._grads(cfg, state, batch, spec, gen, disc, eps, probes, lik_eps)
        assert val == 0.0
        for g in grads.values():
            assert np.all(g == 0.0)

    def test_attached_gradient_vs_crn_fd(self):
        state, batch, spec, gen, disc, eps, probes, lik_eps = toy_setup()
        cfg = stein.RsdConfig(lam=5.0)
        _, grads = self._grads(cfg, state, batch, spec, gen, disc, eps, probes, lik_eps)
        arrays = gen.arrays()

        def f(name, val):
            a = dict(arrays)
            a[name] = val
            u = np.asarray(nets.generator_forward(spec, gen.with_params(a), eps))
            s = dgp.posterior_score(state, batch, u, eps=lik_eps)
            return float(ad.value_of(stein.rsd_estimate(cfg, s, u, disc, probes=probes)))

        for name, g in grads.items():
            fd = oracle.central_fd(lambda v: f(name, v), arrays[name])
            assert np.linalg.norm(g - fd) <= 1e-3 * max(np.linalg.norm(fd), 1e-8), name

    def test_detached_differs_from_attached(self):
        setup = toy_setup()
        _, ga = self._grads(stein.RsdConfig(), *setup)
        _, gd = self._grads(stein.RsdConfig(score_mode=stein.DETACHED), *setup)
        assert any(not np.allclose(ga[k], gd[k], rtol=1e-6, atol=0) for k in ga)

    def test_surrogate_matches_direct_gradient(self):
        state, batch, spec, gen, disc, eps, probes, lik_eps = toy_setup()
        cfg = stein.RsdConfig()
        val, direct = self._grads(cfg, state, batch, spec, gen, disc, eps, probes, lik_eps)
        u0 = np.asarray(nets.generator_forward(spec, gen, eps))
        phi = np.asarray(nets.discriminator_forward(disc, u0))
        score, hvp = dgp.score_and_hvp(state, batch, u0, phi, lik_eps)
        with ad.Tape() as tape:
            tg, leaves = gen.taped(tape)
            u = nets.generator_forward(spec, tg, eps)
            sur, rsd_value = stein.generator_surrogate(cfg, u, disc, score, hvp, probes)
            names = list(leaves)
            grads = dict(zip(names, ad.backward(sur, [leaves[k] for k in names])))
        assert rsd_value == pytest.approx(val, rel=1e-12)
        for k in names:
            np.testing.assert_allclose(grads[k], direct[k], rtol=1e-9, atol=1e-12)
