import numpy as np
import pytest

from novi import data as dm
from novi import dgp
from novi import nets
from novi import train as tr
from novi.errors import DimensionError, FormatVersionError, InputError, NumericalError

TINY = dict(K=4, S=2, batch_size=16, num_inducing=5, hidden_dim=2, noise_dim=5, hidden_width=8,
            net_depth=2, predict_samples=5, eval_every=0, chunk=2)


def tiny_cfg(**kw):
    return tr.TrainConfig(**{**TINY, **kw})


@pytest.fixture(scope="module")
def toy():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (40, 2))
    y = np.sin(2 * x[:, :1]) * x[:, 1:]
    ds, _ = dm.normalize(dm.Dataset(x, y))
    return ds.subset(np.arange(32)), ds.subset(np.arange(32, 40))


def all_arrays(ck):
    return {k: v for k, v in tr._tensors(ck).items()}


def assert_same(a, b):
    ta, tb = all_arrays(a), all_arrays(b)
    assert ta.keys() == tb.keys()
    for k in ta:
        assert ta[k].tobytes() == tb[k].tobytes(), k


class TestAdam:
    def test_first_step_magnitude(self):
        st = tr.AdamState()
        g = np.array([0.3, -5.0, 1e-3])
        out = tr.adam_step(st, {"p": np.zeros(3)}, {"p": g}, 0.01)
        np.testing.assert_allclose(out["p"], -0.01 * np.sign(g), rtol=1e-4)
        assert st.step == 1

    def test_zero_gradient(self):
        st = tr.AdamState()
        p = {"p": np.array([1.0, 2.0])}
        for _ in range(10):
            p = tr.adam_step(st, p, {"p": np.zeros(2)}, 0.1)
        np.testing.assert_array_equal(p["p"], [1.0, 2.0])

    def test_quadratic(self):
        st = tr.AdamState()
        p = {"x": np.array(1.0)}
        for _ in range(200):
            p = tr.adam_step(st, p, {"x": 2 * p["x"]}, 0.1)
        assert abs(float(p["x"])) < 0.05

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            tr.adam_step(tr.AdamState(), {"p": np.zeros(2)}, {"p": np.zeros(3)}, 0.1)
        with pytest.raises(DimensionError):
            tr.adam_step(tr.AdamState(), {"p": np.zeros(2)}, {"q": np.zeros(2)}, 0.1)

    def test_step_counter_increases(self):
        st = tr.AdamState()
        p = {"p": np.ones(1)}
        for i in range(3):
            p = tr.adam_step(st, p, {"p": np.ones(1)}, 0.1)
            assert st.step == i + 1


class TestConfig:
    def test_defaults(self):
        cfg = tr.TrainConfig()
        assert (cfg.lam, cfg.n_c, cfg.K, cfg.S) == (10.0, 1, 32, 10)
        assert (cfg.lr_disc, cfg.lr_gen, cfg.lr_hyper) == (0.001, 0.001, 0.02)
        assert cfg.noise_dim == 200 and cfg.num_inducing == 100

    @pytest.mark.parametrize("kw", [{"lr_gen": 0.0}, {"n_c": 0}, {"K": 0}, {"S": 0}, {"batch_size": 0},
                                    {"iterations": -1}, {"clip_P": 2.0, "clip_Q": 1.0}, {"lam": 0.0},
                                    {"kernel": "linear"}, {"gen_activation": "relu"}])
    def test_invalid(self, kw):
        with pytest.raises(InputError):
            tr.TrainConfig(**kw)

    def test_from_dict(self):
        cfg = tr.TrainConfig.from_dict({"lam": 100, "iterations": 5.0})
        assert cfg.lam == 100.0 and cfg.iterations == 5
        with pytest.raises(InputError, match="bogus"):
            tr.TrainConfig.from_dict({"bogus": 1})


class TestTrain:
    def test_zero_iterations_returns_init(self, toy):
        trn, te = toy
        cfg = tiny_cfg(iterations=0)
        res = tr.train(cfg, trn, te)
        assert res.trace == []
        assert_same(res.checkpoint, tr.init_checkpoint(cfg, trn))
        res = tr.mle_baseline_train(cfg, trn, te)
        assert_same(res.checkpoint, tr.init_checkpoint(cfg, trn, tr.MLE))

    def test_schedule_order(self, toy):
        trn, _ = toy
        events = []
        res = tr.train(tiny_cfg(iterations=3, n_c=2), trn, on_event=lambda n, it: events.append((n, it)))
        expected = [(n, it) for it in (1, 2, 3) for n in ("disc", "disc", "gen", "hyper")]
        assert events == expected
        assert res.counters == {"disc": 6, "gen": 3, "hyper": 3, "u": 0}

    def test_clip_after_every_hyper_step(self, toy):
        trn, _ = toy
        cfg = tiny_cfg(iterations=3, clip_P=0.2, clip_Q=0.5, lr_hyper=0.5)
        res = tr.train(cfg, trn, snapshot_every=1)
        assert len(res.snapshots) == 3
        for ck in res.snapshots:
            assert ck.dgp_state.noise_variance > 0
            for layer in ck.dgp_state.layers:
                ls = layer.kernel.lengthscales
                assert np.all((ls >= 0.2) & (ls <= 0.5))

    def test_deterministic(self, toy):
        trn, te = toy
        cfg = tiny_cfg(iterations=3, eval_every=1)
        a = tr.train(cfg, trn, te)
        b = tr.train(cfg, trn, te)
        for ra, rb in zip(a.trace, b.trace):
            for k in ("rsd", "train_rmse", "test_rmse"):
                assert ra[k] == rb[k]
        assert_same(a.checkpoint, b.checkpoint)

    def test_metrics_file(self, toy, tmp_path):
        trn, te = toy
        p = tmp_path / "metrics.csv"
        tr.train(tiny_cfg(iterations=2, eval_every=2), trn, te, metrics_path=p)
        rows = tr.read_trace(p)
        assert p.read_text().splitlines()[0] == "iteration,rsd,train_rmse,test_rmse,wallclock_s"
        assert [r["iteration"] for r in rows] == [1, 2]
        assert rows[0]["train_rmse"] is None and rows[1]["test_rmse"] is not None

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_aborts_with_iteration(self, toy):
        trn, _ = toy
        bad = dm.Dataset(trn.x, np.where(np.arange(len(trn))[:, None] == 0, np.inf, trn.y))
        with pytest.raises(NumericalError, match=r"^iteration 1"):
            tr.train(tiny_cfg(iterations=2), bad)

    def test_detached_mode_runs(self, toy):
        trn, _ = toy
        res = tr.train(tiny_cfg(iterations=1, score_mode="detached"), trn)
        assert np.isfinite(res.trace[0]["rsd"])


class TestMleBaseline:
    def test_steps(self, toy):
        trn, te = toy
        res = tr.mle_baseline_train(tiny_cfg(iterations=3), trn, te)
        assert res.counters == {"disc": 0, "gen": 0, "hyper": 3, "u": 3}
        assert res.checkpoint.gen is None and res.checkpoint.u_point is not None

    def test_shared_log_joint(self, toy):
        trn, _ = toy
        ck = tr.mle_baseline_train(tiny_cfg(iterations=2), trn).checkpoint
        d = ck.u_point.shape[0]
        spec = nets.GeneratorSpec(noise_dim=3, out_dim=d, output_clamp=None)
        gen = nets.init_mlp([3, 4, d], nets.TANH, np.random.default_rng(0))
        gen = gen.with_params({"w0": np.zeros((4, 3)), "b0": np.zeros(4), "w1": np.zeros((d, 4)), "b1": ck.u_point})
        u_gen = nets.generator_forward(spec, gen, np.random.default_rng(1).standard_normal((1, 3)))
        batch = dgp.Minibatch(trn.x, trn.y, len(trn))
        eps = dgp.draw_eps(ck.dgp_state.specs, np.random.default_rng(2), len(trn), 1, 3)
        a = dgp.log_joint(ck.dgp_state, batch, u_gen, eps=eps)
        b = dgp.log_joint(ck.dgp_state, batch, ck.u_point[None], eps=eps)
        assert float(a[0]) == float(b[0])


class TestCheckpoint:
    def _bytes(self, path):
        return {p.name: p.read_bytes() for p in sorted(path.iterdir())}

    @pytest.mark.parametrize("mode", [tr.NOVI, tr.MLE])
    def test_byte_round_trip(self, toy, tmp_path, mode):
        trn, _ = toy
        _, stats = dm.normalize(trn)
        fn = tr.train if mode == tr.NOVI else tr.mle_baseline_train
        ck = fn(tiny_cfg(iterations=2), trn, norm_stats=stats).checkpoint
        tr.save_checkpoint(ck, tmp_path / "a")
        back = tr.load_checkpoint(tmp_path / "a")
        tr.save_checkpoint(back, tmp_path / "b")
        assert self._bytes(tmp_path / "a") == self._bytes(tmp_path / "b")
        assert_same(ck, back)
        assert back.iteration == 2 and back.config == ck.config

    def test_manifest_layout(self, toy, tmp_path):
        trn, _ = toy
        ck = tr.init_checkpoint(tiny_cfg(), trn)
        tr.save_checkpoint(ck, tmp_path / "c")
        lines = (tmp_path / "c" / "manifest.txt").read_text().splitlines()
        assert lines[0] == "novi-checkpoint 1"
        rec = next(l for l in lines if l.startswith("tensor dgp/log_noise "))
        assert rec.split()[2] == "[]"
        raw = (tmp_path / "c" / rec.split()[3]).read_bytes()
        assert np.frombuffer(raw, "<f8")[0] == float(ck.dgp_state.log_noise)

    def test_version_mismatch(self, toy, tmp_path):
        trn, _ = toy
        tr.save_checkpoint(tr.init_checkpoint(tiny_cfg(), trn), tmp_path / "v")
        mf = tmp_path / "v" / "manifest.txt"
        mf.write_text(mf.read_text().replace("novi-checkpoint 1", "novi-checkpoint 99", 1))
        with pytest.raises(FormatVersionError):
            tr.load_checkpoint(tmp_path / "v")

    def test_missing(self, tmp_path):
        with pytest.raises(InputError):
            tr.load_checkpoint(tmp_path / "none")

    def test_resume_matches_uninterrupted(self, toy, tmp_path):
        trn, te = toy
        full = tr.train(tiny_cfg(iterations=4), trn, te)
        half = tr.train(tiny_cfg(iterations=2), trn, te)
        tr.save_checkpoint(half.checkpoint, tmp_path / "h")
        resumed = tr.train(tiny_cfg(iterations=4), trn, te, resume=tr.load_checkpoint(tmp_path / "h"))
        assert_same(full.checkpoint, resumed.checkpoint)
        assert [r["rsd"] for r in full.trace[2:]] == [r["rsd"] for r in resumed.trace]
