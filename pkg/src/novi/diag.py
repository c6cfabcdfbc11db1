"""Self-checks of the Stein machinery against closed forms.

Each check returns a :class:`CheckResult` carrying the measured statistic,
its reference value, the Monte Carlo sample count and standard error, and
the tolerance it was judged against. ``run_all`` is what ``novi
stein-diag`` prints.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import data as dm
from . import kernel as kn
from . import nets
from . import oracle
from . import stein
from . import train as tr
from .errors import InputError

PASS, FAIL, ILL_POSED = "PASS", "FAIL", "ILL-POSED"


@dataclass
class CheckResult:
    name: str
    status: str
    statistic: float
    expected: float
    K: Optional[int] = None
    se: Optional[float] = None
    tol: str = ""
    detail: str = ""

    @property
    def passed(self):
        return self.status == PASS

    def line(self):
        parts = [f"[{self.status}] {self.name}: measured={self.statistic:.6g} expected={self.expected:.6g}"]
        if self.K is not None:
            parts.append(f"K={self.K}")
        if self.se is not None:
            parts.append(f"SE={self.se:.3g}")
        parts.append(f"tol={self.tol}")
        if self.detail:
            parts.append(self.detail)
        return " ".join(parts)


def _status(ok):
    return PASS if ok else FAIL


def stein_identity(seed=0, K=20_000, d=4, n_se=4.0):
    """E_p[s_p . phi + tr grad phi] = 0 for p = N(0, I) and a random MLP phi."""
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((K, d))
    net = nets.init_mlp([d, 32, d], nets.SIGMOID, rng)
    st, _ = stein.stein_terms(stein.RsdConfig(), -u, u, net, stein.draw_probes(rng, K, d))
    mean, se = float(st.mean()), float(st.std(ddof=1) / math.sqrt(K))
    return CheckResult("stein identity", _status(abs(mean) <= n_se * se), mean, 0.0, K, se, f"{n_se:g} SE")


def constant_field(lam=10.0, steps=200, a=(0.7, -1.1, 2.0), tol=1e-6, seed=0):
    """Gradient ascent over a constant field reaches |a|^2/(4 lam) at a/(2 lam)."""
    a = np.asarray(a, dtype=float)
    if not lam > 0:
        return CheckResult("constant field maximum", ILL_POSED, float("inf"), float("inf"), tol=f"{tol:g}",
                           detail=f"lambda={lam:g}: the maximizer is unbounded")
    best, arg = stein.optimal_value(a, lam)
    cfg = stein.RsdConfig(lam=lam)
    rng = np.random.default_rng(seed)
    d = a.size
    c = np.zeros(d)
    val = None
    for _ in range(steps):
        with ad.Tape() as tape:
            cv = tape.var(c)
            net = nets.MlpParams([d, d], nets.TANH, {"w0": np.zeros((d, d)), "b0": cv})
            val = stein.rsd_estimate(cfg, a[None], np.zeros((1, d)), net, rng)
            c = c + (1.0 / (4 * lam)) * ad.backward(val, cv)
    got = float(ad.value_of(val))
    arg_err = float(np.max(np.abs(c - arg)))
    ok = abs(got - best) <= tol and arg_err <= tol
    return CheckResult("constant field maximum", _status(ok), got, best, tol=f"{tol:g}",
                       detail=f"argmax_err={arg_err:.3g}")


def hutchinson(seed=0, K=100_000, d=3, n_se=3.0):
    """Probe mean of w^T J w against the exact trace from d JVPs."""
    rng = np.random.default_rng(seed)
    net = nets.init_mlp([d, 16, d], nets.TANH, rng)
    u0 = rng.standard_normal((1, d))
    exact = 0.0
    for i in range(d):
        e = np.zeros((1, d))
        e[0, i] = 1.0
        with ad.Tape() as tape:
            _, t = ad.jvp(lambda u: nets.discriminator_forward(net, u), [tape.var(u0)], [e])
        exact += float(ad.value_of(t)[0, i])
    v = np.asarray(ad.value_of(stein.hutchinson_div(net, np.repeat(u0, K, 0), stein.draw_probes(rng, K, d))))
    mean, se = float(v.mean()), float(v.std(ddof=1) / math.sqrt(K))
    return CheckResult("hutchinson trace", _status(abs(mean - exact) <= n_se * se), mean, exact, K, se,
                       f"{n_se:g} SE")


# ---------------------------------------------------------------------------
# single-layer conjugate problem


@dataclass
class Conjugate:
    dataset: dm.Dataset
    config: tr.TrainConfig
    checkpoint: tr.Checkpoint
    posterior: oracle.GaussianDist

    def exact_mean(self, x_star):
        layer = self.checkpoint.dgp_state.layers[0]
        return oracle.svgp_marginal(self.posterior.mean, self.posterior.cov, x_star, layer.z, layer.kernel)[0]


def conjugate_problem(seed=0, n=30, m=8, lengthscale=0.4, **overrides):
    """One SE layer on ``n`` noisy sine points, ``m`` evenly spaced inducing inputs.

    The initial checkpoint has its inducing inputs and lengthscale set
    explicitly, so training it with ``freeze_hyper`` targets a fixed
    Gaussian posterior over u.
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, (n, 1))
    y = np.sin(3 * x) + 0.1 * rng.standard_normal((n, 1))
    ds = dm.Dataset(x, y)
    kw = dict(num_layers=1, num_inducing=m, kernel=kn.SE, freeze_hyper=True, batch_size=n, eval_every=0,
              seed=seed)
    kw.update(overrides)
    cfg = tr.TrainConfig(**kw)
    ck = tr.init_checkpoint(cfg, ds)
    arrays = ck.dgp_state.arrays()
    arrays["layer0.z"] = np.linspace(-1, 1, m)[:, None]
    arrays["layer0.log_lengthscales"] = np.log(np.full(1, lengthscale))
    ck.dgp_state = ck.dgp_state.with_arrays(arrays)
    layer = ck.dgp_state.layers[0]
    post = oracle.exact_sgp_posterior(y[:, 0], x, layer.z, layer.kernel, ck.dgp_state.noise_variance)
    return Conjugate(ds, cfg, ck, post)


def train_discriminator(sample, score, d, lam, rng, steps=600, batch=2048, hidden=64,
                        activation=nets.TANH, lr=0.01):
    """Adam ascent of the RSD over a fresh ``[d, h, h, d]`` network.

    ``sample(k, rng)`` draws ``(k, d)`` samples from q; ``score(u)`` is the
    target score at those rows.
    """
    net = nets.init_mlp([d, hidden, hidden, d], activation, rng)
    adam = tr.AdamState()
    cfg = stein.RsdConfig(lam=lam)
    for _ in range(steps):
        u = sample(batch, rng)
        with ad.Tape() as tape:
            tn, leaves = net.taped(tape)
            names = list(leaves)
            loss = stein.discriminator_objective(cfg, score(u), u, tn, rng)
            grads = ad.backward(loss, [leaves[k] for k in names])
        net = net.with_params(tr.adam_step(adam, net.arrays(), dict(zip(names, grads)), lr))
    return net


def rsd_at(net, sample, score, lam, rng, K):
    """RSD estimate and its standard error from ``K`` fresh samples."""
    u = sample(K, rng)
    st, reg = stein.stein_terms(stein.RsdConfig(lam=lam), score(u), u, net, stein.draw_probes(rng, K, u.shape[1]))
    v = st - lam * reg
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(K))


def fisher_rsd(seed=0, lam=10.0, K=50_000, rel_tol=0.25, steps=600, scale=1.3, shift=0.3):
    """Optimized RSD of an affine generator against FD(q, p)/(4 lam).

    ``p`` is the exact posterior of the conjugate problem; ``q`` is the
    output law of an affine generator with widened covariance and shifted
    mean.
    """
    if not lam > 0:
        raise InputError("lambda must be positive")
    prob = conjugate_problem(seed)
    p = prob.posterior
    d = p.dim
    lp = p.factor().lower
    w = scale * lp
    b = p.mean + shift * np.sqrt(np.diag(p.cov))
    spec = nets.GeneratorSpec(noise_dim=d, out_dim=d, output_clamp=None)
    gen = nets.MlpParams([d, d], nets.TANH, {"w0": w, "b0": b})
    q = oracle.GaussianDist(b, w @ w.T)

    def sample(k, rng):
        return np.asarray(nets.generator_forward(spec, gen, rng.standard_normal((k, d))))

    rng = np.random.default_rng(seed + 1)
    net = train_discriminator(sample, p.score, d, lam, rng, steps=steps)
    est, se = rsd_at(net, sample, p.score, lam, rng, K)
    target = oracle.gaussian_fisher_divergence(q, p) / (4 * lam)
    rel = abs(est - target) / target
    return CheckResult("fisher divergence / (4 lambda)", _status(rel <= rel_tol), est, target, K, se,
                       f"{rel_tol:g} rel", f"rel_err={rel:.3g}")


def run_all(seed=0, lam=10.0, fisher_steps=600):
    out = [stein_identity(seed), constant_field(lam, seed=seed), hutchinson(seed)]
    if lam > 0:
        out.append(fisher_rsd(seed, lam, steps=fisher_steps))
    else:
        out.append(CheckResult("fisher divergence / (4 lambda)", ILL_POSED, float("inf"), float("inf"),
                               detail=f"lambda={lam:g}: the regularized discrepancy is unbounded"))
    return out
