"""Adversarial training loop, MLE baseline, Adam, checkpoints and metric traces.

One outer iteration runs ``n_c`` discriminator steps, one generator step
and one hyperparameter step, in that order. All randomness comes from a
single ``numpy`` PCG64 generator whose state is saved with checkpoints,
so a resumed run replays exactly the draws of an uninterrupted one.
Evaluation draws from a separate generator seeded by ``(seed, iteration)``
and never touches the training stream.
"""

import csv
import json
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from . import autodiff as ad
from . import data as dmod
from . import dgp
from . import kernel as kn
from . import nets
from . import oracle
from . import stein
from .errors import DimensionError, FormatVersionError, InputError, NumericalError

FORMAT_VERSION = 1
MAGIC = "novi-checkpoint"
METRIC_COLUMNS = ("iteration", "rsd", "train_rmse", "test_rmse", "wallclock_s")


@dataclass
class TrainConfig:
    lam: float = 10.0
    n_c: int = 1
    K: int = 32
    S: int = 10
    lr_disc: float = 0.001
    lr_gen: float = 0.001
    lr_hyper: float = 0.02
    lr_mle_u: float = 0.02
    batch_size: int = 256
    iterations: int = 600
    seed: int = 0
    score_mode: str = stein.ATTACHED
    num_probes: int = 1
    probe_dist: str = stein.GAUSSIAN
    clip_P: float = 1e-3
    clip_Q: float = 1e3
    num_layers: int = 2
    hidden_dim: int = 10
    num_inducing: int = 100
    kernel: str = kn.RQ
    noise_dim: int = 200
    hidden_width: int = 256
    net_depth: int = 3
    gen_activation: str = nets.PRELU
    disc_activation: str = nets.SIGMOID
    output_clamp: float = 10.0
    init_noise_fraction: float = 0.1
    freeze_hyper: bool = False
    eval_every: int = 50
    predict_samples: int = 100
    chunk: int = 8

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("lr_disc", "lr_gen", "lr_hyper", "lr_mle_u", "lam"):
            if not float(getattr(self, name)) > 0:
                raise InputError(f"config field {name!r} must be positive")
        for name in ("n_c", "K", "S", "batch_size", "num_layers", "hidden_dim", "num_inducing",
                     "noise_dim", "hidden_width", "net_depth", "predict_samples", "chunk", "num_probes"):
            if int(getattr(self, name)) < 1:
                raise InputError(f"config field {name!r} must be at least 1")
        if int(self.iterations) < 0:
            raise InputError("config field 'iterations' must be non-negative")
        if int(self.eval_every) < 0:
            raise InputError("config field 'eval_every' must be non-negative")
        kn.validate_interval(self.clip)
        stein.RsdConfig(self.lam, self.num_probes, self.probe_dist, self.score_mode)
        nets.canonical_activation(self.gen_activation)
        nets.canonical_activation(self.disc_activation)
        if self.kernel not in kn.KINDS:
            raise InputError(f"config field 'kernel' must be one of {kn.KINDS}")
        if not self.init_noise_fraction > 0:
            raise InputError("config field 'init_noise_fraction' must be positive")
        if self.output_clamp is not None and not self.output_clamp > 0:
            raise InputError("config field 'output_clamp' must be positive")

    @property
    def clip(self):
        return kn.ClipInterval(self.clip_P, self.clip_Q)

    @property
    def rsd(self):
        return stein.RsdConfig(self.lam, self.num_probes, self.probe_dist, self.score_mode)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]

    @classmethod
    def from_dict(cls, d):
        known = set(cls.field_names())
        unknown = sorted(set(d) - known)
        if unknown:
            raise InputError(f"unknown config key(s): {', '.join(unknown)}")
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for k, v in d.items():
            t = types[k]
            if t in (int, "int") and not isinstance(v, bool):
                if isinstance(v, float) and not v.is_integer():
                    raise InputError(f"config field {k!r} must be an integer, got {v}")
                v = int(v)
            elif t in (float, "float") and v is not None:
                v = float(v)
            elif t in (bool, "bool"):
                v = bool(v)
            kw[k] = v
        return cls(**kw)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(state, params, grads, lr):
    """One bias-corrected Adam descent step; ``state`` is updated in place."""
    if set(grads) - set(params):
        raise DimensionError(f"gradients for unknown parameters: {sorted(set(grads) - set(params))}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    out = dict(params)
    for k, g in grads.items():
        p = np.asarray(params[k], dtype=float)
        g = np.asarray(g, dtype=float)
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {k!r} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(k)
        v = state.v.get(k)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[k] = m
        state.v[k] = v
        out[k] = p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return out


# ---------------------------------------------------------------------------
# state containers


NOVI = "novi"
MLE = "mle"


@dataclass
class Checkpoint:
    config: TrainConfig
    mode: str
    dgp_state: dgp.DgpState
    iteration: int
    rng_state: dict
    gen_spec: Optional[nets.GeneratorSpec] = None
    gen: Optional[nets.MlpParams] = None
    disc: Optional[nets.MlpParams] = None
    u_point: Optional[np.ndarray] = None
    adam: Dict[str, AdamState] = field(default_factory=dict)
    norm_stats: Optional[dmod.NormStats] = None

    def sampler(self):
        if self.mode == MLE:
            return oracle.constant_sampler(self.u_point)
        return oracle.generator_sampler(self.gen_spec, self.gen)

    def predict(self, x, num_samples=None, rng=None, zero_eps=False):
        n = num_samples or self.config.predict_samples
        return oracle.novi_predict(self.dgp_state, self.sampler(), x, n, rng, zero_eps)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    trace: List[dict]
    snapshots: List[Checkpoint] = field(default_factory=list)
    counters: Dict[str, int] = field(default_factory=dict)


def _rng(seed_or_state):
    rng = np.random.Generator(np.random.PCG64())
    if isinstance(seed_or_state, dict):
        rng.bit_generator.state = seed_or_state
    else:
        rng = np.random.Generator(np.random.PCG64(int(seed_or_state)))
    return rng


def eval_rng(seed, iteration):
    return np.random.Generator(np.random.PCG64([int(seed), int(iteration), 7]))


def init_checkpoint(cfg, train_ds, mode=NOVI, norm_stats=None):
    """Initial model, networks and optimizer states for ``train_ds``."""
    rng = _rng(cfg.seed)
    specs = dgp.make_specs(train_ds.input_dim, train_ds.output_dim, cfg.num_layers,
                           cfg.hidden_dim, cfg.num_inducing)
    y_var = float(np.mean(np.var(train_ds.y, axis=0)))
    noise = max(cfg.init_noise_fraction * y_var, 1e-6)
    state = dgp.init_state(specs, rng, cfg.kernel, noise_variance=noise).clipped(cfg.clip)
    d_total = dgp.total_size(specs)
    ck = Checkpoint(cfg, mode, state, 0, None, norm_stats=norm_stats)
    if mode == NOVI:
        ck.gen_spec = nets.GeneratorSpec(cfg.noise_dim, d_total, cfg.output_clamp)
        ck.gen = nets.init_mlp(nets.default_widths(cfg.noise_dim, d_total, cfg.hidden_width, cfg.net_depth),
                               cfg.gen_activation, rng)
        ck.disc = nets.init_mlp(nets.default_widths(d_total, d_total, cfg.hidden_width, cfg.net_depth),
                                cfg.disc_activation, rng)
        ck.adam = {"disc": AdamState(), "gen": AdamState(), "hyper": AdamState()}
    elif mode == MLE:
        ck.u_point = rng.standard_normal(d_total)
        ck.adam = {"u": AdamState(), "hyper": AdamState()}
    else:
        raise InputError(f"unknown training mode {mode!r}")
    ck.rng_state = rng.bit_generator.state
    return ck


def _check_finite(it, what, values):
    for k, v in values.items():
        if not np.all(np.isfinite(v)):
            raise NumericalError(f"iteration {it}: non-finite {what} for {k!r}")


def _hyper_grads(state, batch, u, eps, chunk):
    """Gradient of ``mean_k log_joint(U_k)`` with respect to the hyperparameters."""
    k = u.shape[0]
    total = None
    value = 0.0
    for a in range(0, k, chunk):
        sl = slice(a, min(a + chunk, k))
        with ad.Tape() as tape:
            sv, leaves = dgp.taped_state(state, tape)
            lj = ad.sum(dgp.log_joint(sv, batch, u[sl], eps=[e[sl] for e in eps]))
            grads = ad.backward(lj, list(leaves.values()))
            value += float(ad.value_of(lj))
            g = dict(zip(leaves, grads))
        total = g if total is None else {n: total[n] + g[n] for n in total}
    return {n: v / k for n, v in total.items()}, value / k


def _hyper_step(ck, cfg, batch, u, rng, it):
    state = ck.dgp_state
    eps = dgp.draw_eps(state.specs, rng, batch.size, u.shape[0], cfg.S)
    grads, _ = _hyper_grads(state, batch, u, eps, cfg.chunk)
    _check_finite(it, "hyperparameter gradient", grads)
    # ascent on the log joint
    new = adam_step(ck.adam["hyper"], state.arrays(), {k: -g for k, g in grads.items()}, cfg.lr_hyper)
    ck.dgp_state = state.with_arrays(new).clipped(cfg.clip)


def _disc_step(ck, cfg, x, y, rng, it):
    batch = dgp.sample_minibatch(x, y, cfg.batch_size, rng)
    eps = rng.standard_normal((cfg.K, cfg.noise_dim))
    u = np.asarray(ad.value_of(nets.generator_forward(ck.gen_spec, ck.gen, eps)))
    leps = dgp.draw_eps(ck.dgp_state.specs, rng, batch.size, cfg.K, cfg.S)
    scores = dgp.posterior_score(ck.dgp_state, batch, u, eps=leps, chunk=cfg.chunk)
    probes = stein.draw_probes(rng, cfg.K, u.shape[1], cfg.num_probes, cfg.probe_dist)
    with ad.Tape() as tape:
        dv, leaves = ck.disc.taped(tape)
        uv = tape.var(u)
        loss = stein.discriminator_objective(cfg.rsd, scores, uv, dv, probes=probes)
        grads = dict(zip(leaves, ad.backward(loss, list(leaves.values()))))
        value = -float(ad.value_of(loss))
    _check_finite(it, "discriminator gradient", grads)
    ck.disc = ck.disc.with_params(adam_step(ck.adam["disc"], ck.disc.arrays(), grads, cfg.lr_disc))
    return value


def _gen_step(ck, cfg, x, y, rng, it):
    batch = dgp.sample_minibatch(x, y, cfg.batch_size, rng)
    eps = rng.standard_normal((cfg.K, cfg.noise_dim))
    leps = dgp.draw_eps(ck.dgp_state.specs, rng, batch.size, cfg.K, cfg.S)
    probes = stein.draw_probes(rng, cfg.K, ck.gen_spec.out_dim, cfg.num_probes, cfg.probe_dist)
    with ad.Tape() as tape:
        gv, leaves = ck.gen.taped(tape)
        u = nets.generator_forward(ck.gen_spec, gv, eps)
        uval = np.array(u.value)
        if cfg.score_mode == stein.ATTACHED:
            phi = np.asarray(ad.value_of(nets.discriminator_forward(ck.disc, uval)))
            s, h = dgp.score_and_hvp(ck.dgp_state, batch, uval, phi, leps, chunk=cfg.chunk)
        else:
            s = dgp.posterior_score(ck.dgp_state, batch, uval, eps=leps, chunk=cfg.chunk)
            h = None
        sur, rsd_value = stein.generator_surrogate(cfg.rsd, u, ck.disc, s, h, probes)
        grads = dict(zip(leaves, ad.backward(sur, list(leaves.values()))))
    _check_finite(it, "generator gradient", grads)
    if not np.isfinite(rsd_value):
        raise NumericalError(f"iteration {it}: non-finite RSD estimate")
    ck.gen = ck.gen.with_params(adam_step(ck.adam["gen"], ck.gen.arrays(), grads, cfg.lr_gen))
    return rsd_value, batch, uval


def _mle_step(ck, cfg, x, y, rng, it):
    batch = dgp.sample_minibatch(x, y, cfg.batch_size, rng)
    u = ck.u_point[None, :]
    eps = dgp.draw_eps(ck.dgp_state.specs, rng, batch.size, 1, cfg.S)
    score = dgp.posterior_score(ck.dgp_state, batch, u, eps=eps)[0]
    _check_finite(it, "inducing gradient", {"u": score})
    ck.u_point = adam_step(ck.adam["u"], {"u": ck.u_point}, {"u": -score}, cfg.lr_mle_u)["u"]
    return batch, u


def evaluate(ck, ds, rng=None, num_samples=None):
    """Normalized RMSE of the predictive mean on ``ds``."""
    rng = rng if rng is not None else eval_rng(ck.config.seed, ck.iteration)
    mean, _ = ck.predict(ds.x, num_samples, rng)
    return dmod.rmse(mean, ds.y)


class MetricSink:
    """Append-only CSV writer for the metric trace."""

    def __init__(self, path, append=False):
        self.path = Path(path) if path else None
        if self.path and not (append and self.path.exists()):
            with open(self.path, "w", newline="") as fh:
                csv.writer(fh).writerow(METRIC_COLUMNS)

    def write(self, row):
        if not self.path:
            return
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow([_fmt_metric(row[c]) for c in METRIC_COLUMNS])


def _fmt_metric(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _run(ck, cfg, train_ds, test_ds, iterations, metrics_path, on_event, snapshot_every, append):
    rng = _rng(ck.rng_state)
    x, y = train_ds.x, train_ds.y
    if x.shape[1] != ck.dgp_state.input_dim:
        raise DimensionError(f"model expects d = {ck.dgp_state.input_dim}, dataset has {x.shape[1]}")
    sink = MetricSink(metrics_path, append)
    trace = []
    snapshots = []
    counters = {"disc": 0, "gen": 0, "hyper": 0, "u": 0}
    emit = on_event or (lambda name, it: None)
    t0 = time.perf_counter()
    while ck.iteration < iterations:
        it = ck.iteration + 1
        try:
            if ck.mode == NOVI:
                for _ in range(cfg.n_c):
                    _disc_step(ck, cfg, x, y, rng, it)
                    counters["disc"] += 1
                    emit("disc", it)
                rsd_value, batch, u = _gen_step(ck, cfg, x, y, rng, it)
                counters["gen"] += 1
                emit("gen", it)
            else:
                batch, u = _mle_step(ck, cfg, x, y, rng, it)
                rsd_value = None
                counters["u"] += 1
                emit("u", it)
            if not cfg.freeze_hyper:
                _hyper_step(ck, cfg, batch, u, rng, it)
                counters["hyper"] += 1
                emit("hyper", it)
        except NumericalError as e:
            msg = str(e)
            if not msg.startswith("iteration"):
                msg = f"iteration {it}: {msg}"
            raise NumericalError(msg) from e
        ck.iteration = it
        ck.rng_state = rng.bit_generator.state
        row = {"iteration": it, "rsd": rsd_value, "train_rmse": None, "test_rmse": None,
               "wallclock_s": time.perf_counter() - t0}
        if (cfg.eval_every and it % cfg.eval_every == 0) or it == iterations:
            row["train_rmse"] = evaluate(ck, train_ds)
            if test_ds is not None and len(test_ds):
                row["test_rmse"] = evaluate(ck, test_ds)
            row["wallclock_s"] = time.perf_counter() - t0
        trace.append(row)
        sink.write(row)
        if snapshot_every and it % snapshot_every == 0:
            snapshots.append(copy_checkpoint(ck))
    return TrainResult(ck, trace, snapshots, counters)


def train(cfg, train_ds, test_ds=None, resume=None, metrics_path=None, on_event=None,
          snapshot_every=None, norm_stats=None):
    """Run the adversarial schedule up to ``cfg.iterations`` outer iterations.

    ``resume`` continues from a checkpoint (its own rng state and
    optimizer moments); otherwise the model is initialized from
    ``cfg.seed``.
    """
    ck = copy_checkpoint(resume) if resume is not None else init_checkpoint(cfg, train_ds, NOVI, norm_stats)
    if ck.mode != NOVI:
        raise InputError("train() needs a NOVI checkpoint")
    ck.config = cfg
    return _run(ck, cfg, train_ds, test_ds, cfg.iterations, metrics_path, on_event, snapshot_every,
                append=resume is not None)


def mle_baseline_train(cfg, train_ds, test_ds=None, resume=None, metrics_path=None, on_event=None,
                       norm_stats=None):
    """Point estimate of the inducing values and hyperparameters by Adam on the log joint."""
    ck = copy_checkpoint(resume) if resume is not None else init_checkpoint(cfg, train_ds, MLE, norm_stats)
    if ck.mode != MLE:
        raise InputError("mle_baseline_train() needs an MLE checkpoint")
    ck.config = cfg
    return _run(ck, cfg, train_ds, test_ds, cfg.iterations, metrics_path, on_event, None,
                append=resume is not None)


# ---------------------------------------------------------------------------
# checkpoints


def _tensors(ck):
    out = {}
    for k, v in ck.dgp_state.arrays().items():
        out[f"dgp/{k}"] = v
    if ck.gen is not None:
        for k, v in ck.gen.arrays().items():
            out[f"gen/{k}"] = v
    if ck.disc is not None:
        for k, v in ck.disc.arrays().items():
            out[f"disc/{k}"] = v
    if ck.u_point is not None:
        out["u_point"] = np.asarray(ck.u_point, dtype=float)
    for name in sorted(ck.adam):
        st = ck.adam[name]
        for k in sorted(st.m):
            out[f"adam/{name}/m/{k}"] = st.m[k]
            out[f"adam/{name}/v/{k}"] = st.v[k]
    if ck.norm_stats is not None:
        for k, v in ck.norm_stats.arrays().items():
            out[f"norm/{k}"] = np.asarray(v, dtype=float)
    return out


def _file_name(name):
    return name.replace("/", "__") + ".f64"


def save_checkpoint(ck, path):
    """Write a checkpoint directory: ``manifest.txt`` plus one raw file per tensor."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    tensors = _tensors(ck)
    meta = {
        "mode": ck.mode,
        "iteration": int(ck.iteration),
        "config": asdict(ck.config),
        "rng_state": ck.rng_state,
        "kernels": [layer.kernel.kind for layer in ck.dgp_state.layers],
        "output_dim": ck.dgp_state.output_dim,
        "gen_spec": asdict(ck.gen_spec) if ck.gen_spec else None,
        "gen": {"widths": ck.gen.widths, "activation": ck.gen.activation} if ck.gen else None,
        "disc": {"widths": ck.disc.widths, "activation": ck.disc.activation} if ck.disc else None,
        "adam_steps": {k: ck.adam[k].step for k in sorted(ck.adam)},
    }
    lines = [f"{MAGIC} {FORMAT_VERSION}"]
    for k in sorted(meta):
        lines.append(f"meta {k} {json.dumps(meta[k], sort_keys=True)}")
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f8", order="C")
        shape = ",".join(str(s) for s in arr.shape)
        lines.append(f"tensor {name} [{shape}] {_file_name(name)}")
        with open(path / _file_name(name), "wb") as fh:
            fh.write(arr.tobytes())
    with open(path / "manifest.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def load_checkpoint(path):
    path = Path(path)
    mf = path / "manifest.txt"
    if not mf.is_file():
        raise InputError(f"no checkpoint manifest at {mf}")
    lines = mf.read_text(encoding="utf-8").splitlines()
    head = lines[0].split() if lines else []
    if len(head) != 2 or head[0] != MAGIC:
        raise FormatVersionError(f"{mf} is not a checkpoint manifest")
    if head[1] != str(FORMAT_VERSION):
        raise FormatVersionError(f"checkpoint format version {head[1]} != supported {FORMAT_VERSION}")
    meta = {}
    tensors = {}
    for line in lines[1:]:
        kind, name, rest = line.split(" ", 2)
        if kind == "meta":
            meta[name] = json.loads(rest)
        elif kind == "tensor":
            shape_s, fname = rest.rsplit(" ", 1)
            inner = shape_s.strip("[]")
            shape = tuple(int(s) for s in inner.split(",")) if inner else ()
            raw = np.fromfile(path / fname, dtype="<f8")
            if raw.size != int(np.prod(shape)):
                raise DimensionError(f"tensor {name}: file holds {raw.size} values, manifest says {shape}")
            tensors[name] = raw.reshape(shape).astype(np.float64)
        else:
            raise FormatVersionError(f"unknown manifest record {kind!r}")
    cfg = TrainConfig.from_dict(meta["config"])
    dgp_arrays = {k[4:]: v for k, v in tensors.items() if k.startswith("dgp/")}
    n_layers = len(meta["kernels"])
    layers = []
    for i, kind in enumerate(meta["kernels"]):
        kp = kn.KernelParams(kind, dgp_arrays[f"layer{i}.log_variance"], dgp_arrays[f"layer{i}.log_lengthscales"],
                             dgp_arrays.get(f"layer{i}.log_alpha"))
        layers.append(dgp.Layer(dgp_arrays[f"layer{i}.z"], kp))
    state = dgp.DgpState(layers[:n_layers], dgp_arrays["log_noise"], int(meta["output_dim"]))
    ck = Checkpoint(cfg, meta["mode"], state, int(meta["iteration"]), meta["rng_state"])
    if meta.get("gen_spec"):
        ck.gen_spec = nets.GeneratorSpec(**meta["gen_spec"])
    for role in ("gen", "disc"):
        if meta.get(role):
            params = {k.split("/", 1)[1]: v for k, v in tensors.items() if k.startswith(role + "/")}
            setattr(ck, role, nets.MlpParams(list(meta[role]["widths"]), meta[role]["activation"], params))
    if "u_point" in tensors:
        ck.u_point = tensors["u_point"]
    for name, step in meta["adam_steps"].items():
        st = AdamState(step=int(step))
        for k, v in tensors.items():
            pre_m = f"adam/{name}/m/"
            pre_v = f"adam/{name}/v/"
            if k.startswith(pre_m):
                st.m[k[len(pre_m):]] = v
            elif k.startswith(pre_v):
                st.v[k[len(pre_v):]] = v
        ck.adam[name] = st
    if "norm/x_min" in tensors:
        ck.norm_stats = dmod.NormStats(tensors["norm/x_min"], tensors["norm/x_max"],
                                       tensors["norm/y_min"], tensors["norm/y_max"])
    return ck


def copy_checkpoint(ck):
    """Deep copy (arrays duplicated) of a checkpoint."""
    def cp(d):
        return {k: np.array(v) for k, v in d.items()}

    out = replace(ck)
    out.dgp_state = ck.dgp_state.with_arrays(cp(ck.dgp_state.arrays()))
    out.gen = ck.gen.with_params(cp(ck.gen.arrays())) if ck.gen else None
    out.disc = ck.disc.with_params(cp(ck.disc.arrays())) if ck.disc else None
    out.u_point = None if ck.u_point is None else np.array(ck.u_point)
    out.adam = {k: AdamState(cp(s.m), cp(s.v), s.step, s.beta1, s.beta2, s.eps) for k, s in ck.adam.items()}
    out.rng_state = json.loads(json.dumps(ck.rng_state))
    return out


def write_trace(trace, path):
    sink = MetricSink(path)
    for row in trace:
        sink.write(row)


def read_trace(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append({k: (None if r[k] == "" else (int(r[k]) if k == "iteration" else float(r[k])))
                    for k in METRIC_COLUMNS})
    return out
