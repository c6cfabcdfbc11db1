"""``novi`` command line: train, eval, grid, stein-diag, data-check.

A run is described by a TOML file with sections::

    [data]   uci = "energy" | path = "file.csv", target_columns, split_fraction, split_seed, data_dir
    [run]    mode = "novi" | "mle", out, threads
    [train]  any TrainConfig field (also accepted under [model], [stein], [nets])
    [grid]   lists over lam, gen_activation, disc_activation, n_c, net_depth, num_layers; repeats

Flags override file values. Every run directory gets ``config.toml``, the
effective configuration after overrides.

Exit status: 0 when every requested artifact was written, 1 when a check
or a grid cell failed, 2 for invalid input, 3 when training aborted on a
numerical failure, 4 for I/O errors.
"""

import argparse
import itertools
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import data as dm
from . import diag
from . import train as tr
from .errors import DimensionError, InputError, NoviError, NumericalError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

THREADS_ENV = "NOVI_NUM_THREADS"
EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3, 4

TRAIN_SECTIONS = ("train", "model", "stein", "nets")
DATA_KEYS = {"uci": None, "path": None, "target_columns": None, "split_fraction": 0.9, "split_seed": None,
             "data_dir": None}
RUN_KEYS = {"mode": tr.NOVI, "out": "runs/novi", "threads": None}
GRID_AXES = ("lam", "gen_activation", "disc_activation", "n_c", "net_depth", "num_layers")
GRID_KEYS = GRID_AXES + ("repeats",)


class ConfigError(InputError):
    pass


@dataclass
class RunConfig:
    train: tr.TrainConfig
    data: dict = field(default_factory=lambda: dict(DATA_KEYS))
    run: dict = field(default_factory=lambda: dict(RUN_KEYS))
    grid: dict = field(default_factory=dict)

    @property
    def split_seed(self):
        s = self.data.get("split_seed")
        return self.train.seed if s is None else int(s)


def _none(v):
    return None if isinstance(v, str) and v.lower() == "none" else v


def _check_keys(section, got, allowed):
    bad = sorted(set(got) - set(allowed))
    if bad:
        raise ConfigError(f"unknown config key(s) in [{section}]: {', '.join(bad)}")


def parse_config(text, overrides=None):
    """RunConfig from TOML text plus flat ``overrides`` (TrainConfig or run keys)."""
    try:
        doc = tomllib.loads(text) if text else {}
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"config is not valid TOML: {e}") from e
    train_kw, data, run, grid = {}, dict(DATA_KEYS), dict(RUN_KEYS), {}
    known_train = set(tr.TrainConfig.field_names())
    for key, val in doc.items():
        if isinstance(val, dict):
            if key in TRAIN_SECTIONS:
                _check_keys(key, val, known_train)
                train_kw.update({k: _none(v) for k, v in val.items()})
            elif key == "data":
                _check_keys(key, val, DATA_KEYS)
                data.update(val)
            elif key == "run":
                _check_keys(key, val, RUN_KEYS)
                run.update(val)
            elif key == "grid":
                _check_keys(key, val, GRID_KEYS)
                grid.update(val)
            else:
                raise ConfigError(f"unknown config section [{key}]")
        elif key in known_train:
            train_kw[key] = _none(val)
        elif key in RUN_KEYS:
            run[key] = val
        else:
            raise ConfigError(f"unknown config key: {key}")
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key in RUN_KEYS:
            run[key] = val
        else:
            train_kw[key] = val
    if run["mode"] not in (tr.NOVI, tr.MLE):
        raise ConfigError(f"run.mode must be {tr.NOVI!r} or {tr.MLE!r}, got {run['mode']!r}")
    for axis, vals in grid.items():
        if axis != "repeats" and (not isinstance(vals, list) or not vals):
            raise ConfigError(f"grid axis {axis!r} must be a non-empty list")
    return RunConfig(tr.TrainConfig.from_dict(train_kw), data, run, grid)


def _toml_value(v):
    if v is None:
        return '"none"'
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return '"' + str(v).replace("\\", "\\\\").replace('"', '\\"') + '"'


def dump_config(rc):
    """TOML text that parses back to ``rc``."""
    lines = []
    for name, section in (("run", rc.run), ("data", rc.data), ("train", asdict(rc.train)), ("grid", rc.grid)):
        items = [(k, v) for k, v in section.items() if not (name != "train" and v is None)]
        if not items:
            continue
        lines.append(f"[{name}]")
        lines += [f"{k} = {_toml_value(v)}" for k, v in items]
        lines.append("")
    return "\n".join(lines)


def load_run_config(path, overrides=None):
    text = ""
    if path:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config(text, overrides)


# ---------------------------------------------------------------------------
# data


def load_raw(data):
    if data.get("uci") and data.get("path"):
        raise ConfigError("set only one of data.uci and data.path")
    if data.get("uci"):
        return dm.load_uci(data["uci"], data.get("data_dir"))
    if data.get("path"):
        return dm.load_csv(data["path"], data.get("target_columns"))
    raise ConfigError("no dataset: set data.uci or data.path")


def prepare_data(rc):
    """Normalized (train, test) split and the train-only normalization stats."""
    raw = load_raw(rc.data)
    frac = float(rc.data.get("split_fraction", 0.9))
    if frac >= 1.0:
        train_raw, test_raw = raw, raw.subset(np.arange(0))
    else:
        train_raw, test_raw = dm.split(raw, frac, rc.split_seed)
    train_ds, stats = dm.normalize(train_raw)
    test_ds = dm.normalize(test_raw, stats)[0] if len(test_raw) else test_raw
    return train_ds, test_ds, stats


# ---------------------------------------------------------------------------
# artifacts


def write_predictions(ck, ds, path, rng, split_name=""):
    """Predictive mean/variance per row on both scales; returns the normalized RMSE."""
    mean, var = ck.predict(ds.x, None, rng)
    stats = ck.norm_stats
    mean_d = dm.denormalize(mean, stats) if stats is not None else mean
    var_d = dm.denormalize_variance(var, stats) if stats is not None else var
    multi = ds.output_dim > 1
    cols = ["id", "split"]
    for j in range(ds.output_dim):
        sfx = f"_{j}" if multi else ""
        cols += [f"mean{sfx}", f"variance{sfx}", f"mean_denorm{sfx}", f"variance_denorm{sfx}", f"target{sfx}"]
    with open(path, "w") as f:
        f.write(",".join(cols) + "\n")
        for i in range(len(ds)):
            row = [str(i), split_name]
            for j in range(ds.output_dim):
                row += [repr(float(v)) for v in (mean[i, j], var[i, j], mean_d[i, j], var_d[i, j], ds.y[i, j])]
            f.write(",".join(row) + "\n")
    return dm.rmse(mean, ds.y)


def _threads(requested):
    caps = [n for n in (requested, os.environ.get(THREADS_ENV)) if n not in (None, "")]
    n = min(int(c) for c in caps) if caps else None
    if n is not None and n < 1:
        raise ConfigError("thread count must be at least 1")
    return n


def _thread_limit(n):
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n) if n else threadpool_limits(limits=None)


def run_training(rc, out, echo=print):
    """Train one run into ``out``; returns the summary dict."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(dump_config(rc))
    train_ds, test_ds, stats = prepare_data(rc)
    cfg = rc.train
    fn = tr.train if rc.run["mode"] == tr.NOVI else tr.mle_baseline_train
    metrics = out / "metrics.csv"
    if metrics.exists():
        metrics.unlink()
    t0 = time.perf_counter()
    res = fn(cfg, train_ds, test_ds, metrics_path=metrics, norm_stats=stats)
    wall = time.perf_counter() - t0
    ck = res.checkpoint
    tr.save_checkpoint(ck, out / "checkpoint")
    train_rmse = tr.evaluate(ck, train_ds)
    eval_ds, split_name = (test_ds, "test") if len(test_ds) else (train_ds, "train")
    eval_rmse = write_predictions(ck, eval_ds, out / "predictions.csv",
                                  tr.eval_rng(cfg.seed, ck.iteration), split_name)
    summary = {
        "mode": rc.run["mode"],
        "seed": cfg.seed,
        "iterations": ck.iteration,
        "n_train": len(train_ds),
        "n_test": len(test_ds),
        "train_rmse": train_rmse,
        "test_rmse": eval_rmse if len(test_ds) else None,
        "wallclock_s": wall,
        "seconds_per_iteration": wall / ck.iteration if ck.iteration else 0.0,
    }
    with open(out / "summary.txt", "w") as f:
        for k, v in summary.items():
            f.write(f"{k} = {'' if v is None else v}\n")
    echo(f"{out}: train_rmse={train_rmse:.6f} test_rmse="
         f"{'n/a' if summary['test_rmse'] is None else format(summary['test_rmse'], '.6f')} "
         f"s/iter={summary['seconds_per_iteration']:.4f}")
    return summary


def read_summary(path):
    out = {}
    for line in Path(path).read_text().splitlines():
        k, _, v = line.partition(" = ")
        v = v.strip()
        if v == "":
            out[k] = None
            continue
        try:
            out[k] = int(v)
        except ValueError:
            try:
                out[k] = float(v)
            except ValueError:
                out[k] = v
    return out


# ---------------------------------------------------------------------------
# commands


def _overrides(args):
    return {"seed": args.seed, "iterations": args.iterations, "lam": args.lam, "num_layers": args.layers,
            "num_inducing": args.inducing, "out": args.out, "threads": args.threads}


def cmd_train(args):
    rc = load_run_config(args.config, _overrides(args))
    with _thread_limit(_threads(rc.run["threads"])):
        run_training(rc, rc.run["out"])
    return EXIT_OK


def cmd_eval(args):
    ck_dir = Path(args.checkpoint)
    ck = tr.load_checkpoint(ck_dir)
    if args.data:
        ds_raw = dm.load_csv(args.data, args.target_columns)
        split_name = "all"
    else:
        cfg_path = args.config or (ck_dir.parent / "config.toml")
        if not Path(cfg_path).is_file():
            raise ConfigError("eval needs --data or --config (no config.toml next to the checkpoint)")
        rc = load_run_config(cfg_path)
        raw = load_raw(rc.data)
        split_name = args.split
        frac = float(rc.data.get("split_fraction", 0.9))
        if split_name == "all" or frac >= 1.0:
            ds_raw = raw
        else:
            tr_idx, te_idx = dm.split_indices(len(raw), frac, rc.split_seed)
            ds_raw = raw.subset(tr_idx if split_name == "train" else te_idx)
    d = ck.dgp_state.input_dim
    if ds_raw.input_dim != d:
        raise DimensionError(f"checkpoint expects d = {d} input features, dataset has {ds_raw.input_dim}")
    if ck.norm_stats is not None:
        ds, _ = dm.normalize(ds_raw, ck.norm_stats)
    else:
        ds = ds_raw
    out = Path(args.out) if args.out else ck_dir.parent / "eval"
    out.mkdir(parents=True, exist_ok=True)
    seed = ck.config.seed if args.seed is None else args.seed
    with _thread_limit(_threads(args.threads)):
        r = write_predictions(ck, ds, out / "predictions.csv", tr.eval_rng(seed, ck.iteration), split_name)
    (out / "eval.txt").write_text(f"split = {split_name}\nrows = {len(ds)}\nrmse = {r!r}\n")
    print(f"rmse={r!r} rows={len(ds)} split={split_name}")
    return EXIT_OK


def grid_cells(rc):
    axes = [a for a in GRID_AXES if a in rc.grid]
    values = [rc.grid[a] for a in axes]
    return [dict(zip(axes, combo)) for combo in itertools.product(*values)]


def _cell_name(cell):
    return "_".join(f"{k}-{v}" for k, v in cell.items()) or "base"


def _run_cell(job):
    rc, out = job
    try:
        s = run_training(rc, out, echo=lambda *_: None)
        return {"ok": True, "train_rmse": s["train_rmse"], "test_rmse": s["test_rmse"], "error": ""}
    except Exception as e:  # recorded per cell; the grid carries on
        return {"ok": False, "train_rmse": None, "test_rmse": None, "error": f"{type(e).__name__}: {e}"}


def cmd_grid(args):
    rc = load_run_config(args.config, _overrides(args))
    repeats = int(args.repeats if args.repeats is not None else rc.grid.get("repeats", 1))
    if repeats < 1:
        raise ConfigError("grid repeats must be at least 1")
    out = Path(rc.run["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(dump_config(rc))
    cells = grid_cells(rc)
    base = asdict(rc.train)
    jobs, keys = [], []
    for ci, cell in enumerate(cells):
        for r in range(repeats):
            kw = {**base, **cell, "seed": rc.train.seed + r}
            try:
                cfg = tr.TrainConfig.from_dict(kw)
            except NoviError as e:
                jobs.append(None)
                keys.append((ci, r, f"{type(e).__name__}: {e}"))
                continue
            cell_rc = RunConfig(cfg, dict(rc.data), dict(rc.run), {})
            jobs.append((cell_rc, out / "cells" / _cell_name(cell) / f"seed{cfg.seed}"))
            keys.append((ci, r, None))
    todo = [j for j in jobs if j is not None]
    workers = min(_threads(rc.run["threads"]) or os.cpu_count() or 1, max(len(todo), 1))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(_run_cell, todo))
    else:
        with _thread_limit(1 if rc.run["threads"] else None):
            done = [_run_cell(j) for j in todo]
    it = iter(done)
    results = [[] for _ in cells]
    for job, (ci, r, err) in zip(jobs, keys):
        results[ci].append(next(it) if job is not None else
                           {"ok": False, "train_rmse": None, "test_rmse": None, "error": err})
    axes = [a for a in GRID_AXES if a in rc.grid]
    header = axes + ["runs", "failed", "mean_test_rmse", "se_test_rmse", "mean_train_rmse", "se_train_rmse",
                     "errors"]
    any_failed = False
    with open(out / "grid.csv", "w") as f:
        f.write(",".join(header) + "\n")
        for cell, res in zip(cells, results):
            ok = [r for r in res if r["ok"]]
            any_failed |= len(ok) < len(res)
            row = [str(cell[a]) for a in axes] + [str(len(res)), str(len(res) - len(ok))]
            for key in ("test_rmse", "train_rmse"):
                vals = [r[key] for r in ok if r[key] is not None]
                if vals:
                    m, se = dm.repeated_run_stats(vals)
                    row += [repr(m), repr(se)]
                else:
                    row += ["", ""]
            errs = "; ".join(r["error"] for r in res if r["error"])
            row.append('"' + errs.replace('"', "'") + '"' if errs else "")
            f.write(",".join(row) + "\n")
            print(" ".join(f"{a}={cell[a]}" for a in axes) or "base", "->", row[len(axes) + 2] or "failed",
                  "+-", row[len(axes) + 3] or "-")
    return EXIT_CHECK if any_failed else EXIT_OK


def cmd_stein_diag(args):
    lam = 10.0 if args.lam is None else args.lam
    seed = 0 if args.seed is None else args.seed
    with _thread_limit(_threads(args.threads)):
        results = diag.run_all(seed, lam)
    lines = [r.line() for r in results]
    for line in lines:
        print(line)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "stein_diag.txt").write_text("\n".join(lines) + "\n")
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


def cmd_data_check(args):
    names = args.names
    explicit = bool(names)
    if args.config:
        rc = load_run_config(args.config)
        ds = load_raw(rc.data)
        print(f"config dataset: OK rows={len(ds)} features={ds.input_dim} targets={ds.output_dim}")
        if not names:
            return EXIT_OK
    names = names or sorted(dm.UCI_SCHEMAS)
    failed = False
    for name in names:
        try:
            p = dm.find_uci(name, args.data_dir)
        except NoviError as e:
            print(f"{name}: UNKNOWN ({e})")
            failed = True
            continue
        if p is None:
            print(f"{name}: MISSING (no {name.lower()}.csv in {dm.data_dir(args.data_dir)})")
            failed |= explicit
            continue
        try:
            ds = dm.load_uci(name, args.data_dir)
            print(f"{name}: OK rows={len(ds)} features={ds.input_dim} path={p}")
        except NoviError as e:
            print(f"{name}: INVALID ({e})")
            failed = True
    return EXIT_CHECK if failed else EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def _common(p):
    p.add_argument("--config", metavar="PATH")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--iterations", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--layers", type=int)
    p.add_argument("--inducing", type=int)
    p.add_argument("--threads", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="novi", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("train", help="train one model and write its run directory")
    _common(p)
    p.set_defaults(func=cmd_train)
    p = sub.add_parser("eval", help="predict with a saved checkpoint")
    _common(p)
    p.add_argument("--checkpoint", required=True, metavar="DIR")
    p.add_argument("--data", metavar="CSV", help="raw CSV to score (all rows)")
    p.add_argument("--target-columns", nargs="+")
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.set_defaults(func=cmd_eval)
    p = sub.add_parser("grid", help="seeded runs over a grid of settings")
    _common(p)
    p.add_argument("--repeats", type=int)
    p.set_defaults(func=cmd_grid)
    p = sub.add_parser("stein-diag", help="closed-form checks of the Stein estimators")
    _common(p)
    p.set_defaults(func=cmd_stein_diag)
    p = sub.add_parser("data-check", help="report which UCI files are present and well formed")
    _common(p)
    p.add_argument("names", nargs="*")
    p.add_argument("--data-dir", metavar="DIR")
    p.set_defaults(func=cmd_data_check)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as e:
        print(f"error: training aborted: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except NoviError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
