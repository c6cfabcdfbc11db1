"""CSV datasets, [-1, 1] normalization, train/test splits and metrics."""

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

import numpy as np

from .errors import DimensionError, InputError

DATA_DIR_ENV = "NOVI_DATA_DIR"

# expected shapes of the raw UCI regression files (rows, features)
UCI_SCHEMAS = {
    "boston": (506, 13),
    "energy": (768, 8),
    "yacht": (308, 6),
    "kin8nm": (8192, 8),
    "concrete": (1030, 8),
    "power": (9568, 4),
}


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    feature_names: List[str] = field(default_factory=list)
    target_names: List[str] = field(default_factory=list)
    source: str = ""

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=float)
        self.y = np.ascontiguousarray(self.y, dtype=float)
        if self.y.ndim == 1:
            self.y = self.y[:, None]
        if self.x.ndim != 2 or self.y.ndim != 2:
            raise DimensionError("dataset x and y must be 2-D")
        if self.x.shape[0] != self.y.shape[0]:
            raise DimensionError(f"x has {self.x.shape[0]} rows, y has {self.y.shape[0]}")
        if not self.feature_names:
            self.feature_names = [f"x{i}" for i in range(self.x.shape[1])]
        if not self.target_names:
            self.target_names = [f"y{i}" for i in range(self.y.shape[1])]

    def __len__(self):
        return self.x.shape[0]

    @property
    def input_dim(self):
        return self.x.shape[1]

    @property
    def output_dim(self):
        return self.y.shape[1]

    def subset(self, idx):
        return Dataset(self.x[idx], self.y[idx], list(self.feature_names), list(self.target_names), self.source)


def load_csv(path, target_columns=None):
    """Read a headered numeric CSV.

    ``target_columns`` names the target columns (or gives their indices);
    the default is the last column. Any blank or non-numeric cell raises
    an :class:`InputError` naming the 1-based data row.
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"dataset file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path} is empty") from None
        rows = []
        for i, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputError(f"{path}: row {i} has {len(row)} cells, header has {len(header)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                bad = next(c for c in row if not _is_float(c))
                raise InputError(f"{path}: row {i} has a non-numeric cell {bad!r}") from None
    if not rows:
        raise InputError(f"{path} has no data rows")
    data = np.array(rows)
    if not np.all(np.isfinite(data)):
        r = int(np.argwhere(~np.isfinite(data))[0, 0]) + 1
        raise InputError(f"{path}: row {r} has a non-finite value")
    tcols = _target_indices(header, target_columns)
    fcols = [j for j in range(len(header)) if j not in tcols]
    return Dataset(data[:, fcols], data[:, tcols], [header[j] for j in fcols],
                   [header[j] for j in tcols], str(path))


def _is_float(c):
    try:
        float(c)
        return True
    except ValueError:
        return False


def _target_indices(header, target_columns):
    if target_columns is None:
        return [len(header) - 1]
    if isinstance(target_columns, (str, int)):
        target_columns = [target_columns]
    out = []
    for t in target_columns:
        if isinstance(t, (int, np.integer)):
            j = int(t) % len(header)
        elif t in header:
            j = header.index(t)
        else:
            raise InputError(f"target column {t!r} not in header {header}")
        out.append(j)
    if not out:
        raise InputError("empty target selection")
    if len(out) == len(header):
        raise InputError("no feature columns left after selecting targets")
    return out


def write_csv(ds, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(ds.feature_names) + list(ds.target_names))
        for xr, yr in zip(ds.x, ds.y):
            w.writerow([repr(float(v)) for v in xr] + [repr(float(v)) for v in yr])


@dataclass
class NormStats:
    x_min: np.ndarray
    x_max: np.ndarray
    y_min: np.ndarray
    y_max: np.ndarray

    @property
    def x_constant(self):
        return self.x_max == self.x_min

    @property
    def y_constant(self):
        return self.y_max == self.y_min

    def arrays(self):
        return {"x_min": self.x_min, "x_max": self.x_max, "y_min": self.y_min, "y_max": self.y_max}


def fit_stats(ds):
    return NormStats(ds.x.min(axis=0), ds.x.max(axis=0), ds.y.min(axis=0), ds.y.max(axis=0))


def _to_unit(v, lo, hi):
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    out = 2.0 * (v - lo) / safe - 1.0
    return np.where(span > 0, out, 0.0)


def normalize(ds, stats=None):
    """Map every column affinely to [-1, 1] using ``stats`` (fit on ``ds`` if None).

    Constant columns map to 0. Rows outside the fitted range land outside
    [-1, 1]; nothing is clipped.
    """
    stats = stats or fit_stats(ds)
    if stats.x_min.shape[0] != ds.input_dim or stats.y_min.shape[0] != ds.output_dim:
        raise DimensionError("normalization stats do not match the dataset's columns")
    return (Dataset(_to_unit(ds.x, stats.x_min, stats.x_max), _to_unit(ds.y, stats.y_min, stats.y_max),
                    list(ds.feature_names), list(ds.target_names), ds.source), stats)


def denormalize(y_norm, stats):
    """Inverse of the target map; constant targets come back as their value."""
    y_norm = np.asarray(y_norm, dtype=float)
    span = stats.y_max - stats.y_min
    if y_norm.shape[-1] != span.shape[0]:
        raise DimensionError("target width does not match normalization stats")
    return (y_norm + 1.0) * 0.5 * span + stats.y_min


def denormalize_variance(v_norm, stats):
    span = stats.y_max - stats.y_min
    return np.asarray(v_norm, dtype=float) * (0.5 * span) ** 2


def split_indices(n, fraction=0.9, seed=0):
    if n < 2:
        raise InputError("need at least two rows to split")
    if not 0 < fraction < 1:
        raise InputError(f"split fraction must lie in (0, 1), got {fraction}")
    n_train = min(max(int(math.ceil(fraction * n - 1e-9)), 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def split(ds, fraction=0.9, seed=0):
    """Shuffled train/test partition with ``ceil(fraction * N)`` training rows."""
    tr, te = split_indices(len(ds), fraction, seed)
    return ds.subset(tr), ds.subset(te)


def rmse(pred, truth):
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise DimensionError(f"prediction shape {pred.shape} != target shape {truth.shape}")
    if pred.size == 0:
        raise InputError("rmse of an empty set")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def repeated_run_stats(values):
    """Mean and standard error (sample std / sqrt(runs))."""
    v = np.asarray(list(values), dtype=float)
    if v.size == 0:
        raise InputError("no values")
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def data_dir(explicit=None):
    if explicit:
        return Path(explicit)
    env = os.environ.get(DATA_DIR_ENV)
    return Path(env) if env else Path("datasets")


def find_uci(name, directory=None):
    """Path of ``<name>.csv`` in the data directory, or None."""
    key = name.lower()
    if key not in UCI_SCHEMAS:
        raise InputError(f"unknown dataset {name!r}; known: {sorted(UCI_SCHEMAS)}")
    p = data_dir(directory) / f"{key}.csv"
    return p if p.is_file() else None


def load_uci(name, directory=None):
    """Load a UCI regression CSV (last column is the target) and check its schema."""
    p = find_uci(name, directory)
    if p is None:
        raise InputError(f"{name}.csv not found in {data_dir(directory)}; set {DATA_DIR_ENV} to the folder holding it")
    ds = load_csv(p)
    check_schema(name, ds)
    return ds


def check_schema(name, ds):
    rows, feats = UCI_SCHEMAS[name.lower()]
    if ds.input_dim != feats:
        raise DimensionError(f"{name}: expected {feats} features, found {ds.input_dim}")
    if len(ds) != rows:
        raise DimensionError(f"{name}: expected {rows} rows, found {len(ds)}")
