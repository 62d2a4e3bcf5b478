"""
Synthetic datasets mirroring the toy experiments, Jura ingestion and CSV I/O.

All generator constants (amplitudes, noise levels, sampling densities) are
recorded in ``Dataset.meta`` so that a CSV plus its sidecar fully describes
how it was made.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .files import atomic_write_text, fmt

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    labels: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.Y = np.asarray(self.Y, dtype=float)
        if self.Y.ndim == 1:
            self.Y = self.Y[:, None]
        if self.X.shape[0] != self.Y.shape[0]:
            raise ValueError(f"X has {self.X.shape[0]} rows but Y has {self.Y.shape[0]}")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.Y))):
            raise ValueError("dataset contains non-finite values")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=int)
            if self.labels.shape != (self.X.shape[0],):
                raise ValueError("need one label per row")
            if np.any(self.labels < 0):
                raise ValueError("labels must be nonnegative")

    @property
    def N(self):
        return self.X.shape[0]

    @property
    def D(self):
        return self.X.shape[1]

    @property
    def P(self):
        return self.Y.shape[1]


# -- generators -----------------------------------------------------------------

def gen_antiphase(n=200, seed=0, noise_std=0.05):
    """Two sinusoids in anti-phase, each sampled from its own skewed density.

    Label 0 follows ``sin(x)`` with inputs from a Beta(2, 3) density on
    ``[0, 4 pi]``; label 1 follows ``sin(x + pi)`` with Beta(3, 2) inputs.  The
    two densities mirror each other, so they are equal at ``x = 2 pi``.
    """
    if n < 4:
        raise ValueError("need n >= 4")
    rng = np.random.default_rng(seed)
    n0 = n // 2
    labels = np.concatenate([np.zeros(n0, dtype=int), np.ones(n - n0, dtype=int)])
    span = 4 * np.pi
    x = np.where(labels == 0, rng.beta(2.0, 3.0, n), rng.beta(3.0, 2.0, n)) * span
    y = np.sin(x + np.pi * labels) + noise_std * rng.standard_normal(n)
    order = rng.permutation(n)
    meta = {"name": "antiphase", "seed": seed, "n": n, "noise_std": noise_std,
            "input_range": [0.0, span], "densities": ["beta(2,3)", "beta(3,2)"],
            "mixing_weights": [0.5, 0.5], "phases": [0.0, float(np.pi)], "components": 2}
    return Dataset(x[order], y[order], labels[order], meta)


def gen_heteroscedastic(n=500, seed=0, low_std=0.01, high_std=0.3, transition=0.1):
    """One sinusoid; noiseless on the left half, noisy on the right.

    Inside a band of width ``transition`` (fraction of the range) around the
    midpoint the label probability ramps linearly, so labels mix there.
    """
    rng = np.random.default_rng(seed)
    span = 4 * np.pi
    x = np.sort(rng.uniform(0, span, n))
    half = 0.5 * transition * span
    p_noisy = np.clip((x - (0.5 * span - half)) / (2 * half), 0.0, 1.0)
    labels = (rng.uniform(size=n) < p_noisy).astype(int)
    std = np.where(labels == 1, high_std, low_std)
    y = np.sin(x) + std * rng.standard_normal(n)
    meta = {"name": "hetero", "seed": seed, "n": n, "noise_std": [low_std, high_std],
            "input_range": [0.0, span], "transition_width": transition, "components": 2}
    return Dataset(x, y, labels, meta)


def sshape_branches(gap=0.05):
    """Vertical extents of the three branches of ``x = sin(1.5 pi y)``."""
    third = 1.0 / 3.0
    return [(-1.0, -third - gap), (-third + gap, third - gap), (third + gap, 1.0)]


def gen_sshape(n=300, seed=0, noise_std=0.01, gap=0.05):
    """An S curve ``x = sin(1.5 pi y)`` for ``y in [-1, 1]``, read as x -> y.

    The curve folds at ``y = +-1/3``; the three pieces between folds are
    single-valued functions of ``x`` and get labels 0, 1, 2.  A small band
    around each fold is left out so every branch has bounded slope.
    """
    rng = np.random.default_rng(seed)
    counts = [n // 3 + (1 if i < n % 3 else 0) for i in range(3)]
    xs, ys, labels = [], [], []
    for label, ((lo, hi), c) in enumerate(zip(sshape_branches(gap), counts)):
        y = rng.uniform(lo, hi, c)
        xs.append(np.sin(1.5 * np.pi * y))
        ys.append(y + noise_std * rng.standard_normal(c))
        labels.append(np.full(c, label))
    x, y, labels = np.concatenate(xs), np.concatenate(ys), np.concatenate(labels)
    order = rng.permutation(n)
    meta = {"name": "sshape", "seed": seed, "n": n, "noise_std": noise_std, "fold_gap": gap,
            "curve": "x = sin(1.5*pi*y), y in [-1, 1]", "components": 3}
    return Dataset(x[order], y[order], labels[order], meta)


def gen_gp_draws(n_points=100, n_draws=50, seed=0, lengthscale_frac=0.2, noise_var=1e-4):
    """Independent draws from a zero-mean SE-kernel GP on an even 1-D grid."""
    from .linalg import jitchol
    rng = np.random.default_rng(seed)
    x = np.linspace(0.0, 1.0, n_points)
    ell = lengthscale_frac * (x[-1] - x[0] if n_points > 1 else 1.0)
    K = np.exp(-0.5 * (x[:, None] - x[None, :]) ** 2 / ell ** 2) + noise_var * np.eye(n_points)
    Lk = jitchol(K)
    Y = Lk @ rng.standard_normal((n_points, n_draws))
    meta = {"name": "gpdraws", "seed": seed, "n": n_points, "n_draws": n_draws, "signal_var": 1.0,
            "lengthscale": ell, "noise_var": noise_var, "components": 1}
    return Dataset(x, Y, None, meta)


GENERATORS = {
    "antiphase": gen_antiphase,
    "hetero": gen_heteroscedastic,
    "sshape": gen_sshape,
    "gpdraws": gen_gp_draws,
}


# -- Jura -------------------------------------------------------------------------

JURA_COORDS = ("Xloc", "Yloc")


def load_jura(path, element="Co"):
    """Read a Jura-style CSV: coordinates ``Xloc, Yloc`` plus element columns.

    Inputs and the chosen output are standardised; the output's mean and
    standard deviation are kept in ``meta['output_transform']``.
    """
    import pandas as pd
    try:
        frame = pd.read_csv(path)
    except pd.errors.EmptyDataError:
        raise ValueError(f"{path}: empty file") from None
    if frame.shape[0] == 0:
        raise ValueError(f"{path}: empty file")
    required = list(JURA_COORDS) + [element]
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise ValueError(f"{path}: missing required columns {missing}")
    sub = frame[required].apply(pd.to_numeric, errors="coerce")
    dropped = int(sub.isna().any(axis=1).sum())
    if dropped:
        log.info("dropped %d rows with missing values", dropped)
    sub = sub.dropna()
    X = sub[list(JURA_COORDS)].to_numpy(dtype=float)
    y = sub[element].to_numpy(dtype=float)
    x_mean, x_std = X.mean(axis=0), X.std(axis=0)
    y_mean, y_std = float(y.mean()), float(y.std())
    X = (X - x_mean) / np.where(x_std > 0, x_std, 1.0)
    y = (y - y_mean) / (y_std if y_std > 0 else 1.0)
    meta = {"name": "jura", "element": element, "source": os.path.basename(os.fspath(path)),
            "dropped_rows": dropped,
            "input_transform": {"mean": x_mean.tolist(), "std": x_std.tolist()},
            "output_transform": {"mean": y_mean, "std": y_std}}
    return Dataset(X, y, None, meta)


# -- CSV ------------------------------------------------------------------------------

def dataset_to_csv(ds):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = [f"x{i}" for i in range(ds.D)] + [f"y{i}" for i in range(ds.P)]
    if ds.labels is not None:
        header.append("label")
    w.writerow(header)
    for i in range(ds.N):
        row = [fmt(v) for v in ds.X[i]] + [fmt(v) for v in ds.Y[i]]
        if ds.labels is not None:
            row.append(str(int(ds.labels[i])))
        w.writerow(row)
    return buf.getvalue()


def save_dataset(ds, path):
    """Write ``path`` (CSV) and ``path + '.meta.json'``; returns both paths."""
    path = os.fspath(path)
    atomic_write_text(path, dataset_to_csv(ds))
    meta_path = path + ".meta.json"
    atomic_write_text(meta_path, json.dumps(ds.meta, sort_keys=True, indent=2) + "\n")
    return path, meta_path


def load_dataset(path):
    path = os.fspath(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    ycols = [i for i, h in enumerate(header) if h.startswith("y")]
    if not xcols or not ycols:
        raise ValueError(f"{path}: header needs x* and y* columns, got {header}")
    data = np.array([[float(r[i]) for i in xcols + ycols] for r in body], dtype=float).reshape(len(body), -1)
    labels = None
    if "label" in header:
        k = header.index("label")
        labels = np.array([int(r[k]) for r in body], dtype=int)
    meta = {}
    if os.path.exists(path + ".meta.json"):
        with open(path + ".meta.json") as fh:
            meta = json.load(fh)
    return Dataset(data[:, :len(xcols)], data[:, len(xcols):], labels, meta)
