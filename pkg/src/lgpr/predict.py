"""Per-component posterior predictions, mixture probabilities and sampling.

At prediction time every training point is snapped to the simplex corner of
its hard assignment and the test point is placed on the corner of the
component being queried, so each component gives an ordinary sparse-GP
predictive distribution.  Component probabilities then follow from the
relative predictive certainty of the components.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from .files import fmt
from .kernels import ExtendedInput, gram, gram_diag, latent_link, uses_simplex
from .linalg import jitchol
import jax.numpy as jnp


@dataclass
class MixturePrediction:
    """Predictions at ``n`` query inputs for ``L`` components and ``P`` outputs.

    ``means`` and ``stds`` are ``(n, L, P)``; ``probs`` is ``(n, L)``.
    """

    x: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    probs: np.ndarray

    @property
    def mixture_mean(self):
        return np.einsum("nl,nlp->np", self.probs, self.means)

    def __len__(self):
        return self.x.shape[0]


def _corners(idx, L):
    out = np.zeros((len(idx), L))
    out[np.arange(len(idx)), idx] = 1.0
    return out


def _predictor(model):
    """Factorisations shared by all queries; built once per model."""
    if "predictor" in model._cache:
        return model._cache["predictor"]
    spec, state = model.spec, model.state
    theta = model.params["kernel"]
    alpha = model.alpha_final
    D = state.D
    link = latent_link(spec)
    Z = jnp.asarray(state.Z)
    Zin = ExtendedInput(Z[:, :D], link(Z[:, D:]))
    if uses_simplex(spec):
        lat = _corners(model.hard_assignments, spec.n_components)
    else:
        lat = state.mu_latent
    A = ExtendedInput(jnp.asarray(state.X), jnp.asarray(lat))
    Kuu = np.asarray(gram(spec, theta, Zin, Zin, alpha, False))
    Kuf = np.asarray(gram(spec, theta, Zin, A, alpha, False))
    noise = state.noise_var + np.asarray(gram_diag(spec, theta, A, alpha, True)
                                         - gram_diag(spec, theta, A, alpha, False))
    beta = 1.0 / noise
    Lk = jitchol(Kuu)
    V = solve_triangular(Lk, Kuf, lower=True)
    B = np.eye(state.M) + (V * beta) @ V.T
    # eigenvalues of B are >= 1, so it needs no jitter
    Lb = cholesky(B, lower=True)
    c = solve_triangular(Lb, V @ (beta[:, None] * model.Y), lower=True)
    pred = {"Zin": Zin, "Lk": Lk, "Lb": Lb, "c": c, "theta": theta, "alpha": alpha}
    model._cache["predictor"] = pred
    return pred


def _as_queries(model, x_star):
    x = np.asarray(x_star, dtype=float)
    D = model.state.D
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, D) if D > 1 or x.size != D else x.reshape(1, D)
        if D == 1:
            x = x.reshape(-1, 1)
    if x.shape[1] != D:
        raise ValueError(f"query inputs have {x.shape[1]} columns, model expects {D}")
    return x


def component_posterior(model, x_star, l):
    """Predictive mean and standard deviation of component ``l``.

    Returns two ``(n, P)`` arrays; the standard deviation includes the
    likelihood noise (and the component's own white-noise term, if any).
    """
    L = model.n_components
    if not 0 <= l < L:
        raise ValueError(f"component {l} out of range for {L} components")
    x = _as_queries(model, x_star)
    pred = _predictor(model)
    spec, state = model.spec, model.state
    n = x.shape[0]
    if uses_simplex(spec):
        lat = np.zeros((n, spec.n_components))
        lat[:, l] = 1.0
    else:
        lat = np.zeros((n, state.L))
    Xs = ExtendedInput(jnp.asarray(x), jnp.asarray(lat))
    Kus = np.asarray(gram(spec, pred["theta"], pred["Zin"], Xs, pred["alpha"], False))
    kss = np.asarray(gram_diag(spec, pred["theta"], Xs, pred["alpha"], False))
    noise = state.noise_var + np.asarray(gram_diag(spec, pred["theta"], Xs, pred["alpha"], True)) - kss
    a = solve_triangular(pred["Lk"], Kus, lower=True)
    b = solve_triangular(pred["Lb"], a, lower=True)
    mean = b.T @ pred["c"]
    var = kss - np.sum(a * a, axis=0) + np.sum(b * b, axis=0) + noise
    std = np.sqrt(np.maximum(var, 1e-300))
    return mean, np.repeat(std[:, None], mean.shape[1], axis=1)


def component_probabilities(stddevs):
    """Relative-certainty weights: ``rho_l = sum(sigma) / sigma_l``, normalised.

    Accepts a vector of per-component standard deviations or a stack of them
    (last axis indexes components).
    """
    s = np.asarray(stddevs, dtype=float)
    if np.any(~np.isfinite(s)) or np.any(s <= 0):
        raise ValueError("standard deviations must be finite and positive")
    rho = np.sum(s, axis=-1, keepdims=True) / s
    p = rho / np.sum(rho, axis=-1, keepdims=True)
    return p / np.sum(p, axis=-1, keepdims=True)


def predict_mixture(model, x_star):
    x = _as_queries(model, x_star)
    parts = [component_posterior(model, x, l) for l in range(model.n_components)]
    means = np.stack([m for m, _ in parts], axis=1)
    stds = np.stack([s for _, s in parts], axis=1)
    # one scalar certainty per component: RMS over output columns
    rms = np.sqrt(np.mean(stds ** 2, axis=-1))
    return MixturePrediction(x, means, stds, component_probabilities(rms))


def sample_posterior(model, x_star, count, rng_seed=0, prediction=None):
    """Ancestral samples: draw a component from the probabilities, then an output.

    Returns ``(samples, components)`` with shapes ``(count, n, P)`` and
    ``(count, n)``.
    """
    pred = prediction if prediction is not None else predict_mixture(model, x_star)
    rng = np.random.default_rng(rng_seed)
    n, L, P = pred.means.shape
    comps = np.empty((count, n), dtype=int)
    for i in range(n):
        comps[:, i] = rng.choice(L, size=count, p=pred.probs[i])
    eps = rng.standard_normal((count, n, P))
    idx = np.arange(n)[None, :]
    samples = pred.means[idx, comps] + pred.stds[idx, comps] * eps
    return samples, comps


def log_predictive_density(model, X, Y):
    """Per-point log density of ``Y`` under the predicted Gaussian mixture."""
    pred = predict_mixture(model, X)
    Y = np.asarray(Y, dtype=float).reshape(pred.means.shape[0], -1)
    z = (Y[:, None, :] - pred.means) / pred.stds
    comp = np.sum(-0.5 * z ** 2 - np.log(pred.stds) - 0.5 * np.log(2 * np.pi), axis=-1)
    with np.errstate(divide="ignore"):
        logp = np.log(pred.probs)
    top = np.max(comp + logp, axis=1, keepdims=True)
    return (top + np.log(np.sum(np.exp(comp + logp - top), axis=1, keepdims=True)))[:, 0]


def prediction_header(D, L, P):
    header = [f"x{i}" for i in range(D)]
    for l in range(L):
        header += [f"c{l}_mean{p}" for p in range(P)] + [f"c{l}_std{p}" for p in range(P)] + [f"c{l}_prob"]
    return header


def prediction_to_csv(pred):
    n, L, P = pred.means.shape
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(prediction_header(pred.x.shape[1], L, P))
    for i in range(n):
        row = [fmt(v) for v in pred.x[i]]
        for l in range(L):
            row += [fmt(v) for v in pred.means[i, l]] + [fmt(v) for v in pred.stds[i, l]] + [fmt(pred.probs[i, l])]
        w.writerow(row)
    return buf.getvalue()


def read_prediction_csv(path):
    """Parse a prediction CSV back into a :class:`MixturePrediction`."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    D = sum(1 for h in header if h.startswith("x"))
    L = sum(1 for h in header if h.endswith("_prob"))
    P = sum(1 for h in header if h.startswith("c0_mean"))
    data = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), -1)
    x = data[:, :D]
    block = data[:, D:].reshape(len(body), L, 2 * P + 1)
    return MixturePrediction(x, block[:, :, :P], block[:, :, P:2 * P], block[:, :, 2 * P])
