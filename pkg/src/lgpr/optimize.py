"""Initialisation, annealed stochastic optimisation of the bound, checkpoints."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional

import numpy as np

from . import _config
from .kernels import (AnnealingSchedule, KernelSpec, factorizing, log_params, se, uses_simplex,
                      validate, white, with_log_params)
from .files import atomic_write_text
from .variational import (VariationalState, draw_eps, is_single_se, jitter_ladder, objective,
                          state_from_params, state_params)
import jax
import jax.numpy as jnp
from jax.flatten_util import ravel_pytree

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "lgpr-checkpoint/1"


class TrainingError(RuntimeError):
    pass


def parse_component_kernel(text):
    """``'se'``, ``'se+white'`` (and ``'linear'``) shorthand for component templates."""
    parts = [p.strip() for p in text.split("+")]
    kernels = []
    for p in parts:
        if p == "se":
            kernels.append(se())
        elif p == "white":
            kernels.append(white())
        elif p == "linear":
            kernels.append(KernelSpec("linear", hyperparams={"variance": 1.0}))
        else:
            raise ValueError(f"unknown component kernel {p!r}")
    out = kernels[0]
    for k in kernels[1:]:
        out = out + k
    return out


@dataclass
class TrainConfig:
    components: int = 2
    inducing: int = 20
    samples: int = 1
    iterations: int = 1000
    step_size: float = 1e-2
    annealing: AnnealingSchedule = field(default_factory=AnnealingSchedule)
    seed: int = 0
    kernel: str = "factorizing"
    component_kernels: Optional[list] = None
    psi: str = "mc"
    inducing_init: str = "corners"
    latent_step_scale: float = 0.1
    restarts: int = 1
    warmup: int = 0

    def __post_init__(self):
        if self.components < 1 and self.kernel == "factorizing":
            raise ValueError("need at least one component")
        if self.components < 0 or self.inducing < 1 or self.samples < 1 or self.iterations < 0:
            raise ValueError(f"invalid counts in {self}")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if not self.latent_step_scale > 0:
            raise ValueError("latent_step_scale must be positive")
        if self.warmup < 0:
            raise ValueError("warmup must be nonnegative")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if self.kernel not in ("factorizing", "se"):
            raise ValueError(f"kernel must be 'factorizing' or 'se', got {self.kernel!r}")
        if self.psi not in ("mc", "analytic"):
            raise ValueError(f"psi must be 'mc' or 'analytic', got {self.psi!r}")
        if self.psi == "analytic" and self.kernel != "se":
            raise ValueError("analytic statistics need kernel='se'")
        templates = self.component_kernels
        if templates is not None:
            templates = [parse_component_kernel(t) if isinstance(t, str) else t for t in templates]
            if len(templates) == 1 and self.components > 1:
                templates = templates * self.components
            if len(templates) != self.components:
                raise ValueError(f"{len(templates)} component kernels for {self.components} components")
            self.component_kernels = templates

    def to_dict(self):
        d = asdict(self)
        d["annealing"] = asdict(self.annealing)
        d["component_kernels"] = (None if self.component_kernels is None
                                  else [k.to_dict() for k in self.component_kernels])
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["annealing"] = AnnealingSchedule(**d["annealing"])
        if d.get("component_kernels") is not None:
            d["component_kernels"] = [KernelSpec.from_dict(k) for k in d["component_kernels"]]
        return cls(**d)


@dataclass
class TrainedModel:
    spec: KernelSpec
    state: VariationalState
    Y: np.ndarray
    config: TrainConfig
    alpha_final: float
    bound_trace: list = field(default_factory=list)
    alpha_trace: list = field(default_factory=list)
    time_trace: list = field(default_factory=list)
    optimizer: dict = field(default_factory=dict)
    rng_state: Optional[dict] = None
    theta: Optional[dict] = None
    data_meta: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_components(self):
        return self.spec.n_components if uses_simplex(self.spec) else 1

    @property
    def hard_assignments(self):
        if self.n_components == 1:
            return np.zeros(self.state.N, dtype=int)
        # softplus and the power transform are monotone, so the argmax of the raw means suffices
        return np.argmax(self.state.mu_latent, axis=1)

    @property
    def params(self):
        """Optimised parameters; log-hyperparameters kept exactly as trained."""
        p = state_params(self.state, self.spec)
        if self.theta is not None:
            p["kernel"] = {k: jnp.asarray(v) for k, v in self.theta.items()}
        return p


# -- initialisation -----------------------------------------------------------

def _data_init(template, lengthscales, signal_var, noise_var):
    if template.kind == "se":
        ls = lengthscales
        return KernelSpec("se", [], {"variance": signal_var, "lengthscale": [float(x) for x in ls]},
                          template.options)
    if template.kind == "white":
        return KernelSpec("white", [], {"variance": noise_var})
    return KernelSpec(template.kind, [_data_init(c, lengthscales, signal_var, noise_var)
                                      for c in template.children],
                      dict(template.hyperparams), template.options)


def _seeds(seed, restart=0):
    entropy = seed if restart == 0 else [seed, restart]
    init_ss, eps_ss = np.random.SeedSequence(entropy).spawn(2)
    return np.random.default_rng(init_ss), np.random.default_rng(eps_ss)


def initialize(dataset, config, restart=0):
    """Initial variational state and kernel spec for ``dataset``."""
    X = np.atleast_2d(np.asarray(dataset.X, dtype=float))
    Y = np.asarray(dataset.Y, dtype=float).reshape(X.shape[0], -1)
    N, D = X.shape
    if config.inducing > N:
        raise ValueError(f"more inducing points ({config.inducing}) than data points ({N})")
    rng, _ = _seeds(config.seed, restart)
    L = config.components
    out_var = max(float(np.mean(np.var(Y, axis=0))), 1e-6)
    stds = np.std(X, axis=0)
    stds = np.where(stds > 0, stds, 1.0)
    if config.kernel == "factorizing":
        templates = config.component_kernels or [se()] * L
        spec = factorizing([_data_init(t, stds, out_var, 0.1 * out_var) for t in templates])
    else:
        spec = se(out_var, np.concatenate([stds, np.ones(L)]), inputs="extended" if L else "observed")
    validate(spec, D, L)
    mu_lat = rng.uniform(0.4, 0.6, size=(N, L))
    log_s = np.full((N, L), np.log(0.1))
    idx = np.sort(rng.choice(N, size=config.inducing, replace=False))
    Z = np.hstack([X, mu_lat])[idx]
    if config.inducing_init == "corners" and config.kernel == "factorizing" and L > 1:
        # share inducing points out among components so they do not all start identical
        Z[:, D:] = -1.0
        Z[np.arange(config.inducing), D + np.arange(config.inducing) % L] = 1.0
    state = VariationalState(X, mu_lat, log_s, Z, float(np.log(0.1 * out_var)))
    return state, spec


# -- optimiser ------------------------------------------------------------------

class Adam:
    """Bias-corrected moment estimates on a flat parameter vector (ascent)."""

    def __init__(self, size, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, x, grad, lr):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return x + lr * mhat / (np.sqrt(vhat) + self.eps)

    def state_dict(self):
        return {"m": self.m.tolist(), "v": self.v.tolist(), "t": self.t}

    def load(self, d):
        self.m = np.asarray(d["m"], dtype=float)
        self.v = np.asarray(d["v"], dtype=float)
        self.t = int(d["t"])


def _structure(spec):
    return json.dumps({"kind": spec.kind, "options": spec.options,
                       "children": [json.loads(_structure(c)) for c in spec.children]}, sort_keys=True)


_COMPILED = {}


def compiled_objective(spec, analytic):
    """Jitted ``(params, X, Y, eps, alpha, jitter) -> (bound, grad)`` for a kernel structure."""
    key = (_structure(spec), analytic)
    if key not in _COMPILED:
        def f(params, X, Y, eps, alpha, jitter):
            return objective(spec, params, X, Y, eps, alpha, jitter, analytic)
        _COMPILED[key] = (jax.jit(jax.value_and_grad(f)), jax.jit(f))
    return _COMPILED[key]


def _project(params):
    lo, hi = _config.LOG_BOUNDS
    out = dict(params)
    out["kernel"] = {k: jnp.clip(v, lo, hi) for k, v in params["kernel"].items()}
    out["log_noise"] = jnp.clip(params["log_noise"], lo, hi)
    out["log_s"] = jnp.clip(params["log_s"], lo, hi)
    return out


def _evaluate(vg, params, X, Y, eps, alpha):
    for jitter in jitter_ladder():
        value, grad = vg(params, X, Y, eps, alpha, jitter)
        value = float(value)
        flat_grad, _ = ravel_pytree(grad)
        if np.isfinite(value) and np.all(np.isfinite(flat_grad)):
            return value, np.asarray(flat_grad)
    return float("nan"), None


def _use_analytic(config, spec, L):
    if config.psi != "analytic":
        return False
    if not is_single_se(spec, L):
        raise ValueError("analytic statistics need a single se kernel over all input columns")
    return True


def _step_mask(params, latent_scale, hyper=1.0):
    mask = {k: jax.tree_util.tree_map(jnp.ones_like, v) for k, v in params.items()}
    for k in ("mu", "log_s"):
        mask[k] = jnp.full_like(params[k], latent_scale)
    mask["log_noise"] = jnp.full_like(params["log_noise"], hyper)
    mask["kernel"] = {k: jnp.full_like(v, hyper) for k, v in params["kernel"].items()}
    return np.asarray(ravel_pytree(mask)[0])


def evaluate_bound(model, samples=256, seed=0):
    """Monte Carlo estimate of the trained objective with many fresh draws.

    Used to rank restarts; the per-iteration trace is too noisy for that.
    """
    spec, state = model.spec, model.state
    analytic = _use_analytic(model.config, spec, state.L)
    _, f = compiled_objective(spec, analytic)
    T = 1 if analytic else samples
    eps = jnp.asarray(draw_eps(np.random.default_rng(seed), T, state.N, state.L))
    X, Y = jnp.asarray(state.X), jnp.asarray(model.Y)
    for jitter in jitter_ladder():
        value = float(f(model.params, X, Y, eps, model.alpha_final, jitter))
        if np.isfinite(value):
            return value
    return float("-inf")


def train(dataset, config, resume=None, callback: Optional[Callable] = None):
    """Maximise the bound by annealed, reparameterised stochastic gradients.

    With ``config.restarts > 1`` independent initialisations are trained and
    the one with the highest final (smoothed) bound is returned.  ``resume``
    continues a single :class:`TrainedModel` (e.g. from a checkpoint) up to
    ``config.iterations`` total iterations, reproducing the uninterrupted run.
    """
    if resume is not None or config.restarts == 1:
        return _train_one(dataset, config, 0, resume, callback)
    best, best_value = None, -np.inf
    for r in range(config.restarts):
        model = _train_one(dataset, config, r, None, callback)
        value = evaluate_bound(model, seed=config.seed)
        log.info("restart %d: final bound %.6g", r, value)
        if best is None or value > best_value:
            best, best_value = model, value
    return best


def _train_one(dataset, config, restart, resume, callback):
    X = np.atleast_2d(np.asarray(dataset.X, dtype=float))
    Y = np.asarray(dataset.Y, dtype=float).reshape(X.shape[0], -1)
    if resume is None:
        state, spec = initialize(dataset, config, restart)
        _, eps_rng = _seeds(config.seed, restart)
        restart_used = restart
        trace, alphas, times = [], [], []
        step_size = config.step_size
    else:
        state, spec = resume.state, resume.spec
        eps_rng = np.random.default_rng()
        eps_rng.bit_generator.state = resume.rng_state
        trace, alphas, times = list(resume.bound_trace), list(resume.alpha_trace), list(resume.time_trace)
        step_size = resume.optimizer.get("step_size", config.step_size)
        restart_used = resume.optimizer.get("restart", 0)
    N, L = state.N, state.L
    analytic = _use_analytic(config, spec, L)
    vg, _ = compiled_objective(spec, analytic)
    params = state_params(state, spec) if resume is None else resume.params
    flat, unravel = ravel_pytree(params)
    flat = np.asarray(flat)
    mask = _step_mask(params, config.latent_step_scale)
    # kernel hyperparameters and noise held at their initial values for the first warmup steps
    frozen = _step_mask(params, config.latent_step_scale, hyper=0.0)
    adam = Adam(flat.size)
    if resume is not None and resume.optimizer:
        adam.load(resume.optimizer)
    Xj, Yj = jnp.asarray(X), jnp.asarray(Y)
    schedule = config.annealing
    prev = None
    rejections = 0
    t = state.iteration
    while t < config.iterations:
        start = time.perf_counter()
        alpha = schedule(t)
        if analytic:
            eps = np.zeros((1, N, L))
        else:
            rng_before = eps_rng.bit_generator.state
            eps = draw_eps(eps_rng, config.samples, N, L)
        value, grad = _evaluate(vg, unravel(jnp.asarray(flat)), Xj, Yj, jnp.asarray(eps), alpha)
        if grad is None:
            rejections += 1
            if rejections >= 10 or prev is None:
                raise TrainingError(f"non-finite bound at iteration {t} after {rejections} rejections")
            step_size *= 0.5
            log.warning("non-finite bound at iteration %d; halving step size to %g", t, step_size)
            flat, adam, prev_grad = prev[0], prev[1], prev[2]
            adam = _copy_adam(adam)
            if not analytic:
                eps_rng.bit_generator.state = rng_before
            flat = np.asarray(ravel_pytree(_project(unravel(jnp.asarray(
                adam.step(flat, prev_grad, step_size * (frozen if t < config.warmup else mask))))))[0])
            continue
        rejections = 0
        prev = (flat, _copy_adam(adam), grad)
        flat = adam.step(flat, grad, step_size * (frozen if t < config.warmup else mask))
        flat = np.asarray(ravel_pytree(_project(unravel(jnp.asarray(flat))))[0])
        trace.append((t, value))
        alphas.append(alpha)
        times.append(1000.0 * (time.perf_counter() - start))
        t += 1
        if callback is not None:
            callback(t, value, alpha)
    params = unravel(jnp.asarray(flat))
    final_state = state_from_params(params, X, iteration=t)
    final_spec = with_log_params(spec, params["kernel"])
    opt = adam.state_dict()
    opt["step_size"] = step_size
    opt["restart"] = restart_used
    return TrainedModel(final_spec, final_state, Y, config, schedule(max(t - 1, 0)),
                        trace, alphas, times, opt, eps_rng.bit_generator.state,
                        {k: np.asarray(v) for k, v in params["kernel"].items()},
                        dict(getattr(dataset, "meta", None) or {}))


def _copy_adam(adam):
    out = Adam(adam.m.size, adam.beta1, adam.beta2, adam.eps)
    out.m, out.v, out.t = adam.m.copy(), adam.v.copy(), adam.t
    return out


# -- gradient check -------------------------------------------------------------

def gradient_check(dataset, config, h=1e-5, state=None, spec=None, alpha=None, floor=1e-6):
    """Compare autodiff gradients of the frozen-sample bound with central differences.

    Returns per-group maximum relative errors (``|a - f| / max(|a|, |f|, floor)``)
    along with both gradient vectors.
    """
    if state is None or spec is None:
        state, spec = initialize(dataset, config)
    X = jnp.asarray(np.atleast_2d(dataset.X))
    Y = jnp.asarray(np.asarray(dataset.Y, dtype=float).reshape(state.N, -1))
    analytic = _use_analytic(config, spec, state.L)
    vg, f = compiled_objective(spec, analytic)
    _, eps_rng = _seeds(config.seed)
    eps = jnp.asarray(draw_eps(eps_rng, config.samples, state.N, state.L))
    alpha = config.annealing.alpha0 if alpha is None else alpha
    jitter = _config.JITTER
    params = state_params(state, spec)
    flat, unravel = ravel_pytree(params)
    _, grad = vg(params, X, Y, eps, alpha, jitter)
    analytic_grad = np.asarray(ravel_pytree(grad)[0])
    flat = np.asarray(flat)
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        up, dn = flat.copy(), flat.copy()
        up[i] += h
        dn[i] -= h
        numeric[i] = (float(f(unravel(jnp.asarray(up)), X, Y, eps, alpha, jitter))
                      - float(f(unravel(jnp.asarray(dn)), X, Y, eps, alpha, jitter))) / (2 * h)
    labels = _flat_labels(params)
    rel = np.abs(analytic_grad - numeric) / np.maximum(np.maximum(np.abs(analytic_grad), np.abs(numeric)), floor)
    groups = {}
    for lab, r in zip(labels, rel):
        groups[lab] = max(groups.get(lab, 0.0), float(r))
    return {"groups": groups, "max_rel_error": float(rel.max()) if rel.size else 0.0,
            "analytic": analytic_grad, "numeric": numeric, "labels": labels}


def _flat_labels(params):
    tagged = jax.tree_util.tree_map_with_path(
        lambda path, v: np.full(np.shape(v), 0), params)
    leaves = jax.tree_util.tree_flatten_with_path(tagged)[0]
    labels = []
    for path, leaf in leaves:
        name = "kernel" if getattr(path[0], "key", None) == "kernel" else path[0].key
        labels += [name] * max(int(np.size(leaf)), 1 if np.ndim(leaf) == 0 else 0)
    return labels


# -- checkpoints ----------------------------------------------------------------

def _tolist(a):
    a = np.asarray(a, dtype=float)
    return a.tolist()


def save_checkpoint(model, path):
    """Write a JSON checkpoint with full-precision parameters and RNG position."""
    p = model.params
    doc = {
        "format": CHECKPOINT_FORMAT,
        "kernel": model.spec.to_dict(),
        "params": {
            "kernel": {k: _tolist(v) for k, v in p["kernel"].items()},
            "mu": _tolist(p["mu"]), "log_s": _tolist(p["log_s"]), "Z": _tolist(p["Z"]),
            "log_noise": float(p["log_noise"]),
        },
        "X": _tolist(model.state.X),
        "Y": _tolist(model.Y),
        "config": model.config.to_dict(),
        "seed": model.config.seed,
        "alpha": model.alpha_final,
        "iteration": model.state.iteration,
        "bound_trace": [[int(t), float(v)] for t, v in model.bound_trace],
        "alpha_trace": [float(a) for a in model.alpha_trace],
        "optimizer": model.optimizer,
        "rng_state": model.rng_state,
        "hard_assignments": [int(a) for a in model.hard_assignments],
        "data_meta": model.data_meta,
    }
    atomic_write_text(path, json.dumps(doc))
    return doc


def load_checkpoint(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not an lgpr checkpoint")
    X = np.asarray(doc["X"], dtype=float)
    N = X.shape[0]
    p = doc["params"]
    spec_template = KernelSpec.from_dict(doc["kernel"])
    theta = {k: jnp.asarray(v, dtype=float) for k, v in p["kernel"].items()}
    # exact log values, not re-logged natural values
    spec = with_log_params(spec_template, theta)
    L = np.asarray(p["mu"]).reshape(N, -1).shape[1] if np.size(p["mu"]) else 0
    Q = X.shape[1] + L
    state = VariationalState(X, np.asarray(p["mu"], dtype=float).reshape(N, L),
                             np.asarray(p["log_s"], dtype=float).reshape(N, L),
                             np.asarray(p["Z"], dtype=float).reshape(-1, Q),
                             float(p["log_noise"]), int(doc["iteration"]))
    model = TrainedModel(spec, state, np.asarray(doc["Y"], dtype=float).reshape(N, -1),
                         TrainConfig.from_dict(doc["config"]), float(doc["alpha"]),
                         [tuple(x) for x in doc["bound_trace"]], list(doc["alpha_trace"]), [],
                         doc["optimizer"], doc["rng_state"],
                         {k: np.asarray(v) for k, v in theta.items()}, doc.get("data_meta", {}))
    return model
