"""
Covariance functions over an extended input space.

Every input point carries an observed part ``x`` (length ``D``) and a latent
part (length ``L``, one coordinate per mixture component).  Base kernels act on
the observed part unless told otherwise; the ``factorizing`` and
``juxtaposition`` kernels use the latent part to decide how strongly each pair
of points is coupled through each component kernel.

Kernels are described by a plain :class:`KernelSpec` tree.  Hyperparameters
are stored on their natural (positive) scale in the spec and moved to log
space for evaluation and optimisation, so the same evaluation code serves
both the public numpy API and the differentiable training objective.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, NamedTuple

import numpy as np
from scipy.special import logsumexp as scipy_logsumexp

from . import _config  # noqa: F401
import jax
import jax.numpy as jnp
from jax.scipy.special import logsumexp

KINDS = ("se", "linear", "white", "sum", "product", "juxtaposition", "factorizing")
_HYPERPARAMS = {
    "se": ("variance", "lengthscale"),
    "linear": ("variance",),
    "white": ("variance",),
    "sum": (),
    "product": (),
    "juxtaposition": (),
    "factorizing": (),
}


class KernelError(ValueError):
    """Raised for malformed kernel specs or inputs that do not match them."""


class ExtendedInput(NamedTuple):
    """Observed coordinates plus one latent coordinate per component.

    Works both for a single point (1-D arrays) and a batch (2-D arrays with
    one row per point).  Latent values are the nonnegative bases fed to the
    simplex transform, not raw variational coordinates.
    """

    observed: Any
    latent: Any


@dataclass
class KernelSpec:
    kind: str
    children: list[KernelSpec] = field(default_factory=list)
    hyperparams: dict[str, Any] = field(default_factory=dict)
    options: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise KernelError(f"unknown kernel kind {self.kind!r}; expected one of {KINDS}")
        self.children = list(self.children)
        self.hyperparams = dict(self.hyperparams)
        self.options = dict(self.options)

    def __add__(self, other):
        return KernelSpec("sum", [self, other])

    def __mul__(self, other):
        return KernelSpec("product", [self, other])

    @property
    def n_components(self):
        """Number of latent coordinates the kernel reads (0 for plain kernels)."""
        if self.kind == "factorizing":
            return len(self.children)
        if self.kind == "juxtaposition":
            return len(self.children) // 2
        return 0

    def to_dict(self):
        out = {"kind": self.kind, "children": [c.to_dict() for c in self.children],
               "hyperparams": {k: _to_jsonable(v) for k, v in self.hyperparams.items()}}
        if self.options:
            out["options"] = dict(self.options)
        return out

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], [cls.from_dict(c) for c in d.get("children", [])],
                   {k: (list(v) if isinstance(v, list) else float(v))
                    for k, v in d.get("hyperparams", {}).items()},
                   dict(d.get("options", {})))

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _to_jsonable(v):
    if isinstance(v, (list, tuple, np.ndarray)):
        return [float(x) for x in np.asarray(v, dtype=float).ravel()]
    return float(v)


# -- constructors -------------------------------------------------------------

def se(variance=1.0, lengthscale=1.0, inputs="observed"):
    """Squared-exponential kernel; ``inputs='extended'`` also reads latent columns."""
    ls = np.atleast_1d(np.asarray(lengthscale, dtype=float))
    return KernelSpec("se", hyperparams={"variance": float(variance),
                                         "lengthscale": [float(x) for x in ls]},
                      options={"inputs": inputs} if inputs != "observed" else {})


def linear(variance=1.0):
    return KernelSpec("linear", hyperparams={"variance": float(variance)})


def white(variance=1.0):
    return KernelSpec("white", hyperparams={"variance": float(variance)})


def factorizing(components):
    return KernelSpec("factorizing", list(components))


def juxtaposition(weight_kernels, component_kernels, transform="simplex"):
    if len(weight_kernels) != len(component_kernels):
        raise KernelError(f"juxtaposition needs as many weight kernels as components, "
                          f"got {len(weight_kernels)} and {len(component_kernels)}")
    return KernelSpec("juxtaposition", list(weight_kernels) + list(component_kernels),
                      options={"transform": transform})


# -- validation ---------------------------------------------------------------

def validate(spec, n_observed=None, n_latent=None):
    """Check structure, hyperparameter positivity and (optionally) input widths."""
    _validate(spec, n_observed, n_latent)


def _validate(spec, D, L):
    expected = _HYPERPARAMS[spec.kind]
    missing = [h for h in expected if h not in spec.hyperparams]
    extra = [h for h in spec.hyperparams if h not in expected]
    if missing or extra:
        raise KernelError(f"{spec.kind} kernel: missing hyperparameters {missing}, unexpected {extra}")
    for name, value in spec.hyperparams.items():
        arr = np.atleast_1d(np.asarray(value, dtype=float))
        if not np.all(np.isfinite(arr)):
            raise KernelError(f"{spec.kind} kernel: non-finite hyperparameter {name}={value}")
        if np.any(arr <= 0):
            raise KernelError(f"{spec.kind} kernel: hyperparameter {name} must be positive, got {value}")
    if spec.kind in ("sum", "product") and len(spec.children) < 1:
        raise KernelError(f"{spec.kind} kernel needs at least one child")
    if spec.kind == "factorizing":
        if len(spec.children) < 1:
            raise KernelError("factorizing kernel needs at least one component")
        if L is not None and L != len(spec.children):
            raise KernelError(f"factorizing kernel with {len(spec.children)} components expects "
                              f"latent length {len(spec.children)}, got {L}")
        for c in spec.children:
            _validate(c, D, 0)
        return
    if spec.kind == "juxtaposition":
        if len(spec.children) < 2 or len(spec.children) % 2:
            raise KernelError("juxtaposition kernel needs matching weight/component lists")
        n = len(spec.children) // 2
        if L is not None and L != n:
            raise KernelError(f"juxtaposition kernel with {n} components expects latent length {n}, got {L}")
        for w in spec.children[:n]:
            _validate(w, 1, 0)
        for c in spec.children[n:]:
            _validate(c, D, 0)
        return
    if spec.kind == "se" and D is not None:
        width = D + (L or 0) if spec.options.get("inputs") == "extended" else D
        n_ls = len(np.atleast_1d(spec.hyperparams["lengthscale"]))
        if n_ls != width:
            raise KernelError(f"se kernel expects {width} lengthscales for its inputs, got {n_ls}")
    for c in spec.children:
        _validate(c, D, L)


def uses_simplex(spec):
    """True when the kernel reads its latent inputs through the simplex transform."""
    if spec.kind == "factorizing":
        return True
    if spec.kind == "juxtaposition":
        return spec.options.get("transform", "simplex") == "simplex"
    return any(uses_simplex(c) for c in spec.children)


def latent_link(spec):
    """Map raw (real-valued) latent coordinates to kernel latent inputs.

    Simplex-based kernels need nonnegative bases, so raw coordinates go through
    softplus; every other kernel sees the raw coordinates unchanged.
    """
    if uses_simplex(spec):
        return jax.nn.softplus
    return lambda x: x


# -- log-space parameter handling ---------------------------------------------

def log_params(spec, prefix=""):
    """Flatten hyperparameters into ``{path: log value}`` (jnp arrays)."""
    out = {}
    for name in _HYPERPARAMS[spec.kind]:
        out[prefix + name] = jnp.log(jnp.asarray(spec.hyperparams[name], dtype=float))
    for i, child in enumerate(spec.children):
        out.update(log_params(child, f"{prefix}{i}."))
    return out


def with_log_params(spec, theta, prefix=""):
    """Inverse of :func:`log_params`: a new spec with natural-scale values."""
    hp = {}
    for name in _HYPERPARAMS[spec.kind]:
        v = np.exp(np.asarray(theta[prefix + name], dtype=float))
        hp[name] = [float(x) for x in v.ravel()] if v.ndim else float(v)
    children = [with_log_params(c, theta, f"{prefix}{i}.") for i, c in enumerate(spec.children)]
    return KernelSpec(spec.kind, children, hp, spec.options)


# -- simplex transform --------------------------------------------------------

def simplex_transform(v, alpha):
    """Power-normalise a nonnegative vector onto the simplex.

    ``out_l = v_l**alpha / sum(v**alpha)``; larger ``alpha`` pushes the result
    towards the corner of the largest entry.  Works row-wise on 2-D input.
    """
    v = np.asarray(v, dtype=float)
    if not np.isfinite(alpha) or alpha <= 0:
        raise KernelError(f"alpha must be positive, got {alpha}")
    if np.any(v < 0):
        raise KernelError("simplex_transform needs nonnegative entries; map raw latents first")
    if np.any(np.all(v == 0, axis=-1)):
        raise KernelError("degenerate latent: all entries are zero")
    # numpy here: XLA flushes subnormal entries to zero
    with np.errstate(divide="ignore"):
        a = alpha * np.log(v)
    return np.exp(a - scipy_logsumexp(a, axis=-1, keepdims=True))


def _simplex(v, alpha):
    pos = v > 0
    logv = jnp.where(pos, jnp.log(jnp.where(pos, v, 1.0)), -jnp.inf)
    a = alpha * logv
    return jnp.exp(a - logsumexp(a, axis=-1, keepdims=True))


# -- evaluation ---------------------------------------------------------------

def _empty(n):
    return jnp.zeros((n, 0))


def _active(spec, A):
    if spec.options.get("inputs") == "extended":
        return jnp.concatenate([A.observed, A.latent], axis=-1)
    return A.observed


def gram(spec, theta, A, B, alpha, same, prefix=""):
    """Covariance matrix between batches ``A`` and ``B`` (traceable by jax).

    ``same`` marks ``A`` and ``B`` as the same set of points, which switches on
    white-noise contributions along the diagonal.
    """
    kind = spec.kind
    na, nb = A.observed.shape[0], B.observed.shape[0]

    def hp(name):
        return jnp.exp(theta[prefix + name])

    if kind == "se":
        xa, xb = _active(spec, A), _active(spec, B)
        d = (xa[:, None, :] - xb[None, :, :]) / hp("lengthscale")
        return hp("variance") * jnp.exp(-0.5 * jnp.sum(d * d, axis=-1))
    if kind == "linear":
        return hp("variance") * (A.observed @ B.observed.T)
    if kind == "white":
        if same:
            return hp("variance") * jnp.eye(na)
        return jnp.zeros((na, nb))
    if kind in ("sum", "product"):
        parts = [gram(c, theta, A, B, alpha, same, f"{prefix}{i}.") for i, c in enumerate(spec.children)]
        out = parts[0]
        for p in parts[1:]:
            out = out + p if kind == "sum" else out * p
        return out
    if kind == "factorizing":
        wa, wb = _simplex(A.latent, alpha), _simplex(B.latent, alpha)
        Ao, Bo = ExtendedInput(A.observed, _empty(na)), ExtendedInput(B.observed, _empty(nb))
        out = 0.0
        for l, c in enumerate(spec.children):
            k = gram(c, theta, Ao, Bo, alpha, same, f"{prefix}{l}.")
            out = out + wa[:, l][:, None] * wb[:, l][None, :] * k
        return out
    if kind == "juxtaposition":
        n = len(spec.children) // 2
        la, lb = A.latent, B.latent
        if spec.options.get("transform", "simplex") == "simplex":
            la, lb = _simplex(la, alpha), _simplex(lb, alpha)
        Ao, Bo = ExtendedInput(A.observed, _empty(na)), ExtendedInput(B.observed, _empty(nb))
        out = 0.0
        for l in range(n):
            w = gram(spec.children[l], theta, ExtendedInput(la[:, l:l + 1], _empty(na)),
                     ExtendedInput(lb[:, l:l + 1], _empty(nb)), alpha, same, f"{prefix}{l}.")
            k = gram(spec.children[n + l], theta, Ao, Bo, alpha, same, f"{prefix}{n + l}.")
            out = out + w * k
        return out
    raise KernelError(f"unsupported kernel kind {kind!r}")


def gram_diag(spec, theta, A, alpha, same, prefix=""):
    """Diagonal of ``gram(spec, theta, A, A, ...)`` without building the matrix."""
    kind = spec.kind
    n = A.observed.shape[0]

    def hp(name):
        return jnp.exp(theta[prefix + name])

    if kind == "se":
        return hp("variance") * jnp.ones(n)
    if kind == "linear":
        return hp("variance") * jnp.sum(A.observed ** 2, axis=-1)
    if kind == "white":
        return hp("variance") * jnp.ones(n) if same else jnp.zeros(n)
    if kind in ("sum", "product"):
        parts = [gram_diag(c, theta, A, alpha, same, f"{prefix}{i}.") for i, c in enumerate(spec.children)]
        out = parts[0]
        for p in parts[1:]:
            out = out + p if kind == "sum" else out * p
        return out
    if kind == "factorizing":
        w = _simplex(A.latent, alpha)
        Ao = ExtendedInput(A.observed, _empty(n))
        return sum(w[:, l] ** 2 * gram_diag(c, theta, Ao, alpha, same, f"{prefix}{l}.")
                   for l, c in enumerate(spec.children))
    if kind == "juxtaposition":
        m = len(spec.children) // 2
        lat = A.latent
        if spec.options.get("transform", "simplex") == "simplex":
            lat = _simplex(lat, alpha)
        Ao = ExtendedInput(A.observed, _empty(n))
        return sum(gram_diag(spec.children[l], theta, ExtendedInput(lat[:, l:l + 1], _empty(n)),
                             alpha, same, f"{prefix}{l}.")
                   * gram_diag(spec.children[m + l], theta, Ao, alpha, same, f"{prefix}{m + l}.")
                   for l in range(m))
    raise KernelError(f"unsupported kernel kind {kind!r}")


def _as_batch(A):
    obs = np.asarray(A.observed, dtype=float)
    if obs.ndim == 1:
        obs = obs[:, None]
    n = obs.shape[0]
    lat = np.zeros((n, 0)) if A.latent is None else np.asarray(A.latent, dtype=float)
    lat = lat.reshape(n, -1) if lat.size else np.zeros((n, 0))
    return ExtendedInput(obs, lat)


def _check_inputs(spec, A, B=None):
    L = spec.n_components
    for X in (A, B):
        if X is None:
            continue
        if X.latent.shape[1] != L and L:
            raise KernelError(f"kernel expects latent length {L}, got {X.latent.shape[1]}")
    if B is not None and A.observed.shape[1] != B.observed.shape[1]:
        raise KernelError(f"observed input lengths differ: {A.observed.shape[1]} vs {B.observed.shape[1]}")
    validate(spec, A.observed.shape[1], A.latent.shape[1])


def eval_kernel(spec, a, b, alpha=1.0):
    """Covariance between two single extended inputs.

    A white-noise term contributes only when ``a`` and ``b`` are the same point.
    """
    A, B = (_as_batch(ExtendedInput(np.atleast_1d(np.asarray(p.observed, dtype=float))[None, :],
                                    None if p.latent is None else np.atleast_1d(p.latent)[None, :]))
            for p in (a, b))
    _check_inputs(spec, A, B)
    same = bool(np.array_equal(A.observed, B.observed) and np.array_equal(A.latent, B.latent))
    return float(gram(spec, log_params(spec), A, B, alpha, same)[0, 0])


def kernel_matrix(spec, A, B=None, alpha=1.0):
    """Gram matrix ``K[i, j] = k(A[i], B[j])``; ``B=None`` means ``B`` is ``A``."""
    A = _as_batch(A)
    Bb = A if B is None else _as_batch(B)
    _check_inputs(spec, A, Bb)
    return np.asarray(gram(spec, log_params(spec), A, Bb, alpha, B is None))


def juxtaposition_eval(weight_kernels, component_kernels, a, b, alpha=None):
    """Sum over components of weight-kernel times component-kernel.

    With ``alpha`` given the latent coordinates go through the simplex
    transform first, which reproduces the factorizing kernel when the weight
    kernels are unit-variance linear kernels.
    """
    if len(weight_kernels) != len(component_kernels):
        raise KernelError(f"weight/component list lengths differ: "
                          f"{len(weight_kernels)} vs {len(component_kernels)}")
    spec = juxtaposition(weight_kernels, component_kernels,
                         transform="simplex" if alpha is not None else "none")
    return eval_kernel(spec, a, b, 1.0 if alpha is None else alpha)


def kernel_gradients(spec, A, B=None, alpha=1.0):
    """Derivatives of every Gram entry.

    Returns a dict with

    - ``names``: hyperparameter paths, one per column of ``hyperparams``
    - ``hyperparams``: ``(|A|, |B|, P)`` derivatives w.r.t. log-hyperparameters
    - ``latent_a`` / ``latent_b``: ``(|A|, |B|, L)`` derivatives of ``K[i, j]``
      w.r.t. the latent inputs of ``A[i]`` and ``B[j]``
    """
    A = _as_batch(A)
    same = B is None
    Bb = A if same else _as_batch(B)
    _check_inputs(spec, A, Bb)
    theta = log_params(spec)
    names = list(theta)
    flat = jnp.concatenate([jnp.atleast_1d(theta[k]) for k in names])
    sizes = [int(np.size(theta[k])) for k in names]
    offsets = np.cumsum([0] + sizes)

    def unflat(vec):
        return {k: (vec[offsets[i]:offsets[i + 1]] if np.ndim(theta[k]) else vec[offsets[i]])
                for i, k in enumerate(names)}

    def f(vec, la, lb):
        Bi = ExtendedInput(Bb.observed, la if same else lb)
        return gram(spec, unflat(vec), ExtendedInput(A.observed, la), Bi, alpha, same)

    la, lb = jnp.asarray(A.latent), jnp.asarray(Bb.latent)
    d_theta = np.asarray(jax.jacfwd(f, argnums=0)(flat, la, lb))
    if same:
        # both arguments share one latent array; split its derivative into row/column parts
        da = np.asarray(jax.jacfwd(lambda x: gram(spec, theta, ExtendedInput(A.observed, x),
                                                  ExtendedInput(A.observed, jax.lax.stop_gradient(x)),
                                                  alpha, True))(la))
        db = np.asarray(jax.jacfwd(lambda x: gram(spec, theta, ExtendedInput(A.observed, jax.lax.stop_gradient(x)),
                                                  ExtendedInput(A.observed, x), alpha, True))(la))
    else:
        da = np.asarray(jax.jacfwd(f, argnums=1)(flat, la, lb))
        db = np.asarray(jax.jacfwd(f, argnums=2)(flat, la, lb))
    n, m = d_theta.shape[:2]
    latent_a = np.einsum("ijil->ijl", da) if da.size else np.zeros((n, m, 0))
    latent_b = np.einsum("ijjl->ijl", db) if db.size else np.zeros((n, m, 0))
    names_expanded = []
    for k, s in zip(names, sizes):
        names_expanded += [k] if not np.ndim(theta[k]) else [f"{k}[{i}]" for i in range(s)]
    return {"names": names_expanded, "hyperparams": d_theta, "latent_a": latent_a, "latent_b": latent_b}


# -- annealing ----------------------------------------------------------------

@dataclass(frozen=True)
class AnnealingSchedule:
    """Geometric growth of the simplex sharpness, capped at ``alpha_max``."""

    alpha0: float = 1.0
    growth: float = 1.005
    alpha_max: float = 50.0

    def __post_init__(self):
        if not (self.alpha0 > 0 and self.growth >= 1 and self.alpha_max >= self.alpha0):
            raise ValueError(f"invalid annealing schedule {self}")

    def __call__(self, t):
        # log form avoids overflow of growth**t for long runs
        log_a = math.log(self.alpha0) + t * math.log(self.growth)
        if log_a >= math.log(self.alpha_max):
            return float(self.alpha_max)
        return min(self.alpha_max, math.exp(log_a))
