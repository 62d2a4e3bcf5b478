"""
Inducing-point sufficient statistics and the collapsed evidence lower bound.

The variational distribution over the extended inputs is a diagonal Gaussian
whose observed columns are point masses at the data.  The three expectations
the bound needs,

    xi   = < tr K_ff >,   Psi = < K_fu >,   Phi = < K_uf K_fu >,

are estimated by averaging kernel matrices built from reparameterised
samples ``mu + sqrt(s) * eps``.  For a single squared-exponential kernel the
expectations also have closed forms, which serve as a reference.

White-noise terms in the kernel are not absorbed by the inducing variables,
so the bound treats them as extra, per-point likelihood noise; the statistics
then carry per-point precision weights (see :class:`PsiStats`).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import _config
from .kernels import ExtendedInput, KernelError, KernelSpec, gram, gram_diag, latent_link, log_params, validate
import jax
import jax.numpy as jnp
from jax.scipy.linalg import cho_solve, solve_triangular

LOG_2PI = float(np.log(2 * np.pi))


class IllConditionedError(np.linalg.LinAlgError):
    pass


@dataclass
class VariationalState:
    """Everything the optimiser moves, plus the fixed observed inputs.

    ``mu``/``s`` expose the full ``N x Q`` means and variances; the observed
    columns are the data with zero variance.
    """

    X: np.ndarray
    mu_latent: np.ndarray
    log_s_latent: np.ndarray
    Z: np.ndarray
    log_noise_var: float
    iteration: int = 0

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        n = self.X.shape[0]
        self.mu_latent = np.asarray(self.mu_latent, dtype=float).reshape(n, -1)
        self.log_s_latent = np.asarray(self.log_s_latent, dtype=float).reshape(n, -1)
        self.Z = np.atleast_2d(np.asarray(self.Z, dtype=float))
        if self.mu_latent.shape != self.log_s_latent.shape:
            raise ValueError("latent means and variances must have the same shape")
        if self.Z.shape[1] != self.Q:
            raise ValueError(f"inducing inputs need {self.Q} columns, got {self.Z.shape[1]}")
        if self.M > n:
            raise ValueError(f"more inducing points ({self.M}) than data points ({n})")

    @property
    def N(self):
        return self.X.shape[0]

    @property
    def D(self):
        return self.X.shape[1]

    @property
    def L(self):
        return self.mu_latent.shape[1]

    @property
    def Q(self):
        return self.D + self.L

    @property
    def M(self):
        return self.Z.shape[0]

    @property
    def mu(self):
        return np.hstack([self.X, self.mu_latent])

    @property
    def s(self):
        return np.hstack([np.zeros_like(self.X), np.exp(self.log_s_latent)])

    @property
    def noise_var(self):
        return float(np.exp(self.log_noise_var))


@dataclass
class PsiStats:
    """The expectations ``xi``, ``Psi`` (``psi1``) and ``Phi`` (``psi2``).

    When ``precision`` is set the statistics are precision-weighted:
    ``xi = <sum_i b_i k_ii>``, ``psi1[i] = <b_i k_iu>``,
    ``psi2 = <sum_i b_i k_ui k_iu>`` with ``b_i`` the per-point inverse noise
    variance, and ``log_precision`` holds ``<log b_i>``.  Unweighted
    statistics leave both as ``None`` and the bound uses the state's noise.
    """

    xi: float
    psi1: np.ndarray
    psi2: np.ndarray
    precision: Optional[np.ndarray] = None
    log_precision: Optional[np.ndarray] = None


# -- parameter plumbing -------------------------------------------------------

def state_params(state, spec):
    """Pytree of everything optimised: log-hyperparameters and variational parameters."""
    return {
        "kernel": log_params(spec),
        "mu": jnp.asarray(state.mu_latent),
        "log_s": jnp.asarray(state.log_s_latent),
        "Z": jnp.asarray(state.Z),
        "log_noise": jnp.asarray(state.log_noise_var, dtype=float),
    }


def state_from_params(params, X, iteration=0):
    return VariationalState(X, np.asarray(params["mu"]), np.asarray(params["log_s"]),
                            np.asarray(params["Z"]), float(params["log_noise"]), iteration)


def sample_extended_inputs(state, count, rng_seed):
    """Reparameterised samples of the extended inputs, shape ``(count, N, Q)``.

    Observed columns come back unperturbed; a fixed seed gives fixed samples.
    """
    if count < 1:
        raise ValueError("need at least one sample")
    eps = draw_eps(np.random.default_rng(rng_seed), count, state.N, state.L)
    raw = state.mu_latent[None] + np.exp(0.5 * state.log_s_latent)[None] * eps
    return np.concatenate([np.broadcast_to(state.X, (count,) + state.X.shape), raw], axis=-1)


def draw_eps(rng, count, n, n_latent):
    return rng.standard_normal((count, n, n_latent))


# -- statistics -----------------------------------------------------------------

def _sample_kernels(spec, params, X, eps, alpha):
    """Per-sample ``K_fu``, signal diagonal and full diagonal of ``K_ff``."""
    link = latent_link(spec)
    theta = params["kernel"]
    D = X.shape[1]
    Z = params["Z"]
    Zin = ExtendedInput(Z[:, :D], link(Z[:, D:]))
    raw = params["mu"][None] + jnp.exp(0.5 * params["log_s"])[None] * eps

    def one(lat):
        A = ExtendedInput(X, link(lat))
        kfu = gram(spec, theta, A, Zin, alpha, False)
        return kfu, gram_diag(spec, theta, A, alpha, False), gram_diag(spec, theta, A, alpha, True)

    return jax.vmap(one)(raw)


def _mc_stats(spec, params, X, eps, alpha):
    kfu, dsig, dfull = _sample_kernels(spec, params, X, eps, alpha)
    return (jnp.mean(jnp.sum(dfull, axis=1)), jnp.mean(kfu, axis=0),
            jnp.einsum("tnm,tnk->mk", kfu, kfu) / eps.shape[0])


def _mc_weighted_stats(spec, params, X, eps, alpha):
    kfu, dsig, dfull = _sample_kernels(spec, params, X, eps, alpha)
    beta = 1.0 / (jnp.exp(params["log_noise"]) + dfull - dsig)
    T = eps.shape[0]
    return (jnp.sum(beta * dsig) / T,
            jnp.mean(beta[:, :, None] * kfu, axis=0),
            jnp.einsum("tnm,tn,tnk->mk", kfu, beta, kfu) / T,
            jnp.mean(beta, axis=0),
            jnp.mean(jnp.log(beta), axis=0))


def psi_monte_carlo(spec, state, T, alpha=1.0, rng_seed=0):
    """Sample-average estimates of ``xi``, ``Psi`` and ``Phi`` from ``T`` draws."""
    if T < 1:
        raise ValueError("need at least one sample")
    validate(spec, state.D, state.L)
    eps = draw_eps(np.random.default_rng(rng_seed), T, state.N, state.L)
    xi, psi1, psi2 = _mc_stats(spec, state_params(state, spec), jnp.asarray(state.X), jnp.asarray(eps), alpha)
    return PsiStats(float(xi), np.asarray(psi1), np.asarray(psi2))


def is_single_se(spec, n_latent):
    return (spec.kind == "se" and not spec.children
            and (n_latent == 0 or spec.options.get("inputs") == "extended"))


def _se_analytic(theta, mu, s, Z):
    var = jnp.exp(theta["variance"])
    ell2 = jnp.exp(2 * theta["lengthscale"])
    N = mu.shape[0]
    # Psi: 1-D Gaussian convolutions, multiplied over coordinates
    denom1 = ell2 + s[:, None, :]
    psi1 = var * jnp.prod(jnp.sqrt(ell2 / denom1), axis=-1) * jnp.exp(
        -0.5 * jnp.sum((mu[:, None, :] - Z[None, :, :]) ** 2 / denom1, axis=-1))
    zdiff = Z[:, None, :] - Z[None, :, :]
    zbar = 0.5 * (Z[:, None, :] + Z[None, :, :])
    denom2 = ell2 + 2 * s[:, None, None, :]
    per_n = jnp.prod(jnp.sqrt(ell2 / denom2), axis=-1) * jnp.exp(
        -jnp.sum(zdiff ** 2 / (4 * ell2), axis=-1)[None]
        - jnp.sum((mu[:, None, None, :] - zbar[None]) ** 2 / denom2, axis=-1))
    psi2 = var ** 2 * jnp.sum(per_n, axis=0)
    return N * var, psi1, psi2


def _analytic_from_params(spec, params, X):
    mu = jnp.concatenate([X, params["mu"]], axis=1)
    s = jnp.concatenate([jnp.zeros_like(X), jnp.exp(params["log_s"])], axis=1)
    return _se_analytic(params["kernel"], mu, s, params["Z"])


def psi_analytic_se(state, se_hyperparams):
    """Exact statistics for one squared-exponential kernel over all ``Q`` columns.

    ``se_hyperparams`` is the :class:`KernelSpec` of that kernel.
    """
    spec = se_hyperparams
    if not isinstance(spec, KernelSpec) or not is_single_se(spec, state.L):
        raise KernelError("analytic statistics unavailable: need a single se kernel over all input columns")
    validate(spec, state.D, state.L)
    xi, psi1, psi2 = _analytic_from_params(spec, state_params(state, spec), jnp.asarray(state.X))
    return PsiStats(float(xi), np.asarray(psi1), np.asarray(psi2))


# -- KL and bound ---------------------------------------------------------------

def _kl(mu, log_s):
    return 0.5 * jnp.sum(jnp.exp(log_s) + mu ** 2 - 1.0 - log_s)


def kl_term(state):
    """KL from the latent Gaussians to a unit Gaussian prior (observed columns excluded)."""
    return float(_kl(jnp.asarray(state.mu_latent), jnp.asarray(state.log_s_latent)))


def _kuu(spec, params, D, alpha, jitter):
    link = latent_link(spec)
    Z = params["Z"]
    Zin = ExtendedInput(Z[:, :D], link(Z[:, D:]))
    K = gram(spec, params["kernel"], Zin, Zin, alpha, False)
    K = 0.5 * (K + K.T)
    return K + jitter * jnp.mean(jnp.diag(K)) * jnp.eye(K.shape[0])


def collapsed_bound(Y, Kuu, xi_w, psi_w, phi_w, b, log_b):
    """Collapsed bound from precision-weighted statistics (no KL term).

    With constant precision ``1/sigma^2`` this is the familiar
    ``log N``-structure through ``K_uu + Phi / sigma^2`` minus the trace
    correction ``(xi - tr(K_uu^-1 Phi)) / (2 sigma^2)``, summed over outputs.
    """
    N, P = Y.shape
    Lk = jnp.linalg.cholesky(Kuu)
    tmp = solve_triangular(Lk, phi_w, lower=True)
    Bm = solve_triangular(Lk, tmp.T, lower=True)
    Bm = 0.5 * (Bm + Bm.T)
    trace_kinv_phi = jnp.trace(Bm)
    Bm = Bm + jnp.eye(Kuu.shape[0])
    Lb = jnp.linalg.cholesky(Bm)
    c = solve_triangular(Lb, solve_triangular(Lk, psi_w.T @ Y, lower=True), lower=True)
    out = P * (-0.5 * N * LOG_2PI + 0.5 * jnp.sum(log_b))
    out = out - 0.5 * jnp.sum(b[:, None] * Y ** 2) + 0.5 * jnp.sum(c ** 2)
    out = out - P * jnp.sum(jnp.log(jnp.diag(Lb)))
    return out - 0.5 * P * (xi_w - trace_kinv_phi)


def objective(spec, params, X, Y, eps, alpha, jitter, analytic=False):
    """The full training objective: collapsed bound minus KL (traceable)."""
    D = X.shape[1]
    Kuu = _kuu(spec, params, D, alpha, jitter)
    if analytic:
        xi, psi1, psi2 = _analytic_from_params(spec, params, X)
        beta = jnp.exp(-params["log_noise"])
        N = X.shape[0]
        stats = (beta * xi, beta * psi1, beta * psi2, beta * jnp.ones(N), jnp.log(beta) * jnp.ones(N))
    else:
        stats = _mc_weighted_stats(spec, params, X, eps, alpha)
    return collapsed_bound(Y, Kuu, *stats) - _kl(params["mu"], params["log_s"])


def jitter_ladder():
    j = _config.JITTER
    while j <= _config.MAX_JITTER * (1 + 1e-12):
        yield j
        j *= 10


def lower_bound(Y, stats, state, spec, alpha=1.0, include_kl=True):
    """Collapsed evidence lower bound for precomputed statistics.

    Output columns of ``Y`` are independent with a shared kernel.  The jitter
    on ``K_uu`` is escalated up to ``1e-4`` (relative) before giving up.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if Y.shape[0] != state.N:
        Y = Y.T if Y.shape[1] == state.N else Y
    if Y.shape[0] != state.N or stats.psi1.shape != (state.N, state.M):
        raise ValueError("statistics, outputs and state disagree on dimensions")
    params = state_params(state, spec)
    if stats.precision is None:
        beta = 1.0 / state.noise_var
        weighted = (beta * stats.xi, beta * stats.psi1, beta * stats.psi2,
                    np.full(state.N, beta), np.full(state.N, np.log(beta)))
    else:
        weighted = (stats.xi, stats.psi1, stats.psi2, stats.precision, stats.log_precision)
    weighted = tuple(jnp.asarray(w) for w in weighted)
    for jitter in jitter_ladder():
        Kuu = _kuu(spec, params, state.D, alpha, jitter)
        value = float(collapsed_bound(jnp.asarray(Y), Kuu, *weighted))
        if np.isfinite(value):
            return value - (kl_term(state) if include_kl else 0.0)
    raise IllConditionedError("ill-conditioned inducing matrix")
