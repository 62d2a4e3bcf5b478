import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lgpr.kernels import (AnnealingSchedule, ExtendedInput, KernelError, KernelSpec, eval_kernel, factorizing,
                          juxtaposition, juxtaposition_eval, kernel_gradients, kernel_matrix, linear, log_params,
                          se, simplex_transform, validate, white, with_log_params)


def se_ref(xa, xb, var, ls):
    d = (np.asarray(xa, float) - np.asarray(xb, float)) / np.asarray(ls, float)
    return var * np.exp(-0.5 * np.sum(d * d))


def pt(x, lat=None):
    return ExtendedInput(np.atleast_1d(np.asarray(x, float)), None if lat is None else np.asarray(lat, float))


# -- eval_kernel examples ------------------------------------------------------

def test_corner_e1_collapses_to_first_component():
    k1, k2 = se(1.3, 0.7), se(0.4, 2.0)
    spec = factorizing([k1, k2])
    for alpha in (0.5, 1.0, 7.0, 50.0):
        v = eval_kernel(spec, pt(0.2, [1.0, 0.0]), pt(0.9, [1.0, 0.0]), alpha)
        assert v == pytest.approx(se_ref(0.2, 0.9, 1.3, 0.7), rel=1e-14)


def test_opposite_corners_are_independent():
    spec = factorizing([se(), se()])
    assert eval_kernel(spec, pt(0.1, [1, 0]), pt(0.1, [0, 1]), 3.0) == 0.0


def test_half_half_gives_half_covariance():
    k = se(2.0, 0.5)
    spec = factorizing([k, k])
    v = eval_kernel(spec, pt(0.3, [0.5, 0.5]), pt(-0.4, [0.5, 0.5]), 1.0)
    assert v == pytest.approx(0.5 * se_ref(0.3, -0.4, 2.0, 0.5), rel=1e-14)


def test_symmetry_and_latent_ignored_for_plain_kernels():
    spec = se(1.0, [0.5, 2.0]) + linear(0.3)
    a, b = pt([0.1, 1.0], [0.2, 0.3]), pt([-1.0, 0.5], [0.9, 0.1])
    assert eval_kernel(spec, a, b) == pytest.approx(eval_kernel(spec, b, a), rel=1e-15)
    assert eval_kernel(spec, a, b) == pytest.approx(eval_kernel(spec, pt([0.1, 1.0]), pt([-1.0, 0.5])), rel=1e-15)


def test_dimension_mismatch_names_lengths():
    spec = factorizing([se(), se(), se()])
    with pytest.raises(KernelError, match="expects latent length 3, got 2"):
        eval_kernel(spec, pt(0.0, [0.5, 0.5]), pt(0.0, [0.5, 0.5]))
    with pytest.raises(KernelError, match="expects 2 lengthscales"):
        validate(se(1.0, [1.0]), n_observed=2)


def test_non_finite_and_non_positive_hyperparameters_rejected():
    with pytest.raises(KernelError, match="non-finite"):
        validate(se(np.nan, 1.0), 1)
    with pytest.raises(KernelError, match="positive"):
        validate(white(-1.0), 1)


# -- kernel_matrix examples ----------------------------------------------------

def test_white_matrix_is_scaled_identity():
    X = np.linspace(0, 1, 7)[:, None]
    K = kernel_matrix(white(0.37), ExtendedInput(X, None))
    np.testing.assert_array_equal(K, 0.37 * np.eye(7))


def test_white_off_diagonal_between_distinct_sets():
    X = np.linspace(0, 1, 4)[:, None]
    K = kernel_matrix(white(2.0), ExtendedInput(X, None), ExtendedInput(X, None))
    np.testing.assert_array_equal(K, np.zeros((4, 4)))


def test_se_diagonal_is_signal_variance():
    X = np.random.default_rng(0).normal(size=(9, 2))
    K = kernel_matrix(se(1.7, [0.3, 3.0]), ExtendedInput(X, None))
    np.testing.assert_allclose(np.diag(K), 1.7, rtol=0, atol=1e-15)


def test_factorizing_psd_random_simplex():
    rng = np.random.default_rng(3)
    X = rng.uniform(-2, 2, size=(10, 1))
    lat = rng.dirichlet(np.ones(3), size=10)
    spec = factorizing([se(1.0, 0.5), se(2.0, 1.5), se(0.5, 0.2) + white(0.1)])
    K = kernel_matrix(spec, ExtendedInput(X, lat), alpha=2.0)
    np.testing.assert_allclose(K, K.T, atol=1e-14)
    assert np.linalg.eigvalsh(K).min() >= -1e-8


def test_matrix_matches_pointwise_evaluation():
    rng = np.random.default_rng(5)
    X, lat = rng.normal(size=(5, 1)), rng.uniform(0.1, 1, size=(5, 2))
    spec = factorizing([se(1.0, 0.7), se(0.3, 1.2)])
    K = kernel_matrix(spec, ExtendedInput(X, lat), ExtendedInput(X[:3], lat[:3]), alpha=3.0)
    for i in range(5):
        for j in range(3):
            assert K[i, j] == pytest.approx(eval_kernel(spec, pt(X[i], lat[i]), pt(X[j], lat[j]), 3.0), rel=1e-13)


def test_corner_assignment_gives_exact_block_structure():
    rng = np.random.default_rng(1)
    X = rng.uniform(0, 5, size=(12, 1))
    labels = np.array([0, 1, 2] * 4)
    lat = np.eye(3)[labels]
    comps = [se(1.0, 0.5), se(2.0, 1.0), se(0.5, 2.0)]
    K = kernel_matrix(factorizing(comps), ExtendedInput(X, lat), alpha=1.0)
    for a in range(3):
        for b in range(3):
            block = K[np.ix_(labels == a, labels == b)]
            if a != b:
                assert np.all(block == 0.0)
            else:
                ref = kernel_matrix(comps[a], ExtendedInput(X[labels == a], None))
                np.testing.assert_allclose(block, ref, rtol=1e-14)


# -- simplex transform ---------------------------------------------------------

def test_simplex_examples():
    np.testing.assert_allclose(simplex_transform([2.0, 1.0], 2.0), [0.8, 0.2], rtol=1e-14)
    np.testing.assert_allclose(simplex_transform([1.0, 1.0, 1.0], 9.0), [1 / 3] * 3, rtol=1e-14)
    out = simplex_transform([0.9, 0.1], 10.0)
    assert out[1] == pytest.approx(1.0 / (9.0 ** 10 + 1.0), rel=1e-12)


def test_simplex_errors():
    with pytest.raises(KernelError, match="degenerate latent"):
        simplex_transform([0.0, 0.0], 1.0)
    with pytest.raises(KernelError, match="nonnegative"):
        simplex_transform([1.0, -0.1], 1.0)
    with pytest.raises(KernelError):
        simplex_transform([1.0, 2.0], 0.0)


def test_simplex_exact_zero_entry():
    np.testing.assert_array_equal(simplex_transform([0.0, 3.0], 5.0), [0.0, 1.0])


def test_simplex_sum_and_argmax_over_random_draws():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        L = rng.integers(2, 6)
        v = rng.uniform(0, 3, size=L)
        alpha = float(np.exp(rng.uniform(np.log(0.1), np.log(100))))
        out = simplex_transform(v, alpha)
        assert abs(out.sum() - 1.0) <= 1e-12
        assert np.all(out >= 0)
        assert np.argmax(out) == np.argmax(v)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.01, 10.0), min_size=2, max_size=5).filter(lambda v: max(v) > min(v) * 1.0001),
       st.floats(0.1, 20.0), st.floats(1.0, 5.0))
def test_simplex_sharpening_is_monotone(v, alpha, factor):
    v = np.array(v)
    m = np.argmax(v)
    assert simplex_transform(v, alpha * factor)[m] >= simplex_transform(v, alpha)[m] - 1e-12


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.0, 1e3), min_size=1, max_size=6).filter(lambda v: max(v) > 0), st.floats(0.05, 200.0))
def test_simplex_is_a_distribution(v, alpha):
    out = simplex_transform(v, alpha)
    assert np.all(np.isfinite(out)) and np.all(out >= 0)
    assert abs(out.sum() - 1.0) <= 1e-12


# -- juxtaposition ------------------------------------------------------------

def test_juxtaposition_with_unit_linear_weights_reproduces_factorizing():
    rng = np.random.default_rng(7)
    comps = [se(1.0, 0.4), se(0.7, 1.1)]
    for _ in range(10):
        a, b = pt(rng.normal(), rng.uniform(0.1, 1, 2)), pt(rng.normal(), rng.uniform(0.1, 1, 2))
        ref = eval_kernel(factorizing(comps), a, b, 3.0)
        got = juxtaposition_eval([linear(1.0), linear(1.0)], comps, a, b, alpha=3.0)
        assert got == pytest.approx(ref, rel=1e-13)


def test_juxtaposition_without_transform_uses_raw_latents():
    a, b = pt(0.0, [0.3, -0.2]), pt(0.5, [1.5, 0.4])
    got = juxtaposition_eval([se(1.0, 1.0), linear(2.0)], [se(1.0, 0.5), se(1.0, 0.5)], a, b)
    ks = se_ref(0.0, 0.5, 1.0, 0.5)
    ref = se_ref(0.3, 1.5, 1.0, 1.0) * ks + 2.0 * (-0.2 * 0.4) * ks
    assert got == pytest.approx(ref, rel=1e-13)


def test_juxtaposition_length_mismatch():
    with pytest.raises(KernelError, match="as many weight kernels"):
        juxtaposition([linear()], [se(), se()])


# -- random composed kernels -----------------------------------------------------

def random_kernel(rng, depth=0):
    r = rng.uniform()
    if depth >= 2 or r < 0.4:
        kind = rng.choice(["se", "linear", "white"])
        if kind == "se":
            return se(rng.uniform(0.1, 3), rng.uniform(0.1, 3))
        if kind == "linear":
            return linear(rng.uniform(0.1, 3))
        return white(rng.uniform(0.01, 1))
    op = "sum" if r < 0.7 else "product"
    a, b = random_kernel(rng, depth + 1), random_kernel(rng, depth + 1)
    return a + b if op == "sum" else a * b


def test_psd_over_random_composed_kernels():
    rng = np.random.default_rng(11)
    worst = np.inf
    for i in range(100):
        n = 12
        X = rng.uniform(-2, 2, size=(n, 1))
        if i % 2:
            L = int(rng.integers(1, 4))
            spec = factorizing([random_kernel(rng) for _ in range(L)])
            lat = rng.uniform(0.05, 1.0, size=(n, L))
            K = kernel_matrix(spec, ExtendedInput(X, lat), alpha=float(rng.uniform(0.5, 10)))
        else:
            spec = random_kernel(rng)
            K = kernel_matrix(spec, ExtendedInput(X, None))
        scale = max(np.mean(np.diag(K)), 1e-12)
        worst = min(worst, np.linalg.eigvalsh(K + 1e-9 * scale * np.eye(n)).min())
    assert worst >= -1e-8


# -- serialisation and parameters ---------------------------------------------

def test_json_round_trip():
    spec = factorizing([se(1.5, [0.3]), se(0.2, 2.0) + white(0.05)])
    back = KernelSpec.from_json(spec.to_json())
    assert back == spec
    doc = json.loads(juxtaposition([linear()], [se()], transform="none").to_json())
    assert doc["options"] == {"transform": "none"}


def test_log_params_round_trip():
    spec = factorizing([se(1.5, [0.3]), se(0.2, 2.0) + white(0.05)])
    theta = log_params(spec)
    assert set(theta) == {"0.variance", "0.lengthscale", "1.variance", "1.lengthscale", "1.0.variance",
                          "1.0.lengthscale", "1.1.variance"} - {"1.variance", "1.lengthscale"}
    back = with_log_params(spec, theta)
    assert back.children[1].children[1].hyperparams["variance"] == pytest.approx(0.05, rel=1e-15)


def test_n_components():
    assert factorizing([se(), se(), se()]).n_components == 3
    assert juxtaposition([linear(), linear()], [se(), se()]).n_components == 2
    assert se().n_components == 0


# -- gradients -----------------------------------------------------------------

def test_kernel_gradients_match_finite_differences():
    rng = np.random.default_rng(4)
    X, lat = rng.normal(size=(4, 1)), rng.uniform(0.2, 1.0, size=(4, 2))
    spec = factorizing([se(1.2, 0.8), se(0.6, 1.4) + white(0.1)])
    A = ExtendedInput(X, lat)
    g = kernel_gradients(spec, A, alpha=2.0)
    theta = log_params(spec)
    h = 1e-6
    for j, name in enumerate(g["names"]):
        key, _, idx = name.partition("[")
        up = {k: np.array(v, dtype=float) for k, v in theta.items()}
        dn = {k: np.array(v, dtype=float) for k, v in theta.items()}
        pos = int(idx[:-1]) if idx else ()
        up[key][pos] += h
        dn[key][pos] -= h
        fd = (kernel_matrix(with_log_params(spec, up), A, alpha=2.0)
              - kernel_matrix(with_log_params(spec, dn), A, alpha=2.0)) / (2 * h)
        np.testing.assert_allclose(g["hyperparams"][:, :, j], fd, atol=1e-7)
    # latent derivative of K[i, j] w.r.t. the latent of A[i] (row argument)
    B = ExtendedInput(X[:3] + 0.1, lat[:3])
    g2 = kernel_gradients(spec, A, B, alpha=2.0)
    for l in range(2):
        up, dn = lat.copy(), lat.copy()
        up[:, l] += h
        dn[:, l] -= h
        fd = (kernel_matrix(spec, ExtendedInput(X, up), B, 2.0) - kernel_matrix(spec, ExtendedInput(X, dn), B, 2.0)) / (2 * h)
        np.testing.assert_allclose(g2["latent_a"][:, :, l], fd, atol=1e-7)


# -- annealing -----------------------------------------------------------------

def test_annealing_schedule():
    s = AnnealingSchedule(1.0, 1.005, 50.0)
    alphas = [s(t) for t in range(3000)]
    assert alphas[0] == 1.0
    assert all(b >= a for a, b in zip(alphas, alphas[1:]))
    assert max(alphas) == 50.0
    assert AnnealingSchedule(2.0, 1.0, 2.0)(10 ** 6) == 2.0
    with pytest.raises(ValueError):
        AnnealingSchedule(1.0, 0.99, 50.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 10), st.floats(1.0, 1.1), st.floats(10, 100), st.integers(0, 10 ** 7))
def test_annealing_properties(a0, g, amax, t):
    s = AnnealingSchedule(a0, g, max(amax, a0))
    assert s(0) == pytest.approx(a0)
    assert a0 * (1 - 1e-12) <= s(t) <= s(t + 1) <= max(amax, a0)
