import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mgmc import surrogates as sg
from mgmc.oracle import check_gradient
from mgmc.system import DCFunctionSpec

seeds = st.integers(0, 2**31 - 1)
SIGMA2 = 0.8


def _channels(rng, N=3, M=2, G=3):
    H = rng.standard_normal((N, M)) + 1j * rng.standard_normal((N, M))
    W = rng.standard_normal((M, G)) + 1j * rng.standard_normal((M, G))
    return H, W


def _embed(W, s):
    return np.concatenate([W.real.ravel(), W.imag.ravel(), [s]])


def _unembed(x, shape):
    k = int(np.prod(shape))
    return x[:k].reshape(shape) + 1j * x[k:2 * k].reshape(shape), x[2 * k]


# ---------------------------------------------------------------------------
# entropy penalty
# ---------------------------------------------------------------------------

def test_entropy_slope_examples():
    assert sg.taylor_entropy(0.5).slope == pytest.approx(0.0, abs=1e-15)
    assert sg.taylor_entropy(0.9).slope == pytest.approx(math.log(9.0), rel=1e-12)


def test_entropy_gradient_is_clamped_at_the_boundary():
    g = sg.entropy_grad(np.array([0.0, 1.0]))
    assert np.all(np.isfinite(g))
    lim = math.log(sg.ENTROPY_CLAMP / (1 - sg.ENTROPY_CLAMP))
    assert g[0] == pytest.approx(lim) and g[1] == pytest.approx(-lim)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_entropy_tangent_is_a_minorant(x0, x):
    t = sg.taylor_entropy(x0)
    inside = sg.ENTROPY_CLAMP <= x0 <= 1 - sg.ENTROPY_CLAMP
    # a clamped slope at the boundary overshoots by at most -log(1 - clamp) near 0 or 1
    slack = 1e-12 if inside else 2 * sg.ENTROPY_CLAMP
    assert float(t(x)) <= float(sg.entropy(x)) + slack
    if inside:
        assert float(t(x0)) == pytest.approx(float(sg.entropy(x0)), abs=1e-12)


# ---------------------------------------------------------------------------
# f and the quadratic tangents
# ---------------------------------------------------------------------------

def test_f_tangent_examples():
    tf = sg.taylor_f(0.3, 1.7, 4.0, weight=2.0)
    assert float(tf(0.3, 1.7, 4.0)) == pytest.approx(float(sg.f_exact(0.3, 1.7, 4.0, 2.0)), rel=1e-12)
    zero = sg.taylor_f(0.0, 0.0, 3.0, weight=1.5)
    assert float(zero(0.4, 2.0, 5.0)) == pytest.approx(-1.5 * (0.16 + 4.0) / 10.0, rel=1e-12)


def test_f_tangent_is_a_minorant():
    rng = np.random.default_rng(1)
    n = 1000
    e0, th0, t0 = rng.uniform(0, 1, n), rng.uniform(0, 5, n), rng.uniform(0.1, 100, n)
    e, th, t = rng.uniform(0, 1, n), rng.uniform(0, 5, n), rng.uniform(0.1, 100, n)
    w = rng.uniform(0.1, 3, n)
    tf = sg.taylor_f(e0, th0, t0, w)
    assert np.all(tf(e, th, t) <= sg.f_exact(e, th, t, w) + 1e-12)


def test_quadratic_tangent_examples():
    assert float(sg.taylor_G(0.0, 0.0)(0.7, 3.0)) == 0.0
    assert float(sg.taylor_G(0.4, 1.5)(0.4, 1.5)) == pytest.approx(0.16 + 2.25, rel=1e-12)
    assert float(sg.taylor_K(0.0, 0.0)(0.7, 3.0)) == 0.0
    assert float(sg.taylor_K(0.4, 1.5)(0.4, 1.5)) == pytest.approx(1.9 ** 2, rel=1e-12)


def test_quadratic_tangents_are_minorants():
    rng = np.random.default_rng(2)
    a0, b0, a, b = (rng.uniform(-3, 3, 1000) for _ in range(4))
    assert np.all(sg.taylor_G(a0, b0)(a, b) <= a ** 2 + b ** 2 + 1e-12)
    assert np.all(sg.taylor_K(a0, b0)(a, b) <= (a + b) ** 2 + 1e-12)


def test_p2_tangent():
    assert float(sg.taylor_p2(1.3, DCFunctionSpec())(2.0, 0.0)) == 0.0
    sq = DCFunctionSpec("quadratic", {"a": 3.0, "b": 0.0}, "quadratic", {"a": 1.0, "b": 0.0})
    t = sg.taylor_p2(1.0, sq)
    assert float(t.const) == pytest.approx(-1.0) and float(t.a) == pytest.approx(2.0)
    rng = np.random.default_rng(3)
    z0, z = rng.uniform(0, 5, 1000), rng.uniform(0, 5, 1000)
    t = sg.taylor_p2(z0, sq)
    assert np.all(t.const + t.a * z <= z ** 2 + 1e-12)


def test_gamma_sq_tangent():
    t = sg.taylor_gamma_sq(3.0, 20.0)
    assert float(t.a * 3.0 + t.b * 20.0) == pytest.approx(9.0 / 20.0, rel=1e-12)
    z = sg.taylor_gamma_sq(0.0, 20.0)
    assert float(z.a) == 0.0 and float(z.b) == 0.0
    rng = np.random.default_rng(4)
    g0, t0 = rng.uniform(0, 10, 1000), rng.uniform(0.1, 100, 1000)
    g, tt = rng.uniform(0, 10, 1000), rng.uniform(0.1, 100, 1000)
    tan = sg.taylor_gamma_sq(g0, t0)
    assert np.all(tan.a * g + tan.b * tt <= g ** 2 / tt + 1e-12)


# ---------------------------------------------------------------------------
# J and I
# ---------------------------------------------------------------------------

@given(seeds)
def test_J_tangent_is_exact_at_the_expansion_point(seed):
    rng = np.random.default_rng(seed)
    H, W0 = _channels(rng)
    alpha0 = rng.uniform(1, 5, (3, 3))
    tj = sg.taylor_J(H, W0, alpha0, SIGMA2)
    ref = sg.J_exact(H, W0, alpha0, SIGMA2)
    assert np.allclose(tj(H, W0, alpha0), ref, rtol=1e-12, atol=0)
    assert np.allclose(tj.value0, ref, rtol=1e-12, atol=0)


@given(seeds)
def test_J_tangent_is_a_minorant(seed):
    rng = np.random.default_rng(seed)
    H, W0 = _channels(rng)
    alpha0 = rng.uniform(1, 5, (3, 3))
    tj = sg.taylor_J(H, W0, alpha0, SIGMA2)
    for _ in range(20):
        W = 2 * (rng.standard_normal(W0.shape) + 1j * rng.standard_normal(W0.shape))
        alpha = rng.uniform(1, 10, (3, 3))
        assert np.all(tj(H, W, alpha) <= sg.J_exact(H, W, alpha, SIGMA2) + 1e-10)


def test_J_tangent_at_zero_precoders():
    H = np.ones((2, 2), dtype=complex)
    tj = sg.taylor_J(H, np.zeros((2, 3)), np.ones((2, 3)), SIGMA2)
    assert np.allclose(tj.value0, SIGMA2)
    assert np.allclose(tj.scalar_coef, -SIGMA2)
    assert np.all(tj.hw_coef == 0)


def test_I_tangent_examples():
    rng = np.random.default_rng(5)
    H, W0 = _channels(rng)
    eta0 = rng.uniform(0, 1, (3, 3))
    thr = np.array([[1.0, 3.0, 0.5]])
    ti = sg.taylor_I(H, W0, eta0, thr, SIGMA2)
    assert np.allclose(ti(H, W0, eta0), sg.I_exact(H, W0, eta0, thr, SIGMA2), rtol=1e-12, atol=0)
    # zero threshold: the linearization of the received power alone
    t0 = sg.taylor_I(H, W0, eta0, 0.0, SIGMA2)
    tj = sg.taylor_J(H, W0, np.ones((3, 3)), SIGMA2)
    W = rng.standard_normal(W0.shape) + 1j * rng.standard_normal(W0.shape)
    assert np.all(t0.scalar_coef == 0)
    assert np.allclose(t0(H, W, eta0), tj(H, W, np.ones((3, 3))), rtol=1e-12)


def test_I_tangent_is_a_minorant():
    rng = np.random.default_rng(6)
    H, W0 = _channels(rng)
    thr = np.array([[1.0, 3.0, 0.5]])
    ti = sg.taylor_I(H, W0, rng.uniform(0, 1, (3, 3)), thr, SIGMA2)
    for _ in range(200):
        W = 2 * (rng.standard_normal(W0.shape) + 1j * rng.standard_normal(W0.shape))
        eta = rng.uniform(0, 1, (3, 3))
        assert np.all(ti(H, W, eta) <= sg.I_exact(H, W, eta, thr, SIGMA2) + 1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    H, W0 = _channels(rng)
    i, j = 1, 2
    shape = W0.shape

    def fJ(x):
        W, a = _unembed(x, shape)
        return float(sg.J_exact(H, W, np.full((3, 3), a), SIGMA2)[i, j])

    def gJ(x):
        W, a = _unembed(x, shape)
        gW, ga = sg.grad_J(H, W, a, SIGMA2, i)
        return _embed(gW, ga)

    assert check_gradient(fJ, gJ, _embed(W0, rng.uniform(1, 4))) <= 1e-5

    thr = 2.0 ** 1.5 - 1.0

    def fI(x):
        W, e = _unembed(x, shape)
        return float(sg.I_exact(H, W, np.full((3, 3), e), thr, SIGMA2)[i, j])

    def gI(x):
        W, e = _unembed(x, shape)
        gW, ge = sg.grad_I(H, W, e, thr, SIGMA2, i)
        return _embed(gW, ge)

    assert check_gradient(fI, gI, _embed(W0, rng.uniform(0.1, 0.9))) <= 1e-5
