import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from wmx import numerics as nm
from oracles import jacobi_eigenvalues, kl_sum, naive_dft2, nss_by_hand, pearson_stats

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def matrices(min_side=1, max_side=6):
    shapes = st.tuples(st.integers(min_side, max_side), st.integers(min_side, max_side))
    return shapes.flatmap(lambda s: arrays(np.float64, s, elements=finite))


# -- svd --------------------------------------------------------------------------

def test_svd_identity_and_diag():
    assert np.allclose(nm.svd(np.eye(2))[1], [1, 1])
    u, s, vt = nm.svd(np.diag([3.0, 2.0]))
    assert np.allclose(s, [3, 2])
    assert np.allclose(np.abs(u), np.eye(2)) and np.allclose(np.abs(vt), np.eye(2))


def test_svd_matches_jacobi_oracle():
    m = np.random.default_rng(0).normal(size=(6, 4))
    s = nm.svd(m)[1]
    assert np.allclose(s ** 2, jacobi_eigenvalues(m.T @ m), atol=1e-8, rtol=0)


def test_svd_rejects_nonfinite():
    with pytest.raises(ValueError):
        nm.svd(np.array([[1.0, np.nan]]))


@settings(max_examples=60, deadline=None)
@given(matrices())
def test_svd_reconstructs(m):
    u, s, vt = nm.svd(m)
    scale = max(np.linalg.norm(m), 1.0)
    assert np.linalg.norm(u @ np.diag(s) @ vt - m) <= 1e-9 * scale
    assert np.all(np.diff(s) <= 1e-12 * scale)
    k = int(np.sum(s > 1e-9 * scale))
    assert np.allclose(u[:, :k].T @ u[:, :k], np.eye(k), atol=1e-9)
    assert np.allclose(vt[:k] @ vt[:k].T, np.eye(k), atol=1e-9)


# -- fft ----------------------------------------------------------------------------

def test_fft_constant_and_impulse():
    spec = nm.fft2(np.full((4, 6), 2.5))
    expect = np.zeros((4, 6), complex)
    expect[0, 0] = 2.5 * 24
    assert np.allclose(spec, expect, atol=1e-9)
    imp = np.zeros((5, 3))
    imp[0, 0] = 1
    assert np.allclose(nm.fft2(imp), 1, atol=1e-9)


def test_fft_matches_naive_dft():
    img = np.random.default_rng(1).normal(size=(8, 8))
    assert np.max(np.abs(nm.fft2(img) - naive_dft2(img))) <= 1e-9


@settings(max_examples=60, deadline=None)
@given(matrices(), finite, finite)
def test_fft_roundtrip_parseval_linearity(x, a, b):
    assert np.max(np.abs(nm.ifft2(nm.fft2(x)) - x), initial=0) <= 1e-9 * max(1, np.abs(x).max())
    spec = nm.fft2(x)
    assert math.isclose(np.sum(x ** 2), np.sum(np.abs(spec) ** 2) / x.size, rel_tol=1e-9, abs_tol=1e-9)
    y = np.roll(x, 1)
    lhs = nm.fft2(a * x + b * y)
    rhs = a * nm.fft2(x) + b * nm.fft2(y)
    assert np.max(np.abs(lhs - rhs)) <= 1e-9 * max(1, np.abs(lhs).max())


# -- low pass ---------------------------------------------------------------------

def test_low_pass_identity_and_mean():
    img = np.random.default_rng(2).normal(size=(6, 9))
    assert np.allclose(nm.low_pass(img, 54), img, atol=1e-9)
    assert np.allclose(nm.low_pass(img, 1), img.mean(), atol=1e-9)


def test_low_pass_rejects_bad_cutoff():
    with pytest.raises(ValueError):
        nm.low_pass(np.zeros((3, 3)), 0)
    with pytest.raises(ValueError):
        nm.low_pass(np.zeros((3, 3)), 10)


def test_low_pass_mask_is_conjugate_symmetric():
    for h, w, k in [(45, 85, 175), (8, 8, 7), (5, 6, 11)]:
        m = nm.low_pass_mask(h, w, k)
        partner = m[(-np.arange(h)) % h][:, (-np.arange(w)) % w]
        assert np.array_equal(m, partner)
        assert m.sum() >= k


@settings(max_examples=60, deadline=None)
@given(matrices(2, 8), st.data())
def test_low_pass_projection(x, data):
    k = data.draw(st.integers(1, x.size))
    once = nm.low_pass(x, k)
    scale = max(1.0, np.abs(x).max())
    assert np.max(np.abs(nm.low_pass(once, k) - once)) <= 1e-9 * scale
    assert np.sum(once ** 2) <= np.sum(x ** 2) + 1e-9 * scale ** 2
    assert np.max(np.abs(once.imag if np.iscomplexobj(once) else 0)) == 0
    y = np.roll(x, 1, axis=0)
    assert np.allclose(nm.low_pass(x + 2 * y, k), once + 2 * nm.low_pass(y, k), atol=1e-9 * scale * 3)


# -- kl ----------------------------------------------------------------------------------

def test_kl_closed_form_and_oracle():
    assert math.isclose(nm.kl_divergence([1, 0], [0.5, 0.5], eps=0), math.log(2), rel_tol=1e-12)
    assert nm.kl_divergence([0.2, 0.8], [0.2, 0.8]) == 0
    rng = np.random.default_rng(3)
    p, q = rng.random(10), rng.random(10)
    assert abs(nm.kl_divergence(p, q) - kl_sum(p, q)) <= 1e-12


def test_kl_errors():
    with pytest.raises(ValueError):
        nm.kl_divergence([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        nm.kl_divergence([1, -1], [1, 1])


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 6, elements=st.floats(0, 10)), arrays(np.float64, 6, elements=st.floats(0, 10)))
def test_kl_nonnegative(p, q):
    assert nm.kl_divergence(p, q) >= 0
    assert nm.kl_divergence(p, p) == 0


# -- correlation / cosine ------------------------------------------------------------

def test_correlation_distance_examples():
    u = np.array([1.0, 2.0, 3.0])
    assert abs(nm.correlation_distance(u, u)) < 1e-12
    assert abs(nm.correlation_distance(u, -u) - 2) < 1e-12
    v = np.array([1.0, 2.0, 4.0])
    assert abs(nm.correlation_distance(u, v) - (1 - pearson_stats(u, v))) < 1e-12
    with pytest.raises(ValueError):
        nm.correlation_distance(u, np.ones(3))


def test_correlation_distance_uncentered_is_literal_formula():
    u, v = np.array([1.0, 2.0, 3.0]), np.array([1.0, 2.0, 4.0])
    literal = 1 - (u - u.mean()) @ (v - v.mean()) / (np.linalg.norm(u) * np.linalg.norm(v))
    assert abs(nm.correlation_distance(u, v, centered=False) - literal) < 1e-12


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 8, elements=st.floats(-100, 100)), arrays(np.float64, 8, elements=st.floats(-100, 100)),
       st.floats(0.1, 10), st.floats(-10, 10), st.floats(0.1, 10), st.floats(-10, 10))
def test_correlation_distance_affine_invariant(u, v, a, b, c, d):
    if np.ptp(u) < 1e-3 or np.ptp(v) < 1e-3:
        return
    r = nm.correlation_distance(u, v)
    assert 0 <= r <= 2
    assert abs(nm.correlation_distance(a * u + b, c * v + d) - r) <= 1e-7


def test_cosine_examples():
    u = np.array([1.0, 2.0])
    assert math.isclose(nm.cosine_similarity(u, u), 1)
    assert abs(nm.cosine_similarity(u, np.array([-2.0, 1.0]))) < 1e-15
    assert math.isclose(nm.cosine_similarity(u, -u), -1)
    with pytest.raises(ValueError):
        nm.cosine_similarity(u, np.zeros(2))


# -- pulse, nss, pearson, minmax ----------------------------------------------------

def test_heaviside_pulse():
    p = nm.heaviside_pulse(400, 80, 159)
    assert np.array_equal(np.flatnonzero(p), np.arange(80, 159))
    assert not nm.heaviside_pulse(10, 4, 4).any()
    assert nm.heaviside_pulse(10, 0, 10).all()
    with pytest.raises(ValueError):
        nm.heaviside_pulse(10, 5, 4)


@given(st.integers(1, 50).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, n), st.integers(0, n))))
def test_heaviside_sum(args):
    n, a, b = args
    r1, r2 = min(a, b), max(a, b)
    assert nm.heaviside_pulse(n, r1, r2).sum() == r2 - r1


def test_nss_hand_value():
    sal = np.array([[1.0, 0.0], [0.0, 0.0]])
    assert abs(nm.nss(sal, sal > 0) - 0.75 / (math.sqrt(3) / 4)) < 1e-12
    assert abs(nm.nss(sal, sal > 0) - 1.7320508075688772) < 1e-12
    assert nm.nss(np.full((3, 3), 4.0), np.eye(3)) == 0.0
    with pytest.raises(ValueError):
        nm.nss(sal, np.zeros((2, 2)))


def test_nss_planted_overlap_matches_oracle():
    rng = np.random.default_rng(4)
    sal = rng.random((9, 13))
    fix = np.zeros((9, 13), bool)
    fix[2:4, 5:8] = True
    sal[fix] += 2.0
    assert abs(nm.nss(sal, fix) - nss_by_hand(sal, fix)) <= 1e-9


def test_nss_random_average_near_zero():
    rng = np.random.default_rng(5)
    vals = []
    for _ in range(1000):
        fix = np.zeros(64, bool)
        fix[rng.choice(64, 4, replace=False)] = True
        vals.append(nm.nss(rng.random((8, 8)), fix.reshape(8, 8)))
    assert abs(np.mean(vals)) <= 0.05


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (4, 5), elements=st.floats(-50, 50)), st.floats(0.01, 100), st.floats(-100, 100))
def test_nss_affine_invariant(sal, a, b):
    fix = np.zeros((4, 5), bool)
    fix[1, 2] = fix[3, 0] = True
    if sal.std() < 1e-6:
        return
    assert abs(nm.nss(a * sal + b, fix) - nm.nss(sal, fix)) <= 1e-6


def test_pearson_examples():
    rng = np.random.default_rng(6)
    a, b = rng.random((5, 7)), rng.random((5, 7))
    assert abs(nm.pearson(a, a) - 1) <= 1e-9
    assert abs(nm.pearson(a, -a) + 1) <= 1e-9
    assert abs(nm.pearson(a, b) - pearson_stats(a, b)) <= 1e-12
    with pytest.raises(ValueError):
        nm.pearson(a, np.ones_like(a))


def test_minmax():
    assert np.allclose(nm.minmax_normalize([2, 4, 6]), [0, 0.5, 1])
    assert np.array_equal(nm.minmax_normalize([5, 5]), [0, 0])
    v = nm.minmax_normalize(np.random.default_rng(7).normal(size=100))
    assert v.min() == 0 and v.max() == 1


def test_fix_sign_and_gradient():
    v = nm.fix_sign(np.array([[1.0, -3.0], [0.5, 0.2]]))
    assert np.array_equal(v, [[-1.0, 3.0], [0.5, 0.2]])
    g = nm.central_gradient(np.array([0.0, 1.0, 4.0, 9.0]))
    assert np.allclose(g, [1.0, 2.0, 4.0, 5.0])
    with pytest.raises(ValueError):
        nm.central_gradient(np.zeros(2))
