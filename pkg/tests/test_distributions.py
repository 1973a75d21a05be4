import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from vbayes.distributions import (
    DirichletParams,
    NormalParams,
    NormalWishartParams,
    WishartParams,
    digamma,
    dirichlet_geometric_mean,
    dirichlet_update,
    kl_dirichlet,
    kl_divergence,
    kl_normal,
    kl_normal_wishart,
    kl_wishart,
    multi_digamma,
    normal_wishart_update,
    wishart_expected_logdet,
    wishart_geometric_mean_det,
)

import oracles

positive = st.floats(min_value=1e-3, max_value=1e3, allow_nan=False)


def spd(rng, d, scale=1.0):
    M = rng.standard_normal((d, d))
    return scale * (M @ M.T + d * np.eye(d))


# ---- digamma ---------------------------------------------------------------


def test_digamma_recurrence_step():
    assert digamma(2.0) - digamma(1.0) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("x, ref", [(1.0, -0.57721566490153286), (0.5, -1.9635100260214235)])
def test_digamma_reference_values(x, ref):
    assert abs(digamma(x) - ref) < 1e-12


def test_digamma_matches_mpmath_on_grid():
    xs = np.concatenate([np.linspace(1e-3, 1, 50), np.linspace(1, 30, 200), [50, 100, 1e4, 1e8]])
    ours = digamma(xs)
    ref = np.array([oracles.psi(x) for x in xs])
    assert np.max(np.abs(ours - ref)) < 1e-12


def test_digamma_tiny_argument_relative_accuracy():
    # absolute error is dominated by -1/x here; relative error is at ulp level
    for x in (1e-6, 1e-8, 1e-12):
        assert digamma(x) == pytest.approx(oracles.psi(x), rel=1e-14)


def test_digamma_recurrence_grid():
    xs = np.round(np.arange(0.1, 100.0001, 0.1), 10)
    assert np.max(np.abs(digamma(xs + 1) - digamma(xs) - 1 / xs)) < 1e-12


def test_digamma_scalar_and_array_agree():
    xs = np.array([0.3, 2.5, 17.0])
    assert np.array_equal(digamma(xs), np.array([digamma(float(x)) for x in xs]))


def test_digamma_rejects_nonpositive():
    with pytest.raises(ValueError):
        digamma(0.0)
    with pytest.raises(ValueError):
        digamma(np.array([1.0, -2.0]))


@given(st.floats(min_value=1e-4, max_value=1e6))
def test_digamma_property_against_mpmath(x):
    assert digamma(x) == pytest.approx(oracles.psi(x), rel=1e-12, abs=1e-12)


def test_multi_digamma_is_derivative_of_multigammaln():
    from scipy.special import multigammaln

    a, d, h = 3.7, 3, 1e-5
    fd = (multigammaln(a + h, d) - multigammaln(a - h, d)) / (2 * h)
    assert multi_digamma(a, d) == pytest.approx(fd, rel=1e-8)


# ---- Dirichlet -------------------------------------------------------------


def test_dirichlet_geometric_mean_symmetric():
    g = dirichlet_geometric_mean(DirichletParams([2.5, 2.5, 2.5]))
    assert np.all(g == g[0])


def test_dirichlet_geometric_mean_unit():
    g = dirichlet_geometric_mean(DirichletParams([1.0, 1.0]))
    assert np.allclose(g, math.exp(-1), atol=1e-14)


def test_dirichlet_geometric_mean_monte_carlo():
    lam = np.array([100.0, 300.0])
    rng = np.random.default_rng(0)
    mc = np.exp(np.log(rng.dirichlet(lam, size=200_000)).mean(axis=0))
    g = dirichlet_geometric_mean(DirichletParams(lam))
    assert np.allclose(g, mc, rtol=2e-3)
    assert np.allclose(g, lam / lam.sum(), rtol=0.01)


@given(st.lists(st.floats(min_value=0.05, max_value=500), min_size=2, max_size=6))
def test_dirichlet_geometric_mean_below_mean(lams):
    p = DirichletParams(lams)
    assert np.all(dirichlet_geometric_mean(p) < p.mean())


def test_dirichlet_update_examples():
    assert np.array_equal(dirichlet_update(DirichletParams([1, 1]), [3, 5]).lambdas, [4, 6])
    assert np.array_equal(dirichlet_update(DirichletParams([1, 1]), [0, 0]).lambdas, [1, 1])
    assert np.array_equal(dirichlet_update(DirichletParams([1, 1, 1]), [1, 0, 0]).lambdas, [2, 1, 1])


def test_dirichlet_update_rejects_bad_counts():
    with pytest.raises(ValueError):
        dirichlet_update(DirichletParams([1, 1]), [1, -1])
    with pytest.raises(ValueError):
        dirichlet_update(DirichletParams([1, 1]), [1, 1, 1])


@given(st.lists(st.tuples(st.floats(0, 50), st.floats(0, 50)), min_size=3, max_size=3))
def test_dirichlet_update_associative(rows):
    c1, c2 = np.array(rows).T
    prior = DirichletParams([1.0, 2.0, 0.5])
    two = dirichlet_update(dirichlet_update(prior, c1), c2)
    one = dirichlet_update(prior, c1 + c2)
    assert np.allclose(two.lambdas, one.lambdas, rtol=1e-14)


def test_dirichlet_validation():
    with pytest.raises(ValueError):
        DirichletParams([1.0, 0.0])


# ---- Wishart ---------------------------------------------------------------


def test_wishart_geometric_mean_det_examples():
    assert wishart_geometric_mean_det(WishartParams(1.0, [[1.0]]), 1) == pytest.approx(
        math.exp(oracles.psi(1.0)), rel=1e-14)
    assert wishart_geometric_mean_det(WishartParams(1.0, [[1.0]]), 1) == pytest.approx(0.5615, abs=1e-4)
    a = 2.3
    assert wishart_geometric_mean_det(WishartParams(a, np.eye(2)), 2) == pytest.approx(
        math.exp(2 * oracles.psi(a)), rel=1e-13)
    assert wishart_geometric_mean_det(WishartParams(3.0, [[2.0]]), 1) == pytest.approx(
        0.5 * math.exp(oracles.psi(1.0) + 1.5), rel=1e-13)


def test_wishart_dimension_mismatch():
    with pytest.raises(ValueError):
        wishart_geometric_mean_det(WishartParams(2.0, np.eye(2)), 3)


def test_wishart_moments_monte_carlo():
    rng = np.random.default_rng(1)
    d, a = 3, 2.5
    B = spd(rng, d, 0.5)
    w = WishartParams(a, B)
    nu = 2 * a + d - 1
    draws = stats.wishart(df=nu, scale=np.linalg.inv(2 * B)).rvs(size=100_000, random_state=rng)
    assert np.allclose(draws.mean(axis=0), w.mean(), rtol=0.02, atol=0.02 * np.abs(w.mean()).max())
    mc = np.mean(np.linalg.slogdet(draws)[1])
    assert wishart_expected_logdet(w) == pytest.approx(mc, abs=0.01)


def test_wishart_normalizer_by_quadrature_1d():
    w = WishartParams(2.2, [[0.7]])
    val, _ = integrate.quad(lambda g: g ** (w.a - 1) * math.exp(-0.7 * g), 0, np.inf)
    assert w.log_normalizer() == pytest.approx(math.log(val), abs=1e-10)


def test_kl_wishart_1d_quadrature():
    q, p = WishartParams(3.0, [[2.0]]), WishartParams(1.5, [[0.5]])

    def logpdf(w, g):
        return (w.a - 1) * math.log(g) - w.B[0, 0] * g - w.log_normalizer()

    val, _ = integrate.quad(lambda g: math.exp(logpdf(q, g)) * (logpdf(q, g) - logpdf(p, g)),
                            0, np.inf, epsabs=1e-12)
    assert kl_wishart(q, p) == pytest.approx(val, abs=1e-6)


# ---- Normal-Wishart --------------------------------------------------------


def test_normal_wishart_weight_zero_is_identity():
    prior = NormalWishartParams(2.0, np.eye(2), [0.0, 1.0], 0.5)
    assert normal_wishart_update(prior, 0.0, [5.0, 5.0], np.eye(2)) is prior


def test_normal_wishart_shape_update():
    prior = NormalWishartParams(1.0, [[1.0]], [0.0], 1.0)
    post = normal_wishart_update(prior, 10.0, [0.3], [[2.0]])
    assert post.a == 11.0
    assert post.beta == 11.0


def test_normal_wishart_matches_normal_gamma():
    rng = np.random.default_rng(2)
    y = rng.normal(1.0, 2.0, size=37)
    a0, b0, xi0, beta0 = 2.0, 1.5, 0.3, 0.7
    prior = NormalWishartParams.from_wishart(WishartParams(a0, [[b0]]), [xi0], beta0)
    post = normal_wishart_update(prior, y.size, [y.mean()], [[y.var()]])
    aN, bN, xiN, betaN = oracles.normal_gamma_posterior(y, a0, b0, xi0, beta0)
    w = post.wishart()
    assert w.a == pytest.approx(aN, rel=1e-12)
    assert w.B[0, 0] == pytest.approx(bN, rel=1e-10)
    assert post.xi[0] == pytest.approx(xiN, rel=1e-12)
    assert post.beta == pytest.approx(betaN, rel=1e-12)


@given(st.integers(2, 40), st.integers(2, 40), st.integers(0, 10_000))
def test_normal_wishart_sequential_equals_batch(n1, n2, seed):
    rng = np.random.default_rng(seed)
    d = 2
    Y1, Y2 = rng.normal(size=(n1, d)), rng.normal(size=(n2, d)) + 1
    prior = NormalWishartParams(d + 1.0, np.eye(d), np.zeros(d), 0.5)

    def upd(p, Y):
        return normal_wishart_update(p, Y.shape[0], Y.mean(axis=0), np.cov(Y, rowvar=False, bias=True))

    seq = upd(upd(prior, Y1), Y2)
    batch = upd(prior, np.vstack([Y1, Y2]))
    assert seq.a == pytest.approx(batch.a)
    assert seq.beta == pytest.approx(batch.beta)
    assert np.allclose(seq.xi, batch.xi, rtol=1e-10, atol=1e-12)
    assert np.allclose(seq.B, batch.B, rtol=1e-10)


@given(st.floats(0.1, 1e3), st.floats(0.01, 100))
def test_normal_wishart_beta_additive(weight, beta):
    prior = NormalWishartParams(3.0, np.eye(2), np.zeros(2), beta)
    post = normal_wishart_update(prior, weight, np.ones(2), np.eye(2))
    assert post.beta == beta + weight


def test_normal_wishart_rejects_bad_scatter():
    prior = NormalWishartParams(3.0, np.eye(2), np.zeros(2), 1.0)
    with pytest.raises(ValueError):
        normal_wishart_update(prior, 2.0, np.zeros(2), [[1.0, 0.0], [0.5, 1.0]])
    with pytest.raises(ValueError):
        normal_wishart_update(prior, 2.0, np.zeros(2), -np.eye(2))


# ---- KL --------------------------------------------------------------------


def test_kl_self_is_zero():
    rng = np.random.default_rng(3)
    recs = [
        DirichletParams([0.5, 2.0, 7.0]),
        WishartParams(2.5, spd(rng, 3)),
        NormalParams([1.0, -1.0], spd(rng, 2)),
        NormalWishartParams(4.0, spd(rng, 2), [0.5, 0.5], 2.0),
    ]
    for r in recs:
        assert abs(kl_divergence(r, r)) < 1e-12


def test_kl_dirichlet_monte_carlo():
    q, p = DirichletParams([2.0, 3.0]), DirichletParams([1.0, 1.0])
    rng = np.random.default_rng(4)
    x = rng.dirichlet(q.lambdas, size=400_000)
    ratio = stats.dirichlet.logpdf(x.T, q.lambdas) - stats.dirichlet.logpdf(x.T, p.lambdas)
    se = ratio.std() / math.sqrt(ratio.size)
    assert abs(kl_dirichlet(q, p) - ratio.mean()) < 3 * se


def test_kl_normal_closed_form():
    q = NormalParams([1.0], [[4.0]])
    p = NormalParams([0.0], [[1.0]])
    # variances 1/4 and 1
    ref = math.log(1 / 0.5) + (0.25 + 1.0) / 2 - 0.5
    assert kl_normal(q, p) == pytest.approx(ref, rel=1e-13)


def test_kl_normal_wishart_monte_carlo():
    rng = np.random.default_rng(5)
    q = NormalWishartParams(5.0, [[2.0]], [0.5], 3.0)
    p = NormalWishartParams(2.0, [[1.0]], [0.0], 1.0)

    def sample(nw, n):
        w = nw.wishart()
        g = rng.gamma(w.a, 1 / w.B[0, 0], size=n)
        x = rng.normal(nw.xi[0], 1 / np.sqrt(nw.beta * g))
        return x, g

    def logpdf(nw, x, g):
        w = nw.wishart()
        return (stats.gamma.logpdf(g, w.a, scale=1 / w.B[0, 0])
                + stats.norm.logpdf(x, nw.xi[0], 1 / np.sqrt(nw.beta * g)))

    x, g = sample(q, 400_000)
    r = logpdf(q, x, g) - logpdf(p, x, g)
    assert abs(kl_normal_wishart(q, p) - r.mean()) < 3 * r.std() / math.sqrt(r.size)


@given(st.integers(0, 10_000))
def test_kl_nonnegative(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 4))
    pairs = [
        (DirichletParams(rng.uniform(0.1, 5, 3)), DirichletParams(rng.uniform(0.1, 5, 3))),
        (WishartParams(rng.uniform(1, 5), spd(rng, d)), WishartParams(rng.uniform(1, 5), spd(rng, d))),
        (NormalParams(rng.normal(size=d), spd(rng, d)), NormalParams(rng.normal(size=d), spd(rng, d))),
        (NormalWishartParams(d + rng.uniform(0, 4), spd(rng, d), rng.normal(size=d), rng.uniform(0.1, 3)),
         NormalWishartParams(d + rng.uniform(0, 4), spd(rng, d), rng.normal(size=d), rng.uniform(0.1, 3))),
    ]
    for q, p in pairs:
        assert kl_divergence(q, p) >= -1e-12


def test_kl_family_mismatch():
    with pytest.raises(TypeError):
        kl_divergence(DirichletParams([1, 1]), WishartParams(2.0, [[1.0]]))


def test_parameter_validation():
    with pytest.raises(ValueError):
        WishartParams(2.0, [[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(ValueError):
        NormalParams([0.0], [[-1.0]])
    with pytest.raises(ValueError):
        NormalWishartParams(0.5, np.eye(2), [0.0, 0.0], 1.0)


def test_mpmath_available_for_oracles():
    assert float(mpmath.digamma(1)) == pytest.approx(-0.5772156649015329)
