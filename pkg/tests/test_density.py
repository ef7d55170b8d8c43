from math import pi

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from ttdensity import _poly
from ttdensity.coords import equidistant_partition
from ttdensity.density import (
    THREADS_ENV,
    BasisConfig,
    BuildOptions,
    LayeredDensity,
    TTDensity,
    affine_monomial_terms,
    build,
    default_workers,
    hankel_orthonormal_coefficients,
    marginal_projection,
    outer_gaussian_mass,
    spherical_exponents,
)
from ttdensity.exceptions import CapExceeded, TTDensityError
from ttdensity.transport import (
    AffineMap,
    LogDensity,
    TransportMap,
    banana_log_density,
    banana_map,
    gaussian_log_density,
    perturbed_prior,
)
from ttdensity.tt import FitOptions

# a mildly skewed, non-separable prior on R^2, close to what a decent transport leaves behind
MIX = [(0.6, np.array([0.15, -0.1]), np.array([[1.0, 0.1], [0.1, 0.8]])),
       (0.4, np.array([-0.2, 0.15]), np.array([[0.9, -0.05], [-0.05, 1.1]]))]


def mixture_logpdf(X):
    comps = [np.log(w) + stats.multivariate_normal(m, c).logpdf(X) for w, m, c in MIX]
    return np.logaddexp(*comps)


MIXTURE = LogDensity(mixture_logpdf, 2, vectorized=True)
pytestmark = pytest.mark.filterwarnings("ignore::ttdensity.exceptions.NotConvergedWarning")
R = 7.0


@pytest.fixture(scope="module")
def mixture_surrogate():
    part = equidistant_partition(5, R, 2)
    opts = BuildOptions(n_samples=600, fit=FitOptions(max_rank=4), seed=3)
    return build(MIXTURE, part, BasisConfig(radial_degree=9, trig_size=11), opts)


def polar_quadrature(ld, fn, n_r=24, n_t=96):
    """Tensor Gauss-Legendre (radius) x trapezoid (angle) over every shell."""
    t, w = np.polynomial.legendre.leggauss(n_r)
    th = 2 * pi * np.arange(n_t) / n_t
    total = 0.0
    for a, b in zip(ld.partition.radii[:-1], ld.partition.radii[1:]):
        r = 0.5 * (b - a) * t + 0.5 * (a + b)
        rr, tt = np.meshgrid(r, th, indexing="ij")
        X = np.column_stack([(rr * np.cos(tt)).ravel(), (rr * np.sin(tt)).ravel()]) + ld.partition.center
        W = np.outer(0.5 * (b - a) * w * r, np.full(n_t, 2 * pi / n_t)).ravel()
        total = total + W @ fn(X)
    return total


def raw_surrogate(ld):
    from ttdensity.coords import cartesian_to_polar

    def fn(X):
        layers, xhat = cartesian_to_polar(ld.partition, X)
        out = np.empty(len(X))
        for l in np.unique(layers):
            sel = layers == l
            out[sel] = ld.layer_weights[l] * ld.layers[l].tt.evaluate(xhat[sel], check=False)
        return out * ld.normalizer
    return fn


def test_surrogate_fits_mixture(mixture_surrogate):
    ld = mixture_surrogate
    rng = np.random.default_rng(0)
    X = rng.standard_normal((500, 2)) * 0.8
    Z = ld.normalization_constant()
    assert Z == pytest.approx(1.0, abs=1e-3)
    rel = np.abs(ld.eval(X) - np.exp(mixture_logpdf(X))) / np.exp(mixture_logpdf(X)).max()
    assert rel.max() < 5e-3


def test_total_mass_is_one(mixture_surrogate):
    ld = mixture_surrogate
    inside = polar_quadrature(ld, ld.eval)
    # tail: spherical Gaussian outside the ball, integrated radially
    t, w = np.polynomial.legendre.leggauss(60)
    r = R + 5.0 * (t + 1)
    tail_density = ld.tail_scale * ld.normalizer * np.exp(-0.5 * r**2) / (2 * pi)
    outside = np.sum(5.0 * w * 2 * pi * r * tail_density)
    assert inside + outside == pytest.approx(1.0, abs=1e-5)
    assert ld.covered_mass() + ld.mass_tail * ld.normalizer == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("alpha", [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (3, 0), (2, 1), (1, 2), (0, 3)])
def test_moment_affine_vs_quadrature(mixture_surrogate, alpha):
    ld = mixture_surrogate
    T = AffineMap([[1.2, 0.3], [-0.4, 0.9]], [0.5, -1.0])
    closed = ld.moment_affine(T, alpha)
    def integrand(X):
        Y = T.apply(X)
        return np.prod(Y ** np.array(alpha), axis=1) * raw_surrogate(ld)(X)

    ref = polar_quadrature(ld, integrand)
    assert closed == pytest.approx(ref, rel=1e-5, abs=1e-12)


def test_moment_adaptive_quadrature_spot_check(mixture_surrogate):
    from scipy.integrate import dblquad

    ld = mixture_surrogate
    T = AffineMap([[1.2, 0.3], [-0.4, 0.9]], [0.5, -1.0])
    f = raw_surrogate(ld)

    def integrand(theta, r):
        x = np.array([[r * np.cos(theta), r * np.sin(theta)]])
        y = T.apply(x)[0]
        return r * y[0] * y[1] ** 2 * f(x)[0]

    ref = sum(dblquad(integrand, a, b, 0, 2 * pi, epsabs=1e-9, epsrel=1e-9)[0]
              for a, b in zip(ld.partition.radii[:-1], ld.partition.radii[1:]))
    assert ld.moment_affine(T, (1, 2)) == pytest.approx(ref, rel=1e-5)


def test_polynomial_map_moments_vs_quadrature(mixture_surrogate):
    ld = mixture_surrogate
    T = banana_map()
    closed = ld.moment(T, (1, 1))
    ref = polar_quadrature(ld, lambda X: np.prod(T.apply(X), axis=1) * raw_surrogate(ld)(X))
    assert closed == pytest.approx(ref, rel=1e-6)


def test_mean_and_cov_match_mixture(mixture_surrogate):
    mean, cov = mixture_surrogate.mean_and_cov()
    true_mean = sum(w * m for w, m, _ in MIX)
    true_second = sum(w * (c + np.outer(m, m)) for w, m, c in MIX)
    assert np.allclose(mean, true_mean, atol=1e-4)
    assert np.allclose(cov, true_second - np.outer(true_mean, true_mean), atol=1e-4)


def test_moment_qoi_agrees_with_closed_form(mixture_surrogate):
    ld = mixture_surrogate
    T = AffineMap([[1.0, 0.5], [0.0, 1.0]], [1.0, 2.0])
    est, se = ld.moment_qoi(T, lambda Y: Y[:, 0] * Y[:, 1], 4000, rng=1, include_tail=False)
    assert abs(est - ld.moment(T, (1, 1))) < 4 * se + 1e-12


class _Sinh(TransportMap):
    dim = 2

    def apply(self, x):
        return np.sinh(self._check(x))

    def jacobian(self, x):
        x = self._check(x)
        if x.ndim == 1:
            return np.diag(np.cosh(x))
        return np.einsum("ni,ij->nij", np.cosh(x), np.eye(2))


def test_non_polynomial_map_falls_back_to_sampling(mixture_surrogate):
    ld = mixture_surrogate
    with pytest.raises(TypeError):
        ld.moment(_Sinh(), (1, 0))
    mean, _ = ld.mean_and_cov(_Sinh(), n_mc=20000, rng=0)
    ref = polar_quadrature(ld, lambda X: np.sinh(X) * raw_surrogate(ld)(X)[:, None]) / ld.covered_mass()
    assert np.allclose(mean, ref, atol=0.02)


def test_moment_cap(mixture_surrogate):
    with pytest.raises(CapExceeded):
        mixture_surrogate.moment(AffineMap.identity(2), (3, 2))
    with pytest.raises(CapExceeded):
        mixture_surrogate.marginal_moments(AffineMap.identity(2), 0, 5)


def test_serialization_round_trip(mixture_surrogate, tmp_path):
    path = tmp_path / "s.json"
    mixture_surrogate.save(path)
    back = LayeredDensity.load(path)
    X = np.random.default_rng(1).standard_normal((50, 2)) * 3
    assert np.array_equal(back.eval(X), mixture_surrogate.eval(X))
    T = AffineMap.identity(2)
    assert back.moment(T, (2, 1)) == mixture_surrogate.moment(T, (2, 1))
    data = mixture_surrogate.to_dict()
    data["format_version"] = 99
    with pytest.raises(TTDensityError):
        LayeredDensity.from_dict(data)
    assert back.summary()["n_layers"] == 5


def test_worker_count_does_not_change_result():
    part = equidistant_partition(3, 5.0, 2)
    cfg = BasisConfig(radial_degree=5, trig_size=5)
    a = build(MIXTURE, part, cfg, BuildOptions(n_samples=200, seed=9, max_workers=1))
    b = build(MIXTURE, part, cfg, BuildOptions(n_samples=200, seed=9, max_workers=3))
    for la, lb in zip(a.layers, b.layers):
        assert all(np.array_equal(x, y) for x, y in zip(la.tt.cores, lb.tt.cores))


def test_thread_env_var(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "3")
    assert default_workers() == 3
    monkeypatch.setenv(THREADS_ENV, "zero")
    with pytest.raises(ValueError):
        default_workers()
    monkeypatch.setenv(THREADS_ENV, "0")
    with pytest.raises(ValueError):
        default_workers()


@pytest.mark.parametrize("d", [2, 3, 5])
def test_exact_transport_gaussian(d):
    mean = np.full(d, 1.0)
    sigma2 = 1e-6
    target = gaussian_log_density(mean, sigma2 * np.eye(d))
    T = AffineMap(np.sqrt(sigma2) * np.eye(d), mean)
    part = equidistant_partition(10, 8.0, d)
    ld = build(perturbed_prior(target, T), part, BasisConfig(radial_degree=7),
               BuildOptions(n_samples=300, fit=FitOptions(max_rank=1), seed=0))
    assert ld.normalization_constant() == pytest.approx(1.0, rel=1e-4)
    m, C = ld.mean_and_cov(T)
    assert np.allclose(m, mean, rtol=1e-10)
    assert np.allclose(C, sigma2 * np.eye(d), rtol=1e-5, atol=1e-5 * sigma2)


def test_unit_and_matched_tail_scale_agree_for_normalized_prior():
    part = equidistant_partition(4, 4.0, 2)
    prior = gaussian_log_density(np.zeros(2), np.eye(2))
    cfg = BasisConfig(radial_degree=7)
    a = build(prior, part, cfg, BuildOptions(n_samples=200, tail_scale="matched"))
    b = build(prior, part, cfg, BuildOptions(n_samples=200, tail_scale="unit"))
    assert a.normalization_constant() == pytest.approx(b.normalization_constant(), rel=1e-8)


def test_laplace_and_user_tails():
    part = equidistant_partition(3, 4.0, 2)
    cfg = BasisConfig(radial_degree=5, trig_size=5)
    ld = build(MIXTURE, part, cfg, BuildOptions(n_samples=200, tail="laplace", tail_mc_samples=20000))
    assert ld.mass_tail_se > 0
    ld = build(MIXTURE, part, cfg, BuildOptions(n_samples=200, tail="user", tail_mean=[0, 0],
                                                tail_cov=np.eye(2) * 2, tail_mc_samples=20000))
    assert ld.mass_tail_gauss == pytest.approx(np.exp(-16 / 4), rel=0.2)
    with pytest.raises(ValueError):
        build(MIXTURE, part, cfg, BuildOptions(n_samples=50, tail="user"))


@pytest.mark.parametrize("d", [2, 3, 6])
def test_outer_gaussian_mass_closed_form(d):
    mass, se = outer_gaussian_mass(np.zeros(d), 2.0 * np.eye(d), np.zeros(d), 3.0)
    assert se == 0.0
    assert mass == pytest.approx(stats.chi2.sf(9.0 / 2.0, d), rel=1e-12)


def test_outer_gaussian_mass_monte_carlo():
    mass, se = outer_gaussian_mass([0.1, 0.0], np.eye(2), [0.0, 0.0], 2.0, n_mc=200000, rng=0)
    ref = stats.ncx2.sf(4.0, 2, 0.01)
    assert abs(mass - ref) < 4 * se


@given(st.lists(st.integers(0, 3), min_size=2, max_size=3), st.integers(0, 2**31 - 1))
def test_affine_monomial_expansion(alpha, seed):
    rng = np.random.default_rng(seed)
    d = len(alpha)
    H, M = rng.standard_normal((d, d)), rng.standard_normal(d)
    terms = affine_monomial_terms(H, M, alpha)
    x = rng.standard_normal(d)
    direct = np.prod((H @ x + M) ** np.array(alpha))
    assert sum(c * np.prod(x ** np.array(g)) for g, c in terms.items()) == pytest.approx(direct, rel=1e-10,
                                                                                       abs=1e-10)


@given(st.lists(st.integers(0, 3), min_size=2, max_size=5), st.integers(0, 2**31 - 1))
def test_spherical_exponents_reproduce_monomials(gamma, seed):
    from ttdensity.coords import PolarChart

    rng = np.random.default_rng(seed)
    d = len(gamma)
    chart = PolarChart(0, 0.0, 2.0, d)
    lo, hi = chart.box
    xhat = lo + (hi - lo) * rng.random(d)
    x = chart.to_cartesian(xhat)
    m, pairs = spherical_exponents(gamma)
    val = xhat[0] ** m
    for k, (s, c) in enumerate(pairs):
        val *= np.sin(xhat[k + 1]) ** s * np.cos(xhat[k + 1]) ** c
    assert val == pytest.approx(np.prod(x ** np.array(gamma)), rel=1e-9, abs=1e-12)


def test_hankel_coefficients_give_hermite():
    # standard normal moments: 1, 0, 1, 0, 3, 0, 15
    C = hankel_orthonormal_coefficients([1, 0, 1, 0, 3, 0, 15], 4)
    assert np.allclose(np.abs(C[2]), np.abs(np.array([-1, 0, 1, 0]) / np.sqrt(2)))
    beta = np.array([1, 0, 1, 0, 3, 0, 15])
    # projection of the weight itself onto phi_k is e_0
    assert np.allclose(marginal_projection(beta, C), [1, 0, 0, 0], atol=1e-12)


def test_estimator_on_banana():
    est = TTDensity(n_layers=6, radius=7.0, radial_degree=7, trig_size=5, n_samples=300, max_rank=2,
                    random_state=0)
    est.fit(banana_log_density(), banana_map())
    assert est.normalization_constant_ == pytest.approx(1.0, rel=1e-4)
    mean, cov = est.mean_and_cov()
    assert np.allclose(mean, [0.0, -2.0], atol=1e-4)
    assert np.allclose(cov, [[1.0, 0.9], [0.9, 3.0]], atol=1e-3)
    Y = np.array([[0.0, -1.0], [0.5, -2.0]])
    assert np.allclose(est.score_samples(Y), banana_log_density()(Y), atol=1e-4)
    assert est.marginal_moments(0, 2)[0] == pytest.approx(est.density_.covered_mass())
    assert est.get_params()["n_layers"] == 6


def test_estimator_requires_fit():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        TTDensity().mean_and_cov()
    with pytest.raises(TypeError):
        TTDensity().fit(lambda x: x)


def test_basis_config_validation():
    with pytest.raises(ValueError):
        BasisConfig(trig_size=0)
    with pytest.raises(ValueError):
        BasisConfig(tau_mant=10)
