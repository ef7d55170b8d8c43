"""Univariate orthonormal bases and their weighted one-dimensional integrals.

Polynomial families are generated by Gram-Schmidt in arbitrary precision
(``mpmath``) on monomials of the affinely rescaled variable
``t = (x - c) / s`` with ``[a, b] -> [-1, 1]``. Coefficients are kept in
high precision for integral tables; point evaluation runs in double.

Basis functions are indexed from 0 (``P_0`` is the constant function).
"""
import threading
from contextlib import contextmanager
from functools import lru_cache
from math import ceil, comb, pi, sqrt

import mpmath
import numpy as np
from scipy.special import beta as beta_fn

from .exceptions import PrecisionLoss

DEFAULT_TAU_MANT = 100

# mpmath keeps its working precision in process-global state
_MP_LOCK = threading.RLock()


@contextmanager
def _precision(dps):
    with _MP_LOCK, mpmath.workdps(dps):
        yield


class BigPolynomial:
    """Polynomial in ``t = (x - center) / scale`` with mpmath coefficients."""

    def __init__(self, coefficients, center, scale, precision):
        self.coefficients = list(coefficients)
        self.center = center
        self.scale = scale
        self.precision = int(precision)

    @property
    def degree(self):
        return len(self.coefficients) - 1

    def __call__(self, x):
        with _precision(self.precision):
            t = (mpmath.mpf(x) - self.center) / self.scale
            return mpmath.polyval(self.coefficients[::-1], t)


class OrthonormalBasis1D:
    family = None

    def __init__(self, interval, size):
        self.interval = (float(interval[0]), float(interval[1]))
        self.size = int(size)

    def __len__(self):
        return self.size

    def evaluate(self, x):
        """Basis values, shape ``(len(x), size)``."""
        raise NotImplementedError

    def weight(self, x):
        raise NotImplementedError

    def weight_mass(self):
        raise NotImplementedError

    def monomial_integrals(self, m):
        """``int x^m P_j(x) w(x) dx`` for every ``j``."""
        raise NotImplementedError

    def trigpower_integrals(self, a, b):
        """``int P_j(x) sin^a(x) cos^b(x) w(x) dx`` for every ``j``."""
        raise NotImplementedError

    def contains(self, x, tol=1e-12):
        x = np.asarray(x)
        lo, hi = self.interval
        return (x >= lo - tol) & (x <= hi + tol)


class TrigBasis(OrthonormalBasis1D):
    """Real Fourier basis on ``[0, 2 pi]`` with unit weight.

    ``P_0 = 1/sqrt(2 pi)``; odd 0-based index ``j`` carries
    ``sin((j + 1) / 2 x) / sqrt(pi)``, even ``j > 0`` carries
    ``cos(j / 2 x) / sqrt(pi)``.
    """

    family = "trig"

    def __init__(self, size):
        if size < 1:
            raise ValueError("basis size must be >= 1")
        super().__init__((0.0, 2 * pi), size)

    @property
    def max_frequency(self):
        return self.size // 2

    def evaluate(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty((x.size, self.size))
        out[:, 0] = 1.0 / sqrt(2 * pi)
        for j in range(1, self.size):
            if j % 2 == 1:
                out[:, j] = np.sin((j + 1) // 2 * x) / sqrt(pi)
            else:
                out[:, j] = np.cos(j // 2 * x) / sqrt(pi)
        return out

    def weight(self, x):
        return np.ones_like(np.asarray(x, dtype=float))

    def weight_mass(self):
        return 2 * pi

    def _trapezoid(self, values_fn, extra_degree):
        # the periodic trapezoid rule is exact for trigonometric polynomials below n_pts
        n_pts = 2 * (self.max_frequency + extra_degree) + 2
        x = 2 * pi * np.arange(n_pts) / n_pts
        return (2 * pi / n_pts) * (self.evaluate(x).T @ values_fn(x))

    def monomial_integrals(self, m):
        from scipy.integrate import quad

        out = np.empty(self.size)
        for j in range(self.size):
            f = lambda x, j=j: x**m * self.evaluate([x])[0, j]
            out[j] = quad(f, 0, 2 * pi, limit=200)[0]
        return out

    def trigpower_integrals(self, a, b):
        return self._trapezoid(lambda x: np.sin(x) ** a * np.cos(x) ** b, a + b)

    def to_dict(self):
        return {"family": "trig", "size": self.size, "interval": list(self.interval)}


class PolynomialBasis(OrthonormalBasis1D):
    """Orthonormal polynomials ``P_0, ..., P_{n-1}`` of ascending degree."""

    def __init__(self, family, interval, polynomials, weight_param, tau_mant, moment_fn):
        super().__init__(interval, len(polynomials))
        self.family = family
        self.polynomials = polynomials
        self.weight_param = weight_param
        self.tau_mant = tau_mant
        self._moment_fn = moment_fn
        a, b = self.interval
        self._center = 0.5 * (a + b)
        self._scale = 0.5 * (b - a)
        n = self.size
        self.coef = np.zeros((n, n))
        for j, p in enumerate(polynomials):
            self.coef[j, : len(p.coefficients)] = [float(c) for c in p.coefficients]

    def evaluate(self, x):
        t = (np.atleast_1d(np.asarray(x, dtype=float)) - self._center) / self._scale
        V = np.vander(t, self.size, increasing=True)
        return V @ self.coef.T

    def weight(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == "radial":
            return x ** (self.weight_param - 1)
        return np.sin(x) ** self.weight_param

    def _moments(self, K):
        return self._moment_fn(K)

    def weight_mass(self):
        return float(self._moments(1)[0])

    def monomial_integrals(self, m):
        n = self.size
        with _precision(self.tau_mant):
            mu = self._moments(n + m)
            s, c = mpmath.mpf(self._scale), mpmath.mpf(self._center)
            # x^m expanded in powers of t
            xm = [comb(m, q) * s**q * c ** (m - q) for q in range(m + 1)]
            out = []
            for p in self.polynomials:
                acc = mpmath.mpf(0)
                for k, ck in enumerate(p.coefficients):
                    for q, xq in enumerate(xm):
                        acc += ck * xq * mu[k + q]
                out.append(float(acc))
        return np.array(out)

    def trigpower_integrals(self, a, b):
        deg = self.size - 1
        extra = self.weight_param if self.family == "angular" else 0
        n_nodes = ceil((deg + a + b + extra) / 2) + 24
        t, w = np.polynomial.legendre.leggauss(n_nodes)
        x = self._center + self._scale * t
        vals = np.sin(x) ** a * np.cos(x) ** b * self.weight(x) * w * self._scale
        return self.evaluate(x).T @ vals

    def to_dict(self):
        return {
            "family": self.family,
            "interval": list(self.interval),
            "weight_param": self.weight_param,
            "tau_mant": self.tau_mant,
            "coefficients": [[mpmath.nstr(c, self.tau_mant) for c in p.coefficients] for p in self.polynomials],
        }


def _gram_schmidt(mu, n, tau_mant, center, scale):
    """Orthonormalize monomials ``t^0..t^{n-1}`` under the moment functional ``mu``.

    Modified Gram-Schmidt with one reorthogonalization pass.
    """
    G = [[mu[p + q] for q in range(n)] for p in range(n)]

    def inner(u, v):
        return mpmath.fsum(u[p] * G[p][q] * v[q] for p in range(len(u)) for q in range(len(v)) if u[p] and v[q])

    threshold = mpmath.mpf(10) ** (-tau_mant / 2)
    basis = []
    for k in range(n):
        v = [mpmath.mpf(0)] * k + [mpmath.mpf(1)]
        for _ in range(2):
            for q in basis:
                proj = inner(q, v)
                v = [vi - proj * (q[i] if i < len(q) else 0) for i, vi in enumerate(v)]
        nrm2 = inner(v, v)
        if nrm2 <= 0 or mpmath.sqrt(nrm2) < threshold:
            raise PrecisionLoss(f"degree {k} basis function lost all precision (tau_mant={tau_mant})")
        nrm = mpmath.sqrt(nrm2)
        v = [vi / nrm for vi in v]
        if v[-1] < 0:
            v = [-vi for vi in v]
        basis.append(v)
    return [BigPolynomial(v, center, scale, tau_mant) for v in basis]


def _radial_moments_fn(a, b, d, tau_mant):
    """Moments ``int_a^b t^k x^(d-1) dx`` (exact, closed form)."""
    cache = []

    def fn(K):
        with _precision(tau_mant):
            A, B = mpmath.mpf(a), mpmath.mpf(b)
            s, c = (B - A) / 2, (A + B) / 2
            while len(cache) < K:
                k = len(cache)
                acc = mpmath.mpf(0)
                for m in range(d):
                    if (k + m) % 2 == 0:
                        acc += comb(d - 1, m) * s**m * c ** (d - 1 - m) * mpmath.mpf(2) / (k + m + 1)
                cache.append(s * acc)
        return cache[:K]

    return fn


@lru_cache(maxsize=None)
def _clenshaw_curtis(n, dps):
    """Clenshaw-Curtis nodes and weights on [-1, 1] with ``n + 1`` points (n even)."""
    with _precision(dps):
        nodes, weights = [], []
        half = n // 2
        for j in range(n + 1):
            nodes.append(mpmath.cos(j * mpmath.pi / n))
            acc = mpmath.mpf(1)
            for k in range(1, half + 1):
                bk = 1 if k == half else 2
                acc -= mpmath.mpf(bk) / (4 * k * k - 1) * mpmath.cos(2 * k * j * mpmath.pi / n)
            cj = 1 if j in (0, n) else 2
            weights.append(cj * acc / n)
    return nodes, weights


@lru_cache(maxsize=None)
def angular_moments(i, K, tau_mant):
    """``int_0^pi t^k sin^i(theta) dtheta`` for ``k < K`` with ``t = 2 theta/pi - 1``.

    Clenshaw-Curtis quadrature in arbitrary precision, refined by doubling
    until two successive levels agree to ``tau_mant / 2`` digits.
    """
    dps = tau_mant + 10
    with _precision(dps):
        tol = mpmath.mpf(10) ** (-tau_mant / 2)
        half_pi = mpmath.pi / 2

        def level(n):
            nodes, weights = _clenshaw_curtis(n, dps)
            base = [w * mpmath.cos(half_pi * t) ** i for t, w in zip(nodes, weights)]
            out = []
            for k in range(K):
                if k % 2:
                    out.append(mpmath.mpf(0))
                else:
                    out.append(half_pi * mpmath.fsum(b * t**k for b, t in zip(base, nodes)))
            return out

        n = 16
        prev = level(n)
        while True:
            n *= 2
            cur = level(n)
            if all(abs(c - p) <= tol * max(abs(c), 1) for c, p in zip(cur, prev)):
                return tuple(cur)
            if n > 4096:
                raise PrecisionLoss("angular moment quadrature failed to converge")
            prev = cur


def _angular_moments_fn(i, tau_mant):
    def fn(K):
        # round K up so that repeated requests share a cache entry
        K2 = max(16, 1 << (max(int(K), 1) - 1).bit_length())
        return list(angular_moments(i, K2, tau_mant))[:K]

    return fn


def radial_basis(interval, n, d, tau_mant=DEFAULT_TAU_MANT):
    """Orthonormal polynomials on ``[a, b]`` for the weight ``x^(d-1)``."""
    a, b = float(interval[0]), float(interval[1])
    n, d = int(n), int(d)
    if not 0 <= a < b:
        raise ValueError("need 0 <= a < b")
    if n < 1 or d < 1:
        raise ValueError("need n >= 1 and d >= 1")
    if tau_mant < 50:
        raise ValueError("tau_mant must be >= 50")
    moment_fn = _radial_moments_fn(a, b, d, tau_mant)
    with _precision(tau_mant):
        mu = moment_fn(2 * n - 1)
        polys = _gram_schmidt(mu, n, tau_mant, mpmath.mpf(a + b) / 2, mpmath.mpf(b - a) / 2)
    return PolynomialBasis("radial", (a, b), polys, d, tau_mant, moment_fn)


def angular_basis(i, n, tau_mant=DEFAULT_TAU_MANT):
    """Orthonormal polynomials on ``[0, pi]`` for the weight ``sin^i``."""
    i, n = int(i), int(n)
    if i < 1 or n < 1:
        raise ValueError("need i >= 1 and n >= 1")
    if tau_mant < 50:
        raise ValueError("tau_mant must be >= 50")
    moment_fn = _angular_moments_fn(i, tau_mant)
    with _precision(tau_mant):
        mu = moment_fn(2 * n - 1)
        polys = _gram_schmidt(mu, n, tau_mant, mpmath.pi / 2, mpmath.pi / 2)
    return PolynomialBasis("angular", (0.0, pi), polys, i, tau_mant, moment_fn)


def trig_basis(n):
    return TrigBasis(n)


def weighted_monomial_integral(basis, m, j):
    """``int x^m P_j(x) w(x) dx`` over the basis interval (``j`` is 0-based)."""
    return float(basis.monomial_integrals(m)[j])


def trig_power_integral(a, b, family):
    """Closed-form ``int sin^a cos^b`` over ``[0, 2 pi]`` (``"trig"``) or ``[0, pi]`` (``"angular"``)."""
    if a < 0 or b < 0:
        raise ValueError("exponents must be non-negative")
    if b % 2:
        return 0.0
    half = beta_fn((a + 1) / 2, (b + 1) / 2)
    if family == "trig":
        return 0.0 if a % 2 else 2.0 * half
    if family == "angular":
        return half
    raise ValueError(f"unknown family {family!r}")


def basis_times_trigpower_integral(basis, j, a, b):
    """``int P_j sin^a cos^b w`` (``j`` is 0-based)."""
    return float(basis.trigpower_integrals(a, b)[j])


def basis_from_dict(data):
    family = data["family"]
    if family == "trig":
        return TrigBasis(data["size"])
    tau = int(data["tau_mant"])
    a, b = data["interval"]
    with _precision(tau):
        center, scale = (mpmath.mpf(a) + mpmath.mpf(b)) / 2, (mpmath.mpf(b) - mpmath.mpf(a)) / 2
        if family == "angular":
            center = scale = mpmath.pi / 2
        polys = [BigPolynomial([mpmath.mpf(c) for c in cs], center, scale, tau) for cs in data["coefficients"]]
    if family == "radial":
        moment_fn = _radial_moments_fn(a, b, int(data["weight_param"]), tau)
    else:
        moment_fn = _angular_moments_fn(int(data["weight_param"]), tau)
    return PolynomialBasis(family, (a, b), polys, int(data["weight_param"]), tau, moment_fn)
