"""Layered tensor-train surrogate of a (perturbed) density with a Gaussian tail.

Inside the ball ``K`` of radius ``R`` every spherical shell carries its own
tensor train in polar coordinates; outside ``K`` a Gaussian stands in for the
density. All masses below are stored relative to ``exp(log_scale)`` so that
densities spanning hundreds of orders of magnitude stay representable.
"""
import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import comb, factorial

import numpy as np
from scipy.special import gammaincc
from sklearn.base import BaseEstimator

from . import _poly
from .basis import DEFAULT_TAU_MANT, angular_basis, radial_basis, trig_basis
from .coords import LayerPartition, cartesian_to_polar, equidistant_partition
from .exceptions import CapExceeded, NegativeLayerMass, TTDensityError
from .sampling import layer_rng, sample_chart, sample_layer
from .transport import AffineMap, LogDensity, gaussian_log_density, laplace_affine, perturbed_prior
from .tt import ExtendedTT, FitOptions, contract_rank1, fit_als

THREADS_ENV = "TTDENSITY_NUM_THREADS"
FORMAT_VERSION = 1


def default_workers():
    value = os.environ.get(THREADS_ENV)
    if value:
        try:
            n = int(value)
        except ValueError as exc:
            raise ValueError(f"{THREADS_ENV} must be a positive integer, got {value!r}") from exc
        if n < 1:
            raise ValueError(f"{THREADS_ENV} must be a positive integer, got {value!r}")
        return n
    return os.cpu_count() or 1


@dataclass(frozen=True)
class BasisConfig:
    """Per-dimension basis sizes.

    ``trig_size`` counts basis functions, so ``2 k + 1`` covers Fourier
    frequencies up to ``k``.
    """

    radial_degree: int = 7
    trig_size: int = 1
    angular_degree: int = 0
    tau_mant: int = DEFAULT_TAU_MANT

    def __post_init__(self):
        if self.radial_degree < 0 or self.trig_size < 1 or self.angular_degree < 0:
            raise ValueError("basis sizes must be positive")
        if self.tau_mant < 50:
            raise ValueError("tau_mant must be at least 50")


@dataclass
class BuildOptions:
    """Reconstruction settings.

    ``tail`` selects the Gaussian on the unbounded remainder: ``"identity"``
    (mean at the partition center, unit covariance), ``"user"``
    (``tail_mean``/``tail_cov``), ``"laplace"`` (mode and inverse Hessian of
    the prior) or ``"surrogate"`` (moments of the truncated surrogate).
    ``tail_scale="matched"`` scales the tail so that its density level is
    consistent with the fitted inner mass; ``"unit"`` takes the tail Gaussian
    in the absolute units of the prior (exact when the prior is normalized).
    """

    n_samples: object = 1000
    fit: FitOptions = field(default_factory=FitOptions)
    tail: str = "identity"
    tail_mean: object = None
    tail_cov: object = None
    tail_scale: str = "matched"
    tail_mc_samples: int = 10**6
    seed: int = 0
    max_workers: object = None
    moment_cap: int = 4

    def samples_for(self, layer):
        if np.ndim(self.n_samples) == 0:
            return int(self.n_samples)
        return int(self.n_samples[layer])


@dataclass
class LayerSurrogate:
    tt: ExtendedTT
    log_offset: float
    integral: float
    diagnostics: dict = field(default_factory=dict)


def _layer_bases(chart, cfg, angular_cache):
    d = chart.dim
    bases = [radial_basis((chart.rho_min, chart.rho_max), cfg.radial_degree + 1, d, cfg.tau_mant),
             trig_basis(cfg.trig_size)]
    for i in range(1, d - 1):
        bases.append(angular_cache[i])
    return bases


def _mass_vectors(bases):
    vecs = [bases[0].monomial_integrals(0)]
    vecs += [b.trigpower_integrals(0, 0) for b in bases[1:]]
    return vecs


def _fit_layer(layer, chart, prior, cfg, opts, angular_cache):
    start = time.perf_counter()
    rng = layer_rng(opts.seed, layer)
    bases = _layer_bases(chart, cfg, angular_cache)
    samples = sample_layer(rng, chart, prior, opts.samples_for(layer))
    tt, diag = fit_als(samples.points, samples.values, bases, opts.fit, random_state=rng)
    integral = contract_rank1(tt, _mass_vectors(bases))
    fitted = tt.evaluate(samples.points, check=False)
    info = {
        "layer": layer,
        "n_samples": len(samples),
        "ranks": tt.ranks,
        "residuals": diag.residuals,
        "validation_residual": diag.validation_residual,
        "stop_reason": diag.stop_reason,
        "converged": diag.converged,
        "clamped_fraction": float(np.mean(fitted < 0)),
        "seconds": time.perf_counter() - start,
    }
    return LayerSurrogate(tt, samples.log_offset, float(integral), info), samples


def outer_gaussian_mass(mean, cov, center, radius, n_mc=10**6, rng=None):
    """Mass of ``N(mean, cov)`` outside the ball ``|x - center| < radius``.

    Closed form through the regularized upper incomplete Gamma function when
    the Gaussian is spherical and centered on the ball, Monte Carlo
    otherwise. Returns ``(mass, standard_error)``.
    """
    mean, cov, center = np.asarray(mean, float), np.atleast_2d(cov), np.asarray(center, float)
    d = mean.size
    s2 = cov[0, 0]
    if np.allclose(mean, center, atol=0, rtol=0) and np.array_equal(cov, s2 * np.eye(d)):
        return float(gammaincc(d / 2, radius**2 / (2 * s2))), 0.0
    rng = np.random.default_rng(rng)
    X = rng.multivariate_normal(mean, cov, size=n_mc, method="cholesky")
    out = np.linalg.norm(X - center, axis=1) >= radius
    p = float(out.mean())
    return p, float(np.sqrt(max(p * (1 - p), 0.0) / n_mc))


def affine_monomial_terms(H, M, alpha):
    """Expand ``prod_k ((H x)_k + M_k)^{alpha_k}`` into ``{gamma: coefficient}``.

    Each factor is expanded binomially in the constant ``M_k`` and
    multinomially in the linear part; exponents of the same monomial are
    merged.
    """
    H, M = np.asarray(H, float), np.asarray(M, float)
    d = M.size
    out = {(0,) * d: 1.0}
    for k, a in enumerate(alpha):
        if a == 0:
            continue
        factor = {}
        for j in range(a + 1):
            base = comb(a, j) * M[k] ** (a - j)
            if base == 0.0:
                continue
            for beta in _compositions(j, d):
                c = base * factorial(j)
                for i, b in enumerate(beta):
                    c *= H[k, i] ** b / factorial(b)
                if c != 0.0:
                    factor[beta] = factor.get(beta, 0.0) + c
        out = _poly.mul(out, factor)
    return out


def _compositions(n, parts):
    """All non-negative integer vectors of length ``parts`` summing to ``n``, lexicographic."""
    if parts == 1:
        yield (n,)
        return
    for first in range(n, -1, -1):
        for rest in _compositions(n - first, parts - 1):
            yield (first,) + rest


def spherical_exponents(gamma):
    """Per-coordinate trig exponents of the direction monomial ``u^gamma``.

    Returns ``(radial_power, [(sin_exp, cos_exp) for theta_0, theta_1, ...])``.
    """
    d = len(gamma)
    pairs = [(gamma[1], gamma[0])]
    for i in range(1, d - 1):
        pairs.append((sum(gamma[: i + 1]), gamma[i + 1]))
    return sum(gamma), pairs


class LayeredDensity:
    """Hybrid surrogate: layer tensor trains inside the ball, Gaussian outside.

    ``eval`` returns values of the normalized surrogate density in the
    reference space; ``normalization_constant`` estimates the integral of the
    (unnormalized) prior.
    """

    def __init__(self, partition, layers, tail_mean, tail_cov, tail_scale, log_scale, mass_tail_gauss,
                 mass_tail_se=0.0, metadata=None, moment_cap=4):
        self.partition = partition
        self.layers = list(layers)
        self.tail_mean = np.asarray(tail_mean, float)
        self.tail_cov = np.atleast_2d(np.asarray(tail_cov, float))
        self.tail_scale = float(tail_scale)
        self.log_scale = float(log_scale)
        self.mass_tail_gauss = float(mass_tail_gauss)
        self.mass_tail_se = float(mass_tail_se)
        self.metadata = dict(metadata or {})
        self.moment_cap = int(moment_cap)
        self.layer_weights = np.array([np.exp(l.log_offset - self.log_scale) for l in self.layers])
        self.mass_inside = float(np.dot(self.layer_weights, [l.integral for l in self.layers]))
        self.mass_tail = self.tail_scale * self.mass_tail_gauss
        self.normalizer = 1.0 / (self.mass_inside + self.mass_tail)
        self._tail_logpdf = gaussian_log_density(self.tail_mean, self.tail_cov)
        self._memo = {}
        self._lock = threading.Lock()
        self.clamp_events = 0

    @property
    def dim(self):
        return self.partition.dim

    @property
    def n_layers(self):
        return self.partition.n_layers

    def normalization_constant(self):
        return (self.mass_inside + self.mass_tail) * np.exp(self.log_scale)

    def log_normalization_constant(self):
        return np.log(self.mass_inside + self.mass_tail) + self.log_scale

    def covered_mass(self):
        """Normalized mass of the layered region (one minus the tail share)."""
        return self.mass_inside * self.normalizer

    # evaluation -----------------------------------------------------------------
    def eval(self, x):
        """Normalized surrogate density at reference-space points."""
        x = np.asarray(x, float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        out = np.empty(len(X))
        layer_idx = self.partition.locate(X)
        tail = layer_idx >= self.n_layers
        if np.any(tail):
            out[tail] = self.tail_scale * np.exp(self._tail_logpdf(X[tail]))
        inside = ~tail
        if np.any(inside):
            layers, xhat = cartesian_to_polar(self.partition, X[inside])
            vals = np.empty(len(layers))
            for l in np.unique(layers):
                sel = layers == l
                vals[sel] = self.layer_weights[l] * self.layers[l].tt.evaluate(xhat[sel], check=False)
            neg = vals < 0
            if np.any(neg):
                with self._lock:
                    self.clamp_events += int(neg.sum())
            out[inside] = np.clip(vals, 0.0, None)
        out *= self.normalizer
        return out[0] if single else out

    __call__ = eval

    def log_eval(self, x):
        with np.errstate(divide="ignore"):
            return np.log(self.eval(x))

    def target_density(self, transport, y):
        """Surrogate density pushed forward to the target space."""
        y = np.asarray(y, float)
        x = transport.invert(y)
        return self.eval(x) * np.exp(-transport.log_abs_det_jacobian(x))

    # closed-form moments -----------------------------------------------------
    def _vector(self, layer, dim_index, a, b):
        key = (layer, dim_index, a, b)
        vec = self._memo.get(key)
        if vec is None:
            basis = self.layers[layer].tt.bases[dim_index]
            vec = basis.monomial_integrals(a) if dim_index == 0 else basis.trigpower_integrals(a, b)
            with self._lock:
                self._memo[key] = vec
        return vec

    def layer_monomial_integral(self, layer, gamma):
        """``int_{shell} u^gamma g_layer`` with ``u = x - center`` (relative scale)."""
        m, pairs = spherical_exponents(gamma)
        vecs = [self._vector(layer, 0, m, 0)]
        vecs += [self._vector(layer, k + 1, s, c) for k, (s, c) in enumerate(pairs)]
        return contract_rank1(self.layers[layer].tt, vecs)

    def polynomial_moment(self, poly):
        """Normalized integral of a polynomial in ``x`` over the layered region."""
        center = self.partition.center
        if np.any(center != 0):
            shift = [_poly.add(_poly.variable(i, self.dim), _poly.constant(center[i], self.dim))
                     for i in range(self.dim)]
            poly = _poly.compose(poly, shift, self.dim)
        total = 0.0
        for l, w in enumerate(self.layer_weights):
            if w == 0.0:
                continue
            total += w * sum(c * self.layer_monomial_integral(l, g) for g, c in poly.items())
        return total * self.normalizer

    def _check_cap(self, alpha):
        alpha = tuple(int(a) for a in alpha)
        if len(alpha) != self.dim or min(alpha) < 0:
            raise ValueError("multi-index must have one non-negative entry per dimension")
        if sum(alpha) > self.moment_cap:
            raise CapExceeded(f"moment order {sum(alpha)} exceeds the cap {self.moment_cap}")
        return alpha

    def moment_affine(self, transport, alpha):
        """``int (H x + M)^alpha f_h(x) dx`` over the layered region (tail excluded)."""
        alpha = self._check_cap(alpha)
        if not isinstance(transport, AffineMap):
            raise TypeError("moment_affine needs an AffineMap; use moment() for polynomial maps")
        return self.polynomial_moment(affine_monomial_terms(transport.H, transport.M, alpha))

    def moment(self, transport, alpha):
        """Closed-form moment for any map with polynomial components."""
        alpha = self._check_cap(alpha)
        if isinstance(transport, AffineMap):
            return self.moment_affine(transport, alpha)
        comps = transport.polynomial()
        if comps is None:
            raise TypeError("map has no polynomial representation; use moment_qoi")
        return self.polynomial_moment(_poly.monomial_product(comps, alpha, self.dim))

    def mean_and_cov(self, transport=None, n_mc=10**4, rng=None):
        """Mean and covariance of the pushforward, conditioned on the layered region.

        Polynomial maps use closed-form contractions. Other maps fall back to
        :meth:`moment_qoi` with ``n_mc`` draws per layer.
        """
        d = self.dim
        transport = transport or AffineMap.identity(d)
        comps = transport.polynomial()
        if comps is None:
            est, _ = self.moment_qoi(transport, lambda y: _first_second(y), n_mc, rng, include_tail=False)
            m0 = self.covered_mass()
            mean = est[:d] / m0
            second = est[d:].reshape(d, d) / m0
            cov = second - np.outer(mean, mean)
            return mean, 0.5 * (cov + cov.T)
        m0 = self.polynomial_moment(_poly.constant(1.0, d))
        mean = np.array([self.polynomial_moment(c) for c in comps]) / m0
        centered = [_poly.add(c, _poly.constant(mean[k], d), beta=-1.0) for k, c in enumerate(comps)]
        cov = np.empty((d, d))
        for i in range(d):
            for j in range(i, d):
                cov[i, j] = cov[j, i] = self.polynomial_moment(_poly.mul(centered[i], centered[j])) / m0
        return mean, cov

    def marginal_moments(self, transport, i, m_max):
        """Raw moments ``beta_j = int y_i^j f`` for ``j = 0..m_max`` (layered region)."""
        if not 0 <= i < self.dim:
            raise ValueError("coordinate index out of range")
        if m_max > self.moment_cap:
            raise CapExceeded(f"marginal degree {m_max} exceeds the cap {self.moment_cap}")
        out = []
        for j in range(m_max + 1):
            alpha = [0] * self.dim
            alpha[i] = j
            out.append(self.moment(transport, alpha))
        return np.array(out)

    # Monte Carlo quantities of interest --------------------------------------
    def moment_qoi(self, transport, Q, N, rng=None, include_tail=True):
        """Stratified estimate of ``E[Q(y)]`` under the surrogate pushforward.

        Each layer draws ``N`` points from its normalized Jacobian weight; the
        raw (unclamped) tensor train is used so that the estimator targets
        the same quantity as the closed-form moments. Returns
        ``(estimate, standard_error)``.
        """
        rng = np.random.default_rng(rng)
        transport = transport or AffineMap.identity(self.dim)
        est, var = 0.0, 0.0
        for l, layer in enumerate(self.layers):
            chart = self.partition.chart(l)
            xhat = sample_chart(rng, chart, N)
            g = self.layer_weights[l] * layer.tt.evaluate(xhat, check=False)
            q = np.asarray(Q(transport.apply(chart.to_cartesian(xhat, check=False))), float)
            terms = chart.weight_mass() * (q.reshape(N, -1) * g[:, None])
            est = est + terms.mean(axis=0)
            var = var + terms.var(axis=0, ddof=1) / N
        if include_tail and self.mass_tail_gauss > 0:
            X = rng.multivariate_normal(self.tail_mean, self.tail_cov, size=N, method="cholesky")
            out = self.partition.locate(X) >= self.n_layers
            q = np.asarray(Q(transport.apply(X)), float).reshape(N, -1)
            terms = self.tail_scale * q * out[:, None]
            est = est + terms.mean(axis=0)
            var = var + terms.var(axis=0, ddof=1) / N
        est = np.asarray(est) * self.normalizer
        se = np.sqrt(var) * self.normalizer
        if est.size == 1:
            return float(est[0]), float(se[0])
        return est, se

    # serialization ------------------------------------------------------------
    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "partition": {"radii": self.partition.radii.tolist(), "dim": self.dim,
                          "center": self.partition.center.tolist()},
            "layers": [{"tt": l.tt.to_dict(), "log_offset": l.log_offset, "integral": l.integral,
                        "diagnostics": _jsonable(l.diagnostics)} for l in self.layers],
            "tail": {"mean": self.tail_mean.tolist(), "cov": self.tail_cov.tolist(), "scale": self.tail_scale,
                     "gauss_mass": self.mass_tail_gauss, "gauss_mass_se": self.mass_tail_se},
            "log_scale": self.log_scale,
            "mass_inside": self.mass_inside,
            "mass_tail": self.mass_tail,
            "normalizer": self.normalizer,
            "moment_cap": self.moment_cap,
            "metadata": _jsonable(self.metadata),
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("format_version") != FORMAT_VERSION:
            raise TTDensityError(f"unsupported surrogate format {data.get('format_version')!r}")
        p = data["partition"]
        partition = LayerPartition(np.array(p["radii"]), int(p["dim"]), np.array(p["center"]))
        layers = [LayerSurrogate(ExtendedTT.from_dict(l["tt"]), float(l["log_offset"]), float(l["integral"]),
                                 l.get("diagnostics", {})) for l in data["layers"]]
        t = data["tail"]
        return cls(partition, layers, t["mean"], t["cov"], t["scale"], data["log_scale"], t["gauss_mass"],
                   t.get("gauss_mass_se", 0.0), data.get("metadata"), data.get("moment_cap", 4))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def summary(self):
        return {
            "dim": self.dim,
            "n_layers": self.n_layers,
            "outer_radius": self.partition.outer_radius,
            "ranks": [l.tt.ranks for l in self.layers],
            "basis_sizes": self.layers[0].tt.sizes if self.layers else [],
            "log_normalization_constant": float(self.log_normalization_constant()),
            "covered_mass": self.covered_mass(),
            "tail_mass": self.mass_tail * self.normalizer,
            "clamped_fraction": [l.diagnostics.get("clamped_fraction") for l in self.layers],
            "metadata": _jsonable(self.metadata),
        }


def _first_second(y):
    y = np.atleast_2d(y)
    return np.concatenate([y, np.einsum("ni,nj->nij", y, y).reshape(len(y), -1)], axis=1)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def build(prior, partition, basis_config=None, options=None):
    """Fit one tensor train per shell of ``partition`` to ``exp(prior)``.

    ``prior`` is the log-density in the reference space (usually the
    pullback of the target through a transport map). Layers are fitted
    concurrently; each uses its own random stream so results do not depend
    on the worker count.
    """
    cfg = basis_config or BasisConfig()
    opts = options or BuildOptions()
    if partition.n_layers < 1:
        raise ValueError("need at least one layer")
    if prior.dim != partition.dim:
        raise ValueError("prior and partition dimensions differ")
    d = partition.dim
    angular_cache = {i: angular_basis(i, cfg.angular_degree + 1, cfg.tau_mant) for i in range(1, d - 1)}
    charts = partition.charts()
    workers = opts.max_workers or default_workers()

    def job(l):
        try:
            return _fit_layer(l, charts[l], prior, cfg, opts, angular_cache)
        except TTDensityError as exc:
            exc.args = (f"layer {l}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
            raise

    if workers > 1 and len(charts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, range(len(charts))))
    else:
        results = [job(l) for l in range(len(charts))]
    layers = [r[0] for r in results]

    offsets = np.array([l.log_offset for l in layers])
    log_scale = float(np.max(offsets)) if np.any(np.isfinite(offsets)) else 0.0
    weights = np.exp(offsets - log_scale)
    masses = weights * np.array([l.integral for l in layers])
    total = masses.sum()
    for l, m in enumerate(masses):
        if m < -1e-10 * abs(total):
            raise NegativeLayerMass(f"layer {l} integrates to {m:.3e}", layer=l, mass=float(m))
    if total <= 0:
        raise NegativeLayerMass("surrogate has no positive mass", layer=-1, mass=float(total))

    tail_mean, tail_cov = _tail_parameters(prior, partition, opts, layers, log_scale)
    gauss_mass, gauss_se = outer_gaussian_mass(tail_mean, tail_cov, partition.center, partition.outer_radius,
                                               opts.tail_mc_samples, layer_rng(opts.seed, partition.n_layers))
    if opts.tail_scale == "matched":
        kappa = total / (1.0 - gauss_mass) if gauss_mass < 1 else 0.0
    elif opts.tail_scale == "unit":
        kappa = float(np.exp(-log_scale))
    else:
        raise ValueError(f"unknown tail_scale {opts.tail_scale!r}")
    meta = {"seed": opts.seed, "n_samples": [l.diagnostics["n_samples"] for l in layers],
            "density_calls": int(sum(l.diagnostics["n_samples"] for l in layers)),
            "basis": {"radial_degree": cfg.radial_degree, "trig_size": cfg.trig_size,
                      "angular_degree": cfg.angular_degree, "tau_mant": cfg.tau_mant},
            "tail": opts.tail, "tail_scale": opts.tail_scale}
    ld = LayeredDensity(partition, layers, tail_mean, tail_cov, kappa, log_scale, gauss_mass, gauss_se, meta,
                        opts.moment_cap)
    if opts.tail == "surrogate":
        mean, cov = ld.mean_and_cov()
        gauss_mass, gauss_se = outer_gaussian_mass(mean, cov, partition.center, partition.outer_radius,
                                                   opts.tail_mc_samples, layer_rng(opts.seed, partition.n_layers))
        if opts.tail_scale == "matched":
            kappa = total / (1.0 - gauss_mass)
        ld = LayeredDensity(partition, layers, mean, cov, kappa, log_scale, gauss_mass, gauss_se, meta,
                            opts.moment_cap)
    return ld


def _tail_parameters(prior, partition, opts, layers, log_scale):
    d = partition.dim
    if opts.tail in ("identity", "surrogate"):
        return partition.center.copy(), np.eye(d)
    if opts.tail == "user":
        if opts.tail_mean is None or opts.tail_cov is None:
            raise ValueError("tail='user' needs tail_mean and tail_cov")
        return np.asarray(opts.tail_mean, float), np.atleast_2d(np.asarray(opts.tail_cov, float))
    if opts.tail == "laplace":
        amap = laplace_affine(prior, partition.center)
        return amap.M, amap.H @ amap.H.T
    raise ValueError(f"unknown tail option {opts.tail!r}")


class TTDensity(BaseEstimator):
    """Estimator front-end: transport, layered reconstruction and moments.

    ``fit(log_density, transport)`` pulls the target back through the
    transport (a Laplace affine map is constructed when none is given) and
    builds the layered surrogate.
    """

    def __init__(self, n_layers=19, radius=10.0, radial_degree=7, trig_size=1, angular_degree=0,
                 n_samples=1000, initial_rank=1, max_rank=4, max_sweeps=40, target_residual=1e-12,
                 stagnation=1e-2, reg=1e-12, validation_fraction=0.1, tail="identity", tail_scale="matched",
                 tau_mant=DEFAULT_TAU_MANT, moment_cap=4, random_state=0, n_jobs=None):
        self.n_layers = n_layers
        self.radius = radius
        self.radial_degree = radial_degree
        self.trig_size = trig_size
        self.angular_degree = angular_degree
        self.n_samples = n_samples
        self.initial_rank = initial_rank
        self.max_rank = max_rank
        self.max_sweeps = max_sweeps
        self.target_residual = target_residual
        self.stagnation = stagnation
        self.reg = reg
        self.validation_fraction = validation_fraction
        self.tail = tail
        self.tail_scale = tail_scale
        self.tau_mant = tau_mant
        self.moment_cap = moment_cap
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, log_density, transport=None):
        if not isinstance(log_density, LogDensity):
            raise TypeError("fit expects a LogDensity")
        if transport is None:
            transport = laplace_affine(log_density)
        self.transport_ = transport
        prior = perturbed_prior(log_density, transport)
        partition = equidistant_partition(self.n_layers, self.radius, log_density.dim)
        cfg = BasisConfig(self.radial_degree, self.trig_size, self.angular_degree, self.tau_mant)
        fit = FitOptions(self.initial_rank, self.max_rank, self.max_sweeps, self.target_residual, self.stagnation,
                         self.reg, self.validation_fraction)
        seed = 0 if self.random_state is None else int(self.random_state)
        opts = BuildOptions(n_samples=self.n_samples, fit=fit, tail=self.tail, tail_scale=self.tail_scale,
                            seed=seed, max_workers=self.n_jobs, moment_cap=self.moment_cap)
        self.density_ = build(prior, partition, cfg, opts)
        self.normalization_constant_ = self.density_.normalization_constant()
        self.n_features_in_ = log_density.dim
        return self

    def _check(self):
        if not hasattr(self, "density_"):
            from sklearn.exceptions import NotFittedError
            raise NotFittedError("TTDensity is not fitted yet")

    def score_samples(self, Y):
        """Log of the surrogate target density at ``Y``."""
        self._check()
        with np.errstate(divide="ignore"):
            return np.log(self.density_.target_density(self.transport_, np.atleast_2d(Y)))

    def moment(self, alpha):
        self._check()
        return self.density_.moment(self.transport_, alpha)

    def mean_and_cov(self):
        self._check()
        return self.density_.mean_and_cov(self.transport_)

    def marginal_moments(self, i, m_max):
        self._check()
        return self.density_.marginal_moments(self.transport_, i, m_max)

    def expect(self, Q, N=10**4, rng=None):
        self._check()
        return self.density_.moment_qoi(self.transport_, Q, N, rng)


def hankel_orthonormal_coefficients(weight_moments, n):
    """Monomial coefficients of polynomials orthonormal under a reference weight.

    ``weight_moments[k] = int y^k w(y) dy`` for ``k < 2 n - 1``. Row ``k`` of
    the result holds the coefficients of ``phi_k`` (ascending powers), from
    the Cholesky factor of the Hankel moment matrix.
    """
    mu = np.asarray(weight_moments, float)
    if mu.size < 2 * n - 1:
        raise ValueError(f"need {2 * n - 1} weight moments")
    Hk = np.array([[mu[i + j] for j in range(n)] for i in range(n)])
    Lc = np.linalg.cholesky(Hk)
    return np.linalg.inv(Lc)


def marginal_projection(beta, coefficients):
    """Coefficients ``int phi_k(y) f_i(y) dy`` from raw marginal moments ``beta``."""
    C = np.asarray(coefficients, float)
    return C @ np.asarray(beta, float)[: C.shape[1]]
