"""Bayesian posteriors, a small Darcy flow forward model and a random-walk Metropolis baseline."""
import threading
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.optimize import least_squares
from scipy.sparse.linalg import splu

from .exceptions import OptimizerFailed, SolverFailure
from .transport import LogDensity


@dataclass(frozen=True)
class GaussianNoiseModel:
    """Observations with i.i.d. centered Gaussian noise of standard deviation ``sigma``."""

    observations: np.ndarray
    sigma: float
    truth: np.ndarray = None

    def __post_init__(self):
        obs = np.atleast_1d(np.asarray(self.observations, float))
        if obs.size < 1:
            raise ValueError("need at least one observation")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        object.__setattr__(self, "observations", obs)


def potential(noise, G):
    """``0.5 |delta - G|^2 / sigma^2``; ``G`` may be a batch of shape ``(N, J)``."""
    r = noise.observations - np.asarray(G, float)
    return 0.5 * np.sum(r * r, axis=-1) / noise.sigma**2


class LinearForward:
    def __init__(self, A):
        self.A = np.atleast_2d(np.asarray(A, float))
        if not np.all(np.isfinite(self.A)):
            raise ValueError("forward matrix must be finite")
        self.dim = self.A.shape[1]
        self.n_obs = self.A.shape[0]

    def __call__(self, y):
        return np.asarray(y, float) @ self.A.T


def log_posterior(noise, forward, y):
    """Unnormalized log-posterior under a standard normal prior."""
    y = np.asarray(y, float)
    return -potential(noise, forward(y)) - 0.5 * np.sum(y * y, axis=-1)


def posterior_log_density(noise, forward):
    """The log-posterior as a vectorized :class:`LogDensity`."""

    def fn(Y):
        return np.array([log_posterior(noise, forward, y) for y in Y])

    return LogDensity(fn, forward.dim, vectorized=True)


def linear_gaussian_posterior(forward, noise):
    """Exact posterior mean and covariance for a linear forward map."""
    A = forward.A
    precision = A.T @ A / noise.sigma**2 + np.eye(forward.dim)
    cov = np.linalg.inv(precision)
    mean = cov @ (A.T @ noise.observations) / noise.sigma**2
    return mean, 0.5 * (cov + cov.T)


def cosine_mode_indices(count):
    """Wave vectors ``(k1, k2) != (0, 0)`` ordered by total degree, then by descending ``k1``."""
    out = []
    total = 1
    while len(out) < count:
        for k1 in range(total, -1, -1):
            out.append((k1, total - k1))
        total += 1
    return out[:count]


class DarcyLiteForward:
    """Finite-volume solver for ``-div(a grad q) = 1`` on the unit square, ``q = 0`` on the boundary.

    The coefficient is ``a = exp(sum_k y_k a_k)`` with cosine modes
    ``a_k(x) = c k^-2 cos(2 pi k1 x1) cos(2 pi k2 x2)``. The solution is
    observed by bilinear interpolation at a ``sqrt(J) x sqrt(J)`` equispaced
    interior grid.
    """

    def __init__(self, dim, n=64, amplitude=0.25, n_obs=144):
        if n < 8:
            raise ValueError("need n >= 8 interior nodes per direction")
        side = int(round(np.sqrt(n_obs)))
        if side * side != n_obs:
            raise ValueError("n_obs must be a perfect square")
        self.dim = int(dim)
        self.n = int(n)
        self.amplitude = float(amplitude)
        self.n_obs = n_obs
        self.h = 1.0 / (n + 1)
        grid = np.linspace(0.0, 1.0, n + 2)
        X1, X2 = np.meshgrid(grid, grid, indexing="ij")
        self.modes = np.array([
            amplitude / k**2 * np.cos(2 * np.pi * k1 * X1) * np.cos(2 * np.pi * k2 * X2)
            for k, (k1, k2) in enumerate(cosine_mode_indices(self.dim), start=1)
        ])
        pts = np.arange(1, side + 1) / (side + 1)
        P1, P2 = np.meshgrid(pts, pts, indexing="ij")
        self.obs_points = np.column_stack([P1.ravel(), P2.ravel()])
        self._interp = self._interpolation_matrix(self.obs_points)

    def _interpolation_matrix(self, pts):
        n, h = self.n, self.h
        size = n + 2
        rows, cols, vals = [], [], []
        for r, (p1, p2) in enumerate(pts):
            i = min(int(p1 / h), size - 2)
            j = min(int(p2 / h), size - 2)
            s, t = p1 / h - i, p2 / h - j
            for di, dj, w in ((0, 0, (1 - s) * (1 - t)), (1, 0, s * (1 - t)), (0, 1, (1 - s) * t), (1, 1, s * t)):
                rows.append(r)
                cols.append((i + di) * size + (j + dj))
                vals.append(w)
        return sp.csr_matrix((vals, (rows, cols)), shape=(len(pts), size * size))

    def coefficient(self, y):
        y = np.asarray(y, float)
        if y.shape != (self.dim,):
            raise ValueError(f"expected a parameter vector of length {self.dim}")
        return np.exp(np.tensordot(y, self.modes, axes=1))

    @cached_property
    def _index(self):
        n = self.n
        return np.arange(n * n).reshape(n, n)

    def solve_field(self, y=None, coefficient=None):
        """Nodal solution on the full ``(n + 2) x (n + 2)`` grid including the zero boundary."""
        a = self.coefficient(y) if coefficient is None else np.asarray(coefficient, float)
        if not np.all(np.isfinite(a)) or np.any(a <= 0):
            raise SolverFailure("diffusion coefficient is not finite and positive", y=y)
        n, h = self.n, self.h
        idx = self._index
        # harmonic means on the faces between neighbouring nodes
        ax = 2 * a[1:, :] * a[:-1, :] / (a[1:, :] + a[:-1, :])
        ay = 2 * a[:, 1:] * a[:, :-1] / (a[:, 1:] + a[:, :-1])
        west, east = ax[:-1, 1:-1], ax[1:, 1:-1]
        south, north = ay[1:-1, :-1], ay[1:-1, 1:]
        diag = (west + east + south + north).ravel()
        rows, cols, vals = [idx.ravel()], [idx.ravel()], [diag]
        for coef, sl_from, sl_to in (
            (east[:-1, :], idx[:-1, :], idx[1:, :]),
            (north[:, :-1], idx[:, :-1], idx[:, 1:]),
        ):
            rows += [sl_from.ravel(), sl_to.ravel()]
            cols += [sl_to.ravel(), sl_from.ravel()]
            vals += [-coef.ravel(), -coef.ravel()]
        K = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n * n, n * n))
        try:
            q = splu(K).solve(np.full(n * n, h * h))
        except RuntimeError as exc:
            raise SolverFailure(f"sparse factorization failed: {exc}", y=y) from exc
        if not np.all(np.isfinite(q)):
            raise SolverFailure("non-finite solution", y=y)
        full = np.zeros((n + 2, n + 2))
        full[1:-1, 1:-1] = q.reshape(n, n)
        return full

    def __call__(self, y):
        y = np.asarray(y, float)
        if y.ndim == 2:
            return np.array([self(row) for row in y])
        return self._interp @ self.solve_field(y).ravel()


def darcy_solve(forward, y):
    return forward(y)


def synthesize_observations(forward, y_star, sigma, rng=None):
    rng = np.random.default_rng(rng)
    y_star = np.asarray(y_star, float)
    clean = forward(y_star)
    noisy = clean + sigma * rng.standard_normal(clean.shape) if sigma > 0 else clean.copy()
    return GaussianNoiseModel(noisy, sigma if sigma > 0 else np.finfo(float).tiny, y_star)


def map_estimate(noise, forward, x0=None):
    """Posterior mode by nonlinear least squares on ``[(delta - G(y)) / sigma; y]``."""
    x0 = np.zeros(forward.dim) if x0 is None else np.asarray(x0, float)

    def residual(y):
        return np.concatenate([(noise.observations - forward(y)) / noise.sigma, y])

    res = least_squares(residual, x0, method="trf", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=200 * forward.dim)
    if res.status <= 0:
        raise OptimizerFailed(f"MAP search failed: {res.message}")
    return res.x


@dataclass
class MCMCConfig:
    steps: int
    burn_in: int = 0
    proposal_scale: float = 1.0
    seed: int = 0
    proposal_cov: object = None
    target_acceptance: float = 0.234
    adapt: bool = True

    def __post_init__(self):
        if not self.steps > self.burn_in >= 0:
            raise ValueError("need steps > burn_in >= 0")
        if not self.proposal_scale > 0:
            raise ValueError("proposal_scale must be positive")


@dataclass
class MCMCResult:
    chain: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    acceptance_rate: float
    calls: int
    final_scale: float = field(default=float("nan"))

    def to_csv(self, path):
        d = self.chain.shape[1]
        header = ",".join(f"y{i + 1}" for i in range(d))
        np.savetxt(path, self.chain, delimiter=",", header=header, comments="", fmt="%.17g")


def rwm_mcmc(logdensity, cfg, x0=None):
    """Gaussian random-walk Metropolis.

    During burn-in the step size is adapted by a Robbins-Monro recursion on
    its logarithm towards ``cfg.target_acceptance``; afterwards it is frozen.
    Every step costs exactly one density evaluation (plus one for ``x0``).
    """
    rng = np.random.default_rng(cfg.seed)
    d = logdensity.dim
    x = np.zeros(d) if x0 is None else np.asarray(x0, float).copy()
    L = np.eye(d) if cfg.proposal_cov is None else np.linalg.cholesky(np.asarray(cfg.proposal_cov, float))
    lp = float(logdensity(x))
    calls = 1
    if not np.isfinite(lp):
        raise ValueError("log-density is not finite at the start point")
    log_scale = np.log(cfg.proposal_scale * 2.38 / np.sqrt(d))
    kept = np.empty((cfg.steps - cfg.burn_in, d))
    accepted = 0
    for step in range(cfg.steps):
        prop = x + np.exp(log_scale) * (L @ rng.standard_normal(d))
        lq = float(logdensity(prop))
        calls += 1
        acc_prob = np.exp(min(0.0, lq - lp)) if np.isfinite(lq) else 0.0
        if rng.random() < acc_prob:
            x, lp = prop, lq
            if step >= cfg.burn_in:
                accepted += 1
        if step < cfg.burn_in:
            if cfg.adapt:
                log_scale += (acc_prob - cfg.target_acceptance) / (step + 1) ** 0.6
        else:
            kept[step - cfg.burn_in] = x
    mean = kept.mean(axis=0)
    cov = np.atleast_2d(np.cov(kept, rowvar=False)) if len(kept) > 1 else np.zeros((d, d))
    return MCMCResult(kept, mean, cov, accepted / len(kept), calls, float(np.exp(log_scale)))


class ForwardCache:
    """Thread-safe memo of forward solves keyed by the exact parameter bytes."""

    def __init__(self, forward, maxsize=100000):
        self.forward = forward
        self.dim = forward.dim
        self.maxsize = maxsize
        self._store = {}
        self._lock = threading.Lock()

    def __call__(self, y):
        y = np.asarray(y, float)
        if y.ndim == 2:
            return np.array([self(row) for row in y])
        key = y.tobytes()
        with self._lock:
            hit = self._store.get(key)
        if hit is not None:
            return hit
        out = self.forward(y)
        with self._lock:
            if len(self._store) < self.maxsize:
                self._store[key] = out
        return out
