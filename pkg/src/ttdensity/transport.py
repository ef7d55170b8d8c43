"""Transport maps and the pulled-back (perturbed prior) log-density.

All maps act on single points of shape ``(d,)`` or on batches of shape
``(N, d)``; batched calls return stacked results.
"""
import threading

import numpy as np

from . import _poly
from .exceptions import (
    DimensionMismatch,
    HessianNotPD,
    NoConvergence,
    OptimizerFailed,
    SingularJacobian,
)


class LogDensity:
    """Unnormalized log-density on R^d.

    Parameters
    ----------
    fn : callable
        Maps a point to a log-value. With ``vectorized=True`` it receives an
        ``(N, d)`` array and must return ``(N,)`` values. ``fn`` must be
        reentrant; layers may evaluate it concurrently.
    dim : int
    vectorized : bool
    """

    def __init__(self, fn, dim, vectorized=False):
        if int(dim) < 1:
            raise ValueError("dim must be >= 1")
        self.fn = fn
        self.dim = int(dim)
        self.vectorized = vectorized

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        if X.shape[1] != self.dim:
            raise DimensionMismatch(f"expected points of dimension {self.dim}, got {X.shape[1]}")
        if self.vectorized:
            out = np.asarray(self.fn(X), dtype=float).reshape(-1)
        else:
            out = np.array([float(self.fn(row)) for row in X])
        return out[0] if single else out


class CountingLogDensity(LogDensity):
    """Wraps a LogDensity and counts point evaluations (thread-safe)."""

    def __init__(self, inner):
        super().__init__(inner.fn, inner.dim, inner.vectorized)
        self.inner = inner
        self.calls = 0
        self._lock = threading.Lock()

    def __call__(self, x):
        n = 1 if np.ndim(x) == 1 else len(x)
        with self._lock:
            self.calls += n
        return self.inner(x)

    def reset(self):
        with self._lock:
            self.calls = 0


def gaussian_log_density(mean, cov):
    """Normalized Gaussian log-density as a vectorized LogDensity."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    d = mean.size
    chol = np.linalg.cholesky(cov)
    log_norm = -0.5 * d * np.log(2 * np.pi) - np.sum(np.log(np.diag(chol)))

    def fn(X):
        z = np.linalg.solve(chol, (X - mean).T)
        return log_norm - 0.5 * np.sum(z * z, axis=0)

    return LogDensity(fn, d, vectorized=True)


class TransportMap:
    """Base class: a smooth invertible map X -> Y with analytic Jacobian."""

    dim = None

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim or x.ndim not in (1, 2):
            raise DimensionMismatch(f"map of dimension {self.dim} applied to shape {x.shape}")
        return x

    def __call__(self, x):
        return self.apply(x)

    def apply(self, x):
        raise NotImplementedError

    def jacobian(self, x):
        raise NotImplementedError

    def log_abs_det_jacobian(self, x):
        """log|det J(x)| via a pivoted LU factorization of the Jacobian."""
        J = self.jacobian(x)
        sign, logdet = np.linalg.slogdet(J)
        if np.any(sign == 0) or np.any(~np.isfinite(logdet)):
            raise SingularJacobian("Jacobian determinant underflows to zero")
        return logdet

    def polynomial(self):
        """Components as sparse polynomials, or None for non-polynomial maps."""
        return None

    def invert(self, y, tol=1e-10, max_iter=100, x0=None):
        """Damped Newton solve of ``apply(x) = y``, starting at ``x0`` (default ``y``)."""
        y = self._check(y)
        if y.ndim == 2:
            starts = [None] * len(y) if x0 is None else np.asarray(x0, dtype=float)
            return np.array([self.invert(yi, tol, max_iter, s) for yi, s in zip(y, starts)])
        x = y.copy() if x0 is None else np.array(x0, dtype=float)
        r = self.apply(x) - y
        res = np.linalg.norm(r)
        for _ in range(max_iter):
            if res <= tol:
                return x
            try:
                step = np.linalg.solve(self.jacobian(x), -r)
            except np.linalg.LinAlgError:
                raise NoConvergence("singular Jacobian during inversion", max_iter, res)
            t = 1.0
            for _ in range(30):
                x_new = x + t * step
                r_new = self.apply(x_new) - y
                res_new = np.linalg.norm(r_new)
                if res_new < res:
                    break
                t *= 0.5
            else:
                raise NoConvergence("line search failed during inversion", max_iter, res)
            x, r, res = x_new, r_new, res_new
        if res <= tol:
            return x
        raise NoConvergence(f"inversion did not converge in {max_iter} iterations", max_iter, res)


class AffineMap(TransportMap):
    """``T(x) = H x + M``."""

    def __init__(self, H, M):
        self.H = np.atleast_2d(np.asarray(H, dtype=float))
        self.M = np.atleast_1d(np.asarray(M, dtype=float))
        if self.H.shape != (self.M.size, self.M.size):
            raise DimensionMismatch("H must be d x d with d = len(M)")
        self.dim = self.M.size

    @classmethod
    def identity(cls, dim):
        return cls(np.eye(dim), np.zeros(dim))

    def apply(self, x):
        x = self._check(x)
        return x @ self.H.T + self.M

    def jacobian(self, x):
        x = self._check(x)
        if x.ndim == 1:
            return self.H.copy()
        return np.broadcast_to(self.H, (len(x), self.dim, self.dim)).copy()

    def log_abs_det_jacobian(self, x):
        x = self._check(x)
        sign, logdet = np.linalg.slogdet(self.H)
        if sign == 0 or not np.isfinite(logdet):
            raise SingularJacobian("affine map is singular")
        return logdet if x.ndim == 1 else np.full(len(x), logdet)

    def invert(self, y, tol=1e-10, max_iter=100, x0=None):
        y = self._check(y)
        return np.linalg.solve(self.H, (y - self.M).T).T

    def polynomial(self):
        d = self.dim
        comps = []
        for k in range(d):
            p = _poly.constant(self.M[k], d)
            for i in range(d):
                if self.H[k, i] != 0.0:
                    p = _poly.add(p, _poly.variable(i, d), beta=self.H[k, i])
            comps.append(p)
        return comps


class QuadraticMap(TransportMap):
    """``T(x)_k = 1/2 sum_ij A[k,i,j] x_i x_j + (H x)_k + M_k``."""

    def __init__(self, A, H, M):
        self.M = np.atleast_1d(np.asarray(M, dtype=float))
        d = self.M.size
        self.A = np.asarray(A, dtype=float).reshape(d, d, d)
        self.H = np.asarray(H, dtype=float).reshape(d, d)
        self.dim = d
        self._Asym = 0.5 * (self.A + self.A.transpose(0, 2, 1))

    def apply(self, x):
        x = self._check(x)
        quad = 0.5 * np.einsum("kij,...i,...j->...k", self.A, x, x)
        return quad + x @ self.H.T + self.M

    def jacobian(self, x):
        x = self._check(x)
        return np.einsum("kij,...i->...kj", self._Asym, x) + self.H

    def polynomial(self):
        d = self.dim
        comps = AffineMap(self.H, self.M).polynomial()
        for k in range(d):
            for i in range(d):
                for j in range(d):
                    c = 0.5 * self.A[k, i, j]
                    if c != 0.0:
                        term = _poly.mul(_poly.variable(i, d), _poly.variable(j, d))
                        comps[k] = _poly.add(comps[k], term, beta=c)
        return comps


class ConvexCombinationMap(TransportMap):
    """``(1 - t) map_a(x) + t map_b(x)``."""

    def __init__(self, t, map_a, map_b):
        if not 0.0 <= t <= 1.0:
            raise ValueError("t must lie in [0, 1]")
        if map_a.dim != map_b.dim:
            raise DimensionMismatch("both maps must share the dimension")
        self.t = float(t)
        self.map_a = map_a
        self.map_b = map_b
        self.dim = map_a.dim

    def apply(self, x):
        x = self._check(x)
        return (1 - self.t) * self.map_a.apply(x) + self.t * self.map_b.apply(x)

    def jacobian(self, x):
        x = self._check(x)
        return (1 - self.t) * self.map_a.jacobian(x) + self.t * self.map_b.jacobian(x)

    def polynomial(self):
        pa, pb = self.map_a.polynomial(), self.map_b.polynomial()
        if pa is None or pb is None:
            return None
        return [_poly.add(a, b, 1 - self.t, self.t) for a, b in zip(pa, pb)]


class ComposedMap(TransportMap):
    """``outer(inner(x))``."""

    def __init__(self, outer, inner):
        if outer.dim != inner.dim:
            raise DimensionMismatch("composed maps must share the dimension")
        self.outer = outer
        self.inner = inner
        self.dim = inner.dim

    def apply(self, x):
        return self.outer.apply(self.inner.apply(self._check(x)))

    def jacobian(self, x):
        x = self._check(x)
        return self.outer.jacobian(self.inner.apply(x)) @ self.inner.jacobian(x)

    def log_abs_det_jacobian(self, x):
        x = self._check(x)
        return self.outer.log_abs_det_jacobian(self.inner.apply(x)) + self.inner.log_abs_det_jacobian(x)

    def invert(self, y, tol=1e-10, max_iter=100, x0=None):
        if isinstance(self.outer, AffineMap) and isinstance(self.inner, AffineMap):
            return self.inner.invert(self.outer.invert(y))
        return super().invert(y, tol, max_iter, x0)

    def polynomial(self):
        po, pi = self.outer.polynomial(), self.inner.polynomial()
        if po is None or pi is None:
            return None
        return [_poly.compose(p, pi, self.dim) for p in po]


def banana_map(cov=((1.0, 0.9), (0.9, 1.0))):
    """Exact transport ``T2 o T_Sigma`` from N(0, I) to the banana density.

    ``T_Sigma`` uses the symmetric square root of ``cov`` and
    ``T2(x) = (x1, x2 - (x1^2 + 1))``.
    """
    cov = np.asarray(cov, dtype=float)
    w, V = np.linalg.eigh(cov)
    t_sigma = AffineMap((V * np.sqrt(w)) @ V.T, np.zeros(2))
    return ComposedMap(banana_bend(), t_sigma)


def banana_bend():
    """``T2(x) = (x1, x2 - x1^2 - 1)`` as a QuadraticMap."""
    A = np.zeros((2, 2, 2))
    A[1, 0, 0] = -2.0
    return QuadraticMap(A, np.eye(2), np.array([0.0, -1.0]))


def banana_log_density(cov=((1.0, 0.9), (0.9, 1.0))):
    """Normalized banana density: pushforward of N(0, I) under ``banana_map``."""
    gauss = gaussian_log_density(np.zeros(2), cov)

    def fn(Y):
        Z = np.column_stack([Y[:, 0], Y[:, 1] + Y[:, 0] ** 2 + 1.0])
        return gauss(Z)

    return LogDensity(fn, 2, vectorized=True)


def perturbed_prior(target, transport):
    """Pull ``target`` back through ``transport``: x -> log f(T(x)) + log|det J_T(x)|."""
    if target.dim != transport.dim:
        raise DimensionMismatch("target and transport dimensions differ")

    def fn(X):
        return target(transport.apply(X)) + transport.log_abs_det_jacobian(X)

    return LogDensity(fn, target.dim, vectorized=True)


def _sym_inv_sqrt(S):
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    return (V / np.sqrt(w)) @ V.T, w


def _fd_grad_hess(fun, h):
    """Finite-difference gradient and Hessian of ``fun`` at the origin.

    Gradient and Hessian diagonal use fourth-order central stencils, so the
    located mode is not biased by the step size; mixed second derivatives
    use the four-point second-order stencil. All stencil points are
    evaluated in a single batched call.
    """
    d = h.size
    E = np.diag(h)
    pts = [np.zeros(d)]
    for i in range(d):
        pts += [E[i], -E[i], 2 * E[i], -2 * E[i]]
    pairs = [(i, j) for i in range(d) for j in range(i + 1, d)]
    for i, j in pairs:
        pts += [E[i] + E[j], E[i] - E[j], -E[i] + E[j], -E[i] - E[j]]
    vals = fun(np.array(pts))
    if not np.all(np.isfinite(vals)):
        raise OptimizerFailed("non-finite log-density inside finite-difference stencil")
    f0 = vals[0]
    axis = vals[1:4 * d + 1].reshape(d, 4)
    fp, fm, fpp, fmm = axis.T
    g = (8 * (fp - fm) - (fpp - fmm)) / (12 * h)
    H = np.diag((16 * (fp + fm) - (fpp + fmm) - 30 * f0) / (12 * h**2))
    off = vals[4 * d + 1:].reshape(-1, 4)
    for (i, j), (pp, pm, mp, mm) in zip(pairs, off):
        H[i, j] = H[j, i] = (pp - pm - mp + mm) / (4 * h[i] * h[j])
    return f0, g, H


def laplace_affine(target, x0=None, step=1e-4, max_iter=50, tol=1e-12, whitened_step=1e-2):
    """Laplace-based affine transport ``T(x) = H x + M``.

    ``M`` maximizes ``target``; ``H`` is the inverse symmetric square root of
    the negative log-density Hessian at ``M``.

    The ascent is a Newton iteration with finite-difference derivatives taken
    in a progressively whitened frame ``x = M + W z``, so concentrated targets
    are handled at their own length scale. The first stencil uses
    ``step * (1 + |M|)`` in the original coordinates; once a Hessian is
    available, stencils use ``whitened_step`` in units of the local standard
    deviation, which keeps evaluation noise out of the curvature.
    """
    d = target.dim
    M = np.zeros(d) if x0 is None else np.array(x0, dtype=float)
    W = np.eye(d)
    h = step * (1.0 + np.abs(M))
    noise_floor = 1e-6
    stalled = 0

    def neg(z):
        return -target(M + z @ W.T)

    for _ in range(max_iter):
        f0, g, Hz = _fd_grad_hess(neg, h)
        w, V = np.linalg.eigh(0.5 * (Hz + Hz.T))
        if np.all(w > 0):
            p = -V @ ((V.T @ g) / w)
        else:
            p = -g / max(np.linalg.norm(g), 1e-300)
        slope = g @ p
        if slope >= 0 and np.linalg.norm(g) > 0:
            raise OptimizerFailed("no ascent direction found")
        # finite-difference noise grows with |f|, so the decrement tests are relative
        converged = np.all(w > 0) and -slope < tol * max(1.0, abs(f0))
        # a decrement stuck at the noise floor for several steps also ends the ascent
        stalled = stalled + 1 if np.all(w > 0) and -slope < noise_floor * max(1.0, abs(f0)) else 0
        converged = converged or stalled >= 3
        t = 1.0
        if not converged:
            for _ in range(40):
                f_new = neg((t * p)[None, :])[0]
                if np.isfinite(f_new) and f_new <= f0 + 1e-4 * t * slope:
                    break
                t *= 0.5
            else:
                # no decrease left to find: accept if the decrement is at noise level
                if -slope > noise_floor * max(1.0, abs(f0)):
                    raise OptimizerFailed("line search made no progress")
                converged, t = True, 0.0
        M = M + W @ (t * p)
        if np.all(w > 0):
            W = W @ _sym_inv_sqrt(Hz)[0]
        h = np.full(d, whitened_step)
        if converged:
            break
    else:
        raise OptimizerFailed(f"no convergence after {max_iter} Newton steps")

    _, _, Hz = _fd_grad_hess(neg, h)
    Winv = np.linalg.inv(W)
    hess = Winv.T @ Hz @ Winv
    hess = 0.5 * (hess + hess.T)
    w, V = np.linalg.eigh(hess)
    if np.any(w <= 0):
        raise HessianNotPD("negative log-density Hessian is not positive definite at the mode", w)
    return AffineMap((V / np.sqrt(w)) @ V.T, M)
