"""Extended (functional) tensor trains and least-squares reconstruction.

A function ``g(x) = sum_k prod_i g_i[k_{i-1}, k_i](x_i)`` is stored as order-3
coefficient cores ``G_i`` of shape ``(r_{i-1}, n_i, r_i)`` bound to univariate
orthonormal bases, ``g_i[a, b](x) = sum_j G_i[a, j, b] P^i_j(x)``.
"""
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .basis import basis_from_dict
from .exceptions import (
    DimensionMismatch,
    IllConditionedSolve,
    NonPositiveSurrogate,
    NotConvergedWarning,
    OutOfDomain,
    UnderdeterminedFitWarning,
)

FORMAT_VERSION = 1


class ExtendedTT:
    """Tensor-train coefficient cores together with their univariate bases."""

    def __init__(self, cores, bases):
        # contiguous storage keeps evaluation bit-identical across copies and reloads
        cores = [np.ascontiguousarray(c, dtype=float) for c in cores]
        if len(cores) != len(bases):
            raise DimensionMismatch("need one basis per core")
        if cores[0].shape[0] != 1 or cores[-1].shape[2] != 1:
            raise DimensionMismatch("boundary ranks must be 1")
        for i, (c, b) in enumerate(zip(cores, bases)):
            if c.ndim != 3 or c.shape[1] != b.size:
                raise DimensionMismatch(f"core {i} has shape {c.shape}, basis size {b.size}")
            if i and cores[i - 1].shape[2] != c.shape[0]:
                raise DimensionMismatch(f"rank mismatch between cores {i - 1} and {i}")
        self.cores = cores
        self.bases = list(bases)

    @property
    def dim(self):
        return len(self.cores)

    @property
    def ranks(self):
        return [1] + [c.shape[2] for c in self.cores]

    @property
    def sizes(self):
        return [c.shape[1] for c in self.cores]

    def copy(self):
        return ExtendedTT([c.copy() for c in self.cores], self.bases)

    def basis_matrices(self, X, check=True):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise DimensionMismatch(f"expected {self.dim} coordinates, got {X.shape[1]}")
        if check:
            for i, b in enumerate(self.bases):
                if not np.all(b.contains(X[:, i])):
                    raise OutOfDomain(f"coordinate {i} outside the basis interval {b.interval}")
        return [b.evaluate(X[:, i]) for i, b in enumerate(self.bases)]

    def evaluate(self, X, check=True):
        single = np.ndim(X) == 1
        Phis = self.basis_matrices(X, check)
        v = np.ones((Phis[0].shape[0], 1))
        for core, Phi in zip(self.cores, Phis):
            v = np.einsum("na,ajb,nj->nb", v, core, Phi)
        out = v[:, 0]
        return out[0] if single else out

    __call__ = evaluate

    def full(self):
        """Dense coefficient tensor (small cases only)."""
        out = self.cores[0]
        for c in self.cores[1:]:
            out = np.tensordot(out, c, axes=([-1], [0]))
        return out[0, ..., 0]

    def norm(self):
        """L2(w) norm, equal to the Frobenius norm of the coefficient tensor."""
        return float(np.linalg.norm(orthogonalize(self, 0).cores[0]))

    def contract_rank1(self, vectors):
        return contract_rank1(self, vectors)

    def round(self, eps=None, ranks=None):
        return round_tt(self, eps, ranks)

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "d": self.dim,
            "ranks": self.ranks,
            "n": self.sizes,
            "bases": [b.to_dict() for b in self.bases],
            "cores": [c.ravel(order="C").tolist() for c in self.cores],
        }

    @classmethod
    def from_dict(cls, data):
        bases = [basis_from_dict(b) for b in data["bases"]]
        r, n = data["ranks"], data["n"]
        cores = [np.asarray(c, dtype=float).reshape(r[i], n[i], r[i + 1]) for i, c in enumerate(data["cores"])]
        return cls(cores, bases)


def _left_qr(core):
    r0, n, r1 = core.shape
    Q, R = np.linalg.qr(core.reshape(r0 * n, r1))
    return Q.reshape(r0, n, Q.shape[1]), R


def _right_qr(core):
    r0, n, r1 = core.shape
    Q, R = np.linalg.qr(core.reshape(r0, n * r1).T)
    return Q.T.reshape(Q.shape[1], n, r1), R.T


def orthogonalize(tt, pivot):
    """Equivalent TT with cores left of ``pivot`` left-orthogonal and right of it right-orthogonal."""
    cores = [c.copy() for c in tt.cores]
    for i in range(pivot):
        cores[i], R = _left_qr(cores[i])
        cores[i + 1] = np.tensordot(R, cores[i + 1], axes=(1, 0))
    for i in range(tt.dim - 1, pivot, -1):
        cores[i], R = _right_qr(cores[i])
        cores[i - 1] = np.tensordot(cores[i - 1], R, axes=(2, 0))
    return ExtendedTT(cores, tt.bases)


def round_tt(tt, eps=None, ranks=None):
    """SVD-based TT rounding.

    Truncates either to relative accuracy ``eps`` (spread evenly across the
    ``d - 1`` bonds) or to the given ``ranks``. Returns ``(rounded, bound)``
    with ``bound = sqrt(sum of squared discarded singular values)``, an upper
    bound for the L2(w) error of the truncation.
    """
    d = tt.dim
    tt = orthogonalize(tt, d - 1)
    # sweep right-to-left so that the left part is orthogonal at every cut
    cores = list(tt.cores)
    total = np.linalg.norm(cores[-1])
    delta = 0.0 if eps is None else eps * total / np.sqrt(max(d - 1, 1))
    discarded = 0.0
    for i in range(d - 1, 0, -1):
        r0, n, r1 = cores[i].shape
        U, S, Vt = np.linalg.svd(cores[i].reshape(r0, n * r1), full_matrices=False)
        if ranks is not None:
            keep = min(int(ranks[i - 1]), S.size)
        else:
            tail = np.sqrt(np.cumsum(S[::-1] ** 2))[::-1]
            # smallest rank whose discarded tail is within delta
            keep = S.size
            for k in range(1, S.size + 1):
                if k == S.size or tail[k] <= delta:
                    keep = k
                    break
        discarded += float(np.sum(S[keep:] ** 2))
        cores[i] = Vt[:keep].reshape(keep, n, r1)
        cores[i - 1] = np.tensordot(cores[i - 1], U[:, :keep] * S[:keep], axes=(2, 0))
    return ExtendedTT(cores, tt.bases), np.sqrt(discarded)


def contract_rank1(tt, vectors):
    """``sum_k prod_i (sum_j G_i[k_{i-1}, j, k_i] v_i[j])``."""
    if len(vectors) != tt.dim:
        raise DimensionMismatch("need one vector per dimension")
    v = np.ones(1)
    for core, vec in zip(tt.cores, vectors):
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (core.shape[1],):
            raise DimensionMismatch(f"vector of length {vec.shape} for basis size {core.shape[1]}")
        v = v @ np.tensordot(core, vec, axes=(1, 0))
    return float(v[0])


def rank_one_tt(bases, coefficient_vectors):
    cores = [np.asarray(v, dtype=float).reshape(1, -1, 1) for v in coefficient_vectors]
    return ExtendedTT(cores, bases)


@dataclass
class FitOptions:
    """Parameters of the alternating least-squares reconstruction.

    ``stagnation``: a full sweep whose relative residual improvement is below
    this factor triggers a rank increase (or stops at ``max_rank``).
    ``reg``: ridge parameter relative to ``trace(A^T A) / p``; the ridge
    pulls each core solve towards the current core, not towards zero.
    """

    initial_rank: int = 1
    max_rank: int = 4
    max_sweeps: int = 40
    target_residual: float = 1e-12
    stagnation: float = 1e-2
    reg: float = 1e-12
    validation_fraction: float = 0.1

    def __post_init__(self):
        if self.initial_rank < 1 or self.max_rank < self.initial_rank:
            raise ValueError("need 1 <= initial_rank <= max_rank")
        if self.max_sweeps < 1 or self.target_residual < 0 or self.stagnation < 0 or self.reg < 0:
            raise ValueError("fit options must be positive")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in [0, 1)")


@dataclass
class FitDiagnostics:
    residuals: list = field(default_factory=list)
    rank_history: list = field(default_factory=list)
    validation_residual: float = float("nan")
    converged: bool = False
    stop_reason: str = ""
    n_train: int = 0
    n_validation: int = 0

    @property
    def sweeps(self):
        return len(self.residuals)


def _rank_caps(sizes):
    d = len(sizes)
    left = np.cumprod(sizes)
    right = np.cumprod(sizes[::-1])[::-1]
    return [int(min(left[b], right[b + 1])) for b in range(d - 1)]


class _ALS:
    def __init__(self, Phis, y, cores, reg):
        self.Phis = Phis
        self.y = y
        self.cores = cores
        self.reg = reg
        self.d = len(cores)
        self.N = y.size

    def _contract(self, i, v, from_left):
        core, Phi = self.cores[i], self.Phis[i]
        if from_left:
            return np.einsum("na,ajb,nj->nb", v, core, Phi)
        return np.einsum("nb,ajb,nj->na", v, core, Phi)

    def right_interfaces(self):
        R = [None] * (self.d + 1)
        R[self.d] = np.ones((self.N, 1))
        for i in range(self.d - 1, 0, -1):
            R[i] = self._contract(i, R[i + 1], False)
        return R

    def left_interfaces(self):
        L = [None] * self.d
        L[0] = np.ones((self.N, 1))
        for i in range(self.d - 1):
            L[i + 1] = self._contract(i, L[i], True)
        return L

    def solve_core(self, i, L, R, sweep):
        r0, n, r1 = self.cores[i].shape
        A = np.einsum("na,nj,nb->najb", L, self.Phis[i], R).reshape(self.N, -1)
        AtA = A.T @ A
        p = AtA.shape[0]
        lam = self.reg * np.trace(AtA) / p
        # proximal ridge centered at the current core: damps degenerate
        # directions without biasing a converged fit towards zero
        rhs = A.T @ self.y + lam * self.cores[i].ravel()
        try:
            g = scipy.linalg.solve(AtA + lam * np.eye(p), rhs, assume_a="pos")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            g = np.linalg.lstsq(A, self.y, rcond=None)[0]
        if not np.all(np.isfinite(g)):
            raise IllConditionedSolve(f"core {i} solve produced non-finite values", sweep=sweep)
        self.cores[i] = g.reshape(r0, n, r1)
        return A @ g

    def sweep(self, sweep_index):
        """One left-to-right plus right-to-left pass; pivot returns to core 0."""
        d = self.d
        R = self.right_interfaces()
        L = np.ones((self.N, 1))
        pred = None
        for i in range(d):
            pred = self.solve_core(i, L, R[i + 1], sweep_index)
            if i < d - 1:
                self.cores[i], Rm = _left_qr(self.cores[i])
                self.cores[i + 1] = np.tensordot(Rm, self.cores[i + 1], axes=(1, 0))
                L = self._contract(i, L, True)
        if d > 1:
            Ls = self.left_interfaces()
            Rv = np.ones((self.N, 1))
            for i in range(d - 1, -1, -1):
                if i < d - 1:
                    pred = self.solve_core(i, Ls[i], Rv, sweep_index)
                if i > 0:
                    self.cores[i], Rm = _right_qr(self.cores[i])
                    self.cores[i - 1] = np.tensordot(self.cores[i - 1], Rm, axes=(2, 0))
                    Rv = self._contract(i, Rv, False)
        return pred

    def bond_gradient_norms(self, residual):
        """Spectral norm of the two-site residual gradient at every bond."""
        L = self.left_interfaces()
        R = self.right_interfaces()
        out = []
        for b in range(self.d - 1):
            left = np.einsum("na,nj->naj", L[b], self.Phis[b]).reshape(self.N, -1)
            right = np.einsum("nj,nb->njb", self.Phis[b + 1], R[b + 2]).reshape(self.N, -1)
            G = (left * residual[:, None]).T @ right
            out.append(np.linalg.norm(G, 2))
        return np.array(out)

    def increase_rank(self, b, rng, kick=1e-3):
        left, right = self.cores[b], self.cores[b + 1]
        r0, n, r1 = left.shape
        mat = left.reshape(r0 * n, r1)
        new_col = rng.standard_normal(r0 * n)
        new_col -= mat @ np.linalg.lstsq(mat, new_col, rcond=None)[0]
        new_col *= kick * max(np.linalg.norm(mat), 1e-300) / max(np.linalg.norm(new_col), 1e-300)
        self.cores[b] = np.concatenate([mat, new_col[:, None]], axis=1).reshape(r0, n, r1 + 1)
        q0, m, q1 = right.shape
        new_row = kick * max(np.linalg.norm(right), 1e-300) * rng.standard_normal((1, m, q1)) / np.sqrt(m * q1)
        self.cores[b + 1] = np.concatenate([right, new_row], axis=0)
        # restore right-orthogonality with the pivot at core 0
        for i in range(self.d - 1, 0, -1):
            self.cores[i], Rm = _right_qr(self.cores[i])
            self.cores[i - 1] = np.tensordot(self.cores[i - 1], Rm, axes=(2, 0))


def _initial_cores(sizes, rank, rng, scale):
    d = len(sizes)
    caps = _rank_caps(sizes)
    ranks = [1] + [min(rank, c) for c in caps] + [1]
    cores = []
    for i, n in enumerate(sizes):
        core = 1e-3 * rng.standard_normal((ranks[i], n, ranks[i + 1]))
        core[0, 0, 0] = 1.0
        cores.append(core)
    cores[0] *= scale
    return cores


def fit_als(X, y, bases, options=None, random_state=None):
    """Least-squares TT regression of ``y`` on ``X`` by rank-adaptive ALS.

    Returns ``(tt, diagnostics)``. A fraction of the samples is held out for
    an honest validation residual; it never drives the fit.
    """
    opts = options or FitOptions()
    rng = np.random.default_rng(random_state)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.size:
        raise DimensionMismatch("X and y sample counts differ")
    if X.shape[1] != len(bases):
        raise DimensionMismatch("need one basis per coordinate")
    N = y.size
    n_val = int(opts.validation_fraction * N) if N >= 10 else 0
    perm = rng.permutation(N)
    val_idx, train_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])
    sizes = [b.size for b in bases]
    Phis_all = [b.evaluate(X[:, i]) for i, b in enumerate(bases)]
    Phis = [P[train_idx] for P in Phis_all]
    y_train = y[train_idx]
    ynorm = np.linalg.norm(y_train)

    caps = _rank_caps(sizes)
    r_init = [1] + [min(opts.initial_rank, c) for c in caps] + [1]
    n_params = max(r_init[i] * n * r_init[i + 1] for i, n in enumerate(sizes))
    if train_idx.size < 3 * n_params:
        warnings.warn(f"only {train_idx.size} training samples for core solves with {n_params} unknowns",
                      UnderdeterminedFitWarning, stacklevel=2)

    scale = float(np.mean(y_train)) / max(float(np.prod([P[:, 0].mean() for P in Phis])), 1e-300)
    if not np.isfinite(scale) or scale == 0.0:
        scale = 1.0
    als = _ALS(Phis, y_train, _initial_cores(sizes, opts.initial_rank, rng, scale), opts.reg)
    diag = FitDiagnostics(n_train=train_idx.size, n_validation=n_val)
    Phis_val = [P[val_idx] for P in Phis_all]
    y_val = y[val_idx]

    def validation(cores):
        if not n_val:
            return float("nan")
        pv = np.ones((n_val, 1))
        for core, P in zip(cores, Phis_val):
            pv = np.einsum("na,ajb,nj->nb", pv, core, P)
        return float(np.linalg.norm(pv[:, 0] - y_val) / max(np.linalg.norm(y_val), 1e-300))

    # iterate kept at the end of the previous rank level, for rollback
    level = None
    prev = np.inf

    if ynorm == 0.0:
        als.cores = [np.zeros_like(c) for c in als.cores]
        diag.residuals.append(0.0)
        diag.converged, diag.stop_reason = True, "target"
    else:
        for sweep in range(opts.max_sweeps):
            pred = als.sweep(sweep)
            res = float(np.linalg.norm(pred - y_train) / ynorm)
            diag.residuals.append(res)
            ranks = [c.shape[2] for c in als.cores[:-1]]
            diag.rank_history.append(ranks)
            if res <= opts.target_residual:
                diag.converged, diag.stop_reason = True, "target"
                break
            if prev - res < opts.stagnation * prev:
                # the current rank level has converged
                val = validation(als.cores)
                if level is not None and n_val and not val < level[1]:
                    als.cores = level[0]
                    diag.stop_reason = "validation"
                    break
                open_bonds = [b for b in range(len(ranks)) if ranks[b] < min(opts.max_rank, caps[b])]
                if not open_bonds:
                    diag.stop_reason = "max_rank" if len(ranks) else "stagnation"
                    break
                level = ([c.copy() for c in als.cores], val)
                grads = als.bond_gradient_norms(y_train - pred)
                smallest = min(ranks[b] for b in open_bonds)
                candidates = [b for b in open_bonds if ranks[b] == smallest]
                b = max(candidates, key=lambda k: grads[k])
                als.increase_rank(b, rng)
                prev = np.inf
                continue
            prev = res
        else:
            diag.stop_reason = "max_sweeps"
            warnings.warn("ALS reached max_sweeps before the target residual", NotConvergedWarning, stacklevel=2)
    tt = ExtendedTT(als.cores, bases)
    diag.validation_residual = validation(tt.cores)
    return tt, diag


class TTRegressor(RegressorMixin, BaseEstimator):
    """Scikit-learn regressor backed by :func:`fit_als`.

    Parameters
    ----------
    bases : list of OrthonormalBasis1D
        One univariate basis per input column.
    """

    def __init__(self, bases=None, initial_rank=1, max_rank=4, max_sweeps=40, target_residual=1e-12,
                 stagnation=1e-2, reg=1e-12, validation_fraction=0.1, random_state=None):
        self.bases = bases
        self.initial_rank = initial_rank
        self.max_rank = max_rank
        self.max_sweeps = max_sweeps
        self.target_residual = target_residual
        self.stagnation = stagnation
        self.reg = reg
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _options(self):
        return FitOptions(self.initial_rank, self.max_rank, self.max_sweeps, self.target_residual,
                          self.stagnation, self.reg, self.validation_fraction)

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        if self.bases is None or len(self.bases) != X.shape[1]:
            raise ValueError("bases must provide one basis per feature")
        self.tt_, self.diagnostics_ = fit_als(X, y, self.bases, self._options(), self.random_state)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "tt_")
        X = check_array(X)
        return self.tt_.evaluate(X, check=False)


def empirical_l2(model, X, y):
    """Mean squared deviation ``(1/N) sum |model(x_k) - y_k|^2``."""
    pred = model.evaluate(X) if isinstance(model, ExtendedTT) else model(X)
    return float(np.mean((np.asarray(pred) - np.asarray(y)) ** 2))


def empirical_kl(log_f, density_h, samples):
    """Plug-in estimate of KL(f || f_h) from samples drawn from ``f``.

    ``log_f`` is the normalized log-density of the sampling law and
    ``density_h`` returns surrogate density values. Returns
    ``(estimate, standard_error)``.
    """
    X = np.atleast_2d(samples)
    fh = np.asarray(density_h(X), dtype=float)
    bad = ~(fh > 0)
    if np.any(bad):
        raise NonPositiveSurrogate(f"surrogate vanishes at {int(bad.sum())} sample points", points=X[bad])
    terms = np.asarray(log_f(X), dtype=float) - np.log(fh)
    se = float(terms.std(ddof=1) / np.sqrt(terms.size)) if terms.size > 1 else float("nan")
    return float(terms.mean()), se


def hellinger_distance(log_f, density_h, samples):
    """Importance estimate of the Hellinger distance using samples from ``f``.

    Uses ``H^2 = 1 - E_f[sqrt(f_h / f)]``; negative surrogate values count as 0.
    """
    X = np.atleast_2d(samples)
    fh = np.clip(np.asarray(density_h(X), dtype=float), 0.0, None)
    ratio = np.sqrt(fh * np.exp(-np.asarray(log_f(X), dtype=float)))
    h2 = 1.0 - float(ratio.mean())
    return float(np.sqrt(max(h2, 0.0)))
