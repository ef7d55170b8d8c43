"""End-to-end experiment scenarios: Gaussian, banana and Darcy-lite posteriors.

Each runner takes a validated :class:`ExperimentConfig`, writes a results CSV,
a quantile summary CSV and a JSON manifest into ``output_dir`` and returns
the result rows.
"""
import csv
import dataclasses
import hashlib
import json
import os
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import yaml

from .bayes import (
    DarcyLiteForward,
    ForwardCache,
    MCMCConfig,
    map_estimate,
    posterior_log_density,
    rwm_mcmc,
    synthesize_observations,
)
from .coords import equidistant_partition
from .density import BasisConfig, BuildOptions, build
from .exceptions import ConfigError, NegativeLayerMass, NonPositiveSurrogate
from .transport import (
    AffineMap,
    ConvexCombinationMap,
    CountingLogDensity,
    banana_log_density,
    banana_map,
    gaussian_log_density,
    laplace_affine,
    perturbed_prior,
)
from .tt import FitOptions, empirical_kl, hellinger_distance

SCENARIOS = ("gaussian", "banana", "darcy")


@dataclass
class ExperimentConfig:
    """Validated experiment description.

    Lists (``d``, ``sigma2``, ``partition.L``, ``n_per_layer``, ``t``) span a
    grid of runs. ``basis.trig_modes`` is the number of Fourier basis
    functions, so 41 covers frequencies up to 20.
    """

    scenario: str
    d: list = field(default_factory=lambda: [2])
    sigma2: list = field(default_factory=lambda: [1e-2])
    sigma: float = 1e-7
    mean: float = 1.0
    cov: list = field(default_factory=lambda: [[1.0, 0.9], [0.9, 1.0]])
    transport: str = "exact"
    t: list = field(default_factory=lambda: [0.0, 0.25, 0.5, 1.0])
    partition: dict = field(default_factory=lambda: {"L": [19], "R": 10.0})
    basis: dict = field(default_factory=lambda: {"radial_degree": 7, "trig_modes": 1, "angular_degree": 0,
                                                 "tau_mant": 100})
    fit: dict = field(default_factory=dict)
    n_per_layer: list = field(default_factory=lambda: [1000])
    seeds: dict = field(default_factory=lambda: {"base": 0})
    repetitions: int = 1
    output_dir: str = "results"
    tail: str = "identity"
    mcmc: dict = field(default_factory=lambda: {"burn_in_fraction": 0.1, "proposal": "laplace"})
    darcy: dict = field(default_factory=lambda: {"grid": 64, "amplitude": 0.25, "observations": 144,
                                                 "reference": "auto", "reference_steps": 100000,
                                                 "quadrature_tol": 1e-9, "quadrature_max_nodes": 128})
    metrics: dict = field(default_factory=lambda: {"kl_samples": 10000})
    save_surrogates: bool = False

    def to_dict(self):
        return dataclasses.asdict(self)

    def config_hash(self):
        """SHA-256 of the canonical config, ignoring where outputs are written."""
        data = self.to_dict()
        data.pop("output_dir")
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @property
    def layers(self):
        return list(self.partition["L"])

    @property
    def radius(self):
        return float(self.partition["R"])


def _as_list(value, kind, name):
    items = value if isinstance(value, (list, tuple)) else [value]
    try:
        out = [kind(v) for v in items]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: cannot interpret {value!r}") from exc
    if not out:
        raise ConfigError(f"{name} must not be empty")
    return out


_DEFAULTS = ExperimentConfig("gaussian")
_KNOWN = {f.name for f in dataclasses.fields(ExperimentConfig)}


def validate_config(raw):
    """Check a raw mapping and return an :class:`ExperimentConfig`."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(raw) - _KNOWN
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if raw.get("scenario") not in SCENARIOS:
        raise ConfigError(f"scenario must be one of {SCENARIOS}")
    merged = {}
    for f in dataclasses.fields(ExperimentConfig):
        default = getattr(_DEFAULTS, f.name)
        value = raw.get(f.name, default)
        if isinstance(default, dict) and isinstance(value, dict):
            value = {**default, **value}
        merged[f.name] = value
    if "transport" not in raw:
        merged["transport"] = {"gaussian": "exact", "banana": "convex", "darcy": "laplace"}[raw["scenario"]]
    cfg = ExperimentConfig(**merged)

    cfg.d = _as_list(cfg.d, int, "d")
    cfg.sigma2 = _as_list(cfg.sigma2, float, "sigma2")
    cfg.t = _as_list(cfg.t, float, "t")
    cfg.n_per_layer = _as_list(cfg.n_per_layer, int, "n_per_layer")
    cfg.partition = {"L": _as_list(cfg.partition.get("L"), int, "partition.L"), "R": cfg.partition.get("R")}
    if any(d < 2 for d in cfg.d):
        raise ConfigError("d must be at least 2")
    if any(s <= 0 for s in cfg.sigma2) or cfg.sigma <= 0:
        raise ConfigError("noise levels must be positive")
    if any(not 0 <= t <= 1 for t in cfg.t):
        raise ConfigError("t values must lie in [0, 1]")
    if any(L < 1 for L in cfg.layers):
        raise ConfigError("partition.L must be at least 1")
    try:
        if float(cfg.partition["R"]) <= 0:
            raise ConfigError("partition.R must be positive")
    except (TypeError, ValueError) as exc:
        raise ConfigError("partition.R must be a positive number") from exc
    if any(n < 1 for n in cfg.n_per_layer):
        raise ConfigError("n_per_layer must be positive")
    if cfg.repetitions < 1:
        raise ConfigError("repetitions must be positive")
    if cfg.transport not in ("exact", "laplace", "convex"):
        raise ConfigError("transport must be exact, laplace or convex")
    if cfg.tail not in ("identity", "laplace", "surrogate"):
        raise ConfigError("tail must be identity, laplace or surrogate")
    if cfg.scenario == "darcy" and cfg.transport != "laplace":
        raise ConfigError("the darcy scenario uses transport: laplace")
    if cfg.scenario == "banana":
        cov = np.asarray(cfg.cov, float)
        if cov.shape != (2, 2) or np.any(np.linalg.eigvalsh(cov) <= 0):
            raise ConfigError("banana cov must be a 2x2 SPD matrix")
    try:
        _basis_config(cfg)
        _fit_options(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if "base" not in cfg.seeds:
        raise ConfigError("seeds.base is required")
    return cfg


def load_config(path):
    with open(path) as fh:
        text = fh.read()
    try:
        raw = json.loads(text) if path.endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return validate_config(raw)


def _basis_config(cfg):
    b = cfg.basis
    return BasisConfig(int(b["radial_degree"]), int(b["trig_modes"]), int(b["angular_degree"]), int(b["tau_mant"]))


def _fit_options(cfg):
    return FitOptions(**cfg.fit)


def _seed(cfg, rep):
    return int(cfg.seeds["base"]) + rep


def _rel(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(np.asarray(b)))


def _rounded_max_rank(ld, eps=1e-8):
    return max(max(l.tt.round(eps)[0].ranks) for l in ld.layers)


def _build(cfg, prior, d, L, N, seed, tag):
    opts = BuildOptions(n_samples=N, fit=_fit_options(cfg), tail=cfg.tail, seed=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ld = build(prior, equidistant_partition(L, cfg.radius, d), _basis_config(cfg), opts)
    if cfg.save_surrogates:
        os.makedirs(cfg.output_dir, exist_ok=True)
        ld.save(os.path.join(cfg.output_dir, f"surrogate_{tag}.json"))
    return ld


def run_gaussian(cfg):
    """Exact affine transport of ``N(mu 1, sigma^2 I)`` over the (d, sigma^2, L, N) grid."""
    rows = []
    for d in cfg.d:
        mu = np.full(d, cfg.mean)
        for s2 in cfg.sigma2:
            s = np.sqrt(s2)
            target = CountingLogDensity(gaussian_log_density(mu, s2 * np.eye(d)))
            if cfg.transport == "exact":
                T = AffineMap(s * np.eye(d), mu)
            else:
                T = laplace_affine(gaussian_log_density(mu, s2 * np.eye(d)), mu)
            prior = perturbed_prior(target, T)
            ref = gaussian_log_density(np.zeros(d), np.eye(d))
            for L in cfg.layers:
                for N in cfg.n_per_layer:
                    for rep in range(cfg.repetitions):
                        seed = _seed(cfg, rep)
                        target.reset()
                        ld = _build(cfg, prior, d, L, N, seed, f"d{d}_s{s2:g}_L{L}_N{N}_r{rep}")
                        calls = target.calls
                        mean, cov = ld.mean_and_cov(T)
                        X = np.random.default_rng(seed).standard_normal((cfg.metrics["kl_samples"], d))
                        try:
                            kl, _ = empirical_kl(ref, ld.eval, X)
                        except NonPositiveSurrogate:
                            kl = float("inf")
                        rows.append({
                            "d": d, "sigma2": s2, "L": L, "N": N, "rep": rep, "seed": seed, "calls": calls,
                            "err_Z": abs(1.0 - ld.normalization_constant()),
                            "err_mu": _rel(mean, mu), "err_Sigma": _rel(cov, s2 * np.eye(d)),
                            "KL": kl, "Hellinger": hellinger_distance(ref, ld.eval, X),
                            "max_rank": _rounded_max_rank(ld),
                        })
    return rows


def _banana_transports(cfg, target):
    exact = banana_map(cfg.cov)
    counting = CountingLogDensity(target)
    affine = laplace_affine(counting, np.zeros(2))
    return exact, affine, counting.calls


def run_banana(cfg):
    """Surrogates along ``(1 - t) T_affine + t T_exact`` against matched-budget MCMC."""
    cov = np.asarray(cfg.cov, float)
    mu_ref = np.array([0.0, -(cov[0, 0] + 1.0)])
    cov_ref = cov.copy()
    cov_ref[1, 1] = cov[1, 1] + 2 * cov[0, 0] ** 2
    raw = banana_log_density(cov)
    target = CountingLogDensity(raw)
    exact, affine, laplace_calls = _banana_transports(cfg, raw)
    L = cfg.layers[0]
    rows = []
    budgets = {}
    t_values = {"exact": [1.0], "laplace": [0.0]}.get(cfg.transport, cfg.t)
    for t in t_values:
        T = exact if t == 1.0 else ConvexCombinationMap(t, affine, exact)
        prior = perturbed_prior(target, T)
        for N in cfg.n_per_layer:
            for rep in range(cfg.repetitions):
                seed = _seed(cfg, rep)
                target.reset()
                # A badly fitted outer layer can integrate negative for t < 1; the
                # repetition is kept as a failure with infinite error, not dropped.
                try:
                    ld = _build(cfg, prior, 2, L, N, seed, f"t{t:g}_N{N}_r{rep}")
                    mean, c = ld.mean_and_cov(T)
                    errs, status = (_rel(mean, mu_ref), _rel(c, cov_ref)), "ok"
                except NegativeLayerMass as exc:
                    errs, status = (float("inf"), float("inf")), f"negative layer {exc.layer}"
                calls = target.calls + (laplace_calls if t < 1.0 else 0)
                rows.append({"method": "surrogate", "t": t, "L": L, "N": N, "rep": rep, "seed": seed,
                             "calls": calls, "err_mu": errs[0], "err_Sigma": errs[1],
                             "acceptance": "", "status": status})
                budgets[(N, rep)] = max(budgets.get((N, rep), 0), calls)
    frac = float(cfg.mcmc.get("burn_in_fraction", 0.1))
    pcov = affine.H @ affine.H.T if cfg.mcmc.get("proposal", "laplace") == "laplace" else None
    for N in cfg.n_per_layer:
        for rep in range(cfg.repetitions):
            seed = _seed(cfg, rep)
            budget = budgets[(N, rep)]
            steps = budget - 1
            mc = rwm_mcmc(raw, MCMCConfig(steps, int(frac * steps), seed=seed, proposal_cov=pcov), x0=affine.M)
            rows.append({"method": "mcmc", "t": "", "L": "", "N": N, "rep": rep, "seed": seed, "calls": mc.calls,
                         "err_mu": _rel(mc.mean, mu_ref), "err_Sigma": _rel(mc.cov, cov_ref),
                         "acceptance": mc.acceptance_rate, "status": "ok"})
    return rows


def quadrature_reference(log_prior, transport, R, tol=1e-9, start=16, max_nodes=128):
    """Tensor Gauss-Legendre moments of ``exp(log_prior)`` on ``[-R, R]^2``, pushed through ``transport``.

    The node count doubles until log-normalizer and mean agree between two
    successive levels within ``tol``. Returns a dict with ``logZ``, ``mean``,
    ``cov``, ``nodes`` and the evaluation ``points``/``log_values`` of the
    finest level.
    """
    prev = None
    n = start
    while True:
        t, w = np.polynomial.legendre.leggauss(n)
        x, w = R * t, R * w
        X = np.array(np.meshgrid(x, x, indexing="ij")).reshape(2, -1).T
        W = np.outer(w, w).ravel()
        lv = log_prior(X)
        shift = np.max(lv)
        p = W * np.exp(lv - shift)
        Z = p.sum()
        Y = transport.apply(X)
        mean = p @ Y / Z
        D = Y - mean
        cov = (D * p[:, None]).T @ D / Z
        cur = {"logZ": float(np.log(Z) + shift), "mean": mean, "cov": cov, "nodes": n, "points": X,
               "log_values": lv, "weights": W}
        if prev is not None:
            dz = abs(cur["logZ"] - prev["logZ"])
            dm = np.linalg.norm(cur["mean"] - prev["mean"]) / max(np.linalg.norm(cur["mean"]), 1e-300)
            if (dz < tol and dm < tol) or 2 * n > max_nodes:
                cur["converged"] = bool(dz < tol and dm < tol)
                return cur
        elif 2 * n > max_nodes:
            cur["converged"] = False
            return cur
        prev = cur
        n *= 2


def _darcy_problem(cfg, d, seed):
    dc = cfg.darcy
    forward = ForwardCache(DarcyLiteForward(d, int(dc["grid"]), float(dc["amplitude"]), int(dc["observations"])))
    rng = np.random.default_rng(seed)
    y_star = rng.standard_normal(d)
    noise = synthesize_observations(forward, y_star, cfg.sigma, rng)
    post = posterior_log_density(noise, forward)
    counting = CountingLogDensity(post)
    ymap = map_estimate(noise, forward)
    T = laplace_affine(counting, ymap)
    return forward, noise, post, T, counting.calls


def run_darcy(cfg):
    """Darcy-lite posteriors with Laplace transport versus a quadrature or MCMC reference."""
    rows = []
    for d in cfg.d:
        for rep in range(cfg.repetitions):
            seed = _seed(cfg, rep)
            forward, noise, post, T, setup_calls = _darcy_problem(cfg, d, seed)
            prior = perturbed_prior(post, T)
            mode = cfg.darcy.get("reference", "auto")
            use_quad = mode == "quadrature" or (mode == "auto" and d == 2)
            if use_quad:
                if d != 2:
                    raise ConfigError("quadrature reference is only available for d = 2")
                ref = quadrature_reference(prior, T, cfg.radius, float(cfg.darcy["quadrature_tol"]),
                                           max_nodes=int(cfg.darcy["quadrature_max_nodes"]))
                ref_mean, ref_cov, ref_logZ = ref["mean"], ref["cov"], ref["logZ"]
            else:
                steps = int(cfg.darcy["reference_steps"])
                mc = rwm_mcmc(post, MCMCConfig(steps, steps // 10, seed=seed, proposal_cov=T.H @ T.H.T), x0=T.M)
                ref_mean, ref_cov, ref_logZ = mc.mean, mc.cov, float("nan")
            counter = CountingLogDensity(prior)
            for L in cfg.layers:
                for N in cfg.n_per_layer:
                    counter.reset()
                    ld = _build(cfg, counter, d, L, N, seed, f"d{d}_L{L}_N{N}_r{rep}")
                    mean, cov = ld.mean_and_cov(T)
                    logZ = float(ld.log_normalization_constant())
                    kl = float("nan")
                    if use_quad:
                        f = np.exp(ref["log_values"] - ref_logZ)
                        fh = ld.eval(ref["points"])
                        with np.errstate(divide="ignore"):
                            kl = float(np.sum(ref["weights"] * f * (np.log(f) - np.log(fh))))
                    rows.append({
                        "d": d, "L": L, "N": N, "rep": rep, "seed": seed,
                        "calls": setup_calls + counter.calls,
                        "err_Z": abs(1.0 - np.exp(logZ - ref_logZ)) if np.isfinite(ref_logZ) else float("nan"),
                        "err_mu": _rel(mean, ref_mean), "err_Sigma": _rel(cov, ref_cov), "KL": kl,
                        "reference": "quadrature" if use_quad else "mcmc",
                    })
    return rows


RUNNERS = {"gaussian": run_gaussian, "banana": run_banana, "darcy": run_darcy}
_GROUP_KEYS = {"gaussian": ("d", "sigma2", "L", "N"), "banana": ("method", "t", "N"), "darcy": ("d", "L", "N")}
_METRICS = ("calls", "err_Z", "err_mu", "err_Sigma", "KL", "Hellinger")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(rows, path):
    if not rows:
        return
    keys = list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in keys])


def quantile_summary(rows, scenario, quantiles=(0.1, 0.5, 0.9)):
    keys = _GROUP_KEYS[scenario]
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    for gk, members in groups.items():
        row = dict(zip(keys, gk))
        row["count"] = len(members)
        for m in _METRICS:
            if m not in members[0]:
                continue
            vals = np.array([float(r[m]) for r in members])
            with np.errstate(invalid="ignore"):
                for q in quantiles:
                    row[f"{m}_q{int(round(q * 100)):02d}"] = float(np.quantile(vals, q))
        out.append(row)
    return out


def run(cfg, output_dir=None):
    """Run ``cfg`` and write ``results.csv``, ``summary.csv`` and ``manifest.json``."""
    out = output_dir or cfg.output_dir
    cfg = dataclasses.replace(cfg, output_dir=out)
    os.makedirs(out, exist_ok=True)
    start = time.perf_counter()
    rows = RUNNERS[cfg.scenario](cfg)
    digest = cfg.config_hash()
    for r in rows:
        r["config_hash"] = digest
    write_csv(rows, os.path.join(out, "results.csv"))
    summary = quantile_summary(rows, cfg.scenario)
    write_csv(summary, os.path.join(out, "summary.csv"))
    seeds = sorted({r["seed"] for r in rows})
    manifest = {"config": cfg.to_dict(), "config_hash": digest, "seeds": seeds,
                "rows": len(rows), "seconds": time.perf_counter() - start,
                "files": ["results.csv", "summary.csv"]}
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    return rows
