"""Inverse-transform sampling of the rank-1 layer weights."""
import csv
from dataclasses import dataclass
from math import pi

import numpy as np

from .coords import sin_power_integral
from .exceptions import DensityEvaluationError


def layer_rng(seed, stream):
    """Independent generator for ``stream`` (typically the layer index)."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(stream),)))


def sample_radial(rng, interval, d, N):
    """Draws with density proportional to ``rho^(d-1)`` on ``interval``."""
    a, b = map(float, interval)
    if not 0 <= a < b:
        raise ValueError("need 0 <= a < b")
    u = rng.random(N)
    return (a**d + u * (b**d - a**d)) ** (1.0 / d)


def sin_power_antiderivative(theta, i):
    """``int_0^theta sin^i`` by the standard reduction formula."""
    theta = np.asarray(theta, dtype=float)
    s, c = np.sin(theta), np.cos(theta)
    if i % 2 == 0:
        acc, start = theta.copy(), 2
    else:
        acc, start = 1.0 - c, 3
    for n in range(start, i + 1, 2):
        acc = -(s ** (n - 1)) * c / n + (n - 1) / n * acc
    return acc


def sample_angular(rng, i, N, tol=1e-12):
    """Draws with density proportional to ``sin^i`` on ``[0, pi]``."""
    if i < 1:
        raise ValueError("need i >= 1")
    u = rng.random(N)
    if i == 1:
        return np.arccos(1.0 - 2.0 * u)
    Z = sin_power_integral(i)
    lo, hi = np.zeros(N), np.full(N, pi)
    theta = np.full(N, pi / 2)
    for _ in range(200):
        F = sin_power_antiderivative(theta, i) / Z - u
        lo = np.where(F < 0, theta, lo)
        hi = np.where(F >= 0, theta, hi)
        dens = np.sin(theta) ** i / Z
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = theta - F / dens
        bad = ~np.isfinite(newton) | (newton <= lo) | (newton >= hi)
        new = np.where(bad, 0.5 * (lo + hi), newton)
        done = np.abs(new - theta) < tol
        theta = new
        if np.all(done | (hi - lo < tol)):
            break
    return theta


def sample_chart(rng, chart, N):
    """Coordinate-wise draws from the normalized chart weight, shape ``(N, d)``."""
    d = chart.dim
    out = np.empty((N, d))
    out[:, 0] = sample_radial(rng, (chart.rho_min, chart.rho_max), d, N)
    out[:, 1] = rng.random(N) * 2 * pi
    for i in range(1, d - 1):
        out[:, i + 1] = sample_angular(rng, i, N)
    return out


@dataclass(frozen=True)
class LayerSampleSet:
    """Samples ``(xhat, f(xhat))`` on one layer.

    ``values`` are ``exp(log_values - log_offset)`` with ``log_offset`` the
    largest sampled log-value, so the fitted scale stays O(1).
    """

    layer: int
    points: np.ndarray
    log_values: np.ndarray
    log_offset: float

    @property
    def values(self):
        return np.exp(self.log_values - self.log_offset)

    def __len__(self):
        return len(self.points)

    def to_csv(self, path, mode="w"):
        d = self.points.shape[1]
        with open(path, mode, newline="") as fh:
            writer = csv.writer(fh)
            if mode == "w":
                writer.writerow(["layer"] + [f"xhat{i + 1}" for i in range(d)] + ["log_value"])
            for p, v in zip(self.points, self.log_values):
                writer.writerow([self.layer] + [repr(float(c)) for c in p] + [repr(float(v))])


def sample_layer(rng, chart, prior, N):
    """Sample the chart weight and evaluate the log-prior at the mapped points."""
    if N < 1:
        raise ValueError("need at least one sample per layer")
    xhat = sample_chart(rng, chart, N)
    x = chart.to_cartesian(xhat, check=False)
    try:
        logv = np.asarray(prior(x), dtype=float)
    except Exception as exc:  # noqa: BLE001 - re-raised with context
        raise DensityEvaluationError(f"density evaluation failed on layer {chart.layer}: {exc}") from exc
    bad = np.isnan(logv) | (logv == np.inf)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise DensityEvaluationError(f"non-finite log-density on layer {chart.layer}", point=x[k])
    offset = float(np.max(logv))
    if not np.isfinite(offset):
        offset = 0.0
    return LayerSampleSet(chart.layer, xhat, logv, offset)
