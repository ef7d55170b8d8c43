"""Hyperspherical layer geometry.

Polar coordinates are ``(rho, theta_0, theta_1, ..., theta_{d-2})`` with
``theta_0`` in ``[0, 2 pi]`` and the remaining angles in ``[0, pi]``.
Layers are indexed from 0; layer ``l`` is the shell
``radii[l] <= |x - center| < radii[l + 1]``.
"""
from dataclasses import dataclass, field
from math import gamma, pi

import numpy as np

from .exceptions import OutOfChart, OutsideCoveredRegion

_BOX_TOL = 1e-12


def sin_power_integral(i):
    """Wallis integral of ``sin^i`` over ``[0, pi]``."""
    val = pi if i % 2 == 0 else 2.0
    start = 2 if i % 2 == 0 else 3
    for k in range(start, i + 1, 2):
        val *= (k - 1) / k
    return val


@dataclass(frozen=True)
class LayerPartition:
    radii: np.ndarray
    dim: int
    center: np.ndarray = field(default=None)

    def __post_init__(self):
        radii = np.asarray(self.radii, dtype=float)
        if radii.ndim != 1 or radii.size < 2:
            raise ValueError("need at least one layer (two radii)")
        if radii[0] != 0.0 or np.any(np.diff(radii) <= 0):
            raise ValueError("radii must start at 0 and increase strictly")
        if self.dim < 2:
            raise ValueError("polar layers need dim >= 2")
        center = np.zeros(self.dim) if self.center is None else np.asarray(self.center, dtype=float)
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "center", center)

    @property
    def n_layers(self):
        return self.radii.size - 1

    @property
    def outer_radius(self):
        return float(self.radii[-1])

    def chart(self, layer):
        if not 0 <= layer < self.n_layers:
            raise IndexError(f"layer {layer} out of range")
        return PolarChart(layer, float(self.radii[layer]), float(self.radii[layer + 1]), self.dim, self.center)

    def charts(self):
        return [self.chart(l) for l in range(self.n_layers)]

    def locate(self, x):
        """Layer index per point, ``n_layers`` for the unbounded remainder."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r = np.linalg.norm(x - self.center, axis=1)
        return np.searchsorted(self.radii, r, side="right") - 1

    def truncate(self, n_layers):
        """Partition made of the innermost ``n_layers`` shells."""
        return LayerPartition(self.radii[: n_layers + 1], self.dim, self.center)


def equidistant_partition(L, R, d, center=None):
    if L < 1 or R <= 0:
        raise ValueError("need L >= 1 and R > 0")
    return LayerPartition(np.arange(L + 1) * (R / L), d, center)


@dataclass(frozen=True)
class PolarChart:
    layer: int
    rho_min: float
    rho_max: float
    dim: int
    center: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.center is None:
            object.__setattr__(self, "center", np.zeros(self.dim))

    @property
    def box(self):
        """Lower and upper bounds of the tensor-product chart domain."""
        lo = np.zeros(self.dim)
        hi = np.full(self.dim, pi)
        lo[0], hi[0] = self.rho_min, self.rho_max
        hi[1] = 2 * pi
        return lo, hi

    def factor_exponents(self):
        """Exponents ``(d-1, 0, 1, 2, ..., d-2)`` of the Jacobian factors."""
        return [self.dim - 1, 0] + list(range(1, self.dim - 1))

    def jacobian_factors(self, xhat):
        """Per-coordinate factors ``rho^(d-1), 1, sin(theta_1), ..., sin^(d-2)``."""
        xhat = np.atleast_2d(xhat)
        out = np.ones_like(xhat)
        out[:, 0] = xhat[:, 0] ** (self.dim - 1)
        for i in range(1, self.dim - 1):
            out[:, i + 1] = np.sin(xhat[:, i + 1]) ** i
        return out

    def jacobian_det(self, xhat):
        single = np.ndim(xhat) == 1
        out = np.prod(self.jacobian_factors(xhat), axis=1)
        return out[0] if single else out

    def contains(self, xhat, tol=_BOX_TOL):
        lo, hi = self.box
        xhat = np.atleast_2d(xhat)
        return np.all((xhat >= lo - tol) & (xhat <= hi + tol), axis=1)

    def to_cartesian(self, xhat, check=True):
        single = np.ndim(xhat) == 1
        xhat = np.atleast_2d(np.asarray(xhat, dtype=float))
        if check and not np.all(self.contains(xhat)):
            raise OutOfChart(f"points outside the chart box of layer {self.layer}")
        out = polar_directions(xhat[:, 1:], self.dim) * xhat[:, :1] + self.center
        return out[0] if single else out

    def weight_mass(self):
        """Integral of the rank-1 Jacobian weight over the chart box."""
        d = self.dim
        radial = (self.rho_max**d - self.rho_min**d) / d
        ang = 2 * pi
        for i in range(1, d - 1):
            ang *= sin_power_integral(i)
        return radial * ang


def polar_directions(angles, d):
    """Unit vectors for angle rows ``(theta_0, ..., theta_{d-2})``."""
    angles = np.atleast_2d(angles)
    n = angles.shape[0]
    out = np.empty((n, d))
    s = np.ones(n)
    # build from the last coordinate backwards: x_d = cos(theta_{d-2}), ...
    for i in range(d - 2, 0, -1):
        out[:, i + 1] = s * np.cos(angles[:, i])
        s = s * np.sin(angles[:, i])
    out[:, 0] = s * np.cos(angles[:, 0])
    out[:, 1] = s * np.sin(angles[:, 0])
    return out


def polar_to_cartesian(chart, xhat):
    return chart.to_cartesian(xhat)


def cartesian_to_polar(partition, x):
    """Layer index and polar coordinates of points inside the covered ball.

    Returns ``(layers, xhat)``; for a single point ``layers`` is an int.
    Points on an axis get ``theta_0 = 0``.
    """
    single = np.ndim(x) == 1
    x = np.atleast_2d(np.asarray(x, dtype=float)) - partition.center
    d = partition.dim
    layers = partition.locate(x + partition.center)
    if np.any(layers >= partition.n_layers):
        raise OutsideCoveredRegion("point lies in the unbounded tail region")
    xhat = np.empty_like(x)
    xhat[:, 0] = np.linalg.norm(x, axis=1)
    partial = x[:, 0] ** 2 + x[:, 1] ** 2
    for i in range(1, d - 1):
        # theta_i is the angle between the partial vector (x_1..x_{i+1}) and x_{i+2}
        xhat[:, i + 1] = np.arctan2(np.sqrt(partial), x[:, i + 1])
        partial = partial + x[:, i + 1] ** 2
    theta0 = np.mod(np.arctan2(x[:, 1], x[:, 0]), 2 * pi)
    theta0[theta0 >= 2 * pi] = 0.0
    xhat[:, 1] = theta0
    if single:
        return int(layers[0]), xhat[0]
    return layers, xhat


def ball_volume(R, d):
    return pi ** (d / 2) / gamma(d / 2 + 1) * R**d
