"""Sampling-free tensor-train surrogates of concentrated probability densities."""
from .basis import angular_basis, radial_basis, trig_basis
from .coords import LayerPartition, PolarChart, cartesian_to_polar, equidistant_partition, polar_to_cartesian
from .density import BasisConfig, BuildOptions, LayeredDensity, TTDensity, build
from .transport import (
    AffineMap,
    ComposedMap,
    ConvexCombinationMap,
    CountingLogDensity,
    LogDensity,
    QuadraticMap,
    banana_log_density,
    banana_map,
    gaussian_log_density,
    laplace_affine,
    perturbed_prior,
)
from .tt import ExtendedTT, FitOptions, TTRegressor, fit_als

__version__ = "0.1.0"

__all__ = [
    "AffineMap",
    "BasisConfig",
    "BuildOptions",
    "ComposedMap",
    "ConvexCombinationMap",
    "CountingLogDensity",
    "ExtendedTT",
    "FitOptions",
    "LayerPartition",
    "LayeredDensity",
    "LogDensity",
    "PolarChart",
    "QuadraticMap",
    "TTDensity",
    "TTRegressor",
    "angular_basis",
    "banana_log_density",
    "banana_map",
    "build",
    "cartesian_to_polar",
    "equidistant_partition",
    "fit_als",
    "gaussian_log_density",
    "laplace_affine",
    "perturbed_prior",
    "polar_to_cartesian",
    "radial_basis",
    "trig_basis",
]
