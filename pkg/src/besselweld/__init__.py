"""Coupled Bessel flows, hitting-time fields, reverse Loewner flows,
and conformal welding maps, all driven by one shared Brownian path."""

from besselweld.rng_bridge import (
    BrownianPath,
    KeyedStream,
    NonDyadicTimeError,
    PathSeed,
    create_path,
)

__version__ = "0.1.0"

__all__ = [
    "BrownianPath",
    "KeyedStream",
    "NonDyadicTimeError",
    "PathSeed",
    "create_path",
    "__version__",
]
