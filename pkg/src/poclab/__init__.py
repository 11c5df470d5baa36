"""Partially ordered Markov models: oriented kernels, exact and Monte Carlo
sampling, uniqueness criteria and oriented percolation."""

from __future__ import annotations

from .errors import (
    BadBoxError,
    DomainError,
    EnumerationTooLarge,
    GeometryError,
    LoadError,
    MissingBoundaryError,
    MonotonicityError,
    PocError,
    SingularityError,
    TruncationError,
    UnsupportedError,
)
from .geometry import SiteSpace, TimeBox, classify_region, is_time_box, k_past, nearest_future, nearest_past, slicing, time_box
from .kernels import ColorSpace, Kernel, box_probability, eval_single_site, exact_box_distribution, gibbs_specification
from .models import IsingParams, StavskayaParams, ising_kernel, pca_to_pomm, stavskaya_kernel

__version__ = "0.1.0"

__all__ = [
    "BadBoxError",
    "ColorSpace",
    "DomainError",
    "EnumerationTooLarge",
    "GeometryError",
    "IsingParams",
    "Kernel",
    "LoadError",
    "MissingBoundaryError",
    "MonotonicityError",
    "PocError",
    "SingularityError",
    "SiteSpace",
    "StavskayaParams",
    "TimeBox",
    "TruncationError",
    "UnsupportedError",
    "box_probability",
    "classify_region",
    "eval_single_site",
    "exact_box_distribution",
    "gibbs_specification",
    "is_time_box",
    "ising_kernel",
    "k_past",
    "nearest_future",
    "nearest_past",
    "pca_to_pomm",
    "slicing",
    "stavskaya_kernel",
    "time_box",
]
