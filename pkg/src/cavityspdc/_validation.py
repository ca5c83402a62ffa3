"""Small argument checkers shared by the modules.

They raise ``ValueError`` with the parameter name in the message, in the
spirit of ``sklearn.utils.validation``.
"""

import math
from numbers import Integral, Real

import numpy as np


def check_positive(value, name, *, strict=True):
    if not isinstance(value, Real) or not math.isfinite(value):
        raise ValueError(f"{name} must be a finite real number, got {value!r}")
    if strict and value <= 0:
        raise ValueError(f"{name} must be > 0, got {value!r}")
    if not strict and value < 0:
        raise ValueError(f"{name} must be >= 0, got {value!r}")
    return float(value)


def check_fraction(value, name, *, low_open=False, high_open=False):
    if not isinstance(value, Real) or not math.isfinite(value):
        raise ValueError(f"{name} must be a finite real number, got {value!r}")
    lo_bad = value <= 0 if low_open else value < 0
    hi_bad = value >= 1 if high_open else value > 1
    if lo_bad or hi_bad:
        lo = "(" if low_open else "["
        hi = ")" if high_open else "]"
        raise ValueError(f"{name} must lie in {lo}0, 1{hi}, got {value!r}")
    return float(value)


def check_int(value, name, *, minimum=0):
    if isinstance(value, bool) or not isinstance(value, Integral):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value!r}")
    return int(value)


def check_rng(seed):
    """Return a ``numpy.random.Generator`` from a seed, SeedSequence or Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def spawn_seeds(seed, n):
    """Derive ``n`` independent child seeds from a master seed.

    Each replica of a resampling loop draws from its own child so results do
    not depend on how replicas are scheduled.
    """
    if isinstance(seed, np.random.Generator):
        seed = seed.integers(2**63)
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return seed.spawn(n)


def check_xy(x, y, *, min_points=1, name="data"):
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError(f"{name}: x and y lengths differ ({x.size} != {y.size})")
    if x.size < min_points:
        raise ValueError(f"{name}: need at least {min_points} points, got {x.size}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError(f"{name}: non-finite values")
    return x, y
