"""Scalar special functions used by the closed-form hazard integral.

All three functions accept scalars or arrays and return ``float`` for scalar
input.  They are thin, domain-checked wrappers over :mod:`scipy.special`,
whose ``erf`` (Cephes), ``erfcx`` (Faddeeva) and ``dawsn`` (Cephes)
implementations are accurate to a few ulp over the whole real line.

The raw imaginary error function is deliberately not exposed: ``erfi``
overflows for ``|x| > 26``.  Callers express it through :func:`dawson`,
``erfi(x) = 2 / sqrt(pi) * exp(x**2) * dawson(x)``, and fold the exponential
into a quantity that is already bounded.
"""

from dataclasses import dataclass

import numpy as np
from scipy import special as _sp

__all__ = ["AccuracySpec", "erf", "erfcx", "dawson"]


@dataclass(frozen=True)
class AccuracySpec:
    """Relative accuracy targets for the special functions."""

    max_rel_error: float = 1e-12
    max_rel_error_tail: float = 1e-10
    tail_start: float = 6.0

    def __post_init__(self):
        if not (self.max_rel_error > 0 and self.max_rel_error_tail > 0):
            raise ValueError("accuracy targets must be positive")

    def tolerance(self, x):
        """Relative tolerance applicable at ``x`` (elementwise)."""
        x = np.asarray(x, dtype=float)
        return np.where(np.abs(x) <= self.tail_start,
                        self.max_rel_error, self.max_rel_error_tail)


def _checked(name, x):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: argument must be finite")
    return arr


def _out(arr, y):
    return float(y) if arr.ndim == 0 else y


def erf(x):
    """Gauss error function ``2/sqrt(pi) * int_0^x exp(-t^2) dt``."""
    arr = _checked("erf", x)
    return _out(arr, _sp.erf(arr))


def erfcx(x):
    """Scaled complementary error function ``exp(x^2) * erfc(x)``.

    Strictly positive and decreasing; behaves like ``1 / (x sqrt(pi))`` for
    large positive ``x`` and like ``2 exp(x^2)`` for large negative ``x``
    (overflows to ``inf`` below about ``-26.6``).
    """
    arr = _checked("erfcx", x)
    return _out(arr, _sp.erfcx(arr))


def dawson(x):
    """Dawson's integral ``D(x) = exp(-x^2) * int_0^x exp(t^2) dt``."""
    arr = _checked("dawson", x)
    return _out(arr, _sp.dawsn(arr))
