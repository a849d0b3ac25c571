"""Ascending-series evaluation of the special functions used by the kernels.

Only the small set needed here is covered: modified Bessel ``I_0, I_1, I_2``,
Bessel ``J_1``, ``erf`` and ``erfi``, plus the ratio forms ``I_1(z)/z``,
``J_1(z)/z`` and ``I_2(z)/z**2`` that appear in the backstepping kernels.

Every function accepts a scalar or an array and returns the same shape
(a Python float for scalar input). Arguments stay moderate (``O(sqrt(c))``
for design gains ``c`` of order one to ten), where the ascending series is
accurate to double precision; no asymptotic expansions are attempted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SeriesControl",
    "SeriesConvergenceError",
    "DEFAULT_CONTROL",
    "RATIO_CROSSOVER",
    "bessel_i",
    "bessel_j1",
    "erf",
    "erfi",
    "ratio_i1",
    "ratio_j1",
    "ratio_i2",
]


class SeriesConvergenceError(ArithmeticError):
    """Raised when a series has not converged within ``max_terms``."""

    def __init__(self, name, last_term, max_terms):
        self.name = name
        self.last_term = float(last_term)
        self.max_terms = max_terms
        super().__init__(
            f"{name}: series not converged after {max_terms} terms "
            f"(last term magnitude {self.last_term:.3e})"
        )


@dataclass(frozen=True)
class SeriesControl:
    """Truncation settings for the ascending series.

    Summation stops once the next term is below ``rel_tol`` times the
    running sum (element-wise for array input).
    """

    rel_tol: float = 1e-16
    max_terms: int = 200

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise ValueError(f"rel_tol must be positive, got {self.rel_tol}")
        if int(self.max_terms) != self.max_terms or self.max_terms < 1:
            raise ValueError(f"max_terms must be a positive integer, got {self.max_terms}")


DEFAULT_CONTROL = SeriesControl()

# below this argument the ratio forms are summed directly instead of divided
RATIO_CROSSOVER = 1e-4


def _as_array(x):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("argument must be finite")
    return arr


def _out(arr, scalar):
    return float(arr) if scalar else arr


def _power_series(first, ratio, name, control):
    """Sum ``sum_m t_m`` with ``t_0 = first`` and ``t_m = t_{m-1} * ratio(m)``.

    ``first`` is an array; ``ratio(m)`` returns an array of the same shape.
    """
    total = first.copy()
    term = first.copy()
    for m in range(1, control.max_terms):
        term = term * ratio(m)
        total = total + term
        if np.all(np.abs(term) <= control.rel_tol * np.abs(total)):
            return total
    bad = np.abs(term) > control.rel_tol * np.abs(total)
    raise SeriesConvergenceError(name, np.max(np.abs(term[bad])), control.max_terms)


def bessel_i(order, x, control=DEFAULT_CONTROL):
    r"""Modified Bessel function of the first kind, ``order`` in {0, 1, 2}.

    Evaluates :math:`I_n(x) = \sum_m (x/2)^{2m+n} / (m!\,(m+n)!)` for
    ``x >= 0``.
    """
    if order not in (0, 1, 2):
        raise ValueError(f"order must be 0, 1 or 2, got {order}")
    scalar = np.ndim(x) == 0
    x = np.atleast_1d(_as_array(x))
    if np.any(x < 0):
        raise ValueError("bessel_i requires x >= 0")
    q = 0.25 * x * x
    first = (0.5 * x) ** order / math.factorial(order)
    val = _power_series(first, lambda m: q / (m * (m + order)), f"I_{order}", control)
    return _out(val if not scalar else val[0], scalar)


def bessel_j1(x, control=DEFAULT_CONTROL):
    r"""Bessel function :math:`J_1(x) = \sum_m (-1)^m (x/2)^{2m+1}/(m!\,(m+1)!)`."""
    scalar = np.ndim(x) == 0
    x = np.atleast_1d(_as_array(x))
    q = -0.25 * x * x
    val = _power_series(0.5 * x, lambda m: q / (m * (m + 1)), "J_1", control)
    return _out(val if not scalar else val[0], scalar)


def _erf_series(x, sign, name, control):
    # 2/sqrt(pi) * sum_m sign^m x^(2m+1) / (m! (2m+1)), summed as
    # t_m = sign^m x^(2m+1)/m!, term_m = t_m / (2m+1)
    scalar = np.ndim(x) == 0
    x = np.atleast_1d(_as_array(x))
    q = sign * x * x
    t = x.copy()
    total = x.copy()
    for m in range(1, control.max_terms):
        t = t * q / m
        term = t / (2 * m + 1)
        total = total + term
        if np.all(np.abs(term) <= control.rel_tol * np.abs(total)):
            break
    else:
        bad = np.abs(term) > control.rel_tol * np.abs(total)
        raise SeriesConvergenceError(name, np.max(np.abs(term[bad])), control.max_terms)
    val = (2.0 / math.sqrt(math.pi)) * total
    return _out(val if not scalar else val[0], scalar)


def erf(x, control=DEFAULT_CONTROL):
    """Error function by its Maclaurin series."""
    return _erf_series(x, -1.0, "erf", control)


def erfi(x, control=DEFAULT_CONTROL):
    """Imaginary error function ``-i erf(i x)`` by its Maclaurin series."""
    return _erf_series(x, 1.0, "erfi", control)


def _ratio(z, order, sign, name, control):
    # sum_m sign^m (z/2)^(2m) / (m! (m+order)!) / 2^order  ==  f_order(z) / z^order
    scalar = np.ndim(z) == 0
    z = np.atleast_1d(_as_array(z))
    if np.any(z < 0):
        raise ValueError(f"{name} requires z >= 0")
    out = np.empty_like(z)
    small = z < RATIO_CROSSOVER
    if np.any(small):
        zs = z[small]
        q = sign * 0.25 * zs * zs
        first = np.full_like(zs, 1.0 / (2**order * math.factorial(order)))
        out[small] = _power_series(first, lambda m: q / (m * (m + order)), name, control)
    if np.any(~small):
        zl = z[~small]
        if order == 2:
            out[~small] = bessel_i(2, zl, control) / (zl * zl)
        elif sign > 0:
            out[~small] = bessel_i(1, zl, control) / zl
        else:
            out[~small] = bessel_j1(zl, control) / zl
    return _out(out if not scalar else out[0], scalar)


def ratio_i1(z, control=DEFAULT_CONTROL):
    """``I_1(z)/z`` with the removable singularity filled in (value 1/2 at 0)."""
    return _ratio(z, 1, 1.0, "I_1(z)/z", control)


def ratio_j1(z, control=DEFAULT_CONTROL):
    """``J_1(z)/z``; equals 1/2 at ``z = 0``."""
    return _ratio(z, 1, -1.0, "J_1(z)/z", control)


def ratio_i2(z, control=DEFAULT_CONTROL):
    """``I_2(z)/z**2``; equals 1/8 at ``z = 0``."""
    return _ratio(z, 2, 1.0, "I_2(z)/z^2", control)
