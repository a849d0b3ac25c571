"""Backstepping kernels, Volterra transforms and kernel-norm bounds.

Closed forms (``z = sqrt(c (x^2 - y^2))``)::

    k^a(x, y) = -c x I_1(z)/z        0 <= y <= x <= 1   (controller / one-sensor observer)
    l^a(x, y) = -c x J_1(z)/z        0 <= y <= x <= 1   (its inverse)
    k^b(x, y) = k^a(y, x)            0 <= x <= y <= 1   (two-sensor observer)

``k^b`` solves ``k_xx - k_yy + c k = 0``, ``k_x(0, y) = 0``, ``k(x, x) = -c x/2``;
swapping the arguments turns this into exactly the problem solved by
``k^a``, so the closed form carries over.  :func:`solve_kernel_numeric` is
an independent check that never touches a Bessel series.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, linalg

from . import specfun
from .model import Grid

__all__ = [
    "LOWER",
    "UPPER",
    "KernelTable",
    "GoursatConvergenceError",
    "kernel_ka",
    "kernel_la",
    "kernel_ka_dx",
    "kernel_kb",
    "kernel_kb_dy",
    "kernel_lb",
    "table_ka",
    "table_la",
    "table_kb",
    "table_lb",
    "solve_kernel_numeric",
    "volterra_lower",
    "volterra_lower_inverse",
    "volterra_upper",
    "volterra_upper_inverse",
    "volterra_solve",
    "kernel_l2_norm",
    "bound_norm_ka",
    "bound_norm_la",
    "bound_norm_kax1",
    "write_kernel_csv",
]

LOWER = "lower"
UPPER = "upper"
_DOMAIN_TOL = 1e-12


def _prep(x, y, gain, upper):
    scalar = np.ndim(x) == 0 and np.ndim(y) == 0
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    if gain < 0:
        raise ValueError(f"kernel gain must be nonnegative, got {gain}")
    lo, hi = (x, y) if upper else (y, x)
    if np.any(lo > hi + _DOMAIN_TOL) or np.any(lo < -_DOMAIN_TOL) or np.any(hi > 1 + _DOMAIN_TOL):
        tri = "0 <= x <= y <= 1" if upper else "0 <= y <= x <= 1"
        raise ValueError(f"kernel evaluated outside its triangle {tri}")
    z = np.sqrt(gain * np.clip(hi * hi - lo * lo, 0.0, None))
    return scalar, hi, z


def _ret(val, scalar):
    return float(val) if scalar else val


def kernel_ka(x, y, c2):
    """Controller kernel ``-c2 x I_1(z)/z`` on ``0 <= y <= x <= 1``."""
    scalar, xx, z = _prep(x, y, c2, upper=False)
    return _ret(-c2 * xx * specfun.ratio_i1(z), scalar)


def kernel_la(x, y, c2):
    """Inverse controller kernel ``-c2 x J_1(z)/z`` on ``0 <= y <= x <= 1``."""
    scalar, xx, z = _prep(x, y, c2, upper=False)
    return _ret(-c2 * xx * specfun.ratio_j1(z), scalar)


def kernel_ka_dx(x, y, c2):
    r"""x-derivative of :func:`kernel_ka`.

    Differentiating ``-c x I_1(z)/z`` with ``dz/dx = c x / z`` and
    ``(I_1(z)/z)' = I_2(z)/z`` gives

    .. math:: k_x = -c\,\frac{I_1(z)}{z} - c^2 x^2 \frac{I_2(z)}{z^2},

    whose diagonal limit is ``-c/2 - c^2 x^2/8``.
    """
    scalar, xx, z = _prep(x, y, c2, upper=False)
    val = -c2 * specfun.ratio_i1(z) - c2 * c2 * xx * xx * specfun.ratio_i2(z)
    return _ret(val, scalar)


def kernel_kb(x, y, o2):
    """Two-sensor observer kernel on ``0 <= x <= y <= 1``; equals ``k^a(y, x)``."""
    scalar, yy, z = _prep(x, y, o2, upper=True)
    return _ret(-o2 * yy * specfun.ratio_i1(z), scalar)


def kernel_kb_dy(x, y, o2):
    """y-derivative of :func:`kernel_kb`, i.e. ``kernel_ka_dx(y, x)``."""
    scalar, yy, z = _prep(x, y, o2, upper=True)
    val = -o2 * specfun.ratio_i1(z) - o2 * o2 * yy * yy * specfun.ratio_i2(z)
    return _ret(val, scalar)


def kernel_lb(x, y, o2):
    """Inverse of the upper transform with kernel ``k^b``: ``l^a(y, x)``.

    ``I - K_upper`` is the L2-adjoint of ``I - K_lower`` built from ``k^a``,
    so its inverse is the adjoint of ``I + L_lower``.
    """
    scalar, yy, z = _prep(x, y, o2, upper=True)
    return _ret(-o2 * yy * specfun.ratio_j1(z), scalar)


def _trapezoid_rows(grid, orientation):
    """Per-row trapezoid weights for integrals over ``[0, x_i]`` or ``[x_i, 1]``."""
    n = grid.size
    h = grid.h
    i, j = np.indices((n, n))
    if orientation == LOWER:
        w = np.where(j < i, h, 0.0)
        w[j == 0] = 0.5 * h
        w[j > i] = 0.0
        w[(j == i) & (i > 0)] = 0.5 * h
        w[0, 0] = 0.0
    else:
        w = np.where(j > i, h, 0.0)
        w[j == n - 1] = 0.5 * h
        w[j < i] = 0.0
        w[(j == i) & (i < n - 1)] = 0.5 * h
        w[n - 1, n - 1] = 0.0
    return w


def _triangle_mask(grid, orientation):
    i, j = np.indices((grid.size, grid.size))
    return j <= i if orientation == LOWER else j >= i


@dataclass(frozen=True, eq=False)
class KernelTable:
    """A kernel sampled at grid nodes on one triangle (zero off the triangle).

    ``values[i, j]`` holds ``k(x_i, x_j)``.  The trapezoid quadrature matrix
    ``values * weights`` is built once so that transforms are mat-vecs.
    """

    grid: Grid
    orientation: str
    values: np.ndarray
    gain: float
    name: str = "kernel"
    quadrature: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.orientation not in (LOWER, UPPER):
            raise ValueError(f"orientation must be {LOWER!r} or {UPPER!r}")
        vals = np.array(self.values, dtype=float)
        if vals.shape != (self.grid.size, self.grid.size):
            raise ValueError("kernel values do not match the grid")
        if not np.all(np.isfinite(vals)):
            raise ValueError("kernel values must be finite")
        vals[~_triangle_mask(self.grid, self.orientation)] = 0.0
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        q = vals * _trapezoid_rows(self.grid, self.orientation)
        q.setflags(write=False)
        object.__setattr__(self, "quadrature", q)

    @property
    def diagonal(self):
        return np.diag(self.values).copy()

    def triangle_points(self):
        """Yield ``(i, j)`` row-major over the triangle."""
        n = self.grid.size
        for i in range(n):
            cols = range(0, i + 1) if self.orientation == LOWER else range(i, n)
            for j in cols:
                yield i, j


def _tabulate(func, gain, grid, orientation, name):
    xx, yy = np.meshgrid(grid.x, grid.x, indexing="ij")
    mask = _triangle_mask(grid, orientation)
    vals = np.zeros_like(xx)
    vals[mask] = func(xx[mask], yy[mask], gain)
    return KernelTable(grid, orientation, vals, float(gain), name)


def table_ka(c2, grid):
    return _tabulate(kernel_ka, c2, grid, LOWER, "k^a")


def table_la(c2, grid):
    return _tabulate(kernel_la, c2, grid, LOWER, "l^a")


def table_kb(o2, grid):
    return _tabulate(kernel_kb, o2, grid, UPPER, "k^b")


def table_lb(o2, grid):
    return _tabulate(kernel_lb, o2, grid, UPPER, "l^b")


# ---------------------------------------------------------------------------
# Goursat problem by successive approximation


class GoursatConvergenceError(ArithmeticError):
    pass


def _goursat_characteristic(reaction, slope, n, tol, max_iter):
    r"""Solve ``4 G_{xi eta} = reaction * G`` on ``0 <= eta <= xi``, ``xi + eta <= 2``.

    Data: ``G(xi, 0) = slope * xi / 2`` and ``G_xi = G_eta`` on ``xi = eta``.
    Integrating twice gives the fixed-point form

        G = slope/2 (xi + eta) + reaction/2 int_0^eta int_0^tau G(tau, s) ds dtau
                             + reaction/4 int_eta^xi int_0^eta G(tau, s) ds dtau,

    iterated with cumulative trapezoid sums on a mesh of spacing ``1/n``.
    Returns ``G[a, b]`` at ``xi = a/n``, ``eta = b/n`` (zero off the domain).
    """
    s = 1.0 / n
    a = np.arange(2 * n + 1)[:, None]
    b = np.arange(n + 1)[None, :]
    valid = (b <= a) & (a + b <= 2 * n)
    base = np.where(valid, 0.5 * slope * (a + b) * s, 0.0)
    diag = np.arange(n + 1)
    g = base.copy()
    for it in range(1, max_iter + 1):
        h_inner = integrate.cumulative_trapezoid(g, dx=s, axis=1, initial=0.0)
        c_outer = integrate.cumulative_trapezoid(h_inner, dx=s, axis=0, initial=0.0)
        band = c_outer - c_outer[diag, diag][None, :]
        corner = integrate.cumulative_trapezoid(h_inner[diag, diag], dx=s, initial=0.0)
        g_new = np.where(
            valid, base + 0.5 * reaction * corner[None, :] + 0.25 * reaction * band, 0.0
        )
        diff = float(np.max(np.abs(g_new - g)))
        g = g_new
        if diff < tol:
            return g, it
    raise GoursatConvergenceError(
        f"successive approximation did not converge in {max_iter} iterations "
        f"(last update {diff:.3e})"
    )


def solve_kernel_numeric(
    gain, grid, orientation=LOWER, inverse=False, tol=1e-12, max_iter=50, extrapolate=True
):
    """Tabulate a backstepping kernel by solving its Goursat problem directly.

    Lower orientation solves ``k_yy - k_xx + c k = 0`` (or, with
    ``inverse=True``, ``l_xx - l_yy + c l = 0``) on ``0 <= y <= x`` with
    ``k_y(x, 0) = 0`` and ``k(x, x) = -c x/2``.  Upper orientation solves the
    observer problem ``k_xx - k_yy + c k = 0`` on ``0 <= x <= y`` with
    ``k_x(0, y) = 0`` and the same diagonal.

    In characteristic coordinates (``xi = x + y, eta = x - y`` for lower,
    ``xi = y + x, eta = y - x`` for upper) both become the same integral
    equation; grid nodes land exactly on characteristic mesh nodes so no
    interpolation is needed.  With ``extrapolate`` the problem is also solved
    at half the spacing and the two combined by Richardson extrapolation,
    cancelling the ``O(h^2)`` trapezoid error.

    Raises
    ------
    GoursatConvergenceError
        If successive iterates still differ by ``tol`` after ``max_iter``.
    """
    if orientation not in (LOWER, UPPER):
        raise ValueError(f"orientation must be {LOWER!r} or {UPPER!r}")
    # lower: k_xx - k_yy = c k  ->  4 G_xi_eta = c G   (inverse kernel: -c)
    # upper: with xi = x + y, eta = y - x, k_xx - k_yy = -4 G_xi_eta, so the
    #        observer equation k_xx - k_yy + c k = 0 is again 4 G_xi_eta = c G
    reaction = -gain if inverse else gain
    slope = -0.5 * gain
    n = grid.n_intervals
    i, j = np.indices((grid.size, grid.size))
    mask = _triangle_mask(grid, orientation)
    eta_idx = np.abs(i - j)

    def sample(refine):
        g, _ = _goursat_characteristic(reaction, slope, refine * n, tol, max_iter)
        return np.where(mask, g[refine * (i + j), refine * eta_idx], 0.0)

    vals = sample(1)
    if extrapolate:
        vals = (4.0 * sample(2) - vals) / 3.0
    name = ("l" if inverse else "k") + ("^a" if orientation == LOWER else "^b") + " (numeric)"
    return KernelTable(grid, orientation, vals, float(gain), name)


# ---------------------------------------------------------------------------
# Volterra transforms


def _check_pair(kernel, f, orientation):
    if kernel.orientation != orientation:
        raise ValueError(f"expected a {orientation}-triangle kernel, got {kernel.orientation}")
    return kernel.grid.check(f, "grid function")


def volterra_lower(kernel, f):
    """``g(x) = f(x) - int_0^x k(x, y) f(y) dy`` by trapezoid quadrature."""
    f = _check_pair(kernel, f, LOWER)
    return f - kernel.quadrature @ f


def volterra_lower_inverse(kernel_l, g):
    """``f(x) = g(x) + int_0^x l(x, y) g(y) dy``."""
    g = _check_pair(kernel_l, g, LOWER)
    return g + kernel_l.quadrature @ g


def volterra_upper(kernel, f):
    """``g(x) = f(x) - int_x^1 k(x, y) f(y) dy``."""
    f = _check_pair(kernel, f, UPPER)
    return f - kernel.quadrature @ f


def volterra_upper_inverse(kernel_l, g):
    """``f(x) = g(x) + int_x^1 l(x, y) g(y) dy``."""
    g = _check_pair(kernel_l, g, UPPER)
    return g + kernel_l.quadrature @ g


def volterra_solve(kernel, g):
    """Invert ``I - K`` exactly at the discrete level (triangular solve)."""
    g = kernel.grid.check(g, "grid function")
    mat = np.eye(kernel.grid.size) - kernel.quadrature
    return linalg.solve_triangular(mat, g, lower=kernel.orientation == LOWER)


# ---------------------------------------------------------------------------
# Norms and their closed-form bounds


def kernel_l2_norm(kernel):
    """Trapezoid approximation of ``(int int_triangle k^2)^{1/2}``."""
    rows = (kernel.values**2 * _trapezoid_rows(kernel.grid, kernel.orientation)).sum(axis=1)
    return math.sqrt(float(np.dot(kernel.grid.weights, rows)))


def bound_norm_ka(c2):
    """Closed-form bound ``sqrt(c pi/8) * sqrt(erfi(a) erf(a))``, ``a = sqrt(c/2)``."""
    if c2 <= 0:
        raise ValueError(f"c2 must be positive, got {c2}")
    a = math.sqrt(0.5 * c2)
    return math.sqrt(c2 * math.pi / 8.0) * math.sqrt(specfun.erfi(a) * specfun.erf(a))


def bound_norm_la(c2):
    """Same closed form as :func:`bound_norm_ka`; ``|J_1| <= I_1`` termwise."""
    return bound_norm_ka(c2)


def bound_norm_kax1(o2):
    """Bound on ``||k^a_x(1, .)||``: ``o/2 (1 + o/2) e^{o/4} (sqrt(pi/(2o)) erf(sqrt(o/2)))^{1/2}``."""
    if o2 <= 0:
        raise ValueError(f"o2 must be positive, got {o2}")
    tail = math.sqrt(math.pi / (2.0 * o2)) * specfun.erf(math.sqrt(0.5 * o2))
    return 0.5 * o2 * (1.0 + 0.5 * o2) * math.exp(0.25 * o2) * math.sqrt(tail)


def write_kernel_csv(kernel, stream):
    """Write ``x,y,value`` rows, row-major over the kernel's triangle."""
    x = kernel.grid.x
    stream.write("x,y,value\n")
    for i, j in kernel.triangle_points():
        # adding 0.0 turns a negative zero into +0 so the text is sign-stable
        stream.write(f"{x[i]:.17g},{x[j]:.17g},{kernel.values[i, j] + 0.0:.17g}\n")
