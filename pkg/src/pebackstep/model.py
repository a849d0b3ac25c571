"""Spatial discretization of the coupled parabolic-elliptic operator.

The plant is

    w_t = w_xx - rho*w + alpha*v,     0 = v_xx - gamma*v + beta*w,
    w_x(0) = 0, w_x(1) = u(t),        v_x(0) = v_x(1) = 0,

on ``[0, 1]``.  Second derivatives use the standard three-point stencil with
ghost-point elimination of the Neumann conditions, so the cosine modes
``cos(n*pi*x_i)`` are exact discrete eigenvectors.  Inner products and norms
use trapezoid weights, under which the discrete Laplacian is self-adjoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

__all__ = [
    "AdmissibilityError",
    "SystemParams",
    "Grid",
    "CoupledState",
    "DiscreteOperators",
    "StabilityReport",
    "elliptic_solve",
    "eigenvalue_analytic",
    "is_open_loop_stable",
    "rayleigh_check",
]

ADMISSIBILITY_TOL = 1e-9


class AdmissibilityError(ValueError):
    """The elliptic operator ``gamma*I - d^2/dx^2`` is (nearly) singular."""

    def __init__(self, message, mode):
        self.mode = mode
        super().__init__(message)


def _nearest_resonance(gamma):
    """Index ``n`` minimising ``|gamma + (n pi)^2|``."""
    if gamma >= 0:
        return 0
    return int(round(math.sqrt(-gamma) / math.pi))


@dataclass(frozen=True)
class SystemParams:
    """PDE coefficients ``rho, alpha, beta, gamma``.

    ``alpha`` and ``beta`` must be nonzero unless ``allow_uncoupled`` is set
    (handy for checking limits such as the decoupled heat equation).
    ``gamma`` must avoid the Neumann resonances ``-(n pi)^2``.
    """

    rho: float
    alpha: float
    beta: float
    gamma: float
    allow_uncoupled: bool = field(default=False, kw_only=True, compare=False)

    def __post_init__(self):
        for name in ("rho", "alpha", "beta", "gamma"):
            val = getattr(self, name)
            if not math.isfinite(val):
                raise ValueError(f"{name} must be finite, got {val}")
            object.__setattr__(self, name, float(val))
        if not self.allow_uncoupled:
            if self.alpha == 0:
                raise ValueError("alpha must be nonzero")
            if self.beta == 0:
                raise ValueError("beta must be nonzero")
        n = _nearest_resonance(self.gamma)
        if abs(self.gamma + (n * math.pi) ** 2) <= ADMISSIBILITY_TOL:
            raise AdmissibilityError(
                f"gamma = {self.gamma!r} is resonant with Neumann mode n={n} "
                f"(gamma = -(n*pi)^2 = {-(n * math.pi) ** 2!r})",
                n,
            )

    def as_dict(self):
        return {"rho": self.rho, "alpha": self.alpha, "beta": self.beta, "gamma": self.gamma}


class Grid:
    """Uniform mesh ``x_i = i/N`` on ``[0, 1]`` with trapezoid weights."""

    def __init__(self, n_intervals):
        if int(n_intervals) != n_intervals or n_intervals < 8:
            raise ValueError(f"n_intervals must be an integer >= 8, got {n_intervals}")
        self.n_intervals = int(n_intervals)
        self.h = 1.0 / self.n_intervals
        self.x = np.linspace(0.0, 1.0, self.n_intervals + 1)
        w = np.full(self.n_intervals + 1, self.h)
        w[0] = w[-1] = 0.5 * self.h
        self.weights = w
        self.x.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def size(self):
        return self.n_intervals + 1

    def __eq__(self, other):
        return isinstance(other, Grid) and other.n_intervals == self.n_intervals

    def __hash__(self):
        return hash(("Grid", self.n_intervals))

    def __repr__(self):
        return f"Grid(n_intervals={self.n_intervals})"

    def check(self, f, name="f"):
        f = np.asarray(f, dtype=float)
        if f.shape != (self.size,):
            raise ValueError(f"{name} has shape {f.shape}, grid expects ({self.size},)")
        return f

    def inner(self, f, g):
        return float(np.dot(self.weights, np.asarray(f) * np.asarray(g)))

    def norm(self, f):
        """Trapezoid approximation of the L2(0, 1) norm."""
        f = np.asarray(f)
        return float(np.sqrt(np.dot(self.weights, f * f)))

    def integrate(self, f):
        return float(np.dot(self.weights, f))


@dataclass
class CoupledState:
    """Parabolic field ``w`` and elliptic field ``v`` at one time instant."""

    w: np.ndarray
    v: np.ndarray


def _second_difference(grid):
    n = grid.size
    h2 = grid.h**2
    d2 = np.zeros((n, n))
    i = np.arange(1, n - 1)
    d2[i, i - 1] = 1.0
    d2[i, i] = -2.0
    d2[i, i + 1] = 1.0
    # ghost-point closures, homogeneous part
    d2[0, 0], d2[0, 1] = -2.0, 2.0
    d2[-1, -1], d2[-1, -2] = -2.0, 2.0
    return d2 / h2


def discrete_neumann_eigenvalues(grid):
    """Eigenvalues ``-(4/h^2) sin^2(n pi h / 2)`` of the discrete Laplacian."""
    n = np.arange(grid.size)
    return -(4.0 / grid.h**2) * np.sin(0.5 * n * np.pi * grid.h) ** 2


class DiscreteOperators:
    """Cached matrices for one ``(params, grid)`` pair.

    Attributes
    ----------
    d2 : ndarray
        Second difference with homogeneous Neumann ghost closure.
    input_vector : ndarray
        Injection ``(2/h) e_N`` of the boundary flux ``w_x(1) = u``.
    elliptic_lu :
        LU factorization of ``gamma*I - d2``.
    elliptic_inverse : ndarray
        ``(gamma*I - d2)^{-1}`` as a dense matrix.
    a_open : ndarray
        Reduced open-loop generator ``d2 - rho*I + alpha*beta*(gamma*I - d2)^{-1}``.
    """

    def __init__(self, params, grid):
        self.params = params
        self.grid = grid
        n = grid.size
        self.d2 = _second_difference(grid)
        self.input_vector = np.zeros(n)
        self.input_vector[-1] = 2.0 / grid.h

        shifted = params.gamma - discrete_neumann_eigenvalues(grid)
        k = int(np.argmin(np.abs(shifted)))
        scale = max(1.0, abs(params.gamma))
        if abs(shifted[k]) <= ADMISSIBILITY_TOL * scale:
            raise AdmissibilityError(
                f"gamma*I - D2 is singular: gamma = {params.gamma!r} matches discrete "
                f"Neumann mode n={k}",
                k,
            )
        self.elliptic_matrix = params.gamma * np.eye(n) - self.d2
        self.elliptic_lu = linalg.lu_factor(self.elliptic_matrix)
        self.elliptic_inverse = linalg.lu_solve(self.elliptic_lu, np.eye(n))
        self.a_open = (
            self.d2 - params.rho * np.eye(n) + params.alpha * params.beta * self.elliptic_inverse
        )
        self._steppers = {}

    def stepper_cache(self):
        return self._steppers


def elliptic_residual(v, w, params, ops):
    """Normwise backward error of ``(gamma*I - D2) v = beta*w``."""
    r = ops.elliptic_matrix @ v - params.beta * w
    scale = np.linalg.norm(ops.elliptic_matrix, np.inf) * np.max(np.abs(v)) + abs(
        params.beta
    ) * np.max(np.abs(w))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(r)) / scale)


def elliptic_solve(w, params, ops, check=True):
    """Solve ``(gamma*I - D2) v = beta*w`` with Neumann closure at both ends."""
    w = ops.grid.check(w, "w")
    v = linalg.lu_solve(ops.elliptic_lu, params.beta * w)
    if check:
        res = elliptic_residual(v, w, params, ops)
        if res > 1e-10:
            raise ArithmeticError(f"elliptic solve residual {res:.3e} exceeds 1e-10")
    return v


def eigenvalue_analytic(n, params):
    """``lambda_n = -rho + alpha*beta/(gamma + (n pi)^2) - (n pi)^2``."""
    if int(n) != n or n < 0:
        raise ValueError(f"n must be a nonnegative integer, got {n}")
    k2 = (n * math.pi) ** 2
    denom = params.gamma + k2
    if abs(denom) <= ADMISSIBILITY_TOL:
        raise AdmissibilityError(f"mode n={n} is resonant: gamma + (n pi)^2 = 0", n)
    return -params.rho + params.alpha * params.beta / denom - k2


@dataclass(frozen=True)
class StabilityReport:
    stable: bool
    lambda_max: float
    argmax_mode: int
    margin: float | None  # rho - alpha*beta/gamma, only reported for gamma > 0

    def as_dict(self):
        return {
            "stable": self.stable,
            "lambda_max": self.lambda_max,
            "argmax_mode": self.argmax_mode,
            "margin": self.margin,
        }


def is_open_loop_stable(params, n_modes=None):
    """Classify the uncontrolled system by its largest eigenvalue.

    For ``gamma > 0`` and ``alpha*beta >= 0`` the largest eigenvalue is the
    constant mode and stability reduces to ``rho > alpha*beta/gamma``.  In
    general the maximum is taken over enough modes that ``-(n pi)^2``
    dominates the tail.
    """
    if n_modes is None:
        n_modes = int(math.sqrt(abs(params.gamma)) / math.pi) + 20
    lam = [eigenvalue_analytic(n, params) for n in range(n_modes + 1)]
    k = int(np.argmax(lam))
    margin = params.rho - params.alpha * params.beta / params.gamma if params.gamma > 0 else None
    return StabilityReport(lam[k] < 0, float(lam[k]), k, margin)


def rayleigh_check(n, grid, ops):
    """Rayleigh quotient of the reduced operator on ``cos(n pi x_i)``."""
    if n > grid.n_intervals / 4:
        raise ValueError(f"mode n={n} is not resolved on {grid}")
    phi = np.cos(n * np.pi * grid.x)
    return grid.inner(ops.a_open @ phi, phi) / grid.inner(phi, phi)
