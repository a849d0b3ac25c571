"""Stability-condition evaluators, decay-rate fits and trajectory checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels, specfun
from .model import AdmissibilityError, Grid, SystemParams

__all__ = [
    "ConditionReport",
    "DecayEstimate",
    "TrajectoryCheck",
    "SweepTable",
    "kernel_norms",
    "check_controller_condition",
    "target_decay_bound",
    "check_observer2_condition",
    "check_observer1_condition",
    "fit_decay_rate",
    "lyapunov_check",
    "elliptic_bound_check",
    "sweep_conditions",
]

NORM_GRID = 256


@dataclass(frozen=True)
class ConditionReport:
    """Outcome of a sufficient condition ``lhs > rhs``."""

    name: str
    lhs: float
    rhs: float
    admissible: bool = True

    @property
    def margin(self):
        return self.lhs - self.rhs

    @property
    def satisfied(self):
        return self.lhs > self.rhs

    def as_dict(self):
        return {
            "name": self.name,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "margin": self.margin,
            "satisfied": self.satisfied,
            "admissible": self.admissible,
        }


@dataclass(frozen=True)
class DecayEstimate:
    fitted_rate: float
    window: tuple[float, float]
    r_squared: float

    def as_dict(self):
        return {
            "fitted_rate": self.fitted_rate,
            "window": list(self.window),
            "r_squared": self.r_squared,
        }


@dataclass(frozen=True)
class TrajectoryCheck:
    """Per-record verdict of an inequality along a trajectory."""

    name: str
    ok: bool
    violations: tuple[int, ...]
    worst_ratio: float
    constants: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "name": self.name,
            "ok": self.ok,
            "violations": list(self.violations),
            "worst_ratio": self.worst_ratio,
            **self.constants,
        }


def _require_positive_gamma(params):
    if params.gamma <= 0:
        raise ValueError(f"this condition needs gamma > 0, got gamma = {params.gamma}")


def kernel_norms(gain, grid=None):
    """Quadrature norms ``||k^a||``, ``||l^a||`` and ``||k^a_x(1, .)||``."""
    grid = grid or Grid(NORM_GRID)
    ka = kernels.table_ka(gain, grid)
    la = kernels.table_la(gain, grid)
    kx1 = kernels.kernel_ka_dx(np.ones_like(grid.x), grid.x, gain)
    return kernels.kernel_l2_norm(ka), kernels.kernel_l2_norm(la), grid.norm(kx1)


def _bracket_bound(gain, prefactor):
    a = math.sqrt(0.5 * gain)
    return 1.0 + math.sqrt(gain * math.pi * prefactor) * math.sqrt(
        specfun.erfi(a) * specfun.erf(a)
    )


def check_controller_condition(c2, params, mode="bounds", grid=None):
    """Gain condition for the state-feedback law.

    ``mode="bounds"`` checks ``c2 + rho > |ab|/gamma (1 + B(c2))^2`` with the
    closed-form kernel-norm bound ``B``; ``mode="quadrature"`` uses
    ``(1 + ||l^a||)(1 + ||k^a||)`` computed on ``grid``.
    """
    _require_positive_gamma(params)
    if c2 <= 0:
        raise ValueError(f"c2 must be positive, got {c2}")
    coupling = abs(params.alpha * params.beta) / params.gamma
    if mode == "bounds":
        rhs = coupling * _bracket_bound(c2, 1.0 / 8.0) ** 2
    elif mode == "quadrature":
        nk, nl, _ = kernel_norms(c2, grid)
        rhs = coupling * (1.0 + nl) * (1.0 + nk)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return ConditionReport(f"controller[{mode}]", c2 + params.rho, rhs)


def target_decay_bound(c2, params, mode="bounds", grid=None):
    """Guaranteed decay rate ``c3 = lhs - rhs`` of the controller condition.

    May be nonpositive, in which case no decay is guaranteed.
    """
    return check_controller_condition(c2, params, mode, grid).margin


def check_observer2_condition(o2, params):
    """Two-measurement observer: ``(o2 + rho)(o2 + gamma) > alpha*beta``.

    ``admissible`` records whether ``o2 + gamma`` avoids ``-(n pi)^2``.
    """
    if o2 <= 0:
        raise ValueError(f"o2 must be positive, got {o2}")
    shifted = o2 + params.gamma
    try:
        SystemParams(params.rho, params.alpha, params.beta, shifted, allow_uncoupled=True)
        admissible = True
    except AdmissibilityError:
        admissible = False
    lhs = (o2 + params.rho) * shifted
    return ConditionReport("observer_two_measurements", lhs, params.alpha * params.beta, admissible)


def check_observer1_condition(o2, params, grid=None):
    """Single-measurement observer conditions, three variants.

    Returns a dict with

    ``theorem_quadrature``
        ``o2 + rho > |a||b|/gamma (1+||k||)(1+||l||) + ((1+||l||)^2 ||k_x(1,.)||^2 + 2)/2``
        with quadrature norms.
    ``theorem_bounds``
        the same inequality with every norm replaced by its closed-form bound.
    ``corollary``
        ``o2 + rho > (|a||b|/gamma + B_x^2/2) [1 + sqrt(o2 pi/2) (erfi erf)^{1/2}]^2 + 1``
        the simplified closed-form criterion, ``B_x`` the bound on ``||k_x(1,.)||``.
        Its constants do not follow from the norm-based inequality (note the
        ``pi/2`` in place of ``pi/8``), so it is evaluated unchanged and
        reported separately rather than reconciled.
    """
    _require_positive_gamma(params)
    if o2 <= 0:
        raise ValueError(f"o2 must be positive, got {o2}")
    coupling = abs(params.alpha) * abs(params.beta) / params.gamma
    lhs = o2 + params.rho

    def theorem_rhs(nk, nl, nkx):
        return coupling * (1 + nk) * (1 + nl) + ((1 + nl) ** 2 * nkx**2 + 2) / 2

    nk, nl, nkx = kernel_norms(o2, grid)
    bk = kernels.bound_norm_ka(o2)
    bx = kernels.bound_norm_kax1(o2)
    corollary_rhs = (coupling + 0.5 * bx**2) * _bracket_bound(o2, 0.5) ** 2 + 1.0
    return {
        "theorem_quadrature": ConditionReport(
            "observer_one_measurement[quadrature]", lhs, theorem_rhs(nk, nl, nkx)
        ),
        "theorem_bounds": ConditionReport(
            "observer_one_measurement[bounds]", lhs, theorem_rhs(bk, bk, bx)
        ),
        "corollary": ConditionReport("observer_one_measurement[corollary]", lhs, corollary_rhs),
    }


def fit_decay_rate(times, norms, window=None):
    """Least-squares fit of ``log(norm) = a - rate * t`` over ``window``.

    The default window is the last half of the horizon.  A negative rate
    means growth.
    """
    times = np.asarray(times, dtype=float)
    norms = np.asarray(norms, dtype=float)
    if window is None:
        window = (times[0] + 0.5 * (times[-1] - times[0]), times[-1])
    t0, t1 = window
    if t0 < times[0] - 1e-12 or t1 > times[-1] + 1e-12 or t1 <= t0:
        raise ValueError(f"window {window} not inside [{times[0]}, {times[-1]}]")
    sel = (times >= t0 - 1e-12) & (times <= t1 + 1e-12)
    if sel.sum() < 2:
        raise ValueError("need at least two samples in the fit window")
    if np.any(norms[sel] <= 0):
        raise ValueError("norms must be positive inside the fit window")
    t = times[sel]
    y = np.log(norms[sel])
    slope, intercept = np.polyfit(t, y, 1)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum((y - (slope * t + intercept)) ** 2))
    r2 = 1.0 if ss_tot <= 1e-300 else max(0.0, min(1.0, 1.0 - ss_res / ss_tot))
    return DecayEstimate(float(-slope), (float(t0), float(t1)), r2)


def lyapunov_check(series, c2, params, c3=None, tol=0.05):
    """Check ``V(t) <= V(0) exp(-2 c3 t) (1 + tol)`` with ``V = ||w~||^2/2``.

    ``w~`` is the backstepping transform of each recorded ``w``; ``c3``
    defaults to the bound-based decay rate.
    """
    if c3 is None:
        c3 = target_decay_bound(c2, params)
    grid = series.grid
    ka = kernels.table_ka(c2, grid)
    v = np.array([0.5 * grid.norm(kernels.volterra_lower(ka, w)) ** 2 for w in series.w])
    envelope = v[0] * np.exp(-2.0 * c3 * series.times) * (1.0 + tol)
    bad = np.nonzero(v > envelope)[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(envelope > 0, v / envelope, np.where(v > 0, np.inf, 0.0))
    return TrajectoryCheck(
        "lyapunov_envelope",
        bad.size == 0,
        tuple(int(i) for i in bad),
        float(np.max(ratio)),
        {"c3": float(c3), "tol": tol},
    )


def elliptic_bound_check(series, c2, params, rtol=1e-12):
    """Check ``||v|| <= |beta|/gamma (1 + ||l^a||) ||w~||`` at every record."""
    _require_positive_gamma(params)
    grid = series.grid
    ka = kernels.table_ka(c2, grid)
    nl = kernels.kernel_l2_norm(kernels.table_la(c2, grid))
    factor = abs(params.beta) / params.gamma * (1.0 + nl)
    lhs = np.array([grid.norm(v) for v in series.v])
    rhs = factor * np.array([grid.norm(kernels.volterra_lower(ka, w)) for w in series.w])
    bad = np.nonzero(lhs > rhs * (1 + rtol) + 1e-300)[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > 0, lhs / rhs, np.where(lhs > 0, np.inf, 0.0))
    return TrajectoryCheck(
        "elliptic_bound",
        bad.size == 0,
        tuple(int(i) for i in bad),
        float(np.max(ratio)),
        {"factor": float(factor), "norm_l": float(nl)},
    )


@dataclass
class SweepTable:
    """Rows of ``param, rhs, lhs per rho, satisfied per rho``."""

    kind: str
    rhos: list
    values: np.ndarray
    rhs: np.ndarray
    lhs: np.ndarray  # shape (len(values), len(rhos))

    @property
    def satisfied(self):
        return self.lhs > self.rhs[:, None]

    @property
    def header(self):
        return (
            ["param", "rhs"]
            + [f"lhs_rho_{r:g}" for r in self.rhos]
            + [f"satisfied_{r:g}" for r in self.rhos]
        )

    def rows(self):
        sat = self.satisfied
        for k, val in enumerate(self.values):
            yield (
                [float(val), float(self.rhs[k])]
                + [float(x) for x in self.lhs[k]]
                + [bool(s) for s in sat[k]]
            )

    def write_csv(self, stream):
        stream.write(",".join(self.header) + "\n")
        for row in self.rows():
            cells = [str(int(c)) if isinstance(c, bool) else f"{c:.17g}" for c in row]
            stream.write(",".join(cells) + "\n")


def sweep_conditions(kind, params, rhos, values):
    """Evaluate a gain condition over a range of gains for several ``rho``.

    ``kind="controller"`` uses the bound form of the controller condition
    (``lhs = c2 + rho``); ``kind="observer-one"`` uses the single-measurement
    corollary (``lhs = o2 + rho``).  Both right-hand sides are independent of
    ``rho``, so each ``rho`` gives a straight line against one curve.
    """
    values = np.asarray(values, dtype=float)
    rhos = [float(r) for r in rhos]
    rhs = np.empty_like(values)
    for k, val in enumerate(values):
        if kind == "controller":
            rhs[k] = check_controller_condition(val, params).rhs
        elif kind == "observer-one":
            rhs[k] = _observer_one_corollary_rhs(val, params)
        else:
            raise ValueError(f"unknown sweep kind {kind!r}")
    lhs = values[:, None] + np.asarray(rhos)[None, :]
    return SweepTable(kind, rhos, values, rhs, lhs)


def _observer_one_corollary_rhs(o2, params):
    # same expression as check_observer1_condition()["corollary"], without the
    # quadrature norms that function also computes
    _require_positive_gamma(params)
    coupling = abs(params.alpha) * abs(params.beta) / params.gamma
    bx = kernels.bound_norm_kax1(o2)
    return (coupling + 0.5 * bx**2) * _bracket_bound(o2, 0.5) ** 2 + 1.0
