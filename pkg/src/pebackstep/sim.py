"""Time integration of the plant, controllers, observers and closed loops.

The elliptic state is eliminated (``v = beta (gamma I - D2)^{-1} w``), which
reduces every configuration to a linear ODE ``z' = M z`` on the stacked
parabolic states (plant, and observer if present).  Feedback and output
injection enter ``M`` directly, so a theta-step with an LU factorization
cached once per run is exact for the linear closed loop.  The single-step
functions (:func:`plant_step` and the observer steps) expose the same
discretization with externally supplied inputs and measurements.
"""

from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import analysis, kernels
from .model import CoupledState, DiscreteOperators, Grid, elliptic_solve

__all__ = [
    "INTEGRATORS",
    "SCENARIO_TAGS",
    "SimConfig",
    "Scenario",
    "GainVector",
    "TimeSeries",
    "initial_profile",
    "controller_gains",
    "observer_two_meas_gains",
    "observer_one_meas_gains",
    "control_state_feedback",
    "control_output_feedback",
    "TwoMeasObserver",
    "OneMeasObserver",
    "plant_step",
    "observer_two_meas_step",
    "observer_one_meas_step",
    "simulate",
]

INTEGRATORS = {"crank-nicolson": 0.5, "backward-euler": 1.0}
SCENARIO_TAGS = (
    "open-loop",
    "state-feedback",
    "observer-two-meas",
    "observer-one-meas",
    "output-feedback",
)


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    t_final: float = 10.0
    record_every: int = 10
    integrator: str = "crank-nicolson"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.t_final >= self.dt:
            raise ValueError(f"t_final must be >= dt, got {self.t_final}")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise ValueError(f"record_every must be a positive integer, got {self.record_every}")
        if self.integrator not in INTEGRATORS:
            raise ValueError(
                f"integrator must be one of {sorted(INTEGRATORS)}, got {self.integrator!r}"
            )

    @property
    def theta(self):
        return INTEGRATORS[self.integrator]

    @property
    def n_steps(self):
        return int(round(self.t_final / self.dt))

    def as_dict(self):
        return {
            "dt": self.dt,
            "t_final": self.t_final,
            "record_every": self.record_every,
            "integrator": self.integrator,
        }


_PROFILE_RE = re.compile(r"^\s*(sin|cos)\(\s*(\d+(?:\.\d*)?)?\s*\*?\s*pi\s*\*?\s*x\s*\)\s*$")


def initial_profile(spec, grid):
    """Sample an initial condition.

    ``spec`` is a list of ``N + 1`` samples, a number (constant profile), or
    one of ``"zero"``, ``"sin(k pi x)"``, ``"cos(k pi x)"`` (``k`` optional).
    """
    if isinstance(spec, str):
        if spec.strip() == "zero":
            return np.zeros(grid.size)
        m = _PROFILE_RE.match(spec)
        if not m:
            raise ValueError(f"unknown profile {spec!r}")
        k = float(m.group(2)) if m.group(2) else 1.0
        fn = np.sin if m.group(1) == "sin" else np.cos
        return fn(k * np.pi * grid.x)
    if isinstance(spec, (int, float)):
        return np.full(grid.size, float(spec))
    return grid.check(np.array(spec, dtype=float), "initial profile").copy()


@dataclass(frozen=True)
class Scenario:
    """Experiment definition.

    ``c2`` is the controller gain (state feedback, one-measurement observer
    runs with active control, output feedback); ``o2`` the observer gain.
    The two-measurement observer runs open loop unless ``c2`` is given.
    """

    tag: str
    c2: float | None = None
    o2: float | None = None
    initial_w: object = "sin(pi x)"
    initial_w_hat: object = "zero"

    def __post_init__(self):
        if self.tag not in SCENARIO_TAGS:
            raise ValueError(f"scenario tag must be one of {SCENARIO_TAGS}, got {self.tag!r}")
        needs_c2 = self.tag in ("state-feedback", "output-feedback")
        needs_o2 = self.tag in ("observer-two-meas", "observer-one-meas", "output-feedback")
        if needs_c2 and self.c2 is None:
            raise ValueError(f"scenario {self.tag!r} needs c2")
        if needs_o2 and self.o2 is None:
            raise ValueError(f"scenario {self.tag!r} needs o2")
        if self.c2 is not None and not self.c2 > 0:
            raise ValueError(f"c2 must be positive, got {self.c2}")
        if self.o2 is not None and not self.o2 > 0:
            raise ValueError(f"o2 must be positive, got {self.o2}")

    @property
    def has_observer(self):
        return self.tag in ("observer-two-meas", "observer-one-meas", "output-feedback")

    @property
    def observer_kind(self):
        if self.tag == "observer-one-meas":
            return "one"
        return "two" if self.has_observer else None

    def as_dict(self):
        def enc(p):
            return p.tolist() if isinstance(p, np.ndarray) else p

        return {
            "tag": self.tag,
            "c2": self.c2,
            "o2": self.o2,
            "initial_w": enc(self.initial_w),
            "initial_w_hat": enc(self.initial_w_hat),
        }


@dataclass(frozen=True, eq=False)
class GainVector:
    """Distributed gain ``profile`` on the grid plus a scalar ``boundary`` gain.

    For the controller these are ``k^a_x(1, y)`` and ``k^a(1, 1)``; for the
    observers the in-domain injection and the boundary injection.
    """

    grid: Grid
    profile: np.ndarray
    boundary: float

    def __post_init__(self):
        prof = self.grid.check(self.profile, "gain profile").copy()
        if not np.all(np.isfinite(prof)) or not math.isfinite(self.boundary):
            raise ValueError("gains must be finite")
        prof.setflags(write=False)
        object.__setattr__(self, "profile", prof)

    def feedback_row(self):
        """Row vector ``r`` with ``r @ w = int profile*w + boundary*w(1)``."""
        row = self.grid.weights * self.profile
        row[-1] += self.boundary
        return row


def controller_gains(c2, grid):
    ones = np.ones(grid.size)
    return GainVector(grid, kernels.kernel_ka_dx(ones, grid.x, c2), kernels.kernel_ka(1.0, 1.0, c2))


def observer_two_meas_gains(o2, grid):
    """``eta_1 = eta_2 = -k^b_y(x, 1)`` and ``eta_3 = eta_4 = -k^b(1, 1)``."""
    ones = np.ones(grid.size)
    return GainVector(
        grid, -kernels.kernel_kb_dy(grid.x, ones, o2), -kernels.kernel_kb(1.0, 1.0, o2)
    )


def observer_one_meas_gains(o2, grid):
    """No in-domain injection; boundary injection ``-k^a(1, 1) = o2/2``."""
    return GainVector(grid, np.zeros(grid.size), -kernels.kernel_ka(1.0, 1.0, o2))


def control_state_feedback(w, gains):
    """``u = int_0^1 k^a_x(1, y) w(y) dy + k^a(1, 1) w(1)`` (trapezoid)."""
    w = gains.grid.check(w, "w")
    return float(gains.feedback_row() @ w)


def control_output_feedback(w_hat, gains):
    """Same law evaluated on the observer estimate."""
    return control_state_feedback(w_hat, gains)


# ---------------------------------------------------------------------------
# observer models: w_hat' = A_obs w_hat + G_w w(1) + G_v v(1) + b u


class TwoMeasObserver:
    """Observer driven by ``w(1, t)`` and ``v(1, t)``.

    The elliptic estimate carries its own injections, so
    ``(gamma I - D2 + q e_N^T) v_hat = beta w_hat + q v(1)`` with
    ``q = eta_2 + (2/h) eta_4 e_N``; this modified system is factored once.
    """

    kind = "two"

    def __init__(self, ops, gains):
        p = ops.params
        n = ops.grid.size
        e_n = np.zeros(n)
        e_n[-1] = 1.0
        self.ops = ops
        self.gains = gains
        inject = gains.profile + gains.boundary * ops.input_vector
        self.p = inject
        self.q = inject  # eta_1 = eta_2 and eta_3 = eta_4
        modified = ops.elliptic_matrix + np.outer(self.q, e_n)
        self.elliptic_lu = linalg.lu_factor(modified)
        m_inv = linalg.lu_solve(self.elliptic_lu, np.eye(n))
        self.matrix = (
            ops.d2 - p.rho * np.eye(n) - np.outer(self.p, e_n) + p.alpha * p.beta * m_inv
        )
        self.g_w = self.p.copy()
        self.g_v = p.alpha * linalg.lu_solve(self.elliptic_lu, self.q)

    def v_hat(self, w_hat, v1):
        rhs = self.ops.params.beta * np.asarray(w_hat) + self.q * v1
        return linalg.lu_solve(self.elliptic_lu, rhs)


class OneMeasObserver:
    """Observer driven by ``w(1, t)`` only, boundary injection ``eta_2``."""

    kind = "one"

    def __init__(self, ops, gains):
        n = ops.grid.size
        e_n = np.zeros(n)
        e_n[-1] = 1.0
        self.ops = ops
        self.gains = gains
        self.p = gains.profile + gains.boundary * ops.input_vector
        self.matrix = ops.a_open - np.outer(self.p, e_n)
        self.g_w = self.p.copy()
        self.g_v = np.zeros(n)

    def v_hat(self, w_hat, v1=None):
        return elliptic_solve(w_hat, self.ops.params, self.ops)


# ---------------------------------------------------------------------------
# single steps with external inputs


def _theta_pair(value, theta):
    """Return the theta-weighted value of a held scalar or a ``(start, end)`` pair."""
    if np.ndim(value) == 0:
        return float(value)
    start, end = value
    return (1.0 - theta) * float(start) + theta * float(end)


def _theta_lu(ops, key, owner, matrix, config):
    cache = ops.stepper_cache()
    full_key = (key, id(owner), config.dt, config.theta)
    if full_key not in cache:
        n = matrix.shape[0]
        lhs = np.eye(n) - config.theta * config.dt * matrix
        rhs = np.eye(n) + (1.0 - config.theta) * config.dt * matrix
        # owner is kept alive so its id cannot be reused for another entry
        cache[full_key] = (linalg.lu_factor(lhs), rhs, owner)
    return cache[full_key][:2]


def plant_step(state, u, params, ops, config):
    """Advance the plant one step.

    ``u`` is a scalar held over the step or a ``(u_start, u_end)`` pair that
    is theta-weighted (Crank-Nicolson: averaged).
    """
    if ops.params != params:
        raise ValueError("operators were built for different parameters")
    lu, rhs = _theta_lu(ops, "plant", ops, ops.a_open, config)
    u_eff = _theta_pair(u, config.theta)
    w = linalg.lu_solve(lu, rhs @ state.w + config.dt * u_eff * ops.input_vector)
    return CoupledState(w, elliptic_solve(w, params, ops))


def _observer_step(observer, obs_state, w1, v1, u, config):
    th = config.theta
    lu, rhs = _theta_lu(observer.ops, "observer", observer, observer.matrix, config)
    forcing = (
        _theta_pair(w1, th) * observer.g_w
        + _theta_pair(v1, th) * observer.g_v
        + _theta_pair(u, th) * observer.ops.input_vector
    )
    w_hat = linalg.lu_solve(lu, rhs @ obs_state.w + config.dt * forcing)
    v1_end = v1 if np.ndim(v1) == 0 else v1[1]
    return CoupledState(w_hat, observer.v_hat(w_hat, v1_end))


def observer_two_meas_step(obs_state, measurements, u, observer, config):
    """Advance the two-measurement observer.

    ``measurements`` is ``(w(1), v(1))`` held over the step, or
    ``((w1_start, v1_start), (w1_end, v1_end))``.
    """
    if np.ndim(measurements[0]) == 0:
        w1, v1 = measurements
    else:
        (w1a, v1a), (w1b, v1b) = measurements
        w1, v1 = (w1a, w1b), (v1a, v1b)
    return _observer_step(observer, obs_state, w1, v1, u, config)


def observer_one_meas_step(obs_state, measurement, u, observer, config):
    """Advance the single-measurement observer; ``measurement`` is ``w(1)``
    (held) or a ``(start, end)`` pair."""
    return _observer_step(observer, obs_state, measurement, 0.0, u, config)


# ---------------------------------------------------------------------------
# whole-run simulation


@dataclass
class TimeSeries:
    """Recorded trajectory.  Observer fields are ``None`` without an observer."""

    grid: Grid
    tag: str
    times: np.ndarray
    w: np.ndarray
    v: np.ndarray
    u: np.ndarray
    w_hat: np.ndarray | None = None
    v_hat: np.ndarray | None = None

    def _norms(self, fields):
        return np.array([self.grid.norm(f) for f in fields])

    @property
    def norm_w(self):
        return self._norms(self.w)

    @property
    def norm_v(self):
        return self._norms(self.v)

    @property
    def norm_ew(self):
        return None if self.w_hat is None else self._norms(self.w - self.w_hat)

    @property
    def norm_ev(self):
        return None if self.v_hat is None else self._norms(self.v - self.v_hat)


def _warn_conditions(scenario, params):
    checks = []
    if scenario.c2 is not None and params.gamma > 0 and scenario.tag != "open-loop":
        checks.append(analysis.check_controller_condition(scenario.c2, params))
    if scenario.observer_kind == "two":
        checks.append(analysis.check_observer2_condition(scenario.o2, params))
    elif scenario.observer_kind == "one" and params.gamma > 0:
        checks.append(analysis.check_observer1_condition(scenario.o2, params)["theorem_quadrature"])
    for rep in checks:
        if not rep.satisfied:
            warnings.warn(
                f"sufficient condition {rep.name} fails (margin {rep.margin:.4g}); "
                "simulating anyway",
                RuntimeWarning,
                stacklevel=3,
            )


def simulate(scenario, params, config, grid=None, ops=None, check_conditions=True):
    """Run ``scenario`` and return the recorded :class:`TimeSeries`.

    The control law is part of the linear system being stepped, so ``u`` is
    effectively theta-weighted across each step, like every other term.
    """
    if ops is None:
        ops = DiscreteOperators(params, grid or Grid(128))
    grid = ops.grid
    if check_conditions:
        _warn_conditions(scenario, params)
    n = grid.size
    e_n = np.zeros(n)
    e_n[-1] = 1.0
    b = ops.input_vector
    s = params.beta * ops.elliptic_inverse  # v = s @ w

    observer = None
    if scenario.observer_kind == "two":
        observer = TwoMeasObserver(ops, observer_two_meas_gains(scenario.o2, grid))
    elif scenario.observer_kind == "one":
        observer = OneMeasObserver(ops, observer_one_meas_gains(scenario.o2, grid))

    k_row = np.zeros(n) if scenario.c2 is None else controller_gains(scenario.c2, grid).feedback_row()
    if scenario.tag == "open-loop":
        k_row = np.zeros(n)
    feedback_on_estimate = scenario.tag == "output-feedback"

    w0 = initial_profile(scenario.initial_w, grid)
    if observer is None:
        m = ops.a_open + np.outer(b, k_row)
        z = w0.copy()
        u_row = k_row
    else:
        zero = np.zeros((n, n))
        kw, kh = (zero, np.outer(b, k_row)) if feedback_on_estimate else (np.outer(b, k_row), zero)
        meas = np.outer(observer.g_w, e_n) + np.outer(observer.g_v, s[-1])
        m = np.block([[ops.a_open + kw, kh], [meas + kw, observer.matrix + kh]])
        z = np.concatenate([w0, initial_profile(scenario.initial_w_hat, grid)])
        u_row = np.concatenate([np.zeros(n), k_row] if feedback_on_estimate else [k_row, np.zeros(n)])

    size = m.shape[0]
    lu = linalg.lu_factor(np.eye(size) - config.theta * config.dt * m)
    explicit = np.eye(size) + (1.0 - config.theta) * config.dt * m

    steps = config.n_steps
    rec_idx = list(range(0, steps + 1, config.record_every))
    if rec_idx[-1] != steps:
        rec_idx.append(steps)
    states = np.empty((len(rec_idx), size))
    k = 0
    for step in range(steps + 1):
        if step == rec_idx[k]:
            states[k] = z
            k += 1
        if step < steps:
            z = linalg.lu_solve(lu, explicit @ z)

    times = np.array(rec_idx, dtype=float) * config.dt
    w = states[:, :n]
    v = w @ s.T
    u = states @ u_row
    series = TimeSeries(grid, scenario.tag, times, w, v, u)
    if observer is not None:
        w_hat = states[:, n:]
        series.w_hat = w_hat
        series.v_hat = np.array([observer.v_hat(wh, vv[-1]) for wh, vv in zip(w_hat, v)])
    return series
