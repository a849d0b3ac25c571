import numpy as np
import pytest
from conftest import C2_FEEDBACK, UNSTABLE_WEAK, fitted_order

from pebackstep import kernels
from pebackstep.model import CoupledState, DiscreteOperators, Grid, SystemParams, elliptic_solve
from pebackstep.model import discrete_neumann_eigenvalues
from pebackstep.sim import (
    GainVector,
    OneMeasObserver,
    Scenario,
    SimConfig,
    TwoMeasObserver,
    control_output_feedback,
    control_state_feedback,
    controller_gains,
    initial_profile,
    observer_one_meas_gains,
    observer_one_meas_step,
    observer_two_meas_gains,
    observer_two_meas_step,
    plant_step,
    simulate,
)


class TestConfigObjects:
    def test_defaults(self):
        cfg = SimConfig()
        assert (cfg.dt, cfg.integrator, cfg.theta) == (1e-3, "crank-nicolson", 0.5)
        assert cfg.n_steps == 10000

    @pytest.mark.parametrize(
        "kwargs",
        [{"dt": 0.0}, {"t_final": 1e-5}, {"record_every": 0}, {"integrator": "rk4"}],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            SimConfig(**kwargs)

    def test_scenario_requirements(self):
        with pytest.raises(ValueError, match="c2"):
            Scenario("state-feedback")
        with pytest.raises(ValueError, match="o2"):
            Scenario("observer-two-meas")
        with pytest.raises(ValueError, match="tag"):
            Scenario("closed-loop")
        with pytest.raises(ValueError):
            Scenario("state-feedback", c2=-1.0)
        assert Scenario("output-feedback", c2=1.0, o2=2.0).observer_kind == "two"
        assert Scenario("observer-one-meas", o2=2.0).observer_kind == "one"
        assert Scenario("open-loop").observer_kind is None

    def test_profiles(self):
        g = Grid(8)
        np.testing.assert_array_equal(initial_profile("zero", g), 0.0)
        np.testing.assert_allclose(initial_profile("sin(pi x)", g), np.sin(np.pi * g.x))
        np.testing.assert_allclose(initial_profile("cos(2 pi x)", g), np.cos(2 * np.pi * g.x))
        np.testing.assert_allclose(initial_profile("sin(3*pi*x)", g), np.sin(3 * np.pi * g.x))
        np.testing.assert_array_equal(initial_profile(2, g), 2.0)
        np.testing.assert_array_equal(initial_profile(list(range(9)), g), np.arange(9.0))
        with pytest.raises(ValueError):
            initial_profile("tan(pi x)", g)
        with pytest.raises(ValueError):
            initial_profile([1.0, 2.0], g)


class TestGains:
    def test_controller_gain(self):
        g = Grid(16)
        gains = controller_gains(2.0, g)
        assert gains.boundary == -1.0
        assert gains.profile[-1] == pytest.approx(-1.0 - 0.5)
        w = np.ones(g.size)
        u = control_state_feedback(w, gains)
        assert u == pytest.approx(g.integrate(gains.profile) - 1.0)
        assert control_output_feedback(w, gains) == u

    def test_observer_gains(self):
        g = Grid(16)
        two = observer_two_meas_gains(5.0, g)
        assert two.boundary == 2.5
        np.testing.assert_allclose(two.profile, -kernels.kernel_kb_dy(g.x, np.ones(g.size), 5.0))
        one = observer_one_meas_gains(0.5, g)
        assert one.boundary == 0.25
        assert not np.any(one.profile)

    def test_gain_vector_validation(self):
        g = Grid(8)
        with pytest.raises(ValueError):
            GainVector(g, np.full(9, np.nan), 0.0)
        with pytest.raises(ValueError):
            GainVector(g, np.zeros(3), 0.0)


class TestSteps:
    def test_exact_mode_factor(self, weak):
        # cos(pi x) is an exact eigenvector of the reduced discrete operator,
        # so Crank-Nicolson multiplies it by the rational factor each step
        g = Grid(32)
        ops = DiscreteOperators(weak, g)
        cfg = SimConfig(dt=0.01, t_final=0.5, record_every=1)
        lam_d = discrete_neumann_eigenvalues(g)[1]
        lam = lam_d - weak.rho + weak.alpha * weak.beta / (weak.gamma - lam_d)
        factor = (1 + 0.5 * cfg.dt * lam) / (1 - 0.5 * cfg.dt * lam)
        w0 = np.cos(np.pi * g.x)
        state = CoupledState(w0, elliptic_solve(w0, weak, ops))
        for _ in range(cfg.n_steps):
            state = plant_step(state, 0.0, weak, ops, cfg)
        np.testing.assert_allclose(state.w, factor**cfg.n_steps * w0, atol=1e-13)

    def test_open_loop_matches_simulate(self, weak):
        g = Grid(32)
        ops = DiscreteOperators(weak, g)
        cfg = SimConfig(dt=0.01, t_final=0.3, record_every=1)
        series = simulate(Scenario("open-loop"), weak, cfg, ops=ops)
        w0 = np.sin(np.pi * g.x)
        state = CoupledState(w0, elliptic_solve(w0, weak, ops))
        for k in range(cfg.n_steps):
            state = plant_step(state, 0.0, weak, ops, cfg)
            np.testing.assert_allclose(state.w, series.w[k + 1], atol=1e-13)
            np.testing.assert_allclose(state.v, series.v[k + 1], atol=1e-13)

    def test_two_measurement_observer_matches_simulate(self, strong):
        g = Grid(32)
        ops = DiscreteOperators(strong, g)
        cfg = SimConfig(dt=0.005, t_final=0.2, record_every=1)
        scen = Scenario("observer-two-meas", o2=5.0, initial_w_hat="cos(pi x)")
        series = simulate(scen, strong, cfg, ops=ops)
        obs = TwoMeasObserver(ops, observer_two_meas_gains(5.0, g))
        w0, wh0 = np.sin(np.pi * g.x), np.cos(np.pi * g.x)
        plant = CoupledState(w0, elliptic_solve(w0, strong, ops))
        est = CoupledState(wh0, obs.v_hat(wh0, plant.v[-1]))
        for k in range(cfg.n_steps):
            new = plant_step(plant, 0.0, strong, ops, cfg)
            meas = ((plant.w[-1], plant.v[-1]), (new.w[-1], new.v[-1]))
            est = observer_two_meas_step(est, meas, 0.0, obs, cfg)
            plant = new
            np.testing.assert_allclose(est.w, series.w_hat[k + 1], atol=1e-11)
            np.testing.assert_allclose(est.v, series.v_hat[k + 1], atol=1e-11)

    def test_one_measurement_observer_matches_simulate(self, stable):
        g = Grid(32)
        ops = DiscreteOperators(stable, g)
        cfg = SimConfig(dt=0.005, t_final=0.2, record_every=1)
        scen = Scenario("observer-one-meas", o2=0.5, initial_w_hat="sin(2 pi x)")
        series = simulate(scen, stable, cfg, ops=ops)
        obs = OneMeasObserver(ops, observer_one_meas_gains(0.5, g))
        w0, wh0 = np.sin(np.pi * g.x), np.sin(2 * np.pi * g.x)
        plant = CoupledState(w0, elliptic_solve(w0, stable, ops))
        est = CoupledState(wh0, obs.v_hat(wh0))
        for k in range(cfg.n_steps):
            new = plant_step(plant, 0.0, stable, ops, cfg)
            est = observer_one_meas_step(est, (plant.w[-1], new.w[-1]), 0.0, obs, cfg)
            plant = new
            np.testing.assert_allclose(est.w, series.w_hat[k + 1], atol=1e-11)

    def test_observer_tracks_exactly_from_true_state(self, strong):
        # identical initial estimate => zero error for all time
        g = Grid(32)
        scen = Scenario("observer-two-meas", o2=5.0, initial_w_hat="sin(pi x)")
        series = simulate(scen, strong, SimConfig(dt=0.01, t_final=1.0), grid=g)
        assert np.max(series.norm_ew) < 1e-12
        assert np.max(series.norm_ev) < 1e-12

    def test_params_mismatch(self, weak, stable):
        ops = DiscreteOperators(weak, Grid(8))
        state = CoupledState(np.zeros(9), np.zeros(9))
        with pytest.raises(ValueError):
            plant_step(state, 0.0, stable, ops, SimConfig())

    def test_boundary_input_sets_flux(self, stable):
        # a constant input drives w toward a profile with w_x(1) = u
        g = Grid(64)
        ops = DiscreteOperators(stable, g)
        cfg = SimConfig(dt=0.05, t_final=1.0, integrator="backward-euler")
        state = CoupledState(np.zeros(g.size), np.zeros(g.size))
        for _ in range(400):
            state = plant_step(state, 1.0, stable, ops, cfg)
        slope = (3 * state.w[-1] - 4 * state.w[-2] + state.w[-3]) / (2 * g.h)
        assert slope == pytest.approx(1.0, abs=5e-3)


class TestSimulate:
    def test_zero_initial_stays_zero(self, weak):
        s = simulate(
            Scenario("state-feedback", c2=C2_FEEDBACK, initial_w="zero"),
            weak,
            SimConfig(t_final=0.1),
            grid=Grid(16),
        )
        assert not np.any(s.w)
        assert not np.any(s.u)

    def test_records_include_final(self, weak):
        s = simulate(Scenario("open-loop"), weak, SimConfig(dt=0.01, t_final=0.25, record_every=10), grid=Grid(16))
        np.testing.assert_allclose(s.times, [0.0, 0.1, 0.2, 0.25])
        assert s.w_hat is None and s.norm_ew is None

    def test_linearity(self, weak):
        g = Grid(32)
        cfg = SimConfig(dt=0.01, t_final=0.5)
        base = np.sin(np.pi * g.x) + 0.3 * g.x**2
        s1 = simulate(Scenario("output-feedback", c2=1.0, o2=3.0, initial_w=list(base)), weak, cfg, grid=g)
        s2 = simulate(
            Scenario("output-feedback", c2=1.0, o2=3.0, initial_w=list(-2.5 * base)), weak, cfg, grid=g
        )
        np.testing.assert_allclose(s2.w, -2.5 * s1.w, atol=1e-13)
        np.testing.assert_allclose(s2.u, -2.5 * s1.u, atol=1e-13)

    def test_deterministic(self, weak):
        g = Grid(32)
        cfg = SimConfig(dt=0.01, t_final=0.5)
        scen = Scenario("state-feedback", c2=C2_FEEDBACK)
        a, b = simulate(scen, weak, cfg, grid=g), simulate(scen, weak, cfg, grid=g)
        assert np.array_equal(a.w, b.w) and np.array_equal(a.u, b.u)

    def test_recorded_control_matches_law(self, weak):
        g = Grid(32)
        s = simulate(Scenario("state-feedback", c2=C2_FEEDBACK), weak, SimConfig(dt=0.01, t_final=0.2), grid=g)
        gains = controller_gains(C2_FEEDBACK, g)
        for w, u in zip(s.w, s.u):
            assert u == pytest.approx(control_state_feedback(w, gains), abs=1e-14)

    def test_open_loop_constant_mode_rate(self, weak):
        s = simulate(Scenario("open-loop", initial_w=1.0), weak, SimConfig(dt=1e-3, t_final=2.0), grid=Grid(16))
        assert s.norm_w[-1] == pytest.approx(np.exp(2.0 / 6), rel=1e-6)
        # v = beta/gamma * w for the constant mode
        np.testing.assert_allclose(s.v[-1], 2.0 * s.w[-1], rtol=1e-12)

    def test_failing_condition_warns(self):
        p = SystemParams(0.0, 4.0, 4.0, 1.0)
        with pytest.warns(RuntimeWarning, match="controller"):
            simulate(Scenario("state-feedback", c2=0.1), p, SimConfig(dt=0.01, t_final=0.02), grid=Grid(16))


def _final_w(integrator, dt, params, scen, grid):
    cfg = SimConfig(dt=dt, t_final=1.0, record_every=10**6, integrator=integrator)
    return simulate(scen, params, cfg, grid=grid, check_conditions=False).w[-1]


class TestTimeAccuracy:
    @pytest.mark.parametrize("integrator,order", [("crank-nicolson", 2.0), ("backward-euler", 1.0)])
    def test_refinement_order(self, weak, integrator, order):
        g = Grid(64)
        scen = Scenario("state-feedback", c2=C2_FEEDBACK, initial_w="cos(pi x)")
        ws = [_final_w(integrator, dt, weak, scen, g) for dt in (2e-3, 1e-3, 5e-4)]
        d1 = g.norm(ws[0] - ws[1])
        d2 = g.norm(ws[1] - ws[2])
        assert np.log2(d1 / d2) == pytest.approx(order, abs=0.15)


class TestTargetSystem:
    """The transformed state obeys the damped target equation with w~_x(1) = 0."""

    @staticmethod
    def residuals(n):
        p = SystemParams(*UNSTABLE_WEAK)
        g = Grid(n)
        dt = 1e-4
        s = simulate(
            Scenario("state-feedback", c2=C2_FEEDBACK, initial_w="cos(pi x)"),
            p,
            SimConfig(dt=dt, t_final=0.51, record_every=1),
            grid=g,
        )
        ka = kernels.table_ka(C2_FEEDBACK, g)
        i = 5000  # t = 0.5, past the initial boundary layer
        wt = [kernels.volterra_lower(ka, s.w[j]) for j in (i - 1, i, i + 1)]
        w_t = (wt[2] - wt[0]) / (2 * dt)
        mid = wt[1]
        w_xx = (mid[2:] - 2 * mid[1:-1] + mid[:-2]) / g.h**2
        v = s.v[i]
        rhs = w_xx - (C2_FEEDBACK + p.rho) * mid[1:-1] + p.alpha * (v - ka.quadrature @ v)[1:-1]
        res = np.max(np.abs(w_t[1:-1] - rhs))
        flux = (3 * mid[-1] - 4 * mid[-2] + mid[-3]) / (2 * g.h)
        return res, abs(flux)

    def test_second_order(self):
        ns = (32, 64, 128)
        res, flux = zip(*(self.residuals(n) for n in ns))
        assert fitted_order(ns, res) >= 1.8
        assert fitted_order(ns, flux) >= 1.5
        assert flux[-1] < 1e-5
