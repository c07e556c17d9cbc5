import math

import numpy as np
import pytest

from minkground import (
    IntegratorConfig,
    RadialState,
    StiffnessError,
    advance,
    energy_residual,
    eval_F,
    flux_from_slope,
    power_family,
    slope_from_flux,
    taylor_start,
    vector_field,
)


class TestFluxMaps:
    def test_examples(self):
        assert slope_from_flux(0.0) == 0.0
        assert slope_from_flux(1.0) == pytest.approx(1.0 / math.sqrt(2.0), abs=1e-15)
        assert slope_from_flux(-3.0) == pytest.approx(-3.0 / math.sqrt(10.0), abs=1e-15)

    def test_slope_strictly_inside_unit_interval(self):
        for q in np.geomspace(1e-8, 1e16, 60):
            for sgn in (1.0, -1.0):
                t = slope_from_flux(sgn * q)
                assert abs(t) < 1.0

    def test_roundtrip_flux_of_slope(self):
        # phi'(slope(q)) reproduces q up to the conditioning of the slope
        # representation: going through the nearest double to q/sqrt(1+q^2)
        # costs ~(1+q^2)*eps relative, which dominates 1e-13 beyond |q|~30
        eps = np.finfo(float).eps
        for q in np.geomspace(1e-6, 1e6, 200):
            for sgn in (1.0, -1.0):
                back = flux_from_slope(slope_from_flux(sgn * q))
                tol = max(1e-13, 4.0 * eps * (1.0 + q * q)) * q
                assert abs(back - sgn * q) <= tol

    def test_roundtrip_well_conditioned_range(self):
        for q in np.geomspace(1e-6, 20.0, 300):
            for sgn in (1.0, -1.0):
                back = flux_from_slope(slope_from_flux(sgn * q))
                assert abs(back - sgn * q) <= 1e-13 * q

    def test_h_identity_flux_vs_slope_form(self):
        # sqrt(1+q^2) - 1 against (1 - sqrt(1-t^2))/sqrt(1-t^2) at t = slope(q);
        # the slope-form value amplifies the rounding of t by
        # dH/dt ~ (1+q^2)^(3/2), which dominates 1e-13 for |q| beyond ~10
        eps = np.finfo(float).eps
        rng = np.random.default_rng(3)
        for q in rng.uniform(-100.0, 100.0, 10_000):
            t = slope_from_flux(q)
            h_slope = (1.0 - math.sqrt((1.0 - t) * (1.0 + t))) / math.sqrt((1.0 - t) * (1.0 + t))
            h_flux = q * q / (1.0 + math.hypot(1.0, q))
            tol = 1e-13 * (1.0 + abs(h_flux)) + 2.0 * eps * (1.0 + q * q) ** 1.5
            assert abs(h_flux - h_slope) <= tol

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            slope_from_flux(math.inf)


class TestVectorField:
    def test_equilibrium(self, power13):
        s = RadialState(r=2.0, u=1.0, q=0.0, D=0.0)  # f(1) = 0
        assert vector_field(3, power13, s) == (0.0, 0.0, 0.0)

    def test_pure_drive(self, power13):
        s = RadialState(r=1.0, u=1.5, q=0.0, D=0.0)
        du, dq, dD = vector_field(3, power13, s)
        assert du == 0.0 and dD == 0.0
        assert dq == pytest.approx(-1.875, abs=1e-15)

    def test_mixed_state(self, power13):
        s = RadialState(r=2.0, u=1.0, q=-1.0, D=0.0)
        du, dq, dD = vector_field(3, power13, s)
        assert du == pytest.approx(-1.0 / math.sqrt(2.0), abs=1e-15)
        assert dq == pytest.approx(1.0, abs=1e-15)  # -(2/2)*(-1) - f(1)
        assert dD == pytest.approx(1.0 / (2.0 * math.sqrt(2.0)), abs=1e-15)

    def test_origin_rejected(self, power13):
        with pytest.raises(ValueError):
            vector_field(3, power13, RadialState(r=0.0, u=1.0, q=0.0, D=0.0))


class TestTaylorStart:
    def test_equilibrium_height(self, power13):
        s = taylor_start(3, power13, 1.0, 1e-3)  # f(1) = 0
        assert (s.r, s.u, s.q, s.D) == (1e-3, 1.0, 0.0, 0.0)

    def test_series_coefficients(self, power13):
        s = taylor_start(3, power13, 1.5, 1e-3)
        assert s.u == pytest.approx(1.5 - 3.125e-7, abs=1e-18)
        assert s.q == pytest.approx(-6.25e-4, abs=1e-18)
        assert s.D == pytest.approx(1.953125e-7, rel=1e-12)

    def test_startup_radius_self_consistency(self, power13):
        # startup at 1e-4 vs 1e-3 must agree at r = 0.01 to 1e-10
        cfg = IntegratorConfig(abs_tol=1e-12, rel_tol=1e-12)
        u_vals = []
        for r0 in (1e-4, 1e-3):
            state = taylor_start(3, power13, 1.5, r0)
            final, _ = advance(3, power13, cfg, state, 0.01)
            u_vals.append(final.u)
        assert abs(u_vals[0] - u_vals[1]) <= 1e-10

    def test_startup_energy_residual_small(self, power13):
        s = taylor_start(3, power13, 1.5, 1e-3)
        assert abs(energy_residual(power13, 3, 1.5, s)) <= 1e-9


class TestAdvance:
    def test_flux_conservation_where_f_vanishes(self, power13):
        # below u = 0 the extension makes f = 0, so r^(N-1)*q is conserved
        cfg = IntegratorConfig(abs_tol=1e-12, rel_tol=1e-12)
        start = RadialState(r=1.0, u=-0.5, q=-2.0, D=0.0)
        final, _ = advance(3, power13, cfg, start, 5.0)
        assert final.r == 5.0
        assert 25.0 * final.q == pytest.approx(-2.0, abs=1e-10)

    def test_energy_residual_along_shot(self, power13):
        cfg = IntegratorConfig(sample_stride=0.05)
        state = taylor_start(3, power13, 1.2, cfg.r_start)
        final, samples = advance(3, power13, cfg, state, 1.0)
        F_xi = eval_F(power13, 1.2)
        worst = max(
            abs(energy_residual(power13, 3, 1.2, s, F_xi=F_xi)) for s in samples + [final]
        )
        assert worst <= 1e-9

    def test_tolerance_halving_self_consistency(self, power13):
        u_end = {}
        steps = {}
        for tol in (1e-10, 5e-11):
            cfg = IntegratorConfig(abs_tol=tol, rel_tol=tol)
            state = taylor_start(3, power13, 1.2, cfg.r_start)
            from minkground import RadialIntegrator

            stepper = RadialIntegrator(3, power13, cfg)
            k = stepper.rhs(state.r, state.u, state.q)
            h = state.r
            while state.r < 5.0 - 1e-15:
                state, k, h = stepper.step(state, k, h, 5.0)
            u_end[tol] = state.u
            steps[tol] = stepper.n_steps
        budget = steps[1e-10] * 1e-10  # accumulated local error allowance
        assert abs(u_end[1e-10] - u_end[5e-11]) <= 10.0 * budget

    def test_dense_samples_on_stride_grid(self, power13):
        cfg = IntegratorConfig(sample_stride=0.1)
        state = taylor_start(3, power13, 1.2, cfg.r_start)
        _, samples = advance(3, power13, cfg, state, 1.0)
        assert [s.r for s in samples] == pytest.approx(np.arange(1, 11) * 0.1, abs=1e-12)

    def test_flux_monotone_while_f_positive(self, power13):
        # r^(N-1)*q strictly decreases while u stays above alpha = 1
        cfg = IntegratorConfig(sample_stride=0.02)
        state = taylor_start(3, power13, 2.0, cfg.r_start)
        _, samples = advance(3, power13, cfg, state, 2.0)
        flux = [s.r ** 2 * s.q for s in samples if s.u > 1.0]
        assert all(b < a for a, b in zip(flux, flux[1:]))

    def test_dissipation_nondecreasing(self, power13):
        cfg = IntegratorConfig(sample_stride=0.05)
        state = taylor_start(3, power13, 2.5, cfg.r_start)
        _, samples = advance(3, power13, cfg, state, 3.0)
        D = [s.D for s in samples]
        assert all(b >= a for a, b in zip(D, D[1:]))

    def test_second_derivative_at_origin(self, power13):
        # Richardson-extrapolated finite differences of the integrated
        # profile against the startup curvature -f(xi)/N
        xi = 1.7
        cfg = IntegratorConfig(abs_tol=1e-12, rel_tol=1e-12)
        u_of = {}
        for h in (0.01, 0.02):
            state = taylor_start(3, power13, xi, cfg.r_start)
            final, _ = advance(3, power13, cfg, state, h)
            u_of[h] = final.u
        e1 = 2.0 * (u_of[0.01] - xi) / 0.01**2
        e2 = 2.0 * (u_of[0.02] - xi) / 0.02**2
        estimate = (4.0 * e1 - e2) / 3.0
        assert estimate == pytest.approx(-power13.f(xi) / 3.0, abs=1e-6)

    def test_stiffness_underflow_reported(self, power13):
        # tolerances far below the roundoff floor of a steep state force the
        # controller to shrink h past the underflow threshold
        cfg = IntegratorConfig(abs_tol=1e-30, rel_tol=1e-30)
        state = RadialState(r=1.0, u=1e5, q=0.0, D=0.0)
        with pytest.raises(StiffnessError) as exc:
            advance(3, power13, cfg, state, 2.0)
        assert exc.value.state.r >= 1.0

    def test_step_budget_guard(self, power13):
        cfg = IntegratorConfig(max_steps=10)
        state = taylor_start(3, power13, 1.5, cfg.r_start)
        with pytest.raises(StiffnessError, match="budget"):
            advance(3, power13, cfg, state, 50.0)

    def test_bad_targets_rejected(self, power13):
        cfg = IntegratorConfig()
        state = taylor_start(3, power13, 1.5, cfg.r_start)
        with pytest.raises(ValueError):
            advance(3, power13, cfg, state, state.r)
        with pytest.raises(ValueError):
            IntegratorConfig(abs_tol=-1.0).validate()
        with pytest.raises(ValueError):
            IntegratorConfig(r_start=0.1).validate()
