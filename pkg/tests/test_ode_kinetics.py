import numpy as np
import pytest

from perilab import (Stability, TrajectoryClass,
                     build_perturbation_g, classify_trajectory, constant_orbit,
                     derivative_bounds, epsilon_star, find_periodic_orbits,
                     floquet_integral, integrate_h, logistic_spec,
                     perturbed_variational_bounds, poincare_map,
                     stability_taxonomy, variational_bounds, zero_spec)
from perilab.errors import BracketError, DomainError, HypothesisError
from perilab.ode_kinetics import _rk4
from tests.conftest import orbit_at


def logistic_exact(a, t):
    # closed form of h' = h (1 - h)
    return 1.0 / (1.0 + (1.0 - a) / a * np.exp(-t))


class TestIntegration:
    def test_zero_field_constant(self):
        tr = integrate_h(zero_spec(), 0.7, 1.0)
        assert np.max(np.abs(tr.h - 0.7)) == 0.0

    def test_logistic_equilibrium(self, logistic_free):
        tr = integrate_h(logistic_free, 1.0, 3.0)
        assert np.max(np.abs(tr.h - 1.0)) < 1e-12

    def test_logistic_closed_form(self, logistic_free):
        tr = integrate_h(logistic_free, 0.5, 1.0)
        assert tr.h[-1] == pytest.approx(logistic_exact(0.5, 1.0), abs=1e-10)
        assert tr.h[-1] == pytest.approx(0.731058, abs=1e-6)
        assert tr.richardson_error < 1e-10

    def test_forced_logistic_period_map_matches_autonomous(self):
        # b(t) integrates to T over a period, so P(a) is beta-independent
        forced = logistic_spec(beta=0.5, T=1.0)
        assert poincare_map(forced, 0.5) == pytest.approx(logistic_exact(0.5, 1.0), abs=1e-9)

    def test_comparison_in_initial_value(self, bistable_forced):
        rng = np.random.default_rng(3)
        a = np.sort(rng.uniform(0.0, 1.4, 20))
        ys, path = _rk4(bistable_forced, a, 0.0, 3.0, 6000, record=True,
                        clamp_nonnegative=True)
        assert np.all(np.diff(path, axis=1) >= -1e-12)

    def test_negative_initial_rejected(self, bistable_forced):
        with pytest.raises(DomainError):
            integrate_h(bistable_forced, -0.1, 1.0)


class TestClassification:
    def test_fixed_point_is_periodic(self, bistable_free):
        assert classify_trajectory(bistable_free, 0.3) is TrajectoryClass.PERIODIC

    def test_logistic_interior_increases(self, logistic_free):
        assert classify_trajectory(logistic_free, 0.5) is TrajectoryClass.MONOTONE_INCREASING

    def test_bistable_below_threshold_decreases(self, bistable_free):
        assert poincare_map(bistable_free, 0.2) < 0.2
        assert classify_trajectory(bistable_free, 0.2) is TrajectoryClass.MONOTONE_DECREASING

    def test_refined_step_agreement(self, bistable_forced):
        for a in (0.12, 0.45, 0.9, 1.3):
            coarse = classify_trajectory(bistable_forced, a)
            fine = classify_trajectory(bistable_forced, a, steps_per_period=20000)
            assert coarse is fine


class TestOrbitScan:
    def test_bistable_orbit_set(self, bistable_free_scan):
        a0s = sorted(o.a0 for o in bistable_free_scan.orbits)
        assert np.allclose(a0s, [0.0, 0.3, 1.0], atol=1e-7)
        assert bistable_free_scan.continua == []

    def test_orbit_residual_refined(self, bistable_forced, bistable_forced_scan):
        for o in bistable_forced_scan.orbits:
            gap = abs(poincare_map(bistable_forced, o.a0, steps_per_period=20000) - o.a0)
            assert gap < 1e-9

    def test_combustion_plateau_reported_as_interval(self, combustion_forced_scan):
        assert len(combustion_forced_scan.continua) == 1
        lo, hi = combustion_forced_scan.continua[0]
        assert lo == pytest.approx(0.0, abs=1e-12)
        assert hi == pytest.approx(0.3, abs=1e-6)
        # interior plateau points are not listed as discrete orbits
        interior = [o for o in combustion_forced_scan.orbits if 1e-6 < o.a0 < hi - 1e-6]
        assert interior == []

    def test_empty_result_is_valid(self):
        spec = logistic_spec(beta=0.0)
        scan = find_periodic_orbits(spec, (0.2, 0.8), 31)
        assert scan.orbits == [] and scan.continua == []

    def test_escape_level(self, bistable_free_scan, combustion_forced_scan):
        assert bistable_free_scan.escape_level() == pytest.approx(0.3, abs=0.02)
        assert combustion_forced_scan.escape_level() == pytest.approx(0.3, abs=0.02)


class TestFloquet:
    def test_forced_logistic_top_orbit(self):
        spec = logistic_spec(beta=0.5, T=1.0)
        orbit = constant_orbit(spec, 1.0)
        assert floquet_integral(spec, orbit) == pytest.approx(-1.0, abs=1e-6)

    def test_logistic_zero_orbit(self, logistic_free):
        orbit = constant_orbit(logistic_free, 0.0)
        assert floquet_integral(logistic_free, orbit) == pytest.approx(1.0, abs=1e-9)

    def test_quadrature_refinement(self, bistable_forced, bistable_forced_scan):
        from perilab.nonlinearity import eval_fu
        orbit = orbit_at(bistable_forced_scan, 0.3)
        simpson = floquet_integral(bistable_forced, orbit)
        ts = np.linspace(0.0, 1.0, 20001)
        trap = np.trapezoid(eval_fu(bistable_forced, ts, orbit.value(ts)), dx=ts[1] - ts[0])
        assert simpson == pytest.approx(trap, abs=1e-8)

    def test_sign_vs_taxonomy(self, bistable_forced_scan, combustion_forced_scan):
        for scan in (bistable_forced_scan, combustion_forced_scan):
            for o in scan.orbits:
                if o.floquet < -1e-6:
                    assert o.stability_above is Stability.STABLE
                    assert o.stability_below is Stability.STABLE
                if o.floquet > 1e-6:
                    assert o.stability_above is Stability.UNSTABLE
                    assert o.stability_below is Stability.UNSTABLE


class TestTaxonomy:
    def test_bistable_autonomous(self, bistable_free_scan):
        top = orbit_at(bistable_free_scan, 1.0)
        assert (top.stability_above, top.stability_below) == (Stability.STABLE, Stability.STABLE)
        assert not top.in_Yper
        mid = orbit_at(bistable_free_scan, 0.3)
        assert (mid.stability_above, mid.stability_below) == (Stability.UNSTABLE, Stability.UNSTABLE)
        assert mid.in_Yper

    def test_combustion_edge_orbit(self, combustion_forced, combustion_forced_scan):
        q1 = orbit_at(combustion_forced_scan, 0.3)
        assert q1.stability_below is Stability.STABLE      # plateau below
        assert q1.stability_above is Stability.UNSTABLE    # increasing above
        assert q1.in_Yper
        # P(a) > a just above q1
        assert poincare_map(combustion_forced, 0.31) > 0.31

    def test_probe_size_robustness(self, bistable_forced, bistable_forced_scan):
        for o in bistable_forced_scan.orbits:
            tax1 = stability_taxonomy(bistable_forced, o.a0, probe_eps=1e-3)
            tax2 = stability_taxonomy(bistable_forced, o.a0, probe_eps=5e-4)
            assert tax1[:3] == tax2[:3]

    def test_zero_orbit_below_vacuous(self, bistable_free):
        above, below, in_yper, vac = stability_taxonomy(bistable_free, 0.0)
        assert vac and below is Stability.STABLE
        with pytest.raises(DomainError):
            stability_taxonomy(bistable_free, 0.0, clip_at_zero=False)

    def test_yper_soundness(self, bistable_forced, bistable_forced_scan, combustion_forced, combustion_forced_scan):
        # in_Yper implies probes above classify periodic or increasing
        for spec, scan in ((bistable_forced, bistable_forced_scan),
                           (combustion_forced, combustion_forced_scan)):
            for o in scan.orbits:
                if not o.in_Yper:
                    continue
                for k in range(1, 5):
                    cls = classify_trajectory(spec, o.a0 + k * o.probe_eps / 4)
                    assert cls in (TrajectoryClass.PERIODIC, TrajectoryClass.MONOTONE_INCREASING)


class TestVariationalBounds:
    def test_identity_flow_limit(self):
        spec = zero_spec()
        lo = constant_orbit(spec, 0.0)
        hi = constant_orbit(spec, 1.0)
        m1, m2 = variational_bounds(spec, lo, hi)
        assert m1 == 1.0 and m2 == 0.0

    def test_logistic_closed_form(self, logistic_free):
        lo = constant_orbit(logistic_free, 0.0)
        hi = constant_orbit(logistic_free, 1.0)
        m1, m2 = variational_bounds(logistic_free, lo, hi)
        assert m1 == pytest.approx(np.exp(-1.05), rel=1e-12)

    def test_variational_ode_respects_floor(self, bistable_forced, bistable_forced_scan):
        # h_a solves h_a' = f_u(t, h) h_a, h_a(0) = 1; checked against M1
        from perilab.nonlinearity import eval_fu
        lo = orbit_at(bistable_forced_scan, 0.3)
        hi = orbit_at(bistable_forced_scan, 1.0)
        m1, _ = variational_bounds(bistable_forced, lo, hi)
        rng = np.random.default_rng(7)
        a = rng.uniform(0.3, 1.0, 20)
        n = 4000
        dt = 1.0 / n
        h = a.copy()
        ha = np.ones_like(a)
        t = 0.0
        for _ in range(n):
            # RK4 on the coupled (h, h_a) system
            def rhs(tt, state):
                hh, hha = state
                from perilab.nonlinearity import eval_f
                return np.stack([eval_f(bistable_forced, tt, hh),
                                 eval_fu(bistable_forced, tt, hh) * hha])
            s = np.stack([h, ha])
            k1 = rhs(t, s)
            k2 = rhs(t + dt / 2, s + dt / 2 * k1)
            k3 = rhs(t + dt / 2, s + dt / 2 * k2)
            k4 = rhs(t + dt, s + dt * k3)
            s = s + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            h, ha = s
            t += dt
        assert np.min(ha) >= m1


class TestEpsilonStar:
    def test_endpoints_zero(self, bistable_forced, bistable_forced_scan):
        lo = orbit_at(bistable_forced_scan, 0.3)
        hi = orbit_at(bistable_forced_scan, 1.0)
        assert epsilon_star(bistable_forced, lo.a0, lo, hi) == 0.0
        assert epsilon_star(bistable_forced, hi.a0, lo, hi) == 0.0

    def test_monostable_midpoint_residual(self, logistic_free, bistable_free):
        lo = constant_orbit(logistic_free, 0.0)
        hi = constant_orbit(logistic_free, 1.0)
        eps = epsilon_star(logistic_free, 0.5, lo, hi)
        assert eps > 0
        # refinement oracle: re-integrate at 10x finer dt
        y, _ = _rk4(logistic_free, 0.5, 0.0, 1.0, 20000, eps=eps)
        assert abs(float(y) - 0.5) < 1e-8

    def test_monotone_in_eps(self, logistic_free):
        lo = constant_orbit(logistic_free, 0.0)
        hi = constant_orbit(logistic_free, 1.0)
        eps_grid = np.linspace(0.0, 0.2, 9)
        vals = [float(_rk4(logistic_free, 0.5, 0.0, 1.0, 2000, eps=e)[0]) for e in eps_grid]
        assert np.all(np.diff(vals) < 0)

    def test_non_increasing_interior_rejected(self, bistable_free, bistable_free_scan):
        lo = orbit_at(bistable_free_scan, 0.0)
        hi = orbit_at(bistable_free_scan, 0.3)
        with pytest.raises((BracketError, DomainError)):
            epsilon_star(bistable_free, 0.15, lo, hi)


@pytest.fixture(scope="module")
def profile(bistable_forced, bistable_forced_scan):
    lo = orbit_at(bistable_forced_scan, 0.3)
    hi = orbit_at(bistable_forced_scan, 1.0)
    return build_perturbation_g(bistable_forced, lo, hi, n_a=41)


class TestPerturbationProfile:
    def test_endpoints_vanish(self, profile):
        assert profile.g_values[0] == 0.0 and profile.g_values[-1] == 0.0

    def test_positive_and_capped_inside(self, profile):
        inside = slice(1, -1)
        assert np.all(profile.g_values[inside] > 0)
        assert np.all(profile.g_values[inside] <= 0.5 * profile.eps_star[inside] + 1e-15)

    def test_slope_audit(self, profile):
        slopes = np.abs(np.diff(profile.g_values) / np.diff(profile.a_grid))
        assert np.max(slopes) <= profile.slope_bound + 1e-12

    def test_perturbed_map_still_increases(self, bistable_forced, profile):
        # h(T; a; g(a)) > a for interior samples
        a = np.linspace(profile.a_lo, profile.a_hi, 52)[1:-1]
        y, _ = _rk4(bistable_forced, a, 0.0, 1.0, 4000, eps=profile.g(a))
        assert np.all(y > a)

    def test_eps_star_consistency_on_grid(self, bistable_forced, profile):
        inner = slice(1, -1)
        y, _ = _rk4(bistable_forced, profile.a_grid[inner], 0.0, 1.0, 2000,
                    eps=profile.eps_star[inner])
        assert np.max(np.abs(y - profile.a_grid[inner])) < 1e-9

    def test_hypothesis_violation_raises(self, bistable_forced, bistable_forced_scan):
        lo = orbit_at(bistable_forced_scan, 0.0)
        hi = orbit_at(bistable_forced_scan, 1.0)
        with pytest.raises(HypothesisError):
            build_perturbation_g(bistable_forced, lo, hi, n_a=31)

    def test_perturbed_variational_floor(self, bistable_forced, bistable_forced_scan, profile):
        lo = orbit_at(bistable_forced_scan, 0.3)
        hi = orbit_at(bistable_forced_scan, 1.0)
        c1, _ = derivative_bounds(bistable_forced, lo, hi)
        m1_obs, m2, m3 = perturbed_variational_bounds(bistable_forced, profile)
        assert m1_obs >= 0.5 * np.exp(-c1 * 1.0)
        assert m2 > 0 and m3 > 0
