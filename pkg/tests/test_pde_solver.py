import numpy as np
import pytest

from perilab import (Evolution, Field, Grid, SolverConfig,
                     cole_hopf_log_convolution, evolve,
                     evolve_quadratic_gradient, heat_kernel_convolve,
                     kinetic_change_of_variables, support_hull, thomas_solve,
                     zero_spec)
from perilab.errors import (BlowUpError, ConfigError, DomainError, RangeError,
                            TruncationError)
from perilab.ode_kinetics import _rk4
from perilab.pde_solver import _CNDiffusion


def gaussian_field(L=40.0, n_x=2049, width=1.0):
    g = Grid(-L, L, n_x)
    return Field(g, np.exp(-(g.x / width) ** 2 / 2.0))


class TestTridiagonal:
    def test_thomas_reference(self):
        rng = np.random.default_rng(11)
        n = 200
        lower = rng.uniform(-1, 0, n - 1)
        upper = rng.uniform(-1, 0, n - 1)
        diag = 2.5 + rng.uniform(0, 1, n)  # diagonally dominant
        x_true = rng.standard_normal(n)
        rhs = diag * x_true
        rhs[:-1] += upper * x_true[1:]
        rhs[1:] += lower * x_true[:-1]
        x = thomas_solve(lower, diag, upper, rhs)
        assert np.max(np.abs(x - x_true)) < 1e-12

    def test_banded_cholesky_matches_thomas(self):
        n_x, dx, dt = 257, 0.05, 0.01
        cn = _CNDiffusion(n_x, dx, dt)
        rng = np.random.default_rng(12)
        u = rng.uniform(0, 1, n_x)
        u[0] = u[-1] = 0.0
        stepped = cn.step(u, 0.0, 0.0, 0.0, 0.0)
        r = dt / dx**2
        n_int = n_x - 2
        interior = u[1:-1]
        rhs = interior + 0.5 * r * (u[:-2] - 2 * interior + u[2:])
        ref = thomas_solve(np.full(n_int - 1, -r / 2), np.full(n_int, 1 + r),
                           np.full(n_int - 1, -r / 2), rhs)
        assert np.max(np.abs(stepped[1:-1] - ref)) < 1e-12


class TestEvolve:
    def test_zero_initial_stays_zero(self, bistable_forced):
        g = Grid(-20, 20, 257)
        u0 = Field(g, np.zeros(g.n_x))
        out, _ = evolve(bistable_forced, u0, SolverConfig(dt=1 / 64), 2.0)
        assert out.linf() == 0.0

    def test_heat_oracle_and_order(self):
        spec = zero_spec(T=1.0)
        cfg = SolverConfig(dt=1 / 400)
        errs = {}
        for n_x in (2049, 4097):
            u0 = gaussian_field(n_x=n_x)
            out, _ = evolve(spec, u0, cfg, 1.0)
            oracle = heat_kernel_convolve(u0, 1.0)
            errs[n_x] = np.max(np.abs(out.values - oracle.values))
        assert errs[2049] < 1e-3
        assert 3.4 < errs[2049] / errs[4097] < 4.6

    def test_sup_attained_inside_support_hull(self, bistable_forced):
        # sup-norm over the line equals the sup over [L1, L2]
        g = Grid(-40, 40, 1025)
        u0 = Field(g, np.where(np.abs(g.x) <= 2.0, 1.2, 0.0))
        evo = Evolution(bistable_forced, u0, SolverConfig(dt=1 / 400))
        for _ in range(8):
            evo.advance_period()
            u = evo.u
            inside = np.abs(g.x) <= 2.0
            assert u.max() <= u[inside].max() + 1e-12

    def test_monotone_tails(self, bistable_forced):
        # forward differences nonnegative left of L1, nonpositive right of L2
        g = Grid(-40, 40, 1025)
        u0 = Field(g, np.where(np.abs(g.x) <= 2.0, 1.0, 0.0))
        evo = Evolution(bistable_forced, u0, SolverConfig(dt=1 / 400))
        for _ in range(6):
            evo.advance_period()
            u = evo.u
            left = g.x < -2.0
            right = g.x > 2.0
            assert np.min(np.diff(u[left])) > -1e-9
            assert np.max(np.diff(u[right])) < 1e-9

    def test_comparison_principle_pairs(self, bistable_forced):
        rng = np.random.default_rng(5)
        g = Grid(-30, 30, 769)
        cfg = SolverConfig(dt=1 / 400)
        for _ in range(10):
            w = rng.uniform(1.0, 3.0)
            amp = rng.uniform(0.3, 1.0)
            lift = rng.uniform(0.05, 0.4)
            base = amp * np.exp(-(g.x / w) ** 2)
            base[np.abs(g.x) > 8 * w] = 0.0
            upper = base + lift * np.exp(-((g.x - 1.0) / w) ** 2)
            upper[np.abs(g.x - 1.0) > 8 * w] = 0.0
            e1 = Evolution(bistable_forced, Field(g, base), cfg)
            e2 = Evolution(bistable_forced, Field(g, np.maximum(base, upper)), cfg)
            for _ in range(3):
                e1.advance_period()
                e2.advance_period()
                assert np.min(e2.u - e1.u) > -1e-8

    def test_nonnegativity_and_clip_audit(self, bistable_forced):
        g = Grid(-40, 40, 2049)
        u0 = Field(g, np.where(np.abs(g.x) <= 2.0, 1.2, 0.0))
        evo = Evolution(bistable_forced, u0, SolverConfig(dt=1 / 400))
        for _ in range(10):
            evo.advance_period()
            assert np.min(evo.u) >= -1e-9
        assert evo.trace.clip_fraction < 1e-3

    def test_blow_up_detected(self):
        from perilab import custom_spec
        spec = custom_spec([(0, 2, 4.0)], T=1.0)  # h' = 4 u^2 blows up
        g = Grid(-20, 20, 513)
        u0 = Field(g, np.where(np.abs(g.x) <= 4.0, 2.0, 0.0))
        with pytest.raises(BlowUpError):
            evolve(spec, u0, SolverConfig(dt=1 / 400, u_max=8.0), 5.0)

    def test_truncation_error_on_leak(self, bistable_forced):
        g = Grid(-12, 12, 257)  # too small: the front reaches the wall
        u0 = Field(g, np.where(np.abs(g.x) <= 1.9, 1.2, 0.0))
        with pytest.raises(TruncationError):
            evolve(bistable_forced, u0, SolverConfig(dt=1 / 256), 60.0)

    def test_support_margin_enforced(self, bistable_forced):
        g = Grid(-10, 10, 257)
        u0 = Field(g, np.where(np.abs(g.x) <= 9.0, 0.5, 0.0))
        with pytest.raises(DomainError):
            Evolution(bistable_forced, u0, SolverConfig(dt=1 / 256))

    def test_dt_cap_enforced(self):
        g = Grid(-40, 40, 8193)
        with pytest.raises(ConfigError):
            SolverConfig(dt=1 / 100).validate_against(g)


class TestHeatKernel:
    def test_delta_like_bump(self):
        g = Grid(-10, 10, 4001)
        w = 0.1
        bump = np.maximum(0.0, 1.0 - np.abs(g.x) / w) / w  # unit mass hat
        u0 = Field(g, bump)
        for t in (0.1, 0.5, 1.0):
            out = heat_kernel_convolve(u0, t)
            exact = np.exp(-g.x**2 / (4 * t)) / np.sqrt(4 * np.pi * t)
            assert np.max(np.abs(out.values - exact)) / exact.max() < 0.02

    def test_constant_interior(self):
        g = Grid(-50, 50, 2001)
        u0 = Field(g, np.full(g.n_x, 0.7))
        out = heat_kernel_convolve(u0, 1.0)
        interior = np.abs(g.x) < 30
        assert np.max(np.abs(out.values[interior] - 0.7)) < 1e-12

    def test_mass_conservation(self):
        g = Grid(-40, 40, 2049)
        u0 = Field(g, np.where(np.abs(g.x) <= 3.0, 0.9, 0.0))
        out = heat_kernel_convolve(u0, 2.0)
        m0 = np.trapezoid(u0.values, dx=g.dx)
        m1 = np.trapezoid(out.values, dx=g.dx)
        assert abs(m1 - m0) < 1e-6

    def test_nonpositive_time_rejected(self):
        u0 = gaussian_field(n_x=257)
        with pytest.raises(DomainError):
            heat_kernel_convolve(u0, 0.0)


class TestQuadraticGradient:
    def test_m_zero_reduces_to_heat(self):
        g = Grid(-30, 30, 1537)
        w0 = Field(g, 0.4 * np.exp(-g.x**2))
        out = evolve_quadratic_gradient(w0, 0.0, SolverConfig(dt=0.002), 1.0)
        oracle = heat_kernel_convolve(w0, 1.0)
        assert np.max(np.abs(out.values - oracle.values)) < 1e-3

    def test_constants_invariant(self):
        g = Grid(-30, 30, 769)
        w0 = Field(g, np.full(g.n_x, 0.37))
        out = evolve_quadratic_gradient(w0, 1.0, SolverConfig(dt=0.002), 2.0)
        assert np.max(np.abs(out.values - 0.37)) < 1e-12

    def test_half_line_relaxation_to_delta0(self):
        # w(x, t) -> delta0 with monotone residual decay at x = 0
        g = Grid(-40.0, 0.5, 811)
        w0 = Field(g, np.zeros(g.n_x))
        i0 = g.index_of(0.0)
        prev = np.inf
        for t in (10.0, 20.0, 40.0):
            out = evolve_quadratic_gradient(w0, 1.0, SolverConfig(dt=0.005), t, delta0=0.05)
            r = abs(out.values[i0] - 0.05)
            assert r < prev
            prev = r
        assert prev < 5e-3

    def test_underflow_guard(self):
        g = Grid(-5, 5, 257)
        w0 = Field(g, np.full(g.n_x, 10.0))
        with pytest.raises(RangeError):
            evolve_quadratic_gradient(w0, 100.0, SolverConfig(dt=0.001), 0.1)


class TestColeHopf:
    def test_constant_profile(self):
        g = Grid(-30, 30, 1537)
        psi0 = Field(g, np.full(g.n_x, 0.44))
        out = cole_hopf_log_convolution(psi0, 1.3, 2.0)
        assert np.max(np.abs(out.values - 0.44)) < 1e-5

    def test_relaxation_to_far_field(self):
        # psi0 = q + compact bump relaxes to q in sup norm
        g = Grid(-30, 30, 1537)
        psi0 = Field(g, 0.3 + 0.7 * np.exp(-4 * g.x**2))
        prev = np.inf
        for t in (5.0, 20.0, 80.0):
            out = cole_hopf_log_convolution(psi0, 1.0, t)
            d = np.max(np.abs(out.values - 0.3))
            assert d < prev
            prev = d
        assert prev < 0.03

    def test_cross_check_with_quadratic_gradient(self):
        # -w solves the +M equation when w solves the -M equation
        g = Grid(-30, 30, 1537)
        w0 = 0.3 * np.exp(-g.x**2)
        num = evolve_quadratic_gradient(Field(g, w0), 1.0, SolverConfig(dt=0.002), 1.0)
        closed = cole_hopf_log_convolution(Field(g, -w0), 1.0, 1.0)
        assert np.max(np.abs(num.values + closed.values)) < 1e-3

    def test_bad_args(self):
        g = Grid(-5, 5, 129)
        psi0 = Field(g, np.zeros(g.n_x))
        with pytest.raises(DomainError):
            cole_hopf_log_convolution(psi0, 0.0, 1.0)
        with pytest.raises(DomainError):
            cole_hopf_log_convolution(psi0, 1.0, -1.0)


class TestKineticChangeOfVariables:
    def test_identity_at_phase_zero(self, bistable_forced):
        g = Grid(-10, 10, 257)
        u = Field(g, 0.2 + 0.6 * np.exp(-g.x**2 / 4))
        v = kinetic_change_of_variables(bistable_forced, u, 0.0)
        assert np.array_equal(v.values, u.values)

    def test_trivial_flow_identity(self):
        spec = zero_spec()
        g = Grid(-10, 10, 257)
        u = Field(g, 0.3 + 0.4 * np.exp(-g.x**2))
        v = kinetic_change_of_variables(spec, u, 0.6)
        assert np.max(np.abs(v.values - u.values)) < 1e-10

    def test_round_trip(self, bistable_forced):
        g = Grid(-10, 10, 257)
        u = Field(g, 0.2 + 0.6 * np.exp(-g.x**2 / 4))
        t = 0.37
        v = kinetic_change_of_variables(bistable_forced, u, t)
        steps = int(round(2000 * t))
        fwd, _ = _rk4(bistable_forced, v.values, 0.0, t, steps, clamp_nonnegative=True)
        assert np.max(np.abs(fwd - u.values)) < 1e-9


def test_support_hull():
    g = Grid(-10, 10, 201)
    f = Field(g, np.where((g.x >= -2) & (g.x <= 3), 1.0, 0.0))
    lo, hi = support_hull(f)
    assert lo == pytest.approx(-2.0, abs=g.dx)
    assert hi == pytest.approx(3.0, abs=g.dx)
