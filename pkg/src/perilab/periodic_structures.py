"""Constructive route to symmetrically decreasing periodic Dirichlet solutions.

Between an unstable-from-above orbit p_minus and the stable orbit p_plus
sitting over it, the construction runs:

1. a perturbation amplitude g(a) (ode_kinetics.build_perturbation_g),
2. variational bounds on the perturbed flow giving constants c1, c2,
3. the phase-plane boundary value problem
       phi'' - c1 (phi')^2 = -c2 g(phi),  phi(+-R) = p_minus(0),
   reduced by phi_tilde = exp(-c1 p_minus(0)) - exp(-c1 phi) to the
   monostable problem phi_tilde'' + g_tilde(phi_tilde) = 0 and solved by
   shooting,
4. a monotone parabolic iteration from phi: each period map is certified
   nondecreasing until the profile cycle settles into a T-periodic,
   symmetrically decreasing Dirichlet solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .errors import CertificateError, DomainError, DomainTooSmallError, NoConvergenceError
from .nonlinearity import NonlinearitySpec
from .ode_kinetics import (PerturbationProfile, PeriodicOrbit, build_perturbation_g,
                           perturbed_variational_bounds)
from .pde_solver import Evolution, Field, Grid, SolverConfig

TOL_FIX = 1e-6          # L-inf period-map tolerance for convergence
MONOTONE_SLACK = 1e-9   # allowed per-node backsliding of the iteration
R_SEARCH_START = 10.0
R_SEARCH_CAP = 160.0
MIN_C1 = 1e-8           # guard for the exponential transform degeneracy


@dataclass
class PhasePlaneSolution:
    """Symmetric solution of the quadratic-gradient two-point BVP."""
    R: float
    phi: Field
    c1: float
    c2: float
    residual: float
    shoot_amplitude: float  # phi_tilde(0) in the reduced coordinates

    @property
    def center_value(self) -> float:
        return float(self.phi.values[self.phi.grid.n_x // 2])


def _reduced_g(profile: PerturbationProfile, c1: float, c2: float):
    """g_tilde(q) of the reduced monostable problem, zero-extended outside
    [0, q_bar]."""
    lo = profile.a_lo
    e_lo = math.exp(-c1 * lo)
    q_bar = e_lo - math.exp(-c1 * profile.a_hi)

    def g_tilde(q):
        q = np.asarray(q, dtype=float)
        inside = (q > 0.0) & (q < q_bar)
        qq = np.clip(q, 0.0, q_bar * (1.0 - 1e-15))
        phi = -np.log(e_lo - qq) / c1
        val = c1 * c2 * (e_lo - qq) * profile.g(phi)
        out = np.where(inside, val, 0.0)
        return float(out) if out.ndim == 0 else out

    return g_tilde, q_bar


def _shoot_batch(g_tilde, A_vec: np.ndarray, R: float, n_steps: int):
    """Integrate phi'' = -g_tilde(phi) from (A, 0) to x = R for a batch of
    center amplitudes; returns (phi(R), first zero-crossing position)."""
    q = np.array(A_vec, dtype=float)
    v = np.zeros_like(q)
    h = R / n_steps
    x_hit = np.full_like(q, np.inf)
    alive = np.ones(q.shape, dtype=bool)
    x = 0.0
    for k in range(n_steps):
        k1q, k1v = v, -g_tilde(q)
        q2 = q + 0.5 * h * k1q
        k2q, k2v = v + 0.5 * h * k1v, -g_tilde(q2)
        q3 = q + 0.5 * h * k2q
        k3q, k3v = v + 0.5 * h * k2v, -g_tilde(q3)
        q4 = q + h * k3q
        k4q, k4v = v + h * k3v, -g_tilde(q4)
        q_new = q + (h / 6.0) * (k1q + 2 * k2q + 2 * k3q + k4q)
        v = v + (h / 6.0) * (k1v + 2 * k2v + 2 * k3v + k4v)
        x += h
        crossed = alive & (q_new <= 0.0)
        if np.any(crossed):
            x_hit[crossed] = x
            alive &= ~crossed
        q = q_new
    return q, x_hit


def solve_phase_plane(spec: NonlinearitySpec, profile: PerturbationProfile,
                      c1: float, c2: float, R: float, *, n_x: Optional[int] = None,
                      dx_target: float = 0.04, scan_points: int = 96) -> PhasePlaneSolution:
    """Shooting solve of the quadratic-gradient BVP on [-R, R].

    Bisection runs on the reduced center amplitude A = phi_tilde(0) in
    (0, q_bar) so that phi_tilde(R) = 0, taking the upper solution branch.
    Raises DomainTooSmallError when no amplitude reaches x = R; the message
    carries the smallest feasible half-width seen in the scan.
    """
    if c1 < MIN_C1:
        raise DomainError(f"c1 = {c1:.3g} below the transform guard {MIN_C1}")
    if c2 <= 0 or R <= 0:
        raise DomainError("c2 and R must be positive")
    g_tilde, q_bar = _reduced_g(profile, c1, c2)

    if n_x is None:
        n_half = max(9, int(round(R / dx_target)) + 1)
        n_x = 2 * n_half - 1
    else:
        if n_x % 2 == 0:
            raise DomainError("n_x must be odd for a symmetric grid")
        n_half = (n_x + 1) // 2
    n_steps = 4 * (n_half - 1)

    # Uniform scan plus a dyadic approach to the top amplitude: the top
    # equilibrium is degenerate, so the transit length blows up only as
    # A -> q_bar and large R needs amplitudes exponentially close to it.
    uniform = np.linspace(1.0 / scan_points, 1.0 - 1.0 / scan_points, scan_points - 1)
    dyadic = 1.0 - np.power(0.5, np.arange(int(np.ceil(np.log2(scan_points))), 48))
    A_scan = q_bar * np.unique(np.concatenate([uniform, dyadic]))
    F, x_hit = _shoot_batch(g_tilde, A_scan, R, n_steps)
    neg = np.flatnonzero(F < 0.0)
    if neg.size == 0:
        finite_hits = x_hit[np.isfinite(x_hit)]
        hint = (f"smallest feasible half-width seen is about {np.min(finite_hits):.3g}"
                if finite_hits.size else f"no shot reached zero by x = {R}")
        raise DomainTooSmallError(
            f"phase-plane shooting found no bracket at R = {R}; {hint}")
    hi_idx = neg[-1] + 1
    if hi_idx >= A_scan.size:
        raise DomainTooSmallError(
            f"phase-plane bracket touches the top amplitude q_bar at R = {R}")
    A_lo, A_hi = A_scan[neg[-1]], A_scan[hi_idx]
    for _ in range(200):
        mid = 0.5 * (A_lo + A_hi)
        f_mid, _ = _shoot_batch(g_tilde, np.asarray([mid]), R, n_steps)
        if f_mid[0] < 0.0:
            A_lo = mid
        else:
            A_hi = mid
        if A_hi - A_lo < 1e-16 * q_bar:
            break
    A_star = A_hi  # the side whose trajectory stays nonnegative through R

    # Final pass at A_star, recording the half profile.
    q = np.full(1, A_star)
    v = np.zeros(1)
    h = R / n_steps
    half = np.empty(n_half)
    half[0] = A_star
    keep = n_steps // (n_half - 1)
    for k in range(n_steps):
        k1q, k1v = v, -g_tilde(q)
        q2 = q + 0.5 * h * k1q
        k2q, k2v = v + 0.5 * h * k1v, -g_tilde(q2)
        q3 = q + 0.5 * h * k2q
        k3q, k3v = v + 0.5 * h * k2v, -g_tilde(q3)
        q4 = q + h * k3q
        k4q, k4v = v + h * k3v, -g_tilde(q4)
        q = q + (h / 6.0) * (k1q + 2 * k2q + 2 * k3q + k4q)
        v = v + (h / 6.0) * (k1v + 2 * k2v + 2 * k3v + k4v)
        if (k + 1) % keep == 0:
            half[(k + 1) // keep] = q[0]
    half = np.clip(half, 0.0, q_bar * (1.0 - 1e-15))
    half[-1] = 0.0

    e_lo = math.exp(-c1 * profile.a_lo)
    phi_half = -np.log(e_lo - half) / c1
    vals = np.concatenate([phi_half[::-1], phi_half[1:]])
    grid = Grid(-R, R, n_x)
    phi = Field(grid, vals, time_stamp=0.0)

    dx = grid.dx
    lap = (vals[:-2] - 2.0 * vals[1:-1] + vals[2:]) / dx ** 2
    grad = (vals[2:] - vals[:-2]) / (2.0 * dx)
    res = lap - c1 * grad ** 2 + c2 * profile.g(vals[1:-1])
    return PhasePlaneSolution(R=R, phi=phi, c1=c1, c2=c2,
                              residual=float(np.max(np.abs(res))),
                              shoot_amplitude=float(A_star))


@dataclass
class PeriodicDirichletSolution:
    """T-periodic, symmetrically decreasing solution on [-R, R] with
    Dirichlet data p_minus(t), produced by the monotone iteration."""
    R: float
    phase_times: List[float]
    profile_cycle: List[Field]
    period_residual: float
    monotone_certificate: bool
    periods_used: int
    c1: float
    c2: float
    phase_plane: PhasePlaneSolution
    g_profile: PerturbationProfile
    symmetry_residual: float
    sandwich_violation: float

    @property
    def grid(self) -> Grid:
        return self.profile_cycle[0].grid

    def phase0(self) -> Field:
        return self.profile_cycle[0]


def build_periodic_dirichlet(spec: NonlinearitySpec, p_minus: PeriodicOrbit,
                             p_plus: PeriodicOrbit, R: Optional[float] = None,
                             max_periods: int = 400, *, tol_fix: float = TOL_FIX,
                             dt: Optional[float] = None, dx_target: float = 0.04,
                             n_a: int = 81) -> PeriodicDirichletSolution:
    """Monotone iteration to the periodic Dirichlet solution over p_minus.

    With R omitted, the half-width doubles from 10 until the phase-plane
    problem becomes solvable (cap 160); the found R is reported, with no
    minimality claim. Raises CertificateError if a period map ever drops a
    node by more than 1e-9, and NoConvergenceError (carrying the partial
    result) if tol_fix is not reached within max_periods.
    """
    g_profile = build_perturbation_g(spec, p_minus, p_plus, n_a=n_a)
    _, m2, m3 = perturbed_variational_bounds(spec, g_profile)
    c1 = max(m3, MIN_C1)
    c2 = 1.0 / m2

    if R is not None:
        pp = solve_phase_plane(spec, g_profile, c1, c2, R, dx_target=dx_target)
    else:
        pp = None
        fail = None
        r_try = R_SEARCH_START
        while r_try <= R_SEARCH_CAP:
            try:
                pp = solve_phase_plane(spec, g_profile, c1, c2, r_try, dx_target=dx_target)
                break
            except DomainTooSmallError as exc:
                fail = exc
                r_try *= 2.0
        if pp is None:
            raise DomainTooSmallError(
                f"no feasible half-width up to {R_SEARCH_CAP}: {fail}")
    R = pp.R

    dt = dt if dt is not None else spec.period_T / 400.0
    cfg = SolverConfig(dt=dt, boundary=p_minus, u_max=max(10.0, 2.0 * p_plus.a0))
    evo = Evolution(spec, pp.phi, cfg, enforce_support_margin=False)

    prev = evo.u.copy()
    period_residual = math.inf
    certified = True
    periods = 0
    for m in range(max_periods):
        evo.advance_period()
        periods = m + 1
        drop = evo.u - prev
        worst = float(np.min(drop))
        if worst < -MONOTONE_SLACK:
            node = int(np.argmin(drop))
            raise CertificateError(
                f"monotone iteration lost {-worst:.3g} at node {node} "
                f"(x = {evo.grid.x[node]:.4g}) during period {periods}",
                node_index=node, period=periods)
        period_residual = float(np.max(np.abs(drop)))
        prev = evo.u.copy()
        if period_residual < tol_fix:
            break

    converged = period_residual < tol_fix

    # Record the limit cycle over one more period.
    start = Field(evo.grid, evo.u.copy(), time_stamp=0.0)
    evo.advance_period()
    sub = list(evo.trace.cycle_buffer)[-cfg.strobe_subsamples:]
    phases = [0.0] + [((t - 1e-12) % spec.period_T) + 1e-12 for t, _ in sub]
    cycle = [start] + [Field(evo.grid, v.copy(), time_stamp=t) for t, v in sub]
    period_residual = float(np.max(np.abs(cycle[-1].values - cycle[0].values)))

    sym = max(float(np.max(np.abs(f.values - f.values[::-1]))) for f in cycle)
    sandwich = 0.0
    for f in cycle:
        lo = p_minus.value(f.time_stamp)
        hi = p_plus.value(f.time_stamp)
        sandwich = max(sandwich,
                       float(np.max(lo - f.values)),
                       float(np.max(f.values - hi)))

    sol = PeriodicDirichletSolution(
        R=R, phase_times=phases, profile_cycle=cycle,
        period_residual=period_residual, monotone_certificate=certified,
        periods_used=periods, c1=c1, c2=c2, phase_plane=pp,
        g_profile=g_profile, symmetry_residual=sym, sandwich_violation=sandwich)
    if not converged and period_residual >= tol_fix:
        raise NoConvergenceError(
            f"period residual {period_residual:.3g} above {tol_fix} "
            f"after {max_periods} periods", partial=sol)
    return sol
