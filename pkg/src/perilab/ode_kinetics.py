"""Kinetics of h_t = f(t, h): period maps, periodic orbits, stability, and
the perturbation construction feeding the Dirichlet-interval build.

Everything here is a pure function of an immutable NonlinearitySpec, so
independent a-scans may run concurrently; results merge by grid index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import BracketError, DivergenceError, DomainError, HypothesisError
from .nonlinearity import NonlinearitySpec, derivative_bounds, eval_f, eval_fu, eval_fuu
from .util import composite_simpson, parallel_map

# Defaults: period maps are smooth, so over-resolving is cheap.
ODE_STEPS_PER_PERIOD = 2000
TOL_PER = 1e-7     # |P(a) - a| below this counts as periodic
TOL_ROOT = 1e-9    # residual target for root/bisection refinements
PROBE_EPS = 1e-3   # default probe offset for the stability taxonomy
FLOQUET_SIGN_TOL = 1e-6
CONTINUUM_MIN_NODES = 3


class TrajectoryClass(Enum):
    PERIODIC = "periodic"
    MONOTONE_INCREASING = "monotone_increasing"
    MONOTONE_DECREASING = "monotone_decreasing"


class Stability(Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"
    DEGENERATE = "degenerate"


@dataclass
class Trajectory:
    """Dense solution of h_t = f(t, h) - eps from a given initial value."""
    t: np.ndarray
    h: np.ndarray
    richardson_error: float
    eps: float = 0.0

    def value(self, t):
        return np.interp(t, self.t, self.h)


def _rk4(spec: NonlinearitySpec, a, t0: float, t1: float, n_steps: int,
         eps=0.0, record: bool = False, u_max: Optional[float] = None,
         clamp_nonnegative: bool = False):
    """Classical RK4 with a fixed step; vectorized over the initial value.

    ``eps`` may be a scalar or an array broadcasting against ``a`` (the
    perturbed flow h_t = f(t, h) - eps).
    """
    y = np.array(a, dtype=float, copy=True)
    cap = u_max if u_max is not None else 10.0 * max(1.0, float(np.max(np.abs(y))) + 1.0)
    dt = (t1 - t0) / n_steps
    path = None
    if record:
        path = np.empty((n_steps + 1,) + y.shape)
        path[0] = y
    t = t0
    for k in range(n_steps):
        k1 = eval_f(spec, t, y) - eps
        k2 = eval_f(spec, t + 0.5 * dt, y + 0.5 * dt * k1) - eps
        k3 = eval_f(spec, t + 0.5 * dt, y + 0.5 * dt * k2) - eps
        k4 = eval_f(spec, t + dt, y + dt * k3) - eps
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if clamp_nonnegative:
            y = np.maximum(y, 0.0)
        t = t0 + (k + 1) * dt
        if record:
            path[k + 1] = y
        if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > cap:
            raise DivergenceError(f"trajectory exceeded u_max = {cap:.3g} at t = {t:.6g}")
    return (y, path) if record else (y, None)


def integrate_h(spec: NonlinearitySpec, a: float, t_end: float, *,
                eps: float = 0.0, steps_per_period: int = ODE_STEPS_PER_PERIOD,
                u_max: Optional[float] = None) -> Trajectory:
    """Integrate h_t = f(t, h) - eps, h(0) = a, up to t_end.

    Fixed-step RK4 at steps_per_period per forcing period, with one
    Richardson halving recorded as an error estimate. The unperturbed flow
    (eps == 0) is clamped to stay nonnegative; the perturbed flow is not,
    since the sink legitimately drives it below zero.

    Raises DivergenceError on blow-up beyond u_max.
    """
    if np.ndim(a) == 0 and a < 0:
        raise DomainError(f"initial value must be nonnegative, got {a}")
    if t_end <= 0:
        raise DomainError(f"t_end must be positive, got {t_end}")
    clamp = np.all(np.asarray(eps) == 0.0)
    n = max(2, int(round(steps_per_period * t_end / spec.period_T)))
    _, coarse = _rk4(spec, a, 0.0, t_end, n, eps=eps, record=True,
                     u_max=u_max, clamp_nonnegative=clamp)
    _, fine = _rk4(spec, a, 0.0, t_end, 2 * n, eps=eps, record=True,
                   u_max=u_max, clamp_nonnegative=clamp)
    err = float(np.max(np.abs(fine[::2] - coarse)))
    t = np.linspace(0.0, t_end, 2 * n + 1)
    return Trajectory(t=t, h=fine, richardson_error=err, eps=float(np.max(np.asarray(eps))))


def poincare_map(spec: NonlinearitySpec, a, *, eps=0.0,
                 steps_per_period: int = ODE_STEPS_PER_PERIOD, u_max=None):
    """Period map P(a) = h(T; a); vectorized over ``a``."""
    clamp = np.all(np.asarray(eps) == 0.0)
    y, _ = _rk4(spec, a, 0.0, spec.period_T, steps_per_period, eps=eps,
                u_max=u_max, clamp_nonnegative=clamp)
    return float(y) if np.ndim(a) == 0 else y


def classify_trajectory(spec: NonlinearitySpec, a: float, *,
                        tol_per: float = TOL_PER,
                        steps_per_period: int = ODE_STEPS_PER_PERIOD) -> TrajectoryClass:
    """T-shift classification from the sign of h(T; a) - a."""
    if a < 0:
        raise DomainError(f"initial value must be nonnegative, got {a}")
    gap = poincare_map(spec, a, steps_per_period=steps_per_period) - a
    if abs(gap) < tol_per:
        return TrajectoryClass.PERIODIC
    return TrajectoryClass.MONOTONE_INCREASING if gap > 0 else TrajectoryClass.MONOTONE_DECREASING


@dataclass
class PeriodicOrbit:
    """A T-periodic solution p(t) of the kinetics ODE with its diagnostics."""
    a0: float
    t_samples: np.ndarray
    p_samples: np.ndarray
    floquet: float
    stability_above: Stability
    stability_below: Stability
    in_Yper: bool
    probe_eps: float = PROBE_EPS
    continuum_edge: bool = False
    below_vacuous: bool = False

    def value(self, t):
        """p(t), extended T-periodically."""
        T = self.t_samples[-1]
        return np.interp(np.mod(t, T), self.t_samples, self.p_samples)

    @property
    def linearly_stable(self) -> bool:
        return self.floquet < -FLOQUET_SIGN_TOL

    @property
    def linearly_unstable(self) -> bool:
        return self.floquet > FLOQUET_SIGN_TOL

    def __repr__(self):
        return (f"PeriodicOrbit(a0={self.a0:.6g}, floquet={self.floquet:.4g}, "
                f"above={self.stability_above.value}, below={self.stability_below.value}, "
                f"in_Yper={self.in_Yper})")


def constant_orbit(spec: NonlinearitySpec, level: float, n_t: int = 2001) -> PeriodicOrbit:
    """Build the orbit object for a constant solution (f(t, level) must be 0)."""
    ts = np.linspace(0.0, spec.period_T, n_t)
    res = float(np.max(np.abs(eval_f(spec, ts, np.full_like(ts, level)))))
    if res > 1e-10:
        raise DomainError(f"{level} is not a constant orbit: max |f| = {res:.3g}")
    return _make_orbit(spec, level)


def floquet_integral(spec: NonlinearitySpec, orbit: PeriodicOrbit) -> float:
    """Composite-Simpson value of the integral of f_u(t, p(t)) over a period.

    Negative values mean linear stability of the orbit.
    """
    ts, ps = orbit.t_samples, orbit.p_samples
    vals = eval_fu(spec, ts, ps)
    return composite_simpson(vals, ts[1] - ts[0])


def _sign_with_tol(x: float, tol: float) -> int:
    if x > tol:
        return 1
    if x < -tol:
        return -1
    return 0


def _classify_side(signs: List[int], side: str) -> Stability:
    """Map probe signs of P(a) - a to a one-sided stability verdict.

    Above the orbit, flow back down (-1) is stable and flow away (+1) is
    unstable; mirrored below. An all-zero pattern is a plateau of periodic
    solutions: neutrally stable, since perturbed states simply stay put.
    """
    s = set(signs)
    if s == {0}:
        return Stability.STABLE
    attract, escape = (-1, 1) if side == "above" else (1, -1)
    if s == {attract}:
        return Stability.STABLE
    if s == {escape}:
        return Stability.UNSTABLE
    return Stability.DEGENERATE


def stability_taxonomy(spec: NonlinearitySpec, a0: float, *,
                       probe_eps: float = PROBE_EPS, tol_per: float = TOL_PER,
                       u_max: float = 10.0, clip_at_zero: bool = True,
                       steps_per_period: int = ODE_STEPS_PER_PERIOD):
    """Probe-based stability of the orbit through a0.

    Probes the period map at a0 +/- k*probe_eps/4, k = 1..4. Returns
    (above, below, in_Yper, below_vacuous). in_Yper is true iff
    P(a) >= a - tol_per for every probe above (T-monotone nondecreasing
    flow just above the orbit).

    With clip_at_zero (default), below-probes of the zero orbit are skipped
    and the below side is vacuously stable, since no admissible nonnegative
    perturbation exists there; pass clip_at_zero=False to get the strict
    contract (DomainError on probes leaving [0, u_max]).
    """
    ks = np.arange(1, 5) * (probe_eps / 4.0)
    above = a0 + ks
    below = a0 - ks
    if np.any(above > u_max):
        raise DomainError(f"probes above {a0} leave [0, {u_max}]")
    below_vacuous = False
    if np.any(below < 0.0):
        if not clip_at_zero:
            raise DomainError(f"probes below {a0} leave [0, {u_max}]")
        below_vacuous = True
    p_above = poincare_map(spec, above, steps_per_period=steps_per_period, u_max=u_max)
    s_above = [_sign_with_tol(float(p - a), tol_per) for p, a in zip(p_above, above)]
    st_above = _classify_side(s_above, "above")
    if below_vacuous:
        st_below = Stability.STABLE
    else:
        p_below = poincare_map(spec, below, steps_per_period=steps_per_period, u_max=u_max)
        s_below = [_sign_with_tol(float(p - a), tol_per) for p, a in zip(p_below, below)]
        st_below = _classify_side(s_below, "below")
    in_yper = all(s >= 0 for s in s_above)
    return st_above, st_below, in_yper, below_vacuous


def _make_orbit(spec: NonlinearitySpec, a0: float, *, probe_eps: float = PROBE_EPS,
                u_max: float = 10.0, continuum_edge: bool = False) -> PeriodicOrbit:
    n = ODE_STEPS_PER_PERIOD
    _, path = _rk4(spec, a0, 0.0, spec.period_T, n, record=True,
                   u_max=u_max, clamp_nonnegative=True)
    ts = np.linspace(0.0, spec.period_T, n + 1)
    above, below, in_yper, vac = stability_taxonomy(
        spec, a0, probe_eps=probe_eps, u_max=u_max)
    orbit = PeriodicOrbit(a0=float(a0), t_samples=ts, p_samples=path,
                          floquet=0.0, stability_above=above, stability_below=below,
                          in_Yper=in_yper, probe_eps=probe_eps,
                          continuum_edge=continuum_edge, below_vacuous=vac)
    orbit.floquet = floquet_integral(spec, orbit)
    return orbit


@dataclass
class OrbitScan:
    """Result of a periodic-orbit scan.

    ``orbits`` holds isolated fixed points of the period map plus one
    representative at each edge of any detected continuum; ``continua`` are
    the plateau intervals themselves (combustion ignition ranges), reported
    as intervals rather than as discrete orbits.
    """
    orbits: List[PeriodicOrbit]
    continua: List[Tuple[float, float]]
    a_nodes: np.ndarray
    p_values: np.ndarray
    floquet_along: np.ndarray

    def nearest_orbit(self, level: float) -> Tuple[Optional[PeriodicOrbit], float]:
        if not self.orbits:
            return None, np.inf
        dists = [abs(level - o.a0) for o in self.orbits]
        i = int(np.argmin(dists))
        return self.orbits[i], dists[i]

    def escape_level(self, tol_per: float = TOL_PER) -> Optional[float]:
        """Largest level below which no scanned trajectory increases.

        States whose sup falls below this level can never re-ignite; on a
        zero-Dirichlet truncation they decay to 0.
        """
        rising = self.p_values - self.a_nodes > tol_per
        if not np.any(rising):
            return None
        k = int(np.argmax(rising))
        return float(self.a_nodes[k - 1]) if k > 0 else 0.0

    @property
    def top_orbit(self) -> Optional[PeriodicOrbit]:
        return max(self.orbits, key=lambda o: o.a0) if self.orbits else None


def _bisect_root(spec, a_lo, a_hi, f_lo, f_hi, tol_root, steps_per_period):
    """Bisect P(a) - a on a sign-change bracket down to |residual| < tol_root."""
    for _ in range(200):
        mid = 0.5 * (a_lo + a_hi)
        f_mid = poincare_map(spec, mid, steps_per_period=steps_per_period) - mid
        if abs(f_mid) < 0.5 * tol_root or (a_hi - a_lo) < 1e-15:
            return mid
        if (f_mid > 0) == (f_lo > 0):
            a_lo, f_lo = mid, f_mid
        else:
            a_hi, f_hi = mid, f_mid
    return 0.5 * (a_lo + a_hi)


def _refine_plateau_edge(spec, a_in, a_out, tol_per, steps_per_period):
    """Locate a plateau edge between an inside and an outside node.

    Bisects the indicator |P(a) - a| down to a 1e-12 gap. Returns
    (edge_estimate, representative) where the representative is nudged one
    bracket-width into the plateau, so its sampled trajectory stays on the
    flat side (flat-side Floquet integral, residual 0).
    """
    for _ in range(100):
        mid = 0.5 * (a_in + a_out)
        gap = abs(poincare_map(spec, mid, steps_per_period=steps_per_period) - mid)
        if gap <= 1e-12:
            a_in = mid
        else:
            a_out = mid
        if abs(a_out - a_in) < 1e-12:
            break
    nudge = 10.0 * max(abs(a_out - a_in), 1e-12)
    rep = a_in - nudge if a_in < a_out else a_in + nudge
    return a_in, rep


def find_periodic_orbits(spec: NonlinearitySpec, a_range: Tuple[float, float],
                         n_scan: int = 121, *, tol_per: float = TOL_PER,
                         tol_root: float = TOL_ROOT, u_max: float = 10.0,
                         probe_eps: float = PROBE_EPS,
                         steps_per_period: int = ODE_STEPS_PER_PERIOD) -> OrbitScan:
    """Scan the period map for fixed points and plateaus.

    Sign changes of P(a) - a between scan nodes are bisected to tol_root.
    Runs of >= 3 consecutive nodes with |P(a) - a| < tol_per are flagged as a
    continuum and reported as an interval with refined edges; only the edge
    representatives enter the orbit list. An empty result is valid.
    """
    a_lo, a_hi = a_range
    if a_lo < 0 or a_hi <= a_lo:
        raise DomainError(f"bad scan range [{a_lo}, {a_hi}]")
    nodes = np.linspace(a_lo, a_hi, n_scan)
    p_nodes, paths = _rk4(spec, nodes, 0.0, spec.period_T, steps_per_period,
                          record=True, u_max=u_max, clamp_nonnegative=True)
    # Floquet-type integral along every scanned trajectory (trapezoid).
    ts = np.linspace(0.0, spec.period_T, steps_per_period + 1)
    fu_path = np.empty_like(paths)
    for i, t in enumerate(ts):
        fu_path[i] = eval_fu(spec, float(t), paths[i])
    floq_along = np.trapezoid(fu_path, dx=ts[1] - ts[0], axis=0)

    gaps = p_nodes - nodes
    is_zero = np.abs(gaps) < tol_per

    roots: List[float] = []
    edge_flags: List[bool] = []
    continua: List[Tuple[float, float]] = []

    # Zero-node runs: plateaus and isolated touches.
    i = 0
    while i < n_scan:
        if not is_zero[i]:
            i += 1
            continue
        j = i
        while j + 1 < n_scan and is_zero[j + 1]:
            j += 1
        run = j - i + 1
        if run >= CONTINUUM_MIN_NODES:
            left = left_rep = nodes[i]
            if i > 0:
                left, left_rep = _refine_plateau_edge(spec, nodes[i], nodes[i - 1], tol_per, steps_per_period)
            right = right_rep = nodes[j]
            if j + 1 < n_scan:
                right, right_rep = _refine_plateau_edge(spec, nodes[j], nodes[j + 1], tol_per, steps_per_period)
            continua.append((float(left), float(right)))
            roots.extend([float(left_rep), float(right_rep)])
            edge_flags.extend([True, True])
        else:
            for k in range(i, j + 1):
                roots.append(float(nodes[k]))
                edge_flags.append(False)
        i = j + 1

    # Sign-change brackets between strictly nonzero nodes.
    brackets = []
    for k in range(n_scan - 1):
        if is_zero[k] or is_zero[k + 1]:
            continue
        if (gaps[k] > 0) != (gaps[k + 1] > 0):
            brackets.append((nodes[k], nodes[k + 1], gaps[k], gaps[k + 1]))

    def _solve(br):
        return _bisect_root(spec, br[0], br[1], br[2], br[3], tol_root, steps_per_period)

    for r in parallel_map(_solve, brackets):
        roots.append(float(r))
        edge_flags.append(False)

    # Deduplicate (plateau edges win over nearby plain roots).
    order = np.argsort(roots)
    uniq: List[Tuple[float, bool]] = []
    for idx in order:
        r, e = roots[idx], edge_flags[idx]
        if uniq and abs(r - uniq[-1][0]) < max(1e-6, 2 * probe_eps / 100):
            if e and not uniq[-1][1]:
                uniq[-1] = (r, e)
            continue
        uniq.append((r, e))

    orbits = [_make_orbit(spec, r, probe_eps=probe_eps, u_max=u_max, continuum_edge=e)
              for r, e in uniq]
    return OrbitScan(orbits=orbits, continua=continua, a_nodes=nodes,
                     p_values=p_nodes, floquet_along=floq_along)


# -- variational bounds ----------------------------------------------------

def variational_bounds(spec: NonlinearitySpec, p_minus: PeriodicOrbit,
                       p_plus: PeriodicOrbit) -> Tuple[float, float]:
    """Closed-form bounds (M1, M2) on h_a and h_aa/h_a over the orbit tube.

    M1 = exp(-C1 T) lower-bounds h_a(t; a); M2 bounds |h_aa/h_a|, taken as
    the larger of the two comparison expressions, with the C1 -> 0 limit
    C2 T exp(2 C1 T). C1, C2 come from derivative_bounds (5% safety).
    """
    C1, C2 = derivative_bounds(spec, p_minus, p_plus)
    T = spec.period_T
    M1 = float(np.exp(-C1 * T))
    if C1 == 0.0:
        M2 = float(C2 * T * np.exp(2.0 * C1 * T))
    else:
        amp = C2 * np.exp(2.0 * C1 * T) / C1
        M2 = float(max(amp * (-np.expm1(-C1 * T)), amp * np.expm1(C1 * T)))
    return M1, M2


# -- perturbation construction ---------------------------------------------

@dataclass
class PerturbationProfile:
    """Smooth sink amplitude g(a) >= 0 on [p_minus(0), p_plus(0)].

    g vanishes at both endpoints, satisfies 0 < g(a) <= eps_star(a)/2 inside,
    and its grid slopes obey |dg/da| <= slope_bound, which keeps the
    perturbed variational flow uniformly positive.
    """
    a_grid: np.ndarray
    g_values: np.ndarray
    eps_star: np.ndarray
    C1: float
    slope_bound: float
    _spline: CubicSpline = field(repr=False, default=None)

    def __post_init__(self):
        if self._spline is None:
            self._spline = CubicSpline(self.a_grid, self.g_values, bc_type="natural")

    @property
    def a_lo(self) -> float:
        return float(self.a_grid[0])

    @property
    def a_hi(self) -> float:
        return float(self.a_grid[-1])

    def g(self, a):
        a = np.asarray(a, dtype=float)
        val = np.clip(self._spline(np.clip(a, self.a_lo, self.a_hi)), 0.0, None)
        out = np.where((a <= self.a_lo) | (a >= self.a_hi), 0.0, val)
        return float(out) if out.ndim == 0 else out

    def g_prime(self, a):
        a = np.asarray(a, dtype=float)
        val = self._spline(np.clip(a, self.a_lo, self.a_hi), 1)
        out = np.where((a <= self.a_lo) | (a >= self.a_hi), 0.0, val)
        return float(out) if out.ndim == 0 else out

    def g_second(self, a):
        a = np.asarray(a, dtype=float)
        val = self._spline(np.clip(a, self.a_lo, self.a_hi), 2)
        out = np.where((a <= self.a_lo) | (a >= self.a_hi), 0.0, val)
        return float(out) if out.ndim == 0 else out


def epsilon_star(spec: NonlinearitySpec, a: float, p_minus: PeriodicOrbit,
                 p_plus: PeriodicOrbit, *, tol_root: float = TOL_ROOT,
                 steps_per_period: int = ODE_STEPS_PER_PERIOD) -> float:
    """Sink strength at which the perturbed period map returns exactly to a.

    Bisects eps in h(T; a; eps) - a, where h solves h_t = f(t, h) - eps.
    Requires P(a) > a strictly inside (p_minus(0), p_plus(0)); returns 0 at
    the endpoints. Raises BracketError when no sign change exists.
    """
    lo_a, hi_a = p_minus.a0, p_plus.a0
    if abs(a - lo_a) < TOL_PER or abs(a - hi_a) < TOL_PER:
        return 0.0
    if not lo_a < a < hi_a:
        raise DomainError(f"a = {a} outside the orbit interval [{lo_a}, {hi_a}]")
    vals = _epsilon_star_grid(spec, np.asarray([a]), tol_root=tol_root,
                              steps_per_period=steps_per_period)
    return float(vals[0])


def _epsilon_star_grid(spec, a_vec, *, tol_root=TOL_ROOT,
                       steps_per_period=ODE_STEPS_PER_PERIOD):
    """Vectorized epsilon-star bisection over a grid of interior a values."""
    a_vec = np.asarray(a_vec, dtype=float)

    def gap(eps_vec):
        y, _ = _rk4(spec, a_vec, 0.0, spec.period_T, steps_per_period,
                    eps=eps_vec, clamp_nonnegative=False)
        return y - a_vec

    f0 = gap(np.zeros_like(a_vec))
    if np.any(f0 <= 0.0):
        k = int(np.argmax(f0 <= 0.0))
        raise BracketError(f"P(a) - a = {f0[k]:.3g} <= 0 at a = {a_vec[k]:.6g}; "
                           "interior flow must be T-monotone increasing")
    lo = np.zeros_like(a_vec)
    hi = np.maximum(f0 / spec.period_T, 1e-8)
    for _ in range(80):
        mask = gap(hi) > 0.0
        if not np.any(mask):
            break
        hi = np.where(mask, 2.0 * hi, hi)
    else:
        raise BracketError("no sink strength reverses the period map")
    out = np.full_like(a_vec, np.nan)
    done = np.zeros(a_vec.shape, dtype=bool)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = gap(mid)
        close = np.abs(fm) < 0.5 * tol_root
        out = np.where(close & ~done, mid, out)
        done |= close
        if np.all(done):
            break
        pos = fm > 0.0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
    if not np.all(done):
        rem = np.flatnonzero(~done)
        raise BracketError(f"epsilon-star bisection stalled at a = {a_vec[rem[0]]:.6g}")
    return out


def _bump(sigma):
    """Quartic bump 16 s^2 (1-s)^2 on [0, 1]; C1-flat at both ends."""
    return 16.0 * sigma ** 2 * (1.0 - sigma) ** 2


_BUMP_MAX_SLOPE = 32.0 * 0.09622504486493764  # max |d/ds of s^2(1-s)^2| * 16*2


def build_perturbation_g(spec: NonlinearitySpec, p_minus: PeriodicOrbit,
                         p_plus: PeriodicOrbit, *, n_a: int = 81,
                         tol_root: float = TOL_ROOT,
                         steps_per_period: int = ODE_STEPS_PER_PERIOD) -> PerturbationProfile:
    """Construct the perturbation amplitude g(a) between two orbits.

    Requires every interior trajectory to be T-monotone increasing
    (HypothesisError otherwise). g is the bump profile s(a) capped pointwise
    at half the local epsilon-star and at a constant enforcing the slope
    budget C1 / (2 (exp(C1 T) - 1)); a final slope-limiting sweep makes the
    grid slopes satisfy the budget exactly.
    """
    a_lo, a_hi = p_minus.a0, p_plus.a0
    if a_hi <= a_lo:
        raise DomainError(f"orbits must be ordered, got [{a_lo}, {a_hi}]")
    a = np.linspace(a_lo, a_hi, n_a)
    interior = a[1:-1]
    gaps = poincare_map(spec, interior, steps_per_period=steps_per_period) - interior
    if np.any(gaps <= TOL_PER):
        k = int(np.argmax(gaps <= TOL_PER))
        raise HypothesisError(
            f"trajectory at a = {interior[k]:.6g} is not T-monotone increasing "
            f"(P(a) - a = {gaps[k]:.3g}); the construction needs an increasing gap")

    eps_star_vals = np.zeros(n_a)
    eps_star_vals[1:-1] = _epsilon_star_grid(spec, interior, tol_root=tol_root,
                                             steps_per_period=steps_per_period)

    C1, _ = derivative_bounds(spec, p_minus, p_plus)
    T = spec.period_T
    slope_bound = C1 / (2.0 * np.expm1(C1 * T)) if C1 > 0 else np.inf
    width = a_hi - a_lo
    kappa = slope_bound * width / _BUMP_MAX_SLOPE if np.isfinite(slope_bound) else np.inf

    sigma = (a - a_lo) / width
    g = _bump(sigma) * np.minimum(0.5 * eps_star_vals, kappa)
    g[0] = g[-1] = 0.0

    # Slope-limiting sweeps; only ever lower g, so g <= eps_star/2 survives.
    if np.isfinite(slope_bound):
        da = width / (n_a - 1)
        cap = slope_bound * da
        for i in range(1, n_a):
            g[i] = min(g[i], g[i - 1] + cap)
        for i in range(n_a - 2, -1, -1):
            g[i] = min(g[i], g[i + 1] + cap)
    return PerturbationProfile(a_grid=a, g_values=g, eps_star=eps_star_vals,
                               C1=C1, slope_bound=float(slope_bound))


def perturbed_variational_bounds(spec: NonlinearitySpec, profile: PerturbationProfile,
                                 *, safety: float = 1.1,
                                 steps_per_period: int = ODE_STEPS_PER_PERIOD):
    """Numerical bounds on the perturbed flow H(t; a) and its a-derivatives.

    Integrates, over the profile's a-grid, the system

        H'    = f(t, H) - g(a)
        H_a'  = f_u(t, H) H_a - g'(a)
        H_aa' = f_uu(t, H) H_a^2 + f_u(t, H) H_aa - g''(a)

    and returns (M1_obs, M2, M3): the observed minimum of H_a, and
    safety-inflated suprema of H_a and |H_aa / H_a|. Tighter than the
    closed-form worst cases, which shrinks the minimal feasible half-width.
    """
    a = profile.a_grid
    T = spec.period_T
    g = profile.g_values
    gp = profile.g_prime(a)
    gpp = profile.g_second(a)

    n = steps_per_period
    dt = T / n
    H = a.copy()
    Ha = np.ones_like(a)
    Haa = np.zeros_like(a)
    min_ha, max_ha, max_ratio = np.inf, -np.inf, 0.0

    def rhs(t, state):
        h, ha, haa = state
        fu = eval_fu(spec, t, h)
        fuu = eval_fuu(spec, t, h)
        return np.stack([eval_f(spec, t, h) - g,
                         fu * ha - gp,
                         fuu * ha * ha + fu * haa - gpp])

    state = np.stack([H, Ha, Haa])
    t = 0.0
    for k in range(n):
        min_ha = min(min_ha, float(np.min(state[1])))
        max_ha = max(max_ha, float(np.max(state[1])))
        max_ratio = max(max_ratio, float(np.max(np.abs(state[2] / state[1]))))
        k1 = rhs(t, state)
        k2 = rhs(t + 0.5 * dt, state + 0.5 * dt * k1)
        k3 = rhs(t + 0.5 * dt, state + 0.5 * dt * k2)
        k4 = rhs(t + dt, state + dt * k3)
        state = state + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        t += dt
    min_ha = min(min_ha, float(np.min(state[1])))
    max_ha = max(max_ha, float(np.max(state[1])))
    max_ratio = max(max_ratio, float(np.max(np.abs(state[2] / state[1]))))
    if min_ha <= 0:
        raise HypothesisError(f"perturbed variational flow lost positivity: min H_a = {min_ha:.3g}")
    return min_ha, safety * max_ha, safety * max_ratio
