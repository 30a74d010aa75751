"""Truncated-line solver for u_t = u_xx + f(t, u) and its exact companions.

Time stepping is Strang-split: a half reaction step (Heun), a full
Crank-Nicolson diffusion step, and a second half reaction step, second order
in dt. The CN tridiagonal system has constant coefficients, so it is
Cholesky-factored once per run (symmetric positive definite, banded); a
reference Thomas recurrence is kept alongside for cross-checks.

The module also provides the exact oracles used to audit the solver: heat
kernel convolution, the quadratic-gradient equation w_t = w_xx - M w_x^2
solved through the substitution psi = exp(-M w), and the closed-form
log-convolution solution of psi_t = psi_xx + M psi_x^2.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded
from scipy.signal import convolve as _sig_convolve
from scipy.special import erfc

from .errors import BlowUpError, ConfigError, DomainError, RangeError, TruncationError
from .nonlinearity import NonlinearitySpec, eval_f
from .ode_kinetics import PeriodicOrbit, _rk4


@dataclass
class Grid:
    """Uniform spatial grid on [x_min, x_max] with n_x nodes."""
    x_min: float
    x_max: float
    n_x: int

    def __post_init__(self):
        if self.n_x < 3:
            raise ConfigError(f"grid.n_x: need at least 3 nodes, got {self.n_x}")
        if not self.x_max > self.x_min:
            raise ConfigError(f"grid: x_max {self.x_max} must exceed x_min {self.x_min}")
        self.x = np.linspace(self.x_min, self.x_max, self.n_x)

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n_x - 1)

    def index_of(self, x: float) -> int:
        return int(round((x - self.x_min) / self.dx))


@dataclass
class Field:
    """A spatial profile sampled on a grid at one instant."""
    grid: Grid
    values: np.ndarray
    time_stamp: float = 0.0
    support: Optional[Tuple[float, float]] = None  # convex hull [L1, L2] of spt(u0)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_x,):
            raise ConfigError(f"field values shape {self.values.shape} does not match grid n_x {self.grid.n_x}")

    def copy(self, **changes) -> "Field":
        out = replace(self, **changes)
        out.values = np.array(changes.get("values", self.values), copy=True)
        return out

    def linf(self) -> float:
        return float(np.max(np.abs(self.values)))


def support_hull(field: Field, tol: float = 1e-14) -> Optional[Tuple[float, float]]:
    idx = np.flatnonzero(np.abs(field.values) > tol)
    if idx.size == 0:
        return None
    return float(field.grid.x[idx[0]]), float(field.grid.x[idx[-1]])


@dataclass
class SolverConfig:
    """IMEX Crank-Nicolson configuration.

    ``boundary`` None means homogeneous Dirichlet; a PeriodicOrbit pins both
    ends to the orbit. dt must respect dt <= 10 dx^2 (keeps the explicit
    reaction split well inside its accuracy envelope).
    """
    dt: float
    u_max: float = 10.0
    boundary: Optional[PeriodicOrbit] = None
    leak_tol: float = 1e-4
    clip_threshold: float = 1e-12
    strobe_subsamples: int = 8

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError(f"solver.dt must be positive, got {self.dt}")
        if self.strobe_subsamples < 1:
            raise ConfigError("solver.strobe_subsamples must be >= 1")

    def validate_against(self, grid: Grid):
        cap = 10.0 * grid.dx ** 2
        if self.dt > cap + 1e-15:
            raise ConfigError(f"solver.dt = {self.dt:.3g} exceeds 10*dx^2 = {cap:.3g}; "
                              "refine dt or coarsen the grid")


# -- tridiagonal machinery --------------------------------------------------

def thomas_solve(lower: np.ndarray, diag: np.ndarray, upper: np.ndarray,
                 rhs: np.ndarray) -> np.ndarray:
    """Reference forward-elimination / back-substitution tridiagonal solve.

    No pivoting; intended for diagonally dominant systems. Used as the
    cross-check oracle for the factored banded solver in the hot loop.
    """
    n = rhs.shape[0]
    w = np.empty(n - 1)
    g = np.empty(n)
    w[0] = upper[0] / diag[0]
    g[0] = rhs[0] / diag[0]
    for i in range(1, n - 1):
        den = diag[i] - lower[i - 1] * w[i - 1]
        w[i] = upper[i] / den
        g[i] = (rhs[i] - lower[i - 1] * g[i - 1]) / den
    g[n - 1] = (rhs[n - 1] - lower[n - 2] * g[n - 2]) / (diag[n - 1] - lower[n - 2] * w[n - 2])
    out = np.empty(n)
    out[-1] = g[-1]
    for i in range(n - 2, -1, -1):
        out[i] = g[i] - w[i] * out[i + 1]
    return out


class _CNDiffusion:
    """Prefactored Crank-Nicolson step for u_t = u_xx with Dirichlet ends."""

    def __init__(self, n_x: int, dx: float, dt: float):
        self.r = dt / dx ** 2
        n_int = n_x - 2
        ab = np.zeros((2, n_int))
        ab[0, 1:] = -0.5 * self.r
        ab[1, :] = 1.0 + self.r
        self._cb = cholesky_banded(ab, lower=False)

    def step(self, u: np.ndarray, bl0: float, bl1: float, br0: float, br1: float,
             theta_startup: bool = False) -> np.ndarray:
        """Advance interior nodes one step; bl/br are boundary values at the
        old (0) and new (1) time levels."""
        r = self.r
        interior = u[1:-1]
        # Old-time boundary values already enter through the stencil sum
        # below (u[0], u[-1]); only the new-time values need adding.
        rhs = interior + 0.5 * r * (u[:-2] - 2.0 * interior + u[2:])
        rhs[0] += 0.5 * r * bl1
        rhs[-1] += 0.5 * r * br1
        out = np.empty_like(u)
        out[1:-1] = cho_solve_banded((self._cb, False), rhs)
        out[0] = bl1
        out[-1] = br1
        return out


class _BEDiffusion:
    """Backward-Euler step, used for Rannacher startup smoothing."""

    def __init__(self, n_x: int, dx: float, dt: float):
        self.r = dt / dx ** 2
        n_int = n_x - 2
        ab = np.zeros((2, n_int))
        ab[0, 1:] = -self.r
        ab[1, :] = 1.0 + 2.0 * self.r
        self._cb = cholesky_banded(ab, lower=False)

    def step(self, u: np.ndarray, bl1: float, br1: float) -> np.ndarray:
        rhs = u[1:-1].copy()
        rhs[0] += self.r * bl1
        rhs[-1] += self.r * br1
        out = np.empty_like(u)
        out[1:-1] = cho_solve_banded((self._cb, False), rhs)
        out[0] = bl1
        out[-1] = br1
        return out


# -- evolution ---------------------------------------------------------------

@dataclass
class EvolutionTrace:
    """Per-run record: stroboscopic snapshots plus audit counters."""
    strobe_times: List[float] = field(default_factory=list)
    strobe_values: List[np.ndarray] = field(default_factory=list)
    cycle_buffer: deque = field(default_factory=lambda: deque(maxlen=16))
    clip_count: int = 0
    node_steps: int = 0
    leak_history: List[float] = field(default_factory=list)
    boundary_switch_period: Optional[int] = None

    @property
    def max_leak(self) -> float:
        return max(self.leak_history) if self.leak_history else 0.0

    @property
    def clip_fraction(self) -> float:
        return self.clip_count / self.node_steps if self.node_steps else 0.0


class Evolution:
    """Time-stepper owning one run of u_t = u_xx + f(t, u).

    Strictly sequential in time; distinct instances share no mutable state,
    so independent runs may execute concurrently.
    """

    def __init__(self, spec: NonlinearitySpec, u0: Field, cfg: SolverConfig,
                 strobe_period: Optional[float] = None, enforce_support_margin: bool = True):
        cfg.validate_against(u0.grid)
        if float(np.min(u0.values)) < -1e-12:
            raise DomainError(f"initial data must be nonnegative, min = {np.min(u0.values):.3g}")
        hull = u0.support or support_hull(u0)
        if enforce_support_margin and hull is not None:
            g = u0.grid
            margin = 0.2 * (g.x_max - g.x_min)
            if hull[0] < g.x_min + margin or hull[1] > g.x_max - margin:
                raise DomainError(
                    f"initial support {hull} violates the 20% margin of [{g.x_min}, {g.x_max}]")
        self.spec = spec
        self.grid = u0.grid
        self.cfg = cfg
        self.support = hull
        T_s = strobe_period if strobe_period is not None else spec.period_T
        spp = max(cfg.strobe_subsamples, int(round(T_s / cfg.dt)))
        sub = cfg.strobe_subsamples
        spp = sub * max(1, int(round(spp / sub)))  # snap so sub-samples land on steps
        self.steps_per_period = spp
        self.dt = T_s / spp
        self.strobe_period = T_s
        self._cn = _CNDiffusion(self.grid.n_x, self.grid.dx, self.dt)
        self.u = np.array(u0.values, dtype=float)
        self.t = float(u0.time_stamp)
        self.period_index = 0
        self.trace = EvolutionTrace()
        self._record_strobe()

    # boundary values ------------------------------------------------------

    def _bc(self, t: float) -> float:
        orbit = self.cfg.boundary
        return 0.0 if orbit is None else float(orbit.value(t))

    def set_boundary_orbit(self, orbit: Optional[PeriodicOrbit]):
        """Switch the Dirichlet data (e.g. to pin a detected base orbit)."""
        self.cfg = replace(self.cfg, boundary=orbit)
        bc = self._bc(self.t)
        self.u[0] = bc
        self.u[-1] = bc
        self.trace.boundary_switch_period = self.period_index

    # stepping -------------------------------------------------------------

    def _reaction_half(self, u: np.ndarray, t: float) -> np.ndarray:
        h = 0.5 * self.dt
        k1 = eval_f(self.spec, t, u)
        k2 = eval_f(self.spec, t + h, u + h * k1)
        return u + 0.5 * h * (k1 + k2)

    def _step(self):
        t, dt = self.t, self.dt
        u = self._reaction_half(self.u, t)
        u = self._cn.step(u, self._bc(t), self._bc(t + dt), self._bc(t), self._bc(t + dt))
        u = self._reaction_half(u, t + 0.5 * dt)
        u[0] = self._bc(t + dt)
        u[-1] = self._bc(t + dt)
        neg = u < -self.cfg.clip_threshold
        n_neg = int(np.count_nonzero(neg))
        if n_neg:
            u[neg] = 0.0
            self.trace.clip_count += n_neg
        self.trace.node_steps += u.shape[0]
        sup = float(np.max(np.abs(u)))
        if not math.isfinite(sup) or sup > self.cfg.u_max:
            raise BlowUpError(f"|u| reached {sup:.3g} > u_max = {self.cfg.u_max} at t = {t + dt:.6g}")
        self.u = u
        self.t = t + dt

    def boundary_leak(self) -> float:
        """Deviation of boundary-adjacent values from the boundary data."""
        return float(max(abs(self.u[1] - self.u[0]), abs(self.u[-2] - self.u[-1])))

    def _record_strobe(self):
        self.trace.strobe_times.append(self.t)
        self.trace.strobe_values.append(self.u.copy())

    def advance_period(self) -> float:
        """Advance one strobe period; returns the boundary leak at its end."""
        sub_every = self.steps_per_period // self.cfg.strobe_subsamples
        for k in range(self.steps_per_period):
            self._step()
            if (k + 1) % sub_every == 0:
                self.trace.cycle_buffer.append((self.t, self.u.copy()))
        self.period_index += 1
        self._record_strobe()
        leak = self.boundary_leak()
        self.trace.leak_history.append(leak)
        return leak

    def field(self) -> Field:
        return Field(self.grid, self.u.copy(), time_stamp=self.t, support=self.support)


def evolve(spec: NonlinearitySpec, u0: Field, cfg: SolverConfig, t_end: float,
           strobe_period: Optional[float] = None,
           strobe_callback: Optional[Callable[[Field], None]] = None) -> Tuple[Field, EvolutionTrace]:
    """Evolve u_t = u_xx + f(t, u) from u0 to t_end on the truncated line.

    Raises BlowUpError past cfg.u_max and TruncationError once the boundary
    leak exceeds cfg.leak_tol (the truncated domain is then too small).
    t_end snaps to a whole number of strobe periods.
    """
    evo = Evolution(spec, u0, cfg, strobe_period=strobe_period)
    n_periods = max(1, int(round(t_end / evo.strobe_period)))
    for _ in range(n_periods):
        leak = evo.advance_period()
        if strobe_callback is not None:
            strobe_callback(evo.field())
        if leak > cfg.leak_tol:
            raise TruncationError(
                f"boundary leak {leak:.3g} > {cfg.leak_tol:.3g} at t = {evo.t:.6g}; "
                "enlarge the domain half-width")
    return evo.field(), evo.trace


# -- exact oracles -----------------------------------------------------------

def heat_kernel_samples(t: float, dx: float) -> np.ndarray:
    """K(t, k dx) on an odd-length window truncated at 8 sqrt(2 t)."""
    half = max(1, int(math.ceil(8.0 * math.sqrt(2.0 * t) / dx)))
    z = np.arange(-half, half + 1) * dx
    return np.exp(-z * z / (4.0 * t)) / math.sqrt(4.0 * math.pi * t)


def heat_kernel_convolve(u0: Field, t: float) -> Field:
    """Trapezoid convolution of u0 with the heat kernel (zero extension).

    Valid for compactly supported data; tails beyond 8 sqrt(2t) of the
    kernel are dropped (mass error below 1e-14 relative).
    """
    if t <= 0:
        raise DomainError(f"kernel time must be positive, got {t}")
    dx = u0.grid.dx
    ker = heat_kernel_samples(t, dx)
    vals = _sig_convolve(u0.values, ker, mode="same") * dx
    return Field(u0.grid, vals, time_stamp=u0.time_stamp + t, support=u0.support)


def _heat_cn_dirichlet(values: np.ndarray, dx: float, dt: float, n_steps: int,
                       left: Callable[[float], float], right: Callable[[float], float],
                       t0: float = 0.0, rannacher_steps: int = 2) -> np.ndarray:
    """Pure-diffusion CN integrator with general Dirichlet data.

    The first ``rannacher_steps`` steps use backward Euler to damp the
    ringing CN would produce from rough initial or boundary data.
    """
    n_x = values.shape[0]
    cn = _CNDiffusion(n_x, dx, dt)
    be = _BEDiffusion(n_x, dx, dt)
    u = np.array(values, dtype=float)
    u[0] = left(t0)
    u[-1] = right(t0)
    t = t0
    for k in range(n_steps):
        if k < rannacher_steps:
            u = be.step(u, left(t + dt), right(t + dt))
        else:
            u = cn.step(u, left(t), left(t + dt), right(t), right(t + dt))
        t += dt
    return u


def evolve_quadratic_gradient(w0: Field, M: float, cfg: SolverConfig, t_end: float,
                              delta0: Optional[float] = None) -> Field:
    """Solve w_t = w_xx - M w_x^2 by the exact substitution psi = exp(-M w).

    psi satisfies the heat equation, integrated here by Crank-Nicolson with
    Dirichlet data mapped through the transform: the left end holds its
    initial value, the right end holds delta0 when given (the half-line
    relaxation setup) and its initial value otherwise. M = 0 degenerates to
    the plain heat equation.
    """
    if M < 0:
        raise DomainError(f"M must be nonnegative, got {M}")
    cfg.validate_against(w0.grid)
    n_steps = max(1, int(round(t_end / cfg.dt)))
    dt = t_end / n_steps
    dx = w0.grid.dx
    right_w = float(w0.values[-1]) if delta0 is None else float(delta0)
    left_w = float(w0.values[0])
    if M == 0.0:
        vals = _heat_cn_dirichlet(w0.values, dx, dt, n_steps,
                                  left=lambda t: left_w, right=lambda t: right_w)
        return Field(w0.grid, vals, time_stamp=w0.time_stamp + t_end)
    span = M * float(np.max(np.abs(w0.values)))
    span = max(span, M * abs(right_w))
    if span > 650.0:
        raise RangeError(f"M * max|w| = {span:.3g} would underflow exp; "
                         "rescale w (or M) before solving")
    psi0 = np.exp(-M * w0.values)
    psi = _heat_cn_dirichlet(psi0, dx, dt, n_steps,
                             left=lambda t: math.exp(-M * left_w),
                             right=lambda t: math.exp(-M * right_w))
    if np.any(psi <= 0.0):
        raise RangeError("transformed heat solution lost positivity; reduce dt")
    return Field(w0.grid, -np.log(psi) / M, time_stamp=w0.time_stamp + t_end)


def cole_hopf_log_convolution(psi0: Field, M: float, t: float) -> Field:
    """Closed-form solution of psi_t = psi_xx + M psi_x^2 on the line.

    Computes (1/M) ln of the heat convolution of exp(M psi0), with
    max-subtraction for overflow safety. psi0 extends by its edge values
    beyond the grid; those far-field constants contribute analytic erfc
    tails, so profiles that are flat near the grid ends are handled exactly.
    """
    if M <= 0:
        raise DomainError(f"M must be positive, got {M}")
    if t <= 0:
        raise DomainError(f"t must be positive, got {t}")
    g = psi0.grid
    c = M * float(np.max(psi0.values))
    if c - M * float(np.min(psi0.values)) > 650.0:
        raise RangeError("spread of M * psi0 too large for exp; rescale")
    core = np.exp(M * psi0.values - c)
    ker = heat_kernel_samples(t, g.dx)
    theta = _sig_convolve(core, ker, mode="same") * g.dx
    # Trapezoid half-weights at the grid ends, then the analytic constant
    # tails beyond them (edge-value extension).
    s = math.sqrt(4.0 * t)
    kl = np.exp(-(g.x - g.x_min) ** 2 / (4.0 * t)) / math.sqrt(4.0 * math.pi * t)
    kr = np.exp(-(g.x_max - g.x) ** 2 / (4.0 * t)) / math.sqrt(4.0 * math.pi * t)
    theta -= 0.5 * g.dx * (core[0] * kl + core[-1] * kr)
    theta += core[0] * 0.5 * erfc((g.x - g.x_min) / s)
    theta += core[-1] * 0.5 * erfc((g.x_max - g.x) / s)
    vals = (c + np.log(theta)) / M
    return Field(g, vals, time_stamp=psi0.time_stamp + t)


def kinetic_change_of_variables(spec: NonlinearitySpec, u_snapshot: Field,
                                t_in_period: float, *, tol: float = 1e-10,
                                u_max: float = 10.0) -> Field:
    """Invert u = h(t; v) nodewise: the diagnostic coordinate v of the
    kinetics change of variables.

    a -> h(t; a) is strictly increasing (its a-derivative is a positive
    exponential), so a vectorized bisection converges unconditionally.
    Raises RangeError when some u value exceeds the reachable range.
    """
    u = np.asarray(u_snapshot.values, dtype=float)
    if t_in_period == 0.0:
        return Field(u_snapshot.grid, u.copy(), time_stamp=u_snapshot.time_stamp)
    if t_in_period < 0:
        raise DomainError("t_in_period must lie in [0, T]")
    if np.any(u < -1e-12):
        raise RangeError(f"u below the invertible range: min = {np.min(u):.3g}")
    steps = max(2, int(round(2000 * t_in_period / spec.period_T)))

    def flow(a_vec):
        y, _ = _rk4(spec, a_vec, 0.0, t_in_period, steps, clamp_nonnegative=True)
        return y

    hi = np.full_like(u, max(1.0, float(np.max(u))))
    for _ in range(60):
        short = flow(hi) < u
        if not np.any(short):
            break
        hi = np.where(short, 2.0 * hi, hi)
        if np.any(hi > u_max):
            raise RangeError("u exceeds the reachable range of the kinetics flow")
    lo = np.zeros_like(u)
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        below = flow(mid) < u
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    v = 0.5 * (lo + hi)
    return Field(u_snapshot.grid, v, time_stamp=u_snapshot.time_stamp)
