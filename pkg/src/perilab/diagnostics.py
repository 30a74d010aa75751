"""Runtime measurements mirroring the proof instruments: sign-change counts
of period differences, symmetry-center detection, long-run limit
classification, base extraction, and the supersolution cap audit.

All functions here are pure analyses over immutable traces, safe for
parallel batch audits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import CubicSpline

from .config import ScenarioConfig
from .errors import MatchError, ShapeError, TruncationError
from .nonlinearity import NonlinearitySpec
from .ode_kinetics import OrbitScan, PeriodicOrbit, Stability, find_periodic_orbits
from .pde_solver import Evolution, Field, SolverConfig

ETA_REL = 1e-7     # relative zero-counting threshold on |w|_inf
ETA_FLOOR = 1e-12
BURN_IN_PERIODS = 3
BASE_MATCH_TOL = 1e-2
N_TAIL_NODES = 10


class Verdict(Enum):
    EXTINCTION = "extinction"
    FLAT_PERIODIC = "flat_periodic"
    GROUND_STATE = "ground_state"
    UNDECIDED = "undecided"
    HETEROCLINIC_SUSPECT = "heteroclinic_suspect"


# -- zero numbers ------------------------------------------------------------

def zero_number(values: np.ndarray, eta: float) -> int:
    """Sign changes of a sampled profile after thresholding |w| < eta to 0.

    Returns -1 when every node thresholds to zero (the identically-zero
    convention).
    """
    if eta <= 0:
        raise ValueError(f"eta must be positive, got {eta}")
    v = np.asarray(values, dtype=float)
    s = np.where(np.abs(v) < eta, 0, np.sign(v)).astype(int)
    nz = s[s != 0]
    if nz.size == 0:
        return -1
    return int(np.count_nonzero(np.diff(nz)))


@dataclass
class ZeroNumberTrace:
    """Sign-change counts of the stroboscopic period differences."""
    times: np.ndarray
    counts: np.ndarray
    eta_rel: float
    eta_used: np.ndarray
    audit_ok: bool
    first_violation: Optional[int]


def zero_trace_period_difference(strobe_times: Sequence[float],
                                 strobe_values: Sequence[np.ndarray],
                                 eta_rel: float = ETA_REL,
                                 burn_in: int = BURN_IN_PERIODS) -> ZeroNumberTrace:
    """Z(u(., (m+1)T) - u(., mT)) for every stored period.

    The threshold is eta_rel * |w|_inf per difference with floor 1e-12.
    The audit flags any count increase after the burn-in; transitions out of
    the -1 (identically zero) state are exempt, since a profile reappearing
    from round-off is not a sign-change event.
    """
    counts = []
    etas = []
    for prev, cur in zip(strobe_values[:-1], strobe_values[1:]):
        w = cur - prev
        eta = max(eta_rel * float(np.max(np.abs(w))), ETA_FLOOR)
        etas.append(eta)
        counts.append(zero_number(w, eta))
    counts = np.asarray(counts, dtype=int)
    first_violation = None
    for i in range(max(burn_in, 1), counts.size):
        if counts[i - 1] >= 0 and counts[i] > counts[i - 1]:
            first_violation = i
            break
    return ZeroNumberTrace(times=np.asarray(strobe_times[1:], dtype=float),
                           counts=counts, eta_rel=eta_rel,
                           eta_used=np.asarray(etas),
                           audit_ok=first_violation is None,
                           first_violation=first_violation)


# -- geometry ----------------------------------------------------------------

def _leftmost_local_max(x: np.ndarray, v: np.ndarray) -> float:
    idx = np.flatnonzero((v[1:-1] > v[:-2]) & (v[1:-1] > v[2:]))
    if idx.size == 0:
        raise ShapeError("profile has no strict interior local maximum")
    i = int(idx[0]) + 1
    denom = v[i - 1] - 2.0 * v[i] + v[i + 1]
    dx = x[1] - x[0]
    shift = 0.5 * dx * (v[i - 1] - v[i + 1]) / denom if denom != 0 else 0.0
    return float(x[i] + np.clip(shift, -dx, dx))


def symmetry_center(strobe_values: Sequence[np.ndarray], x: np.ndarray,
                    n_last: int = 5) -> float:
    """Median position of the leftmost strict local maximum over the last
    few snapshots, refined to sub-grid by a quadratic fit."""
    if len(strobe_values) < n_last:
        raise ShapeError(f"need at least {n_last} snapshots, got {len(strobe_values)}")
    centers = [_leftmost_local_max(x, v) for v in strobe_values[-n_last:]]
    return float(np.median(centers))


def verify_symmetric_decreasing(cycle: Sequence[Field], x0: float,
                                tol_sym: float) -> Tuple[bool, float, float]:
    """Reflection residual about x0 and one-sided monotonicity margin.

    Returns (ok, max reflection residual, max forward difference right of
    x0). ok requires the reflection residual below tol_sym and no forward
    difference right of x0 above 1e-7 * sup|u|.
    """
    if not cycle:
        raise ShapeError("empty cycle")
    refl = 0.0
    rise = -math.inf
    scale = max(f.linf() for f in cycle)
    for f in cycle:
        x, v = f.grid.x, f.values
        spl = CubicSpline(x, v)
        mirror = 2.0 * x0 - x
        valid = (mirror >= x[0]) & (mirror <= x[-1])
        refl = max(refl, float(np.max(np.abs(v[valid] - spl(mirror[valid])))))
        right = x > x0
        dv = np.diff(v[right])
        if dv.size:
            rise = max(rise, float(np.max(dv)))
    ok = refl < tol_sym and rise < 1e-7 * max(1.0, scale)
    return ok, refl, rise


# -- omega-limit detection -----------------------------------------------------

@dataclass
class OmegaLimitReport:
    """Outcome of a long stroboscopic run."""
    verdict: Verdict
    x0: Optional[float]
    base_orbit: Optional[PeriodicOrbit]
    base_distance: float
    limit_cycle: List[Field]
    residual: float
    strobe_monotone: str                  # increasing / decreasing / none
    periods_used: int
    flat_level: Optional[float]
    orbit_scan: OrbitScan
    audits: Dict[str, object]
    tolerances: Dict[str, float]
    boundary_switched: Optional[int] = None
    strobe_center: Optional[np.ndarray] = None
    ztrace: Optional[ZeroNumberTrace] = None

    @property
    def converged(self) -> bool:
        return self.verdict in (Verdict.EXTINCTION, Verdict.FLAT_PERIODIC, Verdict.GROUND_STATE)


def _strobe_monotone(series: np.ndarray, n_last: int = 8) -> Tuple[str, bool]:
    """Tail drift of u(x0, mT): direction plus decreasing-increment flag."""
    tail = series[-min(n_last + 1, series.size):]
    d = np.diff(tail)
    if d.size < 2:
        return "none", False
    if np.all(d > 0):
        direction = "increasing"
    elif np.all(d < 0):
        direction = "decreasing"
    else:
        return "none", False
    mags = np.abs(d)
    return direction, bool(np.all(np.diff(mags) <= 0))


def _match_base(cycle: Sequence[Field], scan: OrbitScan,
                n_tail: int = N_TAIL_NODES) -> Tuple[Optional[PeriodicOrbit], float, np.ndarray]:
    """Average the outermost interior nodes of each phase and match the
    resulting base series to the nearest known orbit (sup distance)."""
    tails = []
    for f in cycle:
        v = f.values
        tails.append(0.5 * (float(np.mean(v[1:1 + n_tail])) +
                            float(np.mean(v[-1 - n_tail:-1]))))
    tails = np.asarray(tails)
    times = np.asarray([f.time_stamp for f in cycle])
    best, best_d = None, math.inf
    for orbit in scan.orbits:
        d = float(np.max(np.abs(tails - orbit.value(times))))
        if d < best_d:
            best, best_d = orbit, d
    return best, best_d, tails


def extract_base(report: OmegaLimitReport) -> PeriodicOrbit:
    """Base orbit of a ground-state limit; raises MatchError when the tail
    levels sit further than 1e-2 from every known orbit."""
    best, dist, tails = _match_base(report.limit_cycle, report.orbit_scan)
    if best is None or dist > BASE_MATCH_TOL:
        raise MatchError(f"no periodic orbit within {BASE_MATCH_TOL} of the tail levels "
                         f"(closest {dist:.3g})", tail_values=tails)
    return best


def _record_cycle(evo: Evolution) -> List[Field]:
    """Advance one more period and assemble the phase cycle (start strobe
    plus the within-period sub-samples, closing at the next strobe)."""
    start = Field(evo.grid, evo.u.copy(), time_stamp=0.0)
    evo.advance_period()
    sub = list(evo.trace.cycle_buffer)[-evo.cfg.strobe_subsamples:]
    T = evo.strobe_period
    cycle = [start]
    for t, v in sub:
        phase = t % T
        if abs(phase) < 1e-9 or abs(phase - T) < 1e-9:
            phase = T
        cycle.append(Field(evo.grid, v.copy(), time_stamp=phase))
    return cycle


def detect_omega_limit(spec: NonlinearitySpec, scenario: ScenarioConfig,
                       orbit_scan: Optional[OrbitScan] = None,
                       horizon_factor: int = 1,
                       sigma: Optional[float] = None) -> OmegaLimitReport:
    """Run a scenario to its stroboscopic limit and classify it.

    Convergence requires the period-difference sup over the core window to
    stay below tol_omega for 3 consecutive periods; the limit is then flat
    (Extinction at level 0, FlatPeriodic otherwise) or a symmetrically
    decreasing ground state with an extracted base. Two shortcuts keep runs
    at desk scale:

    * once sup u drops below the lowest level with increasing kinetics
      (minus a gap) for 3 periods, no re-ignition is possible and the
      zero-Dirichlet truncation drains the state: Extinction;
    * when an advancing front reaches the boundary (leak above tolerance)
      and the interior sits near a strictly linearly stable positive orbit,
      the Dirichlet data switches to that orbit and the run continues
      (recorded in the report); otherwise TruncationError propagates.

    Unconverged runs end Undecided, or HeteroclinicSuspect when the center
    strobe drifts monotonically with shrinking increments.
    """
    if orbit_scan is None:
        orbit_scan = find_periodic_orbits(spec, (0.0, scenario.scan_hi),
                                          scenario.n_scan, u_max=scenario.u_max)
    a_escape = orbit_scan.escape_level()
    u0 = scenario.initial_field(sigma=sigma)
    cfg = SolverConfig(dt=scenario.dt_effective(), u_max=scenario.u_max,
                       leak_tol=scenario.leak_tol)
    evo = Evolution(spec, u0, cfg)
    grid = evo.grid

    hull = u0.support
    hull_mid = 0.5 * (hull[0] + hull[1]) if hull else 0.0
    half_core = scenario.core_frac * scenario.L
    core = (grid.x >= hull_mid - half_core) & (grid.x <= hull_mid + half_core)
    center_idx = grid.index_of(hull_mid)

    tolerances = {"tol_omega": scenario.tol_omega, "tol_flat": scenario.tol_flat,
                  "tol_sym": scenario.tol_sym, "leak": scenario.leak_tol,
                  "core_frac": scenario.core_frac, "L": scenario.L}

    max_periods = scenario.max_periods * horizon_factor
    residuals: List[float] = []
    low_sup_run = 0
    verdict: Optional[Verdict] = None
    residual_at_stop = math.inf

    for m in range(max_periods):
        leak = evo.advance_period()
        u_prev = evo.trace.strobe_values[-2]
        u_cur = evo.trace.strobe_values[-1]
        resid = float(np.max(np.abs((u_cur - u_prev)[core])))
        residuals.append(resid)

        if a_escape is not None and float(np.max(u_cur)) < a_escape - scenario.extinction_gap:
            low_sup_run += 1
        else:
            low_sup_run = 0
        if low_sup_run >= 3:
            verdict = Verdict.EXTINCTION
            residual_at_stop = resid
            break

        if len(residuals) >= 3 and max(residuals[-3:]) < scenario.tol_omega:
            residual_at_stop = resid
            break

        if leak > scenario.leak_tol and evo.trace.boundary_switch_period is None:
            # A pinned boundary tracks the limit level, so the truncation
            # criterion only applies before any switch.
            switched = False
            if scenario.adaptive_boundary:
                level = float(np.median(u_cur[core]))
                orbit, dist = orbit_scan.nearest_orbit(level)
                if (orbit is not None and orbit.linearly_stable
                        and orbit.a0 > 10.0 * scenario.leak_tol
                        and dist < 0.25 * max(1.0, orbit.a0)):
                    evo.set_boundary_orbit(orbit)
                    switched = True
            if not switched:
                raise TruncationError(
                    f"boundary leak {leak:.3g} > {scenario.leak_tol:.3g} at period {m + 1} "
                    f"with no stable orbit to pin; enlarge domain.L beyond {scenario.L}")

    loop_periods = evo.period_index
    strobe_series = np.asarray([v[center_idx] for v in evo.trace.strobe_values])
    direction, shrinking = _strobe_monotone(strobe_series)

    audits: Dict[str, object] = {}
    ztrace = zero_trace_period_difference(evo.trace.strobe_times, evo.trace.strobe_values)
    audits["Z_monotone"] = ztrace.audit_ok
    audits["Z_first_violation"] = ztrace.first_violation
    audits["clip_fraction"] = evo.trace.clip_fraction
    audits["max_leak"] = evo.trace.max_leak

    x0: Optional[float] = None
    base: Optional[PeriodicOrbit] = None
    base_dist = math.inf
    flat_level: Optional[float] = None
    cycle: List[Field] = []

    if verdict is Verdict.EXTINCTION:
        base, base_dist = orbit_scan.nearest_orbit(0.0)
        flat_level = float(np.max(evo.trace.strobe_values[-1]))
        cycle = _record_cycle(evo)
    elif residual_at_stop < math.inf:
        u_cur = evo.trace.strobe_values[-1]
        osc = float(np.ptp(u_cur[core]))
        if osc < scenario.tol_flat:
            flat_level = float(np.mean(u_cur[core]))
            orbit, dist = orbit_scan.nearest_orbit(flat_level)
            if orbit is not None and dist <= BASE_MATCH_TOL * max(1.0, abs(flat_level)):
                base, base_dist = orbit, dist
            if base is not None and base.a0 < 1e-6 and flat_level < 1e-3:
                verdict = Verdict.EXTINCTION
            else:
                verdict = Verdict.FLAT_PERIODIC
            cycle = _record_cycle(evo)
        else:
            cycle = _record_cycle(evo)
            try:
                x0 = symmetry_center(evo.trace.strobe_values, grid.x)
            except ShapeError:
                x0 = None
            if x0 is not None:
                ok, refl, rise = verify_symmetric_decreasing(cycle, x0, scenario.tol_sym)
                audits["symmetry"] = {"ok": ok, "reflection_residual": refl,
                                      "max_right_rise": rise}
                if ok:
                    verdict = Verdict.GROUND_STATE
                    best, dist, tails = _match_base(cycle, orbit_scan)
                    if best is not None and dist <= BASE_MATCH_TOL:
                        base, base_dist = best, dist
                    else:
                        audits["base_match_failed"] = [float(t) for t in tails]
                else:
                    verdict = Verdict.UNDECIDED
            else:
                verdict = Verdict.UNDECIDED
        residual_at_stop = residuals[-1]
    else:
        verdict = (Verdict.HETEROCLINIC_SUSPECT
                   if direction != "none" and shrinking else Verdict.UNDECIDED)
        residual_at_stop = residuals[-1] if residuals else math.inf
        cycle = _record_cycle(evo)

    if x0 is None and verdict in (Verdict.EXTINCTION, Verdict.FLAT_PERIODIC):
        x0 = hull_mid
    if hull is not None and x0 is not None:
        audits["x0_in_hull"] = bool(hull[0] - grid.dx <= x0 <= hull[1] + grid.dx)

    # Negative checks mirroring the limit-selection theorems.
    audits["base_not_unstable_from_below"] = (
        base is None or base.stability_below is not Stability.UNSTABLE)
    in_interior = False
    if base is not None:
        for lo, hi in orbit_scan.continua:
            if lo + 1e-6 < base.a0 < hi - 1e-6:
                in_interior = True
    audits["base_not_in_continuum_interior"] = not in_interior

    return OmegaLimitReport(
        verdict=verdict, x0=x0, base_orbit=base, base_distance=base_dist,
        limit_cycle=cycle, residual=residual_at_stop, strobe_monotone=direction,
        periods_used=loop_periods, flat_level=flat_level,
        orbit_scan=orbit_scan, audits=audits, tolerances=tolerances,
        boundary_switched=evo.trace.boundary_switch_period,
        strobe_center=strobe_series, ztrace=ztrace)


# -- supersolution cap audit ---------------------------------------------------

def audit_supersolution_cap(strobe_values: Sequence[np.ndarray], x: np.ndarray,
                            ground_profile: Field, ground_center: float,
                            x0: float, L0: float) -> Tuple[bool, Optional[Tuple[int, float]]]:
    """Check the shifted ground-state majorization u(x + x0, t) <
    v(|x| - L0 + c, t) for |x| >= L0 at the stored phase-0 snapshots.

    ``ground_profile`` is the phase-0 profile of a ground state centered at
    ``ground_center``; beyond its grid it extends by its edge (tail) value.
    Returns (ok, first violation as (period index, x))."""
    gx = ground_profile.grid.x
    gv = ground_profile.values
    right = gx >= ground_center
    xi = gx[right] - ground_center
    vals = gv[right]

    def v_of(offset):
        return np.interp(offset, xi, vals, left=vals[0], right=vals[-1])

    rel = x - x0
    outer = np.abs(rel) >= L0
    bound = v_of(np.abs(rel[outer]) - L0)
    for k, u in enumerate(strobe_values):
        bad = u[outer] >= bound
        if np.any(bad):
            j = int(np.argmax(bad))
            return False, (k, float(x[outer][j]))
    return True, None
