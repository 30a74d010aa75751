"""User surface: scenario runner, sharp-threshold bisection, artifact and
plot emission, and the ``perilab`` command-line entry point.

Artifact layout per run (directory named by the 16-hex config hash):

    out/<hash>/report.json        classification report (byte-deterministic)
    out/<hash>/config.flat        resolved flat key=value config
    out/<hash>/manifest.json      snapshot list, config hash, audit counters
    out/<hash>/snapshots/*.csv    profile snapshots: "# t=<value>" then x,value
    out/<hash>/plots/*.dat        gnuplot-ready two-column series (emit_plots)

Exit codes: 0 ok, 2 config error, 3 numerical failure, 4 bracket or
hypothesis error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from . import errors as err
from .config import ScenarioConfig, load_config
from .diagnostics import OmegaLimitReport, Verdict, detect_omega_limit
from .ode_kinetics import (OrbitScan, PeriodicOrbit, Stability, TrajectoryClass,
                           build_perturbation_g, classify_trajectory,
                           find_periodic_orbits)
from .pde_solver import Field
from .periodic_structures import build_periodic_dirichlet

NEAR_WIDTH_DEFAULT = 1e-10  # bracket width for the near-threshold report run
NEAR_HORIZON_FACTOR = 4


# -- serialization helpers ----------------------------------------------------

def _orbit_dict(o: Optional[PeriodicOrbit]) -> Optional[dict]:
    if o is None:
        return None
    return {
        "a0": float(o.a0),
        "floquet": float(o.floquet),
        "stability_above": o.stability_above.value,
        "stability_below": o.stability_below.value,
        "in_Yper": bool(o.in_Yper),
        "continuum_edge": bool(o.continuum_edge),
        "probe_eps": float(o.probe_eps),
    }


def report_dict(report: OmegaLimitReport, cfg: ScenarioConfig,
                sigma: Optional[float] = None) -> dict:
    aud = {}
    for k, v in report.audits.items():
        if isinstance(v, dict):
            aud[k] = {kk: (bool(vv) if isinstance(vv, (bool, np.bool_)) else float(vv))
                      for kk, vv in v.items()}
        elif isinstance(v, (bool, np.bool_)):
            aud[k] = bool(v)
        elif v is None:
            aud[k] = None
        elif isinstance(v, (int, np.integer)):
            aud[k] = int(v)
        elif isinstance(v, (float, np.floating)):
            aud[k] = float(v)
        else:
            aud[k] = [float(t) for t in v]
    return {
        "config_hash": cfg.config_hash(),
        "sigma": float(cfg.sigma if sigma is None else sigma),
        "verdict": report.verdict.value,
        "x0": None if report.x0 is None else float(report.x0),
        "base": _orbit_dict(report.base_orbit),
        "base_distance": None if not math.isfinite(report.base_distance) else float(report.base_distance),
        "flat_level": None if report.flat_level is None else float(report.flat_level),
        "residual": float(report.residual),
        "strobe_monotone": report.strobe_monotone,
        "periods_used": int(report.periods_used),
        "boundary_switched": report.boundary_switched,
        "continua": [[float(a), float(b)] for a, b in report.orbit_scan.continua],
        "orbits": [_orbit_dict(o) for o in report.orbit_scan.orbits],
        "audits": aud,
        "tolerances": {k: float(v) for k, v in report.tolerances.items()},
    }


def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _write_snapshot(path: Path, field: Field):
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"# t={float(field.time_stamp)!r}\n")
        for x, v in zip(field.grid.x, field.values):
            fh.write(f"{float(x)!r},{float(v)!r}\n")


def write_artifacts(report: OmegaLimitReport, cfg: ScenarioConfig, out_root: str,
                    sigma: Optional[float] = None) -> Path:
    """Persist one run deterministically under out_root/<config-hash>."""
    run_dir = Path(out_root) / cfg.config_hash()
    snap_dir = run_dir / "snapshots"
    snap_dir.mkdir(parents=True, exist_ok=True)
    _write_json(run_dir / "report.json", report_dict(report, cfg, sigma=sigma))
    (run_dir / "config.flat").write_text(cfg.to_flat(), encoding="utf-8")

    snaps: List[str] = []
    for k, f in enumerate(report.limit_cycle):
        name = f"cycle_{k:02d}.csv"
        _write_snapshot(snap_dir / name, f)
        snaps.append(f"snapshots/{name}")

    if report.strobe_center is not None:
        with (snap_dir / "strobe.csv").open("w", encoding="utf-8") as fh:
            fh.write("# m,u_center\n")
            for m, v in enumerate(report.strobe_center):
                fh.write(f"{m},{float(v)!r}\n")
        snaps.append("snapshots/strobe.csv")
    if report.ztrace is not None:
        with (snap_dir / "ztrace.csv").open("w", encoding="utf-8") as fh:
            fh.write("# m,count\n")
            for m, c in enumerate(report.ztrace.counts):
                fh.write(f"{m + 1},{int(c)}\n")
        snaps.append("snapshots/ztrace.csv")

    scan = report.orbit_scan
    with (snap_dir / "scan.csv").open("w", encoding="utf-8") as fh:
        fh.write("# a,P(a),class,floquet\n")
        for a, p, fl in zip(scan.a_nodes, scan.p_values, scan.floquet_along):
            gap = p - a
            cls = ("periodic" if abs(gap) < 1e-7
                   else "monotone_increasing" if gap > 0 else "monotone_decreasing")
            fh.write(f"{float(a)!r},{float(p)!r},{cls},{float(fl)!r}\n")
    snaps.append("snapshots/scan.csv")

    manifest = {
        "config_hash": cfg.config_hash(),
        "snapshots": snaps,
        "audits": {
            "clip_fraction": float(report.audits.get("clip_fraction", 0.0)),
            "max_leak": float(report.audits.get("max_leak", 0.0)),
            "Z_monotone": bool(report.audits.get("Z_monotone", True)),
        },
    }
    _write_json(run_dir / "manifest.json", manifest)
    return run_dir


def run_scenario(cfg: ScenarioConfig, out_root: Optional[str] = None,
                 orbit_scan: Optional[OrbitScan] = None,
                 sigma: Optional[float] = None,
                 horizon_factor: int = 1) -> Tuple[OmegaLimitReport, Optional[Path]]:
    """Run one scenario deterministically; optionally persist artifacts.

    The fixed seed only controls randomized audit batteries; the solve
    itself is deterministic, so identical configs produce byte-identical
    report files.
    """
    spec = cfg.nonlinearity_spec()
    if orbit_scan is None:
        orbit_scan = find_periodic_orbits(spec, (0.0, cfg.scan_hi), cfg.n_scan,
                                          u_max=cfg.u_max)
    report = detect_omega_limit(spec, cfg, orbit_scan=orbit_scan, sigma=sigma,
                                horizon_factor=horizon_factor)
    run_dir = None
    if out_root is not None:
        eff_cfg = cfg if sigma is None else cfg.with_sigma(float(sigma))
        run_dir = write_artifacts(report, eff_cfg, out_root, sigma=sigma)
    return report, run_dir


# -- sharp threshold ----------------------------------------------------------

@dataclass
class ProbeRecord:
    """Audit summary of one bisection probe."""
    sigma: float
    label: str
    periods: int
    base_a0: Optional[float] = None
    base_below_unstable: Optional[bool] = None
    base_in_continuum_interior: Optional[bool] = None


@dataclass
class ThresholdResult:
    sigma_star: float
    bracket_width: float
    below_verdict: Verdict
    above_verdict: Verdict
    near_threshold_report: OmegaLimitReport
    probes: List[ProbeRecord]
    refined_width: float
    top_orbit: Optional[PeriodicOrbit]


def _probe_class(report: Optional[OmegaLimitReport], scan: OrbitScan) -> str:
    """extinction / propagation / threshold-ish label for one probe."""
    if report is None:
        return "truncation"
    if report.verdict is Verdict.EXTINCTION:
        return "extinction"
    if report.verdict is Verdict.FLAT_PERIODIC:
        top = scan.top_orbit
        if (report.base_orbit is not None and top is not None
                and abs(report.base_orbit.a0 - top.a0) < 1e-9):
            return "propagation"
        return "flat_intermediate"
    if report.verdict is Verdict.GROUND_STATE:
        return "ground_state"
    return "undecided"


def sharp_threshold(cfg: ScenarioConfig, sigma_lo: float, sigma_hi: float,
                    target_width: float, out_root: Optional[str] = None,
                    near_width: Optional[float] = None,
                    near_horizon_factor: int = NEAR_HORIZON_FACTOR) -> ThresholdResult:
    """Bisect the initial amplitude separating extinction from propagation.

    Requires extinction at sigma_lo and propagation at sigma_hi
    (BracketError otherwise). Probes that stay undecided retry once with a
    doubled horizon, then the bisection continues on the conservative side
    (toward propagation). After reaching target_width the bracket keeps
    refining down to near_width so the final 4x-horizon run at the midpoint
    can lock onto the threshold state; the near-threshold report is emitted.
    """
    spec = cfg.nonlinearity_spec()
    scan = find_periodic_orbits(spec, (0.0, cfg.scan_hi), cfg.n_scan, u_max=cfg.u_max)
    if near_width is None:
        near_width = max(NEAR_WIDTH_DEFAULT, 1e-12 * abs(sigma_hi))
    probes: List[ProbeRecord] = []

    def probe(sig: float, horizon: int = 1) -> Tuple[str, Optional[OmegaLimitReport]]:
        try:
            rep = detect_omega_limit(spec, cfg, orbit_scan=scan, sigma=sig,
                                     horizon_factor=horizon)
        except err.TruncationError:
            probes.append(ProbeRecord(sigma=sig, label="truncation", periods=-1))
            return "truncation", None
        label = _probe_class(rep, scan)
        base = rep.base_orbit
        probes.append(ProbeRecord(
            sigma=sig, label=label, periods=rep.periods_used,
            base_a0=None if base is None else float(base.a0),
            base_below_unstable=None if base is None else not rep.audits["base_not_unstable_from_below"],
            base_in_continuum_interior=None if base is None else not rep.audits["base_not_in_continuum_interior"]))
        return label, rep

    lab_lo, rep_lo = probe(sigma_lo)
    if lab_lo != "extinction":
        raise err.BracketError(f"sigma_lo = {sigma_lo} gave {lab_lo}, need extinction")
    lab_hi, rep_hi = probe(sigma_hi)
    if lab_hi != "propagation":
        raise err.BracketError(f"sigma_hi = {sigma_hi} gave {lab_hi}, need propagation")

    lo, hi = sigma_lo, sigma_hi
    below_report, above_report = rep_lo, rep_hi
    bracket_width = math.inf

    while hi - lo > near_width:
        mid = 0.5 * (lo + hi)
        label, rep = probe(mid)
        if label == "undecided":
            label, rep2 = probe(mid, horizon=2)
            rep = rep2 if rep2 is not None else rep
        if label == "extinction":
            lo = mid
            below_report = rep
        elif label == "propagation":
            hi = mid
            above_report = rep
        else:
            # threshold-adjacent (ground state, undecided, truncation, or an
            # intermediate flat level): continue toward the propagation side.
            lo = mid
        if bracket_width is math.inf and hi - lo <= target_width:
            bracket_width = hi - lo
    if bracket_width is math.inf:
        bracket_width = hi - lo

    sigma_star = 0.5 * (lo + hi)
    near_report, _ = run_scenario(cfg, out_root=out_root, orbit_scan=scan,
                                  sigma=sigma_star, horizon_factor=near_horizon_factor)
    return ThresholdResult(
        sigma_star=sigma_star, bracket_width=float(bracket_width),
        below_verdict=below_report.verdict, above_verdict=above_report.verdict,
        near_threshold_report=near_report, probes=probes,
        refined_width=float(hi - lo), top_orbit=scan.top_orbit)


# -- plots ---------------------------------------------------------------------

def emit_plots(report_dir: str) -> List[Path]:
    """Convert a run directory's artifacts into two-column .dat files."""
    run_dir = Path(report_dir)
    report_path = run_dir / "report.json"
    if not report_path.exists():
        raise err.ArtifactError(f"no report.json under {run_dir}")
    plots_dir = run_dir / "plots"
    plots_dir.mkdir(exist_ok=True)
    written: List[Path] = []

    def _emit(name: str, rows):
        p = plots_dir / name
        with p.open("w", encoding="utf-8") as fh:
            for a, b in rows:
                fh.write(f"{a} {b}\n")
        written.append(p)

    snap_dir = run_dir / "snapshots"
    strobe = snap_dir / "strobe.csv"
    if strobe.exists():
        rows = [ln.split(",") for ln in strobe.read_text().splitlines() if not ln.startswith("#")]
        _emit("strobe.dat", [(r[0], r[1]) for r in rows])
    ztr = snap_dir / "ztrace.csv"
    if ztr.exists():
        rows = [ln.split(",") for ln in ztr.read_text().splitlines() if not ln.startswith("#")]
        _emit("ztrace.dat", [(r[0], r[1]) for r in rows])
    scan = snap_dir / "scan.csv"
    if scan.exists():
        rows = [ln.split(",") for ln in scan.read_text().splitlines() if not ln.startswith("#")]
        _emit("pmap.dat", [(r[0], float(r[1]) - float(r[0])) for r in rows])
    cycles = sorted(snap_dir.glob("cycle_*.csv"))
    for c in cycles:
        rows = [ln.split(",") for ln in c.read_text().splitlines() if not ln.startswith("#")]
        _emit(c.stem + ".dat", [(r[0], r[1]) for r in rows])
    if not written:
        raise err.ArtifactError(f"no plottable artifacts under {run_dir}")
    return written


# -- command line ---------------------------------------------------------------

def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    report, run_dir = run_scenario(cfg, out_root=args.out)
    payload = report_dict(report, cfg)
    print(json.dumps(payload, sort_keys=True, indent=2))
    if run_dir:
        print(f"# artifacts: {run_dir}", file=sys.stderr)
    return 0


def _cmd_threshold(args) -> int:
    cfg = load_config(args.config)
    res = sharp_threshold(cfg, args.lo, args.hi, args.width, out_root=args.out)
    out = {
        "sigma_star": res.sigma_star,
        "bracket_width": res.bracket_width,
        "refined_width": res.refined_width,
        "below_verdict": res.below_verdict.value,
        "above_verdict": res.above_verdict.value,
        "near_threshold_verdict": res.near_threshold_report.verdict.value,
        "probes": len(res.probes),
    }
    print(json.dumps(out, sort_keys=True, indent=2))
    return 0


def _cmd_ode(args) -> int:
    cfg = load_config(args.config)
    spec = cfg.nonlinearity_spec()
    if args.ode_cmd == "orbits":
        a_lo, a_hi = (float(s) for s in args.range.split(","))
        scan = find_periodic_orbits(spec, (a_lo, a_hi), cfg.n_scan, u_max=cfg.u_max)
        print("a,P(a),class,floquet")
        for a, p, fl in zip(scan.a_nodes, scan.p_values, scan.floquet_along):
            gap = p - a
            cls = ("periodic" if abs(gap) < 1e-7
                   else "monotone_increasing" if gap > 0 else "monotone_decreasing")
            print(f"{float(a)!r},{float(p)!r},{cls},{float(fl)!r}")
        for o in scan.orbits:
            print(f"# orbit a0={float(o.a0)!r} floquet={float(o.floquet)!r} above={o.stability_above.value} "
                  f"below={o.stability_below.value} in_Yper={o.in_Yper}", file=sys.stderr)
        for lo, hi in scan.continua:
            print(f"# continuum [{float(lo)!r}, {float(hi)!r}]", file=sys.stderr)
        return 0
    if args.ode_cmd == "classify":
        cls = classify_trajectory(spec, args.a)
        print(cls.value)
        return 0
    # gfun
    scan = find_periodic_orbits(spec, (0.0, cfg.scan_hi), cfg.n_scan, u_max=cfg.u_max)
    if args.lo is not None and args.hi is not None:
        lo_orbit = min(scan.orbits, key=lambda o: abs(o.a0 - args.lo))
        hi_orbit = min(scan.orbits, key=lambda o: abs(o.a0 - args.hi))
    else:
        pair = None
        orbits = sorted(scan.orbits, key=lambda o: o.a0)
        for a, b in zip(orbits[:-1], orbits[1:]):
            if a.stability_above is Stability.UNSTABLE or a.in_Yper:
                mid = 0.5 * (a.a0 + b.a0)
                if classify_trajectory(spec, mid) is TrajectoryClass.MONOTONE_INCREASING:
                    pair = (a, b)
                    break
        if pair is None:
            raise err.HypothesisError("no adjacent orbit pair with increasing interior flow")
        lo_orbit, hi_orbit = pair
    profile = build_perturbation_g(spec, lo_orbit, hi_orbit)
    print("a,g,eps_star")
    for a, g, e in zip(profile.a_grid, profile.g_values, profile.eps_star):
        print(f"{float(a)!r},{float(g)!r},{float(e)!r}")
    return 0


def _cmd_dirichlet(args) -> int:
    cfg = load_config(args.config)
    spec = cfg.nonlinearity_spec()
    scan = find_periodic_orbits(spec, (0.0, cfg.scan_hi), cfg.n_scan, u_max=cfg.u_max)
    orbits = sorted(scan.orbits, key=lambda o: o.a0)
    pair = None
    for a, b in zip(orbits[:-1], orbits[1:]):
        mid = 0.5 * (a.a0 + b.a0)
        if classify_trajectory(spec, mid) is TrajectoryClass.MONOTONE_INCREASING:
            pair = (a, b)
            break
    if pair is None:
        raise err.HypothesisError("no orbit pair with increasing interior flow")
    sol = build_periodic_dirichlet(spec, pair[0], pair[1], R=args.R,
                                   max_periods=cfg.max_periods)
    cert = {
        "R": sol.R,
        "period_residual": sol.period_residual,
        "monotone_certificate": sol.monotone_certificate,
        "periods_used": sol.periods_used,
        "c1": sol.c1,
        "c2": sol.c2,
        "symmetry_residual": sol.symmetry_residual,
    }
    print(json.dumps(cert, sort_keys=True, indent=2))
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_json(out_dir / "certificate.json", cert)
        for k, f in enumerate(sol.profile_cycle):
            _write_snapshot(out_dir / f"dirichlet_cycle_{k:02d}.csv", f)
        print(f"# artifacts: {out_dir}", file=sys.stderr)
    return 0


def _cmd_plots(args) -> int:
    written = emit_plots(args.dir)
    for p in written:
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="perilab",
                                 description="Time-periodic reaction-diffusion laboratory")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("run", help="run one scenario")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("threshold", help="sharp extinction/propagation threshold")
    p.add_argument("--config", required=True)
    p.add_argument("--lo", type=float, required=True)
    p.add_argument("--hi", type=float, required=True)
    p.add_argument("--width", type=float, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_threshold)

    p = sub.add_parser("ode", help="kinetics diagnostics")
    ps = p.add_subparsers(dest="ode_cmd", required=True)
    q = ps.add_parser("orbits")
    q.add_argument("--config", required=True)
    q.add_argument("--range", default="0.0,1.5")
    q.set_defaults(fn=_cmd_ode)
    q = ps.add_parser("classify")
    q.add_argument("--config", required=True)
    q.add_argument("--a", type=float, required=True)
    q.set_defaults(fn=_cmd_ode)
    q = ps.add_parser("gfun")
    q.add_argument("--config", required=True)
    q.add_argument("--lo", type=float, default=None)
    q.add_argument("--hi", type=float, default=None)
    q.set_defaults(fn=_cmd_ode)

    p = sub.add_parser("dirichlet-build", help="monotone periodic Dirichlet construction")
    p.add_argument("--config", required=True)
    p.add_argument("--R", type=float, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_dirichlet)

    p = sub.add_parser("plots", help="emit plot data from a run directory")
    p.add_argument("dir")
    p.set_defaults(fn=_cmd_plots)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except (err.ConfigError, err.DomainError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (err.BracketError, err.HypothesisError, err.DomainTooSmallError) as e:
        print(f"bracket/hypothesis error: {e}", file=sys.stderr)
        return 4
    except err.PerilabError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
