"""Run configuration: flat dotted-key text format, validation, initial data.

The on-disk format is deliberately primitive (one ``section.key=value`` per
line, ``#`` comments) so configs diff cleanly and hash deterministically.
The custom-nonlinearity table is a semicolon list of ``j,k,c`` triplets.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from .errors import ConfigError
from .nonlinearity import Family, NonlinearitySpec
from .pde_solver import Field, Grid

_SHAPES = ("box", "gaussian", "twoboxes")


@dataclass
class ScenarioConfig:
    """Complete description of one scenario run."""
    # nonlinearity
    family: str = "bistable"
    T: float = 1.0
    theta: float = 0.3
    beta: float = 0.0
    q1: float = 0.3
    coeffs: Tuple[Tuple[int, int, float], ...] = ()
    # domain
    L: float = 40.0
    n_x: int = 2049
    # time
    dt: Optional[float] = None          # defaults to T/400
    max_periods: int = 400
    # initial data
    shape: str = "box"
    sigma: float = 1.2
    width: float = 2.0
    center: float = 0.0
    second_amp_rel: float = 0.5
    second_width: float = 1.0
    second_center: float = -3.5
    # tolerances / policies
    tol_omega: float = 1e-6
    tol_flat: float = 1e-5
    tol_sym: float = 1e-4
    leak_tol: float = 1e-4
    u_max: float = 10.0
    core_frac: float = 0.6
    extinction_gap: float = 1e-3
    # ode scan
    scan_hi: float = 1.5
    n_scan: int = 121
    # run
    seed: int = 0
    adaptive_boundary: bool = True

    def __post_init__(self):
        self.validate()

    # -- validation -------------------------------------------------------

    def validate(self):
        if self.family not in ("bistable", "combustion", "logistic", "custom"):
            raise ConfigError(f"nonlinearity.family: unknown family {self.family!r}")
        if self.shape not in _SHAPES:
            raise ConfigError(f"initial.shape: unknown shape {self.shape!r}, use one of {_SHAPES}")
        for name in ("tol_omega", "tol_flat", "tol_sym", "leak_tol", "u_max",
                     "core_frac", "extinction_gap"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"tolerances.{name}: must be positive, got {getattr(self, name)}")
        if not self.L > 0:
            raise ConfigError(f"domain.L: must be positive, got {self.L}")
        if self.n_x < 3:
            raise ConfigError(f"domain.n_x: need at least 3 nodes, got {self.n_x}")
        if self.max_periods < 1:
            raise ConfigError(f"time.max_periods: must be >= 1, got {self.max_periods}")
        if self.sigma < 0:
            raise ConfigError(f"initial.sigma: must be nonnegative, got {self.sigma}")
        lo, hi = self.support_hull()
        cap = 0.8 * self.L
        if lo < -cap or hi > cap:
            raise ConfigError(
                f"initial: support [{lo:.4g}, {hi:.4g}] must stay inside (-{cap:.4g}, {cap:.4g})")

    # -- derived objects ---------------------------------------------------

    def nonlinearity_spec(self) -> NonlinearitySpec:
        return NonlinearitySpec(Family(self.family), period_T=self.T, theta=self.theta,
                                beta=self.beta, q1=self.q1, coeffs=self.coeffs,
                                u_max=self.u_max)

    def grid(self) -> Grid:
        return Grid(-self.L, self.L, self.n_x)

    def dt_effective(self) -> float:
        return self.dt if self.dt is not None else self.T / 400.0

    def support_hull(self) -> Tuple[float, float]:
        if self.shape == "box":
            return self.center - self.width / 2.0, self.center + self.width / 2.0
        if self.shape == "gaussian":
            return self.center - 4.0 * self.width, self.center + 4.0 * self.width
        lo1, hi1 = self.center - self.width / 2.0, self.center + self.width / 2.0
        lo2 = self.second_center - self.second_width / 2.0
        hi2 = self.second_center + self.second_width / 2.0
        return min(lo1, lo2), max(hi1, hi2)

    def initial_field(self, sigma: Optional[float] = None) -> Field:
        """Build u0 on the configured grid; ``sigma`` overrides the amplitude
        (used by the threshold bisection)."""
        s = self.sigma if sigma is None else sigma
        g = self.grid()
        x = g.x
        if self.shape == "box":
            vals = np.where(np.abs(x - self.center) <= self.width / 2.0, s, 0.0)
        elif self.shape == "gaussian":
            z = (x - self.center) / self.width
            vals = np.where(np.abs(z) <= 4.0, s * np.exp(-z * z), 0.0)
        else:
            vals = np.where(np.abs(x - self.center) <= self.width / 2.0, s, 0.0)
            vals = vals + np.where(
                np.abs(x - self.second_center) <= self.second_width / 2.0,
                s * self.second_amp_rel, 0.0)
        return Field(g, vals, time_stamp=0.0, support=self.support_hull())

    def with_sigma(self, sigma: float) -> "ScenarioConfig":
        return replace(self, sigma=sigma)

    # -- flat serialization -------------------------------------------------

    def to_flat(self) -> str:
        items = {
            "nonlinearity.family": self.family,
            "nonlinearity.T": repr(self.T),
            "nonlinearity.theta": repr(self.theta),
            "nonlinearity.beta": repr(self.beta),
            "nonlinearity.q1": repr(self.q1),
            "nonlinearity.coeffs": _coeffs_to_str(self.coeffs),
            "domain.L": repr(self.L),
            "domain.n_x": str(self.n_x),
            "time.dt": "" if self.dt is None else repr(self.dt),
            "time.max_periods": str(self.max_periods),
            "initial.shape": self.shape,
            "initial.sigma": repr(self.sigma),
            "initial.width": repr(self.width),
            "initial.center": repr(self.center),
            "initial.second_amp_rel": repr(self.second_amp_rel),
            "initial.second_width": repr(self.second_width),
            "initial.second_center": repr(self.second_center),
            "tolerances.tol_omega": repr(self.tol_omega),
            "tolerances.tol_flat": repr(self.tol_flat),
            "tolerances.tol_sym": repr(self.tol_sym),
            "tolerances.leak": repr(self.leak_tol),
            "tolerances.u_max": repr(self.u_max),
            "tolerances.core_frac": repr(self.core_frac),
            "tolerances.extinction_gap": repr(self.extinction_gap),
            "ode.scan_hi": repr(self.scan_hi),
            "ode.n_scan": str(self.n_scan),
            "run.seed": str(self.seed),
            "run.adaptive_boundary": "true" if self.adaptive_boundary else "false",
        }
        return "".join(f"{k}={v}\n" for k, v in sorted(items.items()))

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_flat().encode()).hexdigest()[:16]


_KEY_MAP = {
    "nonlinearity.family": ("family", str),
    "nonlinearity.T": ("T", float),
    "nonlinearity.theta": ("theta", float),
    "nonlinearity.beta": ("beta", float),
    "nonlinearity.q1": ("q1", float),
    "nonlinearity.coeffs": ("coeffs", "coeffs"),
    "domain.L": ("L", float),
    "domain.n_x": ("n_x", int),
    "time.dt": ("dt", "opt_float"),
    "time.max_periods": ("max_periods", int),
    "initial.shape": ("shape", str),
    "initial.sigma": ("sigma", float),
    "initial.width": ("width", float),
    "initial.center": ("center", float),
    "initial.second_amp_rel": ("second_amp_rel", float),
    "initial.second_width": ("second_width", float),
    "initial.second_center": ("second_center", float),
    "tolerances.tol_omega": ("tol_omega", float),
    "tolerances.tol_flat": ("tol_flat", float),
    "tolerances.tol_sym": ("tol_sym", float),
    "tolerances.leak": ("leak_tol", float),
    "tolerances.u_max": ("u_max", float),
    "tolerances.core_frac": ("core_frac", float),
    "tolerances.extinction_gap": ("extinction_gap", float),
    "ode.scan_hi": ("scan_hi", float),
    "ode.n_scan": ("n_scan", int),
    "run.seed": ("seed", int),
    "run.adaptive_boundary": ("adaptive_boundary", "bool"),
}


def _coeffs_to_str(coeffs) -> str:
    return ";".join(f"{j},{k},{c!r}" for j, k, c in coeffs)


def _coeffs_from_str(raw: str):
    raw = raw.strip()
    if not raw:
        return ()
    out = []
    for part in raw.split(";"):
        bits = part.split(",")
        if len(bits) != 3:
            raise ConfigError(f"nonlinearity.coeffs: expected j,k,c triplets, got {part!r}")
        out.append((int(bits[0]), int(bits[1]), float(bits[2])))
    return tuple(out)


def parse_config(text: str) -> ScenarioConfig:
    """Parse the flat key=value format into a validated ScenarioConfig."""
    values = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _KEY_MAP:
            raise ConfigError(f"line {ln}: unknown key {key!r}")
        name, kind = _KEY_MAP[key]
        try:
            if kind is str:
                values[name] = raw
            elif kind is float:
                values[name] = float(raw)
            elif kind is int:
                values[name] = int(raw)
            elif kind == "opt_float":
                values[name] = None if raw == "" else float(raw)
            elif kind == "bool":
                values[name] = raw.lower() in ("1", "true", "yes", "on")
            elif kind == "coeffs":
                values[name] = _coeffs_from_str(raw)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from exc
    return ScenarioConfig(**values)


def load_config(path: str) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
