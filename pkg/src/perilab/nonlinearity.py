"""Time-periodic reaction terms f(t, u) and their u-derivatives.

The built-in families share the product form f(t, u) = b(t) * g(u) with a
positive periodic modulation b(t) = 1 + beta * sin(2*pi*t/T):

* ``bistable``    g(u) = u (1 - u) (u - theta),  theta in (0, 1)
* ``combustion``  g(u) = 0 on [0, q1],  g(u) = (u - q1)(1 - u) above q1
* ``logistic``    g(u) = u (1 - u)

A ``custom`` family is driven by a coefficient table: each entry
(j, k, c) contributes c * phi_j(t) * u**k with k >= 1, where phi_0 = 1,
phi_{2m-1} = cos(2*pi*m*t/T) and phi_{2m} = sin(2*pi*m*t/T). Restricting to
k >= 1 bakes in f(t, 0) = 0.

All evaluators accept scalars or numpy arrays in ``u`` and clamp u < 0 to
f = 0, so stray negative round-off in a solver cannot inject mass.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Tuple

import numpy as np

from .errors import DomainError, ModelError

_DERIV_SAFETY = 1.05  # inflation applied to sampled derivative suprema
_FD_STEP = 1e-6       # central-difference step scale for the custom family


class Family(Enum):
    BISTABLE = "bistable"
    COMBUSTION = "combustion"
    LOGISTIC = "logistic"
    CUSTOM = "custom"


@dataclass(frozen=True)
class NonlinearitySpec:
    """Immutable description of a forcing term f(t, u).

    Parameters
    ----------
    family : Family or str
        One of the built-in families or ``custom``.
    period_T : float
        Forcing period, must be positive.
    theta : float
        Bistable threshold in (0, 1); ignored by other families.
    beta : float
        Forcing amplitude of b(t) = 1 + beta sin(2 pi t / T), beta >= 0.
    q1 : float
        Upper edge of the combustion ignition interval [0, q1].
    coeffs : tuple of (j, k, c)
        Custom-family table; term c * phi_j(t) * u**k, k >= 1.
    u_max : float
        Range over which construction-time finiteness checks sample.
    """

    family: Family
    period_T: float = 1.0
    theta: float = 0.3
    beta: float = 0.0
    q1: float = 0.3
    coeffs: Tuple[Tuple[int, int, float], ...] = ()
    u_max: float = 10.0

    def __post_init__(self):
        fam = self.family if isinstance(self.family, Family) else Family(str(self.family))
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "coeffs", tuple((int(j), int(k), float(c)) for j, k, c in self.coeffs))
        self._validate()

    def _validate(self):
        if not np.isfinite(self.period_T) or self.period_T <= 0:
            raise ModelError(f"period_T must be positive and finite, got {self.period_T}")
        if not np.isfinite(self.beta) or self.beta < 0:
            raise ModelError(f"beta must be nonnegative and finite, got {self.beta}")
        if self.family is Family.BISTABLE and not 0.0 < self.theta < 1.0:
            raise ModelError(f"bistable theta must lie in (0, 1), got {self.theta}")
        if self.family is Family.COMBUSTION and not 0.0 < self.q1 < 1.0:
            raise ModelError(f"combustion q1 must lie in (0, 1), got {self.q1}")
        for j, k, c in self.coeffs:
            if j < 0 or k < 1 or not np.isfinite(c):
                raise ModelError(f"bad custom coefficient (j={j}, k={k}, c={c}): need j >= 0, k >= 1, finite c")
        # Finiteness over the declared range; cheap sampled audit.
        ts = np.linspace(0.0, self.period_T, 9)
        us = np.linspace(0.0, self.u_max, 17)
        for t in ts:
            vals = eval_f(self, float(t), us)
            if not np.all(np.isfinite(vals)):
                raise ModelError(f"f(t={t}, u) not finite over [0, {self.u_max}]")

    # -- modulation ------------------------------------------------------

    def b(self, t):
        return 1.0 + self.beta * np.sin(2.0 * np.pi * np.asarray(t, dtype=float) / self.period_T)

    def b_mean_one_period(self) -> float:
        return 1.0


def bistable_spec(theta=0.3, beta=0.0, T=1.0, **kw) -> NonlinearitySpec:
    return NonlinearitySpec(Family.BISTABLE, period_T=T, theta=theta, beta=beta, **kw)


def combustion_spec(q1=0.3, beta=0.0, T=1.0, **kw) -> NonlinearitySpec:
    return NonlinearitySpec(Family.COMBUSTION, period_T=T, q1=q1, beta=beta, **kw)


def logistic_spec(beta=0.0, T=1.0, **kw) -> NonlinearitySpec:
    return NonlinearitySpec(Family.LOGISTIC, period_T=T, beta=beta, **kw)


def custom_spec(coeffs: Sequence[Tuple[int, int, float]], T=1.0, **kw) -> NonlinearitySpec:
    return NonlinearitySpec(Family.CUSTOM, period_T=T, coeffs=tuple(coeffs), **kw)


def zero_spec(T=1.0) -> NonlinearitySpec:
    """The identically-zero forcing (custom family with an empty table)."""
    return NonlinearitySpec(Family.CUSTOM, period_T=T, coeffs=())


# -- spatial parts g(u), g'(u), g''(u) -----------------------------------

def _g(spec: NonlinearitySpec, u):
    u = np.asarray(u, dtype=float)
    if spec.family is Family.BISTABLE:
        return u * (1.0 - u) * (u - spec.theta)
    if spec.family is Family.LOGISTIC:
        return u * (1.0 - u)
    if spec.family is Family.COMBUSTION:
        q1 = spec.q1
        return np.where(u > q1, (u - q1) * (1.0 - u), 0.0)
    raise AssertionError("custom family has no single g(u)")


def _gp(spec: NonlinearitySpec, u):
    u = np.asarray(u, dtype=float)
    if spec.family is Family.BISTABLE:
        th = spec.theta
        return -3.0 * u * u + 2.0 * (1.0 + th) * u - th
    if spec.family is Family.LOGISTIC:
        return 1.0 - 2.0 * u
    if spec.family is Family.COMBUSTION:
        q1 = spec.q1
        return np.where(u > q1, 1.0 + q1 - 2.0 * u, 0.0)
    raise AssertionError("custom family has no single g'(u)")


def _gpp(spec: NonlinearitySpec, u):
    u = np.asarray(u, dtype=float)
    if spec.family is Family.BISTABLE:
        return -6.0 * u + 2.0 * (1.0 + spec.theta)
    if spec.family is Family.LOGISTIC:
        return np.full_like(u, -2.0)
    if spec.family is Family.COMBUSTION:
        return np.where(u > spec.q1, -2.0, 0.0)
    raise AssertionError("custom family has no single g''(u)")


def _fourier_mode(j: int, t, T: float):
    t = np.asarray(t, dtype=float)
    if j == 0:
        return np.ones_like(t)
    m = (j + 1) // 2
    arg = 2.0 * np.pi * m * t / T
    return np.cos(arg) if j % 2 == 1 else np.sin(arg)


def _custom_eval(spec: NonlinearitySpec, t, u):
    u = np.asarray(u, dtype=float)
    out = np.zeros(np.broadcast(np.asarray(t, dtype=float), u).shape)
    for j, k, c in spec.coeffs:
        out = out + c * _fourier_mode(j, t, spec.period_T) * np.power(u, k)
    return out


# -- public evaluators ----------------------------------------------------

def eval_f(spec: NonlinearitySpec, t, u):
    """Evaluate f(t, u); periodic in t, zero at u = 0, clamped for u < 0."""
    u = np.asarray(u, dtype=float)
    scalar = u.ndim == 0 and np.ndim(t) == 0
    uc = np.maximum(u, 0.0)
    if spec.family is Family.CUSTOM:
        val = _custom_eval(spec, t, uc)
    else:
        val = spec.b(t) * _g(spec, uc)
    val = np.where(u < 0.0, 0.0, val)
    return float(val) if scalar else val


def eval_fu(spec: NonlinearitySpec, t, u):
    """du-derivative of f.

    Analytic for the built-in product families; central finite differences
    with step 1e-6 * max(1, |u|) for the custom family.
    """
    u = np.asarray(u, dtype=float)
    scalar = u.ndim == 0 and np.ndim(t) == 0
    uc = np.maximum(u, 0.0)
    if spec.family is Family.CUSTOM:
        h = _FD_STEP * np.maximum(1.0, np.abs(uc))
        val = (_custom_eval(spec, t, uc + h) - _custom_eval(spec, t, uc - h)) / (2.0 * h)
    else:
        val = spec.b(t) * _gp(spec, uc)
    val = np.where(u < 0.0, 0.0, val)
    return float(val) if scalar else val


def eval_fuu(spec: NonlinearitySpec, t, u):
    """Second u-derivative of f; finite differences for the custom family."""
    u = np.asarray(u, dtype=float)
    scalar = u.ndim == 0 and np.ndim(t) == 0
    uc = np.maximum(u, 0.0)
    if spec.family is Family.CUSTOM:
        h = _FD_STEP * np.maximum(1.0, np.abs(uc))
        val = (_custom_eval(spec, t, uc + h) - 2.0 * _custom_eval(spec, t, uc)
               + _custom_eval(spec, t, uc - h)) / (h * h)
    else:
        val = spec.b(t) * _gpp(spec, uc)
    val = np.where(u < 0.0, 0.0, val)
    return float(val) if scalar else val


def derivative_bounds(spec: NonlinearitySpec, p_minus, p_plus,
                      n_t: int = 257, n_u: int = 129) -> Tuple[float, float]:
    """Suprema (C1, C2) of |f_u| and |f_uu| over the tube between two orbits.

    Sampled on an (n_t, n_u) grid over {(t, u): t in [0, T],
    u in [p_minus(t), p_plus(t)]} and inflated by a 5% safety factor.

    Raises DomainError when the orbits cross (empty tube).
    """
    T = spec.period_T
    ts = np.linspace(0.0, T, n_t)
    lo = np.asarray([p_minus.value(t) for t in ts])
    hi = np.asarray([p_plus.value(t) for t in ts])
    if np.any(hi < lo):
        k = int(np.argmax(hi < lo))
        raise DomainError(f"orbit tube empty: p_minus({ts[k]:.4g}) = {lo[k]:.6g} "
                          f"> p_plus({ts[k]:.4g}) = {hi[k]:.6g}")
    frac = np.linspace(0.0, 1.0, n_u)
    c1 = 0.0
    c2 = 0.0
    for i, t in enumerate(ts):
        us = lo[i] + frac * (hi[i] - lo[i])
        c1 = max(c1, float(np.max(np.abs(eval_fu(spec, float(t), us)))))
        c2 = max(c2, float(np.max(np.abs(eval_fuu(spec, float(t), us)))))
    return _DERIV_SAFETY * c1, _DERIV_SAFETY * c2
