"""Coupling schedules sigma_t with cumulative integrals and regime tags.

Every schedule exposes ``sigma``, ``int_sigma`` (integral of sigma),
``int_sigma_sq`` (integral of sigma^2) and ``int_inv_sigma_sq`` (integral
of sigma^-2). The first four kinds are closed form; ``tabulated`` uses a
shape-preserving (PCHIP) interpolant of the table, a constant tail after
the last knot, and adaptive Simpson quadrature.

Kinds and their parameters::

    constant           sigma_t = sigma
    power_law          sigma_t = sigma * sqrt(alpha) * t**((alpha - 1)/2)
                       (so that int_0^t sigma^2 = sigma^2 t**alpha)
    exponential_decay  sigma_t = sigma * exp(-lambda t)
    finite_time        sigma_t = sigma T / (T - t),  0 <= t < T
    tabulated          PCHIP through [[t, sigma], ...]
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.interpolate import PchipInterpolator

KINDS = ("constant", "power_law", "exponential_decay", "finite_time", "tabulated")

# closest approach to the finite-time singularity, relative to T
FINITE_TIME_CLAMP = 1e-12
SIMPSON_RTOL = 1e-10


class CouplingError(ValueError):
    """Invalid schedule parameters."""


class DomainError(ValueError):
    """Time or interval outside the schedule's domain."""


class Regime(str, Enum):
    COMPLETE = "complete_infinite_horizon"
    PARTIAL = "partial"
    FINITE_TIME = "finite_time"


@dataclass(frozen=True)
class CollapseRegime:
    tag: Regime
    horizon: float | None = None
    total_int_sigma_sq: float = math.inf


def _adaptive_simpson(f, a: float, b: float, rtol: float = SIMPSON_RTOL, max_depth: int = 50) -> float:
    """Adaptive Simpson quadrature with Richardson correction."""
    if b <= a:
        return 0.0

    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    scale = abs(whole)

    def recurse(a, b, fa, fm, fb, whole, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        delta = left + right - whole
        tol = rtol * max(scale, abs(left + right), 1e-300)
        if depth >= max_depth or abs(delta) <= 15.0 * tol:
            return left + right + delta / 15.0
        return recurse(a, m, fa, flm, fm, left, depth + 1) + recurse(m, b, fm, frm, fb, right, depth + 1)

    return recurse(a, b, fa, fm, fb, whole, 0)


@dataclass(frozen=True)
class CouplingSchedule:
    """A positive coupling function and its exact cumulative integrals."""

    kind: str
    sigma0: float = 1.0
    alpha: float = 1.0
    decay: float = 1.0
    horizon: float = math.inf
    table: tuple = ()
    _interp: object = field(default=None, repr=False, compare=False)
    _knot_cum: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CouplingError(f"unknown coupling kind {self.kind!r}; expected one of {KINDS}")
        if self.kind != "tabulated" and not (self.sigma0 > 0 and math.isfinite(self.sigma0)):
            raise CouplingError(f"sigma must be positive and finite, got {self.sigma0}")
        if self.kind == "power_law" and not self.alpha > 0:
            raise CouplingError(f"power_law needs alpha > 0, got {self.alpha}")
        if self.kind == "exponential_decay" and not self.decay > 0:
            raise CouplingError(f"exponential_decay needs lambda > 0, got {self.decay}")
        if self.kind == "finite_time" and not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise CouplingError(f"finite_time needs a finite horizon T > 0, got {self.horizon}")
        if self.kind == "tabulated":
            self._build_table()

    # -- construction -------------------------------------------------------

    @classmethod
    def constant(cls, sigma: float) -> "CouplingSchedule":
        return cls("constant", sigma0=float(sigma))

    @classmethod
    def power_law(cls, sigma: float, alpha: float) -> "CouplingSchedule":
        return cls("power_law", sigma0=float(sigma), alpha=float(alpha))

    @classmethod
    def exponential_decay(cls, sigma: float, decay: float) -> "CouplingSchedule":
        return cls("exponential_decay", sigma0=float(sigma), decay=float(decay))

    @classmethod
    def finite_time(cls, sigma: float, horizon: float) -> "CouplingSchedule":
        return cls("finite_time", sigma0=float(sigma), horizon=float(horizon))

    @classmethod
    def tabulated(cls, table) -> "CouplingSchedule":
        rows = tuple((float(t), float(s)) for t, s in table)
        return cls("tabulated", table=rows)

    @classmethod
    def from_config(cls, cfg: dict) -> "CouplingSchedule":
        """Build from ``{"kind": ..., "sigma": .., "T": .., "lambda": .., "alpha": .., "table": ..}``."""
        kind = cfg.get("kind")
        if kind == "constant":
            return cls.constant(cfg["sigma"])
        if kind == "power_law":
            return cls.power_law(cfg.get("sigma", 1.0), cfg["alpha"])
        if kind == "exponential_decay":
            return cls.exponential_decay(cfg.get("sigma", 1.0), cfg["lambda"])
        if kind == "finite_time":
            return cls.finite_time(cfg.get("sigma", 1.0), cfg["T"])
        if kind == "tabulated":
            return cls.tabulated(cfg["table"])
        raise CouplingError(f"unknown coupling kind {kind!r}; expected one of {KINDS}")

    def to_config(self) -> dict:
        if self.kind == "constant":
            return {"kind": "constant", "sigma": self.sigma0}
        if self.kind == "power_law":
            return {"kind": "power_law", "sigma": self.sigma0, "alpha": self.alpha}
        if self.kind == "exponential_decay":
            return {"kind": "exponential_decay", "sigma": self.sigma0, "lambda": self.decay}
        if self.kind == "finite_time":
            return {"kind": "finite_time", "sigma": self.sigma0, "T": self.horizon}
        return {"kind": "tabulated", "table": [list(r) for r in self.table]}

    def _build_table(self):
        if len(self.table) < 2:
            raise CouplingError("tabulated coupling needs at least two rows")
        t = np.array([r[0] for r in self.table], dtype=float)
        s = np.array([r[1] for r in self.table], dtype=float)
        if t[0] != 0.0:
            raise CouplingError("tabulated coupling must start at t = 0")
        if np.any(np.diff(t) <= 0):
            raise CouplingError("tabulated times must be strictly increasing")
        if np.any(s <= 0) or not np.all(np.isfinite(s)):
            raise CouplingError("tabulated sigma values must be positive and finite")
        interp = PchipInterpolator(t, s, extrapolate=False)
        object.__setattr__(self, "_interp", interp)
        cum = [(0.0, 0.0, 0.0)]
        for a, b in zip(t[:-1], t[1:]):
            c1, c2, c3 = cum[-1]
            cum.append(
                (
                    c1 + _adaptive_simpson(lambda u: self._tab_sigma(u), a, b),
                    c2 + _adaptive_simpson(lambda u: self._tab_sigma(u) ** 2, a, b),
                    c3 + _adaptive_simpson(lambda u: self._tab_sigma(u) ** -2, a, b),
                )
            )
        object.__setattr__(self, "_knot_cum", tuple(cum))

    # -- pointwise ----------------------------------------------------------

    @property
    def is_finite_time(self) -> bool:
        return self.kind == "finite_time"

    def _clamp(self, t):
        if self.kind != "finite_time":
            return t
        return np.minimum(t, self.horizon * (1.0 - FINITE_TIME_CLAMP))

    def _check_time(self, t) -> None:
        arr = np.asarray(t, dtype=float)
        if np.any(np.isnan(arr)) or np.any(arr < 0):
            raise DomainError(f"time must be nonnegative, got {t}")
        if self.kind == "finite_time" and np.any(arr >= self.horizon):
            raise DomainError(f"t={np.max(arr):.17g} is not before the horizon T={self.horizon}")

    def _tab_sigma(self, t):
        t_arr = np.asarray(t, dtype=float)
        last_t, last_s = self.table[-1]
        vals = self._interp(np.minimum(t_arr, last_t))
        return np.where(t_arr >= last_t, last_s, vals)

    def sigma(self, t):
        """Coupling strength at time ``t`` (scalar or array)."""
        self._check_time(t)
        t = self._clamp(np.asarray(t, dtype=float))
        if self.kind == "constant":
            out = np.full_like(t, self.sigma0)
        elif self.kind == "power_law":
            with np.errstate(divide="ignore"):
                out = self.sigma0 * math.sqrt(self.alpha) * t ** (0.5 * (self.alpha - 1.0))
        elif self.kind == "exponential_decay":
            out = self.sigma0 * np.exp(-self.decay * t)
        elif self.kind == "finite_time":
            out = self.sigma0 * self.horizon / (self.horizon - t)
        else:
            out = self._tab_sigma(t)
        return out[()] if out.ndim == 0 else out

    # -- integrals ----------------------------------------------------------

    def _check_interval(self, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if np.any(b < a):
            raise DomainError("reversed interval: need a <= b")
        if np.any(a < 0):
            raise DomainError("interval must start at t >= 0")
        if self.kind == "finite_time" and np.any(b >= self.horizon):
            raise DomainError(f"interval end reaches the horizon T={self.horizon}")
        return a, b

    def _tab_cumulative(self, t: float, which: int) -> float:
        knots = [r[0] for r in self.table]
        k = int(np.searchsorted(knots, t, side="right")) - 1
        k = min(k, len(knots) - 1)
        base = self._knot_cum[k][which]
        if t == knots[k]:
            return base
        if k == len(knots) - 1:
            s = self.table[-1][1]
            return base + (t - knots[k]) * (s, s * s, s**-2)[which]
        f = (
            (lambda u: self._tab_sigma(u)),
            (lambda u: self._tab_sigma(u) ** 2),
            (lambda u: self._tab_sigma(u) ** -2),
        )[which]
        return base + _adaptive_simpson(f, knots[k], t)

    def _integral(self, a, b, which: int):
        a, b = self._check_interval(a, b)
        scalar = a.ndim == 0 and b.ndim == 0
        a, b = np.broadcast_arrays(a, b)
        a = self._clamp(a)
        b = self._clamp(b)
        s0 = self.sigma0
        if self.kind == "constant":
            out = (b - a) * (s0, s0 * s0, 1.0 / (s0 * s0))[which]
        elif self.kind == "power_law":
            al = self.alpha
            if which == 0:
                p = 0.5 * (al + 1.0)
                out = s0 * math.sqrt(al) * (b**p - a**p) / p
            elif which == 1:
                out = s0 * s0 * (b**al - a**al)
            else:
                p = 2.0 - al
                if p > 0:
                    out = (b**p - a**p) / (s0 * s0 * al * p)
                elif p == 0:
                    with np.errstate(divide="ignore"):
                        out = (np.log(b) - np.log(a)) / (s0 * s0 * al)
                else:
                    with np.errstate(divide="ignore"):
                        out = (a**p - b**p) / (s0 * s0 * al * (-p))
                out = np.where(b == a, 0.0, out)
        elif self.kind == "exponential_decay":
            lam = self.decay
            if which == 0:
                # exp(-la)(1 - exp(-l(b-a)))/l, stable for small steps
                out = s0 * np.exp(-lam * a) * -np.expm1(-lam * (b - a)) / lam
            elif which == 1:
                out = s0 * s0 * np.exp(-2.0 * lam * a) * -np.expm1(-2.0 * lam * (b - a)) / (2.0 * lam)
            else:
                out = np.exp(2.0 * lam * a) * np.expm1(2.0 * lam * (b - a)) / (2.0 * lam * s0 * s0)
        elif self.kind == "finite_time":
            T = self.horizon
            ra, rb = T - a, T - b
            if which == 0:
                out = s0 * T * np.log1p((b - a) / rb)
            elif which == 1:
                out = (s0 * T) ** 2 * (b - a) / (ra * rb)
            else:
                out = (b - a) * (ra * ra + ra * rb + rb * rb) / (3.0 * (s0 * T) ** 2)
        else:
            flat_a, flat_b = a.ravel(), b.ravel()
            vals = np.array(
                [
                    self._tab_cumulative(float(y), which) - self._tab_cumulative(float(x), which)
                    for x, y in zip(flat_a, flat_b)
                ]
            )
            out = vals.reshape(a.shape)
        out = np.asarray(out, dtype=float)
        return float(out) if scalar else out

    def int_sigma(self, a, b):
        """Integral of sigma over [a, b]."""
        return self._integral(a, b, 0)

    def int_sigma_sq(self, a, b):
        """Integral of sigma^2 over [a, b]."""
        return self._integral(a, b, 1)

    def int_inv_sigma_sq(self, a, b):
        """Integral of sigma^-2 over [a, b] (noise variance of the rescaled increments)."""
        return self._integral(a, b, 2)

    def total_int_sigma_sq(self) -> float:
        """Integral of sigma^2 over the whole domain (inf unless partial)."""
        if self.kind == "exponential_decay":
            return self.sigma0**2 / (2.0 * self.decay)
        return math.inf

    # -- classification -----------------------------------------------------

    def classify(self) -> CollapseRegime:
        if self.kind == "finite_time":
            return CollapseRegime(Regime.FINITE_TIME, horizon=self.horizon)
        total = self.total_int_sigma_sq()
        if math.isfinite(total):
            return CollapseRegime(Regime.PARTIAL, total_int_sigma_sq=total)
        return CollapseRegime(Regime.COMPLETE)


def sigma(schedule: CouplingSchedule, t):
    return schedule.sigma(t)


def int_sigma(schedule: CouplingSchedule, a, b):
    return schedule.int_sigma(a, b)


def int_sigma_sq(schedule: CouplingSchedule, a, b):
    return schedule.int_sigma_sq(a, b)


def classify(schedule: CouplingSchedule) -> CollapseRegime:
    return schedule.classify()
