"""Run configuration: one JSON document describing a single experiment.

Example::

    {
      "experiment": "ensemble",
      "spectrum": {"energies": [0, 1], "priors": [0.3, 0.7]},
      "coupling": {"kind": "constant", "sigma": 1.0},
      "grid": {"t_end": 100, "steps": 200},
      "seed": 1,
      "paths": 10000
    }

A spectrum may instead be given as ``{"hamiltonian": [[...]], "initial_state":
[...]}``, with complex entries written as ``[re, im]``. The grid is either
``{"t_end", "steps"}`` or, for finite-horizon couplings,
``{"horizon_fraction", "steps", "terminal"}``, where both fractions are
relative to the horizon ``T``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coupling import KINDS, CouplingSchedule
from .exact_solver import TimeGrid
from .spectrum import HERMITIAN_TOL, LuedersBasis, Spectrum, decompose, diagonal_basis, hermitian_defect

EXPERIMENTS = ("trajectory", "ensemble", "oracle_compare", "finite_time", "partial_measurement", "convergence")
SEED_ENV = "REDUCTION_LAB_SEED"


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is a dotted path into the document."""

    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}")
        self.field = field_path
        self.message = message


@dataclass(frozen=True)
class Diagnostic:
    field: str
    message: str

    def __str__(self) -> str:
        return f"{self.field}: {self.message}"


def _complex(value, where: str) -> complex:
    if isinstance(value, (list, tuple)):
        if len(value) != 2:
            raise ConfigError(where, "complex numbers are written as [re, im]")
        return complex(float(value[0]), float(value[1]))
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return complex(value)
    raise ConfigError(where, f"expected a number or [re, im], got {value!r}")


def _complex_array(value, where: str, ndim: int) -> np.ndarray:
    if not isinstance(value, list):
        raise ConfigError(where, "expected a list")
    if ndim == 1:
        return np.array([_complex(v, f"{where}[{i}]") for i, v in enumerate(value)])
    rows = [_complex_array(r, f"{where}[{i}]", 1) for i, r in enumerate(value)]
    if len({r.size for r in rows}) > 1:
        raise ConfigError(where, "rows have different lengths")
    return np.array(rows)


def _number(cfg: dict, key: str, where: str, default=None, integer: bool = False):
    if key not in cfg:
        if default is None:
            raise ConfigError(f"{where}.{key}", "missing")
        return default
    v = cfg[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key}", f"expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(f"{where}.{key}", f"expected an integer, got {v!r}")
    return int(v) if integer else float(v)


@dataclass
class RunConfig:
    raw: dict
    experiment: str | None = None
    seed: int = 0
    paths: int = 1
    threads: int = 1
    out_dir: str = "."
    options: dict = field(default_factory=dict)

    # -- loading ------------------------------------------------------------

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "configuration must be a JSON object")
        exp = raw.get("experiment")
        if exp is not None and exp not in EXPERIMENTS:
            raise ConfigError("experiment", f"unknown experiment {exp!r}; expected one of {EXPERIMENTS}")
        outputs = raw.get("outputs", {})
        if not isinstance(outputs, dict):
            raise ConfigError("outputs", "expected an object")
        return cls(
            raw=raw,
            experiment=exp,
            seed=_number(raw, "seed", "<root>", default=0, integer=True),
            paths=_number(raw, "paths", "<root>", default=1, integer=True),
            threads=_number(raw, "threads", "<root>", default=1, integer=True),
            out_dir=str(outputs.get("dir", ".")),
            options={k: v for k, v in raw.items() if k in ("oracle", "convergence", "finite_time", "sde", "checkpoints")},
        )

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError("<file>", str(exc)) from exc
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from exc
        return cls.from_dict(raw)

    def with_overrides(self, seed=None, out_dir=None, threads=None, env=None) -> "RunConfig":
        """Apply command-line flags; ``REDUCTION_LAB_SEED`` beats the config seed."""
        cfg = RunConfig(self.raw, self.experiment, self.seed, self.paths, self.threads, self.out_dir, self.options)
        env_seed = (env or {}).get(SEED_ENV)
        if env_seed not in (None, ""):
            try:
                cfg.seed = int(env_seed)
            except ValueError as exc:
                raise ConfigError(SEED_ENV, f"not an integer: {env_seed!r}") from exc
        if seed is not None:
            cfg.seed = int(seed)
        if out_dir is not None:
            cfg.out_dir = str(out_dir)
        if threads is not None:
            cfg.threads = int(threads)
        return cfg

    # -- building -----------------------------------------------------------

    def spectrum(self) -> tuple[Spectrum, LuedersBasis, np.ndarray | None]:
        """``(spectrum, basis, hamiltonian or None)``."""
        sp = self.raw.get("spectrum")
        if not isinstance(sp, dict):
            raise ConfigError("spectrum", "missing or not an object")
        if "energies" in sp:
            try:
                e = np.asarray(sp["energies"], dtype=float)
                p = np.asarray(sp.get("priors"), dtype=float)
            except (TypeError, ValueError) as exc:
                raise ConfigError("spectrum", f"energies/priors must be numeric lists ({exc})") from exc
            try:
                spectrum = Spectrum(e, p)
            except ValueError as exc:
                raise ConfigError("spectrum", str(exc)) from exc
            return spectrum, diagonal_basis(spectrum.n_levels), None
        if "hamiltonian" in sp:
            h = _complex_array(sp["hamiltonian"], "spectrum.hamiltonian", 2)
            psi = _complex_array(sp.get("initial_state"), "spectrum.initial_state", 1)
            tol = sp.get("degeneracy_tol")
            try:
                spectrum, basis = decompose(h, psi, degeneracy_tol=tol)
            except ValueError as exc:
                raise ConfigError("spectrum", str(exc)) from exc
            return spectrum, basis, h
        raise ConfigError("spectrum", "give either energies+priors or hamiltonian+initial_state")

    def coupling(self) -> CouplingSchedule:
        c = self.raw.get("coupling")
        if not isinstance(c, dict):
            raise ConfigError("coupling", "missing or not an object")
        if c.get("kind") not in KINDS:
            raise ConfigError("coupling.kind", f"expected one of {KINDS}, got {c.get('kind')!r}")
        try:
            return CouplingSchedule.from_config(c)
        except KeyError as exc:
            raise ConfigError(f"coupling.{exc.args[0]}", "missing") from exc
        except (TypeError, ValueError) as exc:
            raise ConfigError("coupling", str(exc)) from exc

    def grid(self, schedule: CouplingSchedule | None = None) -> TimeGrid:
        g = self.raw.get("grid")
        if not isinstance(g, dict):
            raise ConfigError("grid", "missing or not an object")
        steps = _number(g, "steps", "grid", integer=True)
        if steps < 1:
            raise ConfigError("grid.steps", "must be at least 1")
        schedule = schedule or self.coupling()
        if "horizon_fraction" in g:
            if not schedule.is_finite_time:
                raise ConfigError("grid.horizon_fraction", "only valid for finite_time couplings")
            frac = _number(g, "horizon_fraction", "grid")
            term = g.get("terminal")
            for key, v in (("horizon_fraction", frac), ("terminal", term)):
                if v is not None and not 0 < v < 1:
                    raise ConfigError(f"grid.{key}", f"must lie in (0, 1) so the grid stays before T, got {v}")
            return TimeGrid.towards_horizon(schedule.horizon, steps, frac, terminal=term)
        t_end = _number(g, "t_end", "grid")
        if not (t_end > 0 and math.isfinite(t_end)):
            raise ConfigError("grid.t_end", "must be positive and finite")
        if schedule.is_finite_time and t_end >= schedule.horizon:
            raise ConfigError("grid.t_end", f"reaches the horizon T={schedule.horizon:g}")
        return TimeGrid.uniform(t_end, steps)

    def output_path(self, name: str) -> Path:
        return Path(self.out_dir) / name


def validate(raw: dict) -> list[Diagnostic]:
    """Every violated precondition in ``raw``, without running anything."""
    diags: list[Diagnostic] = []
    if not isinstance(raw, dict):
        return [Diagnostic("<root>", "configuration must be a JSON object")]
    exp = raw.get("experiment")
    if exp is not None and exp not in EXPERIMENTS:
        diags.append(Diagnostic("experiment", f"unknown experiment {exp!r}"))
    for key in ("seed", "paths", "threads"):
        v = raw.get(key)
        if v is not None and (isinstance(v, bool) or not isinstance(v, int)):
            diags.append(Diagnostic(key, f"expected an integer, got {v!r}"))
    if isinstance(raw.get("paths"), int) and raw["paths"] < 1:
        diags.append(Diagnostic("paths", "must be at least 1"))

    sp = raw.get("spectrum")
    if not isinstance(sp, dict):
        diags.append(Diagnostic("spectrum", "missing or not an object"))
    elif "energies" in sp:
        try:
            e = np.asarray(sp["energies"], dtype=float)
            p = np.asarray(sp.get("priors"), dtype=float)
        except (TypeError, ValueError):
            diags.append(Diagnostic("spectrum", "energies and priors must be numeric lists"))
        else:
            if e.shape != p.shape:
                diags.append(Diagnostic("spectrum.priors", f"{p.size} priors for {e.size} energies"))
            if e.size and np.any(np.diff(e) <= 0):
                diags.append(Diagnostic("spectrum.energies", "must be strictly increasing"))
            if np.any(p < 0):
                diags.append(Diagnostic("spectrum.priors", "must be nonnegative"))
            if p.size and abs(p.sum() - 1.0) > 1e-12:
                diags.append(Diagnostic("spectrum.priors", f"normalization: priors sum to {p.sum():.15g}, not 1"))
    elif "hamiltonian" in sp:
        try:
            h = _complex_array(sp["hamiltonian"], "spectrum.hamiltonian", 2)
            psi = _complex_array(sp.get("initial_state"), "spectrum.initial_state", 1)
        except ConfigError as exc:
            diags.append(Diagnostic(exc.field, exc.message))
        else:
            if h.ndim != 2 or h.shape[0] != h.shape[1]:
                diags.append(Diagnostic("spectrum.hamiltonian", f"must be square, got shape {h.shape}"))
            else:
                defect = hermitian_defect(h)
                if defect > HERMITIAN_TOL:
                    diags.append(
                        Diagnostic("spectrum.hamiltonian", f"not Hermitian: max asymmetry |H - H^dagger| = {defect:.6g}")
                    )
                if psi.size != h.shape[0]:
                    diags.append(Diagnostic("spectrum.initial_state", f"dimension {psi.size}, Hamiltonian {h.shape[0]}"))
            n2 = float(np.vdot(psi, psi).real)
            if abs(n2 - 1.0) > 1e-10:
                diags.append(Diagnostic("spectrum.initial_state", f"normalization: squared norm {n2:.15g}, not 1"))
    else:
        diags.append(Diagnostic("spectrum", "give either energies+priors or hamiltonian+initial_state"))

    cfg = RunConfig(raw)
    schedule = None
    try:
        schedule = cfg.coupling()
    except ConfigError as exc:
        diags.append(Diagnostic(exc.field, exc.message))
    if schedule is not None:
        try:
            cfg.grid(schedule)
        except ConfigError as exc:
            msg = exc.message
            if schedule.is_finite_time and ("horizon" in msg or "before T" in msg):
                msg = f"domain: {msg}"
            diags.append(Diagnostic(exc.field, msg))
        if exp == "partial_measurement" and schedule.classify().tag.value != "partial":
            diags.append(Diagnostic("coupling", "partial_measurement needs a coupling with finite total integral"))
        if exp == "finite_time" and not schedule.is_finite_time:
            diags.append(Diagnostic("coupling.kind", "finite_time experiment needs a finite_time coupling"))
    return diags
