"""Analytic predictions and ensemble diagnostics.

Closed-form quantities (collapse tail probability, variance bounds) are
plain functions of the integrated coupling ``I_t = int_0^t sigma^2``.
``ensemble_report`` aggregates exact-solver paths and compares them with
those predictions; ``bridge_transform`` and ``finite_time_equivalence``
handle the finite-horizon coupling ``sigma T / (T - t)``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import ndtr

from .coupling import CouplingSchedule, Regime
from .exact_solver import (
    DEFAULT_CHUNK,
    SamplePath,
    StepIntegrals,
    TimeGrid,
    filter_batch,
    posterior_from_eta,
    sample_batch,
)
from .kernels import innovation
from .spectrum import Spectrum

N_SIGMA = 3.0
FINITE_TIME_STOP = 1e-6


class RegimeError(ValueError):
    """Operation requested for a schedule of the wrong collapse regime."""


class DegenerateGapError(ValueError):
    pass


def _isq(schedule: CouplingSchedule, t) -> float:
    return float(schedule.int_sigma_sq(0.0, t))


# ---------------------------------------------------------------------------
# closed forms


def collapse_tail_probability(omega: float, eps: float, schedule: CouplingSchedule | None, t: float | None = None, isq: float | None = None) -> float:
    """``P(M_t > eps)`` for ``M_t = exp(omega X / 2 - omega^2 I / 4)``, ``X ~ N(0, I)``.

    ``M_t`` is the ratio of the weight of a level at gap ``omega`` to the
    weight of the realised level. Its law depends on ``|omega|`` only, so

        P = 1 - N(|omega| sqrt(I) / 2 + 2 ln(eps) / (|omega| sqrt(I))).

    Pass either ``(schedule, t)`` or ``isq`` directly.
    """
    if omega == 0:
        raise DegenerateGapError("collapse tail is undefined for a zero gap")
    if eps <= 0:
        raise ValueError("eps must be positive")
    if isq is None:
        if schedule is None or t is None:
            raise ValueError("need (schedule, t) or isq")
        isq = _isq(schedule, t)
    if isq <= 0:
        return 1.0 if eps < 1.0 else 0.0
    a = abs(omega) * math.sqrt(isq)
    return float(ndtr(-(0.5 * a + 2.0 * math.log(eps) / a)))


def variance_upper_bound(v0: float, schedule: CouplingSchedule | None, t=None, isq=None):
    """Bound on the mean energy variance, ``(-1 + sqrt(1 + 4 V0 I)) / (2 I)``.

    Evaluated as ``2 V0 / (1 + sqrt(1 + 4 V0 I))``, which is the same number
    without the cancellation at small ``I`` and equals ``V0`` at ``I = 0``.
    Vectorised over ``t`` or ``isq``.
    """
    if v0 < 0:
        raise ValueError("V0 must be nonnegative")
    if isq is None:
        if schedule is None or t is None:
            raise ValueError("need (schedule, t) or isq")
        t_arr = np.asarray(t, dtype=float)
        isq = schedule.int_sigma_sq(np.zeros_like(t_arr), t_arr)
    isq = np.asarray(isq, dtype=float)
    out = 2.0 * v0 / (1.0 + np.sqrt(1.0 + 4.0 * v0 * isq))
    return float(out) if out.ndim == 0 else out


def variance_lower_bound(v0: float, v_max: float, schedule: CouplingSchedule | None = None, total_isq: float | None = None) -> float:
    """``max(0, V0 - V_max^2 I_inf)`` for schedules with finite total coupling."""
    if total_isq is None:
        regime = schedule.classify()
        if regime.tag is not Regime.PARTIAL:
            raise RegimeError(f"lower bound needs a partial schedule, got {regime.tag.value}")
        total_isq = regime.total_int_sigma_sq
    return max(0.0, v0 - v_max * v_max * float(total_isq))


def max_variance_numeric(spectrum: Spectrum, n_states: int = 10_000, seed: int = 0) -> tuple[float, float]:
    """Largest ``Var(H)`` over random states, and the two-extreme value.

    Returns ``(sampled_max, extreme_value)``; the latter is the variance of
    the equal superposition of the lowest and highest level.
    """
    rng = np.random.default_rng(seed)
    e = spectrum.energies
    w = rng.dirichlet(np.full(e.size, 0.3), size=n_states)
    mean = w @ e
    var = w @ (e * e) - mean**2
    ext = np.zeros(e.size)
    ext[0] = ext[-1] = 0.5
    if e.size == 1:
        ext[0] = 1.0
    return float(var.max()), float(ext @ (e * e) - (ext @ e) ** 2)


# ---------------------------------------------------------------------------
# ensembles


@dataclass
class EnsembleReport:
    path_count: int
    master_seed: int
    levels: list
    priors: list
    born_frequencies: list
    born_stderr: list
    collapsed_fraction: float
    times: np.ndarray
    mean_H: np.ndarray
    stderr_H: np.ndarray
    mean_V: np.ndarray
    stderr_V: np.ndarray
    upper_bound: np.ndarray
    checkpoints: list
    martingale_H: list  # (t, deviation, stderr)
    martingale_pi: list  # (t, level, deviation, stderr)
    regime: str
    lower_bound: float | None = None
    flags: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.flags.values())

    def summary(self) -> dict:
        """JSON-ready dictionary (curves omitted)."""
        out = asdict(self)
        for key in ("times", "mean_H", "stderr_H", "mean_V", "stderr_V", "upper_bound"):
            out.pop(key)
        out["terminal_mean_V"] = float(self.mean_V[-1])
        out["terminal_stderr_V"] = float(self.stderr_V[-1])
        out["passed"] = self.passed
        return out


def _chunk_sums(spectrum, schedule, grid, steps, master_seed, start, stop, checkpoints):
    batch = sample_batch(spectrum, schedule, grid, master_seed, range(start, stop), steps=steps)
    traj = filter_batch(spectrum, batch)
    final = traj.posteriors[:, -1, :]
    winners = np.argmax(final, axis=1)
    dv = np.diff(traj.variance[:, checkpoints], axis=1)
    pi_c = traj.posteriors[:, checkpoints, :]
    return {
        "born": np.bincount(winners, minlength=spectrum.n_levels).astype(float),
        "collapsed": float(np.sum(final.max(axis=1) > 0.999)),
        "H": traj.energy.sum(axis=0),
        "H2": (traj.energy**2).sum(axis=0),
        "V": traj.variance.sum(axis=0),
        "V2": (traj.variance**2).sum(axis=0),
        "dV": dv.sum(axis=0),
        "dV2": (dv**2).sum(axis=0),
        "pi": pi_c.sum(axis=0),
        "pi2": (pi_c**2).sum(axis=0),
    }


def _mean_se(s1, s2, n):
    mean = s1 / n
    var = np.clip(s2 / n - mean**2, 0.0, None) * n / max(n - 1, 1)
    return mean, np.sqrt(var / n)


def ensemble_report(
    spectrum: Spectrum,
    schedule: CouplingSchedule,
    grid: TimeGrid,
    path_count: int,
    master_seed: int,
    threads: int = 1,
    n_checkpoints: int = 10,
    chunk: int = DEFAULT_CHUNK,
) -> EnsembleReport:
    """Run ``path_count`` exact paths and compare with the analytic predictions.

    Paths are split into fixed chunks of consecutive indices, each seeded per
    path, so the result does not depend on ``threads``: chunk sums are added
    in chunk order after all workers finish.

    Flags (all at ``N_SIGMA`` standard errors):

    * ``born`` (collapsing regimes only): terminal argmax frequencies against the priors;
    * ``martingale_H`` and ``martingale_pi`` at the checkpoints;
    * ``variance_upper_bound``: mean V_t against the bound at every t > 0;
    * ``variance_nonincreasing`` between consecutive checkpoints;
    * in the partial regime ``variance_lower_bound`` and ``incomplete_reduction``.
    """
    if path_count < 100:
        raise ValueError("ensemble_report needs at least 100 paths")
    steps = StepIntegrals.build(schedule, grid)
    n_t = grid.times.size
    checkpoints = sorted({int(round(x)) for x in np.linspace(0, n_t - 1, n_checkpoints + 1)})
    bounds = [(s, min(s + chunk, path_count)) for s in range(0, path_count, chunk)]

    def work(b):
        return _chunk_sums(spectrum, schedule, grid, steps, master_seed, b[0], b[1], checkpoints)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(work, bounds))
    else:
        parts = [work(b) for b in bounds]
    tot = {k: sum((p[k] for p in parts[1:]), parts[0][k]) for k in parts[0]}

    n = float(path_count)
    pri = spectrum.priors
    freq = tot["born"] / n
    born_se = np.sqrt(pri * (1.0 - pri) / n)
    mean_h, se_h = _mean_se(tot["H"], tot["H2"], n)
    mean_v, se_v = _mean_se(tot["V"], tot["V2"], n)
    mean_dv, se_dv = _mean_se(tot["dV"], tot["dV2"], n)
    mean_pi, se_pi = _mean_se(tot["pi"], tot["pi2"], n)
    ub = variance_upper_bound(spectrum.variance, None, isq=steps.cum_sigma_sq)

    times = grid.times
    h0 = spectrum.mean_energy
    mart_h = [(float(times[c]), float(mean_h[c] - h0), float(se_h[c])) for c in checkpoints[1:]]
    mart_pi = [
        (float(times[c]), i, float(mean_pi[j, i] - pri[i]), float(se_pi[j, i]))
        for j, c in enumerate(checkpoints)
        if c > 0
        for i in range(spectrum.n_levels)
    ]
    regime = schedule.classify()
    flags = {}
    if regime.tag is not Regime.PARTIAL:
        flags["born"] = bool(np.all(np.abs(freq - pri) <= N_SIGMA * born_se))
    flags.update({
        "martingale_H": all(abs(d) <= N_SIGMA * s for _, d, s in mart_h),
        "martingale_pi": all(abs(d) <= N_SIGMA * s for _, _, d, s in mart_pi),
        "variance_upper_bound": bool(np.all(mean_v[1:] <= ub[1:] + N_SIGMA * se_v[1:])),
        "variance_nonincreasing": bool(np.all(mean_dv <= N_SIGMA * se_dv)),
    })
    lower = None
    if regime.tag is Regime.PARTIAL:
        lower = variance_lower_bound(spectrum.variance, spectrum.max_variance, schedule)
        flags["variance_lower_bound"] = bool(mean_v[-1] >= lower - N_SIGMA * se_v[-1])
        flags["incomplete_reduction"] = bool(mean_v[-1] > N_SIGMA * se_v[-1])

    return EnsembleReport(
        path_count=path_count,
        master_seed=master_seed,
        levels=[float(x) for x in spectrum.energies],
        priors=[float(x) for x in pri],
        born_frequencies=[float(x) for x in freq],
        born_stderr=[float(x) for x in born_se],
        collapsed_fraction=float(tot["collapsed"] / n),
        times=times.copy(),
        mean_H=mean_h,
        stderr_H=se_h,
        mean_V=mean_v,
        stderr_V=se_v,
        upper_bound=np.asarray(ub),
        checkpoints=[float(times[c]) for c in checkpoints],
        martingale_H=mart_h,
        martingale_pi=mart_pi,
        regime=regime.tag.value,
        lower_bound=lower,
        flags=flags,
    )


# ---------------------------------------------------------------------------
# finite-time coupling


@dataclass(frozen=True, eq=False)
class BridgePaths:
    times: np.ndarray
    xi_star: np.ndarray
    beta: np.ndarray
    xi_reconstructed: np.ndarray

    def reconstruction_error(self, xi, t_max: float | None = None) -> float:
        keep = slice(None) if t_max is None else self.times <= t_max
        return float(np.max(np.abs(self.xi_reconstructed[keep] - np.asarray(xi)[keep])))


def _finite_time_params(schedule: CouplingSchedule):
    if schedule.kind != "finite_time":
        raise RegimeError(f"bridge transform needs a finite_time schedule, got {schedule.kind}")
    return float(schedule.sigma0), float(schedule.horizon)


def _trapezoid_cumulative(f, t):
    return np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(t))])


def bridge_transform(path: SamplePath, schedule: CouplingSchedule) -> BridgePaths:
    """Map a finite-horizon path onto its Brownian-bridge representation.

    ``xi*_t = (T - t) int_0^t dxi_s / (T - s)`` and
    ``beta_t = (T - t) int_0^t dB_s / (T - s)``. Since
    ``sigma_s = sigma T / (T - s)`` these integrals are ``eta_t / (sigma T)``
    and ``(int sigma dB)_t / (sigma T)``, which the path carries exactly.
    ``xi`` is then rebuilt as ``xi*_t + int_0^t xi*_s / (T - s) ds`` with the
    trapezoid rule.
    """
    sig, horizon = _finite_time_params(schedule)
    t = path.grid.times
    if t[-1] >= horizon:
        raise RegimeError("path grid must end before the horizon")
    lag = horizon - t
    xi_star = lag * path.eta / (sig * horizon)
    beta = lag * path.stoch_int_sigma_dB / (sig * horizon)
    rebuilt = xi_star + _trapezoid_cumulative(xi_star / lag, t)
    return BridgePaths(t, xi_star, beta, rebuilt)


@dataclass(frozen=True)
class FiniteTimeComparison:
    max_energy_difference: float  # over t <= t_max
    max_reconstruction_error: float  # over t <= t_max
    max_bridge_identity_error: float  # |beta - (xi* - sigma t H)| over t <= t_max
    max_innovation_difference: float  # over t <= t_max
    terminal_max_posterior: float
    terminal_argmax_matches: bool
    t_max: float

    def to_record(self) -> dict:
        return asdict(self)


def bridge_energy(spectrum: Spectrum, schedule: CouplingSchedule, xi_star, times) -> np.ndarray:
    """Energy process written with the bridge: exponents ``T/(T-t) (sigma E xi* - sigma^2 E^2 t / 2)``."""
    sig, horizon = _finite_time_params(schedule)
    t = np.asarray(times, dtype=float)
    e = spectrum.energies
    scale = (horizon / (horizon - t))[:, None]
    with np.errstate(divide="ignore"):
        lp = np.log(spectrum.priors)
    logw = lp + scale * (sig * e * np.asarray(xi_star)[:, None] - 0.5 * sig * sig * e * e * t[:, None])
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    return (w @ e) / w.sum(axis=1)


def finite_time_equivalence(
    spectrum: Spectrum,
    path: SamplePath,
    schedule: CouplingSchedule,
    t_max_fraction: float = 0.9,
) -> FiniteTimeComparison:
    """Compare the information-process and bridge forms on one path.

    Energy: the filter on ``eta_t`` against ``bridge_energy`` on ``xi*``.
    Innovation: ``xi_t - int sigma_s H_s ds`` against
    ``xi*_t + int (xi*_s - sigma T H_s) / (T - s) ds`` (trapezoid rule).
    """
    sig, horizon = _finite_time_params(schedule)
    t = path.grid.times
    steps = StepIntegrals.build(schedule, path.grid)
    post = posterior_from_eta(spectrum, path.eta, steps.cum_sigma_sq)
    h_info = post @ spectrum.energies
    bridge = bridge_transform(path, schedule)
    h_bridge = bridge_energy(spectrum, schedule, bridge.xi_star, t)

    keep = t <= t_max_fraction * horizon
    w_info = innovation(path.xi[None, :], h_info[None, :], steps.step_sigma)[0]
    lag = horizon - t
    w_bridge = bridge.xi_star + _trapezoid_cumulative((bridge.xi_star - sig * horizon * h_info) / lag, t)
    identity = np.abs(bridge.beta - (bridge.xi_star - sig * t * path.outcome_H))
    final = post[-1]
    return FiniteTimeComparison(
        max_energy_difference=float(np.max(np.abs(h_info - h_bridge)[keep])),
        max_reconstruction_error=bridge.reconstruction_error(path.xi, t_max_fraction * horizon),
        max_bridge_identity_error=float(np.max(identity[keep])),
        max_innovation_difference=float(np.max(np.abs(w_info - w_bridge)[keep])),
        terminal_max_posterior=float(final.max()),
        terminal_argmax_matches=bool(int(np.argmax(final)) == path.outcome_index),
        t_max=float(t_max_fraction * horizon),
    )
