"""Closed-form reduction trajectories driven by independent random data.

A trajectory is generated from an outcome ``H`` (drawn with the prior
weights) and an independent Brownian motion ``B``. The information
process ``xi_t = H int_0^t sigma + B_t`` and its sigma-weighted version
``eta_t = int_0^t sigma dxi = H int_0^t sigma^2 + int_0^t sigma dB`` are
sampled exactly at the grid times: per step the pair
``(dB, d int sigma dB)`` is jointly Gaussian with covariance
``[[dt, S1], [S1, S2]]`` where S1, S2 are the step integrals of sigma and
sigma^2. Everything downstream (posteriors, energy, variance, states) is
then a deterministic function of ``eta_t`` and the cumulative integral of
sigma^2, so it carries no time-discretisation error.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .coupling import CouplingSchedule, DomainError
from .spectrum import DimensionError, LuedersBasis, Spectrum, assemble_state

RECOVERY_TOL = 1e-4
DEFAULT_CHUNK = 256


class AmbiguityError(RuntimeError):
    """Terminal posterior not concentrated enough to name the outcome."""

    def __init__(self, message, posteriors):
        super().__init__(message)
        self.posteriors = posteriors


class DegenerateStepWarning(RuntimeWarning):
    pass


# ---------------------------------------------------------------------------
# grid and seeding


@dataclass(frozen=True, eq=False)
class TimeGrid:
    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).ravel()
        if t.size < 1 or t[0] != 0.0:
            raise DomainError("time grid must start at t = 0")
        if np.any(np.diff(t) <= 0):
            raise DomainError("time grid must be strictly increasing")
        t = t.copy()
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, t_end: float, steps: int) -> "TimeGrid":
        return cls(np.linspace(0.0, float(t_end), int(steps) + 1))

    @classmethod
    def towards_horizon(cls, horizon: float, steps: int, fraction: float, terminal: float | None = None):
        """Uniform steps of ``horizon * fraction / steps`` plus an optional last point.

        ``terminal`` (relative to the horizon, e.g. ``1 - 1e-6``) appends one
        extra grid time beyond the uniform part.
        """
        times = np.linspace(0.0, horizon * fraction, int(steps) + 1)
        if terminal is not None and horizon * terminal > times[-1]:
            times = np.append(times, horizon * terminal)
        return cls(times)

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    def check(self, schedule: CouplingSchedule) -> None:
        if schedule.is_finite_time and self.times[-1] >= schedule.horizon:
            raise DomainError(
                f"grid ends at {self.times[-1]:.17g}, not before the horizon T={schedule.horizon}"
            )

    def index_of(self, t: float) -> int:
        return int(np.argmin(np.abs(self.times - t)))


def path_seed_sequence(master_seed: int, index: int) -> np.random.SeedSequence:
    """Per-path seed: a hash of (master seed, path index)."""
    return np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))


def path_rng(master_seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(path_seed_sequence(master_seed, index)))


# ---------------------------------------------------------------------------
# step integrals


@dataclass(frozen=True, eq=False)
class StepIntegrals:
    """Per-grid quantities shared by every path on the same (schedule, grid)."""

    grid: TimeGrid
    cum_sigma: np.ndarray  # int_0^t sigma at grid times
    cum_sigma_sq: np.ndarray  # int_0^t sigma^2 at grid times
    step_sigma: np.ndarray  # int over each step
    step_sigma_sq: np.ndarray
    sigma_left: np.ndarray  # sigma at left endpoints
    regression: np.ndarray  # E[d int sigma dB | dB] = regression * dB
    residual_sd: np.ndarray  # conditional standard deviation
    degenerate_steps: tuple = field(default=())

    @classmethod
    def build(cls, schedule: CouplingSchedule, grid: TimeGrid) -> "StepIntegrals":
        grid.check(schedule)
        t = grid.times
        a, b = t[:-1], t[1:]
        dt = b - a
        s1 = np.asarray(schedule.int_sigma(a, b), dtype=float).reshape(dt.shape)
        s2 = np.asarray(schedule.int_sigma_sq(a, b), dtype=float).reshape(dt.shape)
        cum1 = np.asarray(schedule.int_sigma(np.zeros_like(t), t), dtype=float).reshape(t.shape)
        cum2 = np.asarray(schedule.int_sigma_sq(np.zeros_like(t), t), dtype=float).reshape(t.shape)
        sig_left = np.asarray(schedule.sigma(a), dtype=float).reshape(dt.shape)

        # Cauchy-Schwarz gives dt*S2 - S1^2 >= 0; it is zero for a constant
        # sigma on the step, which the regression form handles exactly.
        det = dt * s2 - s1 * s1
        bad = ~np.isfinite(det) | (det < -1e-9 * dt * s2)
        reg = s1 / dt
        res = np.sqrt(np.clip(det, 0.0, None) / dt)
        degenerate = tuple(int(j) for j in np.flatnonzero(bad))
        if degenerate:
            mid = 0.5 * (a[bad] + b[bad])
            reg[bad] = schedule.sigma(mid)
            res[bad] = 0.0
            warnings.warn(
                f"{len(degenerate)} grid steps have an inconsistent (sigma, sigma^2) covariance; "
                "using sigma(midpoint) * dB there",
                DegenerateStepWarning,
                stacklevel=3,
            )
        return cls(grid, cum1, cum2, s1, s2, sig_left, reg, res, degenerate)


# ---------------------------------------------------------------------------
# sampled random data


@dataclass(frozen=True, eq=False)
class SamplePath:
    grid: TimeGrid
    outcome_index: int
    outcome_H: float
    B: np.ndarray
    xi: np.ndarray
    eta: np.ndarray
    stoch_int_sigma_dB: np.ndarray


@dataclass(frozen=True, eq=False)
class PathBatch:
    """Many sample paths on one grid; arrays have shape (paths, times)."""

    grid: TimeGrid
    steps: StepIntegrals
    outcome_index: np.ndarray
    outcome_H: np.ndarray
    B: np.ndarray
    xi: np.ndarray
    eta: np.ndarray
    stoch_int_sigma_dB: np.ndarray

    def __len__(self) -> int:
        return int(self.outcome_index.size)

    def path(self, i: int) -> SamplePath:
        return SamplePath(
            self.grid,
            int(self.outcome_index[i]),
            float(self.outcome_H[i]),
            self.B[i],
            self.xi[i],
            self.eta[i],
            self.stoch_int_sigma_dB[i],
        )


def _draw(rng: np.random.Generator, cum_prior: np.ndarray, n_steps: int):
    k = int(np.searchsorted(cum_prior, rng.random(), side="right"))
    z = rng.standard_normal((n_steps, 2))
    return min(k, cum_prior.size - 1), z


def sample_paths(
    spectrum: Spectrum,
    schedule: CouplingSchedule,
    grid: TimeGrid,
    rngs,
    steps: StepIntegrals | None = None,
) -> PathBatch:
    """Draw one path per generator in ``rngs``.

    Each generator first draws the outcome (one uniform) and then the
    (n_steps, 2) standard normals for the step increments, so a path
    depends only on its own generator.
    """
    if steps is None:
        steps = StepIntegrals.build(schedule, grid)
    rngs = list(rngs)
    n_paths, n_steps = len(rngs), grid.n_steps
    cum_prior = np.cumsum(spectrum.priors)
    cum_prior[-1] = 1.0
    idx = np.empty(n_paths, dtype=np.int64)
    z = np.empty((n_paths, n_steps, 2))
    for p, rng in enumerate(rngs):
        idx[p], z[p] = _draw(rng, cum_prior, n_steps)

    sqdt = np.sqrt(grid.dt)
    db = z[:, :, 0] * sqdt
    dsdb = steps.regression * db + steps.residual_sd * z[:, :, 1]
    B = np.zeros((n_paths, n_steps + 1))
    sdb = np.zeros((n_paths, n_steps + 1))
    np.cumsum(db, axis=1, out=B[:, 1:])
    np.cumsum(dsdb, axis=1, out=sdb[:, 1:])

    h = spectrum.energies[idx]
    xi = h[:, None] * steps.cum_sigma + B
    eta = h[:, None] * steps.cum_sigma_sq + sdb
    return PathBatch(grid, steps, idx, h, B, xi, eta, sdb)


def sample_path(spectrum, schedule, grid, seed: int) -> SamplePath:
    """Single path; identical to path 0 of an ensemble with master seed ``seed``."""
    return sample_paths(spectrum, schedule, grid, [path_rng(seed, 0)]).path(0)


def sample_batch(spectrum, schedule, grid, master_seed: int, indices, steps=None) -> PathBatch:
    return sample_paths(
        spectrum, schedule, grid, (path_rng(master_seed, i) for i in indices), steps=steps
    )


# ---------------------------------------------------------------------------
# filter


def _log_prior(spectrum: Spectrum) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(spectrum.priors)


def posterior_from_eta(spectrum: Spectrum, eta, isq, log_prior=None) -> np.ndarray:
    """Normalised ``prior_i exp(E_i eta - E_i^2 isq / 2)`` via log-sum-exp.

    ``eta`` and ``isq`` broadcast; the level axis is appended last.
    """
    eta = np.asarray(eta, dtype=float)
    if not np.all(np.isfinite(eta)):
        raise ValueError("eta must be finite")
    e = spectrum.energies
    lp = _log_prior(spectrum) if log_prior is None else np.asarray(log_prior)
    logw = lp + np.asarray(eta)[..., None] * e - 0.5 * np.asarray(isq, dtype=float)[..., None] * e * e
    logw = logw - logw.max(axis=-1, keepdims=True)
    w = np.exp(logw)
    return w / w.sum(axis=-1, keepdims=True)


def filter_posterior(spectrum: Spectrum, schedule: CouplingSchedule, eta_t, t) -> np.ndarray:
    """Conditional probabilities of each level given ``eta_t`` at time ``t``."""
    if np.any(np.asarray(t) < 0):
        raise DomainError("t must be nonnegative")
    isq = schedule.int_sigma_sq(np.zeros_like(np.asarray(t, dtype=float)), t)
    return posterior_from_eta(spectrum, eta_t, isq)


def restart_filter(spectrum, schedule, posterior_at_s, s, eta_increment, t) -> np.ndarray:
    """Restart the filter at ``s`` with ``posterior_at_s`` as the new prior.

    ``eta_increment`` is ``int_s^t sigma dxi``.
    """
    if s > t:
        raise DomainError("restart time must not exceed t")
    post = np.asarray(posterior_at_s, dtype=float)
    if s == t:
        return post.copy()
    with np.errstate(divide="ignore"):
        lp = np.log(post)
    return posterior_from_eta(spectrum, eta_increment, schedule.int_sigma_sq(s, t), log_prior=lp)


def energy_and_moments(spectrum: Spectrum, posteriors):
    """Mean, variance and third central moment of the energy under ``posteriors``."""
    post = np.asarray(posteriors, dtype=float)
    e = spectrum.energies
    h = post @ e
    dev = e - np.asarray(h)[..., None]
    v = np.sum(post * dev**2, axis=-1)
    k = np.sum(post * dev**3, axis=-1)
    if np.ndim(h) == 0:
        return float(h), float(v), float(k)
    return h, v, k


def monotone_link(spectrum: Spectrum, eta, isq):
    """``H(eta)`` at fixed integrated coupling and its analytic slope.

    The slope is the posterior variance: sum_i pi_i (E_i - H)^2 w_i / sum w_i.
    """
    post = posterior_from_eta(spectrum, eta, isq)
    h, v, _ = energy_and_moments(spectrum, post)
    return h, v


# ---------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True, eq=False)
class ReductionTrajectory:
    grid: TimeGrid
    posteriors: np.ndarray  # (times, N)
    energy: np.ndarray
    variance: np.ndarray
    third_moment: np.ndarray
    innovation: np.ndarray
    states: np.ndarray | None = None  # (times, D)


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    grid: TimeGrid
    posteriors: np.ndarray  # (paths, times, N)
    energy: np.ndarray  # (paths, times)
    variance: np.ndarray
    third_moment: np.ndarray
    innovation: np.ndarray

    def path(self, i: int, states=None) -> ReductionTrajectory:
        return ReductionTrajectory(
            self.grid,
            self.posteriors[i],
            self.energy[i],
            self.variance[i],
            self.third_moment[i],
            self.innovation[i],
            states,
        )


def filter_batch(spectrum: Spectrum, batch: PathBatch) -> TrajectoryBatch:
    post, h, v, k = kernels.posterior_moments(
        _log_prior(spectrum), spectrum.energies, batch.eta, batch.steps.cum_sigma_sq
    )
    w = kernels.innovation(batch.xi, h, batch.steps.step_sigma)
    return TrajectoryBatch(batch.grid, post, h, v, k, w)


def innovation_path(path: SamplePath, energies_H, schedule: CouplingSchedule) -> np.ndarray:
    """``W_t = xi_t - int_0^t sigma_s H_s ds`` on the path's grid.

    The drift integral is the trapezoid rule in ``H`` with each step
    weighted by the exact integral of sigma over that step.
    """
    h = np.asarray(energies_H, dtype=float)
    if h.shape != path.xi.shape:
        raise DimensionError(f"H has shape {h.shape}, path has {path.xi.shape}")
    t = path.grid.times
    step = np.asarray(schedule.int_sigma(t[:-1], t[1:]), dtype=float).reshape(t.size - 1)
    return kernels.innovation(path.xi[None, :], h[None, :], step)[0]


def run_exact(
    spectrum: Spectrum,
    basis: LuedersBasis,
    schedule: CouplingSchedule,
    grid: TimeGrid,
    seed: int,
    with_states: bool = False,
):
    """Sample one path and evaluate the closed-form trajectory on it."""
    batch = sample_paths(spectrum, schedule, grid, [path_rng(seed, 0)])
    traj = filter_batch(spectrum, batch)
    states = assemble_state(spectrum, basis, traj.posteriors[0], grid.times) if with_states else None
    return batch.path(0), traj.path(0, states)


def iter_ensemble(spectrum, schedule, grid, master_seed: int, n_paths: int, chunk: int = DEFAULT_CHUNK):
    """Yield ``(PathBatch, TrajectoryBatch)`` over fixed-size chunks of path indices."""
    steps = StepIntegrals.build(schedule, grid)
    for start in range(0, n_paths, chunk):
        idx = range(start, min(start + chunk, n_paths))
        batch = sample_batch(spectrum, schedule, grid, master_seed, idx, steps=steps)
        yield batch, filter_batch(spectrum, batch)


def conditional_solution(
    spectrum: Spectrum,
    basis: LuedersBasis,
    schedule: CouplingSchedule,
    grid: TimeGrid,
    fixed_outcome_k: int,
    B,
    stoch_int_sigma_dB=None,
    with_states: bool = False,
) -> ReductionTrajectory:
    """Trajectory conditional on ``H = E_k`` written with gaps ``E_i - E_k``.

    Weights are ``pi_i exp(-gap^2 I / 2 + gap int sigma dB)``; the k-th
    exponent is identically zero. Without ``stoch_int_sigma_dB`` the
    stochastic integral is the left-point sum of sigma dB on the grid.
    """
    n = spectrum.n_levels
    if not 0 <= fixed_outcome_k < n:
        raise IndexError(f"outcome index {fixed_outcome_k} outside 0..{n - 1}")
    steps = StepIntegrals.build(schedule, grid)
    B = np.asarray(B, dtype=float)
    if stoch_int_sigma_dB is None:
        sdb = np.concatenate([[0.0], np.cumsum(steps.sigma_left * np.diff(B))])
    else:
        sdb = np.asarray(stoch_int_sigma_dB, dtype=float)
    e = spectrum.energies
    ek = e[fixed_outcome_k]
    gap = e - ek
    with np.errstate(divide="ignore"):
        lp = np.log(spectrum.priors)
    logw = lp - 0.5 * steps.cum_sigma_sq[:, None] * gap**2 + sdb[:, None] * gap
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    post = w / w.sum(axis=1, keepdims=True)
    h, v, k = energy_and_moments(spectrum, post)
    xi = ek * steps.cum_sigma + B
    wpath = kernels.innovation(xi[None, :], h[None, :], steps.step_sigma)[0]
    states = assemble_state(spectrum, basis, post, grid.times) if with_states else None
    return ReductionTrajectory(grid, post, h, v, k, wpath, states)


def information_from_innovation(W, energy_H, schedule: CouplingSchedule, grid: TimeGrid) -> np.ndarray:
    """Rebuild ``xi_t = W_t + int_0^t sigma_s H_s ds`` from a state trajectory."""
    steps = StepIntegrals.build(schedule, grid)
    h = np.asarray(energy_H, dtype=float)
    drift = np.concatenate([[0.0], np.cumsum(0.5 * (h[:-1] + h[1:]) * steps.step_sigma)])
    return np.asarray(W, dtype=float) + drift


def recover_random_data(
    spectrum: Spectrum,
    trajectory: ReductionTrajectory,
    xi,
    schedule: CouplingSchedule,
    recovery_tol: float = RECOVERY_TOL,
):
    """Recover the outcome and the Brownian path from a collapsed trajectory.

    ``H`` is the level carrying the terminal posterior mass and
    ``B_t = xi_t - H int_0^t sigma``.
    """
    final = trajectory.posteriors[-1]
    k = int(np.argmax(final))
    if final[k] < 1.0 - recovery_tol:
        raise AmbiguityError(
            f"terminal posterior max {final[k]:.6g} below 1 - {recovery_tol:g}", final.copy()
        )
    h_hat = float(spectrum.energies[k])
    t = trajectory.grid.times
    cum = np.asarray(schedule.int_sigma(np.zeros_like(t), t), dtype=float).reshape(t.shape)
    return h_hat, np.asarray(xi, dtype=float) - h_hat * cum

