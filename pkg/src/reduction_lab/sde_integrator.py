"""Direct numerical integration used to cross-check the exact solver.

Four independent routes:

* Euler-Maruyama on the state equation
  ``d psi = -i H psi dt - sigma^2/8 (H - H_t)^2 psi dt + sigma/2 (H - H_t) psi dW``;
* Euler-Maruyama on the posterior equation ``d pi_i = sigma (E_i - H_t) pi_i dW``;
* the linear (unnormalised) state
  ``Psi_t = exp(-i H t + H eta_t / 2 - H^2 I_t / 4) psi_0`` by matrix exponential;
* explicit integration of the averaged master equation.

Both EM schemes renormalise after each step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from . import kernels
from .coupling import CouplingSchedule
from .exact_solver import (
    StepIntegrals,
    TimeGrid,
    filter_batch,
    path_rng,
    sample_paths,
)
from .spectrum import LuedersBasis, Spectrum


def em_step_state(state, h_matrix, sigma_t: float, dt: float, dw: float) -> np.ndarray:
    """One renormalised Euler-Maruyama step of the state equation."""
    out = kernels.em_state_paths_numpy(
        np.asarray(state, dtype=complex),
        np.asarray(h_matrix, dtype=complex),
        np.array([sigma_t], dtype=float),
        np.array([dt], dtype=float),
        np.array([[dw]], dtype=float),
    )
    return out[0, 1]


def em_step_pi(posteriors, spectrum: Spectrum, sigma_t: float, dw: float) -> np.ndarray:
    """One Euler-Maruyama step of the posterior equation, clipped at 0 and renormalised."""
    out = kernels.em_pi_paths_numpy(
        np.asarray(posteriors, dtype=float),
        spectrum.energies,
        np.array([sigma_t], dtype=float),
        np.array([[dw]], dtype=float),
    )
    return out[0, 1]


def em_pi_paths(spectrum: Spectrum, schedule: CouplingSchedule, grid: TimeGrid, dw, pi0=None) -> np.ndarray:
    """Integrate the posterior SDE along each row of increments ``dw``.

    Returns an array of shape (paths, times, N).
    """
    grid.check(schedule)
    sig = np.asarray(schedule.sigma(grid.times[:-1]), dtype=float).reshape(grid.n_steps)
    start = spectrum.priors if pi0 is None else np.asarray(pi0, dtype=float)
    return kernels.em_pi_paths(start, spectrum.energies, sig, dw)


def em_state_paths(h_matrix, psi0, schedule: CouplingSchedule, grid: TimeGrid, dw) -> np.ndarray:
    """Integrate the state SDE; returns states of shape (paths, times, D)."""
    grid.check(schedule)
    sig = np.asarray(schedule.sigma(grid.times[:-1]), dtype=float).reshape(grid.n_steps)
    return kernels.em_state_paths(psi0, h_matrix, sig, grid.dt, dw)


def state_posteriors(states, basis: LuedersBasis) -> np.ndarray:
    """``|<phi_i|psi>|^2`` for integrated states."""
    return basis.overlaps(states)


# ---------------------------------------------------------------------------
# linearised route


@dataclass(frozen=True, eq=False)
class LinearizedState:
    unnormalized: np.ndarray  # Psi_t
    weights: np.ndarray  # <Psi_t|P_i|Psi_t>
    posteriors: np.ndarray
    state: np.ndarray  # Psi_t / |Psi_t|


def linearized_solution(
    spectrum: Spectrum,
    schedule: CouplingSchedule,
    eta_t: float,
    t: float,
    hamiltonian=None,
    psi0=None,
    basis: LuedersBasis | None = None,
) -> LinearizedState:
    """Evaluate the linear state by matrix exponential and project it.

    ``eta_t`` is ``int_0^t sigma dxi``. Without an explicit Hamiltonian the
    diagonal operator ``diag(E)`` acting on ``sqrt(pi)`` is used.
    """
    if hamiltonian is None:
        h = np.diag(spectrum.energies).astype(complex)
        psi = np.sqrt(spectrum.priors).astype(complex)
        projectors = np.eye(spectrum.n_levels)[:, :, None] * np.eye(spectrum.n_levels)[:, None, :]
    else:
        if psi0 is None or basis is None or basis.projectors is None:
            raise ValueError("hamiltonian route needs psi0 and a basis with projectors")
        h = np.asarray(hamiltonian, dtype=complex)
        psi = np.asarray(psi0, dtype=complex)
        projectors = basis.projectors
    isq = schedule.int_sigma_sq(0.0, t)
    gen = -1j * h * t + 0.5 * h * eta_t - 0.25 * (h @ h) * isq
    big = expm(gen) @ psi
    weights = np.einsum("i,kij,j->k", big.conj(), projectors, big).real
    norm2 = float(np.vdot(big, big).real)
    return LinearizedState(big, weights, weights / weights.sum(), big / np.sqrt(norm2))


# ---------------------------------------------------------------------------
# master equation


def density_step(rho, h_matrix, sigma_t: float, dt: float) -> np.ndarray:
    """Explicit step of ``drho/dt = -i[H, rho] + sigma^2/4 (H rho H - {H^2, rho}/2)``."""
    return kernels.density_path_numpy(
        np.asarray(rho, dtype=complex),
        np.asarray(h_matrix, dtype=complex),
        np.array([sigma_t], dtype=float),
        np.array([dt], dtype=float),
    )[1]


def density_evolve(rho0, h_matrix, schedule: CouplingSchedule, grid: TimeGrid) -> np.ndarray:
    """Density matrices at every grid time, shape (times, D, D)."""
    grid.check(schedule)
    sig = np.asarray(schedule.sigma(grid.times[:-1]), dtype=float).reshape(grid.n_steps)
    return kernels.density_path(rho0, h_matrix, sig, grid.dt)


def density_closed_form(spectrum: Spectrum, basis: LuedersBasis, schedule: CouplingSchedule, t: float):
    """Exact averaged state: coherences decay as exp(-i w t - w^2 I_t / 8), w = E_i - E_j."""
    e = spectrum.energies
    w = e[:, None] - e[None, :]
    amp = np.sqrt(spectrum.priors)
    isq = schedule.int_sigma_sq(0.0, t)
    coeff = np.outer(amp, amp) * np.exp(-1j * w * t - 0.125 * w * w * isq)
    return basis.vectors.T @ coeff @ basis.vectors.conj()


# ---------------------------------------------------------------------------
# shared-noise convergence study


@dataclass(frozen=True)
class ConvergenceResult:
    steps: tuple  # coarse step sizes
    median_errors: tuple
    path_errors: np.ndarray  # (len(steps), paths)


def strong_convergence(
    spectrum: Spectrum,
    schedule: CouplingSchedule,
    t_end: float,
    fine_steps: int,
    factors,
    n_paths: int,
    master_seed: int,
    level: int | None = None,
) -> ConvergenceResult:
    """EM on the posterior equation driven by the exact solver's innovations.

    The exact trajectory is evaluated on a fine uniform grid; for each
    coarsening factor ``f`` the innovation increments are summed over
    blocks of ``f`` fine steps and fed to EM on the coarse grid. The error
    is the max over coarse times of ``|pi_EM - pi_exact|`` for ``level``
    (default: the last level), and the median is over paths.
    """
    fine = TimeGrid.uniform(t_end, fine_steps)
    steps = StepIntegrals.build(schedule, fine)
    batch = sample_paths(
        spectrum, schedule, fine, (path_rng(master_seed, i) for i in range(n_paths)), steps=steps
    )
    traj = filter_batch(spectrum, batch)
    lvl = spectrum.n_levels - 1 if level is None else level
    errs, meds, dts = [], [], []
    for f in factors:
        if fine_steps % f:
            raise ValueError(f"factor {f} does not divide {fine_steps}")
        coarse = TimeGrid(fine.times[::f])
        w_coarse = traj.innovation[:, ::f]
        em = em_pi_paths(spectrum, schedule, coarse, np.diff(w_coarse, axis=1))
        exact = traj.posteriors[:, ::f, lvl]
        e = np.max(np.abs(em[:, :, lvl] - exact), axis=1)
        errs.append(e)
        meds.append(float(np.median(e)))
        dts.append(float(t_end / fine_steps * f))
    return ConvergenceResult(tuple(dts), tuple(meds), np.asarray(errs))
