"""Discrete energy spectrum, Lüders states and state assembly.

The quantum problem reduces to a finite filtering problem once the
initial state is split along the eigenspaces of the Hamiltonian: each
distinct energy ``E_i`` carries a prior weight ``pi_i = <psi0|P_i|psi0>``
and a normalised Lüders vector ``phi_i = P_i psi0 / sqrt(pi_i)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PRIOR_FLOOR = 1e-14
HERMITIAN_TOL = 1e-10
ORTHONORMAL_TOL = 1e-10


class SpectrumError(ValueError):
    """Raised for invalid Hamiltonians, states or prior vectors."""


class DimensionError(ValueError):
    """Raised when array lengths disagree with the number of levels."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Distinct energies ``E_i`` (strictly increasing) and priors ``pi_i``."""

    energies: np.ndarray
    priors: np.ndarray

    def __post_init__(self):
        energies = np.asarray(self.energies, dtype=float).ravel()
        priors = np.asarray(self.priors, dtype=float).ravel()
        if energies.size == 0:
            raise SpectrumError("spectrum needs at least one level")
        if energies.shape != priors.shape:
            raise DimensionError(
                f"{energies.size} energies but {priors.size} priors"
            )
        if not np.all(np.isfinite(energies)) or not np.all(np.isfinite(priors)):
            raise SpectrumError("energies and priors must be finite")
        if np.any(np.diff(energies) <= 0):
            raise SpectrumError("energies must be strictly increasing")
        if np.any(priors < 0):
            raise SpectrumError("priors must be nonnegative")
        if abs(priors.sum() - 1.0) > 1e-12:
            raise SpectrumError(f"priors sum to {priors.sum():.15g}, not 1")
        object.__setattr__(self, "energies", _freeze(energies))
        object.__setattr__(self, "priors", _freeze(priors))

    @property
    def n_levels(self) -> int:
        return int(self.energies.size)

    @property
    def spectral_range(self) -> float:
        return float(self.energies[-1] - self.energies[0])

    @property
    def min_gap(self) -> float:
        if self.n_levels < 2:
            return 0.0
        return float(np.min(np.diff(self.energies)))

    @property
    def mean_energy(self) -> float:
        return float(self.priors @ self.energies)

    @property
    def variance(self) -> float:
        h = self.mean_energy
        return float(self.priors @ (self.energies - h) ** 2)

    @property
    def max_variance(self) -> float:
        """Largest energy variance any state can have, ``(E_N - E_1)^2 / 4``."""
        return self.spectral_range**2 / 4.0

    @classmethod
    def from_levels(cls, energies, priors, normalize: bool = False) -> "Spectrum":
        """Build from a pre-diagonalised (energies, priors) pair.

        Unsorted energies are sorted together with their priors. Levels with
        prior below ``PRIOR_FLOOR`` are kept only if ``normalize`` is false;
        the filter treats a zero prior as an impossible outcome either way.
        """
        e = np.asarray(energies, dtype=float).ravel()
        p = np.asarray(priors, dtype=float).ravel()
        if e.shape != p.shape:
            raise DimensionError(f"{e.size} energies but {p.size} priors")
        order = np.argsort(e, kind="stable")
        e, p = e[order], p[order]
        if normalize:
            keep = p >= PRIOR_FLOOR
            e, p = e[keep], p[keep]
            if p.size == 0:
                raise SpectrumError("no level has prior above the floor")
            p = p / p.sum()
        return cls(e, p)


@dataclass(frozen=True, eq=False)
class LuedersBasis:
    """Orthonormal Lüders vectors (rows of ``vectors``) and eigenspace ranks.

    ``projectors`` holds the full spectral projector of each retained level;
    ``projector_ranks`` covers every eigenspace of the Hamiltonian including
    the ones dropped for having no overlap with the initial state.
    """

    vectors: np.ndarray
    projector_ranks: tuple
    projectors: np.ndarray | None = None

    def __post_init__(self):
        vecs = np.atleast_2d(np.asarray(self.vectors, dtype=complex))
        object.__setattr__(self, "vectors", _freeze(vecs))
        if self.projectors is not None:
            object.__setattr__(
                self, "projectors", _freeze(np.asarray(self.projectors, dtype=complex))
            )
        object.__setattr__(self, "projector_ranks", tuple(int(r) for r in self.projector_ranks))
        defect = float(np.max(np.abs(self.gram() - np.eye(vecs.shape[0]))))
        if defect > ORTHONORMAL_TOL:
            raise SpectrumError(f"Lueders vectors are not orthonormal (Gram defect {defect:.3e})")

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def gram(self) -> np.ndarray:
        return self.vectors.conj() @ self.vectors.T

    def overlaps(self, states: np.ndarray) -> np.ndarray:
        """``|<phi_i|psi>|^2`` for a state or a stack of states (last axis = D)."""
        amp = np.asarray(states) @ self.vectors.conj().T
        return np.abs(amp) ** 2


@dataclass(frozen=True, eq=False)
class StateVector:
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).ravel()
        norm2 = float(np.vdot(amps, amps).real)
        if abs(norm2 - 1.0) > 1e-12:
            raise SpectrumError(f"state has squared norm {norm2:.15g}")
        object.__setattr__(self, "amplitudes", _freeze(amps))

    @property
    def dim(self) -> int:
        return int(self.amplitudes.size)


def hermitian_defect(matrix) -> float:
    m = np.asarray(matrix, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"Hamiltonian must be square, got shape {m.shape}")
    return float(np.max(np.abs(m - m.conj().T))) if m.size else 0.0


def decompose(
    hamiltonian,
    initial_state,
    degeneracy_tol: float | None = None,
    prior_floor: float = PRIOR_FLOOR,
) -> tuple[Spectrum, LuedersBasis]:
    """Split ``initial_state`` along the eigenspaces of ``hamiltonian``.

    Eigenvalues closer than ``degeneracy_tol`` (default ``1e-9`` times the
    spectral range) are merged into one level. Levels whose prior falls
    below ``prior_floor`` are dropped and the remaining priors renormalised.
    """
    h = np.asarray(hamiltonian, dtype=complex)
    defect = hermitian_defect(h)
    if defect > HERMITIAN_TOL:
        raise SpectrumError(f"Hamiltonian is not Hermitian (max asymmetry {defect:.3e})")
    psi = np.asarray(
        initial_state.amplitudes if isinstance(initial_state, StateVector) else initial_state,
        dtype=complex,
    ).ravel()
    if psi.size != h.shape[0]:
        raise DimensionError(f"state has dimension {psi.size}, Hamiltonian {h.shape[0]}")
    norm2 = float(np.vdot(psi, psi).real)
    if abs(norm2 - 1.0) > 1e-10:
        raise SpectrumError(f"initial state has squared norm {norm2:.15g}")

    h = 0.5 * (h + h.conj().T)
    evals, evecs = np.linalg.eigh(h)
    span = float(evals[-1] - evals[0])
    if degeneracy_tol is None:
        degeneracy_tol = 1e-9 * span

    # group sorted eigenvalues into clusters separated by more than the tolerance
    groups = [[0]]
    for k in range(1, evals.size):
        if evals[k] - evals[groups[-1][-1]] <= degeneracy_tol:
            groups[-1].append(k)
        else:
            groups.append([k])

    energies, priors, vectors, projectors, ranks = [], [], [], [], []
    for idx in groups:
        block = evecs[:, idx]
        proj = block @ block.conj().T
        ranks.append(len(idx))
        projected = proj @ psi
        weight = float(np.vdot(projected, projected).real)
        if weight < prior_floor:
            continue
        energies.append(float(np.mean(evals[idx])))
        priors.append(weight)
        vectors.append(projected / np.sqrt(weight))
        projectors.append(proj)

    if not energies:
        raise SpectrumError("initial state has no overlap above the prior floor")
    priors = np.asarray(priors)
    priors = priors / priors.sum()
    spectrum = Spectrum(np.asarray(energies), priors)
    basis = LuedersBasis(np.asarray(vectors), tuple(ranks), np.asarray(projectors))
    return spectrum, basis


def diagonal_basis(n_levels: int) -> LuedersBasis:
    """Lüders basis for a pre-diagonalised spectrum: the standard basis."""
    eye = np.eye(n_levels, dtype=complex)
    return LuedersBasis(eye, (1,) * n_levels, eye[:, :, None] * eye[:, None, :])


def assemble_state(spectrum: Spectrum, basis: LuedersBasis, posteriors, t: float) -> np.ndarray:
    """``psi_t = sum_i exp(-i E_i t) sqrt(pi_it) phi_i``.

    ``posteriors`` may be a single vector of length N or a stack with the
    level axis last; ``t`` broadcasts against the leading axes.
    """
    post = np.asarray(posteriors, dtype=float)
    if post.shape[-1] != spectrum.n_levels:
        raise DimensionError(
            f"posterior has {post.shape[-1]} levels, spectrum has {spectrum.n_levels}"
        )
    if basis.vectors.shape[0] != spectrum.n_levels:
        raise DimensionError("basis and spectrum disagree on the number of levels")
    t = np.asarray(t, dtype=float)[..., None]
    coeff = np.exp(-1j * spectrum.energies * t) * np.sqrt(np.clip(post, 0.0, None))
    return coeff @ basis.vectors
