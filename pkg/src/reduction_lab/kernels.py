"""Hot inner loops, each in a numba and a pure-numpy flavour.

The public names (``posterior_moments``, ``innovation``, ``em_pi_paths``,
``em_state_paths``, ``density_path``) dispatch on ``_accel.USE_NUMBA``.
Both flavours are importable as ``*_numba`` / ``*_numpy`` so they can be
compared and benchmarked side by side.
"""

from __future__ import annotations

import numpy as np

from . import _accel
from ._accel import njit

# ---------------------------------------------------------------------------
# log-domain discrete filter: weights pi_i exp(E_i eta - E_i^2 I / 2)


def posterior_moments_numpy(log_prior, energies, eta, isq):
    """Posterior vectors and (H, V, kappa) for every (path, time) cell.

    ``eta`` has shape (P, M); ``isq`` (cumulative integral of sigma^2) has
    shape (M,). Returns ``post`` (P, M, N) and three (P, M) arrays.
    """
    e = energies
    logw = log_prior + eta[..., None] * e - 0.5 * isq[:, None] * (e * e)
    logw = logw - logw.max(axis=-1, keepdims=True)
    w = np.exp(logw)
    post = w / w.sum(axis=-1, keepdims=True)
    h = post @ e
    dev = e - h[..., None]
    pd = post * dev
    v = np.einsum("...i,...i->...", pd, dev)
    kappa = np.einsum("...i,...i->...", pd * dev, dev)
    return post, h, v, kappa


@njit(cache=True, nogil=True)
def posterior_moments_numba(log_prior, energies, eta, isq):
    n_paths, n_times = eta.shape
    n = energies.size
    post = np.empty((n_paths, n_times, n))
    h_out = np.empty((n_paths, n_times))
    v_out = np.empty((n_paths, n_times))
    k_out = np.empty((n_paths, n_times))
    logw = np.empty(n)
    for p in range(n_paths):
        for m in range(n_times):
            x = eta[p, m]
            s = isq[m]
            top = -np.inf
            for i in range(n):
                lw = log_prior[i] + energies[i] * x - 0.5 * s * energies[i] * energies[i]
                logw[i] = lw
                if lw > top:
                    top = lw
            total = 0.0
            for i in range(n):
                w = np.exp(logw[i] - top)
                post[p, m, i] = w
                total += w
            h = 0.0
            for i in range(n):
                post[p, m, i] /= total
                h += post[p, m, i] * energies[i]
            v = 0.0
            k = 0.0
            for i in range(n):
                d = energies[i] - h
                v += post[p, m, i] * d * d
                k += post[p, m, i] * d * d * d
            h_out[p, m] = h
            v_out[p, m] = v
            k_out[p, m] = k
    return post, h_out, v_out, k_out


# ---------------------------------------------------------------------------
# innovation W_t = xi_t - int_0^t sigma_s H_s ds


def innovation_numpy(xi, h, step_int_sigma):
    """Trapezoid in H weighted by the exact per-step integral of sigma."""
    drift = 0.5 * (h[:, :-1] + h[:, 1:]) * step_int_sigma
    w = np.empty_like(xi)
    w[:, 0] = xi[:, 0]
    w[:, 1:] = xi[:, 1:] - np.cumsum(drift, axis=1)
    w[:, 0] = 0.0
    return w


@njit(cache=True, nogil=True)
def innovation_numba(xi, h, step_int_sigma):
    n_paths, n_times = xi.shape
    w = np.empty_like(xi)
    for p in range(n_paths):
        acc = 0.0
        w[p, 0] = 0.0
        for j in range(1, n_times):
            acc += 0.5 * (h[p, j - 1] + h[p, j]) * step_int_sigma[j - 1]
            w[p, j] = xi[p, j] - acc
    return w


# ---------------------------------------------------------------------------
# Euler-Maruyama for d pi_i = sigma (E_i - H) pi_i dW, clip + renormalise


def em_pi_paths_numpy(pi0, energies, sigma_left, dw):
    n_paths, n_steps = dw.shape
    out = np.empty((n_paths, n_steps + 1, pi0.size))
    pi = np.broadcast_to(pi0, (n_paths, pi0.size)).copy()
    out[:, 0] = pi
    for j in range(n_steps):
        h = pi @ energies
        pi = pi + sigma_left[j] * (energies - h[:, None]) * pi * dw[:, j : j + 1]
        np.clip(pi, 0.0, None, out=pi)
        pi /= pi.sum(axis=1, keepdims=True)
        out[:, j + 1] = pi
    return out


@njit(cache=True, nogil=True)
def em_pi_paths_numba(pi0, energies, sigma_left, dw):
    n_paths, n_steps = dw.shape
    n = pi0.size
    out = np.empty((n_paths, n_steps + 1, n))
    pi = np.empty(n)
    for p in range(n_paths):
        for i in range(n):
            pi[i] = pi0[i]
            out[p, 0, i] = pi0[i]
        for j in range(n_steps):
            h = 0.0
            for i in range(n):
                h += pi[i] * energies[i]
            g = sigma_left[j] * dw[p, j]
            total = 0.0
            for i in range(n):
                x = pi[i] + g * (energies[i] - h) * pi[i]
                if x < 0.0:
                    x = 0.0
                pi[i] = x
                total += x
            for i in range(n):
                pi[i] /= total
                out[p, j + 1, i] = pi[i]
    return out


# ---------------------------------------------------------------------------
# Euler-Maruyama for the state equation, renormalised every step


def em_state_paths_numpy(psi0, hmat, sigma_left, dt, dw):
    n_paths, n_steps = dw.shape
    d = psi0.size
    out = np.empty((n_paths, n_steps + 1, d), dtype=np.complex128)
    psi = np.broadcast_to(psi0, (n_paths, d)).astype(np.complex128)
    out[:, 0] = psi
    ht = hmat.T
    for j in range(n_steps):
        hpsi = psi @ ht
        h = np.einsum("pi,pi->p", psi.conj(), hpsi).real
        a = hpsi - h[:, None] * psi
        a2 = a @ ht - h[:, None] * a
        s = sigma_left[j]
        psi = psi + (-1j * hpsi - 0.125 * s * s * a2) * dt[j] + 0.5 * s * a * dw[:, j : j + 1]
        psi /= np.sqrt(np.einsum("pi,pi->p", psi.conj(), psi).real)[:, None]
        out[:, j + 1] = psi
    return out


@njit(cache=True, nogil=True)
def em_state_paths_numba(psi0, hmat, sigma_left, dt, dw):
    n_paths, n_steps = dw.shape
    d = psi0.size
    out = np.empty((n_paths, n_steps + 1, d), dtype=np.complex128)
    psi = np.empty(d, dtype=np.complex128)
    hpsi = np.empty(d, dtype=np.complex128)
    a = np.empty(d, dtype=np.complex128)
    a2 = np.empty(d, dtype=np.complex128)
    for p in range(n_paths):
        for k in range(d):
            psi[k] = psi0[k]
            out[p, 0, k] = psi0[k]
        for j in range(n_steps):
            for r in range(d):
                acc = 0.0j
                for c in range(d):
                    acc += hmat[r, c] * psi[c]
                hpsi[r] = acc
            h = 0.0
            for r in range(d):
                h += (psi[r].conjugate() * hpsi[r]).real
            for r in range(d):
                a[r] = hpsi[r] - h * psi[r]
            for r in range(d):
                acc = 0.0j
                for c in range(d):
                    acc += hmat[r, c] * a[c]
                a2[r] = acc - h * a[r]
            s = sigma_left[j]
            norm2 = 0.0
            for r in range(d):
                psi[r] = (
                    psi[r]
                    + (-1j * hpsi[r] - 0.125 * s * s * a2[r]) * dt[j]
                    + 0.5 * s * a[r] * dw[p, j]
                )
                norm2 += psi[r].real ** 2 + psi[r].imag ** 2
            scale = 1.0 / np.sqrt(norm2)
            for r in range(d):
                psi[r] *= scale
                out[p, j + 1, r] = psi[r]
    return out


# ---------------------------------------------------------------------------
# explicit step of the averaged (master) equation


def density_path_numpy(rho0, hmat, sigma_left, dt):
    n_steps = dt.size
    out = np.empty((n_steps + 1,) + rho0.shape, dtype=np.complex128)
    rho = rho0.astype(np.complex128)
    out[0] = rho
    h2 = hmat @ hmat
    for j in range(n_steps):
        s = sigma_left[j]
        gen = -1j * (hmat @ rho - rho @ hmat) + 0.25 * s * s * (
            hmat @ rho @ hmat - 0.5 * (h2 @ rho) - 0.5 * (rho @ h2)
        )
        rho = rho + dt[j] * gen
        rho = 0.5 * (rho + rho.conj().T)
        rho = rho / np.trace(rho).real
        out[j + 1] = rho
    return out


@njit(cache=True, nogil=True)
def _matmul(x, y):
    n = x.shape[0]
    out = np.zeros((n, n), dtype=np.complex128)
    for r in range(n):
        for k in range(n):
            xv = x[r, k]
            for c in range(n):
                out[r, c] += xv * y[k, c]
    return out


@njit(cache=True, nogil=True)
def density_path_numba(rho0, hmat, sigma_left, dt):
    n_steps = dt.size
    d = rho0.shape[0]
    out = np.empty((n_steps + 1, d, d), dtype=np.complex128)
    rho = rho0.astype(np.complex128)
    out[0] = rho
    h2 = _matmul(hmat, hmat)
    for j in range(n_steps):
        s = sigma_left[j]
        hr = _matmul(hmat, rho)
        rh = _matmul(rho, hmat)
        hrh = _matmul(hr, hmat)
        h2r = _matmul(h2, rho)
        rh2 = _matmul(rho, h2)
        new = np.empty((d, d), dtype=np.complex128)
        for r in range(d):
            for c in range(d):
                gen = -1j * (hr[r, c] - rh[r, c]) + 0.25 * s * s * (
                    hrh[r, c] - 0.5 * h2r[r, c] - 0.5 * rh2[r, c]
                )
                new[r, c] = rho[r, c] + dt[j] * gen
        tr = 0.0
        for r in range(d):
            for c in range(d):
                rho[r, c] = 0.5 * (new[r, c] + new[c, r].conjugate())
            tr += rho[r, r].real
        for r in range(d):
            for c in range(d):
                rho[r, c] /= tr
        out[j + 1] = rho
    return out


# ---------------------------------------------------------------------------
# dispatch

_BACKENDS = {
    "posterior_moments": (posterior_moments_numba, posterior_moments_numpy),
    "innovation": (innovation_numba, innovation_numpy),
    "em_pi_paths": (em_pi_paths_numba, em_pi_paths_numpy),
    "em_state_paths": (em_state_paths_numba, em_state_paths_numpy),
    "density_path": (density_path_numba, density_path_numpy),
}


def backend() -> str:
    return "numba" if _accel.USE_NUMBA else "numpy"


def _pick(name):
    fast, slow = _BACKENDS[name]
    return fast if _accel.USE_NUMBA else slow


def posterior_moments(log_prior, energies, eta, isq):
    return _pick("posterior_moments")(
        np.ascontiguousarray(log_prior, dtype=np.float64),
        np.ascontiguousarray(energies, dtype=np.float64),
        np.ascontiguousarray(np.atleast_2d(eta), dtype=np.float64),
        np.ascontiguousarray(isq, dtype=np.float64),
    )


def innovation(xi, h, step_int_sigma):
    return _pick("innovation")(
        np.ascontiguousarray(np.atleast_2d(xi), dtype=np.float64),
        np.ascontiguousarray(np.atleast_2d(h), dtype=np.float64),
        np.ascontiguousarray(step_int_sigma, dtype=np.float64),
    )


def em_pi_paths(pi0, energies, sigma_left, dw):
    return _pick("em_pi_paths")(
        np.ascontiguousarray(pi0, dtype=np.float64),
        np.ascontiguousarray(energies, dtype=np.float64),
        np.ascontiguousarray(sigma_left, dtype=np.float64),
        np.ascontiguousarray(np.atleast_2d(dw), dtype=np.float64),
    )


def em_state_paths(psi0, hmat, sigma_left, dt, dw):
    return _pick("em_state_paths")(
        np.ascontiguousarray(psi0, dtype=np.complex128),
        np.ascontiguousarray(hmat, dtype=np.complex128),
        np.ascontiguousarray(sigma_left, dtype=np.float64),
        np.ascontiguousarray(dt, dtype=np.float64),
        np.ascontiguousarray(np.atleast_2d(dw), dtype=np.float64),
    )


def density_path(rho0, hmat, sigma_left, dt):
    return _pick("density_path")(
        np.ascontiguousarray(rho0, dtype=np.complex128),
        np.ascontiguousarray(hmat, dtype=np.complex128),
        np.ascontiguousarray(sigma_left, dtype=np.float64),
        np.ascontiguousarray(dt, dtype=np.float64),
    )
