"""Compare the numba kernels with their pure-numpy fallbacks.

Run with ``python3 benchmarks/bench_kernels.py [--paths N] [--steps M]``.
Each kernel is called once untimed (JIT compilation), then timed as the
best of ``--repeat`` calls; outputs of the two backends are compared.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from reduction_lab import kernels
from reduction_lab._accel import NUMBA_AVAILABLE


def best_of(fn, args, repeat: int) -> float:
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def cases(n_paths: int, n_steps: int, n_levels: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    energies = np.linspace(0.0, 1.0, n_levels)
    priors = rng.dirichlet(np.ones(n_levels))
    isq = np.linspace(0.0, 50.0, n_steps + 1)
    eta = rng.standard_normal((n_paths, n_steps + 1)).cumsum(axis=1) * 0.1 + 0.5 * isq
    step = np.full(n_steps, 50.0 / n_steps) ** 0.5
    sig = np.ones(n_steps)
    dw = rng.standard_normal((n_paths, n_steps)) * np.sqrt(1e-3)
    dt = np.full(n_steps, 1e-3)
    hmat = np.diag(energies).astype(complex)
    psi0 = np.sqrt(priors).astype(complex)
    rho0 = np.outer(psi0, psi0.conj())
    with np.errstate(divide="ignore"):
        lp = np.log(priors)
    post, h, _, _ = kernels.posterior_moments_numpy(lp, energies, eta, isq)
    return {
        "posterior_moments": (lp, energies, eta, isq),
        "innovation": (eta, h, step),
        "em_pi_paths": (priors, energies, sig, dw),
        "em_state_paths": (psi0, hmat, sig, dt, dw[: max(1, n_paths // 10)]),
        "density_path": (rho0, hmat, sig, dt),
    }


def _max_diff(a, b) -> float:
    if isinstance(a, tuple):
        return max(_max_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=1000)
    ap.add_argument("--steps", type=int, default=1000)
    ap.add_argument("--levels", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if not NUMBA_AVAILABLE:
        print("numba is not installed; only the numpy backend can run")
        return

    print(f"paths={args.paths} steps={args.steps} levels={args.levels} (best of {args.repeat})")
    print(f"{'kernel':<20}{'numpy [s]':>12}{'numba [s]':>12}{'speedup':>10}{'max |diff|':>14}")
    for name, call_args in cases(args.paths, args.steps, args.levels).items():
        f_np = getattr(kernels, f"{name}_numpy")
        f_nb = getattr(kernels, f"{name}_numba")
        ref, out = f_np(*call_args), f_nb(*call_args)  # also compiles
        t_np = best_of(f_np, call_args, args.repeat)
        t_nb = best_of(f_nb, call_args, args.repeat)
        print(f"{name:<20}{t_np:>12.4f}{t_nb:>12.4f}{t_np / t_nb:>10.1f}{_max_diff(ref, out):>14.2e}")


if __name__ == "__main__":
    main()
