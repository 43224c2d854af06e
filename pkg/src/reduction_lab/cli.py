"""Command-line front end.

Usage::

    reduction-lab COMMAND CONFIG.json [--seed N] [--out-dir DIR] [--threads K] [--check]

Commands: ``simulate``, ``ensemble``, ``oracle-compare``, ``finite-time``,
``convergence``, ``validate``. Exit status: 0 ok, 1 a ``--check`` flag
failed, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import os
import sys
import traceback

import numpy as np

from . import analysis, io
from .config import ConfigError, RunConfig, validate
from .exact_solver import (
    StepIntegrals,
    TimeGrid,
    filter_posterior,
    restart_filter,
    run_exact,
    sample_batch,
)
from .filter_oracles import DiscretizedPath, IncrementObservations, bayes_path_posterior, increment_posterior
from .sde_integrator import em_pi_paths, em_state_paths, linearized_solution, state_posteriors, strong_convergence

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
ROUNDOFF = 1e-12

COMMAND_EXPERIMENTS = {
    "simulate": ("trajectory",),
    "ensemble": ("ensemble", "partial_measurement"),
    "oracle-compare": ("oracle_compare",),
    "finite-time": ("finite_time",),
    "convergence": ("convergence",),
}


def _emit(cfg: RunConfig, name: str, text: str, written: list) -> None:
    written.append(str(io.atomic_write_text(cfg.output_path(name), text)))


def _opt(cfg: RunConfig, section: str, key: str, default):
    sec = cfg.options.get(section) or {}
    if not isinstance(sec, dict):
        raise ConfigError(section, "expected an object")
    return sec.get(key, default)


# ---------------------------------------------------------------------------
# experiments; each returns (flags, written files)


def run_trajectory(cfg: RunConfig):
    spectrum, basis, hmat = cfg.spectrum()
    schedule = cfg.coupling()
    grid = cfg.grid(schedule)
    path, traj = run_exact(spectrum, basis, schedule, grid, cfg.seed, with_states=True)
    written: list = []
    _emit(cfg, "trajectory.csv", io.trajectory_csv(path, traj), written)

    # EM cross-check driven by the exact innovation increments
    dw = np.diff(traj.innovation)[None, :]
    em_pi = em_pi_paths(spectrum, schedule, grid, dw)[0]
    if hmat is None:
        h = np.diag(spectrum.energies).astype(complex)
        psi0 = np.sqrt(spectrum.priors).astype(complex)
    else:
        h = hmat
        psi0 = np.sqrt(spectrum.priors) @ basis.vectors
    em_state = state_posteriors(em_state_paths(h, psi0, schedule, grid, dw)[0], basis)
    tagged = [
        ("exact", traj),
        ("em_state", io.trajectory_from_posteriors(spectrum, traj, em_state)),
        ("em_pi", io.trajectory_from_posteriors(spectrum, traj, em_pi)),
    ]
    _emit(cfg, "trajectory_sde.csv", io.sde_csv(path, tagged), written)

    t = grid.times
    mid = t.size // 2
    restart = restart_filter(
        spectrum, schedule, traj.posteriors[mid], t[mid], path.eta[-1] - path.eta[mid], t[-1]
    )
    lin = linearized_solution(spectrum, schedule, path.eta[-1], t[-1])
    e = spectrum.energies
    second = traj.posteriors @ (e * e) - traj.energy**2
    checks = {
        "normalization_error": float(np.max(np.abs(traj.posteriors.sum(axis=1) - 1.0))),
        "variance_identity_error": float(np.max(np.abs(second - traj.variance))),
        "restart_error": float(np.max(np.abs(restart - traj.posteriors[-1]))),
        "linearized_error": float(np.max(np.abs(lin.posteriors - traj.posteriors[-1]))),
        "state_overlap_error": float(np.max(np.abs(basis.overlaps(traj.states) - traj.posteriors))),
        "em_pi_terminal_difference": float(np.max(np.abs(em_pi[-1] - traj.posteriors[-1]))),
        "outcome": float(path.outcome_H),
    }
    flags = {
        "normalization": checks["normalization_error"] <= 1e-12,
        "variance_identity": checks["variance_identity_error"] <= 1e-10,
        "restart_filter": checks["restart_error"] <= 1e-12,
        "linearized_route": checks["linearized_error"] <= 1e-12,
        "transition_probability": checks["state_overlap_error"] <= 1e-10,
        "innovation_starts_at_zero": bool(traj.innovation[0] == 0.0),
    }
    _emit(cfg, "trajectory_checks.json", io.json_text({"checks": checks, "flags": flags, "seed": cfg.seed}), written)
    return flags, written


def run_ensemble(cfg: RunConfig):
    spectrum, _, _ = cfg.spectrum()
    schedule = cfg.coupling()
    grid = cfg.grid(schedule)
    n_cp = int(cfg.options.get("checkpoints", 10))
    report = analysis.ensemble_report(
        spectrum, schedule, grid, cfg.paths, cfg.seed, threads=max(cfg.threads, 1), n_checkpoints=n_cp
    )
    if cfg.experiment == "partial_measurement":
        report.flags["regime_partial"] = report.regime == "partial"
    written: list = []
    _emit(cfg, "ensemble_report.json", io.json_text(report.summary()), written)
    _emit(cfg, "ensemble_report.txt", io.report_text(report), written)
    _emit(cfg, "ensemble_curves.csv", io.curves_csv(report), written)
    return dict(report.flags), written


def oracle_records(spectrum, schedule, t_end: float, n_values, n_paths: int, master_seed: int) -> dict:
    """Max posterior error of both oracles against the exact filter, per n."""
    n_values = sorted(int(n) for n in n_values)
    fine = TimeGrid.uniform(t_end, n_values[-1])
    batch = sample_batch(spectrum, schedule, fine, master_seed, range(n_paths))
    exact = filter_posterior(spectrum, schedule, batch.eta[:, -1], t_end)
    out = {"path_density": [], "increment": [], "oracle_agreement": []}
    for n in n_values:
        err_a = np.zeros((n_paths, spectrum.n_levels))
        err_b = np.zeros_like(err_a)
        agree = 0.0
        for p in range(n_paths):
            dpath = DiscretizedPath.subsample(fine.times, batch.xi[p], n)
            pa = bayes_path_posterior(spectrum, schedule, dpath)
            pb = increment_posterior(spectrum, IncrementObservations.from_path(schedule, dpath))
            err_a[p] = np.abs(pa - exact[p])
            err_b[p] = np.abs(pb - exact[p])
            agree = max(agree, float(np.max(np.abs(pa - pb))))
        for key, err in (("path_density", err_a), ("increment", err_b)):
            worst = int(np.argmax(err.max(axis=1)))
            out[key].append(
                {
                    "n": n,
                    "max_abs_error": float(err.max()),
                    "per_level_errors": [float(x) for x in err.max(axis=0)],
                    "path_seed": master_seed,
                    "path_index": worst,
                }
            )
        out["oracle_agreement"].append({"n": n, "max_abs_difference": agree})
    return out


def run_oracle_compare(cfg: RunConfig):
    spectrum, _, _ = cfg.spectrum()
    schedule = cfg.coupling()
    grid = cfg.grid(schedule)
    n_values = _opt(cfg, "oracle", "n_values", [100, 1000, 10000])
    n_paths = int(_opt(cfg, "oracle", "paths", cfg.paths if cfg.paths > 1 else 20))
    rec = oracle_records(spectrum, schedule, float(grid.times[-1]), n_values, n_paths, cfg.seed)
    flags = {}
    for key in ("path_density", "increment"):
        errs = [r["max_abs_error"] for r in rec[key]]
        # under constant sigma both oracles are exact and sit at roundoff
        flags[f"{key}_decreasing"] = all(b < a or b <= ROUNDOFF for a, b in zip(errs, errs[1:]))
        if rec[key][-1]["n"] >= 10_000:
            flags[f"{key}_below_1e-3"] = errs[-1] < 1e-3
    if schedule.kind == "constant":
        flags["oracles_agree"] = all(r["max_abs_difference"] <= 1e-12 for r in rec["oracle_agreement"])
    written: list = []
    _emit(cfg, "oracle_compare.json", io.json_text({"records": rec, "flags": flags, "paths": n_paths}), written)
    return flags, written


def finite_time_study(spectrum, schedule, grid: TimeGrid, n_paths: int, master_seed: int, chunk: int = 200) -> dict:
    horizon = schedule.horizon
    t = grid.times
    steps = StepIntegrals.build(schedule, grid)
    cps = [int(np.argmin(np.abs(t - f * horizon))) for f in (0.1, 0.25, 0.5, 0.75, 0.9)]
    s1 = np.zeros(len(cps))
    s2 = np.zeros(len(cps))
    worst = {"energy": 0.0, "reconstruction": 0.0, "identity": 0.0, "innovation": 0.0}
    collapsed = matched = small_beta = 0
    beta_bound = 4.0 * np.sqrt(horizon * analysis.FINITE_TIME_STOP)
    for start in range(0, n_paths, chunk):
        batch = sample_batch(spectrum, schedule, grid, master_seed, range(start, min(start + chunk, n_paths)), steps)
        for i in range(len(batch)):
            path = batch.path(i)
            rec = analysis.finite_time_equivalence(spectrum, path, schedule)
            beta = analysis.bridge_transform(path, schedule).beta
            worst["energy"] = max(worst["energy"], rec.max_energy_difference)
            worst["reconstruction"] = max(worst["reconstruction"], rec.max_reconstruction_error)
            worst["identity"] = max(worst["identity"], rec.max_bridge_identity_error)
            worst["innovation"] = max(worst["innovation"], rec.max_innovation_difference)
            collapsed += rec.terminal_max_posterior > 0.999
            matched += rec.terminal_argmax_matches
            small_beta += abs(beta[-1]) < beta_bound
            s1 += beta[cps]
            s2 += beta[cps] ** 2
    n = float(n_paths)
    mean = s1 / n
    var = (s2 - n * mean**2) / (n - 1)
    law = t[cps] * (horizon - t[cps]) / horizon
    se = law * np.sqrt(2.0 / (n - 1))
    return {
        "paths": n_paths,
        "terminal_time": float(t[-1]),
        "max_energy_difference": worst["energy"],
        "max_reconstruction_error": worst["reconstruction"],
        "max_bridge_identity_error": worst["identity"],
        "max_innovation_difference": worst["innovation"],
        "collapsed_fraction": collapsed / n,
        "argmax_match_fraction": matched / n,
        "small_terminal_beta_fraction": small_beta / n,
        "beta_variance": [
            {"t": float(t[c]), "sample": float(v), "bridge_law": float(b), "stderr": float(s)}
            for c, v, b, s in zip(cps, var, law, se)
        ],
    }


def run_finite_time(cfg: RunConfig):
    spectrum, _, _ = cfg.spectrum()
    schedule = cfg.coupling()
    if not schedule.is_finite_time:
        raise ConfigError("coupling.kind", "finite-time needs a finite_time coupling")
    grid = cfg.grid(schedule)
    n_paths = int(_opt(cfg, "finite_time", "paths", cfg.paths))
    res = finite_time_study(spectrum, schedule, grid, n_paths, cfg.seed)
    flags = {
        "energy_forms_agree": res["max_energy_difference"] < 1e-6,
        "bridge_identity": res["max_bridge_identity_error"] <= 1e-12,
        "reconstruction": res["max_reconstruction_error"] < 1e-3,
        "collapse_by_horizon": res["collapsed_fraction"] >= 0.99,
        "bridge_endpoint": res["small_terminal_beta_fraction"] >= 0.99,
        "bridge_variance": all(abs(r["sample"] - r["bridge_law"]) <= 3 * r["stderr"] for r in res["beta_variance"]),
    }
    written: list = []
    _emit(cfg, "finite_time.json", io.json_text({"results": res, "flags": flags}), written)
    return flags, written


def run_convergence(cfg: RunConfig):
    spectrum, _, _ = cfg.spectrum()
    schedule = cfg.coupling()
    grid = cfg.grid(schedule)
    fine = int(_opt(cfg, "convergence", "fine_steps", 10_000))
    factors = [int(f) for f in _opt(cfg, "convergence", "factors", [100, 10, 1])]
    n_paths = int(_opt(cfg, "convergence", "paths", 100))
    res = strong_convergence(spectrum, schedule, float(grid.times[-1]), fine, factors, n_paths, cfg.seed)
    order = np.argsort(res.steps)[::-1]
    meds = [res.median_errors[i] for i in order]
    flags = {
        "decreasing": all(b < a for a, b in zip(meds, meds[1:])),
        "finest_below_1e-2": meds[-1] < 1e-2,
    }
    record = {
        "dt": [res.steps[i] for i in order],
        "median_max_error": meds,
        "paths": n_paths,
        "flags": flags,
    }
    written: list = []
    _emit(cfg, "convergence.json", io.json_text(record), written)
    return flags, written


RUNNERS = {
    "trajectory": run_trajectory,
    "ensemble": run_ensemble,
    "partial_measurement": run_ensemble,
    "oracle_compare": run_oracle_compare,
    "finite_time": run_finite_time,
    "convergence": run_convergence,
}


def run(cfg: RunConfig, command: str):
    """Run the experiment selected by ``command`` and the config."""
    allowed = COMMAND_EXPERIMENTS[command]
    if cfg.experiment is None:
        cfg.experiment = allowed[0]
    elif cfg.experiment not in allowed:
        raise ConfigError("experiment", f"{cfg.experiment!r} cannot be run by the {command!r} command")
    return RUNNERS[cfg.experiment](cfg)


# ---------------------------------------------------------------------------


def _provenance(exc: BaseException) -> str:
    mod = "reduction_lab"
    for frame in traceback.extract_tb(exc.__traceback__):
        name = os.path.splitext(os.path.basename(frame.filename))[0]
        if f"{os.sep}reduction_lab{os.sep}" in frame.filename:
            mod = f"reduction_lab.{name}"
    return mod


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reduction-lab", description="Energy-based state reduction laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*COMMAND_EXPERIMENTS, "validate"):
        p = sub.add_parser(name)
        p.add_argument("config", help="run configuration (JSON)")
        if name != "validate":
            p.add_argument("--seed", type=int, default=None, help="master seed (overrides config and environment)")
            p.add_argument("--out-dir", default=None, help="output directory")
            p.add_argument("--threads", type=int, default=None, help="worker thread cap")
            p.add_argument("--check", action="store_true", help="exit 1 if any pass/fail flag fails")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "validate":
        try:
            cfg = RunConfig.load(args.config)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        diags = validate(cfg.raw)
        for d in diags:
            print(d)
        if not diags:
            print("ok")
        return EXIT_CONFIG if diags else EXIT_OK

    try:
        cfg = RunConfig.load(args.config).with_overrides(
            seed=args.seed, out_dir=args.out_dir, threads=args.threads, env=os.environ
        )
        flags, written = run(cfg, args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error [{_provenance(exc)}]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    for f in written:
        print(f"wrote {f}")
    for k, v in flags.items():
        print(f"{'PASS' if v else 'FAIL'}  {k}")
    if args.check and not all(flags.values()):
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
