"""File formats: trajectory CSV, report JSON/text, curve CSV.

All writers go through ``atomic_write_text`` (temporary file in the target
directory, then ``os.replace``) so an interrupted run never leaves a
half-written file behind. Floats are written with 17 significant digits.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .exact_solver import ReductionTrajectory, SamplePath, energy_and_moments
from .spectrum import Spectrum

SOURCES = ("exact", "em_state", "em_pi")


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _fmt(x) -> str:
    return format(float(x), ".17g")


def trajectory_header(n_levels: int, with_source: bool = False) -> list[str]:
    cols = ["t", "xi", "eta", "B", "W", "H_t", "V_t", "kappa_t"]
    cols += [f"pi_{i + 1}" for i in range(n_levels)]
    return (["source"] if with_source else []) + cols


def trajectory_rows(path: SamplePath, trajectory: ReductionTrajectory, source: str | None = None):
    cols = [
        trajectory.grid.times,
        path.xi,
        path.eta,
        path.B,
        trajectory.innovation,
        trajectory.energy,
        trajectory.variance,
        trajectory.third_moment,
    ]
    cols += [trajectory.posteriors[:, i] for i in range(trajectory.posteriors.shape[1])]
    table = np.column_stack(cols)
    prefix = [source] if source is not None else []
    return [",".join(prefix + [_fmt(v) for v in row]) for row in table]


def trajectory_csv(path: SamplePath, trajectory: ReductionTrajectory) -> str:
    header = ",".join(trajectory_header(trajectory.posteriors.shape[1]))
    return "\n".join([header] + trajectory_rows(path, trajectory)) + "\n"


def trajectory_from_posteriors(spectrum: Spectrum, like: ReductionTrajectory, posteriors) -> ReductionTrajectory:
    """Same grid and innovation as ``like`` with moments recomputed from ``posteriors``."""
    post = np.asarray(posteriors, dtype=float)
    h, v, k = energy_and_moments(spectrum, post)
    return ReductionTrajectory(like.grid, post, h, v, k, like.innovation)


def sde_csv(path: SamplePath, tagged) -> str:
    """Stack several trajectories on the same path, tagged by ``source``.

    ``tagged`` is a sequence of ``(source, ReductionTrajectory)``.
    """
    lines = []
    for source, traj in tagged:
        if source not in SOURCES:
            raise ValueError(f"unknown source tag {source!r}")
        lines += trajectory_rows(path, traj, source)
    n = tagged[0][1].posteriors.shape[1]
    return "\n".join([",".join(trajectory_header(n, with_source=True))] + lines) + "\n"


def read_trajectory_csv(path) -> tuple[list[str], np.ndarray]:
    """Header and numeric table of a file written by ``trajectory_csv``."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    return header, np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    if hasattr(obj, "value"):
        return obj.value
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def curves_csv(report) -> str:
    header = "t,mean_V,stderr_V,upper_bound,mean_H,stderr_H"
    table = np.column_stack(
        [report.times, report.mean_V, report.stderr_V, report.upper_bound, report.mean_H, report.stderr_H]
    )
    return "\n".join([header] + [",".join(_fmt(v) for v in row) for row in table]) + "\n"


def _columns(rows, header) -> list[str]:
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    fmt = lambda r: "  ".join(str(c).rjust(w) for c, w in zip(r, widths))  # noqa: E731
    return [fmt(header), fmt(["-" * w for w in widths])] + [fmt(r) for r in rows]


def report_text(report) -> str:
    """Aligned-column summary of an ``EnsembleReport``."""
    lines = [
        f"paths          {report.path_count}",
        f"master seed    {report.master_seed}",
        f"regime         {report.regime}",
        f"collapsed      {report.collapsed_fraction:.6f}",
        "",
    ]
    born = [
        [f"{e:.6g}", f"{p:.6f}", f"{f:.6f}", f"{s:.6f}", f"{(f - p) / s:+.2f}" if s > 0 else "n/a"]
        for e, p, f, s in zip(report.levels, report.priors, report.born_frequencies, report.born_stderr)
    ]
    lines += _columns(born, ["E_i", "prior", "frequency", "stderr", "z"]) + [""]
    idx = [int(np.argmin(np.abs(report.times - c))) for c in report.checkpoints]
    curve = [
        [
            f"{report.times[j]:.6g}",
            f"{report.mean_H[j]:.6f}",
            f"{report.stderr_H[j]:.6f}",
            f"{report.mean_V[j]:.6f}",
            f"{report.stderr_V[j]:.6f}",
            f"{report.upper_bound[j]:.6f}",
        ]
        for j in idx
    ]
    lines += _columns(curve, ["t", "mean_H", "stderr_H", "mean_V", "stderr_V", "V_bound"]) + [""]
    if report.lower_bound is not None:
        lines += [f"lower bound    {report.lower_bound:.6f}", ""]
    lines += _columns([[k, "PASS" if v else "FAIL"] for k, v in report.flags.items()], ["check", "result"])
    return "\n".join(lines) + "\n"
