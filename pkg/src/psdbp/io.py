"""File formats: trajectory/census CSVs, curve dumps, JSON reports.

All emissions are byte-deterministic given their inputs: floats are
serialized with round-trip `repr`, rows are ordered canonically, and
files use UTF-8 with LF line endings.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError, ParameterDomainError
from .kernel import TruncatedKernel
from .models import OffspringModel
from .qprocess import CurveCache, default_cache
from .simulate import Trajectory


def _fmt(x) -> str:
    return repr(float(x))


@dataclass(frozen=True)
class CensusSeries:
    """Yearly census counts (e.g. adult females), one count per year."""

    years: tuple
    counts: tuple
    source: str = ""

    def __post_init__(self):
        years = tuple(int(y) for y in self.years)
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "counts", counts)
        if len(years) != len(counts):
            raise ParameterDomainError("years and counts must have equal length")
        if any(b - a != 1 for a, b in zip(years, years[1:])):
            raise ParameterDomainError("years must increase by exactly 1")
        if len(counts) > 0 and counts[0] < 1:
            raise ParameterDomainError("first census count must be >= 1")
        if any(c < 0 for c in counts):
            raise ParameterDomainError("census counts must be non-negative")

    def to_trajectory(self) -> Trajectory:
        if len(self.counts) < 3:
            raise InsufficientDataError("census series shorter than 3 points")
        return Trajectory(np.array(self.counts, dtype=np.int64), family="census")


def write_census_csv(path, series: CensusSeries):
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["year", "count"])
        for year, count in zip(series.years, series.counts):
            writer.writerow([year, count])


def read_census_csv(path) -> CensusSeries:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["year", "count"]:
        raise ParameterDomainError(f"{path}: expected header 'year,count'")
    years = [int(r[0]) for r in rows[1:] if r]
    counts = [int(r[1]) for r in rows[1:] if r]
    return CensusSeries(tuple(years), tuple(counts), source=str(path))


def write_trajectories_csv(path, trajectories):
    """Long-format CSV `rep,t,z`, one row per time point, ordered by (rep, t)."""
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rep", "t", "z"])
        for traj in trajectories:
            for t, z in enumerate(traj.states):
                writer.writerow([traj.rep, t, int(z)])


def write_trajectory_csv(path, trajectory: Trajectory):
    """Two-column CSV `t,z` for a single trajectory."""
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "z"])
        for t, z in enumerate(trajectory.states):
            writer.writerow([t, int(z)])


def read_trajectories_csv(path) -> list:
    """Read either `t,z` or long `rep,t,z` CSVs back into trajectories."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InsufficientDataError(f"{path}: empty trajectory file")
    header = [c.strip() for c in rows[0]]
    body = [r for r in rows[1:] if r]
    if header == ["t", "z"]:
        states = [int(r[1]) for r in sorted(body, key=lambda r: int(r[0]))]
        return [Trajectory(np.array(states, dtype=np.int64))]
    if header == ["rep", "t", "z"]:
        by_rep: dict = {}
        for r in body:
            by_rep.setdefault(int(r[0]), []).append((int(r[1]), int(r[2])))
        out = []
        for rep in sorted(by_rep):
            states = [z for _, z in sorted(by_rep[rep])]
            out.append(Trajectory(np.array(states, dtype=np.int64), rep=rep))
        return out
    raise ParameterDomainError(f"{path}: expected header 't,z' or 'rep,t,z'")


def write_mup_csv(path, model: OffspringModel, theta, z_max: int,
                  cache: CurveCache | None = None):
    """Per-state curve dump: raw mean, conditioned mean/variance, stationary law."""
    cache = cache or default_cache()
    entry = cache.entry(model, theta, z_max, need_left=True)
    states = np.arange(1, z_max + 1)
    raw_mean = np.asarray(model.mean(states.astype(float), theta))
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["z", "m", "m_up", "sigma2_up", "stationary"])
        for i, z in enumerate(states):
            writer.writerow([
                int(z), _fmt(raw_mean[i]), _fmt(entry.m_up[i]),
                _fmt(entry.sigma2_up[i]), _fmt(entry.stationary[i]),
            ])


def write_kernel_csv(path, kernel: TruncatedKernel):
    """Dense kernel dump with a header row of destination states."""
    states = list(range(1, kernel.z_max + 1))
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["from"] + states)
        for i, row in enumerate(kernel.rows, start=1):
            writer.writerow([i] + [_fmt(x) for x in row])


def write_ellipse_csv(path, polyline: np.ndarray):
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["phi", "x", "y"])
        for phi, x, y in polyline:
            writer.writerow([_fmt(phi), _fmt(x), _fmt(y)])


def file_digest(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return [_jsonable(x) for x in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(x) for x in obj]
    return obj


def write_json(path, payload: dict):
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")
