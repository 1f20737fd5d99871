"""Alignment-trial statistics: translation/rotation error, RMSE, percentiles, CDF.

Trials record a model pose and a structure pose captured in the same world
frame at a known stand-off distance. Translation error is reported in cm and
rotation error in degrees; meters and radians are used internally.
"""
from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass

import numpy as np

from .geometry import Pose, rotation_angle_between, translation_offset

log = logging.getLogger(__name__)

# Column order for the per-distance summary table.
REPORT_COLUMNS = (
    "Distance",
    "Trans_RMSE",
    "Trans_Median",
    "Trans_P95",
    "Rot_RMSE",
    "Rot_Median",
    "Rot_P95",
)


class TrialLogError(ValueError):
    """A trial-log record that cannot be parsed or violates an invariant."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class AlignmentTrial:
    distance_m: float
    run_id: int
    model_pose: Pose
    structure_pose: Pose

    def __post_init__(self):
        if not self.distance_m > 0:
            raise ValueError(f"distance_m must be positive, got {self.distance_m}")


@dataclass(frozen=True)
class TrialErrors:
    translation_cm: float
    rotation_deg: float

    def __post_init__(self):
        if self.translation_cm < 0 or self.rotation_deg < 0:
            raise ValueError("errors must be non-negative")


@dataclass(frozen=True)
class AlignmentStats:
    """RMSE / median / 95th percentile over one error series."""

    rmse: float
    p50: float
    p95: float
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.p50 > self.p95 + 1e-12:
            raise ValueError("p50 cannot exceed p95")


def compute_trial_errors(trial: AlignmentTrial) -> TrialErrors:
    """Positional offset (cm) and smallest relative rotation (deg) of one trial."""
    translation_m = translation_offset(trial.model_pose.position, trial.structure_pose.position)
    rotation = rotation_angle_between(trial.model_pose.orientation, trial.structure_pose.orientation)
    return TrialErrors(translation_cm=translation_m * 100.0, rotation_deg=rotation)


def percentile(values, p: float) -> float:
    """Linear interpolation between closest ranks: rank = p/100 * (n-1), zero-based sorted."""
    values = list(values)
    if not values:
        raise ValueError("percentile of an empty list")
    if not 0 <= p <= 100:
        raise ValueError(f"percentile p must be in [0, 100], got {p}")
    return float(np.percentile(values, p, method="linear"))


def rmse(values) -> float:
    """Root of the mean of squares."""
    values = np.asarray(list(values), dtype=float)
    if values.size == 0:
        raise ValueError("rmse of an empty list")
    return float(np.sqrt(np.mean(values**2)))


def summarize(values) -> AlignmentStats:
    values = list(values)
    return AlignmentStats(rmse=rmse(values), p50=percentile(values, 50), p95=percentile(values, 95), n=len(values))


def summarize_by_distance(trials) -> dict[float, tuple[AlignmentStats, AlignmentStats]]:
    """Group trials by exact stand-off distance and summarize each error series.

    Returns {distance_m: (translation stats in cm, rotation stats in deg)},
    keys sorted ascending.
    """
    trials = list(trials)
    if not trials:
        raise ValueError("no trials to summarize")
    groups: dict[float, list[TrialErrors]] = {}
    for trial in trials:
        groups.setdefault(trial.distance_m, []).append(compute_trial_errors(trial))
    out = {}
    for distance in sorted(groups):
        errors = groups[distance]
        out[distance] = (
            summarize([e.translation_cm for e in errors]),
            summarize([e.rotation_deg for e in errors]),
        )
    return out


def cdf(values) -> list[tuple[float, float]]:
    """Empirical CDF points: values sorted ascending, fractions stepping by 1/n to 1.0."""
    values = sorted(values)
    if not values:
        raise ValueError("cdf of an empty list")
    n = len(values)
    return [(float(v), (i + 1) / n) for i, v in enumerate(values)]


def tolerance_compliance(values, tolerance: float) -> float:
    """Fraction of values within (<=) the tolerance."""
    values = list(values)
    if not values:
        raise ValueError("compliance of an empty list")
    if tolerance < 0:
        raise ValueError("tolerance must be non-negative")
    return sum(1 for v in values if v <= tolerance) / len(values)


def _parse_pose(record: dict, field: str, line_no: int) -> Pose:
    try:
        raw = record[field]
        pos = raw["pos"]
        quat = raw["quat"]
    except (KeyError, TypeError) as exc:
        raise TrialLogError(line_no, f"missing or malformed field {field!r}") from exc
    quat_arr = np.asarray(quat, dtype=float)
    if quat_arr.shape != (4,):
        raise TrialLogError(line_no, f"{field}.quat must have 4 components")
    norm = float(np.linalg.norm(quat_arr))
    if abs(norm - 1.0) > 1e-6:
        raise TrialLogError(line_no, f"{field}.quat is not unit length (norm {norm:.6g})")
    return Pose(pos, quat_arr)


def load_trials(source) -> list[AlignmentTrial]:
    """Parse a trial log: one JSON object per line.

    Accepts a path, a text stream, or an iterable of lines. Malformed records
    raise TrialLogError naming the line; an empty source returns [] with a
    warning.
    """
    if isinstance(source, (str, bytes)):
        with open(source, "r", encoding="utf-8") as fh:
            return load_trials(fh)
    if isinstance(source, io.TextIOBase):
        source = source.readlines()

    trials = []
    for line_no, line in enumerate(source, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TrialLogError(line_no, f"invalid JSON: {exc.msg}") from exc
        try:
            distance = float(record["distance_m"])
            run_id = int(record["run_id"])
        except (KeyError, TypeError, ValueError) as exc:
            raise TrialLogError(line_no, "missing or malformed distance_m/run_id") from exc
        model_pose = _parse_pose(record, "model_pose", line_no)
        structure_pose = _parse_pose(record, "structure_pose", line_no)
        try:
            trials.append(AlignmentTrial(distance, run_id, model_pose, structure_pose))
        except ValueError as exc:
            raise TrialLogError(line_no, str(exc)) from exc
    if not trials:
        log.warning("trial log contained no records")
    return trials


def summary_rows(summary: dict[float, tuple[AlignmentStats, AlignmentStats]]) -> list[dict]:
    """Flatten a per-distance summary into report rows in REPORT_COLUMNS order."""
    rows = []
    for distance, (trans, rot) in summary.items():
        rows.append(
            {
                "Distance": distance,
                "Trans_RMSE": trans.rmse,
                "Trans_Median": trans.p50,
                "Trans_P95": trans.p95,
                "Rot_RMSE": rot.rmse,
                "Rot_Median": rot.p50,
                "Rot_P95": rot.p95,
            }
        )
    return rows


def format_summary(summary, fmt: str = "text") -> str:
    """Render the per-distance summary as an aligned table or CSV."""
    rows = summary_rows(summary)
    if fmt == "csv":
        lines = [",".join(REPORT_COLUMNS)]
        for row in rows:
            lines.append(",".join(f"{row[c]:.2f}" for c in REPORT_COLUMNS))
        return "\n".join(lines)
    if fmt == "text":
        widths = {c: max(len(c), 12) for c in REPORT_COLUMNS}
        header = "  ".join(c.ljust(widths[c]) for c in REPORT_COLUMNS)
        lines = [header, "-" * len(header)]
        for row in rows:
            lines.append("  ".join(f"{row[c]:.2f}".ljust(widths[c]) for c in REPORT_COLUMNS))
        return "\n".join(lines)
    raise ValueError(f"unknown format {fmt!r}")
