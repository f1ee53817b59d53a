"""Skeleton trajectory files: reading, writing, per-joint filtering and evaluation.

File format
-----------
UTF-8 CSV, one row per frame.  Optional leading lines starting with ``#`` are
comments.  The header is ``t`` followed by ``<joint>_x,<joint>_y,<joint>_z``
for each of the 25 joints in :data:`JOINTS` order.  Times are seconds and
coordinates meters.  Rows containing a non-finite value are dropped and
reported rather than rejected.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    EmptyFile,
    NonMonotoneTimestamps,
    NoOverlap,
    SchemaMismatch,
    TobitKFError,
)
from .filters import GaussianBelief, StateSpaceModel, TobitFilter, savitzky_golay
from .moments import CensorBounds

JOINTS: tuple[str, ...] = (
    "spine_base", "spine_mid", "neck", "head",
    "shoulder_left", "elbow_left", "wrist_left", "hand_left",
    "shoulder_right", "elbow_right", "wrist_right", "hand_right",
    "hip_left", "knee_left", "ankle_left", "foot_left",
    "hip_right", "knee_right", "ankle_right", "foot_right",
    "spine_shoulder", "hand_tip_left", "thumb_left", "hand_tip_right", "thumb_right",
)
AXES = ("x", "y", "z")
HEADER: tuple[str, ...] = ("t",) + tuple(f"{j}_{a}" for j in JOINTS for a in AXES)
SKELETON_METHODS = ("raw", "sgf", "kf", "tkf", "tkfc", "atkf")

#: Relative deviation of a frame interval from the median that triggers a warning.
JITTER_WARN = 0.2


class TimestampJitterWarning(UserWarning):
    pass


class JointFilterError(TobitKFError):
    """A filter failed on one joint; ``joint`` and ``frame`` locate it."""

    def __init__(self, joint: str, frame: int, cause: Exception):
        self.joint, self.frame, self.cause = joint, frame, cause
        super().__init__(f"joint {joint!r}, frame {frame}: {type(cause).__name__}: {cause}")


def _check_times(t: np.ndarray) -> None:
    if np.any(np.diff(t) <= 0):
        k = int(np.argmax(np.diff(t) <= 0))
        raise NonMonotoneTimestamps(f"timestamp at frame {k + 1} ({t[k + 1]!r}) does not increase")


@dataclass(frozen=True)
class TrajectorySeries:
    timestamps: np.ndarray
    channels: np.ndarray
    channel_names: tuple[str, ...]
    frame_rate_hint: float = math.nan

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float)
        g = np.asarray(self.channels, dtype=float)
        if g.ndim == 1:
            g = g[:, None]
        if g.shape[0] != t.size:
            raise ValueError(f"{t.size} timestamps for {g.shape[0]} frames")
        if len(self.channel_names) != g.shape[1]:
            raise ValueError("one name per channel required")
        if not np.all(np.isfinite(g)) or not np.all(np.isfinite(t)):
            raise ValueError("series contains non-finite values")
        _check_times(t)
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "channels", g)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))
        if math.isnan(self.frame_rate_hint) and t.size > 1:
            object.__setattr__(self, "frame_rate_hint", 1.0 / float(np.median(np.diff(t))))

    def __len__(self) -> int:
        return self.timestamps.size


@dataclass(frozen=True)
class SkeletonFrameSet:
    """25 joints with three coordinates each, on a shared time axis."""

    joints: Mapping[str, TrajectorySeries]
    #: 1-based data-row numbers (header excluded) dropped during parsing.
    dropped_rows: tuple[int, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if not self.joints:
            raise ValueError("no joints")
        first = next(iter(self.joints.values()))
        for name, s in self.joints.items():
            if s.channels.shape[1] != 3:
                raise ValueError(f"joint {name!r} must have 3 channels")
            if not np.array_equal(s.timestamps, first.timestamps):
                raise ValueError(f"joint {name!r} does not share the common timestamps")

    @property
    def timestamps(self) -> np.ndarray:
        return next(iter(self.joints.values())).timestamps

    @property
    def n_frames(self) -> int:
        return self.timestamps.size

    def matrix(self) -> np.ndarray:
        """``(frames, 3 * joints)`` coordinates in joint order."""
        return np.hstack([s.channels for s in self.joints.values()])

    @classmethod
    def from_matrix(cls, timestamps, matrix, joint_names: Sequence[str] = JOINTS, dropped_rows=()):
        g = np.asarray(matrix, dtype=float)
        if g.shape[1] != 3 * len(joint_names):
            raise ValueError(f"expected {3 * len(joint_names)} columns, got {g.shape[1]}")
        joints = {
            j: TrajectorySeries(timestamps, g[:, 3 * i : 3 * i + 3], tuple(f"{j}_{a}" for a in AXES))
            for i, j in enumerate(joint_names)
        }
        return cls(joints, tuple(dropped_rows))

    def with_channels(self, matrix) -> "SkeletonFrameSet":
        return SkeletonFrameSet.from_matrix(self.timestamps, matrix, tuple(self.joints))


def _data_lines(lines: Iterable[str]):
    for line in lines:
        if line.startswith("#"):
            continue
        yield line


def parse_skeleton_csv(path) -> SkeletonFrameSet:
    """Read a skeleton CSV file.

    Raises
    ------
    EmptyFile
        No header, or no data rows.
    SchemaMismatch
        Header names or a row's field count do not match, or a field is not a number.
    NonMonotoneTimestamps
        Timestamps of the kept rows are not strictly increasing.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(_data_lines(fh))
        header = next(reader, None)
        if header is None or not any(h.strip() for h in header):
            raise EmptyFile(f"{path}: no header row")
        header = [h.strip() for h in header]
        if tuple(header) != HEADER:
            bad = next(
                (f"column {i + 1} is {h!r}, expected {e!r}" for i, (h, e) in enumerate(zip(header, HEADER)) if h != e),
                f"{len(header)} columns, expected {len(HEADER)}",
            )
            raise SchemaMismatch(f"{path}: header mismatch, {bad}")
        rows, dropped = [], []
        for n, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(HEADER):
                raise SchemaMismatch(f"{path}: row {n} has {len(row)} fields, expected {len(HEADER)}")
            try:
                values = [float(v) for v in row]
            except ValueError as exc:
                raise SchemaMismatch(f"{path}: row {n}: {exc}") from None
            if all(math.isfinite(v) for v in values):
                rows.append(values)
            else:
                dropped.append(n)
    if not rows:
        raise EmptyFile(f"{path}: no usable data rows")
    data = np.array(rows)
    t = data[:, 0]
    _check_times(t)
    _warn_jitter(t)
    return SkeletonFrameSet.from_matrix(t, data[:, 1:], JOINTS, dropped)


def _warn_jitter(t: np.ndarray) -> None:
    if t.size < 3:
        return
    dt = np.diff(t)
    med = float(np.median(dt))
    worst = float(np.max(np.abs(dt - med)) / med)
    if worst > JITTER_WARN:
        warnings.warn(
            f"frame intervals deviate up to {worst:.0%} from the median {med:.4g} s",
            TimestampJitterWarning,
            stacklevel=3,
        )


def write_skeleton_csv(frames: SkeletonFrameSet, path, comments: Sequence[str] = ()) -> None:
    """Write ``frames`` in the canonical form: shortest round-trip float text."""
    if tuple(frames.joints) != JOINTS:
        raise SchemaMismatch("only the standard 25-joint layout can be written")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for t, row in zip(frames.timestamps, frames.matrix()):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


@dataclass(frozen=True)
class SkeletonFilterParams:
    """Per-joint model and filter settings; defaults suit a 30 Hz skeleton tracker."""

    r: float = 0.01
    q: float = 0.0025
    p0: float = 0.01
    c: tuple[float, float, float] = (0.34, 0.18, 0.34)
    lower: tuple[float, float, float] = (-3.0, -1.5, 0.5)
    upper: tuple[float, float, float] = (3.0, 3.0, 5.0)
    window: int = 9
    order: int = 3

    def model(self) -> StateSpaceModel:
        eye = np.eye(3)
        return StateSpaceModel(eye, eye, self.q * eye, self.r * eye)

    def bounds(self) -> CensorBounds:
        return CensorBounds(self.lower, self.upper)


def filter_joint(channels, method: str, params: SkeletonFilterParams = SkeletonFilterParams(),
                 *, joint: str = "?", keep_reports: bool = False):
    """Filter one joint's ``(frames, 3)`` coordinates.

    Returns ``(estimates, reports)``; ``reports`` is empty unless requested or
    the method is not a Kalman-type filter.  The first frame initializes the
    state and is then also filtered, so the output has one row per input frame.
    """
    y = np.asarray(channels, dtype=float)
    if method == "raw":
        return y.copy(), []
    if method == "sgf":
        return savitzky_golay(y, params.window, params.order), []
    if method not in SKELETON_METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {SKELETON_METHODS}")
    init = GaussianBelief(y[0], params.p0 * np.eye(3))
    f = TobitFilter(
        method,
        params.model(),
        init,
        bounds=params.bounds() if method in ("tkf", "tkfc") else None,
        c=params.c if method == "atkf" else None,
    )
    out = np.empty_like(y)
    reports = []
    for k, row in enumerate(y):
        try:
            rep = f.step(row)
        except TobitKFError as exc:
            raise JointFilterError(joint, k, exc) from exc
        out[k] = rep.posterior.mean
        if keep_reports:
            reports.append(rep)
    return out, reports


def filter_skeleton(frames: SkeletonFrameSet, method: str,
                    params: SkeletonFilterParams = SkeletonFilterParams()) -> SkeletonFrameSet:
    """Filter every joint independently with a constant-position model."""
    if method not in SKELETON_METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {SKELETON_METHODS}")
    if frames.n_frames == 0:
        raise ValueError("no frames")
    cols = [filter_joint(s.channels, method, params, joint=name)[0] for name, s in frames.joints.items()]
    return frames.with_channels(np.hstack(cols))


@dataclass(frozen=True)
class RmseTable:
    """Per-joint, per-channel RMSE at the selected lag."""

    rows: tuple[tuple[str, str, float], ...]
    lag: int
    #: Mean RMSE over all channels for every lag that was tried.
    scan: Mapping[int, float]

    def overall(self) -> float:
        return float(np.mean([r[2] for r in self.rows]))


def _lagged_pair(test: np.ndarray, ref: np.ndarray, lag: int):
    # Pairs test[t + lag] with reference[t].
    t0 = max(0, -lag)
    t1 = min(ref.shape[0], test.shape[0] - lag)
    if t1 <= t0:
        raise NoOverlap(f"no overlapping frames at lag {lag}")
    return test[t0 + lag : t1 + lag], ref[t0:t1]


def evaluate_against_reference(test: SkeletonFrameSet, reference: SkeletonFrameSet,
                               lag: int | Sequence[int] = 0) -> RmseTable:
    """Positional RMSE between ``test`` and ``reference``.

    Frame ``t + lag`` of ``test`` is compared with frame ``t`` of ``reference``,
    so a test stream that runs ``k`` frames behind the reference is best aligned
    at ``lag = k``.  Passing several lags scans them and keeps the one with the
    smallest mean RMSE (earliest on ties).
    """
    names = [j for j in test.joints if j in reference.joints]
    if not names:
        raise NoOverlap("no joints in common")
    T = np.hstack([test.joints[j].channels for j in names])
    Rf = np.hstack([reference.joints[j].channels for j in names])
    lags = [int(lag)] if np.isscalar(lag) else [int(v) for v in lag]
    if not lags:
        raise ValueError("no lags given")
    per_lag, scan = {}, {}
    for L in lags:
        try:
            a, b = _lagged_pair(T, Rf, L)
        except NoOverlap:
            continue
        per_lag[L] = np.sqrt(np.mean((a - b) ** 2, axis=0))
        scan[L] = float(np.mean(per_lag[L]))
    if not scan:
        raise NoOverlap(f"no overlapping frames for any lag in {lags[0]}..{lags[-1]}")
    best = min(scan, key=lambda L: (scan[L], lags.index(L)))
    rows = tuple(
        (j, a, float(per_lag[best][3 * i + k])) for i, j in enumerate(names) for k, a in enumerate(AXES)
    )
    return RmseTable(rows, best, scan)


def write_rmse_csv(table: RmseTable, path, comments: Sequence[str] = ()) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["joint", "channel", "rmse", "lag"])
        for j, a, v in table.rows:
            w.writerow([j, a, repr(v), table.lag])
