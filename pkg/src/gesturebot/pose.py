"""Pose landmarks to robot joint angles.

All angles are measured in a torso frame built from the shoulders and hips,
so they do not depend on where the camera is or how far away the subject
stands. The frame axes are

* ``right``: from the subject's right shoulder to their left shoulder
  (the viewer's right when the subject faces the camera),
* ``up``: hips towards shoulders, re-orthogonalized,
* ``forward``: ``right x up``, the direction the chest faces.

Landmark coordinates are expected in a right-handed, y-up frame; use
``y_down=True`` when loading image-style coordinates.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .errors import EmptyInputError, InputError, OrderingError, PoseGeometryError, SafetyError
from .motion import (
    DEFAULT_JOINT_NAMES,
    JointTrajectory,
    RobotProfile,
    check_velocity,
    clamp_trajectory,
    downsample,
)

log = logging.getLogger(__name__)

REQUIRED_LANDMARKS = (
    "nose",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
)
VISIBILITY_THRESHOLD = 0.5
DEFAULT_SPEED_SCALE = 12.0

# Relative length below which a direction is considered undefined.
_EPS = 1e-9


@dataclass(frozen=True)
class Landmark:
    x: float
    y: float
    z: float
    visibility: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.visibility <= 1.0:
            raise InputError(f"visibility must be in [0, 1], got {self.visibility}")

    @property
    def xyz(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)


@dataclass(frozen=True)
class LandmarkFrame:
    timestamp: float
    points: Mapping[str, Landmark]

    def __post_init__(self) -> None:
        missing = [n for n in REQUIRED_LANDMARKS if n not in self.points]
        if missing:
            raise InputError(f"frame at t={self.timestamp}: missing landmarks {missing}")

    def xyz(self, name: str) -> np.ndarray:
        return self.points[name].xyz

    def low_visibility(self, threshold: float = VISIBILITY_THRESHOLD) -> list[str]:
        return [n for n in REQUIRED_LANDMARKS if self.points[n].visibility < threshold]


@dataclass(frozen=True)
class PoseSequence:
    frames: tuple[LandmarkFrame, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "frames", tuple(self.frames))
        ts = [f.timestamp for f in self.frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise OrderingError("landmark frame timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.frames)


class TorsoBasis(NamedTuple):
    right: np.ndarray
    up: np.ndarray
    forward: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        """Rows are the basis vectors; ``matrix @ v`` expresses ``v`` in the torso frame."""
        return np.vstack([self.right, self.up, self.forward])


def _unit(v: np.ndarray, what: str) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if not n > 0 or not math.isfinite(n):
        raise PoseGeometryError(f"degenerate geometry: {what} has zero length")
    return v / n


def torso_frame(frame: LandmarkFrame, threshold: float = VISIBILITY_THRESHOLD) -> TorsoBasis:
    """Right-handed orthonormal torso basis of one frame."""
    torso = ("left_shoulder", "right_shoulder", "left_hip", "right_hip")
    hidden = [n for n in torso if frame.points[n].visibility < threshold]
    if hidden:
        raise PoseGeometryError(f"torso landmarks below visibility threshold: {hidden}")
    ls, rs = frame.xyz("left_shoulder"), frame.xyz("right_shoulder")
    lh, rh = frame.xyz("left_hip"), frame.xyz("right_hip")
    scale = max(np.linalg.norm(ls - rs), np.linalg.norm((ls + rs) / 2 - (lh + rh) / 2))
    if not scale > 0:
        raise PoseGeometryError("degenerate geometry: shoulders and hips coincide")
    if np.linalg.norm(ls - rs) <= _EPS * scale:
        raise PoseGeometryError("degenerate geometry: shoulders coincide")
    right = _unit(ls - rs, "shoulder line")
    up0 = _unit((ls + rs) / 2 - (lh + rh) / 2, "spine")
    fwd = np.cross(right, up0)
    if np.linalg.norm(fwd) <= _EPS:
        raise PoseGeometryError("degenerate geometry: spine parallel to shoulder line")
    fwd = fwd / np.linalg.norm(fwd)
    up = np.cross(fwd, right)
    return TorsoBasis(right, up, fwd)


def _arm_angles(u: np.ndarray, f: np.ndarray, side: str) -> tuple[float, float, float, float]:
    """(ShoulderPitch, ShoulderRoll, ElbowYaw, ElbowRoll) for one arm.

    ``u`` and ``f`` are the upper-arm and forearm vectors in torso
    coordinates (right, up, forward).
    """
    sign = 1.0 if side == "L" else -1.0
    uhat = _unit(u, f"{side} upper arm")
    fn = float(np.linalg.norm(f))
    if not fn > 0:
        raise PoseGeometryError(f"degenerate geometry: {side} forearm has zero length")
    fhat = f / fn

    pitch = math.atan2(-uhat[1], uhat[2])
    roll = math.atan2(uhat[0], math.hypot(uhat[1], uhat[2]))

    bend = math.atan2(np.linalg.norm(np.cross(uhat, fhat)), float(np.dot(uhat, fhat)))
    elbow_roll = -sign * bend

    f_perp = fhat - np.dot(fhat, uhat) * uhat
    yaw = 0.0
    if np.linalg.norm(f_perp) > 1e-12:
        ref = elbow_yaw_reference(uhat)
        yaw = math.atan2(float(np.dot(np.cross(ref, f_perp), uhat)), float(np.dot(ref, f_perp)))
    return pitch, roll, sign * yaw, elbow_roll


def elbow_yaw_reference(uhat: np.ndarray) -> np.ndarray:
    """Zero direction for ElbowYaw, perpendicular to the upper arm.

    Torso-up projected off the arm axis; when the arm is (anti)parallel to
    up, torso-forward projected instead.
    """
    for axis in (np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0])):
        ref = axis - np.dot(axis, uhat) * uhat
        n = np.linalg.norm(ref)
        if n > 1e-6:
            return ref / n
    raise PoseGeometryError("no elbow yaw reference")  # unreachable for unit uhat


def compute_joint_angles(
    frame: LandmarkFrame,
    joint_names: Sequence[str] | None = None,
    threshold: float = VISIBILITY_THRESHOLD,
) -> np.ndarray:
    """Twelve joint angles, radians, in ``joint_names`` order.

    ``joint_names`` defaults to the standard Pepper upper-body order; any
    permutation of those 12 names is accepted.
    """
    hidden = frame.low_visibility(threshold)
    if hidden:
        raise PoseGeometryError(f"landmarks below visibility threshold: {hidden}")
    basis = torso_frame(frame, threshold)
    m = basis.matrix
    p = {n: m @ frame.xyz(n) for n in REQUIRED_LANDMARKS}

    values: dict[str, float] = {}
    for side, prefix in (("L", "left"), ("R", "right")):
        u = p[f"{prefix}_elbow"] - p[f"{prefix}_shoulder"]
        f = p[f"{prefix}_wrist"] - p[f"{prefix}_elbow"]
        pitch, roll, eyaw, eroll = _arm_angles(u, f, side)
        values[f"{side}ShoulderPitch"] = pitch
        values[f"{side}ShoulderRoll"] = roll
        values[f"{side}ElbowYaw"] = eyaw
        values[f"{side}ElbowRoll"] = eroll
        values[f"{side}WristYaw"] = 0.0

    neck = (p["left_shoulder"] + p["right_shoulder"]) / 2
    nose = p["nose"] - neck
    nn = float(np.linalg.norm(nose))
    if not nn > 0:
        raise PoseGeometryError("degenerate geometry: nose at shoulder midpoint")
    nose = nose / nn
    values["HeadYaw"] = math.atan2(nose[0], nose[2]) if math.hypot(nose[0], nose[2]) > 1e-9 else 0.0
    values["HeadPitch"] = math.atan2(nose[2], nose[1])

    names = DEFAULT_JOINT_NAMES if joint_names is None else joint_names
    try:
        return np.array([values[n] for n in names], dtype=float)
    except KeyError as exc:
        raise InputError(f"pose retargeting cannot produce joint {exc.args[0]!r}") from None


def pose_angles(
    seq: PoseSequence, joint_names: Sequence[str] | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame angles with hold-last-value for unusable frames.

    Returns ``(times, angles)``. A first frame that cannot be used is a
    hard error; so is a sequence with no usable frame at all.
    """
    if len(seq) == 0:
        raise EmptyInputError("empty pose sequence")
    rows: list[np.ndarray] = []
    first_error: PoseGeometryError | None = None
    for i, fr in enumerate(seq.frames):
        try:
            rows.append(compute_joint_angles(fr, joint_names))
        except PoseGeometryError as exc:
            if i == 0:
                first_error = exc
                rows.append(None)  # type: ignore[arg-type]
                continue
            log.warning("frame %d (t=%.3f): %s; holding previous angles", i, fr.timestamp, exc)
            rows.append(rows[-1])
    if first_error is not None:
        if all(r is None for r in rows):
            raise EmptyInputError(f"no usable landmark frame in sequence ({first_error})")
        raise PoseGeometryError(f"first landmark frame unusable: {first_error}")
    times = np.array([f.timestamp for f in seq.frames], dtype=float)
    return times, np.vstack(rows)


def retarget_pose(
    seq: PoseSequence,
    profile: RobotProfile,
    speed_scale: float = DEFAULT_SPEED_SCALE,
    factor: int = 1,
) -> JointTrajectory:
    """Landmark sequence to a conditioned robot trajectory.

    Output timestamps are dilated about the first one,
    ``t' = t0 + speed_scale * (t - t0)``, which divides every commanded
    velocity by ``speed_scale``. ``factor`` optionally also keeps only every
    ``factor``-th frame.

    Raises:
        EmptyInputError: if no frame is usable.
        SafetyError: if velocities exceed the profile after conditioning.
    """
    if not speed_scale > 0:
        raise InputError(f"speed_scale must be > 0, got {speed_scale}")
    times, angles = pose_angles(seq, profile.joint_names)
    t0 = times[0]
    scaled = t0 + speed_scale * (times - t0)
    traj = JointTrajectory(profile.name, scaled, angles)
    out = clamp_trajectory(downsample(traj, factor), profile)
    violations = check_velocity(out, profile)
    if violations:
        raise SafetyError(
            f"{len(violations)} velocity violation(s) after retargeting (speed_scale={speed_scale})",
            violations,
        )
    return out


# -- file format -----------------------------------------------------------------


def _to_landmark(raw: dict) -> Landmark:
    return Landmark(float(raw["x"]), float(raw["y"]), float(raw["z"]), float(raw.get("v", 1.0)))


def frame_from_dict(row: dict, y_down: bool = False) -> LandmarkFrame:
    try:
        points = {name: _to_landmark(p) for name, p in row["points"].items()}
        t = float(row["t"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed landmark frame: {exc!r}") from exc
    if y_down:
        # 180 deg about x keeps the frame right-handed
        points = {n: Landmark(p.x, -p.y, -p.z, p.visibility) for n, p in points.items()}
    return LandmarkFrame(t, points)


def frame_to_dict(frame: LandmarkFrame) -> dict:
    return {
        "t": frame.timestamp,
        "points": {
            n: {"x": p.x, "y": p.y, "z": p.z, "v": p.visibility} for n, p in frame.points.items()
        },
    }


def load_pose_sequence(path: str | Path, y_down: bool = False) -> PoseSequence:
    """Read a JSON-lines landmark file ``{t, points: {name: {x, y, z, v}}}``."""
    frames = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            frames.append(frame_from_dict(row, y_down=y_down))
    return PoseSequence(tuple(frames))
