"""Robot kinematic profile, joint trajectories and safety conditioning.

A trajectory is an ``n x 12`` matrix of joint angles (radians) with one
timestamp per row. Column ``i`` always corresponds to joint ``i`` of the
robot profile. Conditioning is ``downsample -> clamp -> check_velocity``;
velocity violations that survive conditioning are errors, never silently
retimed.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Iterator, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DimensionError,
    EmptyInputError,
    InputError,
    OrderingError,
    SafetyError,
)
from .io import load_yaml

log = logging.getLogger(__name__)

N_JOINTS = 12

DEFAULT_JOINT_NAMES = (
    "HeadYaw",
    "HeadPitch",
    "LShoulderPitch",
    "LShoulderRoll",
    "LElbowYaw",
    "LElbowRoll",
    "LWristYaw",
    "RShoulderPitch",
    "RShoulderRoll",
    "RElbowYaw",
    "RElbowRoll",
    "RWristYaw",
)


@dataclass(frozen=True)
class JointSpec:
    name: str
    min_angle: float
    max_angle: float
    max_velocity: float

    def __post_init__(self) -> None:
        if not self.min_angle < self.max_angle:
            raise ConfigError(
                f"joint {self.name}: min_angle {self.min_angle} must be < max_angle {self.max_angle}"
            )
        if not self.max_velocity > 0:
            raise ConfigError(f"joint {self.name}: max_velocity must be > 0")


@dataclass(frozen=True)
class RobotProfile:
    name: str
    joints: tuple[JointSpec, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "joints", tuple(self.joints))
        if len(self.joints) != N_JOINTS:
            raise ConfigError(f"profile {self.name}: expected {N_JOINTS} joints, got {len(self.joints)}")
        names = [j.name for j in self.joints]
        if len(set(names)) != len(names):
            raise ConfigError(f"profile {self.name}: duplicate joint names")

    @property
    def joint_names(self) -> tuple[str, ...]:
        return tuple(j.name for j in self.joints)

    @property
    def lower(self) -> np.ndarray:
        return np.array([j.min_angle for j in self.joints])

    @property
    def upper(self) -> np.ndarray:
        return np.array([j.max_angle for j in self.joints])

    @property
    def max_velocities(self) -> np.ndarray:
        return np.array([j.max_velocity for j in self.joints])

    def index(self, joint_name: str) -> int:
        try:
            return self.joint_names.index(joint_name)
        except ValueError:
            raise ConfigError(f"profile {self.name} has no joint {joint_name!r}") from None

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RobotProfile:
        try:
            joints = [
                JointSpec(
                    name=str(j["name"]),
                    min_angle=float(j["min"]),
                    max_angle=float(j["max"]),
                    max_velocity=float(j["vmax"]),
                )
                for j in data["joints"]
            ]
            return cls(name=str(data["name"]), joints=tuple(joints))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"malformed robot profile: {exc!r}") from exc


def load_profile(path: str | Path) -> RobotProfile:
    data = load_yaml(path)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: robot profile must be a mapping")
    return RobotProfile.from_dict(data)


def default_profile() -> RobotProfile:
    """The bundled Pepper upper-body profile."""
    ref = resources.files("gesturebot") / "data" / "pepper_profile.yaml"
    with resources.as_file(ref) as p:
        return load_profile(p)


@dataclass(frozen=True)
class JointFrame:
    timestamp: float
    angles: np.ndarray


@dataclass(frozen=True, eq=False)
class JointTrajectory:
    """Timestamped joint-angle matrix.

    Attributes:
        profile_name: Name of the robot profile the columns refer to.
        times: Shape ``(n,)``, seconds, strictly increasing.
        angles: Shape ``(n, 12)``, radians.
    """

    profile_name: str
    times: np.ndarray
    angles: np.ndarray

    def __post_init__(self) -> None:
        times = np.array(self.times, dtype=float).reshape(-1)
        angles = np.array(self.angles, dtype=float)
        if angles.size == 0 and times.size == 0:
            angles = angles.reshape(0, N_JOINTS)
        if angles.ndim != 2 or angles.shape[1] != N_JOINTS:
            raise DimensionError(f"angles must have shape (n, {N_JOINTS}), got {angles.shape}")
        if angles.shape[0] != times.shape[0]:
            raise DimensionError(f"{times.shape[0]} timestamps for {angles.shape[0]} frames")
        if times.size and times[0] < 0:
            raise InputError("timestamps must be >= 0")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            bad = int(np.argmin(np.diff(times) > 0))
            raise OrderingError(f"timestamps not strictly increasing at frame {bad + 1}")
        times.setflags(write=False)
        angles.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "angles", angles)

    def __len__(self) -> int:
        return self.times.shape[0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, JointTrajectory):
            return NotImplemented
        return (
            self.profile_name == other.profile_name
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.angles, other.angles)
        )

    @property
    def frames(self) -> Iterator[JointFrame]:
        for t, row in zip(self.times, self.angles):
            yield JointFrame(float(t), row)

    @property
    def duration(self) -> float:
        if len(self) == 0:
            return 0.0
        return float(self.times[-1] - self.times[0])

    @classmethod
    def from_frames(cls, profile_name: str, frames: Sequence[JointFrame]) -> JointTrajectory:
        return cls(
            profile_name,
            np.array([f.timestamp for f in frames], dtype=float),
            np.array([f.angles for f in frames], dtype=float).reshape(len(frames), N_JOINTS),
        )


@dataclass(frozen=True)
class Violation:
    joint: str
    frame_index: int
    velocity: float
    limit: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "joint": self.joint,
            "frame_index": self.frame_index,
            "velocity": self.velocity,
            "limit": self.limit,
        }


def _check_columns(traj: JointTrajectory, profile: RobotProfile) -> None:
    if traj.angles.shape[1] != len(profile.joints):
        raise DimensionError(
            f"trajectory has {traj.angles.shape[1]} columns, profile {profile.name} has {len(profile.joints)} joints"
        )


def clamp_trajectory(traj: JointTrajectory, profile: RobotProfile) -> JointTrajectory:
    """Clamp every angle into its joint's ``[min_angle, max_angle]``."""
    _check_columns(traj, profile)
    clamped = np.clip(traj.angles, profile.lower, profile.upper)
    n_changed = int(np.count_nonzero(clamped != traj.angles))
    if n_changed:
        log.warning("clamped %d angle value(s) to profile %s limits", n_changed, profile.name)
    return JointTrajectory(traj.profile_name, traj.times, clamped)


def downsample_indices(n: int, factor: int) -> np.ndarray:
    idx = np.arange(0, n, factor)
    if idx[-1] != n - 1:
        idx = np.append(idx, n - 1)
    return idx


def downsample(traj: JointTrajectory, factor: int) -> JointTrajectory:
    """Keep every ``factor``-th frame plus the last one, original timestamps."""
    if isinstance(factor, bool) or int(factor) != factor or factor < 1:
        raise InputError(f"downsample factor must be a positive integer, got {factor!r}")
    if len(traj) == 0:
        raise EmptyInputError("cannot downsample an empty trajectory")
    idx = downsample_indices(len(traj), int(factor))
    return JointTrajectory(traj.profile_name, traj.times[idx], traj.angles[idx])


def joint_velocities(traj: JointTrajectory) -> np.ndarray:
    """Absolute inter-frame velocities, shape ``(n - 1, 12)``."""
    dt = np.diff(traj.times)
    if np.any(dt <= 0):
        raise OrderingError("timestamps must be strictly increasing")
    return np.abs(np.diff(traj.angles, axis=0)) / dt[:, None]


def check_velocity(traj: JointTrajectory, profile: RobotProfile) -> list[Violation]:
    """Return every (frame pair, joint) whose commanded speed exceeds the limit.

    ``frame_index`` is the index of the first frame of the offending pair.
    """
    _check_columns(traj, profile)
    if len(traj) < 2:
        return []
    vel = joint_velocities(traj)
    vmax = profile.max_velocities
    rows, cols = np.nonzero(vel > vmax)
    names = profile.joint_names
    return [
        Violation(names[j], int(i), float(vel[i, j]), float(vmax[j]))
        for i, j in zip(rows, cols)
    ]


def condition(traj: JointTrajectory, profile: RobotProfile, factor: int = 1) -> JointTrajectory:
    """Downsample, clamp, then verify velocities; raise on any violation."""
    out = clamp_trajectory(downsample(traj, factor), profile)
    violations = check_velocity(out, profile)
    if violations:
        raise SafetyError(
            f"{len(violations)} velocity violation(s) remain after conditioning "
            f"(factor={factor}); worst {max(violations, key=lambda v: v.velocity / v.limit).to_dict()}",
            violations,
        )
    return out


# -- command document -------------------------------------------------------


def to_command_document(traj: JointTrajectory, profile: RobotProfile) -> dict[str, Any]:
    _check_columns(traj, profile)
    start = float(traj.times[0]) if len(traj) else 0.0
    rel = [float(t - start) for t in traj.times]
    return {
        "profile": profile.name,
        "start": start,
        "joints": [
            {"name": name, "angles": [float(a) for a in traj.angles[:, j]], "times": rel}
            for j, name in enumerate(profile.joint_names)
        ],
    }


def export_commands(traj: JointTrajectory, profile: RobotProfile) -> dict[str, Any]:
    """Build the per-joint (angles, times) command document.

    Raises:
        SafetyError: if the trajectory has any velocity violation.
    """
    violations = check_velocity(traj, profile)
    if violations:
        raise SafetyError(
            f"refusing to export: {len(violations)} velocity violation(s)", violations
        )
    return to_command_document(traj, profile)


def import_commands(doc: dict[str, Any], profile: RobotProfile | None = None) -> JointTrajectory:
    """Inverse of :func:`export_commands`.

    If ``profile`` is given, joints are reordered to its column order.
    """
    try:
        joints = {j["name"]: j for j in doc["joints"]}
        order = [j["name"] for j in doc["joints"]] if profile is None else list(profile.joint_names)
        if set(order) != set(joints) or len(order) != N_JOINTS:
            raise DimensionError(f"command document joints {sorted(joints)} do not match profile")
        times = np.array(joints[order[0]]["times"], dtype=float)
        for name in order:
            if joints[name]["times"] != joints[order[0]]["times"]:
                raise InputError(f"joint {name} has a different time base")
            if len(joints[name]["angles"]) != len(times):
                raise DimensionError(f"joint {name}: angles/times length mismatch")
        angles = np.array([joints[n]["angles"] for n in order], dtype=float).T.reshape(len(times), N_JOINTS)
        start = float(doc.get("start", 0.0))
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed command document: {exc!r}") from exc
    if start != 0.0:
        times = times + start
    return JointTrajectory(str(doc.get("profile", "")), times, angles)


# -- CSV trajectory files -----------------------------------------------------


def trajectory_to_csv(traj: JointTrajectory, joint_names: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", *joint_names])
    for t, row in zip(traj.times, traj.angles):
        w.writerow([repr(float(t)), *(repr(float(a)) for a in row)])
    return buf.getvalue()


def read_trajectory_csv(path: str | Path, profile: RobotProfile) -> JointTrajectory:
    """Read ``t,<joint>...`` CSV; columns are matched to the profile by name."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise EmptyInputError(f"{path}: empty trajectory file")
    header, body = rows[0], [r for r in rows[1:] if r]
    if header[0] != "t" or sorted(header[1:]) != sorted(profile.joint_names):
        raise DimensionError(f"{path}: header must be t followed by the {N_JOINTS} profile joints")
    cols = [header.index(n) for n in profile.joint_names]
    try:
        data = np.array([[float(x) for x in r] for r in body], dtype=float).reshape(len(body), len(header))
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc
    return JointTrajectory(profile.name, data[:, 0], data[:, cols])


def peak_velocity(traj: JointTrajectory) -> float:
    if len(traj) < 2:
        return 0.0
    return float(joint_velocities(traj).max())


def is_within_limits(traj: JointTrajectory, profile: RobotProfile) -> bool:
    return bool(np.all(traj.angles >= profile.lower) and np.all(traj.angles <= profile.upper))


def synthetic_profile(
    limit: float = 2.0, vmax: float = 7.0, names: Sequence[str] = DEFAULT_JOINT_NAMES, name: str = "synthetic"
) -> RobotProfile:
    """Symmetric round-number profile, handy for tests and demos."""
    lim = math.inf if limit == math.inf else float(limit)
    return RobotProfile(name, tuple(JointSpec(n, -lim, lim, float(vmax)) for n in names))
