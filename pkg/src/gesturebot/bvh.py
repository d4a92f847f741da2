"""BVH parsing, serialization and single-channel retargeting onto the robot.

Each robot joint is driven by at most one rotation channel of the source
skeleton through an affine map::

    angle_rad = scale * radians(channel_degrees) + offset

Unmapped robot joints hold a configurable neutral angle. Positions
(including root translation) are ignored.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterator

import numpy as np

from .errors import (
    ChannelCountError,
    ConfigError,
    FrameCountError,
    MappingError,
    MissingSectionError,
    NonNumericValueError,
    BvhParseError,
)
from .io import load_yaml
from .motion import JointTrajectory, RobotProfile, condition

VALID_CHANNELS = frozenset(
    f"{axis}{kind}" for axis in "XYZ" for kind in ("position", "rotation")
)
ROTATION_CHANNELS = frozenset(c for c in VALID_CHANNELS if c.endswith("rotation"))

DEFAULT_FACTOR = 12


@dataclass(frozen=True)
class BvhJoint:
    name: str
    offset: tuple[float, float, float]
    channels: tuple[str, ...]
    children: tuple[BvhJoint, ...] = ()
    end_site: tuple[float, float, float] | None = None

    def walk(self) -> Iterator[BvhJoint]:
        """Depth-first, declaration order."""
        yield self
        for child in self.children:
            yield from child.walk()


@dataclass(frozen=True, eq=False)
class BvhDocument:
    root: BvhJoint
    frame_count: int
    frame_time: float
    motion: np.ndarray

    def __post_init__(self) -> None:
        motion = np.array(self.motion, dtype=float).reshape(self.frame_count, self.total_channels)
        motion.setflags(write=False)
        object.__setattr__(self, "motion", motion)
        if not self.frame_time > 0:
            raise BvhParseError(f"frame time must be > 0, got {self.frame_time}")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BvhDocument):
            return NotImplemented
        return (
            self.root == other.root
            and self.frame_count == other.frame_count
            and self.frame_time == other.frame_time
            and np.array_equal(self.motion, other.motion)
        )

    @property
    def joints(self) -> list[BvhJoint]:
        return list(self.root.walk())

    @property
    def total_channels(self) -> int:
        return sum(len(j.channels) for j in self.root.walk())

    @property
    def frame_rate(self) -> float:
        return 1.0 / self.frame_time

    def joint(self, name: str) -> BvhJoint:
        for j in self.root.walk():
            if j.name == name:
                return j
        raise MappingError(f"BVH has no joint {name!r}")


# -- parsing ------------------------------------------------------------------


class _Lines:
    """Token cursor over non-blank lines, remembering 1-based line numbers."""

    def __init__(self, text: str) -> None:
        self.items = [
            (i, line.split())
            for i, line in enumerate(text.splitlines(), 1)
            if line.strip()
        ]
        self.pos = 0

    def peek(self) -> tuple[int, list[str]] | None:
        return self.items[self.pos] if self.pos < len(self.items) else None

    def next(self, what: str) -> tuple[int, list[str]]:
        item = self.peek()
        if item is None:
            last = self.items[-1][0] if self.items else None
            raise BvhParseError(f"unexpected end of file, expected {what}", last)
        self.pos += 1
        return item

    def expect(self, keyword: str) -> tuple[int, list[str]]:
        lineno, toks = self.next(keyword)
        if toks[0] != keyword:
            raise BvhParseError(f"expected {keyword!r}, found {' '.join(toks)!r}", lineno)
        return lineno, toks


def _floats(tokens: list[str], lineno: int, n: int, what: str) -> tuple[float, ...]:
    if len(tokens) != n:
        raise BvhParseError(f"{what} needs {n} values, got {len(tokens)}", lineno)
    try:
        return tuple(float(t) for t in tokens)
    except ValueError:
        raise NonNumericValueError(f"non-numeric {what} value in {tokens}", lineno) from None


def _parse_joint(cur: _Lines, lineno: int, toks: list[str]) -> BvhJoint:
    if len(toks) < 2:
        raise BvhParseError(f"{toks[0]} needs a name", lineno)
    name = " ".join(toks[1:])
    cur.expect("{")
    ln, off = cur.expect("OFFSET")
    offset = _floats(off[1:], ln, 3, "OFFSET")
    channels: tuple[str, ...] = ()
    children: list[BvhJoint] = []
    end_site = None
    while True:
        ln, t = cur.next("'}'")
        head = t[0]
        if head == "CHANNELS":
            try:
                n = int(t[1])
            except (IndexError, ValueError):
                raise BvhParseError("CHANNELS needs a count", ln) from None
            names = t[2:]
            if len(names) != n:
                raise ChannelCountError(f"CHANNELS declares {n} channels but lists {len(names)}", ln)
            bad = [c for c in names if c not in VALID_CHANNELS]
            if bad:
                raise BvhParseError(f"unknown channel name(s) {bad}", ln)
            channels = tuple(names)
        elif head == "JOINT":
            children.append(_parse_joint(cur, ln, t))
        elif head == "End":
            cur.expect("{")
            eln, eoff = cur.expect("OFFSET")
            end_site = _floats(eoff[1:], eln, 3, "OFFSET")
            cur.expect("}")
        elif head == "}":
            break
        else:
            raise BvhParseError(f"unexpected token {head!r} in joint {name}", ln)
    return BvhJoint(name, offset, channels, tuple(children), end_site)


_FRAMES_RE = re.compile(r"^Frames:\s*(\S+)\s*$")
_FRAME_TIME_RE = re.compile(r"^Frame\s+Time:\s*(\S+)\s*$")


def parse_bvh(text: str) -> BvhDocument:
    """Parse a complete BVH file.

    Tolerates tabs, spaces and CRLF line endings. Raises a
    :class:`~gesturebot.errors.BvhParseError` subclass with a line number
    on any structural problem.
    """
    cur = _Lines(text)
    first = cur.peek()
    if first is None or first[1][0] != "HIERARCHY":
        raise MissingSectionError("missing HIERARCHY section", first[0] if first else 1)
    cur.next("HIERARCHY")
    ln, toks = cur.next("ROOT")
    if toks[0] != "ROOT":
        raise BvhParseError(f"expected ROOT, found {toks[0]!r}", ln)
    root = _parse_joint(cur, ln, toks)
    n_channels = sum(len(j.channels) for j in root.walk())

    item = cur.peek()
    if item is None or item[1][0] != "MOTION":
        raise MissingSectionError("missing MOTION section", item[0] if item else None)
    cur.next("MOTION")

    raw_lines = text.splitlines()
    ln, _ = cur.next("Frames:")
    m = _FRAMES_RE.match(raw_lines[ln - 1].strip())
    if not m:
        raise MissingSectionError("MOTION section: expected 'Frames: <n>'", ln)
    try:
        frame_count = int(m.group(1))
    except ValueError:
        raise NonNumericValueError(f"MOTION section: bad frame count {m.group(1)!r}", ln) from None
    ln, _ = cur.next("Frame Time:")
    m = _FRAME_TIME_RE.match(raw_lines[ln - 1].strip())
    if not m:
        raise MissingSectionError("MOTION section: expected 'Frame Time: <seconds>'", ln)
    try:
        frame_time = float(m.group(1))
    except ValueError:
        raise NonNumericValueError(f"MOTION section: bad frame time {m.group(1)!r}", ln) from None
    if not frame_time > 0:
        raise BvhParseError(f"MOTION section: frame time must be > 0, got {frame_time}", ln)

    rows: list[list[float]] = []
    while cur.peek() is not None:
        ln, vals = cur.next("motion row")
        if len(vals) != n_channels:
            raise ChannelCountError(
                f"MOTION section: row has {len(vals)} values, hierarchy declares {n_channels} channels", ln
            )
        try:
            rows.append([float(v) for v in vals])
        except ValueError:
            raise NonNumericValueError(f"MOTION section: non-numeric value in row {len(rows)}", ln) from None
    if len(rows) != frame_count:
        last = cur.items[-1][0]
        raise FrameCountError(
            f"MOTION section declares {frame_count} frames but contains {len(rows)} rows", last
        )
    motion = np.array(rows, dtype=float).reshape(frame_count, n_channels)
    return BvhDocument(root, frame_count, frame_time, motion)


def load_bvh(path: str | Path) -> BvhDocument:
    with open(path, encoding="utf-8") as fh:
        return parse_bvh(fh.read())


# -- serialization --------------------------------------------------------------


def _g(x: float) -> str:
    """Shortest positional text that parses back to exactly ``x``."""
    s = np.format_float_positional(float(x), trim="-")
    return "0" if s == "-0" else s


def _write_joint(j: BvhJoint, depth: int, keyword: str, out: list[str]) -> None:
    ind = "\t" * depth
    out.append(f"{ind}{keyword} {j.name}")
    out.append(f"{ind}{{")
    out.append(f"{ind}\tOFFSET {' '.join(_g(v) for v in j.offset)}")
    if j.channels:
        out.append(f"{ind}\tCHANNELS {len(j.channels)} {' '.join(j.channels)}")
    for child in j.children:
        _write_joint(child, depth + 1, "JOINT", out)
    if j.end_site is not None:
        out.append(f"{ind}\tEnd Site")
        out.append(f"{ind}\t{{")
        out.append(f"{ind}\t\tOFFSET {' '.join(_g(v) for v in j.end_site)}")
        out.append(f"{ind}\t}}")
    out.append(f"{ind}}}")


def serialize_bvh(doc: BvhDocument) -> str:
    """Render ``doc`` as BVH text; ``parse_bvh`` of the result equals ``doc``."""
    out = ["HIERARCHY"]
    _write_joint(doc.root, 0, "ROOT", out)
    out.append("MOTION")
    out.append(f"Frames: {doc.frame_count}")
    out.append(f"Frame Time: {_g(doc.frame_time)}")
    for row in doc.motion:
        out.append(" ".join(_g(v) for v in row))
    return "\n".join(out) + "\n"


# -- channel access -------------------------------------------------------------


def channel_index(doc: BvhDocument, joint: str, channel: str) -> int:
    """Column of ``joint.channel`` in the motion matrix."""
    col = 0
    for j in doc.root.walk():
        if j.name == joint:
            if channel not in j.channels:
                raise MappingError(f"joint {joint!r} has no channel {channel!r} (has {list(j.channels)})")
            return col + j.channels.index(channel)
        col += len(j.channels)
    raise MappingError(f"BVH has no joint {joint!r}")


def extract_channel(doc: BvhDocument, joint: str, channel: str) -> np.ndarray:
    """Per-frame values of one rotation channel, in degrees."""
    if channel not in ROTATION_CHANNELS:
        raise MappingError(f"{joint}.{channel}: only rotation channels can be retargeted")
    return doc.motion[:, channel_index(doc, joint, channel)].copy()


# -- mapping ------------------------------------------------------------------------


@dataclass(frozen=True)
class MappingEntry:
    robot_joint: str
    bvh_joint: str
    bvh_channel: str
    scale: float = 1.0
    offset: float = 0.0


@dataclass(frozen=True)
class JointMapping:
    entries: tuple[MappingEntry, ...]
    neutral: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        seen: set[str] = set()
        for e in self.entries:
            if e.robot_joint in seen:
                raise ConfigError(f"robot joint {e.robot_joint!r} mapped more than once")
            seen.add(e.robot_joint)

    def with_scale(self, robot_joint: str, k: float) -> JointMapping:
        entries = tuple(
            MappingEntry(e.robot_joint, e.bvh_joint, e.bvh_channel, e.scale * k, e.offset)
            if e.robot_joint == robot_joint
            else e
            for e in self.entries
        )
        return JointMapping(entries, dict(self.neutral))

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> JointMapping:
        try:
            entries = [
                MappingEntry(
                    robot_joint=str(e["robot"]),
                    bvh_joint=str(e["bvh"]),
                    bvh_channel=str(e["channel"]),
                    scale=float(e.get("scale", 1.0)),
                    offset=float(e.get("offset", 0.0)),
                )
                for e in data.get("entries", [])
            ]
            neutral = {str(k): float(v) for k, v in (data.get("neutral") or {}).items()}
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise ConfigError(f"malformed joint mapping: {exc!r}") from exc
        return cls(tuple(entries), neutral)


def load_mapping(path: str | Path) -> JointMapping:
    data = load_yaml(path)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: joint mapping must be a mapping")
    return JointMapping.from_dict(data)


def default_mapping() -> JointMapping:
    ref = resources.files("gesturebot") / "data" / "default_mapping.yaml"
    with resources.as_file(ref) as p:
        return load_mapping(p)


def identity_mapping(pairs: dict[str, tuple[str, str]]) -> JointMapping:
    """Mapping with scale 1 and offset 0 for each ``robot -> (joint, channel)``."""
    return JointMapping(tuple(MappingEntry(r, j, c) for r, (j, c) in pairs.items()))


# -- retargeting ----------------------------------------------------------------------


def map_angles(doc: BvhDocument, mapping: JointMapping, profile: RobotProfile) -> JointTrajectory:
    """Apply the affine channel map to every frame, without conditioning."""
    angles = np.zeros((doc.frame_count, len(profile.joints)))
    mapped = set()
    for e in mapping.entries:
        try:
            col = profile.index(e.robot_joint)
        except ConfigError as exc:
            raise MappingError(f"mapping entry {e.robot_joint}: {exc}") from None
        try:
            deg = extract_channel(doc, e.bvh_joint, e.bvh_channel)
        except MappingError as exc:
            raise MappingError(f"mapping entry {e.robot_joint}: {exc}") from None
        angles[:, col] = e.scale * np.deg2rad(deg) + e.offset
        mapped.add(e.robot_joint)
    for name, value in mapping.neutral.items():
        if name not in mapped:
            angles[:, profile.index(name)] = value
    times = np.arange(doc.frame_count) * doc.frame_time
    return JointTrajectory(profile.name, times, angles)


def retarget_bvh(
    doc: BvhDocument,
    mapping: JointMapping,
    profile: RobotProfile,
    factor: int = DEFAULT_FACTOR,
) -> JointTrajectory:
    """Map BVH rotations into the robot's joint space and condition them.

    Raises:
        MappingError: if an entry does not resolve in ``doc`` or ``profile``.
        SafetyError: if velocities still exceed limits after downsampling
            by ``factor`` and clamping.
    """
    return condition(map_angles(doc, mapping, profile), profile, factor)


UPPER_BODY_JOINTS = ("Head", "LeftArm", "LeftForeArm", "LeftHand", "RightArm", "RightForeArm", "RightHand")


def synthetic_bvh(
    motion: np.ndarray,
    frame_time: float = 1 / 60,
    joints: tuple[str, ...] = UPPER_BODY_JOINTS,
) -> BvhDocument:
    """Root with 6 channels and one 3-rotation child (with End Site) per name.

    ``motion`` must have ``6 + 3 * len(joints)`` columns.
    """
    rot = ("Zrotation", "Xrotation", "Yrotation")
    children = tuple(BvhJoint(name, (0.0, 10.0, 0.0), rot, (), (0.0, 5.0, 0.0)) for name in joints)
    root = BvhJoint("Hips", (0.0, 0.0, 0.0), ("Xposition", "Yposition", "Zposition") + rot, children)
    motion = np.asarray(motion, dtype=float)
    return BvhDocument(root, motion.shape[0], frame_time, motion)
