from __future__ import annotations

import json
import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import brute_force_violations, expected_downsample_count

from gesturebot.errors import (
    ConfigError,
    DimensionError,
    OrderingError,
    SafetyError,
)
from gesturebot.motion import (
    DEFAULT_JOINT_NAMES,
    N_JOINTS,
    JointFrame,
    JointSpec,
    JointTrajectory,
    RobotProfile,
    check_velocity,
    clamp_trajectory,
    condition,
    downsample,
    export_commands,
    import_commands,
    load_profile,
    peak_velocity,
    read_trajectory_csv,
    synthetic_profile,
    to_command_document,
    trajectory_to_csv,
)


def traj_from(angles, times=None, name="synthetic"):
    angles = np.asarray(angles, dtype=float)
    if times is None:
        times = np.arange(len(angles)) / 60.0
    return JointTrajectory(name, times, angles)


def constant(value, n=5):
    return traj_from(np.full((n, N_JOINTS), value, dtype=float))


class TestProfile:
    def test_default_has_twelve_joints_in_order(self, pepper):
        assert pepper.joint_names == DEFAULT_JOINT_NAMES
        assert len(pepper.joints) == 12

    def test_default_limits_are_ordered(self, pepper):
        assert np.all(pepper.lower < pepper.upper)
        assert np.all(pepper.max_velocities > 0)

    def test_elbow_roll_sides_are_mirrored(self, pepper):
        lo_l, hi_l = pepper.joints[pepper.index("LElbowRoll")].min_angle, pepper.joints[pepper.index("LElbowRoll")].max_angle
        lo_r, hi_r = pepper.joints[pepper.index("RElbowRoll")].min_angle, pepper.joints[pepper.index("RElbowRoll")].max_angle
        assert (lo_l, hi_l) == (-hi_r, -lo_r)
        assert hi_l < 0 < lo_r

    def test_eleven_joints_rejected(self):
        specs = tuple(JointSpec(n, -1, 1, 1) for n in DEFAULT_JOINT_NAMES[:11])
        with pytest.raises(ConfigError, match="12"):
            RobotProfile("bad", specs)

    def test_duplicate_joint_rejected(self):
        names = list(DEFAULT_JOINT_NAMES)
        names[-1] = names[0]
        with pytest.raises(ConfigError):
            RobotProfile("bad", tuple(JointSpec(n, -1, 1, 1) for n in names))

    @pytest.mark.parametrize("lo,hi,v", [(1.0, -1.0, 1.0), (0.0, 1.0, 0.0), (0.0, 1.0, -2.0)])
    def test_bad_joint_spec(self, lo, hi, v):
        with pytest.raises(ConfigError):
            JointSpec("J", lo, hi, v)

    def test_load_from_yaml(self, tmp_path):
        lines = ["name: toy", "joints:"]
        for n in DEFAULT_JOINT_NAMES:
            lines.append(f"  - {{name: {n}, min: -1.5, max: 1.5, vmax: 3.0}}")
        p = tmp_path / "toy.yaml"
        p.write_text("\n".join(lines) + "\n")
        prof = load_profile(p)
        assert prof.name == "toy"
        assert np.all(prof.upper == 1.5)

    def test_unknown_joint_name(self, pepper):
        with pytest.raises(ConfigError):
            pepper.index("LKnee")


class TestTrajectory:
    def test_arrays_are_read_only(self):
        t = constant(0.0)
        with pytest.raises(ValueError):
            t.angles[0, 0] = 1.0

    def test_wrong_width(self):
        with pytest.raises(DimensionError):
            JointTrajectory("x", [0.0], np.zeros((1, 11)))

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            JointTrajectory("x", [0.0, 0.1], np.zeros((3, 12)))

    @pytest.mark.parametrize("times", [[0.0, 0.1, 0.1], [0.0, 0.2, 0.1]])
    def test_non_increasing_times(self, times):
        with pytest.raises(OrderingError):
            JointTrajectory("x", times, np.zeros((3, 12)))

    def test_from_frames_roundtrip(self):
        t = traj_from(np.arange(36.0).reshape(3, 12))
        assert JointTrajectory.from_frames(t.profile_name, list(t.frames)) == t

    def test_duration(self):
        assert traj_from(np.zeros((3, 12)), [1.0, 1.5, 3.0]).duration == 2.0


class TestClamp:
    def test_example_values(self, synth):
        row = np.array([3.0, -3.0, 1.0] + [0.0] * 9)
        out = clamp_trajectory(traj_from([row]), synth)
        assert out.angles[0, :3].tolist() == [2.0, -2.0, 1.0]

    def test_logs_when_it_clamps(self, synth, caplog):
        with caplog.at_level(logging.WARNING):
            clamp_trajectory(constant(5.0), synth)
        assert "clamped" in caplog.text

    def test_silent_when_inside(self, synth, caplog):
        with caplog.at_level(logging.WARNING):
            clamp_trajectory(constant(0.5), synth)
        assert caplog.text == ""

    def test_pepper_asymmetric_limits(self, pepper):
        out = clamp_trajectory(constant(0.0, 2), pepper)
        i = pepper.index("LShoulderRoll")
        assert out.angles[0, i] == pepper.joints[i].min_angle

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=12, max_size=12))
    def test_idempotent(self, row):
        prof = synthetic_profile(2.0, 7.0)
        once = clamp_trajectory(traj_from([row]), prof)
        assert clamp_trajectory(once, prof) == once
        assert np.all(np.abs(once.angles) <= 2.0)


class TestDownsample:
    def test_twenty_four_frames(self):
        t = traj_from(np.zeros((24, 12)))
        out = downsample(t, 12)
        assert len(out) == 3
        np.testing.assert_allclose(out.times, [0.0, 12 / 60, 23 / 60], rtol=0, atol=1e-15)

    def test_six_hundred_frames(self):
        out = downsample(traj_from(np.zeros((600, 12))), 12)
        assert len(out) == 51
        assert out.times[-1] == 599 / 60

    def test_factor_one_is_identity(self):
        t = traj_from(np.random.default_rng(0).normal(size=(7, 12)))
        assert downsample(t, 1) == t

    def test_single_frame(self):
        assert len(downsample(constant(0.0, 1), 12)) == 1

    @pytest.mark.parametrize("factor", [0, -3, 1.5, True])
    def test_bad_factor(self, factor):
        with pytest.raises(ValueError):
            downsample(constant(0.0), factor)

    @settings(max_examples=80, deadline=None)
    @given(st.integers(1, 400), st.integers(1, 30))
    def test_count_formula_and_duration(self, n, f):
        t = traj_from(np.zeros((n, 12)))
        out = downsample(t, f)
        assert len(out) == expected_downsample_count(n, f)
        assert out.duration == t.duration
        assert out.times[0] == t.times[0]


class TestCheckVelocity:
    def test_single_violation(self, synth):
        angles = np.zeros((3, 12))
        angles[2, 4] = 1.0  # 1 rad in 1/60 s = 60 rad/s
        v = check_velocity(traj_from(angles), synth)
        assert len(v) == 1
        assert v[0].joint == DEFAULT_JOINT_NAMES[4]
        assert v[0].frame_index == 1
        assert v[0].velocity == pytest.approx(60.0)
        assert v[0].limit == 7.0

    def test_exactly_at_limit_is_allowed(self, synth):
        angles = np.zeros((2, 12))
        angles[1, 0] = 7.0
        assert check_velocity(traj_from(angles, [0.0, 1.0]), synth) == []

    def test_short_trajectories(self, synth):
        assert check_velocity(constant(0.0, 1), synth) == []

    def test_matches_brute_force(self, synth, rng):
        for _ in range(20):
            n = int(rng.integers(2, 30))
            angles = rng.normal(scale=0.2, size=(n, 12))
            times = np.cumsum(rng.uniform(0.005, 0.1, size=n))
            got = [(v.joint, v.frame_index, v.velocity) for v in check_velocity(traj_from(angles, times), synth)]
            want = brute_force_violations(times, angles.tolist(), [7.0] * 12, DEFAULT_JOINT_NAMES)
            assert sorted((j, i) for j, i, _ in got) == sorted((j, i) for j, i, _ in want)

    def test_infinite_limit_never_violates(self):
        prof = synthetic_profile(math.inf, math.inf)
        angles = np.zeros((2, 12))
        angles[1] = 1e6
        assert check_velocity(traj_from(angles), prof) == []


class TestCondition:
    def test_raises_instead_of_retiming(self, synth):
        angles = np.zeros((3, 12))
        angles[1, 0] = 1.0
        with pytest.raises(SafetyError) as ei:
            condition(traj_from(angles), synth, factor=1)
        assert ei.value.exit_code == 4
        assert ei.value.violations

    def test_downsampling_can_make_it_safe(self, synth):
        # 0.1 rad per 1/60 s is 6 rad/s; a 0.3 jitter at every frame is 18 rad/s
        n = 25
        angles = np.zeros((n, 12))
        angles[1::2, 0] = 0.3
        with pytest.raises(SafetyError):
            condition(traj_from(angles), synth, factor=1)
        out = condition(traj_from(angles), synth, factor=12)
        assert check_velocity(out, synth) == []

    def test_peak_velocity_never_increases(self, synth, rng):
        for _ in range(30):
            angles = np.cumsum(rng.normal(scale=0.05, size=(100, 12)), axis=0)
            raw = traj_from(angles)
            out = clamp_trajectory(downsample(raw, 12), synth)
            assert peak_velocity(out) <= peak_velocity(raw) + 1e-12


class TestCommands:
    def test_export_refuses_violations(self, synth):
        angles = np.zeros((2, 12))
        angles[1, 3] = 10.0
        with pytest.raises(SafetyError):
            export_commands(traj_from(angles), synth)

    def test_document_shape(self, synth):
        t = traj_from(np.zeros((4, 12)), [2.0, 2.5, 3.0, 3.5])
        doc = export_commands(t, synth)
        assert doc["profile"] == "synthetic"
        assert [j["name"] for j in doc["joints"]] == list(DEFAULT_JOINT_NAMES)
        assert doc["joints"][0]["times"] == [0.0, 0.5, 1.0, 1.5]
        json.dumps(doc)

    def test_roundtrip_exact(self, synth, rng):
        angles = np.cumsum(rng.normal(scale=0.01, size=(9, 12)), axis=0)
        t = traj_from(angles, 0.25 + np.arange(9) * 0.2)
        back = import_commands(json.loads(json.dumps(export_commands(t, synth))), synth)
        np.testing.assert_array_equal(back.angles, t.angles)
        np.testing.assert_allclose(back.times, t.times, rtol=0, atol=1e-12)

    def test_import_reorders_to_profile(self, synth):
        doc = to_command_document(traj_from(np.arange(24.0).reshape(2, 12) / 100), synth)
        doc["joints"].reverse()
        back = import_commands(doc, synth)
        assert back.angles[1, 0] == 0.12

    def test_import_rejects_missing_joint(self, synth):
        doc = to_command_document(constant(0.0, 2), synth)
        doc["joints"].pop()
        with pytest.raises(DimensionError):
            import_commands(doc, synth)


class TestCsv:
    def test_roundtrip(self, tmp_path, synth, rng):
        t = traj_from(rng.normal(scale=0.3, size=(5, 12)))
        p = tmp_path / "t.csv"
        p.write_text(trajectory_to_csv(t, synth.joint_names))
        assert read_trajectory_csv(p, synth) == t

    def test_header_mismatch(self, tmp_path, synth):
        p = tmp_path / "t.csv"
        p.write_text("t,a,b\n0,1,2\n")
        with pytest.raises(DimensionError):
            read_trajectory_csv(p, synth)


def test_joint_frame_holds_row():
    f = JointFrame(0.5, np.zeros(12))
    assert f.timestamp == 0.5
