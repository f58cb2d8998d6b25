"""Tests for BVH parsing, serialization and retargeting."""

import math

import numpy as np
import pytest

from body_model import PoseParams
from errors import BvhSyntaxError, ChannelCountError, FrameRangeError, UnsupportedChannelError
from mocap import RetargetEntry, RetargetMap, parse_bvh, retarget, sample_pose, serialize_bvh

BVH = """HIERARCHY
ROOT hips
{
  OFFSET 0 0 0
  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation
  JOINT knee
  {
    OFFSET 0 -0.5 0
    CHANNELS 3 Zrotation Xrotation Yrotation
    End Site
    {
      OFFSET 0 -0.5 0
    }
  }
}
MOTION
Frames: 2
Frame Time: 0.0333333
0 1 0 0 0 0 10 0 0
0.5 1 0 90 0 0 20 0 0
"""


class TestParseBvh:
    """Test BVH parsing."""

    def test_structure(self):
        """Joints, channels and motion are read in file order."""
        clip = parse_bvh(BVH)
        assert clip.joint_names == ("hips", "knee")
        assert clip.parents == (-1, 0)
        assert clip.num_channels == 9
        assert clip.num_frames == 2
        assert clip.frame_time == pytest.approx(0.0333333)
        assert clip.euler_order(1) == "ZXY"
        assert clip.end_sites == ((1, (0.0, -0.5, 0.0)),)
        assert np.allclose(clip.offsets[1], [0.0, -0.5, 0.0])

    def test_zero_frames(self):
        """A MOTION block with no frames is a valid, empty clip."""
        text = BVH.split("MOTION")[0] + "MOTION\nFrames: 0\nFrame Time: 0.04\n"
        clip = parse_bvh(text)
        assert clip.num_frames == 0
        assert clip.duration == 0.0

    def test_serialize_round_trip(self):
        """Serialized text parses back to the same clip."""
        clip = parse_bvh(BVH)
        again = parse_bvh(serialize_bvh(clip))
        assert again.joint_names == clip.joint_names
        assert again.channels == clip.channels
        assert again.end_sites == clip.end_sites
        assert np.allclose(again.frames, clip.frames)

    def test_syntax_error_has_line(self):
        """A missing brace is reported with its line number."""
        text = "HIERARCHY\nROOT hips\n  OFFSET 0 0 0\n}\nMOTION\nFrames: 0\nFrame Time: 0.1\n"
        with pytest.raises(BvhSyntaxError) as info:
            parse_bvh(text)
        assert info.value.line == 3

    def test_missing_motion(self):
        """Text without a MOTION section is rejected."""
        with pytest.raises(BvhSyntaxError):
            parse_bvh(BVH.split("MOTION")[0])

    def test_channel_count(self):
        """A short motion row raises ChannelCountError naming the frame."""
        text = BVH.replace("0.5 1 0 90 0 0 20 0 0", "0.5 1 0 90 0 0 20 0")
        with pytest.raises(ChannelCountError) as info:
            parse_bvh(text)
        assert info.value.frame == 1

    def test_frame_count_disagrees(self):
        """Fewer rows than the header declares is a syntax error."""
        with pytest.raises(BvhSyntaxError):
            parse_bvh(BVH.replace("Frames: 2", "Frames: 3"))

    def test_unsupported_channel(self):
        """Unknown channel names are rejected."""
        with pytest.raises(UnsupportedChannelError):
            parse_bvh(BVH.replace("CHANNELS 3 Zrotation Xrotation Yrotation", "CHANNELS 3 Zrotation Xrotation Wrotation"))

    def test_unsupported_order(self):
        """Rotation orders outside XYZ/ZXY/ZYX are rejected."""
        with pytest.raises(UnsupportedChannelError):
            parse_bvh(BVH.replace("CHANNELS 3 Zrotation Xrotation Yrotation", "CHANNELS 3 Yrotation Xrotation Zrotation"))


class TestRetarget:
    """Test mapping clip frames onto model poses."""

    def test_identity_map(self):
        """Root rotation and translation carry over; child angles too."""
        clip = parse_bvh(BVH)
        pose = retarget(clip, 1, RetargetMap.identity(list(clip.joint_names)), 2)
        assert np.allclose(pose.joint_rotations[0], [0.0, 0.0, math.pi / 2])
        assert np.allclose(pose.joint_rotations[1], [0.0, 0.0, math.radians(20.0)])
        assert np.allclose(pose.root_translation, [0.5, 1.0, 0.0])

    def test_unmapped_joints_ignored(self):
        """Only mapped clip joints influence the pose."""
        clip = parse_bvh(BVH)
        rmap = RetargetMap(entries=[RetargetEntry(source="hips", target=0)], translation_source="hips")
        changed = parse_bvh(BVH.replace("0.5 1 0 90 0 0 20 0 0", "0.5 1 0 90 0 0 -45 30 5"))
        a, b = retarget(clip, 1, rmap, 3), retarget(changed, 1, rmap, 3)
        assert np.allclose(a.joint_rotations, b.joint_rotations)
        assert np.allclose(a.joint_rotations[1:], 0.0)

    def test_axis_remap(self):
        """A signed axis permutation conjugates the rotation."""
        clip = parse_bvh(BVH)
        rmap = RetargetMap(entries=[RetargetEntry(source="hips", target=0, axes=(2, 1, 0), signs=(1.0, 1.0, -1.0))])
        pose = retarget(clip, 1, rmap, 1)
        assert np.allclose(pose.joint_rotations[0], [math.pi / 2, 0.0, 0.0])

    def test_frame_out_of_range(self):
        """Frame indices past the clip raise FrameRangeError."""
        clip = parse_bvh(BVH)
        with pytest.raises(FrameRangeError):
            retarget(clip, 2, RetargetMap.identity(list(clip.joint_names)), 2)

    def test_by_name(self):
        """Name matching maps shared joints to the model's indices."""
        rmap = RetargetMap.by_name(["hips", "tail", "knee"], ["pelvis", "knee", "hips"])
        assert {(e.source, e.target) for e in rmap.entries} == {("hips", 2), ("knee", 1)}

    def test_duplicate_targets_rejected(self):
        """Two sources cannot drive the same model joint."""
        with pytest.raises(ValueError):
            RetargetMap(entries=[RetargetEntry(source="a", target=0), RetargetEntry(source="b", target=0)])


class TestSamplePose:
    """Test pose interpolation."""

    def poses(self):
        first = PoseParams(np.zeros((1, 3)), np.zeros(3))
        second = PoseParams(np.array([[0.0, 0.0, math.pi / 2]]), np.array([1.0, 0.0, 0.0]))
        return [first, second]

    def test_midpoint_slerp(self):
        """Halfway between frames rotates halfway and translates halfway."""
        pose = sample_pose(self.poses(), 0.05, 0.1)
        assert np.allclose(pose.joint_rotations[0], [0.0, 0.0, math.pi / 4])
        assert np.allclose(pose.root_translation, [0.5, 0.0, 0.0])

    def test_clamped_at_ends(self):
        """Times outside the clip clamp to the first or last frame."""
        poses = self.poses()
        assert sample_pose(poses, -1.0, 0.1) is poses[0]
        assert sample_pose(poses, 5.0, 0.1) is poses[1]

    def test_exact_frame(self):
        """Sampling on a frame returns that frame."""
        poses = self.poses()
        assert sample_pose(poses, 0.1, 0.1) is poses[1]
