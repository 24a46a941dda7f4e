import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from partphase.container import MotionDataset, build_dataset, save_clip
from partphase.errors import BVHParseError, ConfigError, DomainError, StructureError
from partphase.rotations import gram_schmidt_6d, matrix_to_6d, sixd_to_matrix
from partphase.skeleton import (MotionClip, Skeleton, clip_from_arrays, drop_joints, forward_kinematics,
                                make_partition, mirror, normalize_facing, default_skeleton, parse_bvh,
                                prepare_windows, random_crop, resample, to_frame_states, velocities_from_positions,
                                window_clips, window_count, write_bvh)
from partphase.synth import STYLES, SynthSpec, part_truth, style_spec, synth_motion, synthetic_clips

ONE_JOINT = """HIERARCHY
ROOT Hips
{
  OFFSET 0 0 0
  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation
  End Site
  {
    OFFSET 0 1 0
  }
}
MOTION
Frames: 2
Frame Time: 0.0333333
0 0 0 0 0 0
1 0 0 0 0 0
"""


def walk_clip(frames=90, seed=0, style="walk"):
    return synth_motion(style_spec(style, frames, np.random.default_rng(seed)), seed=seed)


class TestBVH:
    def test_single_joint(self):
        anim = parse_bvh(ONE_JOINT)
        assert anim.skeleton.joint_count == 1 and anim.n_frames == 2
        assert anim.fps == pytest.approx(30.0, rel=1e-5)

    def test_truncated_motion(self):
        with pytest.raises(StructureError):
            parse_bvh(ONE_JOINT.rsplit("\n", 2)[0] + "\n")

    def test_malformed_hierarchy_has_line(self):
        bad = ONE_JOINT.replace("OFFSET 0 0 0", "OFFSET 0 0")
        with pytest.raises(BVHParseError) as e:
            parse_bvh(bad)
        assert e.value.line is not None

    def test_23_joint_round_trip(self):
        clip = walk_clip(20)
        anim = parse_bvh(write_bvh(clip))
        sk = anim.skeleton
        assert sk.joint_count == 23
        assert all(p < i for i, p in enumerate(sk.parents) if i > 0)
        back = to_frame_states(anim)
        np.testing.assert_allclose(back.positions, clip.positions, atol=1e-4)
        np.testing.assert_allclose(sixd_to_matrix(back.rotations), sixd_to_matrix(clip.rotations), atol=1e-5)


class TestFrameStates:
    def test_zero_angles_give_offsets(self):
        sk = default_skeleton()
        rot = np.tile(np.eye(3), (2, 23, 1, 1))
        trans = np.tile(sk.offsets, (2, 1, 1))
        _, pos = forward_kinematics(sk.parents, rot, trans)
        np.testing.assert_allclose(pos[0], sk.rest_positions(), atol=1e-12)

    def test_constant_pose_zero_velocity(self):
        spec = style_spec("walk", 30, np.random.default_rng(0))
        spec.amplitude[:] = 0
        spec.root_speed = spec.bob = 0.0
        clip = synth_motion(spec)
        assert np.abs(clip.velocities).max() < 1e-12

    def test_ninety_degree_child(self):
        # two-joint chain, root rotated 90 degrees about Z: child offset (0, 1, 0) -> (-1, 0, 0)
        parents = (-1, 0)
        rot = np.tile(np.eye(3), (1, 2, 1, 1))
        rot[0, 0] = Rotation.from_euler("Z", 90, degrees=True).as_matrix()
        trans = np.array([[[0, 0, 0], [0, 1, 0]]], dtype=float)
        _, pos = forward_kinematics(parents, rot, trans)
        oracle = np.array([[np.cos(np.pi / 2), -np.sin(np.pi / 2), 0], [np.sin(np.pi / 2), np.cos(np.pi / 2), 0],
                           [0, 0, 1]]) @ np.array([0, 1, 0])
        np.testing.assert_allclose(pos[0, 1], oracle, atol=1e-12)

    def test_velocity_telescopes(self):
        clip = walk_clip(50)
        np.testing.assert_allclose(clip.velocities[1:].sum(0), clip.positions[-1] - clip.positions[0], atol=1e-6)

    def test_velocity_convention(self):
        clip = walk_clip(10)
        np.testing.assert_allclose(clip.velocities[3], clip.positions[3] - clip.positions[2])
        np.testing.assert_allclose(clip.velocities[0], clip.velocities[1])

    def test_sixd_round_trip(self, rng):
        mats = Rotation.random(200, random_state=1).as_matrix()
        back = sixd_to_matrix(gram_schmidt_6d(matrix_to_6d(mats)))
        assert np.linalg.norm(back - mats, axis=(-1, -2)).max() < 1e-5

    def test_rotation_blocks_orthonormal(self):
        m = sixd_to_matrix(walk_clip(10).rotations)
        np.testing.assert_allclose(m @ np.swapaxes(m, -1, -2), np.broadcast_to(np.eye(3), m.shape), atol=1e-5)

    def test_skeleton_validation(self):
        with pytest.raises(StructureError):
            Skeleton(("a", "b"), (-1, -1), np.zeros((2, 3)))
        with pytest.raises(StructureError):
            Skeleton(("a", "b", "c"), (-1, 2, 0), np.zeros((3, 3)))


def pairwise(p):
    return np.linalg.norm(p[:, :, None] - p[:, None, :], axis=-1)


class TestFacing:
    def test_already_facing_x_is_identity(self):
        clip = normalize_facing(walk_clip(20))
        again = normalize_facing(clip)
        np.testing.assert_allclose(again.positions, clip.positions, atol=1e-9)

    def test_facing_minus_x_preserves_distances(self):
        clip = normalize_facing(walk_clip(20))
        flip = np.diag([-1.0, 1.0, -1.0])  # 180 degree yaw: now faces -X
        turned = clip_from_arrays(clip.positions @ flip.T,
                                  matrix_to_6d(flip @ sixd_to_matrix(clip.rotations)), clip.skeleton)
        out = normalize_facing(turned)
        np.testing.assert_allclose(pairwise(out.positions), pairwise(turned.positions), atol=1e-9)
        np.testing.assert_allclose(out.positions, clip.positions, atol=1e-9)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(-np.pi, np.pi))
    def test_distance_preservation_and_idempotence(self, yaw):
        clip = walk_clip(15)
        r = Rotation.from_euler("Y", yaw).as_matrix()
        turned = clip_from_arrays(clip.positions @ r.T, matrix_to_6d(r @ sixd_to_matrix(clip.rotations)),
                                  clip.skeleton)
        once = normalize_facing(turned)
        np.testing.assert_allclose(pairwise(once.positions), pairwise(turned.positions), atol=1e-9)
        np.testing.assert_allclose(normalize_facing(once).positions, once.positions, atol=1e-9)


class TestMirror:
    def test_involution(self):
        part = make_partition("five")
        clip = normalize_facing(walk_clip(30))
        twice = mirror(mirror(clip, part), part)
        for a in ("positions", "velocities", "rotations"):
            np.testing.assert_allclose(getattr(twice, a), getattr(clip, a), atol=1e-9)

    def test_symmetric_pose_unchanged(self):
        sk = default_skeleton()
        pos = np.tile(sk.rest_positions(), (2, 1, 1))
        # rest pose is symmetric about X = 0; the mirror axis here is X
        clip = clip_from_arrays(pos, matrix_to_6d(np.tile(np.eye(3), (2, 23, 1, 1))), sk)
        out = mirror(clip, make_partition("five"), axis=0)
        np.testing.assert_allclose(out.positions, clip.positions, atol=1e-9)

    def test_knee_reflection(self):
        part = make_partition("five")
        clip = normalize_facing(walk_clip(30))
        out = mirror(clip, part)
        left_knee, right_knee = 2, 6
        reflected = clip.positions[:, left_knee] * np.array([1, 1, -1])
        np.testing.assert_allclose(out.positions[:, right_knee], reflected, atol=1e-9)

    def test_needs_map(self):
        with pytest.raises(ConfigError):
            mirror(walk_clip(5), make_partition("two"))


class TestWindows:
    @pytest.mark.parametrize("frames,count,starts", [(220, 2, [0, 100]), (120, 1, [0]), (119, 0, [])])
    def test_examples(self, frames, count, starts):
        ws = window_clips(walk_clip(frames), 120, 20)
        assert len(ws) == count == window_count(frames)
        assert [w.meta.get("start", 0) for w in ws] == starts

    def test_overlap_shared(self):
        clip = walk_clip(220)
        a, b = window_clips(clip, 120, 20)
        np.testing.assert_array_equal(a.positions[100:], b.positions[:20])

    @given(st.integers(1, 400), st.integers(2, 60), st.integers(0, 59))
    def test_count_formula(self, t, length, overlap):
        if overlap >= length:
            with pytest.raises(ConfigError):
                window_count(t, length, overlap)
            return
        expected = 0 if t < length else (t - length) // (length - overlap) + 1
        assert window_count(t, length, overlap) == expected

    def test_random_crop(self, rng):
        clip = walk_clip(100)
        c = random_crop(clip, 40, rng)
        assert c.n_frames == 40
        with pytest.raises(StructureError):
            random_crop(clip, 101, rng)

    def test_resample(self):
        clip = walk_clip(61)
        clip = clip.__class__(**{**clip.__dict__, "fps": 60.0})
        out = resample(clip, 30.0)
        assert out.n_frames == 31 and out.fps == 30.0
        np.testing.assert_array_equal(out.positions[1], clip.positions[2])


class TestPartitions:
    def test_two(self):
        p = make_partition("two")
        assert [len(g) for g in p.groups] == [8, 15]
        assert p.groups[0] == tuple(range(15, 23))

    def test_five(self):
        p = make_partition("five")
        assert p.n_parts == 5
        assert p.groups[0] == (15, 16, 17, 18) and p.groups[1] == (19, 20, 21, 22)
        assert set(p.group("torso")) == {0, 9, 10, 11, 12, 13, 14}

    @pytest.mark.parametrize("scheme", ["two", "five"])
    def test_disjoint_cover(self, scheme):
        p = make_partition(scheme)
        joints = [j for g in p.groups for j in g]
        assert sorted(joints) == list(range(23)) and len(set(joints)) == 23
        p.validate(23)

    def test_unknown(self):
        with pytest.raises(ConfigError):
            make_partition("three")


class TestDropJoints:
    def test_leaf(self):
        clip = walk_clip(10)
        out = drop_joints(clip, ["LeftToe"])
        assert out.skeleton.joint_count == 22
        keep = [j for j in range(23) if j != 4]
        np.testing.assert_array_equal(out.positions, clip.positions[:, keep])

    def test_pass_through(self):
        clip = walk_clip(10)
        out = drop_joints(clip, ["LeftForeArm"])
        hand = out.skeleton.index("LeftHand")
        np.testing.assert_allclose(out.positions[:, hand], clip.positions[:, 18], atol=1e-9)
        # rest-pose FK of the new skeleton keeps the hand where it was
        np.testing.assert_allclose(out.skeleton.rest_positions()[hand], clip.skeleton.rest_positions()[18],
                                   atol=1e-9)

    def test_root(self):
        with pytest.raises(StructureError):
            drop_joints(walk_clip(5), ["Hips"])


class TestSynth:
    def test_zero_amplitude_rest(self):
        spec = SynthSpec(np.array([0.05, 0.03]), np.zeros(23), np.zeros(23), np.zeros(23), frames=20)
        clip = synth_motion(spec)
        assert np.ptp(clip.positions, axis=0).max() < 1e-9

    def test_dominant_bin(self):
        spec = style_spec("walk", 400, jitter=False)
        spec.frequency[:] = [0.05, 0.05]
        clip = synth_motion(spec)
        local = clip.local_rotations()[:, 16]  # left upper arm, flexion about X
        ang = np.arctan2(local[:, 2, 1], local[:, 1, 1])
        power = np.abs(np.fft.rfft(ang - ang.mean())) ** 2
        freqs = np.fft.rfftfreq(400)
        assert abs(freqs[np.argmax(power)] - 0.05) <= 1 / 400

    def test_spectrally_disjoint(self):
        spec = style_spec("walk", 400, jitter=False)
        spec.frequency[:] = [0.1, 0.025]
        clip = synth_motion(spec)
        loc = clip.local_rotations()
        arm = np.arctan2(loc[:, 16, 2, 1], loc[:, 16, 1, 1])
        hip = np.arctan2(loc[:, 1, 2, 1], loc[:, 1, 1, 1])
        pa = np.abs(np.fft.rfft(arm - arm.mean())) ** 2
        ph = np.abs(np.fft.rfft(hip - hip.mean())) ** 2
        assert np.argmax(pa) != np.argmax(ph)
        assert ph[np.argmax(pa)] < 1e-6 * ph.max() and pa[np.argmax(ph)] < 1e-6 * pa.max()

    def test_spec_validation(self):
        with pytest.raises(DomainError):
            SynthSpec(np.array([0.5, 0.1]), np.zeros(23), np.zeros(23), np.zeros(23))
        with pytest.raises(DomainError):
            SynthSpec(np.array([0.1, 0.1]), -np.ones(23), np.zeros(23), np.zeros(23))

    def test_truth_trace(self):
        clip = walk_clip(50)
        pt = part_truth(clip.truth, make_partition("two"))
        assert pt.shape == (50, 2, 3)
        assert np.all(pt[..., 1] > 0)

    def test_seeded(self):
        a = synthetic_clips(("walk",), 1, 50, seed=3)[0]
        b = synthetic_clips(("walk",), 1, 50, seed=3)[0]
        np.testing.assert_array_equal(a.positions, b.positions)
        assert len(STYLES) == 5


class TestContainer:
    def test_round_trip(self, tmp_path):
        ds = build_dataset(synthetic_clips(("walk", "march"), 1, 150, seed=1), "two")
        ds.save(tmp_path / "d")
        back = MotionDataset.load(tmp_path / "d")
        np.testing.assert_array_equal(back.positions, ds.positions)
        np.testing.assert_array_equal(back.truth, ds.truth)
        assert back.records == ds.records and back.digest() == ds.digest()
        import json
        man = json.loads((tmp_path / "d" / "pbw.json").read_text())
        assert man["format"] == "pbw-1"

    def test_220_frames_two_windows_mirrored(self):
        ds = build_dataset([walk_clip(220)], "two")
        assert len(ds) == 4
        assert sum(r["mirrored"] for r in ds.records) == 2

    def test_bad_format(self, tmp_path):
        ds = build_dataset([walk_clip(130)], "two", augment_mirror=False)
        ds.save(tmp_path / "d")
        p = tmp_path / "d" / "pbw.json"
        p.write_text(p.read_text().replace("pbw-1", "pbw-9"))
        with pytest.raises(StructureError):
            MotionDataset.load(tmp_path / "d")

    def test_truncated_array(self, tmp_path):
        ds = build_dataset([walk_clip(130)], "two", augment_mirror=False)
        ds.save(tmp_path / "d")
        f = tmp_path / "d" / "positions.f32"
        f.write_bytes(f.read_bytes()[:-4])
        with pytest.raises(StructureError):
            MotionDataset.load(tmp_path / "d")

    def test_window_properties(self):
        ds = build_dataset([walk_clip(220)], "two")
        for i in range(len(ds)):
            w = ds.window(i)
            assert np.allclose(w.positions[0, 0, [0, 2]], 0, atol=1e-4)
            lateral = w.positions[0, 1] - w.positions[0, 5]
            fwd = np.cross(lateral, [0.0, 1.0, 0.0])
            assert fwd[0] > 0 and abs(fwd[2]) < 1e-3 * np.linalg.norm(fwd)
            if not ds.records[i]["mirrored"]:
                # mirrored root frames are reflected, so only plain windows are re-normalized
                again = normalize_facing(w)
                assert np.allclose(again.positions, w.positions, atol=1e-3)

    def test_save_clip_sidecar(self, tmp_path):
        save_clip(walk_clip(10), tmp_path / "c", {"amplitude": np.ones((10, 2, 2))})
        assert (tmp_path / "c" / "phase_trace.json").exists()
        assert MotionDataset.load(tmp_path / "c").positions.shape == (1, 10, 23, 3)
