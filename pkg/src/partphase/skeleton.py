"""Skeletons, motion clips, BVH ingestion and preprocessing.

Conventions: Y is up, positions are in skeleton units (``unit_scale`` converts
them to centimetres), and rotations are global, stored as the 6D
forward/upward pair. A clip's per-frame state vector is laid out as
``[positions (3B), velocities (3B), rotations (6B)]``.
"""
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import BVHParseError, ConfigError, StructureError
from .rotations import gram_schmidt_6d, matrix_to_6d, sixd_to_matrix, yaw_matrix

UP_AXIS = 1


@dataclass(frozen=True)
class Skeleton:
    joint_names: tuple
    parents: tuple
    offsets: np.ndarray
    channels: Optional[tuple] = None
    end_sites: Optional[dict] = None

    def __post_init__(self):
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "parents", tuple(int(p) for p in self.parents))
        object.__setattr__(self, "offsets", np.asarray(self.offsets, dtype=float).reshape(-1, 3))
        n = len(self.joint_names)
        if len(self.parents) != n or self.offsets.shape[0] != n:
            raise StructureError("joint names, parents and offsets disagree in length")
        roots = [i for i, p in enumerate(self.parents) if p < 0]
        if roots != [0]:
            raise StructureError("skeleton needs exactly one root at index 0")
        for i, p in enumerate(self.parents[1:], start=1):
            if not 0 <= p < i:
                raise StructureError(f"joint {i} has parent {p}; parents must precede children")

    @property
    def joint_count(self):
        return len(self.joint_names)

    def index(self, name):
        try:
            return self.joint_names.index(name)
        except ValueError:
            raise ConfigError(f"unknown joint {name!r}") from None

    def children(self, joint):
        return [i for i, p in enumerate(self.parents) if p == joint]

    def rest_positions(self):
        pos = np.zeros((self.joint_count, 3))
        for j, p in enumerate(self.parents):
            pos[j] = self.offsets[j] if p < 0 else pos[p] + self.offsets[j]
        return pos

    def height(self):
        """Vertical extent of the rest pose."""
        y = self.rest_positions()[:, UP_AXIS]
        return float(y.max() - y.min())

    def to_dict(self):
        return {
            "joint_names": list(self.joint_names),
            "parents": list(self.parents),
            "offsets": self.offsets.tolist(),
            "channels": None if self.channels is None else [list(c) for c in self.channels],
        }

    @classmethod
    def from_dict(cls, d):
        ch = d.get("channels")
        return cls(d["joint_names"], d["parents"], np.array(d["offsets"]),
                   None if ch is None else tuple(tuple(c) for c in ch))


@dataclass(frozen=True)
class FrameState:
    positions: np.ndarray   # (B, 3)
    velocities: np.ndarray  # (B, 3)
    rotations: np.ndarray   # (B, 6)

    def vector(self):
        return np.concatenate([self.positions.ravel(), self.velocities.ravel(), self.rotations.ravel()])


@dataclass(frozen=True)
class StateLayout:
    """Index helper for flattened ``[p, v, r]`` state vectors."""
    joints: int

    @property
    def size(self):
        return 12 * self.joints

    @property
    def pos(self):
        return slice(0, 3 * self.joints)

    @property
    def vel(self):
        return slice(3 * self.joints, 6 * self.joints)

    @property
    def rot(self):
        return slice(6 * self.joints, 12 * self.joints)

    def position_index(self, joints, axes=(0, 1, 2)):
        return np.array([3 * j + a for j in joints for a in axes], dtype=int)

    def split(self, state):
        lead = state.shape[:-1]
        b = self.joints
        return (state[..., self.pos].reshape(lead + (b, 3)),
                state[..., self.vel].reshape(lead + (b, 3)),
                state[..., self.rot].reshape(lead + (b, 6)))


@dataclass(frozen=True)
class MotionClip:
    positions: np.ndarray
    velocities: np.ndarray
    rotations: np.ndarray
    skeleton: Skeleton
    fps: float = 30.0
    style_label: Optional[str] = None
    truth: Optional[np.ndarray] = None  # (T, B, 3) per-joint [A, F, S] for synthetic clips
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t, b = self.positions.shape[:2]
        if b != self.skeleton.joint_count:
            raise StructureError("clip joint count does not match its skeleton")
        if self.velocities.shape != (t, b, 3) or self.rotations.shape != (t, b, 6):
            raise StructureError("positions, velocities and rotations disagree in shape")

    @property
    def n_frames(self):
        return self.positions.shape[0]

    @property
    def layout(self):
        return StateLayout(self.skeleton.joint_count)

    def frame(self, t):
        return FrameState(self.positions[t], self.velocities[t], self.rotations[t])

    def states(self):
        t = self.n_frames
        return np.concatenate([self.positions.reshape(t, -1), self.velocities.reshape(t, -1),
                               self.rotations.reshape(t, -1)], axis=1)

    @classmethod
    def from_states(cls, states, skeleton, **kw):
        p, v, r = StateLayout(skeleton.joint_count).split(np.asarray(states, dtype=float))
        return cls(p, v, r, skeleton, **kw)

    def slice(self, start, stop):
        truth = None if self.truth is None else self.truth[start:stop]
        meta = dict(self.meta, start=self.meta.get("start", 0) + start)
        return replace(self, positions=self.positions[start:stop], velocities=self.velocities[start:stop],
                       rotations=self.rotations[start:stop], truth=truth, meta=meta)

    def rotation_matrices(self):
        return sixd_to_matrix(self.rotations)

    def local_rotations(self):
        """Parent-relative rotation matrices ``(T, B, 3, 3)`` recovered from global 6D."""
        glob = self.rotation_matrices()
        local = glob.copy()
        for j, p in enumerate(self.skeleton.parents):
            if p >= 0:
                local[:, j] = np.swapaxes(glob[:, p], -1, -2) @ glob[:, j]
        return local


def velocities_from_positions(positions):
    """Backward difference with the first frame copied from the second."""
    if positions.shape[0] < 2:
        raise StructureError("need at least two frames for velocities")
    v = np.empty_like(positions)
    v[1:] = positions[1:] - positions[:-1]
    v[0] = v[1]
    return v


# --------------------------------------------------------------------- BVH

@dataclass(frozen=True)
class BVHAnimation:
    skeleton: Skeleton
    frame_time: float
    values: np.ndarray  # (T, total channels)

    @property
    def n_frames(self):
        return self.values.shape[0]

    @property
    def fps(self):
        return 1.0 / self.frame_time

    def local_transforms(self):
        """Per-joint local rotation matrices (T, B, 3, 3) and translations (T, B, 3)."""
        sk = self.skeleton
        t, b = self.n_frames, sk.joint_count
        rot = np.tile(np.eye(3), (t, b, 1, 1))
        trans = np.tile(sk.offsets, (t, 1, 1))
        col = 0
        for j, chans in enumerate(sk.channels):
            block = self.values[:, col:col + len(chans)]
            col += len(chans)
            order = ""
            angles = []
            for k, ch in enumerate(chans):
                axis = "XYZ".index(ch[0].upper())
                if ch.lower().endswith("position"):
                    trans[:, j, axis] = block[:, k]
                else:
                    order += ch[0].upper()
                    angles.append(block[:, k])
            if order:
                rot[:, j] = Rotation.from_euler(order, np.stack(angles, axis=1), degrees=True).as_matrix()
        return rot, trans


def parse_bvh(text):
    """Parse BVH text into a :class:`BVHAnimation`.

    Raises :class:`BVHParseError` (with a line number) on malformed hierarchy
    and :class:`StructureError` when the motion block does not match the
    declared channels or frame count.
    """
    lines = text.splitlines()
    tokens = []
    for ln, line in enumerate(lines, start=1):
        for tok in line.split():
            tokens.append((tok, ln))
    pos = 0

    def expect(word=None):
        nonlocal pos
        if pos >= len(tokens):
            raise BVHParseError(f"unexpected end of file, expected {word or 'token'}",
                                lines and len(lines))
        tok, ln = tokens[pos]
        if word is not None and tok.upper() != word.upper():
            raise BVHParseError(f"expected {word!r}, found {tok!r}", ln)
        pos += 1
        return tok, ln

    def number():
        tok, ln = expect()
        try:
            return float(tok)
        except ValueError:
            raise BVHParseError(f"expected a number, found {tok!r}", ln) from None

    names, parents, offsets, channels, end_sites = [], [], [], [], {}

    def joint(parent):
        nonlocal pos
        tok, ln = expect()
        if tok.upper() not in ("ROOT", "JOINT"):
            raise BVHParseError(f"expected ROOT or JOINT, found {tok!r}", ln)
        if (tok.upper() == "ROOT") != (parent < 0):
            raise BVHParseError("ROOT must appear exactly once, at the top", ln)
        name, _ = expect()
        idx = len(names)
        names.append(name)
        parents.append(parent)
        expect("{")
        expect("OFFSET")
        offsets.append([number(), number(), number()])
        expect("CHANNELS")
        ctok, cln = expect()
        try:
            count = int(ctok)
        except ValueError:
            raise BVHParseError(f"bad channel count {ctok!r}", cln) from None
        chans = []
        for _ in range(count):
            ch, chln = expect()
            if ch.lower() not in {f"{a}{k}" for a in "xyz" for k in ("position", "rotation")}:
                raise BVHParseError(f"unknown channel {ch!r}", chln)
            chans.append(ch)
        channels.append(tuple(chans))
        while True:
            if pos >= len(tokens):
                raise BVHParseError("unterminated joint block", len(lines))
            tok, ln = tokens[pos]
            if tok == "}":
                pos += 1
                return
            if tok.upper() == "JOINT":
                joint(idx)
            elif tok.upper() == "END":
                pos += 1
                expect("Site")
                expect("{")
                expect("OFFSET")
                end_sites[name] = [number(), number(), number()]
                expect("}")
            else:
                raise BVHParseError(f"unexpected token {tok!r} in joint {name!r}", ln)

    expect("HIERARCHY")
    joint(-1)
    expect("MOTION")
    expect("Frames:")
    ftok, fln = expect()
    try:
        n_frames = int(ftok)
    except ValueError:
        raise BVHParseError(f"bad frame count {ftok!r}", fln) from None
    expect("Frame")
    expect("Time:")
    frame_time = number()
    if frame_time <= 0:
        raise BVHParseError("frame time must be positive", fln + 1)
    rest = [t for t, _ in tokens[pos:]]
    try:
        data = np.array(rest, dtype=float)
    except ValueError:
        raise StructureError("non-numeric value in motion data") from None
    width = sum(len(c) for c in channels)
    if width == 0 or data.size % width:
        raise StructureError(f"motion data length {data.size} is not a multiple of frame size {width}")
    if data.size // width != n_frames:
        raise StructureError(f"header declares {n_frames} frames, data holds {data.size // width}")
    sk = Skeleton(names, parents, np.array(offsets), tuple(channels), end_sites)
    return BVHAnimation(sk, frame_time, data.reshape(n_frames, width))


def read_bvh(path):
    with open(path, encoding="utf-8") as f:
        return parse_bvh(f.read())


def forward_kinematics(parents, local_rot, local_trans):
    """Global rotations and positions from per-joint local transforms."""
    glob_rot = np.empty_like(local_rot)
    glob_pos = np.empty(local_trans.shape)
    for j, p in enumerate(parents):
        if p < 0:
            glob_rot[:, j] = local_rot[:, j]
            glob_pos[:, j] = local_trans[:, j]
        else:
            glob_rot[:, j] = glob_rot[:, p] @ local_rot[:, j]
            glob_pos[:, j] = glob_pos[:, p] + np.einsum("tij,tj->ti", glob_rot[:, p], local_trans[:, j])
    return glob_rot, glob_pos


def to_frame_states(anim, style_label=None):
    """Convert a BVH animation to a :class:`MotionClip` of global frame states."""
    if anim.n_frames < 2:
        raise StructureError("need at least two frames")
    rot, trans = anim.local_transforms()
    grot, gpos = forward_kinematics(anim.skeleton.parents, rot, trans)
    return MotionClip(gpos, velocities_from_positions(gpos), matrix_to_6d(grot), anim.skeleton,
                      fps=anim.fps, style_label=style_label)


def _fmt(x):
    return f"{x:.6f}"


def write_bvh(clip, path=None, rotation_order="ZXY"):
    """Export a clip as BVH using its skeleton hierarchy; returns the text."""
    sk = clip.skeleton
    local = clip.local_rotations()
    order = rotation_order.upper()
    rot_names = [f"{a}rotation" for a in order]
    out = ["HIERARCHY"]

    def emit(j, depth):
        pad = "  " * depth
        kind = "ROOT" if sk.parents[j] < 0 else "JOINT"
        out.append(f"{pad}{kind} {sk.joint_names[j]}")
        out.append(f"{pad}{{")
        out.append(f"{pad}  OFFSET " + " ".join(_fmt(v) for v in sk.offsets[j]))
        chans = (["Xposition", "Yposition", "Zposition"] if kind == "ROOT" else []) + rot_names
        out.append(f"{pad}  CHANNELS {len(chans)} " + " ".join(chans))
        kids = sk.children(j)
        for c in kids:
            emit(c, depth + 1)
        if not kids:
            site = (sk.end_sites or {}).get(sk.joint_names[j], [0.0, 0.0, 0.0])
            out.append(f"{pad}  End Site")
            out.append(f"{pad}  {{")
            out.append(f"{pad}    OFFSET " + " ".join(_fmt(v) for v in site))
            out.append(f"{pad}  }}")
        out.append(f"{pad}}}")

    emit(0, 0)
    out.append("MOTION")
    out.append(f"Frames: {clip.n_frames}")
    out.append(f"Frame Time: {1.0 / clip.fps:.8f}")
    t, b = clip.n_frames, sk.joint_count
    eul = Rotation.from_matrix(local.reshape(-1, 3, 3)).as_euler(order, degrees=True).reshape(t, b, 3)
    for f in range(t):
        row = list(clip.positions[f, 0])
        for j in _dfs_order(sk):
            row.extend(eul[f, j])
        out.append(" ".join(_fmt(v) for v in row))
    text = "\n".join(out) + "\n"
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def _dfs_order(sk):
    order = []

    def visit(j):
        order.append(j)
        for c in sk.children(j):
            visit(c)
    visit(0)
    return order


# ------------------------------------------------------------ partitions

@dataclass(frozen=True)
class BodyPartition:
    name: str
    groups: tuple
    group_names: tuple
    mirror_pairs: tuple = ()

    @property
    def n_parts(self):
        return len(self.groups)

    def joint_count(self):
        return sum(len(g) for g in self.groups)

    def part_of(self, joint):
        for i, g in enumerate(self.groups):
            if joint in g:
                return i
        raise ConfigError(f"joint {joint} is not in partition {self.name!r}")

    def group(self, name):
        return self.groups[self.group_names.index(name)]

    def validate(self, joint_count):
        seen = [j for g in self.groups for j in g]
        if len(seen) != len(set(seen)):
            raise ConfigError(f"partition {self.name!r} groups overlap")
        if sorted(seen) != list(range(joint_count)):
            raise ConfigError(f"partition {self.name!r} does not cover joints 0..{joint_count - 1}")

    def mirror_map(self, joint_count):
        if not self.mirror_pairs:
            raise ConfigError(f"partition {self.name!r} has no left/right groups; pass a joint map")
        perm = np.arange(joint_count)
        for a, b in self.mirror_pairs:
            ga, gb = self.group(a), self.group(b)
            if len(ga) != len(gb):
                raise ConfigError(f"mirror groups {a!r} and {b!r} differ in size")
            for x, y in zip(ga, gb):
                perm[x], perm[y] = y, x
        return perm


def make_partition(scheme):
    """The shipped body-part schemes for the 23-joint skeleton."""
    if scheme == "two":
        groups = (tuple(range(15, 23)), tuple(range(0, 15)))
        return BodyPartition("two", groups, ("upper_limbs", "rest"))
    if scheme == "five":
        groups = (tuple(range(15, 19)), tuple(range(19, 23)), tuple(range(1, 5)),
                  tuple(range(5, 9)), (0, 9, 10, 11, 12, 13, 14))
        names = ("left_arm", "right_arm", "left_leg", "right_leg", "torso")
        return BodyPartition("five", groups, names, (("left_arm", "right_arm"), ("left_leg", "right_leg")))
    raise ConfigError(f"unknown partition scheme {scheme!r}")


DEFAULT_JOINTS = (
    "Hips",
    "LeftUpLeg", "LeftLeg", "LeftFoot", "LeftToe",
    "RightUpLeg", "RightLeg", "RightFoot", "RightToe",
    "Spine", "Spine1", "Spine2", "Spine3", "Neck", "Head",
    "LeftShoulder", "LeftArm", "LeftForeArm", "LeftHand",
    "RightShoulder", "RightArm", "RightForeArm", "RightHand",
)
DEFAULT_FOOT_JOINTS = (3, 4, 7, 8)


def default_skeleton():
    """A 23-joint humanoid in centimetres, facing +Z, arms hanging, left on +X."""
    parents = (-1, 0, 1, 2, 3, 0, 5, 6, 7, 0, 9, 10, 11, 12, 13, 12, 15, 16, 17, 12, 19, 20, 21)
    leg = [(0, -42, 0), (0, -42, 0), (0, -8, 12)]
    arm = [(0, -26, 0)]
    offsets = ([(0, 93, 0), (9, 0, 0)] + leg + [(-9, 0, 0)] + leg
               + [(0, 10, 0), (0, 12, 0), (0, 12, 0), (0, 12, 0), (0, 10, 0), (0, 12, 0)]
               + [(4, 6, 0), (14, 0, 0), (0, -28, 0)] + arm
               + [(-4, 6, 0), (-14, 0, 0), (0, -28, 0)] + arm)
    chans = tuple([("Xposition", "Yposition", "Zposition", "Zrotation", "Xrotation", "Yrotation")]
                  + [("Zrotation", "Xrotation", "Yrotation")] * 22)
    return Skeleton(DEFAULT_JOINTS, parents, np.array(offsets, dtype=float), chans)


# ---------------------------------------------------------- preprocessing

def _rigid_yaw(clip, rot, translation=np.zeros(3)):
    pos = clip.positions @ rot.T + translation
    vel = clip.velocities @ rot.T
    r6 = clip.rotations.reshape(clip.n_frames, -1, 2, 3) @ rot.T
    return replace(clip, positions=pos, velocities=vel, rotations=r6.reshape(clip.rotations.shape))


def facing_direction(clip, frame=0, forward_axis=2, lateral_pair=(1, 5)):
    """Horizontal facing of ``frame``; returns (unit vector, used_fallback)."""
    root = sixd_to_matrix(clip.rotations[frame, 0])
    f = root[:, forward_axis].copy()
    f[UP_AXIS] = 0.0
    fallback = False
    if np.linalg.norm(f) < 1e-6:
        left, right = lateral_pair
        lateral = clip.positions[frame, left] - clip.positions[frame, right]
        f = np.cross(lateral, np.eye(3)[UP_AXIS])
        f[UP_AXIS] = 0.0
        fallback = True
        if np.linalg.norm(f) < 1e-9:
            raise StructureError("cannot determine facing direction")
    return f / np.linalg.norm(f), fallback


def normalize_facing(clip, forward_axis=2, lateral_pair=(1, 5)):
    """Rotate the clip about the vertical axis so frame 0 faces +X."""
    if clip.n_frames == 0:
        raise StructureError("empty clip")
    f, fallback = facing_direction(clip, 0, forward_axis, lateral_pair)
    alpha = np.arctan2(-f[2], f[0])
    out = _rigid_yaw(clip, yaw_matrix(-alpha))
    if fallback:
        out = replace(out, meta=dict(out.meta, facing_fallback=True))
    return out


def center_root(clip):
    """Translate horizontally so the root starts at the origin."""
    shift = np.zeros(3)
    shift[[0, 2]] = -clip.positions[0, 0, [0, 2]]
    return replace(clip, positions=clip.positions + shift)


def mirror(clip, partition=None, joint_map=None, axis=2):
    """Reflect a clip across the lateral axis and swap left/right joints."""
    b = clip.skeleton.joint_count
    if joint_map is not None:
        perm = np.asarray(joint_map, dtype=int)
        if sorted(perm.tolist()) != list(range(b)):
            raise ConfigError("joint map must be a permutation of all joints")
    elif partition is not None:
        perm = partition.mirror_map(b)
    else:
        raise ConfigError("mirroring needs a partition with left/right groups or a joint map")
    flip = np.ones(3)
    flip[axis] = -1.0
    pos = clip.positions[:, perm] * flip
    vel = clip.velocities[:, perm] * flip
    r6 = clip.rotations[:, perm].reshape(clip.n_frames, b, 2, 3) * flip
    # columns along the flipped axis change sign under M R M
    col_sign = np.array([flip[0], flip[1]])[:, None]
    r6 = (r6 * col_sign).reshape(clip.n_frames, b, 6)
    truth = None if clip.truth is None else clip.truth[:, perm]
    meta = dict(clip.meta, mirrored=not clip.meta.get("mirrored", False))
    return replace(clip, positions=pos, velocities=vel, rotations=gram_schmidt_6d(r6), truth=truth, meta=meta)


def resample(clip, fps):
    """Nearest-frame resampling to ``fps``; velocities are recomputed."""
    if fps <= 0:
        raise ConfigError("fps must be positive")
    # BVH frame times carry ~7 digits, so 1/30 reads back as 30.000003 fps
    if abs(clip.fps - fps) <= 1e-4 * fps:
        return replace(clip, fps=float(fps))
    n = int(np.floor((clip.n_frames - 1) * fps / clip.fps + 1e-6)) + 1
    idx = np.minimum(np.round(np.arange(n) * clip.fps / fps).astype(int), clip.n_frames - 1)
    if n < 2:
        raise StructureError("clip too short to resample")
    pos = clip.positions[idx]
    truth = None if clip.truth is None else clip.truth[idx]
    return replace(clip, positions=pos, velocities=velocities_from_positions(pos), rotations=clip.rotations[idx],
                   fps=float(fps), truth=truth)


def window_clips(clip, length=120, overlap=20):
    """Cut a clip into windows of ``length`` frames sharing ``overlap`` frames."""
    if not length > overlap >= 0:
        raise ConfigError("need length > overlap >= 0")
    stride = length - overlap
    return [clip.slice(s, s + length) for s in range(0, clip.n_frames - length + 1, stride)]


def window_count(n_frames, length=120, overlap=20):
    if not length > overlap >= 0:
        raise ConfigError("need length > overlap >= 0")
    if n_frames < length:
        return 0
    return (n_frames - length) // (length - overlap) + 1


def random_crop(clip, length, rng):
    """Uniformly placed crop of ``length`` frames."""
    if clip.n_frames < length:
        raise StructureError("clip shorter than crop length")
    start = int(rng.integers(0, clip.n_frames - length + 1))
    return clip.slice(start, start + length)


def drop_joints(clip, names):
    """Remove joints by name, splicing single-child joints out of the chain.

    Global positions and rotations of the retained joints are untouched; the
    offsets of spliced children absorb the removed joint's rest offset.
    """
    sk = clip.skeleton
    remove = {sk.index(n) for n in names}
    if 0 in remove:
        raise StructureError("cannot remove the root joint")
    parents = list(sk.parents)
    offsets = sk.offsets.copy()
    for j in sorted(remove, reverse=True):
        kids = [c for c in range(sk.joint_count) if parents[c] == j]
        if len(kids) > 1:
            raise StructureError(f"removing {sk.joint_names[j]!r} would disconnect {len(kids)} children")
        for c in kids:
            offsets[c] = offsets[c] + offsets[j]
            parents[c] = parents[j]
    keep = [j for j in range(sk.joint_count) if j not in remove]
    remap = {old: new for new, old in enumerate(keep)}
    new_parents = [-1 if parents[j] < 0 else remap[parents[j]] for j in keep]
    channels = None if sk.channels is None else tuple(sk.channels[j] for j in keep)
    new_sk = Skeleton([sk.joint_names[j] for j in keep], new_parents, offsets[keep], channels)
    truth = None if clip.truth is None else clip.truth[:, keep]
    return replace(clip, positions=clip.positions[:, keep], velocities=clip.velocities[:, keep],
                   rotations=clip.rotations[:, keep], skeleton=new_sk, truth=truth)


def root_yaw(clip, forward_axis=2):
    """Per-frame yaw angle of the root's horizontal facing (0 when facing +X)."""
    root = sixd_to_matrix(clip.rotations[:, 0])
    f = root[:, :, forward_axis]
    return np.arctan2(-f[:, 2], f[:, 0])


def local_velocity_features(clip, joints):
    """Root-relative joint velocities in the root's facing frame, ``(T, 3 * len(joints))``.

    Invariant to a rigid yaw rotation and translation of the whole clip.
    """
    rel = clip.positions[:, joints] - clip.positions[:, :1]
    rot = yaw_matrix(-root_yaw(clip))
    rel = np.einsum("tij,tkj->tki", rot, rel)
    return velocities_from_positions(rel).reshape(clip.n_frames, -1)


def prepare_windows(clip, length=120, overlap=20, augment_mirror=True, mirror_partition=None):
    """Window a clip, normalize facing and origin per window, optionally add mirrored copies."""
    out = []
    for w in window_clips(clip, length, overlap):
        w = center_root(normalize_facing(w))
        out.append(w)
        if augment_mirror:
            out.append(mirror(w, mirror_partition or make_partition("five")))
    return out


def clip_from_arrays(positions: np.ndarray, rotations: np.ndarray, skeleton: Skeleton,
                     fps: float = 30.0, style_label: Optional[str] = None,
                     truth: Optional[np.ndarray] = None, meta: Optional[dict] = None):
    """Build a clip from global positions and 6D rotations; velocities are derived."""
    return MotionClip(positions, velocities_from_positions(positions), rotations, skeleton, fps,
                      style_label, truth, dict(meta or {}))

