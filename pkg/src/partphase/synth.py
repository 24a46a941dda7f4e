"""Procedural motion with known per-part phases.

Every joint swings about its local flexion axis (local X) as
``bias + A sin(2pi (F t + S0))`` where ``F`` is shared by all joints of a body
part. The generated clip carries the per-joint ``(A, F, S)`` trace so learned
phases can be checked against ground truth.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DomainError
from .phase import wrap01
from .skeleton import (DEFAULT_FOOT_JOINTS, MotionClip, forward_kinematics, make_partition, matrix_to_6d,
                       default_skeleton, velocities_from_positions)


@dataclass
class SynthSpec:
    """Ground-truth oscillation parameters.

    ``frequency`` has one entry per body part (cycles/frame); ``amplitude``,
    ``phase`` and ``bias`` have one entry per joint (radians, cycles, radians).
    """
    frequency: np.ndarray
    amplitude: np.ndarray
    phase: np.ndarray
    bias: np.ndarray
    frames: int = 600
    noise: float = 0.0
    root_speed: float = 0.0
    bob: float = 0.0
    style: Optional[str] = None
    ground: Optional[float] = 0.5
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frequency = np.asarray(self.frequency, dtype=float)
        self.amplitude = np.asarray(self.amplitude, dtype=float)
        self.phase = np.asarray(self.phase, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if np.any(np.abs(self.frequency) >= 0.5):
            raise DomainError("frequencies must stay below 0.5 cycles/frame")
        if np.any(self.amplitude < 0):
            raise DomainError("amplitudes must be nonnegative")
        if not (self.amplitude.shape == self.phase.shape == self.bias.shape):
            raise DomainError("per-joint arrays disagree in length")


def joint_frequencies(spec, partition):
    freq = np.zeros(spec.amplitude.shape[0])
    for i, g in enumerate(partition.groups):
        freq[list(g)] = spec.frequency[i]
    return freq


def synth_motion(spec, skeleton=None, partition=None, seed=None):
    """Generate a :class:`MotionClip` (30 fps) from ``spec``.

    The clip faces +Z and walks along +Z at ``root_speed`` units/frame; its
    ``truth`` field holds the per-joint ``[A, F, S]`` trace.
    """
    skeleton = skeleton or default_skeleton()
    partition = partition or make_partition("two")
    partition.validate(skeleton.joint_count)
    b, t = skeleton.joint_count, spec.frames
    if spec.amplitude.shape[0] != b:
        raise DomainError("spec has a different joint count than the skeleton")
    if spec.frequency.shape[0] != partition.n_parts:
        raise DomainError("spec has a different part count than the partition")
    rng = np.random.default_rng(seed)
    freq = joint_frequencies(spec, partition)
    frames = np.arange(t, dtype=float)
    cycles = freq[None, :] * frames[:, None] + spec.phase[None, :]
    angle = spec.bias + spec.amplitude * np.sin(2 * np.pi * cycles)
    if spec.noise > 0:
        angle = angle + rng.normal(scale=spec.noise, size=angle.shape)

    local_rot = Rotation.from_euler("X", angle.reshape(-1)).as_matrix().reshape(t, b, 3, 3)
    local_trans = np.tile(skeleton.offsets, (t, 1, 1))
    root_freq = freq[0] if freq[0] > 0 else spec.frequency.max()
    local_trans[:, 0, 1] += spec.bob * np.sin(2 * np.pi * 2 * root_freq * frames)
    local_trans[:, 0, 2] += spec.root_speed * frames
    grot, gpos = forward_kinematics(skeleton.parents, local_rot, local_trans)
    if spec.ground is not None and skeleton.joint_count == 23:
        # keep the lowest foot joint planted at the given clearance
        lowest = gpos[:, list(DEFAULT_FOOT_JOINTS), 1].min(axis=1)
        gpos[:, :, 1] += (spec.ground - lowest)[:, None]

    truth = np.stack([np.broadcast_to(spec.amplitude, (t, b)), np.broadcast_to(freq, (t, b)),
                      wrap01(cycles)], axis=-1)
    return MotionClip(gpos, velocities_from_positions(gpos), matrix_to_6d(grot), skeleton, 30.0,
                      spec.style, truth, {"synthetic": True})


def part_truth(truth, partition):
    """Reduce a per-joint ``[A, F, S]`` trace to parts ``(T, n, 3)``.

    Each part reports the joint with the largest amplitude (lowest index on ties).
    """
    out = np.zeros(truth.shape[:-2] + (partition.n_parts, 3))
    for i, g in enumerate(partition.groups):
        g = list(g)
        first = truth.reshape((-1,) + truth.shape[-2:])[0]
        ref = g[int(np.argmax(first[g, 0]))]
        out[..., i, :] = truth[..., ref, :]
    return out


# name: (lower F, upper F, hip, hip bias, knee, arm, arm bias, elbow, speed, bob)
# angles in degrees, frequencies in cycles/frame, speed in cm/frame, bob in cm
STYLE_TABLE = {
    "walk":      (0.035, 0.035, 25, 0, 40, 20, 0, 15, 1.2, 1.0),
    "highknees": (0.050, 0.050, 35, -35, 90, 25, 0, 40, 0.3, 2.0),
    "swimming":  (0.030, 0.045, 12, 0, 15, 85, -40, 30, 0.6, 0.5),
    "flapping":  (0.030, 0.080, 10, 0, 10, 35, -60, 20, 0.2, 0.5),
    "march":     (0.040, 0.040, 30, -15, 50, 50, 0, 10, 0.8, 1.5),
}
STYLES = tuple(STYLE_TABLE)


def style_spec(style, frames=600, rng=None, jitter=True, noise=0.0):
    """A :class:`SynthSpec` for one of :data:`STYLES` on the 23-joint skeleton, two-part scheme.

    With ``jitter`` the global phase, frequencies (+-5%) and amplitudes (+-10%) are
    randomized by ``rng``.
    """
    f_lo, f_up, hip, hip_bias, knee, arm, arm_bias, elbow, speed, bob = STYLE_TABLE[style]
    rng = rng if rng is not None else np.random.default_rng(0)
    d = np.deg2rad
    amp = np.zeros(23)
    ph = np.zeros(23)
    bias = np.zeros(23)
    for side, (h, k, a) in enumerate([(1, 2, 3), (5, 6, 7)]):
        off = 0.5 * side
        amp[h], ph[h], bias[h] = d(hip), off, d(hip_bias)
        amp[k], ph[k], bias[k] = d(knee) / 2, off + 0.25, d(knee) / 2
        amp[a], ph[a] = d(8), off + 0.25
    for j in (9, 10, 11, 12):
        amp[j], ph[j] = d(2), 0.1
    amp[13], amp[14] = d(2), d(3)
    ph[13], ph[14] = 0.2, 0.3
    for side, (s, e) in enumerate([(16, 17), (20, 21)]):
        off = 0.5 * side
        amp[s], ph[s], bias[s] = d(arm), off, d(arm_bias)
        amp[e], ph[e], bias[e] = d(elbow) / 2, off + 0.2, -d(elbow) / 2
    freq = np.array([f_up, f_lo])
    if jitter:
        ph = ph + rng.uniform(0, 1)
        freq = freq * rng.uniform(0.95, 1.05, size=2)
        amp = amp * rng.uniform(0.9, 1.1)
    return SynthSpec(freq, amp, wrap01(ph), bias, frames=frames, noise=noise,
                     root_speed=speed, bob=bob, style=style)


def synthetic_clips(styles=STYLES, clips_per_style=4, frames=1000, seed=0, noise=0.0):
    """Seeded list of jittered synthetic clips, ``clips_per_style`` per style."""
    rng = np.random.default_rng(seed)
    sk = default_skeleton()
    part = make_partition("two")
    out = []
    for style in styles:
        for _ in range(clips_per_style):
            spec = style_spec(style, frames, rng, noise=noise)
            out.append(synth_motion(spec, sk, part, seed=int(rng.integers(2**31))))
    return out

