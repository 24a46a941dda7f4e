"""A short walk through the phase-vector algebra.

A phase vector stores, per latent channel, the pair (A sin 2piS, A cos 2piS).
Everything the sampler does with phases (advancing by a frequency, blending
two predictions, scaling for body-part control) goes through these helpers.
"""
import numpy as np

from partphase.phase import advance, blend, compose, decompose, phase_velocity, scale

# one body part with two channels: amplitudes 1.0 and 0.5, angles 0.1 and 0.8 cycles
theta = compose(np.array([1.0, 0.5]), np.array([0.1, 0.8]))
print("theta", theta.round(4))
amp, ang = decompose(theta)
print("decomposed amplitude", amp, "angle", ang.round(6))

# angular velocity is the signed, wrapped angle difference
print("velocity 0.9 -> 0.05:", phase_velocity(0.05, 0.9))

# advance by 0.05 cycles/frame for 10 frames: half a cycle forward
t = theta
for _ in range(10):
    t = advance(t, np.array([0.05, 0.05]), 1.0, amp)
print("after 10 frames", decompose(t)[1].round(6))

# the sampler blends its rotated estimate with the direct prediction
other = compose(np.array([0.8, 0.7]), np.array([0.2, 0.9]))
a, s = decompose(blend(theta, other))
print("blend amplitude", a.round(4), "angle", s.round(4))

# body-part control on a two-part body (n, 2m): double the amplitude and
# frequency of part 1 only, part 0 passes through
body = np.stack([theta, theta])
prev = np.stack([advance(theta, np.array([-0.05, -0.05]), 1.0, amp)] * 2)
scaled = scale(prev, body, amp_factor=2.0, freq_factor=2.0, part_mask=[1])
print("scaled amplitude", scaled.amplitude.round(4).tolist())
print("per-frame step", scaled.frequency.round(4).tolist())
