"""Closed-form phase algebra on (sin, cos) phase vectors.

A phase vector for one body part holds ``m`` channels as interleaved pairs
``(A sin 2piS, A cos 2piS)``; arrays have shape ``(..., 2m)``. A body phase
stacks ``n`` parts as ``(..., n, 2m)``. Every function works on numpy arrays
and on torch tensors (differentiably), so the sampler and the analysis code
share one implementation.
"""
from dataclasses import dataclass
import warnings

import numpy as np
import torch

from .errors import DomainError

TWO_PI = 2.0 * np.pi
AMPLITUDE_EPS = 1e-8
MAX_FREQUENCY = 0.5 - 1e-6


class _NumpyOps:
    sin = staticmethod(np.sin)
    cos = staticmethod(np.cos)
    atan2 = staticmethod(np.arctan2)
    hypot = staticmethod(np.hypot)
    floor = staticmethod(np.floor)
    where = staticmethod(np.where)

    @staticmethod
    def stack(xs):
        return np.stack(xs, axis=-1)


class _TorchOps:
    sin = staticmethod(torch.sin)
    cos = staticmethod(torch.cos)
    atan2 = staticmethod(torch.atan2)
    hypot = staticmethod(torch.hypot)
    floor = staticmethod(torch.floor)

    @staticmethod
    def where(cond, a, b):
        return torch.where(cond, a, b)

    @staticmethod
    def stack(xs):
        return torch.stack(xs, dim=-1)


def _ops(*xs):
    return _TorchOps if any(isinstance(x, torch.Tensor) for x in xs) else _NumpyOps


def _pairs(theta):
    return theta.reshape(theta.shape[:-1] + (theta.shape[-1] // 2, 2))


def _flatten(pairs):
    return pairs.reshape(pairs.shape[:-2] + (pairs.shape[-2] * 2,))


def wrap01(x):
    """Map angles in cycles to [0, 1)."""
    ops = _ops(x)
    s = x - ops.floor(x)
    # x slightly below an integer can round to exactly 1.0
    return ops.where(s >= 1.0, s - 1.0, s)


def compose(amplitude, angle):
    """Build a phase vector from amplitudes ``A >= 0`` and angles ``S`` (cycles)."""
    ops = _ops(amplitude, angle)
    if ops is _TorchOps:
        ref = amplitude if isinstance(amplitude, torch.Tensor) else angle
        amplitude = torch.as_tensor(amplitude, dtype=ref.dtype)
        angle = torch.as_tensor(angle, dtype=ref.dtype)
        negative = bool((amplitude < 0).any())
    else:
        amplitude = np.asarray(amplitude, dtype=float)
        angle = np.asarray(angle, dtype=float)
        negative = bool(np.any(amplitude < 0))
    if negative:
        raise DomainError("phase amplitudes must be nonnegative")
    ang = TWO_PI * angle
    return _flatten(ops.stack([amplitude * ops.sin(ang), amplitude * ops.cos(ang)]))


def decompose(theta):
    """Invert :func:`compose`: returns ``(A, S)`` with ``S`` in [0, 1).

    Channels with amplitude below 1e-8 report angle 0.
    """
    ops = _ops(theta)
    if ops is _NumpyOps:
        theta = np.asarray(theta, dtype=float)
    p = _pairs(theta)
    s, c = p[..., 0], p[..., 1]
    amp = ops.hypot(s, c)
    ang = wrap01(ops.atan2(s, c) / TWO_PI)
    ang = ops.where(amp < AMPLITUDE_EPS, ang * 0.0, ang)
    return amp, ang


def phase_velocity(angle, prev_angle):
    """Wrapped per-frame angle change in [-0.5, 0.5)."""
    ops = _ops(angle, prev_angle)
    d = angle - prev_angle
    return d - ops.floor(d + 0.5)


def rotate(theta, cycles):
    """Advance each channel's angle by ``cycles`` (amplitude unchanged)."""
    ops = _ops(theta, cycles)
    p = _pairs(theta)
    s, c = p[..., 0], p[..., 1]
    phi = TWO_PI * cycles
    cp, sp = ops.cos(phi), ops.sin(phi)
    return _flatten(ops.stack([s * cp + c * sp, -s * sp + c * cp]))


def advance(theta, frequency, dt, amplitude, mode="replace"):
    """Rotate ``theta`` by ``2pi dt F`` per channel, then apply amplitude ``A``.

    ``mode="replace"`` renormalizes each rotated pair to ``A``. ``"multiply"``
    is the literal ``A * (R theta)`` reading, kept for comparison; it compounds
    amplitudes across frames.
    """
    if not np.all(np.asarray(dt) > 0):
        raise DomainError("dt must be positive")
    ops = _ops(theta, frequency, amplitude)
    if ops is _NumpyOps:
        theta = np.asarray(theta, dtype=float)
        frequency = np.asarray(frequency, dtype=float)
        amplitude = np.asarray(amplitude, dtype=float)
    rotated = rotate(theta, frequency * dt)
    p = _pairs(rotated)
    if mode == "multiply":
        return _flatten(p * amplitude[..., None])
    if mode != "replace":
        raise ValueError(f"unknown amplitude mode {mode!r}")
    norm = ops.hypot(p[..., 0], p[..., 1])
    degenerate = norm < AMPLITUDE_EPS
    safe = ops.where(degenerate, norm * 0.0 + 1.0, norm)
    unit = p / safe[..., None]
    # zero-amplitude input: treat its angle as 0, so the rotated angle is F*dt
    phi = TWO_PI * frequency * dt
    fallback = ops.stack([ops.sin(phi) + 0.0 * norm, ops.cos(phi) + 0.0 * norm])
    unit = ops.where(degenerate[..., None], fallback, unit)
    return _flatten(unit * amplitude[..., None])


def blend(theta_a, theta_b):
    """Half-way blend of two phase vectors.

    Directions are slerped at weight 0.5 along the shortest arc and amplitudes
    are averaged. When the directions are exactly opposite the result sits a
    quarter cycle ahead of ``theta_a``, i.e. on the way from ``a`` to ``b``.
    """
    ops = _ops(theta_a, theta_b)
    if ops is _NumpyOps:
        theta_a = np.asarray(theta_a, dtype=float)
        theta_b = np.asarray(theta_b, dtype=float)
    pa, pb = _pairs(theta_a), _pairs(theta_b)
    na = ops.hypot(pa[..., 0], pa[..., 1])
    nb = ops.hypot(pb[..., 0], pb[..., 1])
    one = na * 0.0 + 1.0
    ua = pa / ops.where(na < AMPLITUDE_EPS, one, na)[..., None]
    ub = pb / ops.where(nb < AMPLITUDE_EPS, one, nb)[..., None]
    ua = ops.where((na < AMPLITUDE_EPS)[..., None], ub, ua)
    ub = ops.where((nb < AMPLITUDE_EPS)[..., None], ua, ub)
    mid = ua + ub
    nm = ops.hypot(mid[..., 0], mid[..., 1])
    antipodal = nm < AMPLITUDE_EPS
    quarter = ops.stack([ua[..., 1], -ua[..., 0]])
    both_zero = (na < AMPLITUDE_EPS) & (nb < AMPLITUDE_EPS)
    origin = ops.stack([na * 0.0, one])
    direction = ops.where(antipodal[..., None], quarter,
                          mid / ops.where(antipodal, one, nm)[..., None])
    direction = ops.where(both_zero[..., None], origin, direction)
    return _flatten(direction * (0.5 * (na + nb))[..., None])


@dataclass
class ScaledPhase:
    theta: object
    amplitude: object
    angle: object
    frequency: object
    clamped: bool


def scale(prev_theta, theta, amp_factor=1.0, freq_factor=1.0, part_mask=None):
    """Scale amplitude and frequency of selected body parts.

    ``prev_theta`` and ``theta`` are consecutive body phases ``(..., n, 2m)``.
    For parts in ``part_mask`` (indices, or a boolean array over parts) the
    amplitude is multiplied by ``amp_factor`` and the per-frame angle step
    ``F = phase_velocity(S, S_prev)`` by ``freq_factor``; the new angle is
    ``S_prev + freq_factor * F``. Other parts pass through untouched. Scaled
    frequencies are clamped below the Nyquist limit with a warning.
    """
    if amp_factor <= 0 or freq_factor <= 0:
        raise DomainError("scale factors must be positive")
    is_torch = isinstance(theta, torch.Tensor)
    n = theta.shape[-2]
    mask = np.zeros(n, dtype=bool)
    if part_mask is not None:
        pm = np.asarray(part_mask)
        if pm.dtype == bool:
            mask[:] = pm
        elif pm.size:
            mask[pm.astype(int)] = True

    amp, ang = decompose(theta)
    _, prev_ang = decompose(prev_theta)
    freq = phase_velocity(ang, prev_ang)
    if not mask.any() or (amp_factor == 1.0 and freq_factor == 1.0):
        return ScaledPhase(theta, amp, ang, freq, False)

    sel = torch.as_tensor(mask) if is_torch else mask
    clamped = False
    if freq_factor == 1.0:
        new_theta = theta * amp_factor
        new_amp, new_ang, new_freq = amp * amp_factor, ang, freq
    else:
        new_freq = freq * freq_factor
        over = np.abs(new_freq.detach().numpy() if is_torch else new_freq) >= 0.5
        over &= np.broadcast_to(mask[:, None], over.shape)
        if over.any():
            clamped = True
            warnings.warn("scaled phase frequency clamped below Nyquist", RuntimeWarning)
            new_freq = new_freq.clamp(-MAX_FREQUENCY, MAX_FREQUENCY) if is_torch \
                else np.clip(new_freq, -MAX_FREQUENCY, MAX_FREQUENCY)
        new_amp = amp * amp_factor
        new_ang = wrap01(prev_ang + new_freq)
        new_theta = compose(new_amp, new_ang)

    sel_v = sel[:, None]
    out_theta = torch.where(sel_v, new_theta, theta) if is_torch else np.where(sel_v, new_theta, theta)
    where = torch.where if is_torch else np.where
    return ScaledPhase(
        out_theta,
        where(sel_v, new_amp, amp),
        where(sel_v, new_ang, ang),
        where(sel_v, new_freq, freq),
        clamped,
    )
