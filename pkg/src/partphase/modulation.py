"""Amplitude and frequency control of individual body parts during rollout.

The sampler keeps running on its own phase chain. A :class:`PhaseModulator`
derives, every frame, the phase handed to the BPMoE: masked parts get their
amplitude scaled and their angle advanced by ``freq_factor`` times the
sampler's per-frame phase velocity, accumulated over the rollout.
"""
import csv
import os

import numpy as np
import torch
from scipy.signal import find_peaks

from .errors import ConfigError
from .phase import compose, decompose, scale, wrap01

MEASURES = ("limb-height", "hand-distance", "hand-height")


class PhaseModulator:
    def __init__(self, amp_factor=1.0, freq_factor=1.0, parts=()):
        self.amp_factor, self.freq_factor = float(amp_factor), float(freq_factor)
        self.parts = list(parts)
        self.angle = None  # accumulated modulated angle, (batch, n, m)
        self.clamped = False

    @property
    def identity(self):
        return not self.parts or (self.amp_factor == 1.0 and self.freq_factor == 1.0)

    def __call__(self, t, theta_prev, theta_next):
        if self.identity:
            return theta_next
        res = scale(theta_prev, theta_next, self.amp_factor, self.freq_factor, self.parts)
        self.clamped |= res.clamped
        if self.freq_factor == 1.0:
            return res.theta
        if self.angle is None:
            self.angle = decompose(theta_prev)[1]
        mask = torch.zeros(theta_next.shape[-2], dtype=torch.bool)
        mask[self.parts] = True
        mask = mask[:, None]
        # advance from the modulated angle, not from the sampler's
        self.angle = torch.where(mask, wrap01(self.angle + res.frequency), res.angle)
        theta = compose(res.amplitude, self.angle)
        return torch.where(mask, theta.to(theta_next.dtype), theta_next)


def measure(positions, kind, foot_joints=(2, 3, 4, 6, 7, 8), hands=(18, 22), up=1):
    """Per-frame measure of global positions ``(T, B, 3)``.

    ``limb-height``: highest knee/foot joint; ``hand-distance``: distance between
    the two distal upper-limb joints; ``hand-height``: their mean height.
    """
    positions = np.asarray(positions)
    if kind == "limb-height":
        return positions[:, list(foot_joints), up].max(axis=1)
    if kind == "hand-distance":
        return np.linalg.norm(positions[:, hands[0]] - positions[:, hands[1]], axis=-1)
    if kind == "hand-height":
        return positions[:, list(hands), up].mean(axis=1)
    raise ConfigError(f"unknown measure {kind!r}; choose from {MEASURES}")


def first_peak(series, prominence=0.2):
    """Index of the first interior local maximum with prominence of at least
    ``prominence`` times the series range; the arg-max if there is none."""
    s = np.asarray(series, dtype=float)
    span = s.max() - s.min()
    peaks, _ = find_peaks(s, prominence=prominence * span if span > 0 else None)
    if len(peaks) == 0:
        return int(np.argmax(s))
    return int(peaks[0])


@torch.no_grad()
def modulated_rollout(bpmoe, sampler, start, target, duration, style, theta0, amp_factor=1.0, freq_factor=1.0,
                      parts=()):
    """One rollout with ``parts`` modulated; returns ``(states (T, C), positions (T, B, 3))``."""
    from .sampler import rollout
    mod = PhaseModulator(amp_factor, freq_factor, parts)
    out = rollout(bpmoe, sampler, start, target, duration, style, theta0, modulate=mod)
    states = out["states"][0].numpy().astype(np.float64)
    return states, bpmoe.layout.split(states)[0]


def sweep(bpmoe, sampler, start, target, duration, style, theta0, parts, amp_factors=(), freq_factors=(),
          kind="limb-height"):
    """Rollouts for each amplitude factor (frequency 1) and each frequency factor (amplitude 1).

    Returns ``{label: {"states", "positions", "curve", "amp", "freq"}}`` with labels like ``amp=2.5``.
    """
    if kind not in MEASURES:
        raise ConfigError(f"unknown measure {kind!r}; choose from {MEASURES}")
    runs = [(f"amp={a:g}", float(a), 1.0) for a in amp_factors] + [(f"freq={f:g}", 1.0, float(f)) for f in freq_factors]
    res = {}
    for label, a, f in runs:
        if a <= 0 or f <= 0:
            raise ConfigError("modulation factors must be positive")
        states, pos = modulated_rollout(bpmoe, sampler, start, target, duration, style, theta0, a, f, parts)
        res[label] = {"states": states, "positions": pos, "curve": measure(pos, kind), "amp": a, "freq": f}
    return res


def write_curves(path, curves):
    """CSV with one column per factor label: ``frame, <label>...``."""
    labels = list(curves)
    n = max(len(v) for v in curves.values())
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["frame"] + labels)
        for i in range(n):
            w.writerow([i + 1] + [f"{curves[k][i]:.6f}" if i < len(curves[k]) else "" for k in labels])
    return path


def plot_curves(path, curves, ylabel):
    import matplotlib
    matplotlib.use("Agg")
    from matplotlib import pyplot as plt
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for label, v in curves.items():
        ax.plot(np.arange(1, len(v) + 1), v, label=label)
    ax.set_xlabel("frame")
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
