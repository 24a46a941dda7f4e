"""Autoregressive motion sampler.

Each step an LSTM reads the current state, the target, a style code and the
remaining time. It emits the control code ``z`` plus per-part phase
predictions ``(theta_hat, A_hat, F_hat)``. The next body phase is the
half-way blend of ``theta_hat`` with the current phase advanced by
``F_hat``. A frozen :class:`~partphase.moe.BPMoE` then turns ``(z, state,
phase)`` into the next frame.
"""
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import torch
from torch import nn
import torch.nn.functional as nnf

from .errors import RuntimeFault, ShapeError
from .moe import PLU, foot_velocity_loss
from .phase import advance, blend, decompose, phase_velocity

MIN_STYLE_FRAMES = 30


class PhaseStyleEncoder(nn.Module):
    """Style code from per-part phase sequences ``(batch, T_s, n, 2m)``."""

    def __init__(self, n_parts, channels, style_dim=512, hidden=64, kernel=5, min_frames=MIN_STYLE_FRAMES):
        super().__init__()
        self.min_frames = min_frames
        self.parts = nn.ModuleList(
            nn.Sequential(nn.Conv1d(2 * channels, hidden, kernel, padding=kernel // 2), nn.ELU(),
                          nn.Conv1d(hidden, hidden, kernel, padding=kernel // 2), nn.ELU())
            for _ in range(n_parts))
        self.project = nn.Conv1d(n_parts * hidden, style_dim, 1)

    def forward(self, phases):
        if phases.shape[1] < self.min_frames:
            raise ShapeError(f"style exemplar needs at least {self.min_frames} frames, got {phases.shape[1]}")
        x = phases.permute(0, 2, 3, 1)  # (batch, n, 2m, T)
        h = torch.cat([enc(x[:, i]) for i, enc in enumerate(self.parts)], dim=1)
        return self.project(h).mean(dim=-1)


class MotionStyleEncoder(nn.Module):
    """Ablation: style code from the raw (normalized) state sequence ``(batch, T_s, C)``."""

    def __init__(self, state_dim, style_dim=512, hidden=64, kernel=5, min_frames=MIN_STYLE_FRAMES):
        super().__init__()
        self.min_frames = min_frames
        self.net = nn.Sequential(nn.Conv1d(state_dim, hidden, kernel, padding=kernel // 2), nn.ELU(),
                                 nn.Conv1d(hidden, hidden, kernel, padding=kernel // 2), nn.ELU(),
                                 nn.Conv1d(hidden, style_dim, 1))

    def forward(self, states):
        if states.shape[1] < self.min_frames:
            raise ShapeError(f"style exemplar needs at least {self.min_frames} frames, got {states.shape[1]}")
        return self.net(states.transpose(1, 2)).mean(dim=-1)


def time_embedding(remaining, duration, dim=32):
    """``[remaining / duration, sinusoidal(remaining)]`` of width ``dim + 1``."""
    remaining = torch.as_tensor(remaining, dtype=torch.float32).reshape(-1, 1)
    duration = torch.as_tensor(duration, dtype=torch.float32).reshape(-1, 1)
    i = torch.arange(dim // 2, dtype=torch.float32)
    freq = torch.pow(10000.0, -2.0 * i / dim)
    ang = remaining * freq
    return torch.cat([remaining / duration, torch.sin(ang), torch.cos(ang)], dim=-1)


@dataclass
class SamplerState:
    h: torch.Tensor
    c: torch.Tensor
    frame: int = 0


class MotionSampler(nn.Module):
    def __init__(self, state_dim, n_parts, channels, latent=32, lstm_hidden=1024, style_dim=512,
                 encoder_hidden=512, encoder_out=256, decoder_hidden=(512, 256), style_encoder="phase",
                 time_dim=32, amplitude_mode="replace"):
        super().__init__()
        self.state_dim, self.n_parts, self.channels = state_dim, n_parts, channels
        self.phase_dim = n_parts * 2 * channels
        self.latent, self.time_dim, self.amplitude_mode = latent, time_dim, amplitude_mode
        self.style_kind = style_encoder
        if style_encoder == "phase":
            self.style = PhaseStyleEncoder(n_parts, channels, style_dim)
        else:
            self.style = MotionStyleEncoder(state_dim, style_dim)
        self.state_encoder = nn.Sequential(nn.Linear(state_dim + self.phase_dim, encoder_hidden), PLU(),
                                           nn.Linear(encoder_hidden, encoder_out), PLU())
        self.target_encoder = nn.Sequential(nn.Linear(2 * state_dim, encoder_hidden), PLU(),
                                            nn.Linear(encoder_hidden, encoder_out), PLU())
        self.lstm = nn.LSTMCell(2 * encoder_out + style_dim + time_dim + 1, lstm_hidden)
        d1, d2 = decoder_hidden
        self.decoder = nn.Sequential(nn.Linear(lstm_hidden, d1), nn.ELU(), nn.Linear(d1, d2), nn.ELU())
        nm = n_parts * channels
        self.head_z = nn.Linear(d2, latent)
        self.head_theta = nn.Linear(d2, 2 * nm)
        self.head_amp = nn.Linear(d2, nm)
        self.head_freq = nn.Linear(d2, nm)
        self.register_buffer("mean", torch.zeros(state_dim))
        self.register_buffer("std", torch.ones(state_dim))
        self.arch = dict(state_dim=state_dim, n_parts=n_parts, channels=channels, latent=latent,
                         lstm_hidden=lstm_hidden, style_dim=style_dim, encoder_hidden=encoder_hidden,
                         encoder_out=encoder_out, decoder_hidden=list(decoder_hidden), style_encoder=style_encoder,
                         time_dim=time_dim, amplitude_mode=amplitude_mode)

    def norm(self, x):
        return (x - self.mean) / self.std

    def initial_state(self, batch):
        h = torch.zeros(batch, self.lstm.hidden_size)
        return SamplerState(h, h.clone(), 0)

    def encode_style(self, exemplar):
        """Style code from phase sequences ``(batch, T_s, n, 2m)`` (or states for the motion variant)."""
        return self.style(exemplar)

    def step(self, x_t, target, theta_t, style, remaining, duration, state):
        """One sampler step. ``theta_t`` is ``(batch, n, 2m)``.

        Returns ``(out, theta_next, state)`` where ``out`` holds ``z``,
        ``theta_hat``, ``amp``, ``freq`` and the advanced ``theta_tilde``.
        """
        if np.any(np.asarray(remaining) < 1):
            raise ValueError("sampler step needs at least one remaining frame")
        b = x_t.shape[0]
        cur, tgt = self.norm(x_t), self.norm(target)
        e_cur = self.state_encoder(torch.cat([cur, theta_t.reshape(b, -1)], dim=-1))
        e_tgt = self.target_encoder(torch.cat([tgt, tgt - cur], dim=-1))
        emb = time_embedding(torch.as_tensor(remaining).expand(b), torch.as_tensor(duration).expand(b),
                             self.time_dim)
        h, c = self.lstm(torch.cat([e_cur, e_tgt, style, emb], dim=-1), (state.h, state.c))
        d = self.decoder(h)
        shape = (b, self.n_parts, self.channels)
        out = {
            "z": self.head_z(d),
            "theta_hat": self.head_theta(d).reshape(b, self.n_parts, 2 * self.channels),
            "amp": nnf.softplus(self.head_amp(d)).reshape(shape),
            "freq": self.head_freq(d).reshape(shape),
        }
        out["theta_tilde"] = advance(theta_t, out["freq"], 1.0, out["amp"], mode=self.amplitude_mode)
        theta_next = blend(out["theta_tilde"], out["theta_hat"])
        return out, theta_next, SamplerState(h, c, state.frame + 1)


def rollout(bpmoe, sampler, start, target, duration, style, theta0, modulate: Optional[Callable] = None,
            check_nan=True):
    """Autoregressive in-betweening from ``start`` to ``target`` over ``duration`` frames.

    ``start``/``target`` are state batches ``(batch, C)``, ``style`` a style code
    ``(batch, D)`` and ``theta0`` the start phase ``(batch, n, 2m)``. ``modulate``,
    if given, is called as ``modulate(t, theta_prev, theta_next)`` and returns the
    phase handed to the BPMoE; the sampler itself keeps consuming its own
    unmodulated phase. Returns stacked predictions for frames ``1..duration``.
    """
    if duration < 1:
        raise ValueError("duration must be at least 1")
    b = start.shape[0]
    state = sampler.initial_state(b)
    x, theta = start, theta0
    keys = ("z", "theta_hat", "amp", "freq", "theta_tilde")
    trace = {k: [] for k in keys + ("states", "theta", "theta_used")}
    for t in range(duration):
        remaining = duration - t
        out, theta_next, state = sampler.step(x, target, theta, style, remaining, duration, state)
        used = theta_next if modulate is None else modulate(t, theta, theta_next)
        x = bpmoe.predict_next(out["z"], x, used)
        if check_nan and bool(torch.isnan(x).any()):
            raise RuntimeFault(f"NaN state at frame {t + 1}", index=t + 1)
        theta = theta_next
        for k in keys:
            trace[k].append(out[k])
        trace["states"].append(x)
        trace["theta"].append(theta)
        trace["theta_used"].append(used)
    return {k: torch.stack(v, dim=1) for k, v in trace.items()}


def phase_trace(theta, theta0):
    """Per-frame ``(A, S, F)`` of a phase sequence ``(T, n, 2m)`` given the start phase."""
    theta = np.asarray(theta, dtype=float)
    amp, ang = decompose(theta)
    _, prev = decompose(np.concatenate([np.asarray(theta0, dtype=float)[None], theta[:-1]]))
    return {"amplitude": amp, "angle": ang, "frequency": phase_velocity(ang, prev)}


def sampler_loss(pred, gt, start, norm_std, layout, phase_pred=None, phase_gt=None, foot_joints=(3, 4, 7, 8),
                 threshold=2.5, lambda_foot=0.5, lambda_phase=0.5):
    """``(total, components)`` for a batch of rollouts ``pred (batch, T, C)`` vs ``gt``.

    ``L_rec`` is the L1 error in normalized units averaged over frames and
    channels; ``L_last`` the L1 error of the final frame summed over channels.
    ``phase_pred`` holds ``theta``, ``theta_hat``, ``theta_tilde``, ``amp``,
    ``freq``; ``phase_gt`` holds ``theta``, ``amp``, ``freq``.
    """
    diff = (pred - gt) / norm_std
    rec = diff.abs().mean(dim=(-1, -2)).mean()
    last = diff[:, -1].abs().sum(dim=-1).mean()
    prev = torch.cat([start[:, None], pred[:, :-1]], dim=1)
    foot = foot_velocity_loss(pred, prev, gt, layout, foot_joints, threshold, norm_std)
    if phase_pred is not None and lambda_phase > 0:
        sq = (lambda a, b: ((a - b) ** 2).sum(dim=(-1, -2)).mean())
        phase = (sq(phase_gt["amp"], phase_pred["amp"]) + sq(phase_gt["freq"], phase_pred["freq"])
                 + 0.5 * (sq(phase_gt["theta"], phase_pred["theta_hat"])
                          + sq(phase_gt["theta"], phase_pred["theta_tilde"])))
    else:
        phase = torch.zeros((), dtype=pred.dtype)
    total = rec + last + lambda_foot * foot + lambda_phase * phase
    return total, {"rec": rec, "last": last, "foot": foot, "phase": phase}

