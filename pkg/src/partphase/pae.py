"""Per-body-part periodic autoencoders.

Each body part gets its own autoencoder. A centered window of the part's
features goes through temporal convolutions to ``m`` latent curves. Every
curve is summarized by a differentiable spectrum (frequency ``F``, amplitude
``A``, offset ``B``) and a learned phase angle ``S``. The decoder only sees
the sinusoids ``A sin(2pi (F tau + S)) + B`` rebuilt from those parameters,
which forces the latent space to be periodic.
"""
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
import torch
from torch import nn

from .errors import ShapeError, StructureError
from .phase import AMPLITUDE_EPS, TWO_PI, compose, wrap01
from .skeleton import local_velocity_features


@dataclass
class PAEConfig:
    window: int = 61
    channels: int = 8
    kernel: int = 25
    hidden: Optional[int] = None  # defaults to the part's input width
    fps: float = 30.0

    def __post_init__(self):
        if self.window % 2 == 0:
            raise ShapeError("the autoencoder window must have odd length")
        if self.window < 8:
            raise ShapeError("the autoencoder window needs at least 8 frames")
        if self.channels < 1:
            raise ShapeError("need at least one latent channel")

    def to_dict(self):
        return asdict(self)


def fft_params(curves):
    """Spectral summary of latent curves ``(..., m, T)``.

    Returns ``(F, A, B)``: the power-weighted mean frequency (cycles/frame) over
    nonzero bins, the amplitude ``2 sqrt(sum of nonzero-bin power) / T`` and the
    mean. Fully differentiable.
    """
    t = curves.shape[-1]
    if t < 8:
        raise ShapeError("spectral parameters need at least 8 samples")
    spec = torch.fft.rfft(curves, dim=-1)
    power = spec.real ** 2 + spec.imag ** 2
    power = power[..., 1:]
    freqs = torch.fft.rfftfreq(t, dtype=curves.dtype, device=curves.device)[1:]
    total = power.sum(dim=-1)
    freq = (power * freqs).sum(dim=-1) / (total + 1e-12)
    amp = 2.0 * torch.sqrt(total + 1e-12) / t
    # amplitude is defined by the spectrum; the small floor only guards the sqrt gradient
    amp = (amp - 2.0 * np.sqrt(1e-12) / t).clamp(min=0.0)
    offset = curves.mean(dim=-1)
    return freq, amp, offset


def phase_angle(projection):
    """Angle ``atan2(y0, y1) / 2pi`` in [0, 1) from projections ``(..., 2)``."""
    return wrap01(torch.atan2(projection[..., 0], projection[..., 1]) / TWO_PI)


def time_grid(window, dtype=torch.float32):
    """Frame offsets relative to the window center."""
    half = (window - 1) / 2
    return torch.arange(window, dtype=dtype) - half


def parametric_curves(freq, amp, offset, angle, tau):
    """``A sin(2pi (F tau + S)) + B`` for channels ``(..., m)`` on grid ``tau`` -> ``(..., m, T)``."""
    arg = TWO_PI * (freq[..., None] * tau + angle[..., None])
    return amp[..., None] * torch.sin(arg) + offset[..., None]


class PeriodicAutoencoder(nn.Module):
    """Autoencoder for one body part; input windows are ``(batch, D, T_w)``."""

    def __init__(self, input_dim, config=None, part=0):
        super().__init__()
        self.config = config or PAEConfig()
        self.input_dim = int(input_dim)
        self.part = part
        c = self.config
        hidden = c.hidden or self.input_dim
        pad = (c.kernel - 1) // 2
        self.encoder = nn.Sequential(
            nn.Conv1d(self.input_dim, hidden, c.kernel, padding=pad),
            nn.ELU(),
            nn.Conv1d(hidden, c.channels, c.kernel, padding=pad),
        )
        # one (T_w -> 2) projection per channel
        self.phase_weight = nn.Parameter(torch.randn(c.channels, 2, c.window) / np.sqrt(c.window))
        self.phase_bias = nn.Parameter(torch.zeros(c.channels, 2))
        self.decoder = nn.Sequential(
            nn.Conv1d(c.channels, hidden, c.kernel, padding=pad),
            nn.ELU(),
            nn.Conv1d(hidden, self.input_dim, c.kernel, padding=pad),
        )
        self.register_buffer("tau", time_grid(c.window))
        self.register_buffer("mean", torch.zeros(self.input_dim))
        self.register_buffer("std", torch.ones(self.input_dim))

    def set_normalization(self, mean, std):
        self.mean.copy_(torch.as_tensor(mean, dtype=self.mean.dtype))
        self.std.copy_(torch.as_tensor(np.maximum(std, 1e-6), dtype=self.std.dtype))

    def normalize(self, x):
        return (x - self.mean[:, None]) / self.std[:, None]

    def _check(self, x):
        if x.dim() != 3 or x.shape[1] != self.input_dim or x.shape[2] != self.config.window:
            raise ShapeError(f"expected windows (batch, {self.input_dim}, {self.config.window}), "
                             f"got {tuple(x.shape)}")

    def encode(self, x):
        """Normalized windows -> latent curves ``(batch, m, T_w)``."""
        self._check(x)
        return self.encoder(x)

    def params(self, latent):
        freq, amp, offset = fft_params(latent)
        proj = torch.einsum("bmt,mkt->bmk", latent, self.phase_weight) + self.phase_bias
        return {"F": freq, "A": amp, "B": offset, "S": phase_angle(proj)}

    def decode(self, params):
        curves = parametric_curves(params["F"], params["A"], params["B"], params["S"], self.tau)
        return self.decoder(curves), curves

    def forward(self, x):
        latent = self.encode(x)
        p = self.params(latent)
        recon, curves = self.decode(p)
        return recon, latent, curves, p


def part_features(clip, joints):
    """Autoencoder input for one part: local joint velocities ``(T, 3 * len(joints))``."""
    return local_velocity_features(clip, list(joints))


def centered_windows(seq, window, centers=None):
    """Windows ``(len(centers), D, window)`` around each center with clamped edges."""
    seq = np.asarray(seq)
    t = seq.shape[0]
    half = window // 2
    if centers is None:
        centers = np.arange(t)
    idx = np.clip(np.asarray(centers)[:, None] + np.arange(-half, half + 1)[None, :], 0, t - 1)
    return np.transpose(seq[idx], (0, 2, 1))


def stitched_features(dataset, partition):
    """Reassemble per-clip feature sequences from overlapping dataset windows.

    The features are yaw- and root-invariant, so windows that were facing
    normalized independently still line up. Returns a list of
    ``(features per part, [(window index, frame range in window, range in sequence)])``.
    """
    out = []
    for group in dataset.clip_groups():
        per_part = [[] for _ in partition.groups]
        spans = []
        pos = None
        for w in group:
            clip = dataset.window(w)
            start = int(dataset.records[w].get("start", 0))
            first = 0 if pos is None else max(0, pos - start)
            if pos is not None and start > pos:
                raise StructureError("dataset windows of one clip leave a gap")
            length = clip.n_frames - first
            if length <= 0:
                continue
            seq_start = 0 if pos is None else sum(len(x) for x in per_part[0])
            for i, g in enumerate(partition.groups):
                per_part[i].append(part_features(clip, g)[first:])
            spans.append((w, (first, clip.n_frames), (seq_start, seq_start + length)))
            pos = start + clip.n_frames
        out.append(([np.concatenate(p) for p in per_part], spans))
    return out


def _consistent_phase(amp, ang):
    """``(theta, A, S)`` with ``theta == compose(A, S)`` exactly.

    Angles of channels whose amplitude is below the decompose threshold are
    zeroed, matching what :func:`decompose` reports for them.
    """
    ang = np.where(amp < AMPLITUDE_EPS, 0.0, wrap01(ang))
    return compose(amp, ang), amp, ang


@torch.no_grad()
def extract_phase_sequence(source, partition, models, batch=512):
    """Per-frame body phases from a clip (or per-part feature sequences).

    Returns a dict with ``theta (T, n, 2m)``, ``amplitude``, ``frequency``,
    ``angle`` and ``offset`` (each ``(T, n, m)``).
    """
    if hasattr(source, "positions"):
        feats = [part_features(source, g) for g in partition.groups]
    else:
        feats = list(source)
    if len(feats) != len(models):
        raise ShapeError("need one autoencoder per body part")
    t = feats[0].shape[0]
    window = models[0].config.window
    if t < window:
        raise ShapeError(f"sequence of {t} frames is shorter than the {window}-frame phase window")
    cols = {"F": [], "A": [], "B": [], "S": []}
    for f, model in zip(feats, models):
        model.eval()
        res = {k: [] for k in cols}
        for s in range(0, t, batch):
            x = torch.as_tensor(centered_windows(f, window, np.arange(s, min(t, s + batch))),
                                dtype=model.mean.dtype)
            p = model.params(model.encode(model.normalize(x)))
            for k in res:
                res[k].append(p[k].double().numpy())
        for k in cols:
            cols[k].append(np.concatenate(res[k]))
    stack = {k: np.stack(v, axis=1) for k, v in cols.items()}
    theta, amp, ang = _consistent_phase(stack["A"], stack["S"])
    return {"theta": theta, "amplitude": amp, "angle": ang, "frequency": stack["F"], "offset": stack["B"]}


def dataset_phases(dataset, partition, models):
    """Phases for every dataset window ``(N, L, n, 2m)``, extracted on stitched clips."""
    n, length = len(dataset), dataset.positions.shape[1]
    m = models[0].config.channels
    out = np.zeros((n, length, partition.n_parts, 2 * m), dtype=np.float32)
    for feats, spans in stitched_features(dataset, partition):
        theta = extract_phase_sequence(feats, partition, models)["theta"]
        for w, (a, b), (s, e) in spans:
            out[w, a:b] = theta[s:e]
            if a > 0:
                # overlapping head of the window: reuse the earlier frames of the sequence
                out[w, :a] = theta[s - a:s]
    return out


def dominant_channel(amplitude):
    """Index of the channel with the largest mean amplitude, per part. ``(T, n, m) -> (n,)``."""
    return np.argmax(np.asarray(amplitude).mean(axis=0), axis=-1)
