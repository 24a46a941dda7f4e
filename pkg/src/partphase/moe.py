"""Body-part mixture of experts: a residual next-frame predictor.

Eight experts see the normalized state, the flattened body phase and a latent
control code ``z``; a gating network blends them from the phase and ``z``
alone. At training time ``z`` comes from a transition encoder over two
consecutive frames; at inference the motion sampler provides it.
"""
import numpy as np
import torch
from torch import nn
import torch.nn.functional as nnf

from .errors import RuntimeFault, ShapeError
from .rotations import gram_schmidt_6d
from .skeleton import StateLayout


class PLU(nn.Module):
    """Piecewise linear unit: identity in [-c, c], slope ``alpha`` outside."""

    def __init__(self, alpha=0.1, c=1.0):
        super().__init__()
        self.alpha, self.c = alpha, c

    def forward(self, x):
        a, c = self.alpha, self.c
        return torch.maximum(a * (x + c) - c, torch.minimum(a * (x - c) + c, x))


def kl_divergence(mu, logvar, form="standard"):
    """KL term summed over latent dims, averaged over the batch.

    ``"standard"`` is ``-1/2 sum(1 + logvar - mu^2 - exp(logvar))``; ``"printed"``
    substitutes ``logvar^2`` for the entropy term and ``exp(logvar)`` for the variance.
    """
    if form == "standard":
        k = -0.5 * (1 + logvar - mu ** 2 - torch.exp(logvar))
    elif form == "printed":
        k = -0.5 * (1 + logvar ** 2 - mu ** 2 - torch.exp(logvar))
    else:
        raise ValueError(f"unknown KL form {form!r}")
    return k.sum(dim=-1).mean()


def contact_weight(height, threshold=2.5):
    """Height-based contact weight ``clamp(2 - 2^(h/H), 0, 2)``."""
    if isinstance(height, torch.Tensor):
        return torch.clamp(2.0 - torch.pow(2.0, height / threshold), 0.0, 2.0)
    # the exponent is capped only to avoid overflow; the weight is already 0 there
    return np.clip(2.0 - np.power(2.0, np.minimum(np.asarray(height) / threshold, 64.0)), 0.0, 2.0)


class StateNormalizer(nn.Module):
    """Per-channel mean/std of states and std of frame-to-frame deltas."""

    def __init__(self, size):
        super().__init__()
        self.register_buffer("mean", torch.zeros(size))
        self.register_buffer("std", torch.ones(size))
        self.register_buffer("delta_std", torch.ones(size))

    def fit(self, states):
        """``states (N, L, C)`` array of windows."""
        s = np.asarray(states, dtype=np.float64)
        d = np.diff(s, axis=1).reshape(-1, s.shape[-1])
        flat = s.reshape(-1, s.shape[-1])
        for buf, val in ((self.mean, flat.mean(0)), (self.std, np.maximum(flat.std(0), 1e-3)),
                         (self.delta_std, np.maximum(np.sqrt((d ** 2).mean(0)), 1e-4))):
            buf.copy_(torch.as_tensor(val, dtype=buf.dtype))
        return self

    def __call__(self, x):
        return (x - self.mean) / self.std


class TransitionEncoder(nn.Module):
    def __init__(self, state_dim, hidden=512, out=256, latent=32):
        super().__init__()
        self.body = nn.Sequential(nn.Linear(2 * state_dim, hidden), PLU(), nn.Linear(hidden, out), PLU())
        self.mu = nn.Linear(out, latent)
        self.logvar = nn.Linear(out, latent)

    def forward(self, x_t, x_next, deterministic=False, eta=None):
        h = self.body(torch.cat([x_t, x_next], dim=-1))
        mu, logvar = self.mu(h), self.logvar(h)
        if deterministic:
            return mu, logvar, mu
        if eta is None:
            eta = torch.randn_like(mu)
        return mu, logvar, mu + torch.exp(0.5 * logvar) * eta


class GatingNetwork(nn.Module):
    def __init__(self, phase_dim, latent=32, hidden=64, experts=8):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(phase_dim + latent, hidden), nn.ELU(), nn.Linear(hidden, experts))

    def logits(self, phase, z):
        return self.net(torch.cat([phase, z], dim=-1))

    def forward(self, phase, z):
        return torch.softmax(self.logits(phase, z), dim=-1)


class ExpertBank(nn.Module):
    """``K`` three-layer ELU networks evaluated together with batched weights."""

    def __init__(self, experts, in_dim, hidden, out_dim):
        super().__init__()
        dims = [in_dim, hidden, hidden, out_dim]
        self.weights = nn.ParameterList()
        self.biases = nn.ParameterList()
        for a, b in zip(dims[:-1], dims[1:]):
            w = torch.empty(experts, a, b)
            for k in range(experts):
                nn.init.kaiming_uniform_(w[k].T, a=np.sqrt(5))
            self.weights.append(nn.Parameter(w))
            self.biases.append(nn.Parameter(torch.zeros(experts, b)))
        self.experts = experts

    def forward(self, x):
        """``x (batch, in) -> (batch, K, out)``."""
        h = x.unsqueeze(1).expand(-1, self.experts, -1)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = torch.einsum("bki,kio->bko", h, w) + b
            if i < last:
                h = nnf.elu(h)
        return h


class BPMoE(nn.Module):
    """Residual predictor ``X^{t+1} = X^t + sum_k w_k Expert_k``."""

    def __init__(self, joints, n_parts, channels, latent=32, hidden=512, experts=8, gate_hidden=64,
                 encoder_hidden=512, encoder_out=256):
        super().__init__()
        self.layout = StateLayout(joints)
        self.state_dim = self.layout.size
        self.phase_dim = n_parts * 2 * channels
        self.n_parts, self.channels, self.latent = n_parts, channels, latent
        self.norm = StateNormalizer(self.state_dim)
        self.encoder = TransitionEncoder(self.state_dim, encoder_hidden, encoder_out, latent)
        self.gate = GatingNetwork(self.phase_dim, latent, gate_hidden, experts)
        self.experts = ExpertBank(experts, self.state_dim + self.phase_dim + latent, hidden, self.state_dim)
        self.arch = dict(joints=joints, n_parts=n_parts, channels=channels, latent=latent, hidden=hidden,
                         experts=experts, gate_hidden=gate_hidden, encoder_hidden=encoder_hidden,
                         encoder_out=encoder_out)

    def _flat_phase(self, phase):
        flat = phase.reshape(phase.shape[:-2] + (-1,)) if phase.dim() >= 3 else phase
        if flat.shape[-1] != self.phase_dim:
            raise ShapeError(f"phase has {flat.shape[-1]} values, expected {self.phase_dim}")
        return flat

    def encode_transition(self, x_t, x_next, deterministic=False, eta=None):
        return self.encoder(self.norm(x_t), self.norm(x_next), deterministic, eta)

    def gate_weights(self, phase, z):
        return self.gate(self._flat_phase(phase), z)

    def expert_outputs(self, z, x_t, phase):
        feats = torch.cat([self.norm(x_t), self._flat_phase(phase), z], dim=-1)
        return self.experts(feats)

    def increment(self, z, x_t, phase, weights=None, outputs=None):
        """Blended, de-normalized state increment."""
        outputs = self.expert_outputs(z, x_t, phase) if outputs is None else outputs
        bad = torch.isnan(outputs)
        if bool(bad.any()):
            k = int(bad.reshape(-1, bad.shape[-2], bad.shape[-1]).any(dim=(0, 2)).nonzero()[0])
            raise RuntimeFault(f"expert {k} produced NaN", index=k)
        weights = self.gate_weights(phase, z) if weights is None else weights
        blended = torch.einsum("bk,bko->bo", weights, outputs)
        # no bias term, so zero expert output is an exact pass-through
        return blended * self.norm.delta_std

    def predict_next(self, z, x_t, phase, weights=None, outputs=None):
        nxt = x_t + self.increment(z, x_t, phase, weights, outputs)
        return self.orthonormalize(nxt)

    def orthonormalize(self, x):
        rot = self.layout.rot
        blocks = x[..., rot].reshape(x.shape[:-1] + (-1, 6))
        fixed = gram_schmidt_6d(blocks).reshape(x.shape[:-1] + (-1,))
        return torch.cat([x[..., :rot.start], fixed, x[..., rot.stop:]], dim=-1)

    def forward(self, x_t, x_next, phase, deterministic=False, eta=None):
        mu, logvar, z = self.encode_transition(x_t, x_next, deterministic, eta)
        return self.predict_next(z, x_t, phase), mu, logvar, z


def foot_velocity_loss(pred, prev, gt, layout, foot_joints, threshold=2.5, std=None):
    """Mean squared contact-weighted horizontal foot velocity of the prediction.

    Velocity is ``p_pred^{t+1} - p^t`` on the ground plane (X, Z); the weight
    comes from the ground-truth foot height at ``t+1``. With ``std`` (per state
    channel) the velocity is measured in units of the position channels' std.
    """
    ix = torch.as_tensor(layout.position_index(foot_joints, axes=(0, 2)))
    iy = torch.as_tensor(layout.position_index(foot_joints, axes=(1,)))
    vel = pred[..., ix] - prev[..., ix]
    if std is not None:
        vel = vel / std[ix]
    vel = vel.reshape(vel.shape[:-1] + (len(foot_joints), 2))
    w = contact_weight(gt[..., iy], threshold)
    return ((vel * w[..., None]) ** 2).sum(dim=(-1, -2)).mean()


def bpmoe_loss(pred, gt, mu, logvar, prev, layout, norm=None, foot_joints=(3, 4, 7, 8), threshold=2.5,
               beta=1e-3, kl_form="standard", reduction="mean"):
    """``(total, components)`` with total ``L_rec + beta L_kl + L_foot``.

    ``L_rec`` is the squared error of the state (in units of the normalizer's
    per-channel std if ``norm`` is given), averaged over channels with
    ``reduction="mean"`` or summed with ``"sum"``, then averaged over the batch.
    ``L_foot`` is reduced the same way over the foot coordinates.
    """
    diff = pred - gt
    if norm is not None:
        diff = diff / norm.std
    sq = diff ** 2
    rec = (sq.mean(dim=-1) if reduction == "mean" else sq.sum(dim=-1)).mean()
    kl = kl_divergence(mu, logvar, kl_form)
    foot = foot_velocity_loss(pred, prev, gt, layout, foot_joints, threshold,
                              None if norm is None else norm.std)
    if reduction == "mean":
        foot = foot / (2 * len(foot_joints))
    total = rec + beta * kl + foot
    return total, {"rec": rec, "kl": kl, "foot": foot}
