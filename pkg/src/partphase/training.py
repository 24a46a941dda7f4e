"""Three-stage training: phase autoencoders, BPMoE, then the motion sampler."""
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import CheckpointError, ConfigError, TrainingError
from .moe import BPMoE, bpmoe_loss
from .pae import PAEConfig, PeriodicAutoencoder, centered_windows, stitched_features
from .phase import decompose, phase_velocity
from .sampler import MotionSampler, rollout, sampler_loss

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    seed: int = 0
    lr: float = 1e-3
    betas: tuple = (0.5, 0.9)
    style_weight_decay: float = 1e-4
    batch_size: int = 32
    clip_norm: float = 5.0
    # stage 0
    pae_window: int = 61
    pae_channels: int = 8
    pae_kernel: int = 25
    pae_epochs: int = 50
    pae_steps: Optional[int] = None  # steps per epoch; None = one pass over all frames
    # stage 1
    moe_epochs: int = 300
    moe_steps: Optional[int] = None
    moe_window: int = 25
    moe_hidden: int = 512
    moe_experts: int = 8
    gate_hidden: int = 64
    latent_dim: int = 32
    encoder_hidden: int = 512
    encoder_out: int = 256
    beta: float = 1e-3
    kl_form: str = "standard"
    z_dropout: float = 0.0
    state_noise: float = 0.0  # std of input-state noise, in normalized units
    rec_reduction: str = "sum"
    max_stride: int = 1  # >1: some stage-1 pairs skip frames, see train_bpmoe
    stride_prob: float = 0.5
    foot_joints: tuple = (3, 4, 7, 8)
    foot_height: float = 2.5
    # stage 2
    sampler_epochs: int = 150
    sampler_steps: Optional[int] = None
    curriculum_start: int = 20
    curriculum_end: int = 40
    lstm_hidden: int = 1024
    style_dim: int = 512
    style_window: int = 30
    style_encoder: str = "phase"
    lambda_foot: float = 0.5
    lambda_phase: float = 0.5
    amplitude_mode: str = "replace"
    divergence_factor: float = 10.0

    def __post_init__(self):
        self.betas = tuple(self.betas)
        self.foot_joints = tuple(self.foot_joints)
        if self.curriculum_start > self.curriculum_end:
            raise ConfigError("curriculum start must not exceed its end")
        if self.style_encoder not in ("phase", "motion"):
            raise ConfigError(f"unknown style encoder {self.style_encoder!r}")
        if self.kl_form not in ("standard", "printed"):
            raise ConfigError(f"unknown KL form {self.kl_form!r}")

    @classmethod
    def full(cls, **kw):
        return cls(**kw)

    @classmethod
    def toy(cls, **kw):
        base = dict(pae_epochs=30, pae_steps=60, moe_epochs=60, moe_steps=40, moe_hidden=128,
                    encoder_hidden=128, encoder_out=64, gate_hidden=32, sampler_epochs=60, sampler_steps=20,
                    lstm_hidden=128, style_dim=64)
        base.update(kw)
        return cls(**base)

    def pae_config(self):
        return PAEConfig(window=self.pae_window, channels=self.pae_channels, kernel=self.pae_kernel)

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        d["foot_joints"] = list(self.foot_joints)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def curriculum_length(fraction, start=20, end=40):
    """Rollout length at a training-progress fraction in [0, 1], linear from start to end."""
    fraction = min(max(float(fraction), 0.0), 1.0)
    return int(round(start + (end - start) * fraction))


def make_optimizer(params, config, weight_decay=0.0):
    return torch.optim.Adam(params, lr=config.lr, betas=config.betas, amsgrad=True, weight_decay=weight_decay)


def seed_everything(seed):
    torch.manual_seed(seed)
    return np.random.default_rng(seed)


def module_hash(module):
    h = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


class LossLog:
    """Collects per-step loss records and optionally appends them to a JSONL file."""

    def __init__(self, stage, path=None):
        self.stage = stage
        self.path = path
        self.records = []
        self.t0 = time.time()

    def add(self, epoch, step, total, components=None, raw=None):
        rec = {"stage": self.stage, "epoch": epoch, "step": step, "total": float(total),
               "components": {k: float(v) for k, v in (components or {}).items()},
               "raw": dict(raw or {}), "wall": round(time.time() - self.t0, 4)}
        self.records.append(rec)
        if self.path:
            with open(self.path, "a") as f:
                f.write(json.dumps(rec) + "\n")
        return rec

    def epoch_means(self, key="total"):
        by = {}
        for r in self.records:
            by.setdefault(r["epoch"], []).append(r[key] if key == "total" else r["components"][key])
        return [float(np.mean(by[e])) for e in sorted(by)]


class DivergenceGuard:
    def __init__(self, factor):
        self.factor = factor
        self.initial = None

    def check(self, value, where):
        if not np.isfinite(value):
            raise TrainingError(f"non-finite loss at {where}")
        if self.initial is None:
            self.initial = max(value, 1e-12)
        elif value > self.factor * self.initial:
            raise TrainingError(f"loss diverged at {where}: {value:.4g} > {self.factor}x initial {self.initial:.4g}")


# ---------------------------------------------------------------- stage 0

def _feature_stats(seqs):
    cat = np.concatenate(seqs)
    return cat.mean(axis=0), cat.std(axis=0)


def train_phase_autoencoders(dataset, partition, config=None, log_path=None, models=None):
    """Train one periodic autoencoder per body part. Returns ``(models, LossLog)``."""
    config = config or TrainConfig()
    rng = seed_everything(config.seed)
    stitched = stitched_features(dataset, partition)
    if not stitched:
        raise TrainingError("dataset holds no clips")
    losses = LossLog("phase", log_path)
    pcfg = config.pae_config()
    if models is None:
        models = []
        for i in range(partition.n_parts):
            seqs = [s[0][i] for s in stitched]
            model = PeriodicAutoencoder(seqs[0].shape[1], pcfg, part=i)
            model.set_normalization(*_feature_stats(seqs))
            models.append(model)
    lengths = np.array([s[0][0].shape[0] for s in stitched])
    total_frames = int(lengths.sum())
    steps = config.pae_steps or max(1, total_frames // config.batch_size)
    opts = [make_optimizer(m.parameters(), config) for m in models]
    guard = DivergenceGuard(config.divergence_factor)
    for epoch in range(config.pae_epochs):
        for step in range(steps):
            seq_ix = rng.choice(len(stitched), size=config.batch_size, p=lengths / total_frames)
            centers = [int(rng.integers(lengths[s])) for s in seq_ix]
            comps = {}
            for i, (model, opt) in enumerate(zip(models, opts)):
                model.train()
                x = np.stack([centered_windows(stitched[s][0][i], pcfg.window, [c])[0]
                              for s, c in zip(seq_ix, centers)])
                x = model.normalize(torch.as_tensor(x, dtype=torch.float32))
                recon = model(x)[0]
                loss = torch.mean((recon - x) ** 2)
                opt.zero_grad()
                loss.backward()
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.clip_norm)
                opt.step()
                comps[f"part{i}"] = loss.item()
            total = sum(comps.values())
            guard.check(total, f"phase epoch {epoch} step {step}")
            losses.add(epoch, step, total, components=comps)
    for m in models:
        m.eval()
    return models, losses


# ---------------------------------------------------------------- stage 1

def _phase_windows(dataset, partition, phase_models):
    if dataset.phases is not None:
        return dataset.phases
    if phase_models is None:
        raise TrainingError("BPMoE training needs trained phase autoencoders (stage 'phase') "
                            "or a dataset with precomputed phases")
    from .pae import dataset_phases
    return dataset_phases(dataset, partition, phase_models)


def build_bpmoe(dataset, partition, config):
    model = BPMoE(dataset.skeleton.joint_count, partition.n_parts, config.pae_channels, config.latent_dim,
                  config.moe_hidden, config.moe_experts, config.gate_hidden, config.encoder_hidden,
                  config.encoder_out)
    model.norm.fit(dataset.states())
    return model


def train_bpmoe(dataset, partition, phase_models=None, config=None, log_path=None, model=None):
    """Teacher-forced next-frame training on random short windows. Returns ``(model, LossLog)``."""
    config = config or TrainConfig()
    rng = seed_everything(config.seed)
    phases = _phase_windows(dataset, partition, phase_models)
    if model is None:
        model = build_bpmoe(dataset, partition, config)
    states = torch.as_tensor(dataset.states(), dtype=torch.float32)
    phases = torch.as_tensor(phases, dtype=torch.float32)
    n, length = states.shape[:2]
    win = min(config.moe_window, length)
    steps = config.moe_steps or max(1, n // config.batch_size)
    opt = make_optimizer(model.parameters(), config)
    losses = LossLog("bpmoe", log_path)
    guard = DivergenceGuard(config.divergence_factor)
    for epoch in range(config.moe_epochs):
        for step in range(steps):
            w = torch.as_tensor(rng.integers(n, size=config.batch_size))
            s = rng.integers(length - win + 1, size=config.batch_size)
            # stride augmentation: pair frame t with t + r so a phase running ahead maps to a larger step
            r = np.ones(config.batch_size, dtype=int)
            if config.max_stride > 1:
                jump = rng.random(config.batch_size) < config.stride_prob
                r[jump] = rng.integers(2, config.max_stride + 1, size=int(jump.sum()))
            pairs = win - config.max_stride
            t0 = torch.as_tensor(s[:, None] + np.arange(pairs)[None, :])
            t1 = t0 + torch.as_tensor(r)[:, None]
            x_t = states[w[:, None], t0].reshape(-1, states.shape[-1])
            x_next = states[w[:, None], t1].reshape(-1, states.shape[-1])
            ph_next = phases[w[:, None], t1].reshape((-1,) + phases.shape[2:])
            model.train()
            mu, logvar, z = model.encode_transition(x_t, x_next)
            if config.z_dropout > 0:
                keep = torch.as_tensor(rng.random(z.shape[0]) >= config.z_dropout, dtype=z.dtype)[:, None]
                z = z * keep
            x_in = x_t
            if config.state_noise > 0:
                noise = torch.as_tensor(rng.normal(scale=config.state_noise, size=tuple(x_t.shape)), dtype=x_t.dtype)
                x_in = x_t + noise * model.norm.std
            pred = model.predict_next(z, x_in, ph_next)
            total, comps = bpmoe_loss(pred, x_next, mu, logvar, x_t, model.layout, model.norm,
                                      config.foot_joints, config.foot_height, config.beta, config.kl_form,
                                      config.rec_reduction)
            opt.zero_grad()
            total.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.clip_norm)
            opt.step()
            guard.check(total.item(), f"bpmoe epoch {epoch} step {step}")
            losses.add(epoch, step, total.item(), components={"rec": comps["rec"].item(),
                       "kl": config.beta * comps["kl"].item(), "foot": comps["foot"].item()},
                       raw={"kl": comps["kl"].item()})
    model.eval()
    return model, losses


# ---------------------------------------------------------------- stage 2

def build_sampler(dataset, partition, config):
    model = MotionSampler(dataset.skeleton.joint_count * 12, partition.n_parts, config.pae_channels,
                          config.latent_dim, config.lstm_hidden, config.style_dim, config.encoder_hidden,
                          config.encoder_out, (config.encoder_hidden, config.encoder_out), config.style_encoder,
                          amplitude_mode=config.amplitude_mode)
    return model


def sampler_optimizer(model, config):
    style = list(model.style.parameters())
    ids = {id(p) for p in style}
    rest = [p for p in model.parameters() if id(p) not in ids]
    return torch.optim.Adam([{"params": rest, "weight_decay": 0.0},
                             {"params": style, "weight_decay": config.style_weight_decay}],
                            lr=config.lr, betas=config.betas, amsgrad=True)


def phase_targets(theta, theta_prev):
    """Ground-truth ``theta``, ``amp`` and wrapped ``freq`` for phase sequences (torch)."""
    amp, ang = decompose(theta)
    _, prev = decompose(theta_prev)
    return {"theta": theta, "amp": amp, "freq": phase_velocity(ang, prev)}


def style_input(sampler, states, phases):
    """Exemplar tensor for the sampler's style encoder."""
    return phases if sampler.style_kind == "phase" else sampler.norm(states)


def train_sampler(dataset, partition, bpmoe, phase_models=None, config=None, log_path=None, model=None,
                  style_pairs=None):
    """Train the sampler through the frozen BPMoE on curriculum-length rollouts.

    Returns ``(model, LossLog)``. Raises :class:`TrainingError` if the BPMoE
    weights change.
    """
    if bpmoe is None:
        raise TrainingError("sampler training needs a trained BPMoE checkpoint (stage 'bpmoe')")
    config = config or TrainConfig()
    rng = seed_everything(config.seed)
    phases = torch.as_tensor(_phase_windows(dataset, partition, phase_models), dtype=torch.float32)
    states = torch.as_tensor(dataset.states(), dtype=torch.float32)
    n, length = states.shape[:2]
    bpmoe.eval()
    bpmoe.requires_grad_(False)
    frozen = module_hash(bpmoe)
    if model is None:
        model = build_sampler(dataset, partition, config)
        model.mean.copy_(bpmoe.norm.mean)
        model.std.copy_(bpmoe.norm.std)
    opt = sampler_optimizer(model, config)
    losses = LossLog("sampler", log_path)
    guard = DivergenceGuard(config.divergence_factor)
    steps = config.sampler_steps or max(1, n // config.batch_size)
    ts = config.style_window
    total_steps = max(1, config.sampler_epochs * steps - 1)
    for epoch in range(config.sampler_epochs):
        order = rng.permutation(n)  # reshuffle (clip, exemplar) pairs every epoch
        for step in range(steps):
            progress = (epoch * steps + step) / total_steps
            max_len = min(curriculum_length(progress, config.curriculum_start, config.curriculum_end), length - 1)
            duration = int(rng.integers(min(config.curriculum_start, max_len), max_len + 1))
            pick = order[(step * config.batch_size + np.arange(config.batch_size)) % n]
            w = torch.as_tensor(pick)
            s = torch.as_tensor(rng.integers(length - duration, size=len(pick)))
            e = torch.as_tensor(rng.integers(length - ts + 1, size=len(pick)))
            idx = s[:, None] + torch.arange(duration + 1)[None, :]
            seg = states[w[:, None], idx]
            seg_ph = phases[w[:, None], idx]
            ex_idx = e[:, None] + torch.arange(ts)[None, :]
            style = model.encode_style(style_input(model, states[w[:, None], ex_idx], phases[w[:, None], ex_idx]))
            model.train()
            out = rollout(bpmoe, model, seg[:, 0], seg[:, -1], duration, style, seg_ph[:, 0])
            gt_phase = phase_targets(seg_ph[:, 1:], seg_ph[:, :-1])
            total, comps = sampler_loss(out["states"], seg[:, 1:], seg[:, 0], model.std, bpmoe.layout, out, gt_phase,
                                        config.foot_joints, config.foot_height, config.lambda_foot,
                                        config.lambda_phase)
            opt.zero_grad()
            total.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.clip_norm)
            opt.step()
            guard.check(total.item(), f"sampler epoch {epoch} step {step}")
            losses.add(epoch, step, total.item(), components={
                "rec": comps["rec"].item(), "last": comps["last"].item(),
                "foot": config.lambda_foot * comps["foot"].item(),
                "phase": config.lambda_phase * comps["phase"].item()}, raw={"length": duration})
    model.eval()
    if module_hash(bpmoe) != frozen:
        raise TrainingError("BPMoE weights changed during sampler training")
    return model, losses


# ---------------------------------------------------------------- checkpoints

def save_model(path, component, model, config=None, part=None, training_hash=None, extra=None):
    arch = model.arch if hasattr(model, "arch") else {"input_dim": model.input_dim, **model.config.to_dict()}
    cfg = config.to_dict() if hasattr(config, "to_dict") else (config or {})
    return save_checkpoint(path, component, model.state_dict(), cfg, arch, part, training_hash, extra)


def load_model(path, component):
    state, header = load_checkpoint(path, component)
    arch = dict(header["arch"])
    if component == "phase":
        input_dim = arch.pop("input_dim")
        model = PeriodicAutoencoder(input_dim, PAEConfig(**arch), part=header.get("part"))
    elif component == "bpmoe":
        model = BPMoE(**arch)
    elif component == "sampler":
        arch["decoder_hidden"] = tuple(arch["decoder_hidden"])
        model = MotionSampler(**arch)
    else:
        raise ConfigError(f"unknown component {component!r}")
    try:
        model.load_state_dict(state)
    except RuntimeError as e:
        raise CheckpointError(f"{path}: weights do not fit the recorded architecture") from e
    model.eval()
    return model, header
