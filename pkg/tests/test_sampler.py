import numpy as np
import pytest
import torch

from partphase.container import build_dataset
from partphase.errors import ShapeError
from partphase.pae import dataset_phases
from partphase.phase import advance, blend, compose, decompose
from partphase.sampler import phase_trace, rollout, sampler_loss, time_embedding
from partphase.skeleton import MotionClip, StateLayout, make_partition, mirror
from partphase.synth import style_spec, synth_motion, synthetic_clips
from partphase.training import train_bpmoe, train_phase_autoencoders, train_sampler

from conftest import tiny_config


def tiny_inputs(tiny, w=0, s=10, d=12):
    states = torch.as_tensor(tiny.ds.states(), dtype=torch.float32)
    phases = torch.as_tensor(tiny.ds.phases, dtype=torch.float32)
    style = tiny.sampler.encode_style(phases[w:w + 1, :30])
    return states[w:w + 1, s], states[w:w + 1, s + d], style, phases[w:w + 1, s], d


class TestStyle:
    def test_short_exemplar(self, tiny):
        with pytest.raises(ShapeError):
            tiny.sampler.encode_style(torch.zeros(1, 29, 2, 8))

    def test_deterministic_and_finite(self, tiny):
        x = torch.as_tensor(tiny.ds.phases[:2, :30], dtype=torch.float32)
        with torch.no_grad():
            a, b = tiny.sampler.encode_style(x), tiny.sampler.encode_style(x)
            z = tiny.sampler.encode_style(torch.zeros(1, 40, 2, 8))
        assert torch.equal(a, b)
        assert a.shape == (2, tiny.cfg.style_dim)
        assert torch.isfinite(z).all()


class TestStep:
    def test_remaining_zero(self, tiny):
        x, tgt, style, th, _ = tiny_inputs(tiny)
        with pytest.raises(ValueError):
            tiny.sampler.step(x, tgt, th, style, 0, 10, tiny.sampler.initial_state(1))

    def test_deterministic(self, tiny):
        x, tgt, style, th, _ = tiny_inputs(tiny)
        s0 = tiny.sampler.initial_state(1)
        with torch.no_grad():
            a = tiny.sampler.step(x, tgt, th, style, 5, 10, s0)
            b = tiny.sampler.step(x, tgt, th, style, 5, 10, s0)
        for k in a[0]:
            assert torch.equal(a[0][k], b[0][k])
        assert torch.equal(a[1], b[1])

    def test_shared_phase_ops(self, tiny):
        x, tgt, style, th, _ = tiny_inputs(tiny)
        with torch.no_grad():
            out, nxt, st = tiny.sampler.step(x, tgt, th, style, 5, 10, tiny.sampler.initial_state(1))
        assert torch.equal(out["theta_tilde"], advance(th, out["freq"], 1.0, out["amp"]))
        assert torch.equal(nxt, blend(out["theta_tilde"], out["theta_hat"]))
        assert torch.all(out["amp"] >= 0) and st.frame == 1

    def test_fixed_point(self):
        # F = 0, theta_hat = theta, A = current amplitude -> theta is unchanged
        th = compose(torch.rand(1, 2, 4, dtype=torch.float64) + 0.1, torch.rand(1, 2, 4, dtype=torch.float64))
        amp, _ = decompose(th)
        tilde = advance(th, torch.zeros_like(amp), 1.0, amp)
        assert torch.allclose(blend(tilde, th), th, atol=1e-12)

    def test_time_embedding(self):
        e = time_embedding(torch.tensor([5.0]), torch.tensor([10.0]), 32)
        assert e.shape == (1, 33)
        assert e[0, 0].item() == pytest.approx(0.5)


class TestRollout:
    def test_duration_one(self, tiny):
        x, tgt, style, th, _ = tiny_inputs(tiny)
        with torch.no_grad():
            out = rollout(tiny.bpmoe, tiny.sampler, x, tgt, 1, style, th)
        assert out["states"].shape == (1, 1, x.shape[-1])
        assert out["theta"].shape == (1, 1, 2, 8)

    @pytest.mark.parametrize("d", [3, 17])
    def test_length(self, tiny, d):
        x, tgt, style, th, _ = tiny_inputs(tiny, d=d)
        with torch.no_grad():
            out = rollout(tiny.bpmoe, tiny.sampler, x, tgt, d, style, th)
        assert all(v.shape[1] == d for v in out.values())

    def test_bit_identical(self, tiny):
        x, tgt, style, th, d = tiny_inputs(tiny)
        with torch.no_grad():
            a = rollout(tiny.bpmoe, tiny.sampler, x, tgt, d, style, th)
            b = rollout(tiny.bpmoe, tiny.sampler, x, tgt, d, style, th)
        assert all(torch.equal(a[k], b[k]) for k in a)

    def test_target_not_overwritten(self, tiny):
        x, tgt, style, th, d = tiny_inputs(tiny)
        with torch.no_grad():
            out = rollout(tiny.bpmoe, tiny.sampler, x, tgt, d, style, th)
        assert not torch.equal(out["states"][0, -1], tgt[0])

    def test_bad_duration(self, tiny):
        x, tgt, style, th, _ = tiny_inputs(tiny)
        with pytest.raises(ValueError):
            rollout(tiny.bpmoe, tiny.sampler, x, tgt, 0, style, th)

    def test_phase_vector_invariant(self, tiny):
        x, tgt, style, th, d = tiny_inputs(tiny)
        with torch.no_grad():
            out = rollout(tiny.bpmoe, tiny.sampler, x, tgt, d, style, th)
        tr = phase_trace(out["theta"][0].numpy(), th[0].numpy())
        pairs = out["theta"][0].double().numpy().reshape(d, 2, 4, 2)
        np.testing.assert_allclose(np.hypot(pairs[..., 0], pairs[..., 1]), tr["amplitude"], atol=1e-12)
        assert np.all(tr["amplitude"] >= 0) and np.all(np.abs(tr["frequency"]) <= 0.5)


class TestLoss:
    def setup_method(self):
        self.lay = StateLayout(23)
        g = torch.Generator().manual_seed(0)
        self.gt = torch.randn(2, 6, self.lay.size, generator=g, dtype=torch.float64)
        # feet well above the contact threshold: foot term is zero
        self.gt[..., self.lay.position_index((3, 4, 7, 8), axes=(1,))] = 100.0
        self.start = torch.randn(2, self.lay.size, generator=g, dtype=torch.float64)
        self.std = torch.ones(self.lay.size, dtype=torch.float64)

    def test_perfect(self):
        total, comps = sampler_loss(self.gt, self.gt, self.start, self.std, self.lay)
        assert total.item() == 0.0

    def test_last_frame_only(self):
        d = torch.zeros(self.lay.size, dtype=torch.float64)
        d[100:110] = torch.linspace(-1, 1, 10, dtype=torch.float64)
        pred = self.gt.clone()
        pred[:, -1] += d
        total, comps = sampler_loss(pred, self.gt, self.start, self.std, self.lay)
        l1 = d.abs().sum().item()
        t_norm = 6 * self.lay.size  # frames x channels averaged by L_rec
        assert total.item() == pytest.approx(l1 * (1 + 1 / t_norm), rel=1e-12)

    def test_normalized_units(self):
        pred = self.gt.clone()
        pred[:, -1, 0] += 3.0
        std = self.std.clone()
        std[0] = 3.0
        _, comps = sampler_loss(pred, self.gt, self.start, std, self.lay)
        assert comps["last"].item() == pytest.approx(1.0)

    def test_lambda_phase_zero_ignores_heads(self):
        g = torch.Generator().manual_seed(1)
        mk = lambda: {k: torch.randn(2, 6, 2, 8 if k.startswith("theta") else 4, generator=g, dtype=torch.float64)
                      for k in ("theta", "theta_hat", "theta_tilde", "amp", "freq")}
        gtp = mk()
        a = sampler_loss(self.gt + 0.1, self.gt, self.start, self.std, self.lay, mk(), gtp, lambda_phase=0.0)[0]
        b = sampler_loss(self.gt + 0.1, self.gt, self.start, self.std, self.lay, mk(), gtp, lambda_phase=0.0)[0]
        assert a.item() == b.item()

    def test_phase_term(self):
        z = torch.zeros(1, 2, 2, 4, dtype=torch.float64)
        one = torch.ones(1, 2, 2, 8, dtype=torch.float64)
        pred = {"theta_hat": one, "theta_tilde": 0 * one, "amp": z + 1, "freq": z}
        gtp = {"theta": 0 * one, "amp": z, "freq": z}
        gt = torch.zeros(1, 2, self.lay.size, dtype=torch.float64)
        gt[..., self.lay.position_index((3, 4, 7, 8), axes=(1,))] = 100.0
        _, comps = sampler_loss(gt, gt, gt[:, 0], self.std, self.lay, pred, gtp)
        # per frame: |A - A_hat|^2 = 2 * 4, 0.5 * |theta - theta_hat|^2 = 0.5 * 2 * 8
        assert comps["phase"].item() == pytest.approx(16.0)


def test_stationary_after_overfit():
    """A sampler overfit on a standing clip keeps the pose when start equals target."""
    spec = style_spec("walk", 240, np.random.default_rng(0))
    spec.amplitude[:] = 0
    spec.root_speed = spec.bob = 0.0
    ds = build_dataset([synth_motion(spec)], "two", length=60, overlap=10, augment_mirror=False)
    part = make_partition("two")
    cfg = tiny_config(pae_epochs=1, moe_epochs=4, moe_steps=10, sampler_epochs=4, sampler_steps=5)
    paes, _ = train_phase_autoencoders(ds, part, cfg)
    ds.phases = dataset_phases(ds, part, paes)
    bpmoe, _ = train_bpmoe(ds, part, config=cfg)
    sampler, _ = train_sampler(ds, part, bpmoe, config=cfg)
    s = torch.as_tensor(ds.states(), dtype=torch.float32)
    p = torch.as_tensor(ds.phases, dtype=torch.float32)
    with torch.no_grad():
        out = rollout(bpmoe, sampler, s[:1, 20], s[:1, 20], 30, sampler.encode_style(p[:1, :30]), p[:1, 20])
    dev = (out["states"][0, :, :69] - s[0, 20, :69]).reshape(30, 23, 3).norm(dim=-1)
    assert dev.max() < 1.0


@pytest.fixture(scope="module")
def held(toy):
    ds = build_dataset(synthetic_clips(clips_per_style=2, frames=400, seed=123), "two")
    ds.phases = dataset_phases(ds, toy.part, toy.paes)
    return ds


class TestTrained:
    """Properties of the toy-scale sampler."""

    def test_style_clusters(self, toy, held):
        p = torch.as_tensor(held.phases, dtype=torch.float32)
        with torch.no_grad():
            codes = torch.nn.functional.normalize(toy.sampler.encode_style(p[:, :30]), dim=-1)
        sim = (codes @ codes.T).numpy()
        lab = np.array([r["style"] for r in held.records])
        same = lab[:, None] == lab[None]
        off = ~np.eye(len(lab), dtype=bool)
        assert sim[same & off].mean() > sim[~same].mean()

    def test_mirror_equivariance(self, toy, held):
        # statistical check: the network is not equivariant by construction
        s = torch.as_tensor(held.states(), dtype=torch.float32)
        p = torch.as_tensor(held.phases, dtype=torch.float32)
        five, sk = make_partition("five"), held.skeleton
        pairs = [(i, i + 1) for i in range(0, len(held) - 1, 2)
                 if held.records[i + 1]["mirrored"] and not held.records[i]["mirrored"]][:20]
        errs = []
        with torch.no_grad():
            for a, b in pairs:
                clips = []
                for w in (a, b):
                    o = rollout(toy.bpmoe, toy.sampler, s[w:w + 1, 30], s[w:w + 1, 60], 30,
                                toy.sampler.encode_style(p[w:w + 1, :30]), p[w:w + 1, 30])
                    clips.append(MotionClip.from_states(o["states"][0].double().numpy(), sk))
                errs.append(np.abs(mirror(clips[0], five).positions - clips[1].positions).mean())
        assert np.median(errs) < 0.01 * sk.height()
