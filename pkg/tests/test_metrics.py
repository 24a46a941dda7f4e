import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from helpers import emd_lp, npss_oracle
from partphase.errors import ShapeError
from partphase.metrics import foot_skate, joint_angles, l2_global, npss, power_spectrum
from partphase.synth import style_spec, synth_motion

signals = arrays(float, (16, 3), elements=st.floats(-3, 3))


class TestNPSS:
    def test_identity(self, rng):
        x = rng.normal(size=(40, 6))
        assert npss(x, x) == 0.0

    def test_adjacent_bins(self):
        t = 32
        n = np.arange(t)
        gt = np.sin(2 * np.pi * 4 * n / t)[:, None]
        pred = np.sin(2 * np.pi * 5 * n / t)[:, None]
        p = np.zeros(t // 2)
        q = np.zeros(t // 2)
        p[3], q[4] = 1, 1  # DC dropped: bin k sits at index k - 1
        assert npss(gt, pred) == pytest.approx(emd_lp(p, q), abs=1e-9)
        assert npss(gt, pred) == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize("seed", range(5))
    def test_random_vs_lp_oracle(self, seed):
        r = np.random.default_rng(seed)
        gt, pred = r.normal(size=(12, 4)), r.normal(size=(12, 4))
        assert npss(gt, pred) == pytest.approx(npss_oracle(gt, pred), abs=1e-9)

    def test_asymmetry_only_in_weights(self, rng):
        a, b = rng.normal(size=(20, 5)), rng.normal(size=(20, 5))
        pa, pb = power_spectrum(a), power_spectrum(b)
        emd = np.array([emd_lp(pa[:, f] / pa[:, f].sum(), pb[:, f] / pb[:, f].sum()) for f in range(5)])
        assert npss(a, b) == pytest.approx(np.sum(emd * pa.sum(0)) / pa.sum(), abs=1e-9)
        assert npss(b, a) == pytest.approx(np.sum(emd * pb.sum(0)) / pb.sum(), abs=1e-9)

    def test_zero_power_feature_skipped(self, rng):
        gt = rng.normal(size=(16, 2))
        gt[:, 1] = 3.0
        pred = gt.copy()
        pred[:, 1] = rng.normal(size=16)
        assert npss(gt, pred) == 0.0

    def test_constant_prediction(self, rng):
        # no predicted power: the whole cumulative ground-truth mass is the distance
        gt = rng.normal(size=(16, 1))
        pg = power_spectrum(gt)[:, 0]
        assert npss(gt, np.full((16, 1), 2.0)) == pytest.approx(np.cumsum(pg / pg.sum()).sum(), abs=1e-12)

    def test_errors(self):
        with pytest.raises(ShapeError):
            npss(np.zeros((10, 2)), np.zeros((10, 3)))
        with pytest.raises(ShapeError):
            npss(np.zeros((7, 2)), np.zeros((7, 2)))

    @settings(max_examples=40, deadline=None)
    @given(signals, signals, st.floats(-10, 10))
    def test_constant_shift_invariant_and_nonnegative(self, a, b, c):
        # a signal far below eps * |c| is absorbed by the shift and leaves a constant
        assume(np.ptp(b[:, 0]) > 1e-6)
        v = npss(a, b)
        assert v >= 0
        shifted = b.copy()
        shifted[:, 0] += c
        assert npss(a, shifted) == pytest.approx(v, abs=1e-9)


class TestL2:
    def test_identity(self, rng):
        x = rng.normal(size=(5, 23, 3))
        assert l2_global(x, x) == 0.0

    @pytest.mark.parametrize("d", [0.5, -2.0, 1e-3])
    def test_offset(self, rng, d):
        x = rng.normal(size=(7, 23, 3))
        assert l2_global(x, x + d) == pytest.approx(np.sqrt(3 * 23) * abs(d), abs=1e-9)

    def test_loop_oracle(self, rng):
        a, b = rng.normal(size=(9, 23, 3)), rng.normal(size=(9, 23, 3))
        total = 0.0
        for t in range(9):
            total += np.sqrt(sum((a[t, j, k] - b[t, j, k]) ** 2 for j in range(23) for k in range(3)))
        assert l2_global(a, b) == pytest.approx(total / 9, abs=1e-9)

    def test_shape(self):
        with pytest.raises(ShapeError):
            l2_global(np.zeros((3, 2, 3)), np.zeros((4, 2, 3)))


def foot_track(height, frames=5, speed=1.0):
    p = np.zeros((frames, 23, 3))
    p[:, :, 1] = 50.0
    p[:, 3, 0] = speed * np.arange(frames)
    p[:, 3, 1] = height
    return p


class TestSkating:
    @pytest.mark.parametrize("h,w", [(0.0, 1.0), (1.25, 2 - np.sqrt(2)), (2.5, 0.0)])
    def test_weights(self, h, w):
        # one moving foot out of four
        assert foot_skate(foot_track(h)) * 4 == pytest.approx(w, abs=1e-12)

    def test_translation_invariant(self, rng):
        clip = synth_motion(style_spec("walk", 40, rng), seed=0)
        shifted = clip.positions + np.array([13.0, 0.0, -7.5])
        assert foot_skate(shifted) == pytest.approx(foot_skate(clip), abs=1e-9)

    def test_static_zero(self):
        assert foot_skate(foot_track(0.0, speed=0.0)) == 0.0

    def test_unit_scale(self):
        # metres in, centimetre threshold: a foot at 0.0125 m is at H/2
        p = foot_track(0.0125, speed=0.01)
        assert foot_skate(p, unit_scale=100.0) * 4 == pytest.approx(2 - np.sqrt(2), abs=1e-12)


def test_joint_angles_shape_and_zero_npss(rng):
    clip = synth_motion(style_spec("march", 30, rng), seed=1)
    ang = joint_angles(clip)
    assert ang.shape == (30, 69)
    assert np.all(np.abs(np.diff(ang, axis=0)) < np.pi)
    assert npss(ang, ang) == 0.0
