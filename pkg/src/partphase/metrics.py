"""Motion quality metrics: NPSS, global-position L2 and foot skating."""
import numpy as np
from scipy.spatial.transform import Rotation

from .errors import ShapeError
from .moe import contact_weight
from .skeleton import DEFAULT_FOOT_JOINTS, UP_AXIS


def _positions(x):
    return np.asarray(x.positions if hasattr(x, "positions") else x, dtype=np.float64)


def power_spectrum(seq):
    """Power of each feature's real FFT with the DC bin dropped. ``(T, F) -> (T//2, F)``."""
    spec = np.fft.rfft(np.asarray(seq, dtype=np.float64), axis=0)[1:]
    return spec.real ** 2 + spec.imag ** 2


def npss(gt, pred):
    """Normalized power spectrum similarity of angle sequences ``(..., T, F)``.

    Leading dimensions are folded into the feature axis. For every feature the
    spectra are normalized to unit mass and compared by the earth mover's
    distance of their cumulative sums; features are weighted by their share of
    the total ground-truth power. Features with no ground-truth power get weight
    zero.
    """
    gt, pred = np.asarray(gt, dtype=np.float64), np.asarray(pred, dtype=np.float64)
    if gt.shape != pred.shape:
        raise ShapeError(f"npss needs equal shapes, got {gt.shape} and {pred.shape}")
    if gt.ndim < 2 or gt.shape[-2] < 8:
        raise ShapeError("npss needs sequences of at least 8 frames")
    t = gt.shape[-2]
    gt = np.moveaxis(gt, -2, 0).reshape(t, -1)
    pred = np.moveaxis(pred, -2, 0).reshape(t, -1)
    pg, pp = power_spectrum(gt), power_spectrum(pred)
    tg, tp = pg.sum(axis=0), pp.sum(axis=0)
    if tg.sum() <= 0:
        return 0.0
    ng = np.divide(pg, tg, out=np.zeros_like(pg), where=tg > 0)
    npred = np.divide(pp, tp, out=np.zeros_like(pp), where=tp > 0)
    emd = np.abs(np.cumsum(ng, axis=0) - np.cumsum(npred, axis=0)).sum(axis=0)
    return float(np.sum(emd * tg) / tg.sum())


def joint_angles(clip, order="ZXY"):
    """Parent-relative Euler angles ``(T, 3B)``, unwrapped over time."""
    local = clip.local_rotations()
    t, b = local.shape[:2]
    ang = Rotation.from_matrix(local.reshape(-1, 3, 3)).as_euler(order).reshape(t, b * 3)
    return np.unwrap(ang, axis=0)


def l2_global(gt, pred):
    """Mean over frames of the norm of the stacked global-position difference."""
    a, b = _positions(gt), _positions(pred)
    if a.shape != b.shape:
        raise ShapeError(f"l2_global needs equal shapes, got {a.shape} and {b.shape}")
    diff = (a - b).reshape(a.shape[0], -1)
    return float(np.linalg.norm(diff, axis=-1).mean())


def foot_skate(pred, foot_joints=DEFAULT_FOOT_JOINTS, threshold=2.5, unit_scale=1.0):
    """Mean over frames and feet of horizontal foot speed times the contact weight.

    Speed is the ground-plane displacement between consecutive frames; the
    weight ``clamp(2 - 2^(h/H), 0, 2)`` uses the foot height at the later frame.
    ``unit_scale`` converts positions to the units of ``threshold``.
    """
    p = _positions(pred)[:, list(foot_joints)] * unit_scale
    if p.shape[0] < 2:
        return 0.0
    horiz = [a for a in range(3) if a != UP_AXIS]
    speed = np.linalg.norm(np.diff(p[..., horiz], axis=0), axis=-1)
    w = contact_weight(p[1:, :, UP_AXIS], threshold)
    return float((speed * w).mean())
