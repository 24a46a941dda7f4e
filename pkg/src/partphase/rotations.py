"""6D rotation representation helpers.

A rotation is stored as the first two columns of its matrix (forward and
upward vectors) concatenated into six numbers. Functions accept numpy arrays
or torch tensors and return the same kind.
"""
import numpy as np
import torch


def _is_torch(x):
    return isinstance(x, torch.Tensor)


def _normalize(v, eps=1e-12):
    if _is_torch(v):
        return v / v.norm(dim=-1, keepdim=True).clamp_min(eps)
    return v / np.maximum(np.linalg.norm(v, axis=-1, keepdims=True), eps)


def _cross(a, b):
    if _is_torch(a):
        return torch.cross(a, b, dim=-1)
    return np.cross(a, b)


def gram_schmidt_6d(x):
    """Orthonormalize the two 3-vectors of a (..., 6) array."""
    a, b = x[..., :3], x[..., 3:]
    c0 = _normalize(a)
    dot = (c0 * b).sum(-1, keepdims=True) if not _is_torch(x) else (c0 * b).sum(-1, keepdim=True)
    c1 = _normalize(b - dot * c0)
    if _is_torch(x):
        return torch.cat([c0, c1], dim=-1)
    return np.concatenate([c0, c1], axis=-1)


def matrix_to_6d(mat):
    """(..., 3, 3) rotation matrices -> (..., 6)."""
    if _is_torch(mat):
        return torch.cat([mat[..., :, 0], mat[..., :, 1]], dim=-1)
    return np.concatenate([mat[..., :, 0], mat[..., :, 1]], axis=-1)


def sixd_to_matrix(x):
    """(..., 6) -> (..., 3, 3), Gram-Schmidt applied first."""
    g = gram_schmidt_6d(x)
    c0, c1 = g[..., :3], g[..., 3:]
    c2 = _cross(c0, c1)
    if _is_torch(x):
        return torch.stack([c0, c1, c2], dim=-1)
    return np.stack([c0, c1, c2], axis=-1)


def yaw_matrix(angle):
    """Rotation about +Y (vertical) by ``angle`` radians; broadcasts over arrays."""
    angle = np.asarray(angle, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    out = np.zeros(angle.shape + (3, 3))
    out[..., 0, 0] = c
    out[..., 0, 2] = s
    out[..., 1, 1] = 1.0
    out[..., 2, 0] = -s
    out[..., 2, 2] = c
    return out
