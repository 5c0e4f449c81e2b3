"""Axis-angle (exponential map) helpers, vectorized over leading axes."""

from __future__ import annotations

import numpy as np

_SERIES_CUTOFF = 1e-2


def skew(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _coefficients(phi: np.ndarray):
    """sin(p)/p, (1-cos p)/p^2, (p-sin p)/p^3 with series near zero."""
    small = phi < _SERIES_CUTOFF
    p = np.where(small, 1.0, phi)
    p2 = phi * phi
    a = np.where(small, 1 - p2 / 6 + p2 * p2 / 120 - p2**3 / 5040, np.sin(p) / p)
    b = np.where(small, 0.5 - p2 / 24 + p2 * p2 / 720 - p2**3 / 40320, (1 - np.cos(p)) / p**2)
    c = np.where(
        small,
        1 / 6 - p2 / 120 + p2 * p2 / 5040 - p2**3 / 362880,
        (p - np.sin(p)) / p**3,
    )
    return a, b, c


def rodrigues(r: np.ndarray) -> np.ndarray:
    """Rotation matrices for axis-angle vectors of shape (..., 3)."""
    r = np.asarray(r, dtype=float)
    phi = np.linalg.norm(r, axis=-1)
    a, b, _ = _coefficients(phi)
    K = skew(r)
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + a[..., None, None] * K + b[..., None, None] * (K @ K)


def left_jacobian(r: np.ndarray) -> np.ndarray:
    """Left Jacobian of SO(3): dR/dr_a = skew(Jl @ e_a) @ R."""
    r = np.asarray(r, dtype=float)
    phi = np.linalg.norm(r, axis=-1)
    _, b, c = _coefficients(phi)
    K = skew(r)
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + b[..., None, None] * K + c[..., None, None] * (K @ K)


def log_map(R: np.ndarray) -> np.ndarray:
    """Axis-angle vector of a rotation matrix (angle in [0, pi])."""
    R = np.asarray(R, dtype=float)
    cos = np.clip((np.trace(R, axis1=-2, axis2=-1) - 1) / 2, -1.0, 1.0)
    phi = np.arccos(cos)
    vee = np.stack(
        [R[..., 2, 1] - R[..., 1, 2], R[..., 0, 2] - R[..., 2, 0], R[..., 1, 0] - R[..., 0, 1]],
        axis=-1,
    )
    out = np.empty(R.shape[:-2] + (3,))
    flat_R = R.reshape(-1, 3, 3)
    flat_phi = phi.reshape(-1)
    flat_vee = vee.reshape(-1, 3)
    flat_out = out.reshape(-1, 3)
    for i in range(flat_R.shape[0]):
        p = flat_phi[i]
        if p < 1e-7:
            flat_out[i] = 0.5 * flat_vee[i]
        elif np.pi - p < 1e-4:
            # near pi the antisymmetric part vanishes; use the symmetric part
            B = (flat_R[i] + np.eye(3)) / 2
            k = int(np.argmax(np.diag(B)))
            axis = B[:, k] / np.sqrt(max(B[k, k], 1e-300))
            if flat_vee[i] @ axis < 0:
                axis = -axis
            flat_out[i] = p * axis / np.linalg.norm(axis)
        else:
            flat_out[i] = p / (2 * np.sin(p)) * flat_vee[i]
    return out


def slerp(r0: np.ndarray, r1: np.ndarray, s: float) -> np.ndarray:
    """Geodesic interpolation between two axis-angle arrays of shape (..., 3)."""
    R0 = rodrigues(r0)
    R1 = rodrigues(r1)
    rel = log_map(np.swapaxes(R0, -1, -2) @ R1)
    return log_map(R0 @ rodrigues(s * rel))
