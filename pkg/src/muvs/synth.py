"""Synthetic multi-view sequences with known ground truth."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .body_model import BodyModel, PoseParams, ShapeParams, forward, make_default_model
from .camera import Camera, project_masked
from .io import GroundTruth, SequenceBundle
from .silhouette import SilhouetteMask, _render_from_pixels
from .temporal import dct_basis

# per-joint angle amplitude (radians) of the synthetic motion
_AMPLITUDE = {
    1: 0.35, 2: 0.35, 4: 0.45, 5: 0.45, 16: 0.35, 17: 0.35, 18: 0.45, 19: 0.45,
    3: 0.08, 6: 0.08, 9: 0.08, 12: 0.1, 15: 0.1, 13: 0.08, 14: 0.08,
    7: 0.15, 8: 0.15, 20: 0.2, 21: 0.2,
}  # fmt: skip


def synth_cameras(views: int, radius: float = 3.5, height: float = 0.3, focal: float = 600.0, image_size=(480, 480), phase=0.0):
    """``views`` cameras on a circle around the origin, facing it.

    Three or more views are evenly spaced. Two views sit 120 degrees apart
    rather than face to face, where their rays would be nearly collinear and
    could not triangulate depth.
    """
    cams = []
    for v in range(views):
        a = phase + 2 * np.pi * v / max(views, 3)
        eye = np.array([radius * np.sin(a), height, radius * np.cos(a)])
        cams.append(Camera.look_at(eye, np.zeros(3), focal, image_size))
    return cams


def synth_motion(rng: np.random.Generator, frames: int, num_joints: int, components: int = 4, translation_amplitude=(0.15, 0.03, 0.15)):
    """Smooth pose trajectory: low-frequency DCT coefficients over joint angles
    and root translation (``translation_amplitude`` in meters per world axis)."""
    K = min(components, frames)
    B = dct_basis(frames, K).matrix * np.sqrt(frames)  # unit-amplitude cosines
    decay = 1.0 / (1.0 + np.arange(K))
    rot = np.zeros((frames, num_joints, 3))
    for j, amp in _AMPLITUDE.items():
        if j >= num_joints:
            continue
        coef = rng.uniform(-1, 1, (K, 3)) * decay[:, None] * amp / 2
        rot[:, j] = B @ coef
    yaw = rng.uniform(-np.pi, np.pi)
    rot[:, 0] = np.array([0.0, yaw, 0.0]) + B @ (rng.uniform(-1, 1, (K, 3)) * decay[:, None] * np.array([0.08, 0.3, 0.08]))
    trans = B @ (rng.uniform(-1, 1, (K, 3)) * decay[:, None] * np.asarray(translation_amplitude, dtype=float))
    return [PoseParams(trans[t], rot[t]) for t in range(frames)]


def _perturb_mask(mask: np.ndarray, radius: int, rng: np.random.Generator) -> np.ndarray:
    if radius <= 0:
        return mask
    grow = rng.random() < 0.5
    op = ndimage.binary_dilation if grow else ndimage.binary_erosion
    return op(mask, iterations=int(radius))


def synth_generate(
    seed: int,
    views: int,
    frames: int,
    noise_px: float = 0.0,
    swap_rate: float = 0.0,
    mask_noise: int = 0,
    swap_views=None,
    model: BodyModel | None = None,
    masks: bool = True,
    beta_scale: float = 1.0,
    camera_kw: dict | None = None,
    fps: float = 30.0,
    translation_amplitude=(0.15, 0.03, 0.15),
):
    """Random body, smooth motion, calibrated cameras and noisy observations.

    Left/right limb pairs are exchanged in a ``swap_rate`` fraction of
    (frame, view) cells, restricted to ``swap_views`` when given. Returns
    (SequenceBundle, GroundTruth); ``truth.extra['swapped']`` lists the
    corrupted cells as [frame, view]. A zero ``translation_amplitude`` keeps
    the subject at a fixed distance from every camera.
    """
    if views < 1 or frames < 1:
        raise ValueError("views and frames must be positive")
    model = model if model is not None else make_default_model(segments=6)
    rng = np.random.default_rng(seed)
    beta = rng.normal(0.0, beta_scale, 10)
    shape = ShapeParams(beta)
    poses = synth_motion(rng, frames, model.num_joints, translation_amplitude=translation_amplitude)
    cams = synth_cameras(views, phase=rng.uniform(0, 2 * np.pi), **(camera_kw or {}))
    swap = model.swap_permutation()
    swap_views = list(range(views)) if swap_views is None else list(swap_views)

    J = model.num_joints
    dets = np.zeros((views, frames, J, 3))
    joints = np.zeros((frames, J, 3))
    vertices = np.zeros((frames, model.num_vertices, 3))
    mask_grid = [[None] * frames for _ in range(views)] if masks else None
    swapped = []
    for t, pose in enumerate(poses):
        body = forward(model, shape, pose)
        joints[t] = body.joints
        vertices[t] = body.vertices
        for v, cam in enumerate(cams):
            pix, valid, _ = project_masked(cam, body.joints)
            d = np.column_stack([pix, valid.astype(float)])
            d[~valid, :2] = 0.0
            if noise_px > 0:
                d[:, :2] += rng.normal(0.0, noise_px, (J, 2))
            if v in swap_views and swap_rate > 0 and rng.random() < swap_rate:
                d = d[swap]
                swapped.append([t, v])
            dets[v, t] = d
            if masks:
                vp, vvalid, _ = project_masked(cam, body.vertices)
                m = _render_from_pixels(vp, vvalid, model.faces, cam).mask
                mask_grid[v][t] = SilhouetteMask(_perturb_mask(m, mask_noise, rng))
    bundle = SequenceBundle(dets, cams, mask_grid, fps)
    truth = GroundTruth(beta, poses, joints, vertices, {"swapped": swapped, "seed": int(seed)})
    return bundle, truth
