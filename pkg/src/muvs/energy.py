"""Stage One data and prior terms.

Scalar energies are provided for direct evaluation; the ``*_residuals``
functions express the same energies as sums of squared residuals with
Jacobians, which is the form the trust-region solver consumes. A robust
term w * rho(|e|) is written as the residual vector sqrt(w) e / sqrt(sigma^2 + |e|^2),
whose squared norm is exactly w * rho(|e|) and which stays smooth at e = 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
import json

import numpy as np

from .body_model import NUM_BETAS, BodyModel, PoseParams, ShapeParams, forward, posed_joints
from .camera import Camera, project_masked
from .config import FitConfig
from .errors import InvalidArgument

# detector joint order of the common 14-joint (LSP/DeepCut) layout, mapped to model joints;
# the detector's head-top keypoint maps to the model head joint
LSP14_TO_MODEL = (8, 5, 2, 1, 4, 7, 21, 19, 17, 16, 18, 20, 12, 15)


@dataclass(frozen=True, eq=False)
class PosePrior:
    mean: np.ndarray
    precision: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).ravel()
        prec = np.asarray(self.precision, dtype=float).ravel()
        if mean.shape != prec.shape:
            raise InvalidArgument("pose prior mean and precision sizes differ")
        if np.any(prec < 0):
            raise InvalidArgument("pose prior precisions must be nonnegative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "precision", prec)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps({"mean": self.mean.tolist(), "precision": self.precision.tolist()}))

    @classmethod
    def load(cls, path: str | Path) -> "PosePrior":
        d = json.loads(Path(path).read_text())
        return cls(d["mean"], d["precision"])


def default_pose_prior(model: BodyModel) -> PosePrior:
    """Diagonal prior centered on the rest pose.

    Spine and hips are stiffer than the limbs; the root orientation is free.
    """
    J = model.num_joints
    prec = np.full((J, 3), 1e-4)
    prec[0] = 0.0
    prec[[3, 6, 9]] = 1e-3
    prec[[12, 13, 14]] = 5e-4
    prec[[1, 2]] = 3e-4
    prec[[10, 11, 15, 22, 23]] = 1e-3
    return PosePrior(np.zeros(3 * J), prec.ravel())


def geman_mcclure(e, sigma: float):
    """rho_sigma(e) = e^2 / (sigma^2 + e^2)."""
    if not sigma > 0:
        raise InvalidArgument("sigma must be positive")
    e = np.asarray(e, dtype=float)
    e2 = e * e
    return e2 / (sigma * sigma + e2)


def expand_detections(dets: np.ndarray, num_joints: int, joint_map=None) -> np.ndarray:
    """Map detector joints (..., Jd, 3) onto model joints; unmapped joints get w = 0."""
    dets = np.asarray(dets, dtype=float)
    Jd = dets.shape[-2]
    if joint_map is None:
        if Jd == num_joints:
            return dets
        if Jd == len(LSP14_TO_MODEL):
            joint_map = LSP14_TO_MODEL
        else:
            raise InvalidArgument(f"no joint map for {Jd} detector joints")
    if len(joint_map) != Jd:
        raise InvalidArgument("joint map length differs from detector joint count")
    out = np.zeros(dets.shape[:-2] + (num_joints, 3))
    out[..., list(joint_map), :] = dets
    return out


def _check_dets(model: BodyModel, dets: np.ndarray) -> np.ndarray:
    dets = np.asarray(dets, dtype=float)
    if dets.shape != (model.num_joints, 3):
        raise InvalidArgument(f"detections must be ({model.num_joints}, 3), got {dets.shape}")
    return dets


def joint_term_from_joints(joints3d: np.ndarray, cam: Camera, dets: np.ndarray, sigma1: float) -> float:
    if not sigma1 > 0:
        raise InvalidArgument("sigma must be positive")
    w = dets[:, 2]
    pix, valid, _ = project_masked(cam, joints3d)
    total = 0.0
    for i in range(len(w)):
        if w[i] == 0:
            continue
        if not valid[i]:
            total += w[i]
            continue
        n = np.hypot(*(pix[i] - dets[i, :2]))
        total += w[i] * geman_mcclure(n, sigma1)
    return float(total)


def joint_term(model: BodyModel, shape: ShapeParams, pose: PoseParams, cam: Camera, dets, sigma1: float) -> float:
    """E_J for one view: sum_i w_i rho(|proj(joint_i) - det_i|)."""
    dets = _check_dets(model, dets)
    return joint_term_from_joints(posed_joints(model, shape, pose), cam, dets, sigma1)


def pose_prior_term(pose: PoseParams, prior: PosePrior) -> float:
    theta = np.asarray(pose.joint_rotations, dtype=float).ravel()
    if theta.shape != prior.mean.shape:
        raise InvalidArgument("pose dimension does not match the prior")
    d = theta - prior.mean
    return float(np.sum(prior.precision * d * d))


def shape_prior_term(shape: ShapeParams) -> float:
    beta = np.asarray(shape.beta, dtype=float)
    return float(beta @ beta)


def multiview_term(
    model: BodyModel,
    shape: ShapeParams,
    pose: PoseParams,
    cameras,
    detections,
    config: FitConfig,
    prior: PosePrior | None = None,
) -> float:
    """E_M = lambda_theta E_theta + lambda_beta E_beta + sum_v E_J."""
    if len(cameras) != len(detections):
        raise InvalidArgument("camera and detection view counts differ")
    prior = prior if prior is not None else default_pose_prior(model)
    joints3d = posed_joints(model, shape, pose)
    total = config.lambda_theta * pose_prior_term(pose, prior) + config.lambda_beta * shape_prior_term(shape)
    for cam, dets in zip(cameras, detections):
        total += joint_term_from_joints(joints3d, cam, _check_dets(model, dets), config.sigma1)
    return float(total)


# ---------------------------------------------------------------------------
# residual forms


def robust_vector_residual(e: np.ndarray, weight: np.ndarray, sigma: float, de: np.ndarray | None = None):
    """Residuals sqrt(w) e / sqrt(sigma^2 + |e|^2) for rows of ``e`` (n, k).

    ``de`` is d e / d x with shape (n, k, P); returns (r (n, k), dr (n, k, P)).
    """
    n2 = np.sum(e * e, axis=-1)
    s = np.sqrt(sigma * sigma + n2)
    sw = np.sqrt(weight)
    r = (sw / s)[:, None] * e
    if de is None:
        return r, None
    k = e.shape[-1]
    # d r / d e = sqrt(w) (I / s - e e^T / s^3)
    M = (sw / s)[:, None, None] * np.eye(k)[None] - (sw / s**3)[:, None, None] * e[:, :, None] * e[:, None, :]
    return r, M @ de


def joint_residuals(joints3d, joint_jac, cameras, detections, sigma1: float):
    """Stacked robust reprojection residuals over views, with Jacobian.

    ``joint_jac`` has shape (J, 3, P) or is None. Joints with zero confidence
    give zero residuals; joints behind a camera give the constant sqrt(w).
    """
    rs, js = [], []
    for cam, dets in zip(cameras, detections):
        w = dets[:, 2]
        want = joint_jac is not None
        pix, valid, pj = project_masked(cam, joints3d, want_jacobian=want)
        e = np.where(valid[:, None], pix - dets[:, :2], 0.0)
        de = None
        if want:
            de = pj @ joint_jac  # (J, 2, P)
        r, dr = robust_vector_residual(e, w, sigma1, de)
        behind = ~valid & (w > 0)
        if np.any(behind):
            r[behind] = np.column_stack([np.sqrt(w[behind]), np.zeros(behind.sum())])
            if dr is not None:
                dr[behind] = 0.0
        rs.append(r.ravel())
        if want:
            js.append(dr.reshape(-1, dr.shape[-1]))
    r = np.concatenate(rs) if rs else np.zeros(0)
    if joint_jac is None:
        return r, None
    P = joint_jac.shape[-1]
    return r, (np.concatenate(js) if js else np.zeros((0, P)))


def prior_residuals(beta, theta, prior: PosePrior, lambda_theta: float, lambda_beta: float):
    """Residuals whose squares sum to lambda_theta E_theta + lambda_beta E_beta.

    Jacobian columns follow the [beta, translation, rotations] layout.
    """
    theta = np.asarray(theta, dtype=float).ravel()
    beta = np.asarray(beta, dtype=float)
    wt = np.sqrt(lambda_theta * prior.precision)
    wb = np.sqrt(lambda_beta) * np.ones(NUM_BETAS)
    r = np.concatenate([wt * (theta - prior.mean), wb * beta])
    P = NUM_BETAS + 3 + theta.size
    J = np.zeros((r.size, P))
    J[np.arange(theta.size), NUM_BETAS + 3 + np.arange(theta.size)] = wt
    J[theta.size + np.arange(NUM_BETAS), np.arange(NUM_BETAS)] = wb
    return r, J


def multiview_residuals(model, x, cameras, detections, config: FitConfig, prior: PosePrior, jacobian=True):
    """Residual vector (and Jacobian) of E_M at packed parameters ``x``."""
    x = np.asarray(x, dtype=float)
    shape = ShapeParams(x[:NUM_BETAS])
    pose = PoseParams.from_vector(x[NUM_BETAS:])
    body = forward(model, shape, pose, jacobian=jacobian, vertices=False)
    rj, jj = joint_residuals(body.joints, body.joint_jacobian, cameras, detections, config.sigma1)
    rp, jp = prior_residuals(shape.beta, pose.joint_rotations, prior, config.lambda_theta, config.lambda_beta)
    r = np.concatenate([rj, rp])
    if not jacobian:
        return r, None
    return r, np.vstack([jj, jp])
