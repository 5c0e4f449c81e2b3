"""Error metrics against ground truth, reported in millimeters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .body_model import BodyModel, PoseParams, ShapeParams, forward
from .errors import InvalidArgument

MM = 1000.0


@dataclass
class EvalReport:
    per_frame: np.ndarray  # mean joint error per frame (mm)
    mean: float
    median: float
    procrustes_per_frame: np.ndarray | None = None
    procrustes_mean: float | None = None
    vertex_error: float | None = None

    def to_dict(self) -> dict:
        d = {"per_frame_mm": self.per_frame.tolist(), "mean_mm": self.mean, "median_mm": self.median}
        if self.procrustes_per_frame is not None:
            d["procrustes_per_frame_mm"] = self.procrustes_per_frame.tolist()
            d["procrustes_mean_mm"] = self.procrustes_mean
        if self.vertex_error is not None:
            d["vertex_error_mm"] = self.vertex_error
        return d


def similarity_align(source: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Align ``source`` points (n, 3) to ``target`` by the least-squares
    similarity transform (rotation, uniform scale, translation)."""
    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    S = source - mu_s
    T = target - mu_t
    U, sig, Vt = np.linalg.svd(T.T @ S)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt)) or 1.0
    R = U @ D @ Vt
    var = np.sum(S * S)
    scale = np.trace(np.diag(sig) @ D) / var if var > 0 else 1.0
    return scale * S @ R.T + mu_t


def joint_errors(estimate: np.ndarray, truth: np.ndarray, procrustes: bool = False) -> np.ndarray:
    """Mean Euclidean joint distance per frame (mm) for (T, J, 3) arrays."""
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape:
        raise InvalidArgument(f"joint arrays differ in shape: {estimate.shape} vs {truth.shape}")
    if procrustes:
        estimate = np.stack([similarity_align(e, t) for e, t in zip(estimate, truth)])
    return np.linalg.norm(estimate - truth, axis=-1).mean(axis=-1) * MM


def vertex_error(model: BodyModel, beta_fit, beta_true) -> float:
    """Mean per-vertex distance (mm) between the two shapes in the rest pose."""
    rest = PoseParams.rest(model.num_joints)
    a = forward(model, ShapeParams(np.asarray(getattr(beta_fit, "beta", beta_fit))), rest).vertices
    b = forward(model, ShapeParams(np.asarray(getattr(beta_true, "beta", beta_true))), rest).vertices
    return float(np.linalg.norm(a - b, axis=1).mean() * MM)


def evaluate(model: BodyModel, fit, truth, procrustes: bool = False, with_vertex_error: bool = False, joints=None) -> EvalReport:
    """Compare a SequenceFit (or a (T, J, 3) joint array) with ground truth.

    ``joints`` optionally restricts the metric to a subset of joint indices.
    """
    from .pipeline import SequenceFit, frame_joints

    est = frame_joints(model, fit) if isinstance(fit, SequenceFit) else np.asarray(fit, dtype=float)
    true = np.asarray(truth.joints, dtype=float)
    if est.shape[0] != true.shape[0]:
        raise InvalidArgument(f"fit has {est.shape[0]} frames, truth has {true.shape[0]}")
    if joints is not None:
        est = est[:, list(joints)]
        true = true[:, list(joints)]
    per = joint_errors(est, true)
    rep = EvalReport(per, float(per.mean()), float(np.median(per)))
    if procrustes:
        pp = joint_errors(est, true, procrustes=True)
        rep.procrustes_per_frame = pp
        rep.procrustes_mean = float(pp.mean())
    if with_vertex_error:
        if not isinstance(fit, SequenceFit):
            raise InvalidArgument("vertex error needs a fitted shape")
        rep.vertex_error = vertex_error(model, fit.beta_hat, truth.beta)
    return rep
