"""Temporal fitting machinery: DCT trajectory basis and the windowed objective.

DCT coefficients are not carried as solver variables. For every joint
trajectory they are re-solved by iteratively reweighted least squares on the
robust reconstruction error, which leaves the gradient with respect to the
poses unchanged at the optimum (the coefficient derivative vanishes there).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .body_model import NUM_BETAS, BodyModel, PoseParams, ShapeParams, forward, posed_joints
from .config import FitConfig
from .energy import PosePrior, geman_mcclure, joint_residuals, multiview_term
from .errors import InvalidArgument

IRLS_MAX_ITER = 200
IRLS_TOL = 1e-14
GNC_FACTORS = (16.0, 8.0, 4.0, 2.0)
GNC_SWEEPS = 10


@dataclass(frozen=True, eq=False)
class DctBasis:
    matrix: np.ndarray  # (N, K), orthonormal columns

    @property
    def N(self) -> int:
        return self.matrix.shape[0]

    @property
    def K(self) -> int:
        return self.matrix.shape[1]


def dct_basis(N: int, K: int) -> DctBasis:
    """First K orthonormal DCT-II vectors over N samples."""
    if N < 1 or not 1 <= K <= N:
        raise InvalidArgument(f"need 1 <= K <= N, got N={N}, K={K}")
    n = np.arange(N)[:, None]
    k = np.arange(K)[None, :]
    B = np.cos(np.pi * (2 * n + 1) * k / (2 * N)) * np.sqrt(2.0 / N)
    B[:, 0] = np.sqrt(1.0 / N)
    return DctBasis(B)


def assemble_trajectories(model: BodyModel, shape: ShapeParams, poses) -> np.ndarray:
    """Joint trajectories D[e, d, n] over the window (J, 3, N)."""
    if len(poses) < 1:
        raise InvalidArgument("window must contain at least one frame")
    joints = np.stack([posed_joints(model, shape, p) for p in poses], axis=-1)
    return joints


def _irls(d: np.ndarray, B: np.ndarray, c: np.ndarray, sigma: float, iterations: int) -> np.ndarray:
    for _ in range(iterations):
        e = d - c @ B.T
        w = sigma**2 / (sigma**2 + e * e) ** 2
        lhs = np.einsum("nk,qn,nl->qkl", B, w, B)
        rhs = np.einsum("nk,qn->qk", B, w * d)
        c_new = np.linalg.solve(lhs, rhs[..., None])[..., 0]
        step = np.max(np.abs(c_new - c))
        c = c_new
        if step <= IRLS_TOL * (1 + np.max(np.abs(c))):
            break
    return c


def robust_coefficients(d: np.ndarray, B: np.ndarray, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients minimizing sum_j rho(d_j - (B c)_j) for each row of ``d``.

    Starts from the least-squares projection B^T d, runs a few IRLS sweeps at
    widened scales (graduated non-convexity, so gross outliers cannot drag
    the start into a poor basin) and converges by IRLS at ``sigma``.
    Returns (c (Q, K), irls weights (Q, N)).
    """
    d = np.atleast_2d(d)
    c = d @ B
    for factor in GNC_FACTORS:
        c = _irls(d, B, c, factor * sigma, GNC_SWEEPS)
    c = _irls(d, B, c, sigma, IRLS_MAX_ITER)
    e = d - c @ B.T
    w = sigma**2 / (sigma**2 + e * e) ** 2
    return c, w


def temporal_term(traj: np.ndarray, basis: DctBasis, sigma2: float, coefficients: np.ndarray | None = None):
    """E_T for one trajectory and its coefficients.

    With ``coefficients`` given they are used as-is; otherwise they are
    solved for.
    """
    d = np.asarray(traj, dtype=float).ravel()
    if d.size != basis.N:
        raise InvalidArgument(f"trajectory length {d.size} differs from basis length {basis.N}")
    if coefficients is None:
        c = robust_coefficients(d, basis.matrix, sigma2)[0][0]
    else:
        c = np.asarray(coefficients, dtype=float).ravel()
        if c.size != basis.K:
            raise InvalidArgument("coefficient count differs from basis size")
    return float(np.sum(geman_mcclure(d - basis.matrix @ c, sigma2))), c


def temporal_energy(traj: np.ndarray, basis: DctBasis, config: FitConfig, coefficients=None) -> tuple[float, np.ndarray]:
    """lambda_T * sum_e sum_d E_T over a (J, 3, N) trajectory block."""
    J = traj.shape[0]
    axis_w = np.asarray(config.lambda_t_axis, dtype=float)
    flat = traj.reshape(J * 3, basis.N)
    if coefficients is None:
        C = robust_coefficients(flat, basis.matrix, config.sigma2)[0]
    else:
        C = np.asarray(coefficients, dtype=float).reshape(J * 3, basis.K)
    rho = geman_mcclure(flat - C @ basis.matrix.T, config.sigma2).reshape(J, 3, basis.N)
    total = config.lambda_t * np.sum(rho.sum(axis=2) * axis_w[None, :])
    return float(total), C.reshape(J, 3, basis.K)


def stage_two_objective(
    model: BodyModel,
    beta_hat: ShapeParams,
    poses,
    coefficients,
    cameras,
    detections,
    basis: DctBasis,
    config: FitConfig,
    prior: PosePrior | None = None,
) -> float:
    """E_2 = sum_n E_M(beta_hat, theta_n) + lambda_T sum_e sum_d E_T.

    ``detections`` is indexed [frame][view]. Pass ``coefficients=None`` to
    use the optimal coefficients for the given poses.
    """
    if len(poses) != basis.N or len(detections) != basis.N:
        raise InvalidArgument("window length differs from basis length")
    total = sum(multiview_term(model, beta_hat, p, cameras, dets, config, prior) for p, dets in zip(poses, detections))
    traj = assemble_trajectories(model, beta_hat, poses)
    total += temporal_energy(traj, basis, config, coefficients)[0]
    return float(total)


# ---------------------------------------------------------------------------
# solver-facing window objective


def _temporal_residual_parts(flat: np.ndarray, B: np.ndarray, config: FitConfig, J: int):
    """Residuals, slopes and projector complement per trajectory channel."""
    sigma = config.sigma2
    C, w = robust_coefficients(flat, B, sigma)
    e = flat - C @ B.T
    scale = np.sqrt(config.lambda_t * np.tile(np.asarray(config.lambda_t_axis, dtype=float), J))[:, None]
    s = np.sqrt(sigma**2 + e * e)
    r = scale * e / s
    slope = scale * sigma**2 / s**3  # d r / d e
    BtW = B.T[None] * w[:, None, :]  # (Q, K, N)
    proj = B[None] @ np.linalg.solve(BtW @ B[None], BtW)  # weighted projector (Q, N, N)
    M = np.eye(B.shape[0])[None] - proj
    return r, slope, M, C


class WindowObjective:
    """E_2 over the poses of one window with fixed shape.

    Variables are the stacked per-frame pose vectors
    ``[translation (3), rotations (3J)]``.
    """

    def __init__(self, model, beta_hat, cameras, detections, basis, config, prior, silhouette=None):
        self.model = model
        self.beta = np.asarray(beta_hat.beta if isinstance(beta_hat, ShapeParams) else beta_hat, dtype=float)
        self.cameras = cameras
        self.detections = detections  # [frame][view] (J, 3)
        self.basis = basis
        self.config = config
        self.prior = prior
        self.silhouette = silhouette  # optional callable(frame, packed x, jacobian) -> (r, J)
        self.npose = 3 + 3 * model.num_joints
        self.N = basis.N

    @property
    def dim(self) -> int:
        return self.N * self.npose

    def _frame(self, x, n):
        return x[n * self.npose : (n + 1) * self.npose]

    def _frame_parts(self, x, jacobian):
        cfg = self.config
        model = self.model
        shape = ShapeParams(self.beta)
        joints, jacs, rs, Js = [], [], [], []
        wt = np.sqrt(cfg.lambda_theta * self.prior.precision)
        const = np.sqrt(cfg.lambda_beta) * self.beta
        for n in range(self.N):
            pv = self._frame(x, n)
            pose = PoseParams.from_vector(pv)
            body = forward(model, shape, pose, jacobian=jacobian, vertices=False)
            jj = body.joint_jacobian[:, :, NUM_BETAS:] if jacobian else None
            rj, Jj = joint_residuals(body.joints, jj, self.cameras, self.detections[n], cfg.sigma1)
            theta = pose.joint_rotations.ravel()
            rp = wt * (theta - self.prior.mean)
            r = np.concatenate([rj, rp, const])
            if jacobian:
                Jp = np.zeros((rp.size, self.npose))
                Jp[np.arange(rp.size), 3 + np.arange(rp.size)] = wt
                Jn = np.vstack([Jj, Jp, np.zeros((const.size, self.npose))])
            if self.silhouette is not None:
                xs = np.concatenate([self.beta, pv])
                rs_, Js_ = self.silhouette(n, xs, jacobian)
                r = np.concatenate([r, rs_])
                if jacobian:
                    Jn = np.vstack([Jn, Js_[:, NUM_BETAS:]])
            joints.append(body.joints)
            jacs.append(jj)
            rs.append(r)
            if jacobian:
                Js.append(Jn)
        return np.stack(joints, axis=-1), jacs, rs, Js

    def residuals(self, x):
        traj, _, rs, _ = self._frame_parts(np.asarray(x, dtype=float), False)
        J = self.model.num_joints
        rt, _, _, _ = _temporal_residual_parts(traj.reshape(3 * J, self.N), self.basis.matrix, self.config, J)
        return np.concatenate(rs + [rt.ravel()])

    def cost(self, x) -> float:
        r = self.residuals(x)
        return float(r @ r)

    def normal(self, x):
        x = np.asarray(x, dtype=float)
        N, P = self.N, self.npose
        J = self.model.num_joints
        traj, jacs, rs, Js = self._frame_parts(x, True)
        H = np.zeros((N * P, N * P))
        g = np.zeros(N * P)
        cost = 0.0
        for n in range(N):
            sl = slice(n * P, (n + 1) * P)
            H[sl, sl] += Js[n].T @ Js[n]
            g[sl] += Js[n].T @ rs[n]
            cost += rs[n] @ rs[n]
        if self.config.lambda_t > 0:
            r, slope, M, _ = _temporal_residual_parts(traj.reshape(3 * J, N), self.basis.matrix, self.config, J)
            cost += float(np.sum(r * r))
            X = np.stack(jacs, axis=2).reshape(3 * J, N, P)  # X[q, n, :] = d traj_q[n] / d pose_n
            DM = slope[:, :, None] * M  # (Q, N, N)
            G = np.swapaxes(DM, 1, 2) @ DM
            GX = G[:, :, :, None] * X[:, None, :, :]  # (Q, n, m, b)
            Xt = np.transpose(X, (1, 2, 0))  # (n, a, Q)
            Ht = Xt @ np.transpose(GX, (1, 0, 2, 3)).reshape(N, 3 * J, N * P)
            H += Ht.reshape(N * P, N * P)
            back = np.einsum("qmn,qm->qn", DM, r)  # (DM)^T r per channel
            g += np.einsum("qna,qn->na", X, back).ravel()
        return cost, g, H


def pack_window(poses) -> np.ndarray:
    return np.concatenate([p.to_vector() for p in poses])


def unpack_window(x: np.ndarray, num_joints: int) -> list:
    P = 3 + 3 * num_joints
    return [PoseParams.from_vector(x[i : i + P]) for i in range(0, len(x), P)]
