"""Two-stage sequence fitting.

Stage One fits every frame on its own against all views (joints, then
silhouettes); the per-frame shapes are reduced to a median shape; Stage Two
refits the poses of fixed-length windows with that shape held fixed, coupling
frames through the robust DCT trajectory term.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import silhouette as sil
from .body_model import NUM_BETAS, BodyModel, PoseParams, ShapeParams, pack, posed_joints, unpack
from .camera import Camera
from .config import FitConfig
from .energy import PosePrior, default_pose_prior, expand_detections, multiview_residuals, multiview_term
from .errors import InvalidArgument, SequenceFailure, UnfittableFrame
from .rotation import slerp
from .solver import Objective, SolveReport, SolverOptions, minimize
from .temporal import WindowObjective, dct_basis, pack_window, unpack_window

log = logging.getLogger(__name__)


@dataclass
class FrameReport:
    energy: float  # E_1 at the Stage One solution (E_M when silhouettes are off)
    passes: list = field(default_factory=list)  # SolveReport summaries per pass


@dataclass
class SequenceFit:
    poses: list  # final PoseParams per frame
    stage_one_poses: list
    frame_shapes: list  # Stage One ShapeParams per frame (None for unfittable frames)
    frame_energies: list
    fitted: list  # False where the frame was unfittable and interpolated
    beta_hat: ShapeParams
    window_reports: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    @property
    def num_frames(self) -> int:
        return len(self.poses)


# ---------------------------------------------------------------------------
# helpers


def _ray(cam: Camera, uv: np.ndarray):
    d_cam = np.array([(uv[0] - cam.principal_point[0]) / cam.focal[0], (uv[1] - cam.principal_point[1]) / cam.focal[1], 1.0])
    d = cam.rotation.T @ d_cam
    return cam.center, d / np.linalg.norm(d)


def _ray_midpoint(o1, d1, o2, d2):
    """Midpoint of the shortest segment between two rays (None if parallel)."""
    w = o1 - o2
    b = d1 @ d2
    denom = 1.0 - b * b
    if denom < 1e-9:
        return None
    s = (b * (d2 @ w) - (d1 @ w)) / denom
    t = ((d2 @ w) - b * (d1 @ w)) / denom
    return 0.5 * ((o1 + s * d1) + (o2 + t * d2))


def initial_translation(model: BodyModel, dets: np.ndarray, cameras, config: FitConfig) -> np.ndarray:
    """Root placement from torso detections.

    With two or more usable views, torso joints are triangulated from the two
    views with the highest summed torso confidence. With one view, depth is
    set so that the rest-pose torso spread matches its image spread.
    """
    torso = np.array(config.torso_joints)
    rest = posed_joints(model, ShapeParams.zeros(), PoseParams.rest(model.num_joints))
    conf = np.array([d[torso, 2].sum() for d in dets])
    order = [int(v) for v in np.argsort(-conf, kind="stable") if conf[v] > 0]
    if len(order) >= 2:
        a, b = order[:2]
        pts, refs = [], []
        for j in torso:
            if dets[a][j, 2] > 0 and dets[b][j, 2] > 0:
                p = _ray_midpoint(*_ray(cameras[a], dets[a][j, :2]), *_ray(cameras[b], dets[b][j, :2]))
                if p is not None:
                    pts.append(p)
                    refs.append(rest[j])
        if pts:
            return np.mean(pts, axis=0) - np.mean(refs, axis=0)
    v = order[0] if order else int(np.argmax([d[:, 2].sum() for d in dets]))
    d = dets[v]
    use = d[:, 2] > 0
    if use[torso].sum() >= 2:
        use = np.zeros_like(use)
        use[torso] = d[torso, 2] > 0
    cam = cameras[v]
    uv = d[use, :2]
    spread2d = np.sqrt(np.mean(np.sum((uv - uv.mean(axis=0)) ** 2, axis=1)))
    spread3d = np.sqrt(np.mean(np.sum((rest[use] - rest[use].mean(axis=0)) ** 2, axis=1)))
    depth = float(np.mean(cam.focal)) * spread3d / max(spread2d, 1e-6) if use.sum() >= 2 else 3.0
    o, ray = _ray(cam, uv.mean(axis=0))
    fwd = cam.rotation[2]
    point = o + ray * depth / max(ray @ fwd, 1e-6)
    return point - rest[use].mean(axis=0)


def _yaw_rotation(angle: float) -> np.ndarray:
    return np.array([0.0, angle, 0.0])


def _solve(residual_fn, x0, iterations, config: FitConfig, mask=None) -> SolveReport:
    obj = Objective(
        residuals=lambda x: residual_fn(x, False)[0],
        dim=x0.size,
        linearize=lambda x: residual_fn(x, True),
    )
    opts = SolverOptions(max_iterations=iterations, gtol=config.gtol, xtol=config.xtol, mask=mask)
    return minimize(obj, x0, opts)


def _mask(num_joints: int, *, beta=False, translation=False, root=False, joints=False) -> np.ndarray:
    m = np.zeros(NUM_BETAS + 3 + 3 * num_joints, dtype=bool)
    m[:NUM_BETAS] = beta
    m[NUM_BETAS : NUM_BETAS + 3] = translation
    m[NUM_BETAS + 3 : NUM_BETAS + 6] = root
    m[NUM_BETAS + 6 :] = joints
    return m


def _check_frame(model, dets, cameras, config):
    if len(dets) != len(cameras):
        raise InvalidArgument("detection and camera view counts differ")
    dets = np.stack([expand_detections(d, model.num_joints, config.joint_map) for d in dets])
    if not np.any(dets[..., 2] > 0):
        raise UnfittableFrame("no view has a positive-confidence joint")
    return dets


# ---------------------------------------------------------------------------
# Stage One


def fit_frame(
    model: BodyModel,
    detections,
    cameras,
    config: FitConfig,
    init: tuple[ShapeParams, PoseParams] | None = None,
    masks=None,
    prior: PosePrior | None = None,
):
    """Stage One fit of one frame.

    ``detections`` holds one (J, 3) array of (x, y, confidence) per view and
    ``masks`` one silhouette (or None) per view. ``init`` is the previous
    frame's (shape, pose); without it the rest pose is placed from the torso
    detections and several root yaw angles are tried.
    Returns (shape, pose, FrameReport).
    """
    dets = _check_frame(model, detections, cameras, config)
    prior = prior if prior is not None else default_pose_prior(model)
    J = model.num_joints
    report = FrameReport(0.0)

    def joint_fn(d, cfg):
        return lambda x, jac: multiview_residuals(model, x, cameras, d, cfg, prior, jacobian=jac)

    # pass 1: translation and root orientation against torso joints
    torso_dets = dets.copy()
    keep = np.zeros(J, dtype=bool)
    keep[list(config.torso_joints)] = True
    torso_dets[:, ~keep, 2] = 0.0
    if not np.any(torso_dets[..., 2] > 0):
        torso_dets = dets
    first = config.replace(lambda_theta=config.schedule[0][0], lambda_beta=config.schedule[0][1])
    pass1_mask = _mask(J, translation=True, root=True)
    if init is not None:
        starts = [pack(*init)]
    else:
        t0 = initial_translation(model, dets, cameras, config)
        starts = []
        for k in range(max(1, config.yaw_starts)):
            pose = PoseParams.rest(J, t0)
            rot = pose.joint_rotations.copy()
            rot[0] = _yaw_rotation(2 * np.pi * k / max(1, config.yaw_starts))
            starts.append(pack(ShapeParams.zeros(), PoseParams(t0, rot)))
    best = None
    for x0 in starts:
        rep = _solve(joint_fn(torso_dets, first), x0, config.pass_iterations, config, pass1_mask)
        if best is None or rep.final_cost < best.final_cost:
            best = rep
    report.passes.append(best.to_dict())
    x = best.x

    # pass 2: full shape and pose against all joints, annealing the priors
    full = _mask(J, beta=True, translation=True, root=True, joints=True)
    for lt, lb in config.schedule:
        cfg = config.replace(lambda_theta=lt, lambda_beta=lb)
        rep = _solve(joint_fn(dets, cfg), x, config.pass_iterations, config, full)
        report.passes.append(rep.to_dict())
        x = rep.x
    final_cfg = config.replace(lambda_theta=config.schedule[-1][0], lambda_beta=config.schedule[-1][1])

    # pass 3: add silhouettes with correspondences frozen per round
    views = None
    if config.use_silhouette and masks is not None and config.silhouette_weight > 0:
        views = sil.prepare_views(cameras, masks, config.silhouette_clamp)
        if all(v is None for v in views):
            views = None
    if views is not None:
        x = _silhouette_pass(model, x, cameras, dets, views, final_cfg, prior, report)
    shape, pose = unpack(x)
    if views is not None:
        report.energy = sil.stage_one_objective(
            model, shape, pose, cameras, list(dets), masks, final_cfg, prior,
            observed_fields=[None if v is None else sil.DistanceField(v.field) for v in views],
        )  # fmt: skip
    else:
        report.energy = multiview_term(model, shape, pose, cameras, list(dets), final_cfg, prior)
    return shape, pose, report


def _silhouette_pass(model, x, cameras, dets, views, cfg, prior, report, mask=None):
    J = model.num_joints
    full = mask if mask is not None else _mask(J, beta=True, translation=True, root=True, joints=True)
    active = [v for v in views if v is not None]
    weight = cfg.silhouette_weight
    stride = cfg.silhouette_stride
    rounds = max(1, cfg.silhouette_iterations)
    inner = max(1, cfg.extra.get("silhouette_inner_iterations", 4))
    for _ in range(rounds):
        states = sil.silhouette_residuals(model, x, active, weight, stride, jacobian=False)[2]

        def fn(xx, jac, states=states):
            r1, j1 = multiview_residuals(model, xx, cameras, dets, cfg, prior, jacobian=jac)
            r2, j2, _ = sil.silhouette_residuals(model, xx, active, weight, stride, states=states, jacobian=jac)
            r = np.concatenate([r1, r2])
            return r, (np.vstack([j1, j2]) if jac else None)

        rep = _solve(fn, x, inner, cfg, full)
        report.passes.append(rep.to_dict())
        moved = np.linalg.norm(rep.x - x)
        x = rep.x
        if rep.accepted_steps == 0 or moved < 1e-7:
            break
    return x


def median_shape(shapes) -> ShapeParams:
    """Componentwise median; even counts average the two middle values."""
    shapes = [s for s in shapes if s is not None]
    if not shapes:
        raise InvalidArgument("median_shape needs at least one shape")
    B = np.stack([np.asarray(s.beta if isinstance(s, ShapeParams) else s, dtype=float) for s in shapes])
    return ShapeParams(np.median(B, axis=0))


# ---------------------------------------------------------------------------
# Stage Two


def fit_window(
    model: BodyModel,
    beta_hat: ShapeParams,
    detections,
    cameras,
    init_poses,
    config: FitConfig,
    masks=None,
    prior: PosePrior | None = None,
):
    """Stage Two fit of one window.

    ``detections`` is indexed [frame][view]; ``masks`` likewise (only used
    with ``config.stage2_silhouette``). Returns (poses, SolveReport).
    """
    N = len(init_poses)
    if N < 1 or len(detections) != N:
        raise InvalidArgument("window needs matching, nonempty pose and detection lists")
    prior = prior if prior is not None else default_pose_prior(model)
    dets = [np.stack([expand_detections(d, model.num_joints, config.joint_map) for d in frame]) for frame in detections]
    cfg = config.replace(lambda_theta=config.schedule[-1][0], lambda_beta=config.schedule[-1][1])
    if not config.use_temporal:
        cfg = cfg.replace(lambda_t=0.0)
    basis = dct_basis(N, min(config.dct_k, N))
    x0 = pack_window(init_poses)
    silhouette = None
    if config.stage2_silhouette and masks is not None and cfg.silhouette_weight > 0:
        silhouette = _WindowSilhouette(model, beta_hat, cameras, masks, cfg)
    obj = WindowObjective(model, beta_hat, cameras, dets, basis, cfg, prior, silhouette)
    opts = SolverOptions(max_iterations=config.stage2_iterations, gtol=config.gtol, xtol=config.xtol)
    if silhouette is None:
        rep = minimize(Objective(obj.residuals, obj.dim, normal=obj.normal, cost=obj.cost), x0, opts)
        return unpack_window(rep.x, model.num_joints), rep
    x = x0
    first = None
    for _ in range(max(1, cfg.silhouette_iterations)):
        silhouette.freeze(x)
        rep = minimize(Objective(obj.residuals, obj.dim, normal=obj.normal, cost=obj.cost), x, opts)
        first = rep if first is None else first
        done = rep.accepted_steps == 0
        x = rep.x
        if done:
            break
    rep.initial_cost = first.initial_cost
    return unpack_window(x, model.num_joints), rep


class _WindowSilhouette:
    """Per-frame smoothed silhouette residuals with frozen correspondences."""

    def __init__(self, model, beta_hat, cameras, masks, cfg):
        self.model = model
        self.beta = np.asarray(beta_hat.beta, dtype=float)
        self.cfg = cfg
        self.views = [[v for v in sil.prepare_views(cameras, m, cfg.silhouette_clamp) if v is not None] for m in masks]
        self.states = [None] * len(masks)

    def freeze(self, x):
        P = 3 + 3 * self.model.num_joints
        for n, views in enumerate(self.views):
            xs = np.concatenate([self.beta, x[n * P : (n + 1) * P]])
            self.states[n] = sil.silhouette_residuals(
                self.model, xs, views, self.cfg.silhouette_weight, self.cfg.silhouette_stride, jacobian=False
            )[2]

    def __call__(self, n, xs, jacobian):
        r, J, _ = sil.silhouette_residuals(
            self.model, xs, self.views[n], self.cfg.silhouette_weight, self.cfg.silhouette_stride,
            states=self.states[n], jacobian=jacobian,
        )  # fmt: skip
        return r, J


def window_bounds(num_frames: int, window: int) -> list[tuple[int, int]]:
    """Consecutive non-overlapping windows; the last one may be shorter."""
    return [(s, min(s + window, num_frames)) for s in range(0, num_frames, window)]


def interpolate_poses(poses: list, fitted: list) -> list:
    """Fill unfitted frames: linear in translation, slerp per joint rotation."""
    idx = [i for i, ok in enumerate(fitted) if ok]
    if not idx:
        raise SequenceFailure("no fittable frames")
    out = list(poses)
    for i, ok in enumerate(fitted):
        if ok:
            continue
        prev = max((k for k in idx if k < i), default=None)
        nxt = min((k for k in idx if k > i), default=None)
        if prev is None or nxt is None:
            out[i] = poses[nxt if prev is None else prev]
            continue
        s = (i - prev) / (nxt - prev)
        a, b = poses[prev], poses[nxt]
        t = (1 - s) * a.root_translation + s * b.root_translation
        out[i] = PoseParams(t, slerp(a.joint_rotations, b.joint_rotations, s))
    return out


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def fit_sequence(
    model: BodyModel,
    detections,
    cameras,
    config: FitConfig,
    masks=None,
    prior: PosePrior | None = None,
) -> SequenceFit:
    """Full two-stage fit.

    ``detections`` has shape (views, frames, joints, 3); ``masks`` is None or
    indexed [view][frame].
    """
    dets = np.asarray(detections, dtype=float)
    if dets.ndim != 4 or dets.shape[0] != len(cameras):
        raise InvalidArgument("detections must be (views, frames, joints, 3) with one camera per view")
    V, T = dets.shape[:2]
    if T < 1:
        raise InvalidArgument("sequence needs at least one frame")
    prior = prior if prior is not None else default_pose_prior(model)
    frame_masks = [None if masks is None else [masks[v][t] for v in range(V)] for t in range(T)]

    # Stage One runs in frame order: each frame starts from its predecessor
    poses, shapes, energies, fitted = [], [], [], []
    prev = None
    for t in range(T):
        try:
            shape, pose, rep = fit_frame(model, dets[:, t], cameras, config, prev, frame_masks[t], prior)
        except UnfittableFrame:
            log.warning("frame %d is unfittable; it will be interpolated", t)
            poses.append(None)
            shapes.append(None)
            energies.append(float("nan"))
            fitted.append(False)
            continue
        prev = (shape, pose)
        poses.append(pose)
        shapes.append(shape)
        energies.append(rep.energy)
        fitted.append(True)
    if not any(fitted):
        raise SequenceFailure("no frame could be fitted")
    stage_one = interpolate_poses(poses, fitted)
    beta_hat = median_shape(shapes)
    provenance = {
        "stages": ["stage-one"] + (["stage-two"] if config.use_temporal else []),
        "silhouette": bool(config.use_silhouette and masks is not None),
        "stage2_silhouette": bool(config.stage2_silhouette and masks is not None),
        "views": V,
        "frames": T,
        "unfitted_frames": [t for t, ok in enumerate(fitted) if not ok],
    }
    if not config.use_temporal:
        return SequenceFit(stage_one, stage_one, shapes, energies, fitted, beta_hat, [], provenance)

    bounds = window_bounds(T, config.window)

    def run(b):
        s, e = b
        wdets = [list(dets[:, t]) for t in range(s, e)]
        wmasks = None if masks is None else frame_masks[s:e]
        return fit_window(model, beta_hat, wdets, cameras, stage_one[s:e], config, wmasks, prior)

    results = _map(run, bounds, config.workers)
    final = [p for poses_w, _ in results for p in poses_w]
    reports = []
    for (s, e), (_, rep) in zip(bounds, results):
        d = rep.to_dict()
        d.update(start=s, stop=e, dct_k=min(config.dct_k, e - s))
        reports.append(d)
    provenance["windows"] = [[s, e] for s, e in bounds]
    return SequenceFit(final, stage_one, shapes, energies, fitted, beta_hat, reports, provenance)


def fit_monocular(
    model: BodyModel,
    detections,
    config: FitConfig,
    camera: Camera | None = None,
    image_size=None,
    masks=None,
    prior: PosePrior | None = None,
) -> SequenceFit:
    """Single-view variant. Without a camera a default one is synthesized
    from ``image_size`` (focal = max dimension, centered principal point)."""
    dets = np.asarray(detections, dtype=float)
    if dets.ndim == 3:
        dets = dets[None]
    if dets.shape[0] != 1:
        raise InvalidArgument("monocular fitting takes exactly one view")
    synthesized = camera is None
    if synthesized:
        if image_size is None:
            raise InvalidArgument("either a camera or an image size is required")
        camera = Camera.default_for_image(image_size)
    fit = fit_sequence(model, dets, [camera], config, masks, prior)
    fit.provenance["monocular"] = True
    fit.provenance["camera"] = {
        "synthesized": synthesized,
        "focal": camera.focal.tolist(),
        "principal_point": camera.principal_point.tolist(),
        "image_size": list(camera.image_size),
    }
    return fit


def frame_joints(model: BodyModel, fit: SequenceFit, stage: str = "final") -> np.ndarray:
    """3D joints per frame (T, J, 3). Stage One joints use each frame's own shape."""
    if stage == "final":
        return np.stack([posed_joints(model, fit.beta_hat, p) for p in fit.poses])
    out = []
    for p, s in zip(fit.stage_one_poses, fit.frame_shapes):
        out.append(posed_joints(model, s if s is not None else fit.beta_hat, p))
    return np.stack(out)
