"""File formats: detections, cameras, silhouette masks, fit results, ground truth.

Detections are one JSON document::

    {"views": V, "frames": T, "joints": J, "fps": 30.0, "data": [...]}

where ``data`` is flat in (view, frame, joint, [x, y, w]) order. Cameras are
``{"cameras": [{"rotation", "translation", "focal", "principal_point",
"image_size"}, ...]}`` with the rotation written as 9 row-major entries (a
3x3 nested list is also accepted). Masks live in one directory as ``view{v}_frame{t}.pgm``
(binary P5) or ``.png`` (8-bit, thresholded at 128).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .body_model import BodyModel, PoseParams, ShapeParams, forward, write_obj
from .camera import Camera
from .errors import InvalidArgument, MuvsError, ParseError, ValidationError
from .silhouette import SilhouetteMask

log = logging.getLogger(__name__)


@dataclass
class SequenceBundle:
    detections: np.ndarray  # (views, frames, joints, 3)
    cameras: list
    masks: list | None = None  # [view][frame] SilhouetteMask, or None
    fps: float = 30.0
    masks_dir: str | None = None

    @property
    def num_views(self) -> int:
        return self.detections.shape[0]

    @property
    def num_frames(self) -> int:
        return self.detections.shape[1]

    @property
    def num_joints(self) -> int:
        return self.detections.shape[2]


@dataclass
class GroundTruth:
    beta: np.ndarray
    poses: list
    joints: np.ndarray  # (frames, joints, 3)
    vertices: np.ndarray | None = None
    extra: dict = field(default_factory=dict)


def _load_json(path: str | Path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc


def _field(doc: dict, key: str, path, kind=None):
    if not isinstance(doc, dict) or key not in doc:
        raise ParseError(f"{path}: missing field '{key}'")
    value = doc[key]
    if kind is int and not (isinstance(value, int) and not isinstance(value, bool)):
        raise ParseError(f"{path}: field '{key}' must be an integer")
    return value


def _array(value, shape, path, name) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{path}: field '{name}' is not numeric") from exc
    if shape is not None and arr.shape != shape:
        raise ParseError(f"{path}: field '{name}' has shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise ParseError(f"{path}: field '{name}' has non-finite entries")
    return arr


# ---------------------------------------------------------------------------
# detections


def parse_detections(doc: dict, path="<detections>") -> tuple[np.ndarray, float]:
    V = _field(doc, "views", path, int)
    T = _field(doc, "frames", path, int)
    J = _field(doc, "joints", path, int)
    if min(V, T, J) < 1:
        raise ValidationError(f"{path}: views, frames and joints must be positive")
    data = _array(_field(doc, "data", path), None, path, "data").ravel()
    if data.size != V * T * J * 3:
        raise ValidationError(f"{path}: 'data' holds {data.size} numbers, expected {V}*{T}*{J}*3 = {V * T * J * 3}")
    dets = data.reshape(V, T, J, 3).copy()
    w = dets[..., 2]
    bad = (w < 0) | (w > 1)
    if np.any(bad):
        log.warning("%s: %d confidences outside [0, 1] clamped", path, int(bad.sum()))
        dets[..., 2] = np.clip(w, 0.0, 1.0)
    fps = float(doc.get("fps", 30.0))
    return dets, fps


def load_detections(path: str | Path) -> tuple[np.ndarray, float]:
    return parse_detections(_load_json(path), path)


def detections_document(dets: np.ndarray, fps: float = 30.0) -> dict:
    dets = np.asarray(dets, dtype=float)
    V, T, J, _ = dets.shape
    return {"views": V, "frames": T, "joints": J, "fps": float(fps), "data": dets.ravel().tolist()}


def save_detections(path: str | Path, dets: np.ndarray, fps: float = 30.0) -> None:
    Path(path).write_text(json.dumps(detections_document(dets, fps)))


# ---------------------------------------------------------------------------
# cameras


def camera_to_dict(cam: Camera) -> dict:
    return {
        "rotation": cam.rotation.ravel().tolist(),
        "translation": cam.translation.tolist(),
        "focal": cam.focal.tolist(),
        "principal_point": cam.principal_point.tolist(),
        "image_size": list(cam.image_size),
    }


def camera_from_dict(d: dict, path="<cameras>", index: int = 0) -> Camera:
    where = f"{path} camera {index}"
    rot = _array(_field(d, "rotation", where), None, where, "rotation")
    if rot.size != 9 or rot.shape not in ((9,), (3, 3)):
        raise ParseError(f"{where}: field 'rotation' needs 9 row-major entries or a 3x3 nested list")
    rot = rot.reshape(3, 3)
    trans = _array(_field(d, "translation", where), (3,), where, "translation")
    focal = _array(_field(d, "focal", where), None, where, "focal")
    focal = np.broadcast_to(focal, (2,)) if focal.size in (1, 2) else focal
    pp = _array(_field(d, "principal_point", where), (2,), where, "principal_point")
    size = _array(_field(d, "image_size", where), (2,), where, "image_size")
    try:
        return Camera(rot, trans, focal, pp, (int(size[0]), int(size[1])))
    except (InvalidArgument, ValueError) as exc:
        raise ValidationError(f"{where}: {exc}") from exc


def load_cameras(path: str | Path) -> list:
    doc = _load_json(path)
    cams = _field(doc, "cameras", path)
    if not isinstance(cams, list) or not cams:
        raise ParseError(f"{path}: 'cameras' must be a nonempty list")
    return [camera_from_dict(c, path, i) for i, c in enumerate(cams)]


def save_cameras(path: str | Path, cameras) -> None:
    Path(path).write_text(json.dumps({"cameras": [camera_to_dict(c) for c in cameras]}, indent=1))


# ---------------------------------------------------------------------------
# masks


def mask_name(view: int, frame: int, ext: str = "pgm") -> str:
    return f"view{view}_frame{frame}.{ext}"


def read_mask(path: str | Path) -> SilhouetteMask:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"))
    except OSError as exc:
        raise ParseError(f"{path}: unreadable mask image") from exc
    return SilhouetteMask(arr >= 128)


def write_mask(path: str | Path, mask) -> None:
    m = mask.mask if isinstance(mask, SilhouetteMask) else np.asarray(mask, dtype=bool)
    Image.fromarray(np.where(m, 255, 0).astype(np.uint8), mode="L").save(path)


def load_masks(directory: str | Path, views: int, frames: int, cameras=None) -> list:
    """Masks indexed [view][frame]; every file must be present."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ValidationError(f"masks directory {directory} does not exist")
    out = []
    for v in range(views):
        row = []
        for t in range(frames):
            path = directory / mask_name(v, t, "pgm")
            if not path.exists():
                alt = directory / mask_name(v, t, "png")
                if not alt.exists():
                    raise ValidationError(f"missing mask file {path}")
                path = alt
            m = read_mask(path)
            if cameras is not None and (m.width, m.height) != tuple(cameras[v].image_size):
                raise ValidationError(f"{path}: mask size {m.width}x{m.height} differs from camera {v} image size")
            row.append(m)
        out.append(row)
    return out


def save_masks(directory: str | Path, masks) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for v, row in enumerate(masks):
        for t, m in enumerate(row):
            write_mask(directory / mask_name(v, t), m)


# ---------------------------------------------------------------------------
# bundles


def load_bundle(detections: str | Path, cameras: str | Path, masks: str | Path | None = None) -> SequenceBundle:
    dets, fps = load_detections(detections)
    cams = load_cameras(cameras)
    if len(cams) != dets.shape[0]:
        raise ValidationError(f"{detections} has {dets.shape[0]} views but {cameras} has {len(cams)} cameras")
    mk = None
    if masks is not None:
        mk = load_masks(masks, dets.shape[0], dets.shape[1], cams)
    return SequenceBundle(dets, cams, mk, fps, None if masks is None else str(masks))


def save_bundle(directory: str | Path, bundle: SequenceBundle) -> dict:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {"detections": directory / "detections.json", "cameras": directory / "cameras.json"}
    save_detections(paths["detections"], bundle.detections, bundle.fps)
    save_cameras(paths["cameras"], bundle.cameras)
    if bundle.masks is not None:
        paths["masks"] = directory / "masks"
        save_masks(paths["masks"], bundle.masks)
    return paths


# ---------------------------------------------------------------------------
# results and ground truth


def _num(x):
    x = float(x)
    return None if not math.isfinite(x) else x


def _pose_record(pose: PoseParams) -> dict:
    return {"root_translation": pose.root_translation.tolist(), "joint_rotations": pose.joint_rotations.tolist()}


def _config_echo(config) -> dict:
    # the worker count never changes results, so it is left out to keep runs diffable
    d = config.to_dict()
    d.pop("workers", None)
    return d


def results_document(model: BodyModel, fit, config=None) -> dict:
    from .pipeline import frame_joints

    joints = frame_joints(model, fit)
    frames = []
    for t in range(fit.num_frames):
        shape = fit.frame_shapes[t]
        frames.append(
            {
                "frame": t,
                "fitted": bool(fit.fitted[t]),
                **_pose_record(fit.poses[t]),
                "joints": joints[t].tolist(),
                "stage_one": {
                    **_pose_record(fit.stage_one_poses[t]),
                    "beta": None if shape is None else shape.beta.tolist(),
                    "energy": _num(fit.frame_energies[t]),
                },
            }
        )
    return {
        "format": "muvs-poses",
        "version": 1,
        "beta_hat": fit.beta_hat.beta.tolist(),
        "frames": frames,
        "windows": fit.window_reports,
        "provenance": fit.provenance,
        "config": None if config is None else _config_echo(config),
    }


def write_results(out_dir: str | Path, model: BodyModel, fit, config=None, obj: bool = False) -> list:
    """Write poses.json (and frame{t}.obj meshes when asked); returns paths written."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        path = out / "poses.json"
        path.write_text(json.dumps(results_document(model, fit, config), indent=1, allow_nan=False))
        written = [path]
        if obj:
            for t, pose in enumerate(fit.poses):
                mesh = out / f"frame{t}.obj"
                write_obj(mesh, forward(model, fit.beta_hat, pose).vertices, model.faces)
                written.append(mesh)
    except OSError as exc:
        raise MuvsError(f"cannot write results to {exc.filename or out}: {exc.strerror}") from exc
    return written


def read_results(path: str | Path):
    """Reload a poses.json document as a SequenceFit."""
    from .pipeline import SequenceFit

    doc = _load_json(path)
    frames = _field(doc, "frames", path)

    def pose(d):
        return PoseParams(np.asarray(d["root_translation"], dtype=float), np.asarray(d["joint_rotations"], dtype=float))

    try:
        poses = [pose(f) for f in frames]
        s1 = [pose(f["stage_one"]) for f in frames]
        shapes = [None if f["stage_one"]["beta"] is None else ShapeParams(f["stage_one"]["beta"]) for f in frames]
        energies = [float("nan") if f["stage_one"]["energy"] is None else f["stage_one"]["energy"] for f in frames]
        fitted = [bool(f["fitted"]) for f in frames]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{path}: malformed frame record ({exc})") from exc
    beta = ShapeParams(_field(doc, "beta_hat", path))
    fit = SequenceFit(poses, s1, shapes, energies, fitted, beta, doc.get("windows", []), doc.get("provenance", {}))
    return fit


def results_joints(path: str | Path) -> np.ndarray:
    doc = _load_json(path)
    return np.asarray([f["joints"] for f in _field(doc, "frames", path)], dtype=float)


def write_truth(path: str | Path, truth: GroundTruth) -> None:
    doc = {
        "beta": np.asarray(truth.beta).tolist(),
        "frames": [
            {**_pose_record(p), "joints": truth.joints[t].tolist()} for t, p in enumerate(truth.poses)
        ],
        **truth.extra,
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def read_truth(path: str | Path) -> GroundTruth:
    doc = _load_json(path)
    frames = _field(doc, "frames", path)
    try:
        poses = [PoseParams(f["root_translation"], f["joint_rotations"]) for f in frames]
        joints = np.asarray([f["joints"] for f in frames], dtype=float)
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{path}: malformed truth frame ({exc})") from exc
    extra = {k: v for k, v in doc.items() if k not in ("beta", "frames")}
    return GroundTruth(np.asarray(_field(doc, "beta", path), dtype=float), poses, joints, None, extra)
