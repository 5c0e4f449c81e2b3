"""Command-line interface: ``muvs fit``, ``muvs synth`` and ``muvs eval``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .body_model import load_model, make_default_model
from .config import FitConfig
from .errors import InvalidArgument, MuvsError, ParseError, SequenceFailure, ValidationError

log = logging.getLogger("muvs")

EXIT_CODES = {InvalidArgument: 2, ParseError: 3, ValidationError: 3, SequenceFailure: 4}


def _model(args):
    if getattr(args, "model", None):
        return load_model(args.model)
    return make_default_model(seed=args.model_seed, segments=args.mesh_segments)


def _add_model_args(p):
    p.add_argument("--model", help="body model file (.npz); defaults to the built-in procedural model")
    p.add_argument("--mesh-segments", type=int, default=8, help="ring resolution of the built-in model")
    p.add_argument("--model-seed", type=int, default=0, help="seed of the built-in model's shape space")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="muvs", description="Multi-view body shape and pose fitting.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a body sequence to detections, cameras and masks")
    fit.add_argument("--detections", required=True)
    fit.add_argument("--cameras", help="camera document; optional with --monocular")
    fit.add_argument("--masks", help="directory of view{v}_frame{t}.pgm masks")
    fit.add_argument("--out", required=True)
    fit.add_argument("--views", type=int, help="use only the first N views")
    fit.add_argument("--window", type=int)
    fit.add_argument("--dct-k", type=int)
    fit.add_argument("--no-silhouette", action="store_true")
    fit.add_argument("--stage2-silhouette", action="store_true")
    fit.add_argument("--no-temporal", action="store_true", help="stop after Stage One")
    fit.add_argument("--monocular", action="store_true")
    fit.add_argument("--image-size", type=int, nargs=2, metavar=("W", "H"), help="image size for a synthesized camera")
    fit.add_argument("--sigma1", type=float, help="joint robustness scale (pixels)")
    fit.add_argument("--sigma2", type=float, help="trajectory robustness scale (meters)")
    fit.add_argument("--lambda-t", type=float)
    fit.add_argument("--seed", type=int, default=0, help="recorded in provenance; fitting is deterministic")
    fit.add_argument("--workers", type=int)
    fit.add_argument("--config", help="JSON file of FitConfig fields")
    fit.add_argument("--obj", action="store_true", help="also write frame{t}.obj meshes")
    _add_model_args(fit)

    syn = sub.add_parser("synth", help="generate a synthetic sequence with ground truth")
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--views", type=int, default=4)
    syn.add_argument("--frames", type=int, default=30)
    syn.add_argument("--noise-px", type=float, default=0.0)
    syn.add_argument("--swap-rate", type=float, default=0.0)
    syn.add_argument("--swap-views", type=int, nargs="*")
    syn.add_argument("--mask-noise", type=int, default=0, help="dilate or erode masks by this many pixels")
    syn.add_argument("--no-masks", action="store_true")
    syn.add_argument("--out", required=True)
    _add_model_args(syn)

    ev = sub.add_parser("eval", help="score a fit against ground truth")
    ev.add_argument("--fit", required=True, help="poses.json written by fit")
    ev.add_argument("--truth", required=True, help="truth.json written by synth")
    ev.add_argument("--procrustes", action="store_true")
    ev.add_argument("--vertex-error", action="store_true")
    ev.add_argument("--out", help="write the report here as well as to stdout")
    _add_model_args(ev)
    return parser


def _config(args) -> FitConfig:
    cfg = FitConfig.load(args.config) if args.config else FitConfig()
    overrides = {}
    for name in ("window", "dct_k", "sigma1", "sigma2", "lambda_t", "workers"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if args.no_silhouette:
        overrides["use_silhouette"] = False
    if args.stage2_silhouette:
        overrides["stage2_silhouette"] = True
    if args.no_temporal:
        overrides["use_temporal"] = False
    return cfg.replace(**overrides) if overrides else cfg


def cmd_fit(args) -> int:
    from . import io
    from .pipeline import fit_monocular, fit_sequence

    cfg = _config(args)
    model = _model(args)
    dets, fps = io.load_detections(args.detections)
    cameras = io.load_cameras(args.cameras) if args.cameras else None
    if args.views is not None:
        if args.views < 1 or args.views > dets.shape[0]:
            raise InvalidArgument(f"--views must be between 1 and {dets.shape[0]}")
        dets = dets[: args.views]
        cameras = cameras[: args.views] if cameras else None
    if cameras is not None and len(cameras) != dets.shape[0]:
        raise ValidationError(f"{args.detections} has {dets.shape[0]} views but {args.cameras} has {len(cameras)} cameras")
    masks = None
    if args.masks and cfg.use_silhouette:
        masks = io.load_masks(args.masks, dets.shape[0], dets.shape[1], cameras)
    if args.monocular:
        if dets.shape[0] != 1:
            raise InvalidArgument("--monocular needs single-view detections (use --views 1)")
        size = tuple(args.image_size) if args.image_size else None
        if cameras is None and size is None and masks is not None:
            size = (masks[0][0].width, masks[0][0].height)
        fit = fit_monocular(model, dets, cfg, cameras[0] if cameras else None, size, masks)
    else:
        if cameras is None:
            raise InvalidArgument("--cameras is required unless --monocular is given")
        fit = fit_sequence(model, dets, cameras, cfg, masks)
    fit.provenance["seed"] = args.seed
    fit.provenance["inputs"] = {"detections": str(args.detections), "cameras": args.cameras, "masks": args.masks}
    written = io.write_results(args.out, model, fit, cfg, obj=args.obj)
    print(json.dumps({"status": "ok", "frames": fit.num_frames, "written": [str(p) for p in written]}))
    return 0


def cmd_synth(args) -> int:
    from . import io
    from .synth import synth_generate

    model = _model(args)
    bundle, truth = synth_generate(
        args.seed, args.views, args.frames, args.noise_px, args.swap_rate, args.mask_noise,
        swap_views=args.swap_views, model=model, masks=not args.no_masks,
    )  # fmt: skip
    paths = io.save_bundle(args.out, bundle)
    truth.extra["model"] = {"mesh_segments": args.mesh_segments, "model_seed": args.model_seed, "file": args.model}
    io.write_truth(Path(args.out) / "truth.json", truth)
    print(json.dumps({"status": "ok", **{k: str(v) for k, v in paths.items()}, "truth": str(Path(args.out) / "truth.json")}))
    return 0


def cmd_eval(args) -> int:
    from . import io
    from .evaluate import joint_errors, vertex_error

    est = io.results_joints(args.fit)
    truth = io.read_truth(args.truth)
    if est.shape != truth.joints.shape:
        raise InvalidArgument(f"fit has joints {est.shape}, truth has {truth.joints.shape}")
    per = joint_errors(est, truth.joints)
    report = {"per_frame_mm": per.tolist(), "mean_mm": float(per.mean()), "median_mm": float(np.median(per))}
    if args.procrustes:
        pp = joint_errors(est, truth.joints, procrustes=True)
        report["procrustes_per_frame_mm"] = pp.tolist()
        report["procrustes_mean_mm"] = float(pp.mean())
    if args.vertex_error:
        fit = io.read_results(args.fit)
        report["vertex_error_mm"] = vertex_error(_model(args), fit.beta_hat, truth.beta)
    text = json.dumps(report, indent=1)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    handler = {"fit": cmd_fit, "synth": cmd_synth, "eval": cmd_eval}[args.command]
    try:
        return handler(args)
    except MuvsError as exc:
        print(json.dumps(exc.record()), file=sys.stderr)
        return next((code for cls, code in EXIT_CODES.items() if isinstance(exc, cls)), 1)
    except OSError as exc:
        print(json.dumps({"error": "io-error", "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
