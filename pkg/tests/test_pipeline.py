import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from muvs.body_model import PoseParams, ShapeParams, posed_joints
from muvs.camera import project
from muvs.config import FitConfig
from muvs.energy import default_pose_prior, multiview_term
from muvs.errors import InvalidArgument, SequenceFailure, UnfittableFrame
from muvs.evaluate import vertex_error
from muvs.pipeline import (
    fit_frame,
    fit_monocular,
    fit_sequence,
    fit_window,
    frame_joints,
    interpolate_poses,
    median_shape,
    window_bounds,
)
from muvs.rotation import rodrigues
from muvs.synth import synth_generate

JOINTS_ONLY = FitConfig(use_silhouette=False)
ZERO_PRIOR = FitConfig(use_silhouette=False, schedule=((0.0, 0.0),), lambda_theta=0.0, lambda_beta=0.0)


def _rmse(a, b):
    return float(np.sqrt(np.mean(np.sum((a - b) ** 2, axis=-1))))


@pytest.fixture(scope="module")
def clean4(model):
    return synth_generate(7, 4, 3, model=model, masks=False)


def test_fit_frame_recovers_noiseless_joints(model, clean4):
    bundle, truth = clean4
    shape, pose, rep = fit_frame(model, bundle.detections[:, 0], bundle.cameras, FitConfig(use_silhouette=False))
    assert _rmse(posed_joints(model, shape, pose), truth.joints[0]) < 1e-3
    assert np.isfinite(rep.energy)


def test_fit_frame_without_any_confident_joint_is_unfittable(model, clean4):
    bundle, _ = clean4
    empty = bundle.detections[:1, 0].copy()
    empty[..., 2] = 0.0
    with pytest.raises(UnfittableFrame):
        fit_frame(model, empty, bundle.cameras[:1], JOINTS_ONLY)


def test_fit_frame_started_at_truth_stops_immediately(model, clean4):
    bundle, truth = clean4
    init = (ShapeParams(truth.beta), truth.poses[0])
    shape, pose, rep = fit_frame(model, bundle.detections[:, 0], bundle.cameras, ZERO_PRIOR, init=init)
    assert rep.energy < 1e-12
    assert all(p["iterations"] <= 2 for p in rep.passes)
    assert _rmse(posed_joints(model, shape, pose), truth.joints[0]) < 1e-6


def test_fit_frame_view_count_checked(model, clean4):
    bundle, _ = clean4
    with pytest.raises(InvalidArgument):
        fit_frame(model, bundle.detections[:2, 0], bundle.cameras[:3], JOINTS_ONLY)


def test_median_shape_examples():
    b = np.arange(10.0)
    assert np.array_equal(median_shape([ShapeParams(b)]).beta, b)
    shapes = [ShapeParams(np.r_[v, np.zeros(9)]) for v in (1.0, 5.0, 2.0)]
    assert median_shape(shapes).beta[0] == 2.0
    pair = [ShapeParams(np.full(10, 1.0)), ShapeParams(np.full(10, 4.0))]
    assert np.all(median_shape(pair).beta == 2.5)
    assert median_shape([None, ShapeParams(b)]).beta[3] == 3.0
    with pytest.raises(InvalidArgument):
        median_shape([])


@settings(max_examples=30)
@given(st.integers(1, 100), st.integers(0, 2**31))
def test_median_shape_matches_sorting(n, seed):
    B = np.random.default_rng(seed).normal(size=(n, 10))
    got = median_shape([ShapeParams(b) for b in B]).beta
    S = np.sort(B, axis=0)
    expected = S[n // 2] if n % 2 else (S[n // 2 - 1] + S[n // 2]) / 2
    np.testing.assert_allclose(got, expected, rtol=0, atol=1e-15)


def _window_inputs(bundle, lo, hi):
    return [list(bundle.detections[:, t]) for t in range(lo, hi)]


def test_window_without_temporal_weight_decouples(model, rng):
    bundle, truth = synth_generate(3, 3, 3, noise_px=3.0, model=model, masks=False)
    beta = ShapeParams(truth.beta)
    cfg = JOINTS_ONLY.replace(lambda_t=0.0, stage2_iterations=100)
    init = [PoseParams(p.root_translation + 0.01, p.joint_rotations + rng.normal(0, 0.02, p.joint_rotations.shape)) for p in truth.poses]
    joint, _ = fit_window(model, beta, _window_inputs(bundle, 0, 3), bundle.cameras, init, cfg)
    for t in range(3):
        alone, _ = fit_window(model, beta, _window_inputs(bundle, t, t + 1), bundle.cameras, init[t : t + 1], cfg)
        assert _rmse(posed_joints(model, beta, joint[t]), posed_joints(model, beta, alone[0])) < 1e-6


def test_window_at_truth_is_left_alone(model):
    bundle, truth = synth_generate(4, 2, 5, model=model, masks=False)
    cfg = ZERO_PRIOR.replace(lambda_t=1.0)
    poses, rep = fit_window(model, ShapeParams(truth.beta), _window_inputs(bundle, 0, 5), bundle.cameras, truth.poses, cfg)
    for a, b in zip(poses, truth.poses):
        assert np.max(np.abs(a.to_vector() - b.to_vector())) < 1e-6


def test_window_fixes_an_injected_ankle_swap(model):
    bundle, truth = synth_generate(11, 2, 30, noise_px=1.0, model=model, masks=False)
    swap = model.swap_permutation()
    dets = bundle.detections.copy()
    t_bad = 14
    ankles = [7, 8]
    dets[0, t_bad] = dets[0, t_bad][swap]
    fit = fit_sequence(model, dets, bundle.cameras, JOINTS_ONLY)
    s1 = frame_joints(model, fit, "stage1")[t_bad, ankles]
    s2 = frame_joints(model, fit)[t_bad, ankles]
    true = truth.joints[t_bad, ankles]
    assert np.linalg.norm(s2 - true, axis=1).mean() < np.linalg.norm(s1 - true, axis=1).mean()


def test_window_cost_does_not_increase(model):
    bundle, truth = synth_generate(5, 2, 6, noise_px=2.0, model=model, masks=False)
    init = [PoseParams(p.root_translation, p.joint_rotations + 0.05) for p in truth.poses]
    _, rep = fit_window(model, ShapeParams(truth.beta), _window_inputs(bundle, 0, 6), bundle.cameras, init, JOINTS_ONLY)
    assert rep.final_cost <= rep.initial_cost


def test_window_bounds():
    assert window_bounds(60, 30) == [(0, 30), (30, 60)]
    assert window_bounds(35, 30) == [(0, 30), (30, 35)]
    assert window_bounds(1, 30) == [(0, 1)]


def test_sequence_bookkeeping_with_short_last_window(model):
    bundle, _ = synth_generate(2, 2, 7, noise_px=1.0, model=model, masks=False)
    fit = fit_sequence(model, bundle.detections, bundle.cameras, JOINTS_ONLY.replace(window=5))
    assert fit.num_frames == 7 and len(fit.stage_one_poses) == 7
    assert [(w["start"], w["stop"], w["dct_k"]) for w in fit.window_reports] == [(0, 5, 5), (5, 7, 2)]
    assert fit.beta_hat.beta.shape == (10,)
    assert fit.provenance["stages"] == ["stage-one", "stage-two"]


def test_stage_two_reduces_noisy_joint_error(model):
    bundle, truth = synth_generate(21, 2, 30, noise_px=2.0, model=model, masks=False)
    fit = fit_sequence(model, bundle.detections, bundle.cameras, JOINTS_ONLY)
    s1 = np.linalg.norm(frame_joints(model, fit, "stage1") - truth.joints, axis=-1).mean()
    s2 = np.linalg.norm(frame_joints(model, fit) - truth.joints, axis=-1).mean()
    assert s2 < s1


def test_unfittable_frames_are_interpolated(model):
    bundle, truth = synth_generate(9, 2, 5, model=model, masks=False)
    dets = bundle.detections.copy()
    dets[:, 2, :, 2] = 0.0
    fit = fit_sequence(model, dets, bundle.cameras, JOINTS_ONLY.replace(use_temporal=False))
    assert fit.fitted == [True, True, False, True, True]
    assert fit.frame_shapes[2] is None and fit.provenance["unfitted_frames"] == [2]
    a, b, mid = fit.stage_one_poses[1], fit.stage_one_poses[3], fit.stage_one_poses[2]
    np.testing.assert_allclose(mid.root_translation, (a.root_translation + b.root_translation) / 2, atol=1e-12)
    dets[:, :, :, 2] = 0.0
    with pytest.raises(SequenceFailure):
        fit_sequence(model, dets, bundle.cameras, JOINTS_ONLY)


def test_interpolation_is_linear_and_spherical():
    a = PoseParams(np.zeros(3), np.zeros((24, 3)))
    rot = np.zeros((24, 3))
    rot[5] = [0, 0, 1.2]
    b = PoseParams(np.array([3.0, 0, 0]), rot)
    out = interpolate_poses([a, None, None, b], [True, False, False, True])
    np.testing.assert_allclose(out[1].root_translation, [1, 0, 0], atol=1e-12)
    np.testing.assert_allclose(rodrigues(out[2].joint_rotations[5]), rodrigues(np.array([0, 0, 0.8])), atol=1e-12)
    edge = interpolate_poses([None, a, b], [False, True, True])
    assert edge[0] is a
    with pytest.raises(SequenceFailure):
        interpolate_poses([None], [False])


def test_monocular_perfect_observations_reproject_exactly(model):
    bundle, _ = synth_generate(6, 1, 1, model=model, masks=False)
    cfg = ZERO_PRIOR.replace(pass_iterations=300)  # depth and scale are nearly free, so convergence is slow
    fit = fit_monocular(model, bundle.detections, cfg, camera=bundle.cameras[0])
    pix = project(bundle.cameras[0], posed_joints(model, fit.beta_hat, fit.poses[0]))
    assert np.max(np.abs(pix - bundle.detections[0, 0, :, :2])) < 1e-6
    assert fit.provenance["camera"]["synthesized"] is False


def test_monocular_synthesizes_a_default_camera(model):
    bundle, _ = synth_generate(6, 1, 2, model=model, masks=False)
    fit = fit_monocular(model, bundle.detections, JOINTS_ONLY.replace(use_temporal=False), image_size=(640, 480))
    cam = fit.provenance["camera"]
    assert cam["synthesized"] and cam["focal"] == [640.0, 640.0]
    assert cam["principal_point"] == [320.0, 240.0] and fit.provenance["monocular"]
    with pytest.raises(InvalidArgument):
        fit_monocular(model, bundle.detections, JOINTS_ONLY)
    with pytest.raises(InvalidArgument):
        fit_monocular(model, np.zeros((2, 2, 24, 3)), JOINTS_ONLY, image_size=(640, 480))


def test_frame_energy_matches_joint_term(model, clean4):
    bundle, _ = clean4
    fit = fit_sequence(model, bundle.detections[:, :1], bundle.cameras, JOINTS_ONLY.replace(use_temporal=False))
    lt, lb = JOINTS_ONLY.schedule[-1]
    cfg = JOINTS_ONLY.replace(lambda_theta=lt, lambda_beta=lb)
    e = multiview_term(model, fit.frame_shapes[0], fit.poses[0], bundle.cameras, list(bundle.detections[:, 0]), cfg, default_pose_prior(model))
    assert abs(fit.frame_energies[0] - e) < 1e-12


def test_silhouette_pass_improves_shape(model):
    bundle, truth = synth_generate(9, 4, 1, model=model)
    cfg = FitConfig(use_temporal=False, silhouette_iterations=2)
    fit = fit_sequence(model, bundle.detections, bundle.cameras, cfg, bundle.masks)
    base = fit_sequence(model, bundle.detections, bundle.cameras, cfg.replace(use_silhouette=False), bundle.masks)
    assert fit.provenance["silhouette"] and not base.provenance["silhouette"]
    assert np.isfinite(fit.frame_energies[0])
    assert _rmse(frame_joints(model, fit, "stage1")[0], truth.joints[0]) < 1e-3
    assert vertex_error(model, fit.beta_hat, truth.beta) < vertex_error(model, base.beta_hat, truth.beta)
