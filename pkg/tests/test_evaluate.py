import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from muvs.body_model import ShapeParams
from muvs.errors import InvalidArgument
from muvs.evaluate import evaluate, joint_errors, similarity_align, vertex_error
from muvs.io import GroundTruth
from muvs.pipeline import SequenceFit

from conftest import horn_align, random_rotation


def _truth(rng, frames=4):
    return GroundTruth(rng.normal(size=10), [], rng.normal(size=(frames, 24, 3)))


def test_exact_fit_scores_zero(model, rng):
    truth = _truth(rng)
    rep = evaluate(model, truth.joints.copy(), truth, procrustes=True)
    assert rep.mean == 0 and rep.median == 0 and np.all(rep.per_frame == 0)
    assert rep.procrustes_mean < 1e-9
    assert vertex_error(model, truth.beta, truth.beta) == 0


def test_translation_is_removed_by_procrustes(model, rng):
    truth = _truth(rng)
    rep = evaluate(model, truth.joints + np.array([0.006, 0.0, 0.008]), truth, procrustes=True)
    np.testing.assert_allclose(rep.per_frame, 10.0, atol=1e-9)
    assert rep.procrustes_mean < 1e-9


def test_similarity_is_removed(rng):
    x = rng.normal(size=(24, 3))
    y = 1.7 * x @ random_rotation(rng).T + rng.normal(size=3)
    np.testing.assert_allclose(similarity_align(x, y), y, atol=1e-12)


@settings(max_examples=100)
@given(st.integers(0, 2**31), st.integers(4, 40))
def test_alignment_matches_quaternion_oracle(seed, n):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 3))
    y = rng.uniform(0.5, 2) * x @ random_rotation(rng).T + rng.normal(size=3) + rng.normal(0, 0.1, (n, 3))
    np.testing.assert_allclose(similarity_align(x, y), horn_align(x, y), atol=1e-8)


def test_procrustes_never_exceeds_raw_error(rng):
    truth = rng.normal(size=(5, 24, 3))
    est = truth + rng.normal(0, 0.02, truth.shape)
    raw = joint_errors(est, truth)
    aligned = joint_errors(est, truth, procrustes=True)
    assert np.all(aligned <= raw + 1e-12)
    oracle = np.array([np.linalg.norm(horn_align(e, t) - t, axis=1).mean() * 1000 for e, t in zip(est, truth)])
    np.testing.assert_allclose(aligned, oracle, atol=1e-8)


def test_vertex_error_and_joint_subset(model, rng):
    truth = _truth(rng, 2)
    beta = truth.beta.copy()
    fit = SequenceFit([], [], [], [], [], ShapeParams(beta), [], {})
    assert vertex_error(model, fit.beta_hat, beta) == 0
    assert vertex_error(model, beta + 0.5, beta) > 0
    est = truth.joints.copy()
    est[:, 5] += [0.0, 0.0, 0.024]
    rep = evaluate(model, est, truth, joints=[5])
    np.testing.assert_allclose(rep.per_frame, 24.0, atol=1e-9)
    assert rep.to_dict()["mean_mm"] == pytest.approx(24.0)


def test_mismatched_counts_are_rejected(model, rng):
    truth = _truth(rng, 3)
    with pytest.raises(InvalidArgument):
        evaluate(model, truth.joints[:2], truth)
    with pytest.raises(InvalidArgument):
        joint_errors(np.zeros((2, 3, 3)), np.zeros((2, 4, 3)))
    with pytest.raises(InvalidArgument):
        evaluate(model, truth.joints, truth, with_vertex_error=True)
