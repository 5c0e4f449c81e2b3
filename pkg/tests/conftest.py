import sys

import numpy as np
import pytest
import scipy.sparse as sp

from muvs.body_model import NUM_BETAS, BodyModel, make_default_model
from muvs.camera import Camera


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is not None and acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(acceptance.RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def model():
    return make_default_model(seed=0, segments=6)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def identity_camera(focal=1000.0, pp=(500.0, 500.0), size=(1000, 1000)):
    return Camera(np.eye(3), np.zeros(3), (focal, focal), pp, size)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def chain_model(blend=None):
    """Two joints on the x axis, with one vertex per joint plus a child tip."""
    verts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    faces = np.array([[0, 1, 2], [0, 2, 1]])
    if blend is None:
        blend = np.zeros((3, 3, NUM_BETAS))
    reg = sp.csr_matrix(np.array([[1.0, 0, 0], [0, 1.0, 0]]))
    skin = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    return BodyModel(verts, faces, blend, np.array([-1, 0]), reg, skin, joint_names=("a", "b"), left_right_pairs=())


def rel_err(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12)


def horn_align(source, target):
    """Similarity alignment by Horn's unit-quaternion method (no SVD)."""
    mu_s, mu_t = source.mean(axis=0), target.mean(axis=0)
    S, T = source - mu_s, target - mu_t
    M = S.T @ T
    (sxx, sxy, sxz), (syx, syy, syz), (szx, szy, szz) = M
    N = np.array(
        [
            [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
            [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
            [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
            [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
        ]
    )
    w, v = np.linalg.eigh(N)
    q0, qx, qy, qz = v[:, -1]
    R = np.array(
        [
            [q0**2 + qx**2 - qy**2 - qz**2, 2 * (qx * qy - q0 * qz), 2 * (qx * qz + q0 * qy)],
            [2 * (qy * qx + q0 * qz), q0**2 - qx**2 + qy**2 - qz**2, 2 * (qy * qz - q0 * qx)],
            [2 * (qz * qx - q0 * qy), 2 * (qz * qy + q0 * qx), q0**2 - qx**2 - qy**2 + qz**2],
        ]
    )
    scale = w[-1] / np.sum(S * S)
    return scale * S @ R.T + mu_t
