"""Procedural SMPL-like articulated body model.

The model has the mathematical structure of SMPL (linear shape blendshapes,
a 24-joint kinematic tree, linear blend skinning and a sparse joint
regressor) but its parameters are generated procedurally from capsules, so
no licensed data is needed.

Parameter vectors used by the solvers are laid out as
``[beta (10), root translation (3), joint rotations (24 x 3)]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgument
from .rotation import left_jacobian, rodrigues

NUM_BETAS = 10

JOINT_NAMES = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
    "spine2", "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot",
    "neck", "left_collar", "right_collar", "head", "left_shoulder",
    "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
    "left_hand", "right_hand",
)  # fmt: skip

PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21)

LEFT_RIGHT_PAIRS = ((1, 2), (4, 5), (7, 8), (10, 11), (13, 14), (16, 17), (18, 19), (20, 21), (22, 23))

# rest-pose joint locations (meters, y up, subject facing +z, left is +x)
_REST_JOINTS = np.array(
    [
        [0.0, 0.0, 0.0],
        [0.09, -0.08, 0.0],
        [-0.09, -0.08, 0.0],
        [0.0, 0.11, -0.01],
        [0.10, -0.48, 0.01],
        [-0.10, -0.48, 0.01],
        [0.0, 0.24, -0.01],
        [0.10, -0.88, -0.02],
        [-0.10, -0.88, -0.02],
        [0.0, 0.31, 0.0],
        [0.11, -0.94, 0.11],
        [-0.11, -0.94, 0.11],
        [0.0, 0.52, -0.01],
        [0.07, 0.43, -0.01],
        [-0.07, 0.43, -0.01],
        [0.0, 0.62, 0.02],
        [0.18, 0.44, -0.01],
        [-0.18, 0.44, -0.01],
        [0.44, 0.44, -0.02],
        [-0.44, 0.44, -0.02],
        [0.68, 0.44, -0.01],
        [-0.68, 0.44, -0.01],
        [0.77, 0.44, -0.01],
        [-0.77, 0.44, -0.01],
        [0.0, 0.80, 0.02],  # head top, not a joint
    ]
)
_HEAD_TOP = 24

# (a, b, radius at a, radius at b, depth/width ratio, skin owner, regress ring a, regress ring b)
_CAPSULES = (
    (0, 3, 0.125, 0.12, 0.75, 0, 0, None),
    (3, 6, 0.12, 0.125, 0.72, 3, 3, None),
    (6, 9, 0.125, 0.13, 0.72, 6, 6, None),
    (9, 12, 0.12, 0.07, 0.75, 9, 9, None),
    (1, 2, 0.095, 0.095, 1.0, 0, None, None),
    (13, 14, 0.07, 0.07, 1.0, 9, None, None),
    (12, 15, 0.05, 0.05, 1.0, 12, 12, None),
    (15, _HEAD_TOP, 0.09, 0.075, 1.0, 15, 15, None),
    (1, 4, 0.075, 0.055, 1.0, 1, 1, None),
    (2, 5, 0.075, 0.055, 1.0, 2, 2, None),
    (4, 7, 0.05, 0.04, 1.0, 4, 4, None),
    (5, 8, 0.05, 0.04, 1.0, 5, 5, None),
    (7, 10, 0.04, 0.032, 1.0, 7, 7, 10),
    (8, 11, 0.04, 0.032, 1.0, 8, 8, 11),
    (13, 16, 0.05, 0.05, 1.0, 13, 13, None),
    (14, 17, 0.05, 0.05, 1.0, 14, 14, None),
    (16, 18, 0.05, 0.042, 1.0, 16, 16, None),
    (17, 19, 0.05, 0.042, 1.0, 17, 17, None),
    (18, 20, 0.04, 0.032, 1.0, 18, 18, None),
    (19, 21, 0.04, 0.032, 1.0, 19, 19, None),
    (20, 22, 0.03, 0.028, 1.0, 20, 20, 22),
    (21, 23, 0.03, 0.028, 1.0, 21, 21, 23),
)

_BLEND_ZONE = 0.3


@dataclass(frozen=True)
class ShapeParams:
    beta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float).reshape(-1))

    @classmethod
    def zeros(cls) -> "ShapeParams":
        return cls(np.zeros(NUM_BETAS))


@dataclass(frozen=True)
class PoseParams:
    root_translation: np.ndarray
    joint_rotations: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "root_translation", np.asarray(self.root_translation, dtype=float).reshape(3))
        object.__setattr__(self, "joint_rotations", np.asarray(self.joint_rotations, dtype=float).reshape(-1, 3))

    @classmethod
    def rest(cls, num_joints: int = 24, translation=(0.0, 0.0, 0.0)) -> "PoseParams":
        return cls(np.asarray(translation, dtype=float), np.zeros((num_joints, 3)))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.root_translation, self.joint_rotations.ravel()])

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "PoseParams":
        x = np.asarray(x, dtype=float)
        return cls(x[:3], x[3:].reshape(-1, 3))


@dataclass
class PosedBody:
    vertices: np.ndarray
    joints: np.ndarray
    joint_jacobian: np.ndarray | None = None
    vertex_jacobian: np.ndarray | None = None
    vertex_ids: np.ndarray | None = None
    selected_vertices: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class BodyModel:
    template_vertices: np.ndarray
    faces: np.ndarray
    shape_blendshapes: np.ndarray
    parents: np.ndarray
    joint_regressor: sp.csr_matrix
    skinning_weights: np.ndarray
    joint_names: tuple = JOINT_NAMES
    left_right_pairs: tuple = LEFT_RIGHT_PAIRS
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        V = self.template_vertices.shape[0]
        J = len(self.parents)
        if self.template_vertices.shape != (V, 3):
            raise InvalidArgument("template_vertices must be V x 3")
        if self.shape_blendshapes.shape != (V, 3, NUM_BETAS):
            raise InvalidArgument(f"shape_blendshapes must be {V} x 3 x {NUM_BETAS}")
        if self.skinning_weights.shape != (V, J) or self.joint_regressor.shape != (J, V):
            raise InvalidArgument("skinning weights / joint regressor dimensions disagree")
        parents = np.asarray(self.parents)
        if parents[0] != -1 or np.sum(parents < 0) != 1 or np.any(parents[1:] >= np.arange(1, J)):
            raise InvalidArgument("kinematic tree must be topologically ordered with a single root at index 0")
        for name, M in (("skinning", self.skinning_weights), ("regressor", self.joint_regressor.toarray())):
            if np.any(M < 0) or np.max(np.abs(M.sum(axis=1) - 1)) > 1e-9:
                raise InvalidArgument(f"{name} rows must be nonnegative and sum to 1")

    @property
    def num_vertices(self) -> int:
        return self.template_vertices.shape[0]

    @property
    def num_joints(self) -> int:
        return len(self.parents)

    @property
    def num_params(self) -> int:
        return NUM_BETAS + 3 + 3 * self.num_joints

    @cached_property
    def template_joints(self) -> np.ndarray:
        return np.asarray(self.joint_regressor @ self.template_vertices)

    @cached_property
    def joint_blendshapes(self) -> np.ndarray:
        flat = self.shape_blendshapes.reshape(self.num_vertices, -1)
        return np.asarray(self.joint_regressor @ flat).reshape(self.num_joints, 3, NUM_BETAS)

    @cached_property
    def subtree(self) -> np.ndarray:
        """subtree[k, j] is True when joint j is k or a descendant of k."""
        J = self.num_joints
        out = np.eye(J, dtype=bool)
        for j in range(J - 1, 0, -1):
            out[self.parents[j]] |= out[j]
        return out

    @cached_property
    def skin_support(self) -> np.ndarray:
        return self.skinning_weights > 0

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges with the two adjacent faces, shape (E, 4)."""
        f = self.faces
        half = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        face_id = np.tile(np.arange(len(f)), 3)
        key = np.sort(half, axis=1)
        order = np.lexsort((key[:, 1], key[:, 0]))
        key, face_id = key[order], face_id[order]
        same = np.all(key[1:] == key[:-1], axis=1)
        if not np.all(same[::2]) or len(key) % 2:
            raise InvalidArgument("mesh is not closed two-manifold")
        return np.column_stack([key[::2], face_id[::2], face_id[1::2]])

    def swap_permutation(self) -> np.ndarray:
        perm = np.arange(self.num_joints)
        for a, b in self.left_right_pairs:
            perm[a], perm[b] = b, a
        return perm


def _check_shape(shape: ShapeParams) -> np.ndarray:
    beta = np.asarray(shape.beta, dtype=float)
    if beta.shape != (NUM_BETAS,):
        raise InvalidArgument(f"shape must have {NUM_BETAS} coefficients, got {beta.shape}")
    return beta


def shape_template(model: BodyModel, shape: ShapeParams) -> tuple[np.ndarray, np.ndarray]:
    """Shaped rest vertices and rest joints for coefficients ``shape``."""
    beta = _check_shape(shape)
    vertices = model.template_vertices + model.shape_blendshapes @ beta
    joints = np.asarray(model.joint_regressor @ vertices)
    return vertices, joints


def _kinematics(model: BodyModel, beta: np.ndarray, pose: PoseParams):
    rest_joints = model.template_joints + model.joint_blendshapes @ beta
    rots = pose.joint_rotations
    if rots.shape != (model.num_joints, 3):
        raise InvalidArgument(f"pose must have {model.num_joints} joint rotations")
    local = rodrigues(rots)
    J = model.num_joints
    G = np.empty((J, 3, 3))
    pos = np.empty((J, 3))
    G[0] = local[0]
    pos[0] = rest_joints[0]
    for j in range(1, J):
        p = model.parents[j]
        G[j] = G[p] @ local[j]
        pos[j] = G[p] @ (rest_joints[j] - rest_joints[p]) + pos[p]
    pos += pose.root_translation
    return rest_joints, G, pos


def forward(
    model: BodyModel,
    shape: ShapeParams,
    pose: PoseParams,
    *,
    jacobian: bool = False,
    vertex_ids: np.ndarray | None = None,
    vertices: bool = True,
) -> PosedBody:
    """Evaluate M(beta, theta): posed vertices and joints.

    With ``jacobian=True`` the joint Jacobian (J, 3, P) is returned, plus the
    vertex Jacobian (n, 3, P) for ``vertex_ids`` when given. ``vertices=False``
    skips skinning the full mesh.
    """
    beta = _check_shape(shape)
    rest_joints, G, pos = _kinematics(model, beta, pose)
    J = model.num_joints
    need_verts = vertices or vertex_ids is not None
    posed_vertices = None
    T = None
    if need_verts:
        shaped = model.template_vertices + model.shape_blendshapes @ beta
        ids = np.arange(model.num_vertices) if vertices else np.asarray(vertex_ids)
        W = model.skinning_weights[ids]
        # T[v, j] = vertex v carried rigidly by joint j
        T = np.einsum("jab,vjb->vja", G, shaped[ids, None, :] - rest_joints[None]) + pos[None]
        posed_vertices = np.einsum("vj,vja->va", W, T)
    out = PosedBody(vertices=posed_vertices if vertices else None, joints=pos)
    if vertex_ids is not None:
        out.vertex_ids = np.asarray(vertex_ids)
        out.selected_vertices = posed_vertices[out.vertex_ids] if vertices else posed_vertices
    if not jacobian:
        return out

    P = model.num_params
    nb = NUM_BETAS
    parents = model.parents
    jac = np.zeros((J, 3, P))
    jac[:, :, nb : nb + 3] = np.eye(3)

    dJ = model.joint_blendshapes  # (J, 3, S)
    dpos = np.empty((J, 3, nb))
    dpos[0] = dJ[0]
    for j in range(1, J):
        p = parents[j]
        dpos[j] = G[p] @ (dJ[j] - dJ[p]) + dpos[p]
    jac[:, :, :nb] = dpos

    A = np.empty((J, 3, 3))
    A[0] = np.eye(3)
    A[1:] = G[parents[1:]]
    omega = np.swapaxes(A @ left_jacobian(pose.joint_rotations), 1, 2)  # (k, a, xyz)
    rel = pos[None, :, :] - pos[:, None, :]  # rel[k, j] = pos_j - pos_k
    cr = np.cross(omega[:, None, :, :], rel[:, :, None, :])  # (k, j, a, xyz)
    cr *= model.subtree[:, :, None, None]
    jac[:, :, nb + 3 :] = np.transpose(cr, (1, 3, 0, 2)).reshape(J, 3, 3 * J)
    out.joint_jacobian = jac

    if vertex_ids is not None:
        ids = np.asarray(vertex_ids)
        if vertices:
            W = model.skinning_weights[ids]
            T = T[ids]
        n = len(ids)
        vjac = np.zeros((n, 3, P))
        vjac[:, :, nb : nb + 3] = np.eye(3)
        dB = model.shape_blendshapes[ids]  # (n, 3, S)
        # d/dbeta: sum_j w_j (G_j (dB - dJ_j) + dpos_j)
        carried = np.einsum("jab,vjbs->vjas", G, dB[:, None] - dJ[None]) + dpos[None]
        vjac[:, :, :nb] = np.einsum("vj,vjas->vas", W, carried)
        WT = W[:, :, None] * T  # (n, j, 3)
        S = np.einsum("kj,vja->vka", model.subtree.astype(float), WT)
        Wk = W @ model.subtree.T.astype(float)  # (n, k)
        X = S - Wk[:, :, None] * pos[None]
        vcr = np.cross(omega[None], X[:, :, None, :])  # (n, k, a, xyz)
        vjac[:, :, nb + 3 :] = np.transpose(vcr, (0, 3, 1, 2)).reshape(n, 3, 3 * J)
        out.vertex_jacobian = vjac
        out.vertex_ids = ids
        if not vertices:
            out.vertices = None
        out.selected_vertices = np.einsum("vj,vja->va", W, T)
    return out


def posed_joints(model: BodyModel, shape: ShapeParams, pose: PoseParams) -> np.ndarray:
    return _kinematics(model, _check_shape(shape), pose)[2]


def pack(shape: ShapeParams, pose: PoseParams) -> np.ndarray:
    return np.concatenate([shape.beta, pose.to_vector()])


def unpack(x: np.ndarray) -> tuple[ShapeParams, PoseParams]:
    x = np.asarray(x, dtype=float)
    return ShapeParams(x[:NUM_BETAS]), PoseParams.from_vector(x[NUM_BETAS:])


# ---------------------------------------------------------------------------
# procedural construction


def _capsule_frame(axis: np.ndarray):
    if abs(axis[1]) > 0.9:
        u = np.array([1.0, 0.0, 0.0]) - axis * axis[0]
    else:
        u = np.cross(axis, np.array([0.0, 1.0, 0.0]))
    u /= np.linalg.norm(u)
    w = np.cross(axis, u)
    return u, w


class _MeshLayout:
    """Linear map from (control points, end radii) to mesh vertices.

    Axis directions and cross-section frames are frozen at the base template so
    that vertices are exactly linear in points and radii; blendshapes are then
    the same map applied to displacement fields.
    """

    def __init__(self, points: np.ndarray, segments: int):
        m = segments
        L = max(3, segments // 2)
        c = max(1, segments // 4)
        faces = []
        ring_of = {}
        phis = 2 * np.pi * np.arange(m) / m
        coef_a, coef_b, cra, crb, dirs, cap_of, t_of = [], [], [], [], [], [], []
        for ci, (a, b, ra, rb, ecc, owner, ring_a, ring_b) in enumerate(_CAPSULES):
            d = points[b] - points[a]
            length = np.linalg.norm(d)
            axis = d / length
            u, w = _capsule_frame(axis)
            rings = []
            # pole a
            coef_a.append(1.0), coef_b.append(0.0), cra.append(-axis), crb.append(0 * axis)
            dirs.append(-axis), cap_of.append(ci), t_of.append(-ra / length)
            rings.append([len(coef_a) - 1])
            for j in range(c, 0, -1):
                al = j * (np.pi / 2) / (c + 1)
                ids = []
                for phi in phis:
                    direction = np.cos(phi) * u + ecc * np.sin(phi) * w
                    coef_a.append(1.0), coef_b.append(0.0)
                    cra.append(np.cos(al) * direction - np.sin(al) * axis), crb.append(0 * axis)
                    dirs.append(direction), cap_of.append(ci), t_of.append(-ra * np.sin(al) / length)
                    ids.append(len(coef_a) - 1)
                rings.append(ids)
            for i in range(L):
                t = i / (L - 1)
                ids = []
                for phi in phis:
                    direction = np.cos(phi) * u + ecc * np.sin(phi) * w
                    coef_a.append(1 - t), coef_b.append(t)
                    cra.append((1 - t) * direction), crb.append(t * direction)
                    dirs.append(direction), cap_of.append(ci), t_of.append(t)
                    ids.append(len(coef_a) - 1)
                rings.append(ids)
                if i == 0 and ring_a is not None:
                    ring_of[ring_a] = ids
                if i == L - 1 and ring_b is not None:
                    ring_of[ring_b] = ids
            for j in range(1, c + 1):
                al = j * (np.pi / 2) / (c + 1)
                ids = []
                for phi in phis:
                    direction = np.cos(phi) * u + ecc * np.sin(phi) * w
                    coef_a.append(0.0), coef_b.append(1.0)
                    cra.append(0 * axis), crb.append(np.cos(al) * direction + np.sin(al) * axis)
                    dirs.append(direction), cap_of.append(ci), t_of.append(1 + rb * np.sin(al) / length)
                    ids.append(len(coef_a) - 1)
                rings.append(ids)
            coef_a.append(0.0), coef_b.append(1.0), cra.append(0 * axis), crb.append(axis)
            dirs.append(axis), cap_of.append(ci), t_of.append(1 + rb / length)
            rings.append([len(coef_a) - 1])

            cap_faces = []
            for r0, r1 in zip(rings[:-1], rings[1:]):
                if len(r0) == 1:
                    for k in range(m):
                        cap_faces.append((r0[0], r1[(k + 1) % m], r1[k]))
                elif len(r1) == 1:
                    for k in range(m):
                        cap_faces.append((r0[k], r0[(k + 1) % m], r1[0]))
                else:
                    for k in range(m):
                        k1 = (k + 1) % m
                        cap_faces.append((r0[k], r0[k1], r1[k1]))
                        cap_faces.append((r0[k], r1[k1], r1[k]))
            faces.append(np.array(cap_faces))

        self.coef_a = np.array(coef_a)
        self.coef_b = np.array(coef_b)
        self.cra = np.array(cra)
        self.crb = np.array(crb)
        self.cap_of = np.array(cap_of)
        self.t = np.array(t_of)
        self.faces = np.concatenate(faces).astype(np.int64)
        self.ring_of = ring_of
        self.cap_a = np.array([cap[0] for cap in _CAPSULES])
        self.cap_b = np.array([cap[1] for cap in _CAPSULES])

    def vertices(self, points: np.ndarray, ra: np.ndarray, rb: np.ndarray) -> np.ndarray:
        ci = self.cap_of
        return (
            self.coef_a[:, None] * points[self.cap_a[ci]]
            + self.coef_b[:, None] * points[self.cap_b[ci]]
            + ra[ci, None] * self.cra
            + rb[ci, None] * self.crb
        )


def _orient_outward(layout: _MeshLayout, verts: np.ndarray) -> np.ndarray:
    faces = layout.faces.copy()
    face_cap = layout.cap_of[faces[:, 0]]
    for ci in range(len(_CAPSULES)):
        sel = face_cap == ci
        tri = verts[faces[sel]]
        centre = verts[layout.cap_of == ci].mean(axis=0)
        vol = np.einsum("ij,ij->i", tri[:, 0] - centre, np.cross(tri[:, 1] - centre, tri[:, 2] - centre)).sum()
        if vol < 0:
            faces[sel] = faces[sel][:, ::-1]
    return faces


def _skinning(layout: _MeshLayout, num_joints: int) -> np.ndarray:
    W = np.zeros((len(layout.t), num_joints))
    for ci, (a, b, _ra, _rb, _e, owner, _ga, _gb) in enumerate(_CAPSULES):
        sel = layout.cap_of == ci
        t = layout.t[sel]
        parent = PARENTS[owner] if owner == a else -1
        child = b if b < num_joints and PARENTS[b] == owner else -1
        wp = np.zeros_like(t)
        wc = np.zeros_like(t)
        if parent >= 0:
            wp = 0.5 * np.clip(1 - t / _BLEND_ZONE, 0, 1) ** 2
        if child >= 0:
            wc = 0.5 * np.clip(1 - (1 - t) / _BLEND_ZONE, 0, 1) ** 2
        rows = np.zeros((len(t), num_joints))
        rows[:, owner] = 1 - wp - wc
        if parent >= 0:
            rows[:, parent] += wp
        if child >= 0:
            rows[:, child] += wc
        W[sel] = rows
    return W


def _blendshape_fields(points: np.ndarray, ra: np.ndarray, rb: np.ndarray, rng: np.random.Generator):
    """Per-channel (point displacement, ra change, rb change)."""
    Q = len(points)
    n_cap = len(_CAPSULES)
    floor = points[:, 1].min()
    gain = 1 + 0.1 * rng.standard_normal(NUM_BETAS)
    legs = [1, 2, 4, 5, 7, 8, 10, 11]
    arms = [16, 17, 18, 19, 20, 21, 22, 23]
    upper = [3, 6, 9, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23, _HEAD_TOP]
    torso_caps = [0, 1, 2, 3, 4, 5]
    limb_caps = list(range(8, 22))
    fields = []

    def empty():
        return np.zeros((Q, 3)), np.zeros(n_cap), np.zeros(n_cap)

    # 0: overall height (vertical scaling about the floor)
    dP, da, db = empty()
    dP[:, 1] = 0.05 * (points[:, 1] - floor)
    fields.append((dP, da, db))
    # 1: girth (all radii)
    dP, da, db = empty()
    da[:], db[:] = 0.12 * ra, 0.12 * rb
    fields.append((dP, da, db))
    # 2: leg length
    dP, da, db = empty()
    hip_y = points[1, 1]
    dP[legs, 1] = 0.06 * (points[legs, 1] - hip_y)
    dP[[0, 3, 6, 9, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23, _HEAD_TOP], 1] = 0.0
    fields.append((dP, da, db))
    # 3: arm length
    dP, da, db = empty()
    dP[arms, 0] = 0.06 * (points[arms, 0] - np.sign(points[arms, 0]) * abs(points[16, 0]))
    fields.append((dP, da, db))
    # 4: shoulder width
    dP, da, db = empty()
    dP[[13, 14] + arms, 0] = 0.02 * np.sign(points[[13, 14] + arms, 0])
    dP[[16, 17] + arms[2:], 0] += 0.01 * np.sign(points[[16, 17] + arms[2:], 0])
    fields.append((dP, da, db))
    # 5: hip width, with pelvis volume
    dP, da, db = empty()
    dP[legs, 0] = 0.015 * np.sign(points[legs, 0])
    da[[0, 4]], db[[0, 4]] = 0.1 * ra[[0, 4]], 0.1 * rb[[0, 4]]
    fields.append((dP, da, db))
    # 6: torso radius
    dP, da, db = empty()
    da[torso_caps], db[torso_caps] = 0.1 * ra[torso_caps], 0.1 * rb[torso_caps]
    fields.append((dP, da, db))
    # 7: limb thickness
    dP, da, db = empty()
    da[limb_caps], db[limb_caps] = 0.1 * ra[limb_caps], 0.1 * rb[limb_caps]
    fields.append((dP, da, db))
    # 8: torso length
    dP, da, db = empty()
    dP[upper, 1] = 0.05 * points[upper, 1]
    fields.append((dP, da, db))
    # 9: head size with neck length
    dP, da, db = empty()
    dP[[15, _HEAD_TOP], 1] = 0.015
    dP[_HEAD_TOP, 1] += 0.01
    da[7], db[7] = 0.08 * ra[7], 0.08 * rb[7]
    fields.append((dP, da, db))
    return [(g * dP, g * da, g * db) for g, (dP, da, db) in zip(gain, fields)]


def _decorrelate(blend: np.ndarray, keep: int) -> np.ndarray:
    """Gram-Schmidt the channels after the first ``keep`` against all earlier
    ones (in vertex space), preserving each channel's norm.

    Raw length channels overlap heavily with overall height; orthogonal
    channels make the unit-variance shape prior meaningful, as with a PCA
    shape space.
    """
    V, _, S = blend.shape
    flat = blend.reshape(V * 3, S).copy()
    for s in range(keep, S):
        norm = np.linalg.norm(flat[:, s])
        q, _ = np.linalg.qr(flat[:, :s])
        flat[:, s] -= q @ (q.T @ flat[:, s])
        flat[:, s] *= norm / np.linalg.norm(flat[:, s])
    return flat.reshape(V, 3, S)


def make_default_model(seed: int = 0, segments: int = 8) -> BodyModel:
    """Deterministically build a 24-joint humanoid.

    ``segments`` is the number of vertices around each capsule ring; 8 gives
    about 1450 vertices, 6 about 700.
    """
    if segments < 3:
        raise InvalidArgument("segments must be >= 3")
    rng = np.random.default_rng(seed)
    points = _REST_JOINTS.copy()
    ra = np.array([c[2] for c in _CAPSULES])
    rb = np.array([c[3] for c in _CAPSULES])
    # seeded proportions, symmetric between left and right
    scale = 1 + 0.03 * rng.standard_normal(3)
    points[:, 1] *= scale[0]
    points[:, 0] *= scale[1]
    rscale = 1 + 0.05 * rng.standard_normal(len(_CAPSULES))
    mirror = {a: b for pair in LEFT_RIGHT_PAIRS for a, b in (pair, pair[::-1])}
    index = {cap[:2]: i for i, cap in enumerate(_CAPSULES)}
    for i, (a, b, *_rest) in enumerate(_CAPSULES):
        j = index.get((mirror.get(a, a), mirror.get(b, b)))
        if j is not None and j > i:
            rscale[j] = rscale[i]
    ra *= rscale * scale[2]
    rb *= rscale * scale[2]

    layout = _MeshLayout(points, segments)
    template = layout.vertices(points, ra, rb)
    faces = _orient_outward(layout, template)
    fields = _blendshape_fields(points, ra, rb, rng)
    blend = np.stack([layout.vertices(dP, da, db) for dP, da, db in fields], axis=-1)
    blend = _decorrelate(blend, keep=2)

    J = len(PARENTS)
    V = len(template)
    rows, cols, vals = [], [], []
    for j in range(J):
        ring = layout.ring_of[j]
        rows += [j] * len(ring)
        cols += list(ring)
        vals += [1.0 / len(ring)] * len(ring)
    regressor = sp.csr_matrix((vals, (rows, cols)), shape=(J, V))
    skin = _skinning(layout, J)
    return BodyModel(
        template_vertices=template,
        faces=faces,
        shape_blendshapes=blend,
        parents=np.array(PARENTS),
        joint_regressor=regressor,
        skinning_weights=skin,
        meta={"seed": int(seed), "segments": int(segments)},
    )


# ---------------------------------------------------------------------------
# serialization


def save_model(path: str | Path, model: BodyModel) -> None:
    """Write the model as an ``.npz`` archive with explicit dimensions."""
    reg = model.joint_regressor.tocoo()
    np.savez(
        path,
        format=np.array("muvs-body-model/1"),
        V=np.array(model.num_vertices),
        J=np.array(model.num_joints),
        S=np.array(NUM_BETAS),
        template_vertices=np.ascontiguousarray(model.template_vertices),
        faces=np.ascontiguousarray(model.faces),
        shape_blendshapes=np.ascontiguousarray(model.shape_blendshapes),
        parents=np.asarray(model.parents),
        regressor_rows=reg.row,
        regressor_cols=reg.col,
        regressor_vals=reg.data,
        skinning_weights=np.ascontiguousarray(model.skinning_weights),
        joint_names=np.array(model.joint_names),
        left_right_pairs=np.array(model.left_right_pairs),
    )


def load_model(path: str | Path) -> BodyModel:
    with np.load(path, allow_pickle=False) as data:
        V, J, S = int(data["V"]), int(data["J"]), int(data["S"])
        if S != NUM_BETAS:
            raise InvalidArgument(f"model has {S} shape channels, expected {NUM_BETAS}")
        reg = sp.csr_matrix(
            (data["regressor_vals"], (data["regressor_rows"], data["regressor_cols"])), shape=(J, V)
        )
        return BodyModel(
            template_vertices=data["template_vertices"].reshape(V, 3),
            faces=data["faces"],
            shape_blendshapes=data["shape_blendshapes"].reshape(V, 3, S),
            parents=data["parents"],
            joint_regressor=reg,
            skinning_weights=data["skinning_weights"].reshape(V, J),
            joint_names=tuple(str(n) for n in data["joint_names"]),
            left_right_pairs=tuple(tuple(int(i) for i in p) for p in data["left_right_pairs"]),
        )


def write_obj(path: str | Path, vertices: np.ndarray, faces: np.ndarray) -> None:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in np.asarray(vertices, dtype=float).tolist()]
    lines += [f"f {i + 1} {j + 1} {k + 1}" for i, j, k in np.asarray(faces).tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(v) for v in parts[1:4]])
        elif parts[0] == "f":
            faces.append([int(v.split("/")[0]) - 1 for v in parts[1:4]])
    return np.array(verts), np.array(faces, dtype=np.int64)
