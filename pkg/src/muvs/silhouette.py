"""Silhouette rasterization, distance transforms and the silhouette energy.

Pixel (x, y) has its center at integer image coordinates (x, y); masks are
indexed ``mask[y, x]``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .body_model import NUM_BETAS, BodyModel, PoseParams, ShapeParams, forward
from .camera import Camera, project_masked
from .config import FitConfig
from .energy import PosePrior, multiview_term
from .errors import InvalidArgument

log = logging.getLogger(__name__)

_BIG = 1e20


@dataclass(frozen=True, eq=False)
class SilhouetteMask:
    mask: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mask", np.asarray(self.mask, dtype=bool))

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    @property
    def height(self) -> int:
        return self.mask.shape[0]


@dataclass(frozen=True, eq=False)
class DistanceField:
    values: np.ndarray
    empty: bool = False

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class RenderedSilhouette:
    mask: np.ndarray
    pixels: np.ndarray  # (n, 2) as (x, y)
    offscreen: bool = False


def _as_mask(m) -> np.ndarray:
    if isinstance(m, (SilhouetteMask, RenderedSilhouette)):
        return m.mask
    return np.asarray(m, dtype=bool)


# ---------------------------------------------------------------------------
# rasterization


def rasterize_triangles(tri: np.ndarray, width: int, height: int) -> np.ndarray:
    """Binary coverage of 2D triangles (n, 3, 2) tested at pixel centers.

    Both windings are filled; pixels exactly on an edge count as inside.
    """
    mask = np.zeros((height, width), dtype=bool)
    if len(tri) == 0:
        return mask
    tri = np.asarray(tri, dtype=float)
    area = (tri[:, 1, 0] - tri[:, 0, 0]) * (tri[:, 2, 1] - tri[:, 0, 1]) - (
        tri[:, 2, 0] - tri[:, 0, 0]
    ) * (tri[:, 1, 1] - tri[:, 0, 1])
    lo = np.ceil(tri.min(axis=1))
    hi = np.floor(tri.max(axis=1))
    lo = np.maximum(lo, 0)
    hi = np.minimum(hi, [width - 1, height - 1])
    keep = (area != 0) & np.all(hi >= lo, axis=1)
    tri, area, lo, hi = tri[keep], area[keep], lo[keep].astype(int), hi[keep].astype(int)
    if len(tri) == 0:
        return mask
    # orient counter-clockwise so all edge functions are >= 0 inside
    flip = area < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    extent = np.max(hi - lo + 1, axis=1)
    done = np.zeros(len(tri), dtype=bool)
    for size in (4, 8, 16, 32):
        sel = ~done & (extent <= size)
        if np.any(sel):
            _fill_batch(mask, tri[sel], lo[sel], hi[sel], size)
            done |= sel
    for i in np.flatnonzero(~done):
        _fill_batch(mask, tri[i : i + 1], lo[i : i + 1], hi[i : i + 1], int(extent[i]))
    return mask


def _fill_batch(mask, tri, lo, hi, size):
    off = np.arange(size)
    px = lo[:, 0, None, None] + off[None, None, :]
    py = lo[:, 1, None, None] + off[None, :, None]
    inside = (px <= hi[:, 0, None, None]) & (py <= hi[:, 1, None, None])
    for a, b in ((0, 1), (1, 2), (2, 0)):
        ax, ay = tri[:, a, 0, None, None], tri[:, a, 1, None, None]
        bx, by = tri[:, b, 0, None, None], tri[:, b, 1, None, None]
        inside &= (bx - ax) * (py - ay) - (by - ay) * (px - ax) >= 0
    px = np.broadcast_to(px, inside.shape)[inside]
    py = np.broadcast_to(py, inside.shape)[inside]
    mask[py, px] = True


def _render_from_pixels(pix: np.ndarray, valid: np.ndarray, faces: np.ndarray, cam: Camera) -> RenderedSilhouette:
    face_ok = np.all(valid[faces], axis=1)
    mask = rasterize_triangles(pix[faces[face_ok]], cam.width, cam.height)
    ys, xs = np.nonzero(mask)
    pixels = np.column_stack([xs, ys])
    return RenderedSilhouette(mask, pixels, offscreen=len(pixels) == 0)


def rasterize(model: BodyModel, shape: ShapeParams, pose: PoseParams, cam: Camera) -> RenderedSilhouette:
    """Binary silhouette of the posed mesh in one view."""
    body = forward(model, shape, pose)
    pix, valid, _ = project_masked(cam, body.vertices)
    return _render_from_pixels(pix, valid, model.faces, cam)


# ---------------------------------------------------------------------------
# distance transform


def _column_pass(mask: np.ndarray) -> np.ndarray:
    """Squared distance to the nearest foreground pixel within each column."""
    H, W = mask.shape
    dist = np.full((H, W), np.inf)
    run = np.full(W, np.inf)
    for y in range(H):
        run = np.where(mask[y], 0.0, run + 1)
        dist[y] = run
    run = np.full(W, np.inf)
    for y in range(H - 1, -1, -1):
        run = np.where(mask[y], 0.0, run + 1)
        dist[y] = np.minimum(dist[y], run)
    return np.where(np.isinf(dist), _BIG, dist * dist)


def _lower_envelope_rows(f: np.ndarray) -> np.ndarray:
    """1D squared-distance transform of every row of ``f`` (lower envelope of parabolas)."""
    R, n = f.shape
    rows = np.arange(R)
    v = np.zeros((R, n), dtype=np.int64)
    z = np.empty((R, n + 1))
    z[:, 0] = -np.inf
    z[:, 1] = np.inf
    k = np.zeros(R, dtype=np.int64)
    for q in range(1, n):
        fq = f[:, q] + q * q
        active = np.ones(R, dtype=bool)
        while True:
            vk = v[rows, k]
            s = (fq - (f[rows, vk] + vk * vk)) / (2 * q - 2 * vk)
            pop = active & (s <= z[rows, k])
            if not pop.any():
                break
            k = np.where(pop, k - 1, k)
            active = pop
        k = k + 1
        v[rows, k] = q
        z[rows, k] = s
        z[rows, k + 1] = np.inf
    out = np.empty_like(f)
    k = np.zeros(R, dtype=np.int64)
    for q in range(n):
        while True:
            adv = z[rows, k + 1] < q
            if not adv.any():
                break
            k = np.where(adv, k + 1, k)
        vk = v[rows, k]
        out[:, q] = (q - vk) ** 2 + f[rows, vk]
    return out


def distance_transform(mask) -> DistanceField:
    """Exact Euclidean distance (pixels) to the nearest foreground pixel.

    An empty mask yields a +inf field with ``empty=True``.
    """
    m = _as_mask(mask)
    if not m.any():
        return DistanceField(np.full(m.shape, np.inf), empty=True)
    d2 = _lower_envelope_rows(_column_pass(m))
    return DistanceField(np.sqrt(d2))


# ---------------------------------------------------------------------------
# silhouette energy


def _strided(mask: np.ndarray, stride: int) -> np.ndarray:
    if stride == 1:
        return mask
    sel = np.zeros_like(mask)
    sel[::stride, ::stride] = mask[::stride, ::stride]
    return sel


def silhouette_term(
    rendered,
    observed,
    observed_field: DistanceField,
    rendered_field: DistanceField,
    stride: int = 1,
    clamp: float | None = None,
) -> float:
    """E_S: squared distances of rendered pixels to the observed silhouette plus
    absolute distances of observed pixels to the rendered one."""
    r = _as_mask(rendered)
    o = _as_mask(observed)
    if r.shape != o.shape or observed_field.values.shape != o.shape or rendered_field.values.shape != r.shape:
        raise InvalidArgument("silhouette dimensions do not match")
    if stride < 1:
        raise InvalidArgument("stride must be a positive integer")
    d_obs = observed_field.values
    d_ren = rendered_field.values
    if clamp is not None:
        d_obs = np.minimum(d_obs, clamp)
        d_ren = np.minimum(d_ren, clamp)
    first = d_obs[_strided(r, stride)]
    second = d_ren[_strided(o, stride)]
    return float(np.sum(first * first) + np.sum(second))


def view_silhouette_energy(model, shape, pose, cam, observed, observed_field=None, stride=2, clamp=64.0) -> float:
    o = _as_mask(observed)
    if observed_field is None:
        observed_field = distance_transform(o)
    if observed_field.empty:
        log.warning("empty observed silhouette; view skipped")
        return 0.0
    rendered = rasterize(model, shape, pose, cam)
    return silhouette_term(rendered, o, observed_field, distance_transform(rendered.mask), stride, clamp)


def stage_one_objective(
    model: BodyModel,
    shape: ShapeParams,
    pose: PoseParams,
    cameras,
    detections,
    masks,
    config: FitConfig,
    prior: PosePrior | None = None,
    observed_fields=None,
) -> float:
    """E_1 = E_M + silhouette_weight * sum_v E_S."""
    if len(masks) != len(cameras):
        raise InvalidArgument("mask and camera view counts differ")
    total = multiview_term(model, shape, pose, cameras, detections, config, prior)
    if config.silhouette_weight == 0:
        return total
    es = 0.0
    for v, (cam, m) in enumerate(zip(cameras, masks)):
        if m is None:
            continue
        field = observed_fields[v] if observed_fields is not None else None
        es += view_silhouette_energy(
            model, shape, pose, cam, m, field, config.silhouette_stride, config.silhouette_clamp
        )
    return total + config.silhouette_weight * es


# ---------------------------------------------------------------------------
# smoothed silhouette residuals for the solver


def bilinear(field: np.ndarray, pts: np.ndarray):
    """Bilinear samples of ``field`` at (x, y) points with their gradients."""
    H, W = field.shape
    x = np.clip(pts[:, 0], 0, W - 1 - 1e-9)
    y = np.clip(pts[:, 1], 0, H - 1 - 1e-9)
    inside_x = (pts[:, 0] >= 0) & (pts[:, 0] <= W - 1)
    inside_y = (pts[:, 1] >= 0) & (pts[:, 1] <= H - 1)
    x0 = np.floor(x).astype(int)
    y0 = np.floor(y).astype(int)
    fx = x - x0
    fy = y - y0
    f00 = field[y0, x0]
    f10 = field[y0, x0 + 1]
    f01 = field[y0 + 1, x0]
    f11 = field[y0 + 1, x0 + 1]
    val = f00 * (1 - fx) * (1 - fy) + f10 * fx * (1 - fy) + f01 * (1 - fx) * fy + f11 * fx * fy
    gx = ((f10 - f00) * (1 - fy) + (f11 - f01) * fy) * inside_x
    gy = ((f01 - f00) * (1 - fx) + (f11 - f10) * fx) * inside_y
    return val, np.column_stack([gx, gy])


@dataclass
class SilhouetteState:
    """Per-view correspondences frozen at one parameter vector."""

    rim: np.ndarray  # vertex ids on the projected outer contour
    offsets: np.ndarray  # rendered signed distance at each rim vertex when frozen
    outside_pixels: np.ndarray  # observed (x, y) pixels not covered by the rendering
    partners: np.ndarray  # rim-vertex index (into ``rim``) matched to each outside pixel


@dataclass(frozen=True, eq=False)
class SilhouetteView:
    cam: Camera
    observed: np.ndarray  # bool mask
    field: np.ndarray  # clamped observed distance field
    signed: np.ndarray  # clamped signed distance to the sub-pixel mask boundary
    clamp: float = 64.0


def signed_boundary_field(mask: np.ndarray, clamp: float = 64.0, fast: bool = False) -> np.ndarray:
    """Signed distance to the mask edge, negative inside.

    Pixel centers next to the edge sit at +-0.5, so the bilinear zero level
    runs midway between foreground and background centers. ``fast`` uses
    scipy's transform (same exact distances) for fields rebuilt every round.
    """
    mask = _as_mask(mask)
    if fast:
        outside = ndimage.distance_transform_edt(~mask) if mask.any() else np.full(mask.shape, np.inf)
        inside = ndimage.distance_transform_edt(mask) if not mask.all() else np.full(mask.shape, np.inf)
    else:
        outside = distance_transform(mask).values
        inside = distance_transform(~mask).values
    sd = np.where(mask, -(inside - 0.5), outside - 0.5)
    return np.clip(sd, -clamp, clamp)


def prepare_views(cameras, masks, clamp: float = 64.0) -> list:
    """Observed distance fields per view; empty or missing masks give None."""
    views = []
    for cam, m in zip(cameras, masks):
        if m is None:
            views.append(None)
            continue
        mask = _as_mask(m)
        if mask.shape != (cam.height, cam.width):
            raise InvalidArgument("mask size differs from the camera image size")
        df = distance_transform(mask)
        if df.empty:
            log.warning("empty observed silhouette; view skipped")
            views.append(None)
            continue
        views.append(SilhouetteView(cam, mask, np.minimum(df.values, clamp), signed_boundary_field(mask, clamp), clamp))
    return views


def rim_vertices(faces: np.ndarray, edges: np.ndarray, pix: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Vertices on edges whose two faces face opposite ways in the image."""
    a, b, c = pix[faces[:, 0]], pix[faces[:, 1]], pix[faces[:, 2]]
    orient = np.sign((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1]))
    face_ok = np.all(valid[faces], axis=1)
    change = (orient[edges[:, 2]] != orient[edges[:, 3]]) & face_ok[edges[:, 2]] & face_ok[edges[:, 3]]
    return np.unique(edges[change, :2])


# rim vertices deeper than this inside their own rendering lie on occluding
# contours (an arm in front of the torso) with no counterpart in the observed mask
RIM_DEPTH = 1.0


def silhouette_state(
    model: BodyModel, vertices: np.ndarray, view: SilhouetteView, stride: int, outside_term: bool = False
) -> SilhouetteState:
    """Freeze the outer-rim vertex set with the rendered boundary offsets and,
    with ``outside_term``, the nearest-rim partner of every observed pixel the
    rendering misses."""
    pix, valid, _ = project_masked(view.cam, vertices)
    rim = rim_vertices(model.faces, model.edges, pix, valid)
    rendered = _render_from_pixels(pix, valid, model.faces, view.cam).mask
    offsets = np.zeros(0)
    if len(rim) and rendered.any():
        H, W = rendered.shape
        p = pix[rim]
        on_image = (p[:, 0] >= 0) & (p[:, 0] <= W - 1) & (p[:, 1] >= 0) & (p[:, 1] <= H - 1)
        rim, p = rim[on_image], p[on_image]
        offsets, _ = bilinear(signed_boundary_field(rendered, view.clamp, fast=True), p)
        keep = np.abs(offsets) < RIM_DEPTH
        rim, offsets = rim[keep], offsets[keep]
    else:
        rim = rim[:0]
    outside = _strided(view.observed & ~rendered, stride) if outside_term else np.zeros_like(rendered)
    ys, xs = np.nonzero(outside)
    outside_pixels = np.column_stack([xs, ys]).astype(float)
    if len(rim) and len(outside_pixels):
        _, partners = cKDTree(pix[rim]).query(outside_pixels)
    else:
        partners = np.zeros(len(outside_pixels), dtype=int)
    return SilhouetteState(rim, offsets, outside_pixels, np.asarray(partners, dtype=int))


def silhouette_residuals(
    model: BodyModel,
    x: np.ndarray,
    views,
    weight: float,
    stride: int,
    states=None,
    jacobian: bool = True,
    outside_term: bool = False,
):
    """Smoothed silhouette residuals over all views.

    Outer-rim vertices contribute sqrt(w) * (s_obs(proj(v)) - s_ren), with
    s_obs the signed boundary distance of the observed mask and s_ren the
    vertex's signed distance to its own rendered boundary when frozen. The
    offset cancels pixel quantization, so the residuals vanish whenever the
    rendered and observed masks agree. Being signed, the term also penalizes
    a rendering that falls short of the observed silhouette. With
    ``outside_term`` every observed pixel missed by the rendering adds
    sqrt(w * |pixel - proj(partner)|) against its nearest rim vertex (the
    absolute distance term taken literally). ``states`` freezes rim sets and
    correspondences; when None they are recomputed at ``x``.
    Returns (r, J, states).
    """
    x = np.asarray(x, dtype=float)
    shape = ShapeParams(x[:NUM_BETAS])
    pose = PoseParams.from_vector(x[NUM_BETAS:])
    active = [v for v in views if v is not None]
    if not active or weight == 0:
        return np.zeros(0), np.zeros((0, x.size)), states or []
    if states is None:
        body = forward(model, shape, pose)
        states = [silhouette_state(model, body.vertices, v, stride, outside_term) for v in active]
    ids = np.unique(np.concatenate([s.rim for s in states] + [np.zeros(0, dtype=int)])).astype(int)
    if len(ids) == 0:
        return np.zeros(0), np.zeros((0, x.size)), states
    body = forward(model, shape, pose, jacobian=jacobian, vertex_ids=ids, vertices=False)
    verts = body.selected_vertices
    sw = np.sqrt(weight)
    rs, js = [], []
    for view, st in zip(active, states):
        local = np.searchsorted(ids, st.rim)
        pix, valid, pj = project_masked(view.cam, verts[local], want_jacobian=jacobian)
        pix = np.where(valid[:, None], pix, -1e6)
        d, grad = bilinear(view.signed, pix)
        rs.append(sw * (d - st.offsets))
        if jacobian:
            dp = pj @ body.vertex_jacobian[local]  # (n, 2, P)
            js.append(sw * np.einsum("na,nap->np", grad, dp))
        if len(st.outside_pixels):
            rim_pix = pix[st.partners]
            diff = rim_pix - st.outside_pixels
            n = np.sqrt(np.sum(diff * diff, axis=1) + 1e-12)
            rs.append(sw * np.sqrt(n))
            if jacobian:
                dn = diff / n[:, None]
                coef = sw / (2 * np.sqrt(n))
                js.append(coef[:, None] * np.einsum("na,nap->np", dn, dp[st.partners]))
    r = np.concatenate(rs)
    J = np.vstack(js) if jacobian else None
    return r, J, states
