"""Piecewise-affine warping of faces onto a reference landmark geometry.

Every face is mapped, triangle by triangle, so that its 68 landmarks land
on the reference contour. Each warped face carries, besides the warped
intensities, the source coordinates ``xmap``/``ymap`` of every target pixel
and their predecessor differences ``dx``/``dy`` (the geometry channels).

Arrays are indexed ``[row, col]``; points are ``(x, y) = (col, row)``.
"""

from __future__ import annotations

import os
import struct
import warnings
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .corpus import DEFAULT_GRID, N_LANDMARKS, GrayImage, LandmarkSet, parse_landmarks, sample_bilinear
from .errors import (AllCollinear, DegenerateTriangle, EmptyInput, MapsMissing, OutOfGrid,
                     SourceOutOfImageWarning, TooFewPoints, TriangulationFailed)

AREA_EPS = 1e-9
# barycentric slack so points on a shared edge or hull boundary count as inside
BARY_TOL = 1e-10


# --------------------------------------------------------------------------
# reference contour

@dataclass(frozen=True)
class ReferenceContour:
    points: np.ndarray
    grid: tuple = DEFAULT_GRID
    source_count: int = 1

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.shape != (N_LANDMARKS, 2):
            raise ValueError(f"reference contour needs shape (68, 2), got {pts.shape}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "grid", (int(self.grid[0]), int(self.grid[1])))
        _check_in_grid(pts, self.grid)

    @cached_property
    def triangulation(self) -> "Triangulation":
        return triangulate(self.points)


def _check_in_grid(pts, grid):
    w, h = grid
    bad = ~((pts[:, 0] >= 0) & (pts[:, 0] <= w - 1) & (pts[:, 1] >= 0) & (pts[:, 1] <= h - 1))
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise OutOfGrid(f"point {k} at ({pts[k, 0]:.3f}, {pts[k, 1]:.3f}) lies outside "
                        f"the {w}x{h} grid")


def compute_reference_contour(neutral_landmarks, grid=DEFAULT_GRID) -> ReferenceContour:
    """Point-wise mean of landmark sets already registered onto ``grid``."""
    sets = [lm.points if isinstance(lm, LandmarkSet) else np.asarray(lm, dtype=np.float64)
            for lm in neutral_landmarks]
    if not sets:
        raise EmptyInput("need at least one landmark set to build a reference contour")
    mean = np.mean(np.stack(sets), axis=0)
    return ReferenceContour(mean, grid, len(sets))


def save_reference(ref: ReferenceContour, path) -> None:
    w, h = ref.grid
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"grid {w} {h} {ref.source_count}\n")
        for x, y in ref.points.tolist():
            fh.write(f"{x!r} {y!r}\n")


def load_reference(path) -> ReferenceContour:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        body = fh.read()
    if len(header) not in (3, 4) or header[0] != "grid":
        raise ValueError(f"{path}: first line must be 'grid W H [sources]'")
    grid = (int(header[1]), int(header[2]))
    count = int(header[3]) if len(header) == 4 else 1
    return ReferenceContour(parse_landmarks(body, path).points, grid, count)


# --------------------------------------------------------------------------
# triangulation

@dataclass(frozen=True)
class Triangulation:
    vertices: np.ndarray
    triangles: np.ndarray  # (T, 3) vertex indices, counter-clockwise in (x, y)

    def __len__(self):
        return len(self.triangles)


def _orient(a, b, c):
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _incircle(a, b, c, d):
    """Positive if ``d`` is inside the circle through ccw ``a, b, c``; also returns a scale."""
    rows = []
    for p in (a, b, c):
        dx, dy = p[0] - d[0], p[1] - d[1]
        rows.append((dx, dy, dx * dx + dy * dy))
    m = np.array(rows)
    det = np.linalg.det(m)
    scale = np.prod(np.abs(m).sum(axis=1))
    return det, scale


def triangulate(points) -> Triangulation:
    """Delaunay triangulation with a deterministic tie-break.

    Where four or more points are cocircular several triangulations are
    Delaunay; edges are then flipped until every such quadrilateral uses
    the diagonal whose sorted vertex pair is lexicographically smallest.
    Triangles are returned counter-clockwise, each starting at its lowest
    vertex index, sorted.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise TooFewPoints(f"need at least 3 points, got {len(pts)}")
    if not np.all(np.isfinite(pts)):
        raise TriangulationFailed("non-finite point coordinates")
    span = np.ptp(pts, axis=0).max()
    centered = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if span == 0 or sv[1] <= 1e-12 * max(sv[0], 1e-300):
        raise AllCollinear("points are collinear")
    _, first, counts = np.unique(pts, axis=0, return_index=True, return_counts=True)
    if (counts > 1).any():
        dup = pts[first[counts > 1][0]]
        raise TriangulationFailed(f"duplicate point at ({dup[0]:.3f}, {dup[1]:.3f})")
    try:
        tri = Delaunay(pts)
    except QhullError as exc:
        raise TriangulationFailed(str(exc)) from exc
    if len(tri.coplanar):
        raise TriangulationFailed(f"qhull dropped {len(tri.coplanar)} points")

    simplices = [list(map(int, s)) for s in tri.simplices]
    for s in simplices:
        if _orient(pts[s[0]], pts[s[1]], pts[s[2]]) < 0:
            s[1], s[2] = s[2], s[1]
    simplices = _break_cocircular_ties(pts, simplices)

    out = []
    for s in simplices:
        k = s.index(min(s))
        out.append(s[k:] + s[:k])
    out.sort()
    tris = np.array(out, dtype=np.intp)
    p = pts[tris]
    area = 0.5 * _orient(p[:, 0].T, p[:, 1].T, p[:, 2].T)
    if (area <= AREA_EPS).any():
        raise TriangulationFailed("triangulation produced a degenerate triangle")
    return Triangulation(pts.copy(), tris)


def _break_cocircular_ties(pts, simplices, max_rounds=10000):
    tris = [tuple(s) for s in simplices]

    def edge_map():
        em = {}
        for ti, (a, b, c) in enumerate(tris):
            for u, v, w in ((a, b, c), (b, c, a), (c, a, b)):
                em[(u, v)] = (ti, w)
        return em

    for _ in range(max_rounds):
        em = edge_map()
        flipped = False
        for (u, v), (ti, w) in sorted(em.items()):
            if (v, u) not in em or u > v:
                continue
            tj, z = em[(v, u)]
            cur = (min(u, v), max(u, v))
            alt = (min(w, z), max(w, z))
            if alt >= cur:
                continue
            det, scale = _incircle(pts[u], pts[v], pts[w], pts[z])
            if abs(det) > 1e-10 * scale:
                continue
            # the quad is convex when cocircular, so the flip is valid
            if _orient(pts[w], pts[u], pts[z]) <= 0 or _orient(pts[z], pts[v], pts[w]) <= 0:
                continue
            tris[ti] = (w, u, z)
            tris[tj] = (z, v, w)
            flipped = True
            break
        if not flipped:
            return [list(t) for t in tris]
    raise TriangulationFailed("cocircular tie-breaking did not converge")


# --------------------------------------------------------------------------
# affine interpolation

@dataclass(frozen=True)
class AffineCoeffs:
    """Plane ``z = a0 + a1 * x + a2 * y``."""

    a0: float
    a1: float
    a2: float

    def __iter__(self):
        return iter((self.a0, self.a1, self.a2))


def affine_fit(p1, p2, p3, z1, z2, z3) -> AffineCoeffs:
    """Plane through three (point, value) pairs.

    With three points the least-squares normal equations have the exact
    solution of the 3x3 system; it is computed in coordinates relative to
    ``p1`` for accuracy.
    """
    coeffs = affine_fit_many(np.array([[p1, p2, p3]], dtype=np.float64),
                             np.array([[z1, z2, z3]], dtype=np.float64))
    return AffineCoeffs(*map(float, coeffs[0]))


def affine_fit_many(tri_pts, z):
    """Vectorised :func:`affine_fit`: ``tri_pts`` (T, 3, 2), ``z`` (T, 3) -> (T, 3)."""
    tri_pts = np.asarray(tri_pts, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    e1 = tri_pts[:, 1] - tri_pts[:, 0]
    e2 = tri_pts[:, 2] - tri_pts[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    if (0.5 * np.abs(det) < AREA_EPS).any() or not np.all(np.isfinite(det)):
        raise DegenerateTriangle("triangle area below 1e-9")
    dz1 = z[:, 1] - z[:, 0]
    dz2 = z[:, 2] - z[:, 0]
    a1 = (dz1 * e2[:, 1] - dz2 * e1[:, 1]) / det
    a2 = (dz2 * e1[:, 0] - dz1 * e2[:, 0]) / det
    a0 = z[:, 0] - a1 * tri_pts[:, 0, 0] - a2 * tri_pts[:, 0, 1]
    return np.stack([a0, a1, a2], axis=1)


def affine_eval(c, x, y):
    a0, a1, a2 = c
    return a0 + a1 * np.asarray(x, dtype=np.float64) + a2 * np.asarray(y, dtype=np.float64)


# --------------------------------------------------------------------------
# point location

def locate(tri: Triangulation, x, y):
    """Containing triangle and barycentric weights for each query point.

    Returns ``(index, weights)`` where ``index`` is -1 outside the hull.
    A point on an edge shared by several triangles goes to the lowest
    triangle index.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    shape = x.shape
    x = x.ravel()
    y = y.ravel()
    index = np.full(x.shape, -1, dtype=np.intp)
    weights = np.zeros(x.shape + (3,))
    verts = tri.vertices
    for t, (i, j, k) in enumerate(tri.triangles):
        a, b, c = verts[i], verts[j], verts[k]
        lo = np.minimum(np.minimum(a, b), c) - 1e-9
        hi = np.maximum(np.maximum(a, b), c) + 1e-9
        cand = np.flatnonzero((index < 0) & (x >= lo[0]) & (x <= hi[0])
                              & (y >= lo[1]) & (y <= hi[1]))
        if cand.size == 0:
            continue
        e1 = b - a
        e2 = c - a
        det = e1[0] * e2[1] - e1[1] * e2[0]
        px = x[cand] - a[0]
        py = y[cand] - a[1]
        lb = (px * e2[1] - py * e2[0]) / det
        lc = (py * e1[0] - px * e1[1]) / det
        la = 1.0 - lb - lc
        inside = (la >= -BARY_TOL) & (lb >= -BARY_TOL) & (lc >= -BARY_TOL)
        hit = cand[inside]
        index[hit] = t
        weights[hit] = np.stack([la[inside], lb[inside], lc[inside]], axis=1)
    return index.reshape(shape), weights.reshape(shape + (3,))


# --------------------------------------------------------------------------
# forward map (input pixel -> reference coordinate)

@dataclass(frozen=True)
class CoordinateMap:
    width: int
    height: int
    xprime: np.ndarray
    yprime: np.ndarray
    valid_mask: np.ndarray


def _as_points(lm):
    if isinstance(lm, (LandmarkSet, ReferenceContour)):
        return lm.points
    return np.asarray(lm, dtype=np.float64)


def forward_coordinate_map(img_size, src_lm, ref) -> CoordinateMap:
    """Reference coordinates ``(x', y')`` of every pixel of the input image.

    The input landmarks are triangulated; inside each triangle ``x'`` and
    ``y'`` are the planes through the matching reference coordinates.
    Pixels outside the landmark hull are invalid (and hold 0).
    """
    w, h = img_size
    src = _as_points(src_lm)
    dst = _as_points(ref)
    tri = triangulate(src)
    coeff_x = affine_fit_many(src[tri.triangles], dst[tri.triangles, 0])
    coeff_y = affine_fit_many(src[tri.triangles], dst[tri.triangles, 1])
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    index, _ = locate(tri, xx, yy)
    valid = index >= 0
    xp = np.zeros((h, w))
    yp = np.zeros((h, w))
    t = index[valid]
    xp[valid] = affine_eval(coeff_x[t].T, xx[valid], yy[valid])
    yp[valid] = affine_eval(coeff_y[t].T, xx[valid], yy[valid])
    return CoordinateMap(w, h, xp, yp, valid)


# --------------------------------------------------------------------------
# warped faces

@dataclass(frozen=True)
class AlignedFace:
    """A face resampled onto the reference grid.

    ``intensity`` is the warped image; ``xmap``/``ymap`` give, for every
    grid pixel, the source-image coordinates it was sampled from; ``dx``
    and ``dy`` are their horizontal and vertical predecessor differences.
    Everything is 0 where ``mask`` is false.
    """

    intensity: np.ndarray
    xmap: np.ndarray
    ymap: np.ndarray
    mask: np.ndarray
    dx: Optional[np.ndarray] = None
    dy: Optional[np.ndarray] = None
    n_clamped: int = 0
    n_out_of_image: int = 0

    @property
    def grid_w(self) -> int:
        return self.intensity.shape[1]

    @property
    def grid_h(self) -> int:
        return self.intensity.shape[0]

    @property
    def grid(self):
        return (self.grid_w, self.grid_h)

    @property
    def dx_mask(self):
        m = np.zeros_like(self.mask)
        m[:, 1:] = self.mask[:, 1:] & self.mask[:, :-1]
        return m

    @property
    def dy_mask(self):
        m = np.zeros_like(self.mask)
        m[1:, :] = self.mask[1:, :] & self.mask[:-1, :]
        return m

    def channel(self, name):
        """One of ``"I"``, ``"dx"``, ``"dy"``."""
        if name == "I":
            return self.intensity
        if name in ("dx", "dy"):
            arr = getattr(self, name)
            if arr is None:
                raise MapsMissing("geometry maps not computed; call extract_geometry_maps")
            return arr
        raise KeyError(name)


def warp_to_grid(img: GrayImage, src_lm, ref: ReferenceContour, grid=None, geometry=True) -> AlignedFace:
    """Warp ``img`` so its landmarks ``src_lm`` land on the reference contour.

    Each grid pixel inside the reference hull is located in the reference
    triangulation; its barycentric weights, applied to the same triangle of
    source landmarks, give the source point, which is sampled bilinearly.
    Because the map is affine per triangle this is the exact inverse of
    scattering input pixels forward with :func:`forward_coordinate_map`.

    Source points up to half a pixel outside the image are clamped to the
    border; points further out are masked and counted in ``n_out_of_image``.
    """
    w, h = grid or ref.grid
    ref_pts = ref.points
    _check_in_grid(ref_pts, (w, h))
    src = _as_points(src_lm)
    tri = ref.triangulation if grid in (None, ref.grid) else triangulate(ref_pts)

    vv, uu = np.mgrid[0:h, 0:w].astype(np.float64)
    index, bary = locate(tri, uu, vv)
    inside = index >= 0
    corners = src[tri.triangles[index[inside]]]  # (n, 3, 2)
    wts = bary[inside]
    sx = np.einsum("nk,nk->n", wts, corners[:, :, 0])
    sy = np.einsum("nk,nk->n", wts, corners[:, :, 1])

    ih, iw = img.pixels.shape
    in_img = (sx >= -0.5) & (sx <= iw - 0.5) & (sy >= -0.5) & (sy <= ih - 0.5)
    clamped = in_img & ((sx < 0) | (sx > iw - 1) | (sy < 0) | (sy > ih - 1))
    n_out = int((~in_img).sum())
    if n_out:
        warnings.warn(f"{n_out} warped pixels sample outside the source image; masked",
                      SourceOutOfImageWarning, stacklevel=2)

    mask = np.zeros((h, w), dtype=bool)
    rows, cols = np.nonzero(inside)
    mask[rows[in_img], cols[in_img]] = True
    intensity = np.zeros((h, w))
    xmap = np.zeros((h, w))
    ymap = np.zeros((h, w))
    intensity[mask] = np.clip(sample_bilinear(img.pixels, sx[in_img], sy[in_img]), 0.0, 1.0)
    xmap[mask] = sx[in_img]
    ymap[mask] = sy[in_img]
    face = AlignedFace(intensity, xmap, ymap, mask, n_clamped=int(clamped.sum()),
                       n_out_of_image=n_out)
    return extract_geometry_maps(face) if geometry else face


def extract_geometry_maps(face: AlignedFace) -> AlignedFace:
    """Fill ``dx`` (horizontal difference of ``xmap``) and ``dy`` (vertical
    difference of ``ymap``). First column/row and pairs touching a masked
    pixel are 0."""
    if face.xmap is None or face.ymap is None:
        raise MapsMissing("face has no source-coordinate maps")
    dx = np.zeros_like(face.xmap)
    dy = np.zeros_like(face.ymap)
    mx = face.dx_mask
    my = face.dy_mask
    dx[:, 1:] = face.xmap[:, 1:] - face.xmap[:, :-1]
    dy[1:, :] = face.ymap[1:, :] - face.ymap[:-1, :]
    dx[~mx] = 0.0
    dy[~my] = 0.0
    return replace(face, dx=dx, dy=dy)


def reconstruct_maps(face: AlignedFace):
    """Rebuild ``xmap``/``ymap`` from ``dx``/``dy`` by running sums.

    Each maximal run of valid pixels along a row (for x) or column (for y)
    starts from the stored map value at its first pixel.
    """
    if face.dx is None or face.dy is None:
        raise MapsMissing("geometry maps not computed")
    return (_integrate_rows(face.xmap, face.dx, face.mask),
            _integrate_rows(face.ymap.T, face.dy.T, face.mask.T).T)


def _integrate_rows(base, diff, mask):
    out = np.zeros_like(base)
    for r in range(base.shape[0]):
        acc = 0.0
        prev = False
        for c in range(base.shape[1]):
            if not mask[r, c]:
                prev = False
                continue
            acc = acc + diff[r, c] if prev else base[r, c]
            out[r, c] = acc
            prev = True
    return out


def sample_maps(face: AlignedFace, points, triangulation=None):
    """Source coordinates at sub-pixel grid positions.

    By default, bilinear over the four surrounding grid pixels using only
    valid ones (weights renormalised). Bilinear blending smears the kink of
    the map at triangle edges; pass the reference ``triangulation`` to
    evaluate instead the affine map of the triangle containing each point,
    refitted from that triangle's own grid pixels (bilinear is kept for
    triangles with fewer than three non-collinear pixels). Returns
    ``(n, 2)``; NaN where nothing valid is near.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    out = _sample_bilinear_maps(face, pts)
    if triangulation is None:
        return out
    h, w = face.mask.shape
    vv, uu = np.mgrid[0:h, 0:w].astype(np.float64)
    pix_tri, _ = locate(triangulation, uu, vv)
    pix_tri[~face.mask] = -1
    counts = np.bincount(pix_tri[pix_tri >= 0], minlength=len(triangulation))
    fits = {}
    for i, (x, y) in enumerate(pts):
        # a point on an edge or vertex belongs to several triangles; the
        # one with most pixels gives the best-conditioned fit
        cands = [t for t in _containing(triangulation, x, y) if counts[t] >= 3]
        if not cands:
            continue
        t = max(cands, key=lambda t: counts[t])
        if t not in fits:
            sel = pix_tri == t
            A = np.c_[np.ones(counts[t]), uu[sel], vv[sel]]
            fits[t] = (np.linalg.lstsq(A, np.c_[face.xmap[sel], face.ymap[sel]], rcond=None)[0]
                       if np.linalg.matrix_rank(A) == 3 else None)
        if fits[t] is not None:
            out[i] = np.array([1.0, x, y]) @ fits[t]
    return out


def _containing(tri, x, y):
    v = tri.vertices[tri.triangles]  # (T, 3, 2)
    a, b, c = v[:, 0], v[:, 1], v[:, 2]
    det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    l1 = ((b[:, 0] - x) * (c[:, 1] - y) - (b[:, 1] - y) * (c[:, 0] - x)) / det
    l2 = ((c[:, 0] - x) * (a[:, 1] - y) - (c[:, 1] - y) * (a[:, 0] - x)) / det
    l3 = 1.0 - l1 - l2
    return np.flatnonzero((l1 >= -BARY_TOL) & (l2 >= -BARY_TOL) & (l3 >= -BARY_TOL))


def _sample_bilinear_maps(face, pts):
    h, w = face.mask.shape
    x0 = np.clip(np.floor(pts[:, 0]).astype(np.intp), 0, w - 2)
    y0 = np.clip(np.floor(pts[:, 1]).astype(np.intp), 0, h - 2)
    fx = pts[:, 0] - x0
    fy = pts[:, 1] - y0
    acc = np.zeros((len(pts), 2))
    tot = np.zeros(len(pts))
    for ox, oy, wt in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)),
                       (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
        r, c = y0 + oy, x0 + ox
        ok = face.mask[r, c]
        wt = np.where(ok, wt, 0.0)
        acc[:, 0] += wt * face.xmap[r, c]
        acc[:, 1] += wt * face.ymap[r, c]
        tot += wt
    with np.errstate(invalid="ignore", divide="ignore"):
        return acc / tot[:, None]


# --------------------------------------------------------------------------
# persistence

FACE_MAGIC = b"PXALFACE"
FACE_VERSION = 1


def save_aligned_face(face: AlignedFace, path) -> None:
    """Binary container: 16-byte header (magic, version, flags), grid size,
    five row-major little-endian float64 grids (I', xmap, ymap, dx, dy) and
    a packed bitmask."""
    if face.dx is None:
        face = extract_geometry_maps(face)
    h, w = face.mask.shape
    with open(path, "wb") as fh:
        fh.write(FACE_MAGIC + struct.pack("<II", FACE_VERSION, 0))
        fh.write(struct.pack("<II", w, h))
        for arr in (face.intensity, face.xmap, face.ymap, face.dx, face.dy):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        fh.write(np.packbits(face.mask.ravel()).tobytes())


def load_aligned_face(path) -> AlignedFace:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 24 or data[:8] != FACE_MAGIC:
        raise ValueError(f"{path}: not an aligned-face container")
    version, _flags = struct.unpack_from("<II", data, 8)
    if version != FACE_VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")
    w, h = struct.unpack_from("<II", data, 16)
    n = w * h
    need = 24 + 5 * 8 * n + (n + 7) // 8
    if len(data) != need:
        raise ValueError(f"{path}: expected {need} bytes, found {len(data)}")
    grids = [np.frombuffer(data, dtype="<f8", count=n, offset=24 + 8 * n * k).reshape(h, w).copy()
             for k in range(5)]
    bits = np.frombuffer(data, dtype=np.uint8, offset=24 + 40 * n)
    mask = np.unpackbits(bits, count=n).astype(bool).reshape(h, w)
    return AlignedFace(grids[0], grids[1], grids[2], mask, dx=grids[3], dy=grids[4])


def _false_color(delta, mask):
    # diverging blue-white-red around the identity stretch of 1
    dev = np.where(mask, delta - 1.0, 0.0)
    span = np.abs(dev).max()
    t = dev / span if span > 0 else dev
    rgb = np.ones(delta.shape + (3,))
    pos = np.clip(t, 0, 1)
    neg = np.clip(-t, 0, 1)
    rgb[..., 1] -= pos + neg
    rgb[..., 2] -= pos
    rgb[..., 0] -= neg
    rgb[~mask] = 0.0
    return (np.clip(rgb, 0, 1) * 255).round().astype(np.uint8)


def export_previews(face: AlignedFace, prefix) -> list:
    """PNG snapshots: warped intensity plus false-colour dx and dy maps."""
    from PIL import Image

    if face.dx is None:
        face = extract_geometry_maps(face)
    prefix = os.fspath(prefix)
    paths = [prefix + "_intensity.png", prefix + "_dx.png", prefix + "_dy.png"]
    Image.fromarray((np.clip(face.intensity, 0, 1) * 255).round().astype(np.uint8), "L").save(paths[0])
    Image.fromarray(_false_color(face.dx, face.dx_mask), "RGB").save(paths[1])
    Image.fromarray(_false_color(face.dy, face.dy_mask), "RGB").save(paths[2])
    return paths
