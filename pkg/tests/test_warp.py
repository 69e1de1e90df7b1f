import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial import ConvexHull

from helpers import jittered
from oracles import affine_map_from_triangles, delaunay_violations
from pixalign.corpus import GrayImage, LandmarkSet
from pixalign.errors import (AllCollinear, DegenerateTriangle, EmptyInput, MapsMissing, OutOfGrid,
                             SourceOutOfImageWarning, TooFewPoints)
from pixalign.warp import (AlignedFace, ReferenceContour, affine_eval, affine_fit, compute_reference_contour,
                           export_previews, extract_geometry_maps, forward_coordinate_map, load_aligned_face,
                           load_reference, locate, reconstruct_maps, sample_maps, save_aligned_face,
                           save_reference, triangulate, warp_to_grid)


# reference contour

def test_reference_of_one_set_is_that_set(template):
    ref = compute_reference_contour([LandmarkSet(template)])
    np.testing.assert_array_equal(ref.points, template)
    assert ref.source_count == 1


def test_reference_is_pointwise_mean(template):
    a, b = template.copy(), template.copy()
    a[5], b[5] = (10, 10), (20, 30)
    ref = compute_reference_contour([a, b])
    assert ref.points[5].tolist() == [15.0, 20.0]
    assert ref.source_count == 2


def test_reference_out_of_grid(template):
    a = template.copy()
    a[0, 0] = -2.0
    with pytest.raises(OutOfGrid):
        compute_reference_contour([a])


def test_reference_needs_input():
    with pytest.raises(EmptyInput):
        compute_reference_contour([])


def test_reference_file_round_trip(tmp_path, template):
    ref = ReferenceContour(template + 0.123456789, (140, 120), 7)
    save_reference(ref, tmp_path / "ref.txt")
    back = load_reference(tmp_path / "ref.txt")
    np.testing.assert_array_equal(back.points, ref.points)
    assert back.grid == (140, 120) and back.source_count == 7


# triangulation

def test_three_points_one_triangle():
    tri = triangulate([[0, 0], [4, 0], [1, 3]])
    assert tri.triangles.tolist() == [[0, 1, 2]]


def test_square_uses_lowest_index_diagonal():
    assert triangulate([[0, 0], [1, 0], [1, 1], [0, 1]]).triangles.tolist() == [[0, 1, 2], [0, 2, 3]]
    # same corners, numbered so the 0-3 diagonal is the lexicographically smallest
    assert triangulate([[0, 0], [1, 0], [0, 1], [1, 1]]).triangles.tolist() == [[0, 1, 3], [0, 3, 2]]


def test_regular_polygon_fans_from_vertex_zero():
    th = np.linspace(0, 2 * np.pi, 12, endpoint=False)
    tri = triangulate(np.c_[np.cos(th), np.sin(th)] * 10)
    assert len(tri) == 10
    assert all(0 in t for t in tri.triangles.tolist())


def test_triangulate_is_deterministic(rng):
    pts = rng.uniform(0, 100, size=(40, 2))
    assert np.array_equal(triangulate(pts).triangles, triangulate(pts.copy()).triangles)


def test_too_few_and_collinear():
    with pytest.raises(TooFewPoints):
        triangulate([[0, 0], [1, 1]])
    with pytest.raises(AllCollinear):
        triangulate([[0, 0], [1, 1], [2, 2], [5, 5]])


def _signed_areas(pts, tris):
    a, b, c = pts[tris[:, 0]], pts[tris[:, 1]], pts[tris[:, 2]]
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


@settings(max_examples=60, deadline=None)
@given(st.integers(3, 50), st.integers(0, 2 ** 32 - 1))
def test_delaunay_property_and_hull_cover(n, seed):
    pts = np.random.default_rng(seed).uniform(0, 100, size=(n, 2))
    tri = triangulate(pts)
    assert delaunay_violations(pts, tri.triangles) == []
    areas = _signed_areas(pts, tri.triangles)
    assert (areas > 1e-9).all()
    assert areas.sum() == pytest.approx(ConvexHull(pts).volume, rel=1e-9)


def test_delaunay_on_integer_lattice():
    # many cocircular quadruples; ties must still give a valid triangulation
    yy, xx = np.mgrid[0:5, 0:6]
    pts = np.c_[xx.ravel(), yy.ravel()].astype(float)
    tri = triangulate(pts)
    assert len(tri) == 2 * 5 * 4
    assert delaunay_violations(pts, tri.triangles) == []


# affine pieces

def test_affine_fit_closed_form():
    assert tuple(affine_fit((0, 0), (1, 0), (0, 1), 2, 5, 7)) == (2.0, 3.0, 5.0)


def test_affine_fit_constant(rng):
    p = rng.uniform(0, 10, size=(3, 2))
    c = affine_fit(*p, 4.5, 4.5, 4.5)
    assert c.a0 == pytest.approx(4.5) and abs(c.a1) < 1e-12 and abs(c.a2) < 1e-12


def test_affine_fit_degenerate():
    with pytest.raises(DegenerateTriangle):
        affine_fit((0, 0), (1, 1), (2, 2), 1, 2, 3)


def test_affine_eval():
    assert affine_eval((2, 3, 5), 0, 0) == 2
    assert affine_eval((2, 3, 5), 1, 1) == 10
    assert affine_eval((0, 1, 0), 7.25, -3) == 7.25


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_affine_fit_recovers_linear_fields(seed):
    r = np.random.default_rng(seed)
    p = r.uniform(-100, 100, size=(3, 2))
    a = r.uniform(-10, 10, size=3)
    area = 0.5 * abs(np.cross(np.r_[p[1] - p[0], 0], np.r_[p[2] - p[0], 0])[2])
    if area < 1e-3:
        return
    z = a[0] + a[1] * p[:, 0] + a[2] * p[:, 1]
    c = np.array(tuple(affine_fit(*p, *z)))
    np.testing.assert_allclose(c, a, rtol=1e-9, atol=1e-9 * np.abs(a).max())
    q = r.uniform(-100, 100, size=(5, 2))
    np.testing.assert_allclose(affine_eval(c, q[:, 0], q[:, 1]), a[0] + a[1] * q[:, 0] + a[2] * q[:, 1],
                               rtol=1e-9, atol=1e-7)


def test_locate_lowest_index_on_shared_edge():
    tri = triangulate([[0, 0], [2, 0], [2, 2], [0, 2]])
    idx, bary = locate(tri, np.array([1.0]), np.array([1.0]))
    assert idx[0] == 0
    np.testing.assert_allclose(bary[0].sum(), 1.0)
    idx, _ = locate(tri, np.array([5.0]), np.array([5.0]))
    assert idx[0] == -1


# forward coordinate map

def test_forward_map_identity(template):
    ref = ReferenceContour(template, (140, 120))
    cm = forward_coordinate_map((140, 120), template, ref)
    yy, xx = np.mgrid[0:120, 0:140]
    v = cm.valid_mask
    assert v.sum() > 5000
    assert np.abs(cm.xprime[v] - xx[v]).max() < 1e-9
    assert np.abs(cm.yprime[v] - yy[v]).max() < 1e-9


def test_forward_map_translation(template):
    ref = ReferenceContour(template, (140, 120))
    src = template + (5.0, -3.0)
    cm = forward_coordinate_map((150, 130), src, ref)
    yy, xx = np.mgrid[0:130, 0:150]
    v = cm.valid_mask
    assert np.abs(cm.xprime[v] - (xx[v] - 5)).max() < 1e-9
    assert np.abs(cm.yprime[v] - (yy[v] + 3)).max() < 1e-9


def test_forward_map_scale_matches_per_triangle_oracle(template):
    ref = ReferenceContour(template * 0.5 + 10, (140, 120))
    src = (template * 0.5 + 10) * 2.0
    cm = forward_coordinate_map((200, 200), src, ref)
    tri = triangulate(src)
    idx, _ = locate(tri, *np.mgrid[0:200, 0:200][::-1].astype(float))
    yy, xx = np.mgrid[0:200, 0:200]
    for t in range(len(tri)):
        sel = idx == t
        if not sel.any():
            continue
        M = affine_map_from_triangles(src[tri.triangles[t]], ref.points[tri.triangles[t]])
        want = M @ np.vstack([xx[sel], yy[sel], np.ones(sel.sum())])
        assert np.abs(cm.xprime[sel] - want[0]).max() < 1e-9
        assert np.abs(cm.yprime[sel] - want[1]).max() < 1e-9
    v = cm.valid_mask
    assert np.abs(cm.xprime[v] - xx[v] / 2).max() < 1e-9


def test_forward_map_landmark_pixels_hit_reference(template, rng):
    src = np.round(jittered(template, rng, 3.0)) + (10, 10)
    tri = triangulate(src)
    if (_signed_areas(src, tri.triangles) < 1e-9).any():
        pytest.skip("rounding produced a degenerate triangle")
    ref = ReferenceContour(jittered(template, rng, 2.0), (140, 120))
    cm = forward_coordinate_map((170, 150), src, ref)
    xi, yi = src[:, 0].astype(int), src[:, 1].astype(int)
    assert np.abs(cm.xprime[yi, xi] - ref.points[:, 0]).max() < 1e-9
    assert np.abs(cm.yprime[yi, xi] - ref.points[:, 1]).max() < 1e-9


# warping

def test_identity_warp_reproduces_image(template, rng):
    ref = ReferenceContour(template, (140, 120))
    img = GrayImage(rng.uniform(size=(120, 140)))
    face = warp_to_grid(img, template, ref)
    m = face.mask
    assert m.sum() > 5000
    assert np.abs(face.intensity[m] - img.pixels[m]).max() <= 1e-12
    assert (face.intensity[~m] == 0).all()
    interior = face.dx_mask & face.dy_mask
    assert np.abs(face.dx[interior] - 1).max() <= 1e-12
    assert np.abs(face.dy[interior] - 1).max() <= 1e-12


def test_constant_image_stays_constant(template, rng):
    ref = ReferenceContour(template, (140, 120))
    face = warp_to_grid(GrayImage(np.full((170, 150), 0.37)), jittered(template, rng, 4) + 10, ref)
    np.testing.assert_allclose(face.intensity[face.mask], 0.37, atol=1e-15)


def test_ramp_under_translation(template):
    ref = ReferenceContour(template, (140, 120))
    w = 160
    img = GrayImage(np.tile(np.arange(w) / (w - 1), (130, 1)))
    face = warp_to_grid(img, template + (6.25, 3.5), ref)
    m = face.mask
    np.testing.assert_allclose(face.intensity[m], face.xmap[m] / (w - 1), atol=1e-12)
    np.testing.assert_allclose(face.xmap[m] - np.mgrid[0:120, 0:140][1][m], 6.25, atol=1e-12)


def test_mask_is_hull_and_in_image(template):
    ref = ReferenceContour(template, (140, 120))
    with pytest.warns(SourceOutOfImageWarning):
        face = warp_to_grid(GrayImage(np.ones((120, 100))), template, ref)
    idx, _ = locate(ref.triangulation, *np.mgrid[0:120, 0:140][::-1].astype(float))
    inside = idx >= 0
    # identity geometry: the source x of grid column u is u itself
    in_image = np.mgrid[0:120, 0:140][1] <= 99.5
    np.testing.assert_array_equal(face.mask, inside & in_image)
    assert face.n_out_of_image == int((inside & ~in_image).sum()) > 0


def test_pinning_with_triangle_refit(template, rng):
    ref = ReferenceContour(template, (140, 120))
    img = GrayImage(rng.uniform(size=(170, 150)))
    for _ in range(5):
        src = jittered(template, rng, 10.0) + (5, 25)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SourceOutOfImageWarning)
            face = warp_to_grid(img, src, ref)
        got = sample_maps(face, ref.points, ref.triangulation)
        assert np.abs(got - src).max() < 1e-9


def test_sample_maps_bilinear_inside_a_triangle(template):
    ref = ReferenceContour(template, (140, 120))
    face = warp_to_grid(GrayImage(np.zeros((170, 150))), template * 1.1 + 3, ref)
    got = sample_maps(face, [[60.3, 70.6]])
    np.testing.assert_allclose(got, [[60.3 * 1.1 + 3, 70.6 * 1.1 + 3]], atol=1e-9)


# geometry maps

def test_translation_warp_has_unit_deltas(template):
    ref = ReferenceContour(template, (140, 120))
    face = warp_to_grid(GrayImage(np.zeros((150, 170))), template + (9.5, 11.25), ref)
    assert np.abs(face.dx[face.dx_mask] - 1).max() < 1e-12
    assert np.abs(face.dy[face.dy_mask] - 1).max() < 1e-12
    assert (face.dx[:, 0] == 0).all() and (face.dy[0, :] == 0).all()
    assert (face.dx[~face.dx_mask] == 0).all()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_telescoping_reconstruction(seed):
    from pixalign.synthetic import template_landmarks

    tpl = template_landmarks()
    r = np.random.default_rng(seed)
    ref = ReferenceContour(tpl, (140, 120))
    src = jittered(tpl, r, 8.0) * r.uniform(0.8, 1.2) + r.uniform(0, 20, size=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SourceOutOfImageWarning)
        face = warp_to_grid(GrayImage(r.uniform(size=(170, 170))), src, ref)
    xr, yr = reconstruct_maps(face)
    m = face.mask
    assert np.abs(xr[m] - face.xmap[m]).max() <= 1e-12 * max(1.0, np.abs(face.xmap).max())
    assert np.abs(yr[m] - face.ymap[m]).max() <= 1e-12 * max(1.0, np.abs(face.ymap).max())


def test_geometry_maps_required():
    face = AlignedFace(np.zeros((2, 2)), None, None, np.ones((2, 2), bool))
    with pytest.raises(MapsMissing):
        extract_geometry_maps(face)
    with pytest.raises(MapsMissing):
        face.channel("dx")


# persistence

def test_aligned_face_round_trip(tmp_path, template, rng):
    ref = ReferenceContour(template, (140, 120))
    face = warp_to_grid(GrayImage(rng.uniform(size=(170, 150))), jittered(template, rng, 4) + 8, ref)
    save_aligned_face(face, tmp_path / "f.paf")
    back = load_aligned_face(tmp_path / "f.paf")
    for name in ("intensity", "xmap", "ymap", "dx", "dy", "mask"):
        np.testing.assert_array_equal(getattr(back, name), getattr(face, name))
    with open(tmp_path / "f.paf", "rb") as fh:
        assert fh.read(8) == b"PXALFACE"


def test_previews_written(tmp_path, template):
    ref = ReferenceContour(template, (140, 120))
    face = warp_to_grid(GrayImage(np.full((150, 170), 0.5)), template + 5, ref)
    paths = export_previews(face, tmp_path / "p")
    from PIL import Image

    sizes = [Image.open(p).size for p in paths]
    assert sizes == [(140, 120)] * 3
    assert [p.rsplit("_", 1)[1] for p in paths] == ["intensity.png", "dx.png", "dy.png"]
