import numpy as np
import pytest

from pixalign.corpus import GrayImage
from pixalign.errors import GridMismatch, IndexOutOfRange, PatchTooLarge
from pixalign.patches import (PatchLayout, extract_features, feature_matrix, generate_layout, load_layout,
                              save_layout, whole_face_layout)
from pixalign.warp import AlignedFace, ReferenceContour, warp_to_grid


def face_from(intensity):
    h, w = intensity.shape
    vv, uu = np.mgrid[0:h, 0:w].astype(float)
    f = AlignedFace(np.asarray(intensity, float), uu, vv, np.ones((h, w), bool))
    from pixalign.warp import extract_geometry_maps
    return extract_geometry_maps(f)


def test_default_layout_bounds():
    lay = generate_layout((140, 120), 80, 30, seed=3)
    assert len(lay) == 80
    assert lay.patches[:, 0].min() >= 0 and lay.patches[:, 0].max() <= 110
    assert lay.patches[:, 1].min() >= 0 and lay.patches[:, 1].max() <= 90
    assert (lay.patches[:, 2] == 30).all()


def test_layout_reaches_far_corner():
    # top-left corners are drawn from the closed range [0, w - size]
    lay = generate_layout((12, 11), 400, 10, seed=0)
    assert lay.patches[:, 0].max() == 2 and lay.patches[:, 1].max() == 1


def test_layout_deterministic():
    a = generate_layout((140, 120), 80, 30, seed=11)
    assert np.array_equal(a.patches, generate_layout((140, 120), 80, 30, seed=11).patches)
    assert not np.array_equal(a.patches, generate_layout((140, 120), 80, 30, seed=12).patches)


def test_patch_too_large():
    with pytest.raises(PatchTooLarge):
        generate_layout((140, 120), 80, 200)
    with pytest.raises(PatchTooLarge):
        PatchLayout(np.array([[120, 0, 30]]), (140, 120))


def test_whole_face_layout_is_one_centred_square():
    lay = whole_face_layout((140, 120))
    assert lay.patches.tolist() == [[10, 0, 120]]


def test_layout_text_round_trip(tmp_path):
    lay = generate_layout((140, 120), 17, 25, seed=4)
    save_layout(lay, tmp_path / "layout.txt")
    text = (tmp_path / "layout.txt").read_text()
    assert text.splitlines()[0] == "grid 140 120 4"
    back = load_layout(tmp_path / "layout.txt")
    assert np.array_equal(back.patches, lay.patches) and back.grid == lay.grid and back.seed == 4
    assert back.digest() == lay.digest()


def test_row_major_flattening():
    I = np.zeros((4, 5))
    I[:2, :2] = [[.1, .2], [.3, .4]]
    feats = extract_features(face_from(I), PatchLayout(np.array([[0, 0, 2]]), (5, 4)), 0)
    assert feats.f_I.tolist() == [.1, .2, .3, .4]
    assert feats.patch_index == 0


def test_feature_lengths_and_reshape(rng):
    I = rng.uniform(size=(120, 140))
    lay = generate_layout((140, 120), 5, 30, seed=1)
    f = face_from(I)
    for p in range(5):
        feats = extract_features(f, lay, p)
        assert len(feats.f_I) == len(feats.f_dx) == len(feats.f_dy) == 900
        x0, y0, s = lay.patches[p]
        np.testing.assert_array_equal(feats.f_I.reshape(s, s), I[y0:y0 + s, x0:x0 + s])


def test_identity_warp_gives_unit_dx(template):
    ref = ReferenceContour(template, (140, 120))
    face = warp_to_grid(GrayImage(np.full((120, 140), 0.5)), template, ref)
    lay = PatchLayout(np.array([[45, 50, 30]]), (140, 120))
    np.testing.assert_allclose(extract_features(face, lay, 0).f_dx, 1.0, atol=1e-12)


def test_extraction_errors():
    f = face_from(np.zeros((4, 5)))
    lay = PatchLayout(np.array([[0, 0, 2]]), (5, 4))
    with pytest.raises(IndexOutOfRange):
        extract_features(f, lay, 1)
    with pytest.raises(GridMismatch):
        extract_features(face_from(np.zeros((5, 5))), lay, 0)


def test_extraction_does_not_mutate(rng):
    f = face_from(rng.uniform(size=(6, 6)))
    before = f.intensity.copy()
    lay = PatchLayout(np.array([[1, 1, 3]]), (6, 6))
    v = extract_features(f, lay, 0).f_I
    v[:] = -1
    np.testing.assert_array_equal(f.intensity, before)
    np.testing.assert_array_equal(feature_matrix([f, f], lay, 0, "I")[0], before[1:4, 1:4].ravel())
