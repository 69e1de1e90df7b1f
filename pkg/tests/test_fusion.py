import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pixalign.errors import DimensionMismatch, EmptySet, GridMismatch, ZeroVector
from pixalign.fisher import train_model
from pixalign.fusion import (FusionConfig, cosine, pair_score, patch_similarities, read_score_csv, score_all,
                             write_score_csv)
from pixalign.patches import generate_layout
from pixalign.warp import AlignedFace, extract_geometry_maps

GRID = (16, 14)


def random_faces(rng, n_subj=4, per=5):
    w, h = GRID
    vv, uu = np.mgrid[0:h, 0:w].astype(float)
    faces, labels = [], []
    base = rng.uniform(size=(n_subj, 3, h, w))
    for s in range(n_subj):
        for _ in range(per):
            noise = rng.normal(0, 0.1, size=(3, h, w))
            I = base[s, 0] + noise[0]
            xm = uu + base[s, 1] + noise[1]
            ym = vv + base[s, 2] + noise[2]
            faces.append(extract_geometry_maps(AlignedFace(I, xm, ym, np.ones((h, w), bool))))
            labels.append(f"s{s}")
    return faces, labels


@pytest.fixture(scope="module")
def trained():
    rng = np.random.default_rng(77)
    faces, labels = random_faces(rng)
    model = train_model(faces, labels, generate_layout(GRID, 80, 6, seed=1))
    assert not model.inert
    return model, faces, labels


# cosine

def test_cosine_examples(rng):
    v = rng.normal(size=7)
    assert cosine(v, v) == 1.0
    assert cosine([1, 0], [0, 1]) == 0.0
    assert cosine(v, -v) == -1.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=12))
def test_self_cosine_is_exactly_one(xs):
    v = np.array(xs)
    if np.linalg.norm(v) <= 1e-300:
        return
    assert cosine(v, v) == 1.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(1e-3, 1e3))
def test_cosine_symmetric_scale_invariant_bounded(seed, lam):
    r = np.random.default_rng(seed)
    u, v = r.normal(size=5), r.normal(size=5)
    c = cosine(u, v)
    assert -1 <= c <= 1
    assert abs(c - cosine(v, u)) < 1e-15
    assert abs(c - cosine(lam * u, v)) < 1e-10


def test_cosine_at_extreme_magnitudes():
    for scale in (1e-300, 3.6e-150, 1e150, 1e300):
        v = np.array([1.0, 1.0, 0.5]) * scale
        assert cosine(v, v) == 1.0
        assert cosine(v, [2.0, 2.0, 1.0]) == 1.0
    assert cosine([1e-299, 0.0], [0.0, 1e299]) == 0.0


def test_cosine_errors():
    with pytest.raises(ZeroVector):
        cosine([0, 0], [1, 0])
    with pytest.raises(DimensionMismatch):
        cosine([1, 0], [1, 0, 0])


# fused scores

def test_self_pair_scores_112(trained):
    model, faces, _ = trained
    for f in faces[:3]:
        assert pair_score(model, f, f, FusionConfig(0.2)) == 112.0
    sm = score_all(model, faces, faces, FusionConfig(0.2))
    assert (np.diag(sm.scores) == 112.0).all()


def test_w_zero_is_intensity_sum(trained):
    model, faces, _ = trained
    sims = patch_similarities(model, faces[0], faces[7])
    want = sum(sims[(p, "I")] for p in range(80))
    assert pair_score(model, faces[0], faces[7], FusionConfig(0.0)) == want


def test_score_is_affine_in_w(trained):
    model, faces, _ = trained
    a, b = faces[1], faces[12]
    s0, s2, s1 = (pair_score(model, a, b, FusionConfig(w)) for w in (0.0, 0.2, 1.0))
    slope = s1 - s0
    assert abs(s2 - (s0 + 0.2 * slope)) < 1e-10
    sims = patch_similarities(model, a, b)
    geo = sum(sims[(p, "dx")] + sims[(p, "dy")] for p in range(80))
    assert abs(slope - geo) < 1e-10


def test_symmetry_and_bound(trained):
    model, faces, _ = trained
    for i, j in [(0, 5), (3, 17), (9, 10)]:
        s = pair_score(model, faces[i], faces[j])
        assert abs(s - pair_score(model, faces[j], faces[i])) < 1e-10
        assert abs(s) <= 80 * 1.4


def test_constant_patch_sims(trained):
    model, faces, _ = trained
    # with the same face on both sides every cosine is 1, so P (1 + 2w)
    for w in (0.0, 0.5, 3.0):
        assert pair_score(model, faces[2], faces[2], FusionConfig(w)) == pytest.approx(80 * (1 + 2 * w), abs=1e-12)


def test_inert_pairs_contribute_nothing(trained):
    model, faces, _ = trained
    import copy

    crippled = copy.copy(model)
    crippled.subspaces = dict(model.subspaces)
    for p in range(80):
        crippled.subspaces[(p, "dy")] = None
    assert pair_score(crippled, faces[0], faces[0]) == pytest.approx(80 * 1.2, abs=1e-12)


def test_grid_mismatch(trained):
    model, _, _ = trained
    f = AlignedFace(np.zeros((5, 5)), np.zeros((5, 5)), np.zeros((5, 5)), np.ones((5, 5), bool))
    with pytest.raises(GridMismatch):
        pair_score(model, extract_geometry_maps(f), extract_geometry_maps(f))


def test_invalid_weight():
    with pytest.raises(ValueError):
        FusionConfig(-0.1)
    with pytest.raises(ValueError):
        FusionConfig(float("nan"))


# score matrices

def test_one_by_one_matrix_equals_pair_score(trained):
    model, faces, _ = trained
    sm = score_all(model, [faces[0]], [faces[6]])
    assert sm.scores.shape == (1, 1)
    assert sm.scores[0, 0] == pytest.approx(pair_score(model, faces[0], faces[6]), abs=1e-10)


def test_matrix_matches_exhaustive_pair_scores(trained):
    model, faces, labels = trained
    four = [faces[0], faces[1], faces[5], faces[10]]
    subj = [labels[i] for i in (0, 1, 5, 10)]
    sm = score_all(model, four, None, gallery_subjects=subj, same_set=True)
    oracle = np.array([[pair_score(model, a, b) for b in four] for a in four])
    np.testing.assert_allclose(sm.scores, oracle, atol=1e-10)
    assert (sm.scores.argmax(axis=1) == np.arange(4)).all()
    assert sm.pairs.sum() == 6 and not sm.pairs.diagonal().any()
    assert sm.genuine_scores().size == 1  # faces 0 and 1 share a subject


def test_disjoint_subjects_have_no_genuine(trained):
    model, faces, labels = trained
    sm = score_all(model, faces[:5], faces[5:10], FusionConfig(), labels[:5], labels[5:10])
    assert not sm.genuine.any()
    assert sm.scores.shape == (5, 5)


def test_empty_sets(trained):
    model, faces, _ = trained
    with pytest.raises(EmptySet):
        score_all(model, [], faces[:2])


def test_score_csv_round_trip(tmp_path, trained):
    model, faces, labels = trained
    sm = score_all(model, faces[:3], faces[3:7], FusionConfig(), labels[:3], labels[3:7],
                   ["a", "b", "c"], ["p", "q", "r", "s"])
    write_score_csv(sm, tmp_path / "s.csv", tmp_path / "s_genuine.csv")
    g, p, scores = read_score_csv(tmp_path / "s.csv")
    assert g == ["a", "b", "c"] and p == ["p", "q", "r", "s"]
    np.testing.assert_array_equal(scores, sm.scores)
    mask = (tmp_path / "s_genuine.csv").read_text().splitlines()
    assert mask[0] == "gallery,p,q,r,s"
    assert [list(map(int, r.split(",")[1:])) for r in mask[1:]] == sm.genuine.astype(int).tolist()
