"""Cosine matching in the discriminant subspaces and weighted score fusion.

The fused similarity of two faces is

    sum over patches of  sim_I + w * sim_dx + w * sim_dy

where each ``sim`` is the cosine between the two faces' projections in that
patch/channel subspace and ``w`` weighs the geometry channels.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, EmptySet, GridMismatch, ZeroVector
from .fisher import DiscriminativeModel, project

DEFAULT_W = 0.2
# projections shorter than this carry no direction; such pairs score 0
NEAR_ZERO = 1e-12


@dataclass(frozen=True)
class FusionConfig:
    w: float = DEFAULT_W

    def __post_init__(self):
        if not np.isfinite(self.w) or self.w < 0:
            raise ValueError(f"geometry weight must be finite and >= 0, got {self.w}")

    def weight(self, channel):
        return 1.0 if channel == "I" else self.w


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionMismatch(f"shapes {u.shape} and {v.shape} differ")
    # power-of-two rescaling is exact and keeps the sums clear of under/overflow
    eu = np.frexp(np.abs(u).max(initial=0.0))[1]
    ev = np.frexp(np.abs(v).max(initial=0.0))[1]
    u = np.ldexp(u, -eu)
    v = np.ldexp(v, -ev)
    uu = np.sum(u * u)
    vv = np.sum(v * v)
    if np.ldexp(np.sqrt(uu), eu) <= 1e-300 or np.ldexp(np.sqrt(vv), ev) <= 1e-300:
        raise ZeroVector("cosine of a zero vector is undefined")
    # sqrt(a*a) == a in IEEE arithmetic, so cosine(v, v) is exactly 1
    c = np.sum(u * v) / np.sqrt(uu * vv)
    return float(min(1.0, max(-1.0, c)))


@dataclass
class Projections:
    """Projected features of a set of faces, ``vectors[(p, ch)]`` is ``(n, r)``."""

    vectors: dict
    n: int


def project_faces(model: DiscriminativeModel, faces) -> Projections:
    faces = list(faces)
    if not faces:
        raise EmptySet("no faces to project")
    for f in faces:
        if tuple(f.grid) != tuple(model.grid):
            raise GridMismatch(f"face grid {f.grid} does not match model grid {model.grid}")
    stacks = {ch: np.stack([np.asarray(f.channel(ch), dtype=np.float64) for f in faces])
              for ch in model.channels}
    out = {}
    for (p, ch), sub in model.subspaces.items():
        if sub is None:
            continue
        rows, cols = model.layout.window(p)
        X = stacks[ch][:, rows, cols].reshape(len(faces), -1)
        out[(p, ch)] = project(sub, X)
    return Projections(out, len(faces))


def _cos_matrix(A, B):
    # same last-axis reduction for products and squared norms, so a row
    # against an identical row gives s / sqrt(s * s) == 1 exactly
    num = np.sum(A[:, None, :] * B[None, :, :], axis=-1)
    sa = np.sum(A * A, axis=-1)
    sb = np.sum(B * B, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore", under="ignore"):
        c = num / np.sqrt(np.outer(sa, sb))
    c[(np.sqrt(sa) < NEAR_ZERO)[:, None] | (np.sqrt(sb) < NEAR_ZERO)[None, :]] = 0.0
    return np.clip(c, -1.0, 1.0)


def channel_similarity(model, proj_a: Projections, proj_b: Projections):
    """Per-channel sums of patch cosines, ``{channel: (n_a, n_b) matrix}``."""
    sums = {ch: np.zeros((proj_a.n, proj_b.n)) for ch in model.channels}
    for p in range(len(model.layout)):
        for ch in model.channels:
            key = (p, ch)
            if key not in proj_a.vectors:
                continue
            sums[ch] += _cos_matrix(proj_a.vectors[key], proj_b.vectors[key])
    return sums


def fuse(sums, cfg: FusionConfig):
    """``sum_I + w * (sum_dx + sum_dy)``; missing channels count as 0."""
    intensity = sums.get("I", 0.0)
    geo = sums.get("dx", 0.0) + sums.get("dy", 0.0)
    return intensity + cfg.w * geo


def patch_similarities(model, face_i, face_j):
    """``{(p, ch): cosine}`` for one pair; inert or near-zero pairs give 0."""
    pa = project_faces(model, [face_i])
    pb = project_faces(model, [face_j])
    sims = {}
    for key in model.subspaces:
        if key not in pa.vectors:
            sims[key] = 0.0
            continue
        u, v = pa.vectors[key][0], pb.vectors[key][0]
        if np.sqrt(np.sum(u * u)) < NEAR_ZERO or np.sqrt(np.sum(v * v)) < NEAR_ZERO:
            sims[key] = 0.0
        else:
            sims[key] = cosine(u, v)
    return sims


def pair_score(model: DiscriminativeModel, face_i, face_j, cfg: FusionConfig = FusionConfig()) -> float:
    sims = patch_similarities(model, face_i, face_j)
    sums = {ch: 0.0 for ch in model.channels}
    for p in range(len(model.layout)):
        for ch in model.channels:
            sums[ch] += sims.get((p, ch), 0.0)
    return float(fuse(sums, cfg))


@dataclass
class ScoreMatrix:
    """Fused scores of every gallery (row) against every probe (column).

    ``pairs`` flags the cells that count as comparisons; when gallery and
    probes are the same set only the strict upper triangle does.
    """

    gallery_ids: list
    probe_ids: list
    gallery_subjects: list
    probe_subjects: list
    scores: np.ndarray
    genuine: np.ndarray
    pairs: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.pairs is None:
            self.pairs = np.ones(self.scores.shape, dtype=bool)

    def genuine_scores(self):
        return self.scores[self.pairs & self.genuine]

    def impostor_scores(self):
        return self.scores[self.pairs & ~self.genuine]


def score_all(model, gallery, probes, cfg: FusionConfig = FusionConfig(), gallery_subjects=None,
              probe_subjects=None, gallery_ids=None, probe_ids=None, same_set=False) -> ScoreMatrix:
    """All gallery-vs-probe fused scores.

    With ``same_set=True`` (probes are the gallery) self-pairs and mirrored
    duplicates are excluded from :attr:`ScoreMatrix.pairs`.
    """
    gallery = list(gallery)
    probes = gallery if same_set else list(probes)
    if not gallery or not probes:
        raise EmptySet("gallery and probe sets must be non-empty")
    pg = project_faces(model, gallery)
    pp = pg if same_set else project_faces(model, probes)
    scores = fuse(channel_similarity(model, pg, pp), cfg)
    gs = list(gallery_subjects) if gallery_subjects is not None else [None] * len(gallery)
    ps = (gs if same_set else
          list(probe_subjects) if probe_subjects is not None else [None] * len(probes))
    gids = list(gallery_ids) if gallery_ids is not None else [f"g{k}" for k in range(len(gallery))]
    pids = gids if same_set else (list(probe_ids) if probe_ids is not None
                                  else [f"p{k}" for k in range(len(probes))])
    genuine = np.array([[a is not None and a == b for b in ps] for a in gs], dtype=bool)
    pairs = np.triu(np.ones(scores.shape, dtype=bool), k=1) if same_set else None
    meta = {"w": cfg.w, "inert": len(model.inert), "patches": len(model.layout)}
    return ScoreMatrix(gids, pids, gs, ps, scores, genuine, pairs, meta)


def write_score_csv(sm: ScoreMatrix, path, mask_path=None) -> None:
    """Scores CSV (probe ids across, gallery ids down) plus a companion
    0/1 genuine-mask CSV of the same shape."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["gallery"] + list(sm.probe_ids))
        for gid, row in zip(sm.gallery_ids, sm.scores):
            wr.writerow([gid] + [repr(float(v)) for v in row])
    if mask_path:
        with open(mask_path, "w", encoding="utf-8", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["gallery"] + list(sm.probe_ids))
            for gid, row in zip(sm.gallery_ids, sm.genuine):
                wr.writerow([gid] + [int(v) for v in row])


def read_score_csv(path):
    """Returns ``(gallery_ids, probe_ids, scores)``."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    probe_ids = rows[0][1:]
    gallery_ids = [r[0] for r in rows[1:]]
    scores = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return gallery_ids, probe_ids, scores
