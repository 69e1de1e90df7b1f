"""Synthetic faces with known landmarks, for tests and demos.

A subject is a random texture painted on a canonical 68-landmark face plus a
small subject-specific shape change. An expression is a smooth,
invertible displacement field applied to the face surface. Images are
rendered by pulling each pixel back through pose, expression and shape to
canonical face coordinates, so the landmarks of every image are exact
(up to optional jitter).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .corpus import (DEFAULT_EYES, FaceRecord, GrayImage, LandmarkSet, Manifest, save_image,
                     save_landmarks, save_manifest)


def template_landmarks() -> np.ndarray:
    """Canonical 68-point face in the 140x120 eye-aligned frame."""
    pts = np.zeros((68, 2))
    # jaw 0-16: lower half-ellipse from the left ear to the right ear
    th = np.linspace(0.0, np.pi, 17)
    pts[0:17, 0] = 60.0 - 48.0 * np.cos(th)
    pts[0:17, 1] = 48.0 + 62.0 * np.sin(th)
    # brows 17-21, 22-26
    bx = np.linspace(17.0, 49.0, 5)
    pts[17:22] = np.c_[bx, 42.0 - 5.0 * np.sin(np.linspace(0.2, np.pi - 0.2, 5))]
    pts[22:27] = pts[17:22] + (54.0, 0.0)
    # nose bridge 27-30, base 31-35
    pts[27:31] = np.c_[np.full(4, 60.0), np.linspace(54.0, 75.0, 4)]
    pts[31:36] = np.c_[np.linspace(51.0, 69.0, 5), [78.0, 80.0, 81.0, 80.0, 78.0]]
    # eyes 36-41 (image-left), 42-47; each averages to its eye target
    eye = np.array([[-10, 0], [-4, -4], [4, -4], [10, 0], [4, 4], [-4, 4]], dtype=float)
    pts[36:42] = eye + DEFAULT_EYES[0]
    pts[42:48] = eye + DEFAULT_EYES[1]
    # outer lip 48-59 (clockwise from the left corner), inner lip 60-67
    pts[48:60] = [[44, 95], [49, 91], [55, 89], [60, 90], [65, 89], [71, 91], [76, 95],
                  [71, 100], [65, 102], [60, 103], [55, 102], [49, 100]]
    pts[60:68] = [[48, 95], [55, 93.5], [60, 94], [65, 93.5], [72, 95],
                  [65, 97], [60, 97.5], [55, 97]]
    return pts


class RbfField:
    """Smooth displacement ``d(p) = sum_k v_k exp(-|p - c_k|^2 / 2 s^2)``."""

    def __init__(self, centers, vectors, sigma):
        self.centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
        self.vectors = np.asarray(vectors, dtype=np.float64).reshape(-1, 2)
        self.sigma = float(sigma)

    def __call__(self, p):
        p = np.asarray(p, dtype=np.float64)
        if len(self.centers) == 0:
            return np.zeros_like(p)
        dx = p[..., 0, None] - self.centers[:, 0]
        dy = p[..., 1, None] - self.centers[:, 1]
        k = np.exp((dx * dx + dy * dy) * (-0.5 / self.sigma ** 2))
        return np.stack([k @ self.vectors[:, 0], k @ self.vectors[:, 1]], axis=-1)

    def forward(self, p):
        return np.asarray(p, dtype=np.float64) + self(p)

    def inverse(self, q, iters=60, tol=1e-9):
        # fixed point q = p + d(p); contracts while the field's Jacobian stays small
        q = np.asarray(q, dtype=np.float64)
        p = q - self(q)
        for _ in range(iters):
            nxt = q - self(p)
            done = np.abs(nxt - p).max() < tol
            p = nxt
            if done:
                break
        return p


# expression name -> (landmark group, displacement, width) triples; each
# group acts through one Gaussian centred on the group's centroid
_EXPRESSIONS = {
    "neutral": [],
    "smile": [([48], (-3, -4), 8), ([54], (3, -4), 8), ([3], (0, -2), 10), ([13], (0, -2), 10)],
    "open": [([57, 66, 8], (0, 8), 13)],
    "surprise": [([17, 18, 19, 20, 21], (0, -5), 11), ([22, 23, 24, 25, 26], (0, -5), 11),
                 ([57, 8], (0, 5), 13)],
    "frown": [([21], (1, 3), 8), ([22], (-1, 3), 8), ([48], (0, 4), 8), ([54], (0, 4), 8)],
    "squint": [([37, 38], (0, 2.5), 7), ([43, 44], (0, 2.5), 7), ([2], (0, -2), 10),
               ([14], (0, -2), 10)],
    "yaw": [([30, 33, 51, 62], (-7, 0), 18)],
    "pucker": [([48], (4, 0), 8), ([54], (-4, 0), 8), ([57], (0, 2), 8)],
}
EXPRESSIONS = tuple(_EXPRESSIONS)


class _MultiField:
    def __init__(self, fields):
        self.fields = fields

    def __call__(self, p):
        p = np.asarray(p, dtype=np.float64)
        return sum((f(p) for f in self.fields), np.zeros_like(p))

    forward = RbfField.forward
    inverse = RbfField.inverse


def expression_field(name, strength=1.0, template=None):
    """Displacement field of an expression, scaled by ``strength``."""
    tpl = template_landmarks() if template is None else template
    return _MultiField([RbfField(tpl[idx].mean(axis=0), np.asarray(vec, float) * strength, sig)
                        for idx, vec, sig in _EXPRESSIONS[name]])


@dataclass
class Subject:
    name: str
    blobs: np.ndarray  # (n, 5): x, y, sigma, amplitude, unused
    shape: RbfField


def make_subject(name, rng, n_blobs=250, shape_jitter=1.0, blob_sigma=(1.2, 2.5), blob_amp=0.05) -> Subject:
    """Random identity: ``n_blobs`` Gaussian spots of width ``blob_sigma``
    and amplitude up to ``blob_amp``, plus a smooth shape perturbation."""
    tpl = template_landmarks()
    lo = np.array([14.0, 36.0])
    hi = np.array([106.0, 110.0])
    xy = rng.uniform(lo, hi, size=(n_blobs, 2))
    sig = rng.uniform(blob_sigma[0], blob_sigma[1], size=n_blobs)
    amp = rng.uniform(-blob_amp, blob_amp, size=n_blobs)
    blobs = np.c_[xy, sig, amp, np.zeros(n_blobs)]
    anchors = tpl[[0, 4, 8, 12, 16, 19, 24, 30, 48, 54, 36, 45]]
    shape = RbfField(anchors, rng.normal(0.0, shape_jitter, size=anchors.shape), 14.0)
    return Subject(name, blobs, shape)


def _base_shading(p, tpl):
    # features shared by every face: dark eyes, brows, nostrils and lips
    x, y = p[..., 0], p[..., 1]
    v = np.full(x.shape, 0.55)

    def blob(cx, cy, sx, sy, a):
        return a * np.exp(-((x - cx) ** 2 / (2 * sx ** 2) + (y - cy) ** 2 / (2 * sy ** 2)))

    for e in (tpl[36:42].mean(0), tpl[42:48].mean(0)):
        v += blob(e[0], e[1], 6.0, 3.0, -0.25)
    for b in (tpl[17:22].mean(0), tpl[22:27].mean(0)):
        v += blob(b[0], b[1], 11.0, 2.0, -0.15)
    v += blob(60.0, 79.0, 7.0, 2.5, -0.12)
    v += blob(60.0, 96.0, 13.0, 3.5, -0.18)
    return v


def _subject_texture(subject, p, tpl):
    v = _base_shading(p, tpl)
    x, y = p[..., 0, None], p[..., 1, None]
    b = subject.blobs
    v += (b[:, 3] * np.exp(-((x - b[:, 0]) ** 2 + (y - b[:, 1]) ** 2) / (2 * b[:, 2] ** 2))).sum(-1)
    return v


def _inside_poly(poly, x, y):
    # even-odd rule
    inside = np.zeros(x.shape, dtype=bool)
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        crosses = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < xint)
    return inside


def face_outline(tpl):
    """Closed face region: jaw line then the brows, right to left."""
    return np.vstack([tpl[0:17], tpl[26:21:-1] + (0, -4), tpl[21:16:-1] + (0, -4)])


def render_face(subject, expression, rng, strength=1.0, canvas=(170, 150), pose_jitter=True,
                landmark_noise=0.4, pixel_noise=0.08, occlusion=True):
    """Render one face image and its 68 landmarks.

    Returns ``(GrayImage, LandmarkSet)``. ``strength`` scales the expression
    field. Pose jitter is a random similarity (rotation, scale, shift);
    occlusion drops a random flat-coloured block onto the image.
    """
    tpl = template_landmarks()
    expr = expression_field(expression, strength, template=tpl)
    w, h = canvas
    offset = np.array([(w - 140) / 2.0, (h - 120) / 2.0])
    if pose_jitter:
        ang = np.deg2rad(rng.uniform(-6.0, 6.0))
        scl = rng.uniform(0.92, 1.08)
        shift = rng.uniform(-4.0, 4.0, size=2)
    else:
        ang, scl, shift = 0.0, 1.0, np.zeros(2)
    rot = scl * np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
    pivot = np.array([60.0, 75.0])

    def pose(p):
        return (p - pivot) @ rot.T + pivot + offset + shift

    def unpose(q):
        return np.linalg.solve(rot, (q - pivot - offset - shift).reshape(-1, 2).T).T.reshape(q.shape) + pivot

    lm = pose(expr.forward(subject.shape.forward(tpl)))
    if landmark_noise:
        lm = lm + rng.normal(0.0, landmark_noise, size=lm.shape)

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    q = np.stack([xx, yy], axis=-1)
    p_expr = expr.inverse(unpose(q))
    p_can = subject.shape.inverse(p_expr)
    face = _inside_poly(face_outline(tpl), p_can[..., 0], p_can[..., 1])
    img = np.full((h, w), 0.3)
    img[face] = _subject_texture(subject, p_can[face], tpl)
    # soft illumination gradient across the whole image
    g = rng.uniform(-0.08, 0.08, size=2)
    img = img + g[0] * (xx - w / 2) / w + g[1] * (yy - h / 2) / h
    if occlusion:
        s = int(rng.integers(18, 30))
        ox = int(rng.integers(0, w - s))
        oy = int(rng.integers(0, h - s))
        img[oy:oy + s, ox:ox + s] = rng.uniform(0.1, 0.9)
    if pixel_noise:
        img = img + rng.normal(0.0, pixel_noise, size=img.shape)
    return GrayImage(np.clip(img, 0.0, 1.0)), LandmarkSet(lm)


def make_corpus(n_subjects=10, expressions=EXPRESSIONS, seed=0, strength=(1.2, 1.8),
                subject_kw=None, **render_kw):
    """In-memory corpus: list of ``(subject_id, expression, GrayImage, LandmarkSet)``.

    Expression strength is drawn per image from the ``strength`` range
    (neutral has no field to scale). ``subject_kw`` goes to
    :func:`make_subject`, the rest to :func:`render_face`.
    """
    rng = np.random.default_rng(seed)
    subjects = [make_subject(f"s{k:02d}", rng, **(subject_kw or {})) for k in range(n_subjects)]
    out = []
    for subj in subjects:
        for expr in expressions:
            strength_k = rng.uniform(*strength)
            img, lm = render_face(subj, expr, rng, strength=strength_k, **render_kw)
            out.append((subj.name, expr, img, lm))
    return out


def write_corpus(directory, corpus) -> str:
    """Write images (PGM), landmark files and ``manifest.csv``; returns the manifest path."""
    os.makedirs(directory, exist_ok=True)
    records = []
    for sid, expr, img, lm in corpus:
        stem = f"{sid}_{expr}"
        ipath = os.path.join(directory, stem + ".pgm")
        lpath = os.path.join(directory, stem + ".txt")
        save_image(img, ipath)
        save_landmarks(lm, lpath)
        records.append(FaceRecord(sid, os.path.abspath(ipath), os.path.abspath(lpath), expr))
    mpath = os.path.join(directory, "manifest.csv")
    save_manifest(Manifest(records), mpath)
    return mpath


def as_manifest(corpus):
    """In-memory manifest plus a loader for :func:`pixalign.evaluation.run_experiment`."""
    table = {}
    records = []
    for sid, expr, img, lm in corpus:
        key = f"mem://{sid}_{expr}"
        table[key] = (img, lm)
        records.append(FaceRecord(sid, key, key, expr))

    def loader(rec):
        return table[rec.image_path]

    return Manifest(records), loader
