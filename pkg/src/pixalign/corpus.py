"""Image, landmark and manifest ingestion plus the eye-aligned baseline.

Images are held as ``float64`` arrays of shape ``(height, width)`` with
values in ``[0, 1]``. Landmarks follow the 68-point iBUG layout: 0-16 jaw
outline, 17-26 brows, 27-35 nose, 36-41 and 42-47 the eyes (image-left
first), 48-67 the lips.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (CorruptImage, DegenerateEyes, DuplicateRecord, EmptyManifest,
                     MalformedLine, UnsupportedFormat, WrongPointCount)

N_LANDMARKS = 68
LAYOUT_IBUG68 = "ibug68"
OUTLINE = slice(0, 17)
EYE_A = slice(36, 42)
EYE_B = slice(42, 48)

DEFAULT_GRID = (140, 120)
DEFAULT_EYES = ((35.0, 55.0), (85.0, 55.0))

MANIFEST_HEADER = ["subject_id", "image_path", "landmark_path", "expression_tag"]


@dataclass(frozen=True)
class GrayImage:
    """Grayscale image, intensities in [0, 1], indexed ``pixels[y, x]``."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"image must be a non-empty 2-D grid, got shape {px.shape}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("intensities must be finite and lie in [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def intensities(self) -> np.ndarray:
        """Row-major flattened intensities."""
        return self.pixels.ravel()


@dataclass(frozen=True)
class LandmarkSet:
    points: np.ndarray
    layout: str = LAYOUT_IBUG68

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"landmarks must have shape (68, 2), got {pts.shape}")
        if pts.shape[0] != N_LANDMARKS:
            raise WrongPointCount(pts.shape[0])
        if not np.all(np.isfinite(pts)):
            raise ValueError("landmark coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def eye_centers(self):
        """Means of the two 6-point eye contours, image-left eye first."""
        return self.points[EYE_A].mean(axis=0), self.points[EYE_B].mean(axis=0)

    def outline_is_simple(self) -> bool:
        """True if the closed jaw outline (points 0-16) does not self-intersect."""
        return _polygon_is_simple(self.points[OUTLINE])


@dataclass(frozen=True)
class FaceRecord:
    subject_id: str
    image_path: str
    landmark_path: str
    expression_tag: Optional[str] = None

    def __post_init__(self):
        if not self.subject_id:
            raise ValueError("subject_id must be non-empty")


@dataclass(frozen=True)
class Manifest:
    records: tuple
    shuffle_seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))

    def __len__(self):
        return len(self.records)

    @property
    def subjects(self):
        """Subject ids in order of first appearance."""
        return list(dict.fromkeys(r.subject_id for r in self.records))

    def filter(self, expression_tag=None) -> "Manifest":
        return replace(self, records=[r for r in self.records if r.expression_tag == expression_tag])


# --------------------------------------------------------------------------
# images

def _read_pgm(data: bytes) -> np.ndarray:
    # header: magic, width, height, maxval, each separated by whitespace;
    # '#' comments run to end of line
    tokens = []
    pos = 2
    n = len(data)
    while len(tokens) < 3:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= n:
            raise CorruptImage("truncated PGM header")
        if data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        tok = data[start:pos]
        if not tok.isdigit():
            raise CorruptImage(f"bad PGM header token {tok!r}")
        tokens.append(int(tok))
    if pos >= n:
        raise CorruptImage("truncated PGM header")
    pos += 1  # the single whitespace byte before the raster
    width, height, maxval = tokens
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise CorruptImage(f"bad PGM dimensions {width}x{height} maxval {maxval}")
    if maxval > 255:
        raise UnsupportedFormat("only 8-bit PGM is supported")
    raster = data[pos:pos + width * height]
    if len(raster) != width * height:
        raise CorruptImage(f"PGM raster truncated: {len(raster)} of {width * height} bytes")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width).astype(np.float64)
    if maxval != 255:
        arr = np.minimum(arr, maxval) * (255.0 / maxval)
    return arr / 255.0


def _read_png(data: bytes) -> np.ndarray:
    try:
        im = Image.open(io.BytesIO(data))
        im.load()
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise CorruptImage(f"cannot decode PNG: {exc}") from exc
    if im.mode in ("I", "I;16", "I;16B", "F"):
        raise UnsupportedFormat(f"only 8-bit images are supported, got mode {im.mode}")
    if im.mode != "L":
        im = im.convert("L")
    return np.asarray(im, dtype=np.float64) / 255.0


def load_image(path) -> GrayImage:
    """Read an 8-bit binary PGM (P5) or PNG into a :class:`GrayImage`.

    Colour PNGs are reduced to luma. Raises ``FileNotFoundError``,
    :class:`UnsupportedFormat` or :class:`CorruptImage`.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] == b"P5":
        arr = _read_pgm(data)
    elif data[:8] == b"\x89PNG\r\n\x1a\n":
        arr = _read_png(data)
    elif len(data) < 2:
        raise CorruptImage(f"{path}: file too short")
    else:
        raise UnsupportedFormat(f"{path}: not a binary PGM or PNG file")
    return GrayImage(arr)


def save_image(img, path) -> None:
    """Write ``img`` as PGM (``.pgm``) or PNG (anything else), quantised to 8 bits."""
    px = img.pixels if isinstance(img, GrayImage) else np.asarray(img, dtype=np.float64)
    q = np.clip(np.rint(px * 255.0), 0, 255).astype(np.uint8)
    path = os.fspath(path)
    if path.lower().endswith(".pgm"):
        h, w = q.shape
        with open(path, "wb") as fh:
            fh.write(b"P5\n%d %d\n255\n" % (w, h))
            fh.write(q.tobytes())
    else:
        Image.fromarray(q, mode="L").save(path, format="PNG")


def sample_bilinear(pixels, x, y, fill=0.0):
    """Bilinearly sample ``pixels[y, x]`` at real coordinates.

    Points more than half a pixel outside the image get ``fill``; points
    within that margin are clamped onto the border. Integer coordinates
    return the stored value exactly.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    h, w = pixels.shape
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    inside = (x >= -0.5) & (x <= w - 0.5) & (y >= -0.5) & (y <= h - 0.5)
    xc = np.clip(x, 0.0, w - 1.0)
    yc = np.clip(y, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(xc).astype(np.intp), w - 1)
    y0 = np.minimum(np.floor(yc).astype(np.intp), h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0
    top = pixels[y0, x0] * (1.0 - fx) + pixels[y0, x1] * fx
    bot = pixels[y1, x0] * (1.0 - fx) + pixels[y1, x1] * fx
    out = top * (1.0 - fy) + bot * fy
    return np.where(inside, out, fill)


# --------------------------------------------------------------------------
# landmarks

def parse_landmarks(text: str, path=None) -> LandmarkSet:
    pts = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line in ("{", "}") or line.startswith("#"):
            continue
        head = line.split(":", 1)[0].strip().lower()
        if head in ("version", "n_points"):
            continue
        parts = line.split()
        try:
            if len(parts) != 2:
                raise ValueError
            x, y = float(parts[0]), float(parts[1])
        except ValueError:
            raise MalformedLine(lineno, raw, path) from None
        if not (np.isfinite(x) and np.isfinite(y)):
            raise MalformedLine(lineno, raw, path)
        pts.append((x, y))
    if len(pts) != N_LANDMARKS:
        raise WrongPointCount(len(pts), path)
    return LandmarkSet(np.array(pts))


def load_landmarks(path) -> LandmarkSet:
    """Read 68 whitespace-separated ``x y`` pairs, one per line.

    ``.pts`` style ``version:``/``n_points:`` headers and braces are skipped.
    """
    path = os.fspath(path)
    with open(path, "r", encoding="utf-8") as fh:
        return parse_landmarks(fh.read(), path)


def format_landmarks(lm) -> str:
    pts = lm.points if isinstance(lm, LandmarkSet) else np.asarray(lm)
    return "".join(f"{x!r} {y!r}\n" for x, y in pts.tolist())


def save_landmarks(lm, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_landmarks(lm))


# --------------------------------------------------------------------------
# eye alignment

@dataclass(frozen=True)
class Similarity:
    """``z -> scale * z + shift`` on complex coordinates ``x + iy``."""

    scale: complex
    shift: complex

    def apply(self, pts):
        pts = np.asarray(pts, dtype=np.float64)
        z = self.scale * (pts[..., 0] + 1j * pts[..., 1]) + self.shift
        return np.stack([z.real, z.imag], axis=-1)

    def inverse(self) -> "Similarity":
        return Similarity(1.0 / self.scale, -self.shift / self.scale)


def eye_similarity(lm: LandmarkSet, target_eyes=DEFAULT_EYES) -> Similarity:
    """Rotation, isotropic scale and shift taking the eye centres onto ``target_eyes``."""
    a, b = lm.eye_centers()
    pa = complex(a[0], a[1])
    pb = complex(b[0], b[1])
    (ta, tb) = [complex(float(t[0]), float(t[1])) for t in target_eyes]
    if abs(pb - pa) < 1e-9:
        raise DegenerateEyes(f"eye centres coincide at ({a[0]:.3f}, {a[1]:.3f})")
    if abs(tb - ta) < 1e-9:
        raise DegenerateEyes("target eye positions coincide")
    scale = (tb - ta) / (pb - pa)
    return Similarity(scale, ta - scale * pa)


def eye_align(img: GrayImage, lm: LandmarkSet, target_eyes=DEFAULT_EYES, out_size=DEFAULT_GRID):
    """Register a face by its eyes: similarity transform plus bilinear resampling.

    Returns the ``out_size = (w, h)`` image and the transformed landmarks.
    Output pixels whose pre-image falls outside the source are 0.
    """
    sim = eye_similarity(lm, target_eyes)
    w, h = out_size
    vv, uu = np.mgrid[0:h, 0:w].astype(np.float64)
    src = sim.inverse().apply(np.stack([uu, vv], axis=-1))
    out = sample_bilinear(img.pixels, src[..., 0], src[..., 1], fill=0.0)
    return GrayImage(np.clip(out, 0.0, 1.0)), LandmarkSet(sim.apply(lm.points), lm.layout)


# --------------------------------------------------------------------------
# manifests

def load_manifest(path) -> Manifest:
    """Parse a ``subject_id,image_path,landmark_path,expression_tag`` CSV.

    Relative paths are resolved against the manifest's directory.
    """
    path = os.fspath(path)
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise EmptyManifest(f"{path}: empty manifest")
    if [c.strip() for c in rows[0]] != MANIFEST_HEADER:
        raise ValueError(f"{path}: header must be {','.join(MANIFEST_HEADER)}")
    records = []
    seen = set()
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 4:
            raise ValueError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
        sid, img, lmk, tag = (c.strip() for c in row)
        img = os.path.normpath(os.path.join(base, img))
        lmk = os.path.normpath(os.path.join(base, lmk))
        if img in seen:
            raise DuplicateRecord(f"{path}:{lineno}: image {img} listed twice")
        seen.add(img)
        records.append(FaceRecord(sid, img, lmk, tag or None))
    if not records:
        raise EmptyManifest(f"{path}: no records")
    return Manifest(records)


def save_manifest(manifest: Manifest, path, relative_to=None) -> None:
    base = relative_to or os.path.dirname(os.path.abspath(path))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(MANIFEST_HEADER)
        for r in manifest.records:
            wr.writerow([r.subject_id, os.path.relpath(r.image_path, base),
                         os.path.relpath(r.landmark_path, base), r.expression_tag or ""])


def shuffle(manifest: Manifest, seed: int) -> Manifest:
    """Seeded permutation of the records; the same seed gives the same order."""
    perm = np.random.default_rng(seed).permutation(len(manifest.records))
    return Manifest([manifest.records[i] for i in perm], shuffle_seed=seed)


def load_face(record: FaceRecord):
    return load_image(record.image_path), load_landmarks(record.landmark_path)


# --------------------------------------------------------------------------

def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    def on_seg(a, b, c):
        return (min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
                and min(a[1], b[1]) <= c[1] <= max(a[1], b[1]))

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and 0 not in (d1, d2, d3, d4):
        return True
    return ((d1 == 0 and on_seg(q1, q2, p1)) or (d2 == 0 and on_seg(q1, q2, p2))
            or (d3 == 0 and on_seg(p1, p2, q1)) or (d4 == 0 and on_seg(p1, p2, q2)))


def _polygon_is_simple(poly) -> bool:
    n = len(poly)
    area2 = np.sum(poly[:, 0] * np.roll(poly[:, 1], -1) - np.roll(poly[:, 0], -1) * poly[:, 1])
    if abs(area2) < 1e-12:
        return False
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_cross(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]):
                return False
    return True
