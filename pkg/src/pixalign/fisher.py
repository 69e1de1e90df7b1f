"""Fisherface discriminant subspaces, one per (patch, channel).

Each subspace is PCA down to at most ``N - C`` dimensions followed by Fisher
LDA in the PCA space. The LDA step solves ``S_b v = lambda S_w v`` by
whitening the within-class scatter, which gives the leading eigenvectors of
``inv(S_w) S_b`` while keeping every matrix symmetric.
"""

from __future__ import annotations

import json
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (DimensionMismatch, GridMismatch, InsufficientClasses, NumericalFailure,
                     SingleClass, TooFewSamples, ZeroDiscriminant)
from .patches import CHANNELS, PatchLayout

DEFAULT_RIDGE = 1e-6


def _as_labels(labels, n):
    y = np.asarray(labels)
    if y.ndim != 1 or len(y) != n:
        raise DimensionMismatch(f"got {len(y)} labels for {n} samples")
    return y


def scatter_matrices(X, labels):
    """Within- and between-class scatter ``(S_w, S_b)``.

    ``S_b`` weighs each class by its size and measures class means against
    the mean of the class means (not the pooled sample mean).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatch("samples must form an (n, d) matrix")
    y = _as_labels(labels, len(X))
    classes = np.unique(y)
    if len(classes) < 2:
        raise SingleClass("need at least two classes")
    d = X.shape[1]
    means = np.stack([X[y == c].mean(axis=0) for c in classes])
    mu = means.mean(axis=0)
    Sw = np.zeros((d, d))
    Sb = np.zeros((d, d))
    for c, m in zip(classes, means):
        D = X[y == c] - m
        Sw += D.T @ D
        g = (m - mu)[:, None]
        Sb += np.count_nonzero(y == c) * (g @ g.T)
    # exact symmetry; the products above are symmetric up to rounding only
    return 0.5 * (Sw + Sw.T), 0.5 * (Sb + Sb.T)


@dataclass(frozen=True)
class DiscriminativeSubspace:
    mean: np.ndarray        # (d,)
    pca_basis: np.ndarray   # (d, q), orthonormal columns
    lda_basis: np.ndarray   # (q, r), unit columns
    eigenvalues: np.ndarray  # (r,), descending

    @property
    def d(self):
        return self.pca_basis.shape[0]

    @property
    def q(self):
        return self.pca_basis.shape[1]

    @property
    def r(self):
        return self.lda_basis.shape[1]

    @property
    def directions(self):
        """Discriminant directions in feature space, ``(d, r)``."""
        return self.pca_basis @ self.lda_basis


def fit_subspace(X, labels, ridge=DEFAULT_RIDGE) -> DiscriminativeSubspace:
    """Fisherface: PCA to ``q = min(d, N - C)`` then LDA to ``r <= C - 1``.

    ``ridge`` adds ``ridge * trace(S_w) / q`` to the diagonal of the
    within-class scatter before the eigen-solve; 0 disables it.
    Directions come out in descending eigenvalue order, unit length, signed
    so their largest-magnitude coefficient is positive.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatch("samples must form an (n, d) matrix")
    n, d = X.shape
    y = _as_labels(labels, n)
    classes = np.unique(y)
    C = len(classes)
    if C < 2:
        raise SingleClass("need at least two classes")
    if n < C + 1:
        raise TooFewSamples(f"{n} samples for {C} classes; need at least {C + 1}")
    if not np.all(np.isfinite(X)):
        raise NumericalFailure("non-finite feature values")

    mean = X.mean(axis=0)
    Xc = X - mean
    _, sv, Vt = np.linalg.svd(Xc, full_matrices=False)
    tol = max(n, d) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
    rank = int(np.count_nonzero(sv > tol))
    q = min(d, n - C, rank)
    if q == 0:
        raise ZeroDiscriminant("samples are all identical")
    P = _fix_signs(Vt[:q].T)
    Z = Xc @ P

    Sw, Sb = scatter_matrices(Z, y)
    tw, tb = np.trace(Sw), np.trace(Sb)
    if tb <= 1e-12 * (tw + tb) or tb == 0.0:
        raise ZeroDiscriminant("class means coincide")
    if ridge:
        Sw = Sw + (ridge * tw / q) * np.eye(q)
    ew, Uw = np.linalg.eigh(Sw)
    if not np.all(np.isfinite(ew)) or ew[0] <= 1e-12 * max(ew[-1], 1e-300):
        raise NumericalFailure("within-class scatter is singular")
    W = Uw / np.sqrt(ew)
    M = W.T @ Sb @ W
    lam, Y = np.linalg.eigh(0.5 * (M + M.T))
    lam, Y = lam[::-1], Y[:, ::-1]
    if not np.all(np.isfinite(lam)):
        raise NumericalFailure("non-finite generalized eigenvalues")
    if lam[0] <= 0:
        raise ZeroDiscriminant("no positive discriminant eigenvalue")
    r = min(C - 1, int(np.count_nonzero(lam > 1e-10 * lam[0])))
    V = W @ Y[:, :r]
    V /= np.linalg.norm(V, axis=0)
    full = P @ V
    pivot = np.abs(full).argmax(axis=0)
    V *= np.where(full[pivot, np.arange(r)] < 0, -1.0, 1.0)
    if not np.all(np.isfinite(V)):
        raise NumericalFailure("non-finite discriminant directions")
    return DiscriminativeSubspace(mean, P, V, lam[:r].copy())


def _fix_signs(B):
    pivot = np.abs(B).argmax(axis=0)
    return B * np.where(B[pivot, np.arange(B.shape[1])] < 0, -1.0, 1.0)


def project(sub: DiscriminativeSubspace, v):
    """``lda_basis.T @ pca_basis.T @ (v - mean)``; accepts one vector or rows."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != sub.d:
        raise DimensionMismatch(f"vector has dimension {v.shape[-1]}, subspace expects {sub.d}")
    return ((v - sub.mean) @ sub.pca_basis) @ sub.lda_basis


# --------------------------------------------------------------------------
# whole model

@dataclass
class DiscriminativeModel:
    """Trained subspaces keyed by ``(patch_index, channel)``.

    A value of ``None`` marks an inert pair whose training degenerated; it
    contributes nothing to fused scores. ``inert`` records why.
    """

    layout: PatchLayout
    channels: tuple
    subspaces: dict
    inert: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def grid(self):
        return self.layout.grid

    def __len__(self):
        return len(self.subspaces)


def _n_jobs():
    try:
        return max(1, int(os.environ.get("PIXALIGN_THREADS", "1")))
    except ValueError:
        return 1


def train_model(faces, labels, layout: PatchLayout, channels=CHANNELS, ridge=DEFAULT_RIDGE,
                config=None, n_jobs=None) -> DiscriminativeModel:
    """Fit one subspace per patch and channel.

    Degenerate pairs (e.g. a patch lying entirely in the masked background)
    are marked inert instead of aborting. ``n_jobs`` defaults to the
    ``PIXALIGN_THREADS`` environment variable.
    """
    faces = list(faces)
    y = _as_labels(labels, len(faces))
    if len(np.unique(y)) < 2:
        raise InsufficientClasses(f"need at least two subjects, got {len(np.unique(y))}")
    for f in faces:
        if tuple(f.grid) != tuple(layout.grid):
            raise GridMismatch(f"face grid {f.grid} does not match layout grid {layout.grid}")
    stacks = {ch: np.stack([np.asarray(f.channel(ch), dtype=np.float64) for f in faces])
              for ch in channels}

    keys = [(p, ch) for p in range(len(layout)) for ch in channels]

    def fit_one(key):
        p, ch = key
        rows, cols = layout.window(p)
        X = stacks[ch][:, rows, cols].reshape(len(faces), -1)
        try:
            return key, fit_subspace(X, y, ridge), None
        except NumericalFailure as exc:
            return key, None, f"{type(exc).__name__}: {exc}"

    jobs = n_jobs or _n_jobs()
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(fit_one, keys))
    else:
        results = [fit_one(k) for k in keys]
    subspaces = {k: s for k, s, _ in results}
    inert = {k: why for k, _, why in results if why is not None}
    cfg = {"ridge": ridge}
    cfg.update(config or {})
    return DiscriminativeModel(layout, tuple(channels), subspaces, inert, cfg)


# --------------------------------------------------------------------------
# persistence

MODEL_MAGIC = b"PXALMODL"
MODEL_VERSION = 1


def _put_blob(fh, data: bytes):
    fh.write(struct.pack("<I", len(data)))
    fh.write(data)


def _get_blob(buf, off):
    (n,) = struct.unpack_from("<I", buf, off)
    off += 4
    return bytes(buf[off:off + n]), off + n


def save_model(model: DiscriminativeModel, path) -> None:
    """Binary container: 16-byte header, grid, layout hash, channel list,
    embedded layout text, JSON config, then one record per subspace
    (patch, channel, inert flag, d, q, r, mean, bases, eigenvalues)."""
    w, h = model.grid
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC + struct.pack("<II", MODEL_VERSION, 0))
        fh.write(struct.pack("<II", w, h))
        fh.write(model.layout.digest())
        _put_blob(fh, ",".join(model.channels).encode("ascii"))
        _put_blob(fh, model.layout.to_text().encode("ascii"))
        _put_blob(fh, json.dumps(model.config, sort_keys=True).encode("utf-8"))
        keys = sorted(model.subspaces, key=lambda k: (k[0], model.channels.index(k[1])))
        fh.write(struct.pack("<I", len(keys)))
        for p, ch in keys:
            sub = model.subspaces[(p, ch)]
            ci = model.channels.index(ch)
            if sub is None:
                fh.write(struct.pack("<IBBIII", p, ci, 1, 0, 0, 0))
                _put_blob(fh, model.inert.get((p, ch), "").encode("utf-8"))
                continue
            fh.write(struct.pack("<IBBIII", p, ci, 0, sub.d, sub.q, sub.r))
            for arr in (sub.mean, sub.pca_basis, sub.lda_basis, sub.eigenvalues):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path) -> DiscriminativeModel:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != MODEL_MAGIC:
        raise ValueError(f"{path}: not a model file")
    version, _ = struct.unpack_from("<II", buf, 8)
    if version != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {version}")
    w, h = struct.unpack_from("<II", buf, 16)
    digest = buf[24:56]
    off = 56
    chans, off = _get_blob(buf, off)
    layout_txt, off = _get_blob(buf, off)
    cfg, off = _get_blob(buf, off)
    layout = PatchLayout.from_text(layout_txt.decode("ascii"))
    if layout.digest() != digest or tuple(layout.grid) != (w, h):
        raise ValueError(f"{path}: layout hash mismatch")
    channels = tuple(chans.decode("ascii").split(","))
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    rec = struct.Struct("<IBBIII")
    subspaces, inert = {}, {}
    for _ in range(count):
        p, ci, is_inert, d, q, r = rec.unpack_from(buf, off)
        off += rec.size
        key = (p, channels[ci])
        if is_inert:
            why, off = _get_blob(buf, off)
            subspaces[key] = None
            inert[key] = why.decode("utf-8")
            continue
        arrays = []
        for shape in ((d,), (d, q), (q, r), (r,)):
            n = int(np.prod(shape))
            arrays.append(np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(shape).copy())
            off += 8 * n
        subspaces[key] = DiscriminativeSubspace(*arrays)
    if off != len(buf):
        raise ValueError(f"{path}: trailing bytes in model file")
    return DiscriminativeModel(layout, channels, subspaces, inert, json.loads(cfg.decode("utf-8")))
