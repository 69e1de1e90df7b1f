"""Random square patch layout shared by all faces, and per-patch features."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import GridMismatch, IndexOutOfRange, PatchTooLarge

CHANNELS = ("I", "dx", "dy")


@dataclass(frozen=True)
class PatchLayout:
    """``patches`` is an ``(n, 3)`` int array of ``(x0, y0, size)`` rows."""

    patches: np.ndarray
    grid: tuple
    seed: int = 0

    def __post_init__(self):
        p = np.array(self.patches, dtype=np.int64).reshape(-1, 3)
        w, h = (int(v) for v in self.grid)
        if len(p) == 0:
            raise ValueError("layout needs at least one patch")
        if (p[:, 2] <= 0).any():
            raise ValueError("patch sizes must be positive")
        if ((p[:, 0] < 0) | (p[:, 1] < 0) | (p[:, 0] + p[:, 2] > w) | (p[:, 1] + p[:, 2] > h)).any():
            raise PatchTooLarge(f"a patch extends beyond the {w}x{h} grid")
        p.setflags(write=False)
        object.__setattr__(self, "patches", p)
        object.__setattr__(self, "grid", (w, h))

    def __len__(self):
        return len(self.patches)

    def window(self, p):
        if not 0 <= p < len(self.patches):
            raise IndexOutOfRange(f"patch {p} out of range for {len(self.patches)} patches")
        x0, y0, s = (int(v) for v in self.patches[p])
        return slice(y0, y0 + s), slice(x0, x0 + s)

    def to_text(self) -> str:
        w, h = self.grid
        lines = [f"grid {w} {h} {self.seed}"]
        lines += [f"{x0} {y0} {s}" for x0, y0, s in self.patches.tolist()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text) -> "PatchLayout":
        lines = [ln.split() for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0][0] != "grid" or len(lines[0]) != 4:
            raise ValueError("layout text must start with 'grid W H SEED'")
        _, w, h, seed = lines[0]
        rows = []
        for k, ln in enumerate(lines[1:], start=2):
            if len(ln) != 3:
                raise ValueError(f"layout line {k}: expected 'x0 y0 size'")
            rows.append([int(v) for v in ln])
        return cls(np.array(rows), (int(w), int(h)), int(seed))

    def digest(self) -> bytes:
        return hashlib.sha256(self.to_text().encode("ascii")).digest()


def generate_layout(grid, count=80, size=30, seed=0) -> PatchLayout:
    """``count`` square ``size`` patches with top-left corners uniform over the grid.

    Duplicates and overlaps are allowed.
    """
    w, h = grid
    if count < 1:
        raise ValueError("count must be >= 1")
    if size < 1 or size > min(w, h):
        raise PatchTooLarge(f"patch size {size} does not fit the {w}x{h} grid")
    rng = np.random.default_rng(seed)
    x0 = rng.integers(0, w - size, size=count, endpoint=True)
    y0 = rng.integers(0, h - size, size=count, endpoint=True)
    return PatchLayout(np.c_[x0, y0, np.full(count, size)], (w, h), seed)


def whole_face_layout(grid) -> PatchLayout:
    """One centred square patch as large as the grid allows."""
    w, h = grid
    s = min(w, h)
    return PatchLayout(np.array([[(w - s) // 2, (h - s) // 2, s]]), (w, h), 0)


def save_layout(layout: PatchLayout, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(layout.to_text())


def load_layout(path) -> PatchLayout:
    with open(path, "r", encoding="ascii") as fh:
        return PatchLayout.from_text(fh.read())


@dataclass(frozen=True)
class PatchFeatures:
    f_I: np.ndarray
    f_dx: np.ndarray
    f_dy: np.ndarray
    patch_index: int

    def channel(self, name):
        return {"I": self.f_I, "dx": self.f_dx, "dy": self.f_dy}[name]


def _check_grid(face, layout):
    if tuple(face.grid) != tuple(layout.grid):
        raise GridMismatch(f"face grid {face.grid} does not match layout grid {layout.grid}")


def extract_features(face, layout: PatchLayout, p: int) -> PatchFeatures:
    """Row-major flattening of patch ``p`` over the I', dx and dy channels.

    Masked pixels contribute their stored value (0) so every face yields
    vectors of the same length.
    """
    _check_grid(face, layout)
    rows, cols = layout.window(p)
    vecs = [np.array(face.channel(ch)[rows, cols], dtype=np.float64).ravel() for ch in CHANNELS]
    return PatchFeatures(*vecs, patch_index=p)


def feature_matrix(faces, layout: PatchLayout, p: int, channel: str) -> np.ndarray:
    """Stacked features of one patch/channel for many faces, shape ``(n, size**2)``."""
    rows, cols = layout.window(p)
    out = []
    for f in faces:
        _check_grid(f, layout)
        out.append(np.asarray(f.channel(channel)[rows, cols], dtype=np.float64).ravel())
    return np.stack(out)
