"""Turning raw (image, landmarks) pairs into grid-aligned faces per mode."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import DEFAULT_EYES, DEFAULT_GRID, GrayImage, LandmarkSet, eye_similarity, eye_align
from .patches import CHANNELS, PatchLayout, generate_layout, whole_face_layout
from .warp import AlignedFace, ReferenceContour, compute_reference_contour, warp_to_grid

MODES = ("pixel_aligned", "eye_aligned", "whole_face")


@dataclass(frozen=True)
class ExperimentConfig:
    """Knobs of one verification experiment.

    ``pixel_aligned`` warps every face onto the reference contour and uses
    the intensity and both geometry channels; ``eye_aligned`` only registers
    the eyes and uses intensity alone; ``whole_face`` is ``pixel_aligned``
    with a single grid-sized patch.
    """

    mode: str = "pixel_aligned"
    folds: int = 5
    patch_count: int = 80
    patch_size: int = 30
    w: float = 0.2
    grid: tuple = DEFAULT_GRID
    seed: int = 0
    far_targets: tuple = (0.001, 0.1)
    ridge: float = 1e-6
    eye_targets: tuple = DEFAULT_EYES
    neutral_tag: str = "neutral"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.folds < 2:
            raise ValueError("need at least 2 folds")
        if self.w < 0 or not np.isfinite(self.w):
            raise ValueError("geometry weight must be finite and >= 0")
        object.__setattr__(self, "grid", tuple(int(v) for v in self.grid))
        object.__setattr__(self, "far_targets", tuple(float(f) for f in self.far_targets))

    @property
    def channels(self):
        return ("I",) if self.mode == "eye_aligned" else CHANNELS

    def layout(self) -> PatchLayout:
        if self.mode == "whole_face":
            return whole_face_layout(self.grid)
        return generate_layout(self.grid, self.patch_count, self.patch_size, self.seed)


def registered_landmarks(lm: LandmarkSet, eye_targets=DEFAULT_EYES) -> LandmarkSet:
    """Landmarks moved by the eye-alignment similarity (no image resampling)."""
    sim = eye_similarity(lm, eye_targets)
    return LandmarkSet(sim.apply(lm.points), lm.layout)


def reference_from_neutrals(landmark_sets, grid=DEFAULT_GRID, eye_targets=DEFAULT_EYES) -> ReferenceContour:
    """Eye-register neutral landmark sets onto the grid and average them."""
    return compute_reference_contour([registered_landmarks(lm, eye_targets) for lm in landmark_sets], grid)


def eye_aligned_face(img: GrayImage, lm: LandmarkSet, grid=DEFAULT_GRID, eye_targets=DEFAULT_EYES) -> AlignedFace:
    """Eye-aligned image wrapped as an intensity-only :class:`AlignedFace`."""
    out, _ = eye_align(img, lm, eye_targets, grid)
    w, h = grid
    vv, uu = np.mgrid[0:h, 0:w].astype(np.float64)
    return AlignedFace(out.pixels.copy(), uu, vv, np.ones((h, w), dtype=bool))


def prepare_face(img, lm, cfg: ExperimentConfig, ref: ReferenceContour = None) -> AlignedFace:
    if cfg.mode == "eye_aligned":
        return eye_aligned_face(img, lm, cfg.grid, cfg.eye_targets)
    if ref is None:
        raise ValueError(f"mode {cfg.mode} needs a reference contour")
    return warp_to_grid(img, lm, ref, cfg.grid)
