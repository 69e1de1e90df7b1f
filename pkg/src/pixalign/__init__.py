"""Pixel-aligned face verification.

Faces are warped piecewise-affinely onto a reference landmark contour, so
every grid pixel shows the same facial location. Intensity and the warp's
local geometry (``dx``, ``dy``) are then matched patch by patch in Fisher
discriminant subspaces and the cosine scores fused.
"""

__version__ = "0.1.0"

from .corpus import (DEFAULT_EYES, DEFAULT_GRID, FaceRecord, GrayImage, LandmarkSet, Manifest,
                     eye_align, load_face, load_image, load_landmarks, load_manifest, save_image,
                     save_landmarks, save_manifest)
from .errors import FarUnreachable, PixAlignError
from .evaluation import (RocCurve, make_folds, roc, roc_from_scores, run_experiment, vr_at_far,
                         write_experiment)
from .fisher import (DiscriminativeModel, DiscriminativeSubspace, fit_subspace, load_model, project,
                     save_model, scatter_matrices, train_model)
from .fusion import FusionConfig, ScoreMatrix, cosine, pair_score, score_all
from .patches import PatchLayout, extract_features, generate_layout, whole_face_layout
from .pipeline import ExperimentConfig, prepare_face, reference_from_neutrals
from .warp import (AlignedFace, ReferenceContour, affine_fit, compute_reference_contour,
                   extract_geometry_maps, forward_coordinate_map, load_aligned_face, load_reference,
                   reconstruct_maps, sample_maps, save_aligned_face, save_reference, triangulate,
                   warp_to_grid)
