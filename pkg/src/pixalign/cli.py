"""Command-line entry point: ``pixalign {reference,warp,train,score,eval}``.

Exit codes: 0 success, 2 usage or validation error, 3 data or processing
error. Outputs are written to temporary files next to their destination and
renamed into place only once complete.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import shutil
import sys
import tempfile
import warnings

import numpy as np

from . import __version__
from .corpus import DEFAULT_EYES, DEFAULT_GRID, load_face, load_image, load_landmarks, load_manifest
from .errors import PixAlignError
from .evaluation import plot_rocs, run_experiment, write_experiment
from .fisher import DEFAULT_RIDGE, load_model, save_model, train_model
from .fusion import DEFAULT_W, FusionConfig, score_all, write_score_csv
from .patches import generate_layout, whole_face_layout
from .pipeline import MODES, ExperimentConfig, prepare_face, reference_from_neutrals
from .warp import ReferenceContour, export_previews, load_reference, save_aligned_face, save_reference, warp_to_grid

log = logging.getLogger("pixalign")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 2, 3


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# argument types

def grid_arg(text):
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    if w < 2 or h < 2:
        raise argparse.ArgumentTypeError("grid sides must be >= 2")
    return (w, h)


def positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def fold_count(text):
    v = positive_int(text)
    if v < 2:
        raise argparse.ArgumentTypeError(f"need at least 2 folds, got {v}")
    return v


def weight_arg(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not np.isfinite(v) or v < 0:
        raise argparse.ArgumentTypeError(f"weight must be finite and >= 0, got {v}")
    return v


def far_arg(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError(f"FAR target must be in (0, 1], got {v}")
    return v


# --------------------------------------------------------------------------
# atomic output

@contextlib.contextmanager
def atomic_path(path):
    """Yield a temporary sibling of ``path``; rename it over ``path`` on success."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    suffix = os.path.splitext(path)[1]
    fd, tmp = tempfile.mkstemp(prefix=".pixalign-", suffix=suffix, dir=d)
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


@contextlib.contextmanager
def atomic_files(paths):
    """Several outputs that appear together or not at all."""
    with contextlib.ExitStack() as stack:
        yield [stack.enter_context(_deferred(p)) for p in paths]


@contextlib.contextmanager
def _deferred(path):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".pixalign-", suffix=os.path.splitext(path)[1], dir=d)
    os.close(fd)
    ok = False
    try:
        yield tmp
        ok = True
    finally:
        if ok:
            os.replace(tmp, path)
        elif os.path.exists(tmp):
            os.unlink(tmp)


def _commit_dir(tmp_dir, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    for name in sorted(os.listdir(tmp_dir)):
        os.replace(os.path.join(tmp_dir, name), os.path.join(out_dir, name))
    shutil.rmtree(tmp_dir, ignore_errors=True)


# --------------------------------------------------------------------------
# subcommands

def cmd_reference(args):
    manifest = load_manifest(args.manifest)
    recs = [r for r in manifest.records if r.expression_tag == args.neutral_tag]
    if not recs:
        raise PixAlignError(f"no records tagged {args.neutral_tag!r} in {args.manifest}")
    ref = reference_from_neutrals([load_landmarks(r.landmark_path) for r in recs], args.grid)
    with atomic_path(args.out) as tmp:
        save_reference(ref, tmp)
    log.info("reference contour from %d faces written to %s", len(recs), args.out)


def cmd_warp(args):
    img = load_image(args.image)
    lm = load_landmarks(args.landmarks)
    ref = load_reference(args.reference)
    face = warp_to_grid(img, lm, ref)
    stem = args.out_prefix
    targets = [stem + ".paf", stem + "_intensity.png", stem + "_dx.png", stem + "_dy.png"]
    with atomic_files(targets) as tmps:
        save_aligned_face(face, tmps[0])
        scratch = tempfile.mkdtemp(dir=os.path.dirname(os.path.abspath(stem)))
        try:
            written = export_previews(face, os.path.join(scratch, "p"))
            for src, dst in zip(written, tmps[1:]):
                os.replace(src, dst)
        finally:
            shutil.rmtree(scratch, ignore_errors=True)
    log.info("warped face written to %s (%d masked source pixels)", targets[0], face.n_out_of_image)


def _faces_for(manifest, cfg: ExperimentConfig, ref):
    faces, subjects, ids = [], [], []
    for r in manifest.records:
        img, lm = load_face(r)
        faces.append(prepare_face(img, lm, cfg, ref))
        subjects.append(r.subject_id)
        ids.append(os.path.basename(r.image_path))
    return faces, subjects, ids


def cmd_train(args):
    if args.patch_size > min(args.grid):
        raise UsageError(f"--patch-size {args.patch_size} does not fit the {args.grid[0]}x{args.grid[1]} grid")
    ref = None
    if args.mode != "eye_aligned":
        if not args.reference:
            raise UsageError(f"--reference is required for mode {args.mode}")
        ref = load_reference(args.reference)
        if tuple(ref.grid) != tuple(args.grid):
            raise PixAlignError(f"reference grid {ref.grid} differs from --grid {args.grid}")
    cfg = ExperimentConfig(mode=args.mode, patch_count=args.patches, patch_size=args.patch_size,
                           grid=args.grid, seed=args.seed, ridge=args.ridge)
    manifest = load_manifest(args.manifest)
    faces, subjects, _ = _faces_for(manifest, cfg, ref)
    layout = (whole_face_layout(cfg.grid) if cfg.mode == "whole_face"
              else generate_layout(cfg.grid, cfg.patch_count, cfg.patch_size, cfg.seed))
    meta = {"mode": cfg.mode, "seed": cfg.seed, "eye_targets": [list(e) for e in cfg.eye_targets]}
    if ref is not None:
        meta["reference"] = ref.points.tolist()
        meta["reference_sources"] = ref.source_count
    model = train_model(faces, subjects, layout, cfg.channels, cfg.ridge, config=meta)
    with atomic_path(args.out) as tmp:
        save_model(model, tmp)
    log.info("model with %d subspaces (%d inert) written to %s", len(model), len(model.inert), args.out)


def cmd_score(args):
    model = load_model(args.model)
    meta = model.config
    mode = meta.get("mode", "pixel_aligned")
    ref = None
    if "reference" in meta:
        ref = ReferenceContour(np.array(meta["reference"]), model.grid, meta.get("reference_sources", 1))
    cfg = ExperimentConfig(mode=mode, grid=model.grid,
                           eye_targets=tuple(tuple(e) for e in meta.get("eye_targets", DEFAULT_EYES)))
    gallery = load_manifest(args.gallery_manifest)
    g_faces, g_subj, g_ids = _faces_for(gallery, cfg, ref)
    fusion = FusionConfig(args.w)
    if args.probe_manifest:
        probes = load_manifest(args.probe_manifest)
        p_faces, p_subj, p_ids = _faces_for(probes, cfg, ref)
        sm = score_all(model, g_faces, p_faces, fusion, g_subj, p_subj, g_ids, p_ids)
    else:
        sm = score_all(model, g_faces, None, fusion, g_subj, gallery_ids=g_ids, same_set=True)
    root, ext = os.path.splitext(args.out)
    mask_path = root + "_genuine" + (ext or ".csv")
    with atomic_files([args.out, mask_path]) as (tmp, tmp_mask):
        write_score_csv(sm, tmp, tmp_mask)
    log.info("%dx%d score matrix written to %s", len(g_faces), sm.scores.shape[1], args.out)


def cmd_eval(args):
    if args.patch_size > min(args.grid):
        raise UsageError(f"--patch-size {args.patch_size} does not fit the {args.grid[0]}x{args.grid[1]} grid")
    fars = tuple(args.far) if args.far else (0.001, 0.1)
    cfg = ExperimentConfig(mode=args.mode, folds=args.folds, patch_count=args.patches,
                           patch_size=args.patch_size, w=args.w, grid=args.grid, seed=args.seed,
                           far_targets=fars, ridge=args.ridge, neutral_tag=args.neutral_tag)
    manifest = load_manifest(args.manifest)
    ref = load_reference(args.reference) if args.reference else None
    result = run_experiment(cfg, manifest, ref)
    parent = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(parent, exist_ok=True)
    tmp_dir = tempfile.mkdtemp(prefix=".pixalign-", dir=parent)
    try:
        write_experiment(result, tmp_dir)
        if args.svg:
            plot_rocs({cfg.mode: result.pooled}, os.path.join(tmp_dir, "roc.svg"),
                      title=f"{cfg.mode}, {cfg.folds} folds")
        _commit_dir(tmp_dir, args.out)
    finally:
        shutil.rmtree(tmp_dir, ignore_errors=True)
    sys.stdout.write(result.report_text())


# --------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="pixalign", formatter_class=fmt,
                                description="Pixel-aligned face verification: warp, train, score, evaluate.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more log output (repeatable)")
    p.add_argument("-q", "--quiet", action="store_true", help="errors only")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", required=True)
    default_grid = f"{DEFAULT_GRID[0]}x{DEFAULT_GRID[1]}"

    s = sub.add_parser("reference", formatter_class=fmt,
                       help="average neutral landmarks into a reference contour")
    s.add_argument("--manifest", required=True, help="manifest CSV")
    s.add_argument("--neutral-tag", default="neutral", help="expression tag of neutral faces")
    s.add_argument("--grid", type=grid_arg, default=default_grid, help="aligned grid size WxH")
    s.add_argument("--out", required=True, help="reference contour file to write")
    s.set_defaults(func=cmd_reference)

    s = sub.add_parser("warp", formatter_class=fmt,
                       help="warp one face onto the reference grid and write previews")
    s.add_argument("--image", required=True, help="PGM or PNG face image")
    s.add_argument("--landmarks", required=True, help="68-point landmark file")
    s.add_argument("--reference", required=True, help="reference contour file")
    s.add_argument("--out-prefix", required=True,
                   help="writes PREFIX.paf plus PREFIX_{intensity,dx,dy}.png")
    s.set_defaults(func=cmd_warp)

    def model_opts(s):
        s.add_argument("--patches", type=positive_int, default=80, help="number of random patches")
        s.add_argument("--patch-size", type=positive_int, default=30, help="patch side in grid pixels")
        s.add_argument("--grid", type=grid_arg, default=default_grid, help="aligned grid size WxH")
        s.add_argument("--ridge", type=float, default=DEFAULT_RIDGE,
                       help="within-class scatter regulariser, relative to its mean eigenvalue")

    s = sub.add_parser("train", formatter_class=fmt, help="train the patch discriminant model")
    s.add_argument("--manifest", required=True, help="training manifest CSV")
    s.add_argument("--reference", help="reference contour file (not needed for eye_aligned)")
    s.add_argument("--mode", choices=MODES, default="pixel_aligned", help="alignment mode")
    model_opts(s)
    s.add_argument("--seed", type=int, default=0, help="patch layout seed")
    s.add_argument("--out", required=True, help="model file to write")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("score", formatter_class=fmt, help="score gallery faces against probes")
    s.add_argument("--model", required=True, help="model file from 'train'")
    s.add_argument("--gallery-manifest", required=True, help="gallery manifest CSV")
    s.add_argument("--probe-manifest", help="probe manifest CSV; omit to score the gallery against itself")
    s.add_argument("--w", type=weight_arg, default=DEFAULT_W, help="weight of the geometry channels")
    s.add_argument("--out", required=True, help="score CSV; the genuine mask goes to OUT_genuine.csv")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("eval", formatter_class=fmt, help="k-fold verification experiment with ROC output")
    s.add_argument("--manifest", required=True, help="manifest CSV")
    s.add_argument("--mode", choices=MODES, default="pixel_aligned", help="alignment mode")
    s.add_argument("--folds", type=fold_count, default=5, help="number of folds (>= 2)")
    s.add_argument("--far", type=far_arg, action="append",
                   help="FAR target, repeatable (default: 0.001 and 0.1)")
    s.add_argument("--seed", type=int, required=True, help="shuffle and patch layout seed")
    s.add_argument("--w", type=weight_arg, default=DEFAULT_W, help="weight of the geometry channels")
    s.add_argument("--reference", help="fixed reference contour; default builds one per fold")
    s.add_argument("--neutral-tag", default="neutral", help="expression tag of neutral faces")
    model_opts(s)
    s.add_argument("--svg", action="store_true", help="also write roc.svg (needs matplotlib)")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.ERROR if args.quiet else (logging.INFO if args.verbose == 1 else
                                              logging.DEBUG if args.verbose > 1 else logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s: %(message)s")
    logging.captureWarnings(True)
    warnings.simplefilter("default")
    try:
        args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"pixalign: error: {exc}\n")
        return EXIT_USAGE
    except (PixAlignError, OSError, ValueError) as exc:
        sys.stderr.write(f"pixalign: {type(exc).__name__}: {exc}\n")
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
