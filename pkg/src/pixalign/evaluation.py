"""Cross-validated verification experiments and ROC analysis."""

from __future__ import annotations

import csv
import io
import logging
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .corpus import Manifest, load_face, shuffle
from .errors import (EmptySet, FarUnreachable, NoGenuinePairs, NoImpostorPairs, PixAlignError,
                     TooFewImages, TooFewImagesWarning)
from .fisher import train_model
from .fusion import FusionConfig, ScoreMatrix, score_all
from .pipeline import ExperimentConfig, prepare_face, reference_from_neutrals

log = logging.getLogger(__name__)


class FoldFailed(PixAlignError):
    def __init__(self, fold, cause):
        self.fold = fold
        self.cause = cause
        super().__init__(f"fold {fold}: {type(cause).__name__}: {cause}")


# --------------------------------------------------------------------------
# folds

def make_folds(manifest: Manifest, k: int, seed=None):
    """Subject-stratified k-fold split.

    The manifest is shuffled with ``seed`` (when given). Subjects are then
    dealt round-robin into the k test folds, each subject continuing where
    the previous one stopped, so fold sizes stay balanced and a subject with
    ``n >= k`` images has ``n // k`` or more in every fold. Every subject
    stays in every training split. Subjects with a single image cannot be
    tested: they are kept in training only, with a warning.
    """
    if k < 2:
        raise ValueError("need at least 2 folds")
    if seed is not None:
        manifest = shuffle(manifest, seed)
    records = manifest.records
    if not records:
        raise EmptySet("empty manifest")
    by_subject = {}
    for i, r in enumerate(records):
        by_subject.setdefault(r.subject_id, []).append(i)
    fold_of = np.full(len(records), -1)
    singles = [s for s, idx in by_subject.items() if len(idx) < 2]
    if len(singles) == len(by_subject):
        raise TooFewImages("every subject has a single image; nothing can be tested")
    if singles:
        warnings.warn(f"{len(singles)} subject(s) with one image excluded from testing: "
                      f"{', '.join(singles[:5])}", TooFewImagesWarning, stacklevel=2)
    nxt = 0
    for s, idx in by_subject.items():
        if len(idx) < 2:
            continue
        for i in idx:
            fold_of[i] = nxt
            nxt = (nxt + 1) % k
    folds = []
    for f in range(k):
        test = [records[i] for i in range(len(records)) if fold_of[i] == f]
        train = [records[i] for i in range(len(records)) if fold_of[i] != f]
        folds.append((Manifest(train, manifest.shuffle_seed), Manifest(test, manifest.shuffle_seed)))
    return folds


# --------------------------------------------------------------------------
# ROC

@dataclass(frozen=True)
class RocCurve:
    """``points`` rows are ``(threshold, far, vr)`` with descending threshold."""

    points: np.ndarray
    n_genuine: int
    n_impostor: int

    @property
    def thresholds(self):
        return self.points[:, 0]

    @property
    def far(self):
        return self.points[:, 1]

    @property
    def vr(self):
        return self.points[:, 2]

    def at_threshold(self, t):
        """``(far, vr)`` when accepting scores ``>= t``."""
        idx = np.flatnonzero(self.thresholds >= t)
        if idx.size == 0:
            return 0.0, 0.0
        k = idx[-1]
        return float(self.far[k]), float(self.vr[k])

    def auc(self) -> float:
        far = np.r_[0.0, self.far]
        vr = np.r_[0.0, self.vr]
        return float(np.sum(np.diff(far) * (vr[1:] + vr[:-1]) / 2.0))


def roc_from_scores(genuine, impostor) -> RocCurve:
    """Threshold sweep over every distinct score; acceptance is ``score >= t``."""
    g = np.sort(np.asarray(genuine, dtype=np.float64).ravel())
    im = np.sort(np.asarray(impostor, dtype=np.float64).ravel())
    if g.size == 0:
        raise NoGenuinePairs("no genuine pairs to evaluate")
    if im.size == 0:
        raise NoImpostorPairs("no impostor pairs to evaluate")
    t = np.unique(np.r_[g, im])[::-1]
    vr = (g.size - np.searchsorted(g, t, side="left")) / g.size
    far = (im.size - np.searchsorted(im, t, side="left")) / im.size
    return RocCurve(np.c_[t, far, vr], int(g.size), int(im.size))


def roc(scores) -> RocCurve:
    if isinstance(scores, ScoreMatrix):
        return roc_from_scores(scores.genuine_scores(), scores.impostor_scores())
    genuine, impostor = scores
    return roc_from_scores(genuine, impostor)


def vr_at_far(curve: RocCurve, far_target: float) -> float:
    """Verification rate at the most permissive threshold whose FAR does not
    exceed ``far_target`` (step function, no interpolation).

    Raises :class:`FarUnreachable`, carrying that rate, when there are fewer
    than ``1 / far_target`` impostor pairs.
    """
    if not 0 < far_target <= 1:
        raise ValueError(f"far_target must be in (0, 1], got {far_target}")
    ok = curve.far <= far_target + 1e-12
    vr = float(curve.vr[ok].max()) if ok.any() else 0.0
    if curve.n_impostor * far_target < 1 - 1e-9:
        raise FarUnreachable(far_target, 1.0 / curve.n_impostor, vr)
    return vr


def write_roc_csv(curve: RocCurve, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["threshold", "far", "vr"])
        for t, f, v in curve.points.tolist():
            wr.writerow([repr(t), repr(f), repr(v)])


def read_roc_csv(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != ["threshold", "far", "vr"]:
        raise ValueError(f"{path}: unexpected header {rows[0]}")
    return np.array([[float(v) for v in r] for r in rows[1:]])


# --------------------------------------------------------------------------
# experiments

@dataclass
class ExperimentResult:
    config: ExperimentConfig
    fold_curves: list
    pooled: RocCurve
    rows: list                     # dicts: mode, far_target, vr, n_genuine, n_impostor, seed
    notes: list = field(default_factory=list)
    fold_scores: list = field(default_factory=list)

    def vr(self, far_target):
        for r in self.rows:
            if r["far_target"] == far_target:
                return r["vr"]
        return vr_at_far_lenient(self.pooled, far_target)[0]

    def report_text(self) -> str:
        cfg = self.config
        out = io.StringIO()
        out.write(f"mode: {cfg.mode}\nfolds: {cfg.folds}  seed: {cfg.seed}\n")
        if cfg.mode != "eye_aligned":
            out.write(f"w: {cfg.w}\n")
        if cfg.mode == "whole_face":
            out.write("patches: 1 (whole face)\n")
        else:
            out.write(f"patches: {cfg.patch_count} x {cfg.patch_size}x{cfg.patch_size}\n")
        p = self.pooled
        out.write(f"pooled pairs: {p.n_genuine} genuine, {p.n_impostor} impostor; AUC {p.auc():.4f}\n\n")
        out.write(f"{'FAR':>8}  {'VR':>8}\n")
        for r in self.rows:
            out.write(f"{r['far_target']:>8g}  {100 * r['vr']:>7.2f}%\n")
        for n in self.notes:
            out.write(f"note: {n}\n")
        return out.getvalue()


def vr_at_far_lenient(curve, far_target):
    """``(vr, note)``: like :func:`vr_at_far` but reports an unreachable FAR
    as a note instead of raising."""
    try:
        return vr_at_far(curve, far_target), None
    except FarUnreachable as exc:
        return exc.vr, str(exc)


def run_experiment(cfg: ExperimentConfig, manifest: Manifest, ref=None, loader=load_face) -> ExperimentResult:
    """k-fold verification experiment.

    Per fold: align train and test faces, train the patch model on the
    training split, score every pair of test faces and build a ROC. The
    pooled ROC uses all folds' scores. Without ``ref`` each fold builds its
    reference contour from the neutral faces of its training split.
    """
    folds = make_folds(manifest, cfg.folds, cfg.seed)
    cache = {}

    def load(rec):
        if rec.image_path not in cache:
            cache[rec.image_path] = loader(rec)
        return cache[rec.image_path]

    layout = cfg.layout()
    fusion = FusionConfig(cfg.w)
    curves, fold_scores = [], []
    genuine, impostor = [], []
    for k, (train, test) in enumerate(folds):
        try:
            fold_ref = ref
            if fold_ref is None and cfg.mode != "eye_aligned":
                neutral = [load(r)[1] for r in train.records if r.expression_tag == cfg.neutral_tag]
                if not neutral:
                    neutral = [load(r)[1] for r in train.records]
                fold_ref = reference_from_neutrals(neutral, cfg.grid, cfg.eye_targets)
            train_faces = [prepare_face(*load(r), cfg, fold_ref) for r in train.records]
            model = train_model(train_faces, [r.subject_id for r in train.records], layout,
                                cfg.channels, cfg.ridge)
            test_faces = [prepare_face(*load(r), cfg, fold_ref) for r in test.records]
            sm = score_all(model, test_faces, None, fusion,
                           gallery_subjects=[r.subject_id for r in test.records],
                           gallery_ids=[os.path.basename(r.image_path) for r in test.records],
                           same_set=True)
            curves.append(roc(sm))
        except (PixAlignError, ValueError, OSError) as exc:
            raise FoldFailed(k, exc) from exc
        log.info("fold %d: %d train, %d test, %d inert subspaces", k, len(train), len(test),
                 len(model.inert))
        fold_scores.append(sm)
        genuine.append(sm.genuine_scores())
        impostor.append(sm.impostor_scores())
    pooled = roc_from_scores(np.concatenate(genuine), np.concatenate(impostor))
    rows, notes = [], []
    for far in cfg.far_targets:
        vr, note = vr_at_far_lenient(pooled, far)
        if note:
            notes.append(note)
        rows.append({"mode": cfg.mode, "far_target": far, "vr": vr, "n_genuine": pooled.n_genuine,
                     "n_impostor": pooled.n_impostor, "seed": cfg.seed})
    return ExperimentResult(cfg, curves, pooled, rows, notes, fold_scores)


REPORT_COLUMNS = ["mode", "far_target", "vr", "n_genuine", "n_impostor", "seed"]


def write_report_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        wr = csv.DictWriter(fh, REPORT_COLUMNS, lineterminator="\n")
        wr.writeheader()
        for r in rows:
            wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def write_experiment(result: ExperimentResult, out_dir) -> list:
    """ROC CSVs (one per fold plus ``pooled.csv``), ``report.txt`` and ``report.csv``."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for k, c in enumerate(result.fold_curves):
        p = os.path.join(out_dir, f"fold{k}.csv")
        write_roc_csv(c, p)
        paths.append(p)
    p = os.path.join(out_dir, "pooled.csv")
    write_roc_csv(result.pooled, p)
    paths.append(p)
    p = os.path.join(out_dir, "report.csv")
    write_report_csv(result.rows, p)
    paths.append(p)
    p = os.path.join(out_dir, "report.txt")
    with open(p, "w", encoding="utf-8") as fh:
        fh.write(result.report_text())
    paths.append(p)
    return paths


def plot_rocs(curves: dict, path, title=None) -> None:
    """Save ROC curves (``{label: RocCurve}``) on a log-FAR axis; needs matplotlib."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    for label, c in curves.items():
        far = np.maximum(c.far, 1.0 / max(c.n_impostor, 1) / 10)
        ax.step(far, c.vr, where="post", label=label)
    ax.set_xscale("log")
    ax.set_xlabel("false acceptance rate")
    ax.set_ylabel("verification rate")
    ax.set_ylim(0, 1.01)
    if title:
        ax.set_title(title)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
