"""Detection evaluation: greedy matching and 40-recall-position average precision.

Matching follows the common devkit protocol: detections in descending
score order (ties by input order) claim the unmatched ground truth with
highest IoU; a claim is a true positive only if that IoU clears the
threshold. Ground truths filtered out by a difficulty gate are "ignored":
they do not count toward recall, and detections matched to them count
neither as true nor as false positives. AP is computed on matches pooled
across scenes, as the mean of interpolated precision at the 40 recall
positions {1/40, ..., 1}.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .geometry import Box3D, bev_iou, iou_3d, to_bev

RECALL_POSITIONS = np.arange(1, 41) / 40.0

# difficulty -> (min 2D bbox height px, max occlusion, max truncation)
DIFFICULTY_GATES = {
    "easy": (40.0, 0, 0.15),
    "moderate": (25.0, 1, 0.30),
    "hard": (25.0, 2, 0.50),
}

MODES = ("3d", "bev")

# per-detection match labels
TP, FP, IGNORED = 1, 0, -1


@dataclass(frozen=True)
class GroundTruth:
    box: Box3D
    bbox_height: float | None = None  # 2D image box height, pixels
    occlusion: int | None = None  # 0..3
    truncation: float | None = None  # [0, 1]

    def __post_init__(self):
        if self.occlusion is not None and self.occlusion not in (0, 1, 2, 3):
            raise InputError(f"occlusion must be in 0..3, got {self.occlusion}")
        if self.truncation is not None and not 0.0 <= self.truncation <= 1.0:
            raise InputError(f"truncation must be in [0, 1], got {self.truncation}")

    @property
    def has_difficulty_meta(self) -> bool:
        return self.bbox_height is not None and self.occlusion is not None and self.truncation is not None

    def passes(self, difficulty: str | None) -> bool:
        """Whether this ground truth counts at the given difficulty level.

        Without metadata nothing is filtered (synthetic scenes).
        """
        if difficulty in (None, "", "all"):
            return True
        if difficulty not in DIFFICULTY_GATES:
            raise InputError(f"unknown difficulty {difficulty!r}")
        if not self.has_difficulty_meta:
            return True
        min_h, max_occ, max_trunc = DIFFICULTY_GATES[difficulty]
        return self.bbox_height >= min_h and self.occlusion <= max_occ and self.truncation <= max_trunc


@dataclass(frozen=True)
class APResult:
    ap: float
    pr_curve: list  # 40 (recall, precision) pairs
    threshold: float
    mode: str
    difficulty: str = "all"
    num_gt: int = 0


def iou_fn_for_mode(mode: str):
    if mode == "3d":
        return iou_3d
    if mode == "bev":
        return lambda a, b: bev_iou(to_bev(a), to_bev(b))
    raise InputError(f"unknown mode {mode!r}; expected one of {MODES}")


def _match_from_matrix(scores: np.ndarray, iou: np.ndarray, threshold: float,
                       valid: np.ndarray) -> np.ndarray:
    """Labels per detection given an IoU matrix (D, G) and GT validity mask."""
    d, g = iou.shape
    labels = np.full(d, FP, dtype=int)
    taken = np.zeros(g, dtype=bool)
    order = np.argsort(-scores, kind="stable")
    for di in order:
        best_valid, best_valid_iou = -1, -1.0
        best_ign, best_ign_iou = -1, -1.0
        for gi in range(g):
            if taken[gi]:
                continue
            v = iou[di, gi]
            if v < threshold:
                continue
            if valid[gi]:
                if v > best_valid_iou:
                    best_valid, best_valid_iou = gi, v
            elif v > best_ign_iou:
                best_ign, best_ign_iou = gi, v
        if best_valid >= 0:
            labels[di] = TP
            taken[best_valid] = True
        elif best_ign >= 0:
            labels[di] = IGNORED
            taken[best_ign] = True
    return labels


def match_greedy(dets, gts, iou_fn, threshold: float, difficulty: str | None = None) -> np.ndarray:
    """Per-detection TP/FP/IGNORED labels, in input order."""
    if not dets:
        return np.empty(0, dtype=int)
    scores = np.array([d.score for d in dets])
    iou = np.array([[iou_fn(d.box, gt.box) for gt in gts] for d in dets]).reshape(len(dets), len(gts))
    valid = np.array([gt.passes(difficulty) for gt in gts], dtype=bool)
    return _match_from_matrix(scores, iou, threshold, valid)


def average_precision(tp_flags, scores, num_gt: int, threshold: float = float("nan"),
                      mode: str = "", difficulty: str = "all") -> APResult:
    """Interpolated AP over the fixed recall positions.

    tp_flags/scores describe the pooled non-ignored detections.
    """
    if num_gt < 1:
        raise InputError("average precision undefined without ground truths")
    tp_flags = np.asarray(tp_flags, dtype=bool)
    scores = np.asarray(scores, dtype=float)
    order = np.argsort(-scores, kind="stable")
    tp_cum = np.cumsum(tp_flags[order])
    k = np.arange(1, len(order) + 1)
    # operating points come from sweeping the score threshold, so a group of
    # tied scores enters or leaves as one unit (last index of each tie group)
    s = scores[order]
    if len(s):
        boundary = np.append(s[:-1] != s[1:], True)
        tp_cum, k = tp_cum[boundary], k[boundary]
    recalls = tp_cum / num_gt
    precisions = tp_cum / k
    interp = np.zeros(len(RECALL_POSITIONS))
    for i, r in enumerate(RECALL_POSITIONS):
        ok = recalls >= r - 1e-12  # recall positions hit exactly up to rounding
        if np.any(ok):
            interp[i] = precisions[ok].max()
    ap = float(interp.mean())
    curve = list(zip(RECALL_POSITIONS.tolist(), interp.tolist()))
    return APResult(ap=ap, pr_curve=curve, threshold=threshold, mode=mode,
                    difficulty=difficulty, num_gt=num_gt)


def evaluate(dets_by_scene: dict, gts_by_scene: dict, modes=MODES,
             thresholds=(0.7, 0.75, 0.8, 0.85, 0.9), difficulties=("all",)) -> dict:
    """Pooled AP per (mode, threshold, difficulty) across aligned scenes.

    Returns {(mode, threshold, difficulty): APResult}.
    """
    missing = sorted(set(dets_by_scene) - set(gts_by_scene))
    if missing:
        raise InputError(f"unknown scene ids in detections: {missing}")
    scene_ids = sorted(gts_by_scene)
    results = {}
    for mode in modes:
        iou_fn = iou_fn_for_mode(mode)
        # IoU matrices are threshold/difficulty independent; compute once per mode
        mats = {}
        for sid in scene_ids:
            dets = dets_by_scene.get(sid, [])
            gts = gts_by_scene[sid]
            scores = np.array([d.score for d in dets])
            iou = np.array([[iou_fn(d.box, gt.box) for gt in gts] for d in dets])
            mats[sid] = (scores, iou.reshape(len(dets), len(gts)))
        for difficulty in difficulties:
            for thr in thresholds:
                pooled_scores = []
                pooled_tp = []
                num_gt = 0
                for sid in scene_ids:
                    gts = gts_by_scene[sid]
                    valid = np.array([gt.passes(difficulty) for gt in gts], dtype=bool)
                    num_gt += int(valid.sum())
                    scores, iou = mats[sid]
                    if len(scores) == 0:
                        continue
                    labels = _match_from_matrix(scores, iou, thr, valid)
                    keep = labels != IGNORED
                    pooled_scores.append(scores[keep])
                    pooled_tp.append(labels[keep] == TP)
                flat_scores = np.concatenate(pooled_scores) if pooled_scores else np.empty(0)
                flat_tp = np.concatenate(pooled_tp) if pooled_tp else np.empty(0, dtype=bool)
                results[(mode, thr, difficulty)] = average_precision(
                    flat_tp, flat_scores, num_gt, threshold=thr, mode=mode, difficulty=difficulty
                )
    return results
