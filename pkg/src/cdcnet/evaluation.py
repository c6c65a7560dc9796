"""Retrieval-style per-frame labeling mAP and detection-style temporal
localization mAP.

Per-frame labeling pools every frame of every test video, ranks them per
action class by confidence, and counts a frame as relevant when it lies
inside a ground-truth instance of that class.  Localization ranks detections
per class; a detection is correct when its interval IoU with an unmatched
same-class instance in the same video is strictly larger than the threshold,
and an instance can be claimed once.  Background never appears in either
class mean; classes with no ground truth contribute AP 0 and are flagged.
"""

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class GroundTruthInstance:
    video_id: str
    start: int  # inclusive frame index
    end: int  # inclusive frame index
    label: int  # action class in [0, K-1]; never background

    def __post_init__(self):
        if self.start > self.end or self.start < 0:
            raise ValueError(f"bad interval [{self.start}, {self.end}]")
        if self.label < 0:
            raise ValueError(f"bad label {self.label}")


@dataclass
class EvalReport:
    per_class_ap: list
    map: float
    params: dict = field(default_factory=dict)
    empty_classes: list = field(default_factory=list)

    def to_json(self):
        return json.dumps(
            {
                "per_class_ap": [float(a) for a in self.per_class_ap],
                "map": float(self.map),
                "params": self.params,
                "empty_classes": self.empty_classes,
            },
            indent=2,
            sort_keys=True,
        )

    def to_table(self, title="evaluation"):
        lines = [title, "class | AP", "------+-------"]
        for c, ap in enumerate(self.per_class_ap):
            flag = "  (no ground truth)" if c in self.empty_classes else ""
            lines.append(f"{c:5d} | {ap:.4f}{flag}")
        lines.append("------+-------")
        lines.append(f"  mAP | {self.map:.4f}")
        return "\n".join(lines)


def segment_iou(a, b):
    """IoU of two inclusive frame intervals, counted over frame sets."""
    inter = min(a[1], b[1]) - max(a[0], b[0]) + 1
    if inter <= 0:
        return 0.0
    union = (a[1] - a[0] + 1) + (b[1] - b[0] + 1) - inter
    return inter / union


def average_precision(ranked, total_relevant):
    """ranked: (score, is_relevant) pairs in any order.  Sorted by descending
    score with ties kept in input order; AP is the mean of the precision at
    each relevant hit over ``total_relevant``."""
    if total_relevant == 0:
        return 0.0
    scores = np.array([s for s, _ in ranked], dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    hits = 0
    ap = 0.0
    for rank, i in enumerate(order, start=1):
        if ranked[i][1]:
            hits += 1
            ap += hits / rank
    return ap / total_relevant


def per_frame_map(scores_by_video, instances, num_classes):
    """scores_by_video: {video_id: (L, K+1) score matrix}.  Every video with
    ground truth must have scores."""
    for inst in instances:
        if inst.video_id not in scores_by_video:
            raise ValueError(f"no scores for video {inst.video_id!r}")
        if inst.end >= scores_by_video[inst.video_id].shape[0]:
            raise ValueError(
                f"instance [{inst.start}, {inst.end}] outside scores of"
                f" {inst.video_id!r}"
            )
    videos = sorted(scores_by_video)
    aps, empty = [], []
    for c in range(num_classes):
        pairs = []
        total = 0
        for v in videos:
            p = scores_by_video[v]
            rel = np.zeros(p.shape[0], dtype=bool)
            for inst in instances:
                if inst.video_id == v and inst.label == c:
                    rel[inst.start : inst.end + 1] = True
            total += int(rel.sum())
            pairs.extend(zip(p[:, c].tolist(), rel.tolist()))
        if total == 0:
            empty.append(c)
        aps.append(average_precision(pairs, total))
    return EvalReport(
        per_class_ap=aps,
        map=float(np.mean(aps)) if aps else 0.0,
        params={"metric": "per-frame"},
        empty_classes=empty,
    )


def localization_map(detections, instances, iou_threshold, num_classes):
    """detections: objects with video_id/start/end/label/score fields."""
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"IoU threshold {iou_threshold} not in (0, 1]")
    aps, empty = [], []
    for c in range(num_classes):
        dets = [d for d in detections if d.label == c]
        gts = [g for g in instances if g.label == c]
        dets.sort(key=lambda d: (-d.score, d.video_id, d.start, d.end))
        claimed = [False] * len(gts)
        pairs = []
        for d in dets:
            best, best_j = 0.0, None
            for j, g in enumerate(gts):
                if claimed[j] or g.video_id != d.video_id:
                    continue
                v = segment_iou((d.start, d.end), (g.start, g.end))
                if v > best:
                    best, best_j = v, j
            correct = best_j is not None and best > iou_threshold
            if correct:
                claimed[best_j] = True
            pairs.append((d.score, correct))
        if not gts:
            empty.append(c)
        # Detections are already ranked; feed AP scores in rank order.
        ap = 0.0
        hits = 0
        for rank, (_, rel) in enumerate(pairs, start=1):
            if rel:
                hits += 1
                ap += hits / rank
        aps.append(ap / len(gts) if gts else 0.0)
    return EvalReport(
        per_class_ap=aps,
        map=float(np.mean(aps)) if aps else 0.0,
        params={"metric": "localization", "iou_threshold": iou_threshold},
        empty_classes=empty,
    )


def average_map(detections, instances, num_classes, thresholds=None):
    """Mean localization mAP over a threshold sweep (default 0.5 to 0.95 in
    steps of 0.05); returns (average, {threshold: report})."""
    if thresholds is None:
        thresholds = [0.5 + 0.05 * i for i in range(10)]
    reports = {
        t: localization_map(detections, instances, t, num_classes) for t in thresholds
    }
    return float(np.mean([r.map for r in reports.values()])), reports
