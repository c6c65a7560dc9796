"""Turning dense per-frame scores plus coarse proposal segments into
precisely bounded detections.

The refinement protocol per proposal: widen both boundaries by a fraction of
the segment length, classify the widened segment by its mean score, drop it
if background wins, derive a score threshold from a Gaussian kernel density
estimate of the predicted class's scores (mean minus standard deviation),
then shrink each end inward to the first frame at or above the threshold.
The detection score is the mean predicted-class score over the surviving
frames.  Per-class greedy NMS collapses overlapping detections afterwards.
"""

import math
from dataclasses import dataclass

import numpy as np

from .evaluation import segment_iou


@dataclass(frozen=True)
class ProposalSegment:
    video_id: str
    start: int  # inclusive frame index
    end: int  # inclusive frame index
    score: float | None = None

    def __post_init__(self):
        if not 0 <= self.start <= self.end:
            raise ValueError(f"bad proposal interval [{self.start}, {self.end}]")


@dataclass(frozen=True)
class Detection:
    video_id: str
    start: int
    end: int
    label: int  # action class only; background is never emitted
    score: float

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"bad detection interval [{self.start}, {self.end}]")
        if self.label < 0:
            raise ValueError("detections cannot carry the background label")


@dataclass(frozen=True)
class RefineParams:
    alpha: float = 0.125  # boundary extension as a fraction of segment length
    video_start: int = 0
    video_end: int = 0  # inclusive last frame index

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")


def _round_half_up(x):
    return math.floor(x + 0.5)


def extend_proposal(segment, params):
    """Widen both boundaries by round(alpha * length), clamped to the video."""
    length = segment.end - segment.start + 1
    delta = _round_half_up(params.alpha * length)
    return ProposalSegment(
        video_id=segment.video_id,
        start=max(params.video_start, segment.start - delta),
        end=min(params.video_end, segment.end + delta),
        score=segment.score,
    )


def classify_segment(scores, num_classes):
    """Class with the maximum mean confidence over the segment's frames.

    Ties break toward the lower class index, except that background (index
    K) wins any tie it participates in.
    """
    if scores.shape[0] == 0:
        raise ValueError("empty segment")
    means = np.asarray(scores, dtype=np.float64).mean(axis=0)
    best = means.max()
    winners = np.nonzero(means == best)[0]
    if num_classes in winners:
        return num_classes
    return int(winners[0])


def kde_threshold(scores):
    """Moments of a Gaussian KDE over the scores and the derived threshold.

    Bandwidth is the 1.06 * std * n^(-1/5) rule with the population standard
    deviation, so a single sample degrades cleanly to h = 0.  The KDE mean
    equals the sample mean and its variance is the population variance plus
    the squared bandwidth.  Returns (mu, sigma, beta) with beta = mu - sigma.
    """
    x = np.asarray(scores, dtype=np.float64)
    if x.size == 0:
        raise ValueError("need at least one score")
    mu = float(x.mean())
    var = float(x.var())
    h = 1.06 * math.sqrt(var) * x.size ** (-0.2)
    sigma = math.sqrt(var + h * h)
    return mu, sigma, mu - sigma


def refine_boundaries(proposal, scores, params, num_classes,
                      score_denominator="refined"):
    """Refine one proposal against the full-video score matrix.

    scores: (video length, K+1).  Returns a Detection, or None when the
    widened segment classifies as background.  ``score_denominator``
    selects what the summed refined-class scores are divided by: the
    refined length ("refined", default) or the original proposal length
    ("original").
    """
    if score_denominator not in ("refined", "original"):
        raise ValueError(f"unknown score denominator {score_denominator!r}")
    video_len = scores.shape[0]
    if params.video_end != video_len - 1:
        raise ValueError("params.video_end does not match the score matrix")
    if proposal.end >= video_len:
        raise ValueError(
            f"proposal [{proposal.start}, {proposal.end}] outside video"
            f" {proposal.video_id!r} of {video_len} frames"
        )
    ext = extend_proposal(proposal, params)
    seg = scores[ext.start : ext.end + 1]
    label = classify_segment(seg, num_classes)
    if label == num_classes:
        return None
    col = np.asarray(seg[:, label], dtype=np.float64)
    _, _, beta = kde_threshold(col)
    above = np.nonzero(col >= beta)[0]
    if above.size == 0:
        return None
    i_s, i_e = int(above[0]), int(above[-1])
    denom = (
        (i_e - i_s + 1)
        if score_denominator == "refined"
        else (proposal.end - proposal.start + 1)
    )
    return Detection(
        video_id=proposal.video_id,
        start=ext.start + i_s,
        end=ext.start + i_e,
        label=label,
        score=float(col[i_s : i_e + 1].sum() / denom),
    )


def classify_proposals(proposals, scores_by_video, num_classes):
    """Segment-level baseline: classify each proposal over its own frames
    and keep its boundaries untouched.  Background proposals are dropped."""
    out = []
    for p in proposals:
        scores = scores_by_video[p.video_id]
        if p.end >= scores.shape[0]:
            raise ValueError(
                f"proposal [{p.start}, {p.end}] outside video {p.video_id!r}"
            )
        seg = scores[p.start : p.end + 1]
        label = classify_segment(seg, num_classes)
        if label == num_classes:
            continue
        out.append(
            Detection(
                video_id=p.video_id,
                start=p.start,
                end=p.end,
                label=label,
                score=float(np.asarray(seg[:, label], dtype=np.float64).mean()),
            )
        )
    return out


def nms(detections, iou_threshold):
    """Greedy per-class suppression within one video.

    Candidates are visited by descending score with ties broken by earlier
    start frame, then lower class index, then earlier end frame, which makes
    the kept set independent of input order.  Detections of different
    classes never suppress each other.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"IoU threshold {iou_threshold} not in [0, 1]")
    videos = {d.video_id for d in detections}
    if len(videos) > 1:
        raise ValueError("nms operates on a single video's detections")
    order = sorted(detections, key=lambda d: (-d.score, d.start, d.label, d.end))
    kept = []
    for d in order:
        clash = any(
            k.label == d.label
            and segment_iou((d.start, d.end), (k.start, k.end)) > iou_threshold
            for k in kept
        )
        if not clash:
            kept.append(d)
    return kept


def frame_score_differences(scores, label):
    """Absolute frame-to-frame first differences of one class's scores,
    emitted for boundary inspection."""
    col = np.asarray(scores, dtype=np.float64)[:, label]
    if col.size < 2:
        raise ValueError("need at least two frames")
    return np.abs(np.diff(col))
