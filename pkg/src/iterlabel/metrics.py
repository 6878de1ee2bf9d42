"""Detection and landmark evaluation: precision, recall, AP and keypoint MSE."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .geometry import iou, to_corners
from .label_io import Manifest, UnknownImage
from .model import Detection, LabelSet, PoseInstance

IOU_RANGE = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_POINTS = 101

Predictions = Mapping[str, Sequence[Detection]]
GroundTruth = Mapping[str, Sequence[PoseInstance]]


class NoMatches(ValueError):
    pass


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple[tuple[int, int, float], ...]
    unmatched_preds: tuple[int, ...]
    unmatched_gts: tuple[int, ...]

    def matched_preds(self) -> set[int]:
        return {p for p, _, _ in self.pairs}


def _confidence_order(preds: Sequence[Detection]) -> list[int]:
    return sorted(range(len(preds)), key=lambda i: (-preds[i].confidence, i))


def match_detections(
    preds: Sequence[Detection], gts: Sequence[PoseInstance], iou_thr: float
) -> MatchResult:
    """Greedy matching within one image.

    Predictions are taken in descending confidence (ties by index); each
    claims the still-free ground truth it overlaps most, if that IoU reaches
    ``iou_thr``.
    """
    gt_boxes = [to_corners(g.bbox) for g in gts]
    free = set(range(len(gts)))
    pairs = []
    unmatched = []
    for p in _confidence_order(preds):
        box = to_corners(preds[p].instance.bbox)
        best, best_iou = -1, -1.0
        for g in sorted(free):
            overlap = iou(box, gt_boxes[g])
            if overlap > best_iou:
                best, best_iou = g, overlap
        if best >= 0 and best_iou >= iou_thr:
            pairs.append((p, best, best_iou))
            free.discard(best)
        else:
            unmatched.append(p)
    return MatchResult(tuple(pairs), tuple(sorted(unmatched)), tuple(sorted(free)))


def _image_ids(preds: Predictions, gts: GroundTruth) -> list[str]:
    ids = list(gts)
    ids += [i for i in preds if i not in gts]
    return ids


def _match_all(preds: Predictions, gts: GroundTruth, iou_thr: float) -> dict[str, MatchResult]:
    return {
        image_id: match_detections(preds.get(image_id, ()), gts.get(image_id, ()), iou_thr)
        for image_id in _image_ids(preds, gts)
    }


def _counts(preds: Predictions, gts: GroundTruth, iou_thr: float) -> tuple[int, int, int]:
    matches = _match_all(preds, gts, iou_thr)
    tp = sum(len(m.pairs) for m in matches.values())
    n_pred = sum(len(v) for v in preds.values())
    n_gt = sum(len(v) for v in gts.values())
    return tp, n_pred, n_gt


def precision_recall(preds: Predictions, gts: GroundTruth, iou_thr: float = 0.5) -> tuple[float, float]:
    tp, n_pred, n_gt = _counts(preds, gts, iou_thr)
    precision = tp / n_pred if n_pred else 1.0
    recall = tp / n_gt if n_gt else 1.0
    return precision, recall


def interpolated_ap(hits: Iterable[bool], confidences: Sequence[float], n_gt: int) -> float:
    """101-point interpolated AP from a confidence-ranked hit list.

    Precision/recall are only read at confidence boundaries, so tied
    confidences act as one operating point. Recall targets are compared in
    integer arithmetic (``100 * tp >= k * n_gt``) to avoid float drift at
    the sample points.
    """
    hits = list(hits)
    if n_gt == 0:
        return 0.0 if hits else 1.0
    # (tp, precision) at each operating point
    points = []
    tp = 0
    for j, hit in enumerate(hits):
        tp += hit
        if j + 1 == len(hits) or confidences[j + 1] != confidences[j]:
            points.append((tp, tp / (j + 1)))
    total = 0.0
    best = 0.0
    # sweep recall targets from high to low, carrying the running max precision
    idx = len(points) - 1
    for k in range(RECALL_POINTS - 1, -1, -1):
        while idx >= 0 and (RECALL_POINTS - 1) * points[idx][0] >= k * n_gt:
            best = max(best, points[idx][1])
            idx -= 1
        total += best
    return total / RECALL_POINTS


def _ranked_hits(preds: Predictions, gts: GroundTruth, iou_thr: float) -> tuple[list[bool], list[float]]:
    matches = _match_all(preds, gts, iou_thr)
    ranked = []
    for order, image_id in enumerate(_image_ids(preds, gts)):
        dets = preds.get(image_id, ())
        hit = matches[image_id].matched_preds()
        for i, d in enumerate(dets):
            ranked.append((-d.confidence, order, i, i in hit))
    ranked.sort()
    return [r[3] for r in ranked], [-r[0] for r in ranked]


def average_precision(preds: Predictions, gts: GroundTruth, iou_thr: float = 0.5) -> float:
    hits, confidences = _ranked_hits(preds, gts, iou_thr)
    n_gt = sum(len(v) for v in gts.values())
    return interpolated_ap(hits, confidences, n_gt)


def ap_range(preds: Predictions, gts: GroundTruth) -> float:
    return sum(average_precision(preds, gts, t) for t in IOU_RANGE) / len(IOU_RANGE)


def keypoint_mse(preds: Predictions, gts: GroundTruth, manifest: Manifest) -> float:
    """Mean squared landmark error in pixels², per coordinate.

    Pairs come from matching at IoU 0.5; only ground-truth keypoints with
    v > 0 count.
    """
    sq = 0.0
    n = 0
    for image_id, result in _match_all(preds, gts, 0.5).items():
        if not result.pairs:
            continue
        rec = manifest[image_id]
        dets, truth = preds[image_id], gts[image_id]
        for p, g, _ in result.pairs:
            for kp, gk in zip(dets[p].instance.keypoints, truth[g].keypoints):
                if gk.v == 0:
                    continue
                dx = (kp.x - gk.x) * rec.width_px
                dy = (kp.y - gk.y) * rec.height_px
                sq += dx * dx + dy * dy
                n += 1
    if n == 0:
        raise NoMatches("no matched keypoints to score")
    return sq / (2 * n)


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    ap50: float
    ap50_95: float
    mse: float | None
    counts: dict[str, dict[str, int]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "ap50": self.ap50,
            "ap50_95": self.ap50_95,
            "mse": self.mse,
            "counts": self.counts,
        }


def ground_truth(labels: LabelSet, manifest: Manifest, splits: Iterable[str] | None = None) -> dict:
    keep = set(splits) if splits is not None else None
    return {
        image_id: labels.instances(image_id)
        for image_id in labels.entries
        if keep is None or manifest[image_id].split in keep
    }


def evaluate(
    gts: LabelSet,
    preds: Predictions,
    manifest: Manifest,
    splits: Iterable[str] | None = None,
) -> MetricsReport:
    for image_id in preds:
        if image_id not in manifest:
            raise UnknownImage(image_id)
    truth = ground_truth(gts, manifest, splits)
    scoped = {k: list(v) for k, v in preds.items() if k in truth}
    for k in truth:
        scoped.setdefault(k, [])
    precision, recall = precision_recall(scoped, truth, 0.5)
    counts = {}
    for t in IOU_RANGE:
        tp, n_pred, n_gt = _counts(scoped, truth, t)
        counts[f"{t:.2f}"] = {"tp": tp, "fp": n_pred - tp, "fn": n_gt - tp}
    try:
        mse = keypoint_mse(scoped, truth, manifest)
    except NoMatches:
        mse = None
    return MetricsReport(
        precision,
        recall,
        average_precision(scoped, truth, 0.5),
        ap_range(scoped, truth),
        mse,
        counts,
    )
