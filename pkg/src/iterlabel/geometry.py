"""Box overlap, the confidence gate, and original-priority NMS."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

from .model import Detection, NormBBox


@dataclass(frozen=True)
class CornerBox:
    x1: float
    y1: float
    x2: float
    y2: float

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


def _clip(v: float) -> float:
    return min(max(v, 0.0), 1.0)


def to_corners(b: NormBBox) -> CornerBox:
    return CornerBox(
        _clip(b.cx - b.w / 2), _clip(b.cy - b.h / 2), _clip(b.cx + b.w / 2), _clip(b.cy + b.h / 2)
    )


def iou(a: CornerBox, b: CornerBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = iw * ih if iw > 0 and ih > 0 else 0.0
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return min(inter / union, 1.0)


def box_iou(a: NormBBox, b: NormBBox) -> float:
    return iou(to_corners(a), to_corners(b))


def confidence_filter(dets: Sequence[Detection], threshold: float) -> list[Detection]:
    """Keep detections with confidence >= ``threshold``, preserving order."""
    return [d for d in dets if d.is_original or d.confidence >= threshold]


def is_original(det: Detection) -> bool:
    return det.is_original


Protected = Callable[[Detection], bool]


def nms(
    dets: Sequence[Detection], iou_thr: float, protected: Protected = is_original
) -> list[Detection]:
    """Greedy non-maximum suppression that never drops protected detections.

    Candidates are visited protected-first, then by descending confidence,
    then by input index. A protected candidate is always kept; any other is
    kept iff its IoU with every detection kept so far is <= ``iou_thr``.
    The result is in visiting order.
    """
    order = sorted(
        range(len(dets)),
        key=lambda i: (not protected(dets[i]), -dets[i].confidence, i),
    )
    kept: list[Detection] = []
    kept_boxes: list[CornerBox] = []
    for i in order:
        det = dets[i]
        box = to_corners(det.instance.bbox)
        if protected(det) or all(iou(box, k) <= iou_thr for k in kept_boxes):
            kept.append(det)
            kept_boxes.append(box)
    return kept


def brute_force_nms(
    dets: Sequence[Detection], iou_thr: float, protected: Protected = is_original
) -> list[Detection]:
    """Reference NMS evaluated straight from the keep-set definition.

    A detection is kept iff it is protected, or no kept detection that
    outranks it overlaps it by more than ``iou_thr``. The recursion runs over
    pairwise rank comparisons; output order is each kept detection's count of
    kept detections that outrank it. Meant for small inputs in tests.
    """
    n = len(dets)

    def outranks(i: int, j: int) -> bool:
        pi, pj = protected(dets[i]), protected(dets[j])
        if pi != pj:
            return pi
        ci, cj = dets[i].confidence, dets[j].confidence
        if ci != cj:
            return ci > cj
        return i < j

    memo: dict[int, bool] = {}

    def keep(j: int) -> bool:
        if j not in memo:
            if protected(dets[j]):
                memo[j] = True
            else:
                bj = dets[j].instance.bbox
                memo[j] = not any(
                    outranks(i, j) and keep(i) and box_iou(dets[i].instance.bbox, bj) > iou_thr
                    for i in range(n)
                    if i != j
                )
        return memo[j]

    kept = [j for j in range(n) if keep(j)]
    rank = {j: sum(outranks(i, j) for i in kept) for j in kept}
    placed: list[Detection | None] = [None] * len(kept)
    for j in kept:
        placed[rank[j]] = dets[j]
    return placed  # type: ignore[return-value]
