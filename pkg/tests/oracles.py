"""Independent reference computations used only by the tests."""

from fractions import Fraction

import numpy as np


def raster_iou(a, b, cell=1e-3):
    """IoU of two corner boxes by counting grid-cell centers inside each."""
    n = int(round(1 / cell))
    centers = (np.arange(n) + 0.5) * cell
    xs, ys = np.meshgrid(centers, centers, indexing="ij")

    def inside(box):
        x1, y1, x2, y2 = box
        return (xs >= x1) & (xs <= x2) & (ys >= y1) & (ys <= y2)

    ia, ib = inside(a), inside(b)
    union = np.count_nonzero(ia | ib)
    return np.count_nonzero(ia & ib) / union if union else 0.0


def plain_iou(a, b):
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union if union > 0 else 0.0


def corners(inst):
    b = inst.bbox
    return (
        min(max(b.cx - b.w / 2, 0.0), 1.0),
        min(max(b.cy - b.h / 2, 0.0), 1.0),
        min(max(b.cx + b.w / 2, 0.0), 1.0),
        min(max(b.cy + b.h / 2, 0.0), 1.0),
    )


def greedy_hits(preds, gts, thr):
    """TP flag per prediction for one image, via a plain greedy loop."""
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].confidence, i))
    taken = [False] * len(gts)
    hit = [False] * len(preds)
    for p in order:
        best, best_iou = None, -1.0
        for g, gt in enumerate(gts):
            if taken[g]:
                continue
            v = plain_iou(corners(preds[p].instance), corners(gt))
            if v > best_iou:
                best, best_iou = g, v
        if best is not None and best_iou >= thr:
            taken[best] = True
            hit[p] = True
    return hit


def pr_curve_ap(scored, n_gt):
    """101-point interpolated AP by enumerating every confidence cut.

    ``scored`` is a list of (confidence, is_tp). Each distinct confidence is
    a cut "keep everything at or above it"; arithmetic is exact.
    """
    if n_gt == 0:
        return 0.0 if scored else 1.0
    pts = []
    for t in sorted({c for c, _ in scored}, reverse=True):
        kept = [h for c, h in scored if c >= t]
        tp = sum(kept)
        pts.append((Fraction(tp, n_gt), Fraction(tp, len(kept))))
    total = Fraction(0)
    for k in range(101):
        r = Fraction(k, 100)
        total += max((p for rr, p in pts if rr >= r), default=Fraction(0))
    return float(total / 101)


def dataset_ap(preds, gts, thr):
    scored = []
    for image_id in set(preds) | set(gts):
        p = list(preds.get(image_id, ()))
        hits = greedy_hits(p, list(gts.get(image_id, ())), thr)
        scored += [(d.confidence, h) for d, h in zip(p, hits)]
    return pr_curve_ap(scored, sum(len(v) for v in gts.values()))
