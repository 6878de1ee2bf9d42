"""One refinement step over a label set, plus per-iteration label statistics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Collection, Mapping, Sequence

from .geometry import confidence_filter, nms
from .label_io import Manifest, UnknownImage
from .model import SPLITS, Detection, LabelSet


class ZeroBaseline(ZeroDivisionError):
    pass


def growth_pct(n0: int, n: int) -> float:
    if n0 == 0:
        raise ZeroBaseline("growth is undefined against an empty baseline")
    return 100.0 * (n - n0) / n0


def merge_labels(
    current: LabelSet,
    predictions: Mapping[str, Sequence[Detection]],
    manifest: Manifest,
    conf_threshold: float = 0.7,
    nms_iou: float = 0.3,
    splits: Collection[str] = SPLITS,
) -> LabelSet:
    """Gate, pool and suppress predictions into the next iteration's labels.

    Everything already in ``current`` is protected from suppression, whatever
    its source, so label sets only grow. Accepted predictions are tagged with
    the new iteration and appended after the existing labels.
    """
    for image_id in predictions:
        if image_id not in current.entries:
            raise UnknownImage(image_id)
    nxt = current.iteration + 1
    entries = {}
    for image_id, existing in current.entries.items():
        preds = predictions.get(image_id)
        if not preds or manifest[image_id].split not in splits:
            entries[image_id] = existing
            continue
        gated = [
            Detection(d.instance, d.confidence, nxt) for d in confidence_filter(preds, conf_threshold)
        ]
        kept = nms(list(existing) + gated, nms_iou, protected=lambda d: d.source <= current.iteration)
        entries[image_id] = tuple(existing) + tuple(d for d in kept if d.source == nxt)
    return LabelSet(nxt, entries)


@dataclass(frozen=True)
class IterationStats:
    iteration: int
    images: dict[str, int]
    labels: dict[str, int]
    growth: dict[str, float] | None = None

    @property
    def total_images(self) -> int:
        return sum(self.images.values())

    @property
    def total_labels(self) -> int:
        return sum(self.labels.values())

    def to_dict(self) -> dict:
        out = {
            "iteration": self.iteration,
            "images": {**self.images, "total": self.total_images},
            "labels": {**self.labels, "total": self.total_labels},
        }
        if self.growth is not None:
            out["growth_pct"] = {k: round(v, 1) for k, v in self.growth.items()}
        return out


def _split_counts(ls: LabelSet, manifest: Manifest) -> dict[str, int]:
    counts = dict.fromkeys(SPLITS, 0)
    for image_id, dets in ls.entries.items():
        counts[manifest[image_id].split] += len(dets)
    return counts


def count_stats(ls: LabelSet, manifest: Manifest, baseline: LabelSet | None = None) -> IterationStats:
    """Count images and labels per split.

    Growth is relative to ``baseline`` and is omitted for any split whose
    baseline count is zero.
    """
    images = {s: len(manifest.ids(s)) for s in SPLITS}
    labels = _split_counts(ls, manifest)
    growth = None
    if baseline is not None:
        base = _split_counts(baseline, manifest)
        base["total"] = sum(base.values())
        now = {**labels, "total": sum(labels.values())}
        growth = {k: growth_pct(base[k], now[k]) for k in now if base[k] > 0}
    return IterationStats(ls.iteration, images, labels, growth)
