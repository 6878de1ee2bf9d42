"""Shared domain types for pose label sets."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

DEFAULT_KEYPOINTS = 51
ORIGINAL = 0
SPLITS = ("train", "val")
VISIBILITY = (0, 1, 2)


@dataclass(frozen=True)
class NormBBox:
    """Box in normalized center format: (cx, cy, w, h) as image fractions."""

    cx: float
    cy: float
    w: float
    h: float

    @classmethod
    def clamped(cls, cx: float, cy: float, w: float, h: float) -> NormBBox:
        """Clip the box corners to the image frame and recompute center and size.

        Boxes already inside the frame come back bit-for-bit unchanged. A box lying entirely outside the frame comes back with zero width or
        height and fails validation downstream.
        """
        if cx - w / 2 >= 0.0 and cy - h / 2 >= 0.0 and cx + w / 2 <= 1.0 and cy + h / 2 <= 1.0:
            return cls(cx, cy, w, h)
        x1 = min(max(cx - w / 2, 0.0), 1.0)
        y1 = min(max(cy - h / 2, 0.0), 1.0)
        x2 = min(max(cx + w / 2, 0.0), 1.0)
        y2 = min(max(cy + h / 2, 0.0), 1.0)
        return cls((x1 + x2) / 2, (y1 + y2) / 2, max(x2 - x1, 0.0), max(y2 - y1, 0.0))


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    v: int = 2

    @classmethod
    def clamped(cls, x: float, y: float, v: int) -> Keypoint:
        if v == 0:
            return cls(0.0, 0.0, 0)
        return cls(min(max(x, 0.0), 1.0), min(max(y, 0.0), 1.0), v)


@dataclass(frozen=True)
class PoseInstance:
    class_id: int
    bbox: NormBBox
    keypoints: tuple[Keypoint, ...]


@dataclass(frozen=True)
class Detection:
    """A pose instance with a confidence and provenance.

    ``source`` is the iteration that produced the detection; ``ORIGINAL`` (0)
    marks labels that were provided with the dataset.
    """

    instance: PoseInstance
    confidence: float = 1.0
    source: int = ORIGINAL

    def __post_init__(self) -> None:
        if self.source < 0:
            raise ValueError(f"source iteration must be >= 0, got {self.source}")
        if self.source == ORIGINAL and self.confidence != 1.0:
            raise ValueError("original detections carry confidence 1.0")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} out of [0,1]")

    @property
    def is_original(self) -> bool:
        return self.source == ORIGINAL


@dataclass(frozen=True)
class ImageRecord:
    id: str
    width_px: int
    height_px: int
    split: str

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("image id must be non-empty")
        if self.width_px < 1 or self.height_px < 1:
            raise ValueError(f"{self.id}: image dimensions must be >= 1")
        if self.split not in SPLITS:
            raise ValueError(f"{self.id}: split must be one of {SPLITS}, got {self.split!r}")


@dataclass(frozen=True)
class LabelSet:
    """Detections per image id for one iteration (0 = labels as provided)."""

    iteration: int
    entries: Mapping[str, tuple[Detection, ...]] = field(default_factory=dict)

    def instances(self, image_id: str) -> list[PoseInstance]:
        return [d.instance for d in self.entries[image_id]]

    def count(self) -> int:
        return sum(len(v) for v in self.entries.values())


def validate_instance(inst: PoseInstance, keypoint_count: int) -> list[str]:
    """Return every invariant violation of ``inst``; an empty list means valid."""
    problems = []
    if not isinstance(inst.class_id, int) or inst.class_id < 0:
        problems.append(f"class_id {inst.class_id!r} is not a non-negative integer")
    b = inst.bbox
    for name in ("cx", "cy"):
        value = getattr(b, name)
        if not 0.0 <= value <= 1.0:
            problems.append(f"bbox.{name} out of [0,1]")
    for name in ("w", "h"):
        value = getattr(b, name)
        if not 0.0 < value <= 1.0:
            problems.append(f"bbox.{name} out of (0,1]")
    if len(inst.keypoints) != keypoint_count:
        problems.append(f"keypoint count {len(inst.keypoints)} ≠ {keypoint_count}")
    for i, kp in enumerate(inst.keypoints):
        if kp.v not in VISIBILITY:
            problems.append(f"keypoints[{i}].v {kp.v!r} not in {{0,1,2}}")
        if not 0.0 <= kp.x <= 1.0:
            problems.append(f"keypoints[{i}].x out of [0,1]")
        if not 0.0 <= kp.y <= 1.0:
            problems.append(f"keypoints[{i}].y out of [0,1]")
        if kp.v == 0 and (kp.x != 0.0 or kp.y != 0.0):
            problems.append(f"keypoints[{i}] unlabeled but has nonzero coordinates")
    return problems

